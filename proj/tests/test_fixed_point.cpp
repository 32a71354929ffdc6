#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "errors.hpp"
#include "hamiltonian.hpp"
#include "problems.hpp"
#include "support.hpp"
#include "tape.hpp"
#include "valuenet.hpp"

using namespace jfbctrl;
using test::to_vec;

// Scalar LQR with R=1, B=1, A=0 gives grad_u H = -(u + p), so the operator is
// T(u) = (1 - eta) u - eta p: an affine contraction with factor |1 - eta| and
// fixed point u* = -p. Every closed-form expectation below comes from that.

TEST_CASE("fixed point of the scalar lqr operator is -p") {
  LqrProblem pb(LqrParams::scalar_default());
  OperatorConfig cfg;
  cfg.eta = 0.5;
  cfg.tol = 1e-10;

  Tape tape;
  auto res = solve_fixed_point(tape, pb, cfg, 0.0, {1.0}, {0.8}, {0.0});
  CHECK(res.converged);
  CHECK(res.u_star[0] == doctest::Approx(-0.8).epsilon(1e-9));
  CHECK(res.residual <= cfg.tol);
}

TEST_CASE("iteration count follows the contraction factor exactly") {
  // from u0 = 0 with p = 1 and eta = 0.5 the step sizes are 2^{-k}; the first
  // step at or below 1e-6 is step 20
  LqrProblem pb(LqrParams::scalar_default());
  OperatorConfig cfg;
  cfg.eta = 0.5;
  cfg.tol = 1e-6;

  Tape tape;
  auto res = solve_fixed_point(tape, pb, cfg, 0.0, {0.0}, {1.0}, {0.0});
  CHECK(res.converged);
  CHECK(res.iters == 20);
}

TEST_CASE("solve leaves no nodes on the tape") {
  LqrProblem pb(LqrParams::scalar_default());
  OperatorConfig cfg;
  cfg.eta = 0.5;
  cfg.tol = 1e-12;

  Tape tape;
  tape.leaf(Tensor::scalar(1.0));
  const std::size_t before = tape.size();
  auto res = solve_fixed_point(tape, pb, cfg, 0.0, {1.0}, {0.5}, {0.0});
  CHECK(res.converged);
  CHECK(tape.size() == before);
  CHECK(tape.stats().live_node_count == before);
  CHECK(tape.stats().node_count > before);  // work happened, then was rewound
}

TEST_CASE("peak tape usage does not grow with iteration count") {
  LqrProblem pb(LqrParams::scalar_default());
  OperatorConfig cfg;
  cfg.eta = 1e-3;   // slow contraction
  cfg.tol = 0.0;    // never converges; runs to the cap

  cfg.max_iter = 50;
  Tape t1;
  solve_fixed_point(t1, pb, cfg, 0.0, {1.0}, {0.5}, {0.0});
  cfg.max_iter = 400;
  Tape t2;
  solve_fixed_point(t2, pb, cfg, 0.0, {1.0}, {0.5}, {0.0});

  CHECK(t1.stats().peak_node_count == t2.stats().peak_node_count);
  CHECK(t2.stats().node_count > t1.stats().node_count);
}

TEST_CASE("warm starting from the previous solution converges immediately") {
  LqrProblem pb(LqrParams::scalar_default());
  OperatorConfig cfg;
  cfg.eta = 0.5;
  cfg.tol = 1e-8;

  Tape tape;
  auto cold = solve_fixed_point(tape, pb, cfg, 0.0, {1.0}, {0.7}, {0.0});
  CHECK(cold.iters > 10);
  auto warm = solve_fixed_point(tape, pb, cfg, 0.0, {1.0}, {0.7}, cold.u_star);
  CHECK(warm.converged);
  CHECK(warm.iters <= 2);
  CHECK(warm.u_star[0] == doctest::Approx(cold.u_star[0]).epsilon(1e-7));
}

TEST_CASE("hitting the cap reports non-convergence") {
  LqrProblem pb(LqrParams::scalar_default());
  OperatorConfig cfg;
  cfg.eta = 1e-4;
  cfg.tol = 1e-12;
  cfg.max_iter = 3;

  Tape tape;
  auto res = solve_fixed_point(tape, pb, cfg, 0.0, {1.0}, {1.0}, {0.0});
  CHECK_FALSE(res.converged);
  CHECK(res.iters == 3);
  CHECK(res.residual > cfg.tol);
}

TEST_CASE("an expansive step diverges with a diagnostic") {
  LqrProblem pb(LqrParams::scalar_default());
  OperatorConfig cfg;
  cfg.eta = 1000.0;  // |1 - eta| >> 1
  cfg.tol = 1e-12;
  cfg.max_iter = 500;

  Tape tape;
  bool threw = false;
  try {
    solve_fixed_point(tape, pb, cfg, 0.0, {1.0}, {1.0}, {1.0});
  } catch (const NumericError& e) {
    threw = true;
    CHECK(std::string(e.what()).find("diverged") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("projection pins the solution to the control domain boundary") {
  // push the steering channel outward with a large negative heading costate;
  // the projected fixed point sits exactly on the steering limit
  BicycleParams prm;
  BicycleProblem pb(prm);
  OperatorConfig cfg;
  cfg.eta = 0.1;
  cfg.tol = 1e-10;

  std::vector<double> z{0.0, 0.0, 0.0, 1.0};
  std::vector<double> p{0.0, 0.0, -10.0, 0.0};
  Tape tape;
  auto res = solve_fixed_point(tape, pb, cfg, 0.0, z, p, {0.0, 0.0});
  CHECK(res.converged);
  CHECK(res.u_star[1] == doctest::Approx(prm.steer_limit).epsilon(1e-12));
}

TEST_CASE("value-function wrapper recovers the riccati feedback") {
  LqrProblem pb(LqrParams::scalar_default());
  RiccatiSolution sol = lqr_riccati(pb, 4000, 1.0);
  QuadraticValueFunction value(sol.times, sol.p);

  OperatorConfig cfg;
  cfg.eta = 0.5;
  cfg.tol = 1e-10;

  // u*(0, z) = -P(0) z with P(0) ~ 0.5
  auto res = solve_fixed_point(pb, value, cfg, 0.0, {1.0}, {0.0});
  CHECK(res.converged);
  CHECK(res.u_star[0] == doctest::Approx(-0.5).epsilon(2e-3));

  // halfway: P(0.5) ~ 1/(2-0.5)
  auto mid = solve_fixed_point(pb, value, cfg, 0.5, {1.0}, {0.0});
  CHECK(mid.u_star[0] == doctest::Approx(-1.0 / 1.5).epsilon(2e-3));
}

TEST_CASE("tracked operator application is scoped for work accounting") {
  LqrProblem pb(LqrParams::scalar_default());
  OperatorConfig cfg;
  cfg.eta = 0.25;

  Tape tape;
  Var z = tape.constant(Tensor::vec({1.0}));
  Var p = tape.constant(Tensor::vec({0.6}));
  Var u = tape.leaf(Tensor::vec({0.2}));
  const std::size_t scopes_before = tape.scope_count();
  Var out = apply_operator(tape, pb, cfg, 0.0, z, u, p, /*scoped=*/true);
  CHECK(tape.scope_count() == scopes_before + 1);

  // T(u) = (1-eta) u - eta p
  CHECK(out.value()[0] == doctest::Approx(0.75 * 0.2 - 0.25 * 0.6).epsilon(1e-12));

  std::vector<Var> leaves{u};
  auto res = tape.vjp(out, Tensor::vec({1.0}), leaves);
  CHECK(res.scopes_traversed == 1);
  CHECK(res.grad(u)[0] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("solver validates its configuration") {
  LqrProblem pb(LqrParams::scalar_default());
  Tape tape;
  OperatorConfig cfg;
  cfg.max_iter = 0;
  CHECK_THROWS_AS(solve_fixed_point(tape, pb, cfg, 0.0, {1.0}, {1.0}, {0.0}),
                  ConfigError);
  cfg.max_iter = 10;
  cfg.eta = 0.0;
  CHECK_THROWS_AS(solve_fixed_point(tape, pb, cfg, 0.0, {1.0}, {1.0}, {0.0}),
                  ConfigError);
  cfg.eta = 0.1;
  CHECK_THROWS_AS(solve_fixed_point(tape, pb, cfg, 0.0, {1.0}, {1.0}, {0.0, 0.0}),
                  ShapeError);
}
