#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "diagnostics.hpp"
#include "errors.hpp"
#include "grad.hpp"
#include "problems.hpp"
#include "tape.hpp"
#include "valuenet.hpp"

using namespace jfbctrl;

namespace {

OperatorConfig op_with_eta(double eta) {
  OperatorConfig op;
  op.eta = eta;
  op.tol = 1e-10;
  return op;
}

// Control Jacobian of one operator application with the costate held fixed,
// assembled row by row. Oracle counterpart of the power iteration.
Eigen::MatrixXd assemble_du(const ControlProblem& pb, const ValueFunction& net,
                            const OperatorConfig& op, const AuditPoint& pt) {
  const std::size_t m = pb.control_dim();
  std::vector<double> p_vals = net.eval_grad_z(pt.t, pt.z);
  Tape tape;
  Var zc = tape.constant(Tensor::vec(pt.z));
  Var uc = tape.leaf(Tensor::vec(pt.u));
  Var pc = tape.constant(Tensor::vec(p_vals));
  Var out = apply_operator(tape, pb, op, pt.t, zc, uc, pc);
  std::vector<Var> leaves{uc};

  Eigen::MatrixXd jac(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    Tensor basis = Tensor::zeros({m});
    basis[i] = 1.0;
    VjpResult res = tape.vjp(out, basis, leaves);
    for (std::size_t j = 0; j < m; ++j) jac(i, j) = res.grad(uc)[j];
  }
  return jac;
}

// Parameter Jacobian of one operator application, assembled as a full m x p
// matrix for a dense SVD. Oracle counterpart of the Gram-matrix route.
Eigen::MatrixXd assemble_dtheta(const ControlProblem& pb, const ValueFunction& net,
                                const OperatorConfig& op, const AuditPoint& pt) {
  const std::size_t m = pb.control_dim();
  Tape tape;
  auto bound = net.bind(tape);
  Var t_node = tape.constant(Tensor::scalar(pt.t));
  Var zc = tape.constant(Tensor::vec(pt.z));
  Var uc = tape.constant(Tensor::vec(pt.u));
  Var p_expr = bound->grad_z(t_node, zc);
  Var out = apply_operator(tape, pb, op, pt.t, zc, uc, p_expr);

  Eigen::MatrixXd mat(m, net.param_count());
  for (std::size_t i = 0; i < m; ++i) {
    Tensor basis = Tensor::zeros({m});
    basis[i] = 1.0;
    VjpResult res = tape.vjp(out, basis, bound->param_leaves());
    Tensor row = bound->flat_param_grad(res);
    for (std::size_t j = 0; j < row.size(); ++j) mat(i, j) = row[j];
  }
  return mat;
}

AuditPoint quadrotor_point() {
  AuditPoint pt;
  pt.t = 0.3;
  pt.z = {0.3, -0.2, 0.5, 0.1, -0.1, 0.2, 0.05, -0.04, 0.03, 0.02, -0.01, 0.04};
  pt.u = {2.0, 0.1, -0.05, 0.02};
  return pt;
}

}  // namespace

TEST_CASE("contraction estimate is exact on linear quadratic operators") {
  // with R = I the operator Jacobian in u is (1 - eta) I exactly
  LqrProblem pb(LqrParams::scalar_default());
  MlpValueNetwork net({2, 4, 1}, 3);
  std::vector<AuditPoint> pts{{0.2, {1.0}, {0.3}}};

  for (double eta : {0.01, 0.1, 0.5}) {
    ContractionEstimate est = estimate_contraction(pb, net, op_with_eta(eta), pts);
    CHECK(est.gamma_hat == doctest::Approx(std::abs(1.0 - eta)).epsilon(1e-6));
    CHECK(est.contractive);
  }

  ContractionEstimate unit = estimate_contraction(pb, net, op_with_eta(1.0), pts);
  CHECK(unit.gamma_hat == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(unit.contractive);

  ContractionEstimate expanding = estimate_contraction(pb, net, op_with_eta(3.0), pts);
  CHECK(expanding.gamma_hat == doctest::Approx(2.0).epsilon(1e-6));
  CHECK_FALSE(expanding.contractive);
}

TEST_CASE("contraction estimate resolves anisotropic curvature") {
  // R = diag(1, 2) at eta = 0.1 gives dT/du = diag(0.9, 0.8)
  LqrParams prm;
  prm.A = Tensor::zeros({2, 2});
  prm.B = Tensor::from({2, 2}, {1, 0, 0, 1});
  prm.Q = Tensor::zeros({2, 2});
  prm.R = Tensor::from({2, 2}, {1, 0, 0, 2});
  prm.QT = Tensor::from({2, 2}, {1, 0, 0, 1});
  LqrProblem pb(prm);
  MlpValueNetwork net({3, 4, 1}, 5);

  std::vector<AuditPoint> pts{{0.1, {0.5, -0.4}, {0.2, 0.1}}};
  ContractionEstimate est = estimate_contraction(pb, net, op_with_eta(0.1), pts, 200);
  CHECK(est.gamma_hat == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("power iteration matches a dense singular value decomposition") {
  // strong exponential weights spread the per-channel curvatures apart, so
  // the Jacobian has a clear spectral gap and the iteration must converge
  QuadrotorParams prm;
  prm.c_e = 0.5;
  prm.kappa_e = 1.5;
  QuadrotorProblem pb(prm);
  MlpValueNetwork net({13, 8, 1}, 19);
  AuditPoint pt = quadrotor_point();
  pt.u = {2.0, 1.0, -0.5, 0.1};
  OperatorConfig op = op_with_eta(0.1);

  Eigen::MatrixXd jac = assemble_du(pb, net, op, pt);
  Eigen::VectorXd sv = jac.jacobiSvd().singularValues();
  REQUIRE(sv(0) - sv(1) > 0.01);

  std::vector<AuditPoint> pts{pt};
  ContractionEstimate est = estimate_contraction(pb, net, op, pts, 500);
  CHECK(est.gamma_hat == doctest::Approx(sv(0)).epsilon(1e-6));
}

TEST_CASE("spectrum estimates match an explicitly assembled jacobian") {
  QuadrotorProblem pb(QuadrotorParams{});
  MlpValueNetwork net({13, 8, 1}, 19);
  AuditPoint pt = quadrotor_point();
  OperatorConfig op = op_with_eta(0.05);

  Eigen::MatrixXd mat = assemble_dtheta(pb, net, op, pt);
  REQUIRE(mat.cols() == 121);
  Eigen::VectorXd sv = mat.jacobiSvd().singularValues();
  double smax = sv(0);
  double smin = sv(sv.size() - 1);

  std::vector<AuditPoint> pts{pt};
  SpectrumEstimate est = m_theta_spectrum(pb, net, op, pts);
  CHECK(est.sigma_max == doctest::Approx(smax).epsilon(1e-8));
  CHECK(est.sigma_min == doctest::Approx(smin).epsilon(1e-8));
  CHECK(est.rank_full);
  CHECK(est.kappa_hat == doctest::Approx((smax * smax) / (smin * smin)).epsilon(1e-6));
  CHECK(est.beta_hat == doctest::Approx(1.0 / (smax * smax)).epsilon(1e-10));
  CHECK(est.kappa_hat >= 1.0);
}

TEST_CASE("spectrum flags rank deficiency") {
  // all-zero weights kill every parameter path through the costate
  LqrProblem pb(LqrParams::scalar_default());
  MlpValueNetwork net({2, 4, 1}, 1, MlpValueNetwork::Init::Zero);
  std::vector<AuditPoint> pts{{0.0, {1.0}, {0.2}}};

  SpectrumEstimate est = m_theta_spectrum(pb, net, op_with_eta(0.5), pts);
  CHECK_FALSE(est.rank_full);
  CHECK(std::isnan(est.kappa_hat));
}

TEST_CASE("alignment report") {
  std::vector<double> g{3.0, 4.0};

  AlignmentReport same = alignment_report(g, g);
  CHECK(same.defined);
  CHECK(same.angle == doctest::Approx(0.0));
  CHECK(same.epsilon_v == doctest::Approx(1.0));
  CHECK(same.descent);

  AlignmentReport opposite = alignment_report(g, {-3.0, -4.0});
  CHECK(opposite.angle == doctest::Approx(std::acos(-1.0)));
  CHECK_FALSE(opposite.descent);

  AlignmentReport orthogonal = alignment_report({1.0, 0.0}, {0.0, 2.0});
  CHECK(orthogonal.angle == doctest::Approx(std::acos(-1.0) / 2.0));
  CHECK_FALSE(orthogonal.descent);

  AlignmentReport zero = alignment_report({0.0, 0.0}, g);
  CHECK_FALSE(zero.defined);
  CHECK(std::isnan(zero.angle));

  CHECK_THROWS_AS(alignment_report({1.0}, {1.0, 2.0}), ShapeError);
}

TEST_CASE("variance statistics on the two-sample hand case") {
  // v in {(1,0), (0,1)}: mean (1/2, 1/2), population variance
  // (1/2)(|(1,0)-(.5,.5)|^2 + |(0,1)-(.5,.5)|^2) = 0.5
  std::vector<std::vector<std::vector<double>>> v{{{1.0, 0.0}}, {{0.0, 1.0}}};
  std::vector<std::vector<double>> mean_mv{{0.5, 0.5}};  // M = I by hand
  std::vector<std::vector<double>> h{{1.0}, {2.0}};

  VarianceAudit va = variance_stats(v, v, mean_mv, h, 0.5, 1.0, 1.0);
  CHECK(va.defined);
  // denominator |E[Mv]|^2 = 0.5
  CHECK(va.delta_var_hat == doctest::Approx(0.5).epsilon(1e-12));   // 0.25/0.5
  CHECK(va.delta_var_lemma == doctest::Approx(1.0).epsilon(1e-12)); // 0.5/0.5
  // margin = 1 - 0.5*1 - 1 = -0.5, scaled by the denominator
  CHECK(va.delta_theta_sq_hat == doctest::Approx(-0.25).epsilon(1e-12));
  CHECK(va.vw_inner_min == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(va.b_max_hat == doctest::Approx(2.0));
}

TEST_CASE("identical samples have zero variance") {
  std::vector<std::vector<std::vector<double>>> v{{{1.0, 2.0}}, {{1.0, 2.0}}};
  std::vector<std::vector<double>> mean_mv{{1.0, 0.0}};
  std::vector<std::vector<double>> h{{0.5}, {0.5}};

  VarianceAudit va = variance_stats(v, v, mean_mv, h, 0.25, 2.0, 1.0);
  CHECK(va.delta_var_hat == doctest::Approx(0.0));
  CHECK(va.delta_var_lemma == doctest::Approx(0.0));
  // margin = 1 - 0.25*2 - 0 = 0.5 against denominator 1
  CHECK(va.delta_theta_sq_hat == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("single sample leaves variance undefined") {
  std::vector<std::vector<std::vector<double>>> v{{{1.0}}};
  VarianceAudit va = variance_stats(v, v, {{1.0}}, {{3.0}}, 0.5, 1.0, 1.0);
  CHECK_FALSE(va.defined);
  CHECK(va.b_max_hat == doctest::Approx(3.0));
}

TEST_CASE("directional parameter bumps reproduce the jacobian") {
  // feed the audit a basis direction; with zero variance the reported
  // margin term reduces to |M e_i|^2, which the assembled matrix pins
  LqrProblem pb(LqrParams::scalar_default());
  MlpValueNetwork net({2, 4, 1}, 41);
  OperatorConfig op = op_with_eta(0.5);
  AuditPoint pt{0.2, {0.7}, {0.1}};

  Eigen::MatrixXd mat = assemble_dtheta(pb, net, op, pt);
  Eigen::Index best = 0;
  mat.row(0).cwiseAbs().maxCoeff(&best);
  double expected = mat(0, best) * mat(0, best);

  std::vector<double> e(net.param_count(), 0.0);
  e[static_cast<std::size_t>(best)] = 1.0;

  PerSampleSeries series;
  series.v = {{e}, {e}};
  series.w = series.v;
  series.points = {{pt}, {pt}};
  series.h_norm = {{1.0}, {1.0}};

  VarianceAudit va = variance_audit(pb, net, op, series, 0.0, 1.0, 1.0);
  // margin = 1 - 0 - 0 = 1, so the reported value is the denominator itself
  CHECK(va.delta_theta_sq_hat == doctest::Approx(expected).epsilon(1e-5));

  // the bump must leave the parameters untouched afterwards
  std::vector<double> theta;
  net.get_params(theta);
  Eigen::MatrixXd again = assemble_dtheta(pb, net, op, pt);
  CHECK((again - mat).norm() == doctest::Approx(0.0));
}

TEST_CASE("assumption audit on a desk problem") {
  LqrProblem pb(LqrParams::scalar_default());
  MlpValueNetwork net({2, 8, 1}, 9);

  GradOptions opt;
  opt.grid.steps = 10;
  opt.op.eta = 0.5;
  opt.op.tol = 1e-10;

  AuditOptions audit;
  std::vector<std::vector<double>> batch{{1.0}, {-0.5}, {0.25}};
  DiagnosticsReport rep = audit_batch(pb, net, batch, opt, audit);

  CHECK(rep.gamma_hat == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(rep.pass_a1);
  CHECK(rep.true_grad_available);
  CHECK(rep.alignment_defined);
  CHECK(rep.angle >= 0.0);
  CHECK(rep.angle <= std::acos(-1.0));
  CHECK(rep.variance_defined);
  CHECK(rep.nonconverged_rate == doctest::Approx(0.0));
  CHECK(rep.b_max_hat > 0.0);
  CHECK(rep.rank_full);
  CHECK(rep.kappa_hat >= 1.0);
  CHECK(rep.pass_a3 == (rep.rank_full && rep.kappa_hat < 1.0 / rep.gamma_hat));

  double margin = rep.lambda_minus - rep.gamma_hat * rep.lambda_plus - rep.delta_var_lemma;
  CHECK(rep.pass_a4 == (margin > 0.0));
  if (rep.pass_a4) {
    CHECK(rep.delta_theta_sq_hat >= 0.0);
    if (rep.pass_a1 && rep.pass_a3)
      CHECK(rep.vw_inner_min >= rep.delta_theta_sq_hat - 1e-8);
  }
}

TEST_CASE("audit without trainable parameters skips the comparisons") {
  LqrProblem pb(LqrParams::scalar_default());
  RiccatiSolution sol = lqr_riccati(pb, 500, 1.0);
  QuadraticValueFunction value(sol.times, sol.p);

  GradOptions opt;
  opt.grid.steps = 6;
  opt.op.eta = 0.5;
  opt.op.tol = 1e-10;

  AuditOptions audit;
  std::vector<std::vector<double>> batch{{1.0}, {0.5}};
  DiagnosticsReport rep = audit_batch(pb, value, batch, opt, audit);

  CHECK_FALSE(rep.true_grad_available);
  CHECK_FALSE(rep.alignment_defined);
  CHECK(std::isnan(rep.angle));
  CHECK_FALSE(rep.variance_defined);
  CHECK_FALSE(rep.rank_full);
  CHECK(rep.gamma_hat == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(rep.b_max_hat > 0.0);
}

TEST_CASE("probe validation") {
  LqrProblem pb(LqrParams::scalar_default());
  MlpValueNetwork net({2, 4, 1}, 2);
  std::vector<AuditPoint> pts{{0.0, {1.0}, {0.1}}};
  std::vector<AuditPoint> none;

  CHECK_THROWS_AS(estimate_contraction(pb, net, op_with_eta(0.5), pts, 5), ConfigError);
  CHECK_THROWS_AS(estimate_contraction(pb, net, op_with_eta(0.5), none), ConfigError);
  CHECK_THROWS_AS(m_theta_spectrum(pb, net, op_with_eta(0.5), none), ConfigError);

  LqrProblem wide(LqrParams::scalar_default(), 65);
  MlpValueNetwork wide_net({66, 2, 1}, 1);
  std::vector<AuditPoint> wide_pts{
      {0.0, std::vector<double>(65, 0.1), std::vector<double>(65, 0.0)}};
  CHECK_THROWS_AS(m_theta_spectrum(wide, wide_net, op_with_eta(0.5), wide_pts),
                  ConfigError);
}
