#include "hamiltonian.hpp"

#include <cmath>
#include <sstream>
#include <utility>

#include "errors.hpp"

namespace jfbctrl {

Var grad_u_hamiltonian(Tape& tape, const ControlProblem& problem, double t,
                       Var z, Var u, Var p) {
  Var gl = problem.grad_u_running_cost(tape, t, z, u);
  Var gf = problem.grad_u_dynamics_costate(tape, t, z, u, p);
  return neg(add(gl, gf));
}

Var apply_operator(Tape& tape, const ControlProblem& problem,
                   const OperatorConfig& cfg, double t, Var z, Var u, Var p,
                   bool scoped) {
  if (scoped) tape.begin_operator_scope();
  Var g = grad_u_hamiltonian(tape, problem, t, z, u, p);
  Var stepped = add(u, affine(g, cfg.eta, 0.0));
  Var out = problem.project_control(tape, z, stepped);
  if (scoped) tape.end_operator_scope();
  return out;
}

FixedPointResult solve_fixed_point(Tape& tape, const ControlProblem& problem,
                                   const OperatorConfig& cfg, double t,
                                   const std::vector<double>& z,
                                   const std::vector<double>& p,
                                   const std::vector<double>& u0) {
  if (cfg.max_iter < 1) throw ConfigError("max_iter must be at least 1");
  if (cfg.eta <= 0.0) throw ConfigError("operator step eta must be positive");
  if (u0.size() != problem.control_dim())
    throw ShapeError("fixed-point seed has wrong control dimension");

  FixedPointResult res;
  res.u_star = problem.project_control_values(z, u0);

  for (int k = 0; k < cfg.max_iter; ++k) {
    auto mark = tape.mark();
    Var zc = tape.constant(Tensor::vec(z));
    Var pc = tape.constant(Tensor::vec(p));
    Var uc = tape.constant(Tensor::vec(res.u_star));
    Var next = apply_operator(tape, problem, cfg, t, zc, uc, pc);
    Tensor u_next = next.value();
    tape.rewind(mark);

    if (!u_next.all_finite()) {
      std::ostringstream msg;
      msg << "fixed-point iterate diverged at t=" << t << ", iteration "
          << (k + 1);
      throw NumericError(msg.str());
    }

    double r = 0.0;
    for (std::size_t i = 0; i < u_next.size(); ++i) {
      double d = std::abs(u_next[i] - res.u_star[i]);
      if (d > r) r = d;
      res.u_star[i] = u_next[i];
    }
    res.iters = k + 1;
    res.residual = r;
    if (r <= cfg.tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

FixedPointResult solve_fixed_point(const ControlProblem& problem,
                                   const ValueFunction& value,
                                   const OperatorConfig& cfg, double t,
                                   const std::vector<double>& z,
                                   const std::vector<double>& u0) {
  std::vector<double> p = value.eval_grad_z(t, z);
  Tape tape;
  return solve_fixed_point(tape, problem, cfg, t, z, p, u0);
}

}  // namespace jfbctrl
