#pragma once

#include <vector>

#include "problems.hpp"
#include "tape.hpp"
#include "valuenet.hpp"

namespace jfbctrl {

// Settings for the per-step control solve. `eta` is the ascent step inside
// the operator, `tol` the infinity-norm cutoff on u_{k+1} - u_k.
struct OperatorConfig {
  double eta = 0.01;
  double tol = 1e-6;
  int max_iter = 500;
  bool warm_start = true;
};

struct FixedPointResult {
  std::vector<double> u_star;
  int iters = 0;
  double residual = 0.0;
  bool converged = false;
};

// Control gradient of the Hamiltonian under the minimization convention:
// grad_u H = -(grad_u L + (df/du)^T p). Ascent on H trades running cost
// against the costate's appraisal of the velocity it buys.
Var grad_u_hamiltonian(Tape& tape, const ControlProblem& problem, double t,
                       Var z, Var u, Var p);

// One application of T(u) = Proj(u + eta * grad_u H). With `scoped` set the
// application is bracketed as an operator scope so reverse sweeps can
// attribute traversal counts to it.
Var apply_operator(Tape& tape, const ControlProblem& problem,
                   const OperatorConfig& cfg, double t, Var z, Var u, Var p,
                   bool scoped = false);

// Untracked fixed-point iteration for u*(t, z). The costate value p is held
// fixed (it depends on z and theta, not on u). Every iterate is built inside
// a tape frame that is rewound before the next one, so the solve leaves no
// nodes behind no matter how many iterations it takes. `u0` seeds the
// iteration; callers warm-start by passing the previous step's solution.
FixedPointResult solve_fixed_point(Tape& tape, const ControlProblem& problem,
                                   const OperatorConfig& cfg, double t,
                                   const std::vector<double>& z,
                                   const std::vector<double>& p,
                                   const std::vector<double>& u0);

// Convenience wrapper: evaluates p = grad_z phi(t, z) on a scratch tape,
// then solves. Used by diagnostics and tests that probe single states.
FixedPointResult solve_fixed_point(const ControlProblem& problem,
                                   const ValueFunction& value,
                                   const OperatorConfig& cfg, double t,
                                   const std::vector<double>& z,
                                   const std::vector<double>& u0);

}  // namespace jfbctrl
