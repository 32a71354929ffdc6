#pragma once

#include <string>
#include <vector>

#include "problems.hpp"
#include "rollout.hpp"
#include "valuenet.hpp"

namespace jfbctrl {

// Three ways to differentiate the rollout objective with respect to the
// value-function parameters. Jfb backpropagates through a single operator
// application per step on top of the converged solution. Implicit solves the
// per-step linear system (I - dT/du)^T y = h exactly. Unrolled records every
// inner iteration and differentiates the truncated composition.
enum class Backend { Jfb, Implicit, Unrolled };

const char* backend_name(Backend b);
Backend backend_from_name(const std::string& name);

struct GradOptions {
  Grid grid;
  OperatorConfig op;
  // Keep the state path into the operator coupled (false) or cut it (true).
  // Coupled is the default and what the unrolled recording does naturally.
  bool detach_z = false;
  std::size_t node_budget = 5000000;
  // Collect the per-step parameter contributions (batch means). Costs one
  // p-sized vector per step; off unless a diagnostic wants them.
  bool retain_per_step = false;
};

struct GradientEstimate {
  Backend backend = Backend::Jfb;
  std::vector<double> direction;  // d(mean objective)/dtheta
  double loss = 0.0;              // mean objective over the batch
  // One work unit is one reverse traversal of one recorded operator
  // application. Jfb spends steps * batch exactly; unrolled spends the
  // total recorded iteration count; implicit spends (m + 1) per step for
  // the m probe sweeps plus the solved cotangent sweep.
  std::size_t work_units = 0;
  std::size_t peak_nodes = 0;  // max live tape nodes over the batch
  std::size_t solves = 0;      // fixed-point solves performed
  std::size_t nonconverged = 0;
  std::size_t total_inner_iters = 0;
  // Step-k parameter contribution, batch mean; filled when retain_per_step.
  std::vector<std::vector<double>> per_step;
};

GradientEstimate grad_jfb(const ControlProblem& problem, const ValueFunction& net,
                          const std::vector<std::vector<double>>& batch,
                          const GradOptions& opt);

GradientEstimate grad_unrolled(const ControlProblem& problem,
                               const ValueFunction& net,
                               const std::vector<std::vector<double>>& batch,
                               const GradOptions& opt);

GradientEstimate grad_implicit(const ControlProblem& problem,
                               const ValueFunction& net,
                               const std::vector<std::vector<double>>& batch,
                               const GradOptions& opt);

GradientEstimate estimate_gradient(Backend backend, const ControlProblem& problem,
                                   const ValueFunction& net,
                                   const std::vector<std::vector<double>>& batch,
                                   const GradOptions& opt);

// Central differences of the batch-mean objective over every parameter.
// The objective is evaluated through untracked rollouts with the given
// operator settings, which computes the same values the tracked modes see.
// Intended for small parameter counts; cost is 2p rollout batches.
std::vector<double> finite_diff_grad(const ControlProblem& problem,
                                     ValueFunction& net,
                                     const std::vector<std::vector<double>>& batch,
                                     const GradOptions& opt, double eps = 1e-6);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace jfbctrl
