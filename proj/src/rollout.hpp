#pragma once

#include <memory>
#include <span>
#include <vector>

#include "hamiltonian.hpp"
#include "problems.hpp"
#include "tape.hpp"
#include "valuenet.hpp"

namespace jfbctrl {

struct Grid {
  std::size_t steps = 50;
  double horizon = 1.0;
  double dt() const { return horizon / static_cast<double>(steps); }
  double time(std::size_t k) const { return dt() * static_cast<double>(k); }
};

// What the tape records during a rollout. None evaluates values only. Jfb
// solves each step's fixed point off-tape and then records one tracked
// operator application on top of the detached solution. Unrolled records
// every inner iteration.
enum class TrackMode { None, Jfb, Unrolled };

struct RolloutConfig {
  Grid grid;
  OperatorConfig op;
  TrackMode track = TrackMode::None;
  // Detach the state entering each tracked operator application, so the
  // recorded theta-path is exactly (dT/dtheta)^T h with z held fixed.
  bool detach_z = false;
  // Untracked evaluation may integrate with classic RK4 (fixed point solved
  // per stage); gradient-carrying modes are first order by construction.
  bool rk4 = false;
  // Hard cap on live tape nodes for unrolled recording.
  std::size_t node_budget = 5000000;
  // Test hook: constant per-step offsets added to the control actually used,
  // letting finite differences probe the per-step cotangents.
  const std::vector<std::vector<double>>* control_offsets = nullptr;
};

struct Trajectory {
  Grid grid;
  TrackMode track = TrackMode::None;
  std::vector<std::vector<double>> z;  // states, steps+1 entries
  std::vector<std::vector<double>> u;  // fixed-point controls, steps entries
  std::vector<double> running;         // running cost samples, steps entries
  double objective = 0.0;
  std::size_t total_inner_iters = 0;
  std::size_t nonconverged = 0;        // solves that hit the iteration cap

  // Tracked-mode tape handles. `bound` owns the parameter leaves; u_nodes are
  // the operator outputs actually feeding dynamics and cost; z_nodes the
  // recorded states; j_node the scalar objective.
  std::unique_ptr<BoundValue> bound;
  std::vector<Var> u_nodes;
  std::vector<Var> z_nodes;
  Var j_node;
};

Trajectory rollout(Tape& tape, const ControlProblem& problem,
                   const ValueFunction& net, const std::vector<double>& x,
                   const RolloutConfig& cfg);

// One reverse sweep of a tracked rollout. Delivers the discrete adjoints at
// the state nodes (p[steps] is exactly grad G(z_N)) and the cotangent dt*h_k
// accumulated at each step's control node. Extra leaves (typically the
// parameter leaves) ride along in `sweep`.
struct AdjointResult {
  std::vector<std::vector<double>> p;     // steps+1 adjoints
  std::vector<std::vector<double>> h_dt;  // steps cotangents at the controls
  VjpResult sweep;
};

AdjointResult discrete_adjoint(Tape& tape, const Trajectory& traj,
                               std::span<const Var> leaves = {},
                               bool attribute_scopes = false);

}  // namespace jfbctrl
