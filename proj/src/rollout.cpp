#include "rollout.hpp"

#include <cmath>
#include <sstream>
#include <utility>

#include "errors.hpp"

namespace jfbctrl {

namespace {

void check_state_finite(const std::vector<double>& z, std::size_t k, double t) {
  for (double v : z) {
    if (!std::isfinite(v)) {
      std::ostringstream msg;
      msg << "state diverged at step " << k << " (t=" << t << ")";
      throw NumericError(msg.str());
    }
  }
}

std::vector<double> add_offset(std::vector<double> u,
                               const std::vector<double>* off) {
  if (off) {
    if (off->size() != u.size())
      throw ShapeError("control offset has wrong dimension");
    for (std::size_t i = 0; i < u.size(); ++i) u[i] += (*off)[i];
  }
  return u;
}

const std::vector<double>* offset_at(const RolloutConfig& cfg, std::size_t k) {
  if (!cfg.control_offsets) return nullptr;
  if (k >= cfg.control_offsets->size())
    throw ShapeError("control offsets cover fewer steps than the grid");
  return &(*cfg.control_offsets)[k];
}

// Values of the running cost and dynamics at a point, evaluated inside a
// rewound frame so the tape keeps nothing.
struct StepEval {
  double cost;
  std::vector<double> f;
};

StepEval eval_step(Tape& tape, const ControlProblem& pb, double t,
                   const std::vector<double>& z, const std::vector<double>& u) {
  auto mark = tape.mark();
  Var zv = tape.constant(Tensor::vec(z));
  Var uv = tape.constant(Tensor::vec(u));
  StepEval out;
  out.cost = pb.running_cost(tape, t, zv, uv).value()[0];
  out.f = to_vector(pb.dynamics(tape, t, zv, uv).value());
  tape.rewind(mark);
  return out;
}

double eval_terminal(Tape& tape, const ControlProblem& pb,
                     const std::vector<double>& z) {
  auto mark = tape.mark();
  Var zv = tape.constant(Tensor::vec(z));
  double g = pb.terminal_cost(tape, zv).value()[0];
  tape.rewind(mark);
  return g;
}

// One fixed-point solve with the costate taken from the network at (t, z).
FixedPointResult solve_at(Tape& tape, const ControlProblem& pb,
                          const ValueFunction& net, const OperatorConfig& op,
                          double t, const std::vector<double>& z,
                          const std::vector<double>& seed) {
  std::vector<double> p = net.eval_grad_z(t, z);
  return solve_fixed_point(tape, pb, op, t, z, p, seed);
}

Trajectory rollout_untracked(Tape& tape, const ControlProblem& pb,
                             const ValueFunction& net,
                             const std::vector<double>& x,
                             const RolloutConfig& cfg) {
  Trajectory traj;
  traj.grid = cfg.grid;
  traj.track = TrackMode::None;
  const std::size_t N = cfg.grid.steps;
  const double dt = cfg.grid.dt();

  traj.z.push_back(x);
  std::vector<double> seed = pb.initial_control(x);
  double acc = 0.0;

  for (std::size_t k = 0; k < N; ++k) {
    const double t = cfg.grid.time(k);
    const std::vector<double>& zk = traj.z.back();

    FixedPointResult res = solve_at(tape, pb, net, cfg.op, t, zk, seed);
    traj.total_inner_iters += static_cast<std::size_t>(res.iters);
    if (!res.converged) ++traj.nonconverged;
    traj.u.push_back(res.u_star);

    std::vector<double> next(zk.size());
    double cost_k = 0.0;
    if (!cfg.rk4) {
      std::vector<double> used = add_offset(res.u_star, offset_at(cfg, k));
      StepEval ev = eval_step(tape, pb, t, zk, used);
      cost_k = ev.cost;
      acc += dt * ev.cost;
      for (std::size_t i = 0; i < zk.size(); ++i)
        next[i] = zk[i] + dt * ev.f[i];
      seed = cfg.op.warm_start ? res.u_star : pb.initial_control(next);
    } else {
      // classic four-stage step with the fixed point re-solved per stage;
      // the cost integral gets the same weights as the state
      const std::vector<double>* off = offset_at(cfg, k);
      std::vector<double> u1 = add_offset(res.u_star, off);
      StepEval s1 = eval_step(tape, pb, t, zk, u1);

      std::vector<double> zb(zk.size());
      for (std::size_t i = 0; i < zk.size(); ++i) zb[i] = zk[i] + 0.5 * dt * s1.f[i];
      FixedPointResult r2 = solve_at(tape, pb, net, cfg.op, t + 0.5 * dt, zb, res.u_star);
      traj.total_inner_iters += static_cast<std::size_t>(r2.iters);
      if (!r2.converged) ++traj.nonconverged;
      StepEval s2 = eval_step(tape, pb, t + 0.5 * dt, zb, add_offset(r2.u_star, off));

      std::vector<double> zc(zk.size());
      for (std::size_t i = 0; i < zk.size(); ++i) zc[i] = zk[i] + 0.5 * dt * s2.f[i];
      FixedPointResult r3 = solve_at(tape, pb, net, cfg.op, t + 0.5 * dt, zc, r2.u_star);
      traj.total_inner_iters += static_cast<std::size_t>(r3.iters);
      if (!r3.converged) ++traj.nonconverged;
      StepEval s3 = eval_step(tape, pb, t + 0.5 * dt, zc, add_offset(r3.u_star, off));

      std::vector<double> zd(zk.size());
      for (std::size_t i = 0; i < zk.size(); ++i) zd[i] = zk[i] + dt * s3.f[i];
      FixedPointResult r4 = solve_at(tape, pb, net, cfg.op, t + dt, zd, r3.u_star);
      traj.total_inner_iters += static_cast<std::size_t>(r4.iters);
      if (!r4.converged) ++traj.nonconverged;
      StepEval s4 = eval_step(tape, pb, t + dt, zd, add_offset(r4.u_star, off));

      cost_k = s1.cost;
      acc += dt / 6.0 * (s1.cost + 2.0 * s2.cost + 2.0 * s3.cost + s4.cost);
      for (std::size_t i = 0; i < zk.size(); ++i)
        next[i] = zk[i] + dt / 6.0 * (s1.f[i] + 2.0 * s2.f[i] + 2.0 * s3.f[i] + s4.f[i]);
      seed = cfg.op.warm_start ? r4.u_star : pb.initial_control(next);
    }

    traj.running.push_back(cost_k);
    check_state_finite(next, k + 1, t + dt);
    traj.z.push_back(std::move(next));
  }

  acc += eval_terminal(tape, pb, traj.z.back());
  traj.objective = acc;
  return traj;
}

Trajectory rollout_tracked(Tape& tape, const ControlProblem& pb,
                           const ValueFunction& net,
                           const std::vector<double>& x,
                           const RolloutConfig& cfg) {
  Trajectory traj;
  traj.grid = cfg.grid;
  traj.track = cfg.track;
  traj.bound = net.bind(tape);
  const std::size_t N = cfg.grid.steps;
  const double dt = cfg.grid.dt();
  const bool unrolled = (cfg.track == TrackMode::Unrolled);

  Var zk = tape.constant(Tensor::vec(x));
  traj.z_nodes.push_back(zk);
  traj.z.push_back(x);
  Var obj = tape.constant(0.0);
  std::vector<double> seed = pb.initial_control(x);

  for (std::size_t k = 0; k < N; ++k) {
    const double t = cfg.grid.time(k);
    const std::vector<double>& z_vals = traj.z[k];
    Var z_in = cfg.detach_z ? tape.detach(zk) : zk;
    Var t_node = tape.constant(Tensor::scalar(t));

    Var u_trk{};
    if (!unrolled) {
      FixedPointResult res =
          solve_at(tape, pb, net, cfg.op, t, z_vals, seed);
      traj.total_inner_iters += static_cast<std::size_t>(res.iters);
      if (!res.converged) ++traj.nonconverged;
      traj.u.push_back(res.u_star);
      seed = cfg.op.warm_start ? res.u_star
                               : pb.initial_control(traj.z[k]);

      // single tracked application on top of the detached solution; the
      // costate expression lives inside the scope because the theta path
      // of one operator application runs through it
      tape.begin_operator_scope();
      Var p_expr = traj.bound->grad_z(t_node, z_in);
      Var u_const = tape.constant(Tensor::vec(res.u_star));
      u_trk = apply_operator(tape, pb, cfg.op, t, z_in, u_const, p_expr);
      tape.end_operator_scope();
    } else {
      // every inner iteration recorded; the costate is built once per step
      // (it does not depend on u) and shared across iterations
      Var p_expr = traj.bound->grad_z(t_node, z_in);
      Var it = tape.constant(
          Tensor::vec(pb.project_control_values(z_vals, seed)));
      int iters = 0;
      double residual = 0.0;
      bool converged = false;
      while (iters < cfg.op.max_iter) {
        Var next = apply_operator(tape, pb, cfg.op, t, z_in, it, p_expr,
                                  /*scoped=*/true);
        ++iters;
        if (tape.size() > cfg.node_budget) {
          std::ostringstream msg;
          msg << "unrolled recording exceeded the node budget ("
              << cfg.node_budget << ") at step " << k << ", inner iteration "
              << iters;
          throw RuntimeError(msg.str());
        }
        const Tensor& nv = next.value();
        if (!nv.all_finite()) {
          std::ostringstream msg;
          msg << "fixed-point iterate diverged at t=" << t << ", iteration "
              << iters;
          throw NumericError(msg.str());
        }
        residual = 0.0;
        for (std::size_t i = 0; i < nv.size(); ++i)
          residual = std::max(residual, std::abs(nv[i] - it.value()[i]));
        it = next;
        if (residual <= cfg.op.tol) {
          converged = true;
          break;
        }
      }
      traj.total_inner_iters += static_cast<std::size_t>(iters);
      if (!converged) ++traj.nonconverged;
      traj.u.push_back(to_vector(it.value()));
      seed = cfg.op.warm_start ? traj.u.back()
                               : pb.initial_control(traj.z[k]);
      u_trk = it;
    }

    Var u_used = u_trk;
    if (const std::vector<double>* off = offset_at(cfg, k)) {
      if (off->size() != pb.control_dim())
        throw ShapeError("control offset has wrong dimension");
      u_used = add(u_trk, tape.constant(Tensor::vec(*off)));
    }
    traj.u_nodes.push_back(u_used);

    Var cost_k = pb.running_cost(tape, t, zk, u_used);
    traj.running.push_back(cost_k.value()[0]);
    obj = add(obj, affine(cost_k, dt, 0.0));

    Var f = pb.dynamics(tape, t, zk, u_used);
    Var z_next = add(zk, affine(f, dt, 0.0));
    std::vector<double> next_vals = to_vector(z_next.value());
    check_state_finite(next_vals, k + 1, t + dt);
    traj.z.push_back(std::move(next_vals));
    traj.z_nodes.push_back(z_next);
    zk = z_next;
  }

  obj = add(obj, pb.terminal_cost(tape, zk));
  traj.objective = obj.value()[0];
  traj.j_node = obj;
  return traj;
}

}  // namespace

Trajectory rollout(Tape& tape, const ControlProblem& problem,
                   const ValueFunction& net, const std::vector<double>& x,
                   const RolloutConfig& cfg) {
  if (x.size() != problem.state_dim())
    throw ShapeError("initial state has dimension " + std::to_string(x.size()) +
                     ", problem expects " + std::to_string(problem.state_dim()));
  if (cfg.grid.steps < 1) throw ConfigError("grid needs at least one step");
  if (cfg.grid.horizon <= 0.0) throw ConfigError("horizon must be positive");
  if (cfg.op.max_iter < 1) throw ConfigError("max_iter must be at least 1");
  if (cfg.op.eta <= 0.0) throw ConfigError("step size eta must be positive");
  if (net.state_dim() != problem.state_dim())
    throw ShapeError("value function state dimension does not match the problem");
  if (cfg.rk4 && cfg.track != TrackMode::None)
    throw ConfigError("rk4 integration is evaluation-only; tracked rollouts use the euler grid");

  if (cfg.track == TrackMode::None)
    return rollout_untracked(tape, problem, net, x, cfg);
  return rollout_tracked(tape, problem, net, x, cfg);
}

AdjointResult discrete_adjoint(Tape& tape, const Trajectory& traj,
                               std::span<const Var> leaves,
                               bool attribute_scopes) {
  if (traj.track == TrackMode::None)
    throw RuntimeError("adjoint extraction requires a tracked rollout");

  std::vector<Var> observed;
  observed.reserve(traj.z_nodes.size() + traj.u_nodes.size());
  for (Var v : traj.z_nodes) observed.push_back(v);
  for (Var v : traj.u_nodes) observed.push_back(v);

  AdjointResult out;
  out.sweep = tape.vjp(traj.j_node, Tensor::scalar(1.0), leaves, observed,
                       attribute_scopes);

  out.p.reserve(traj.z_nodes.size());
  for (Var v : traj.z_nodes)
    out.p.push_back(to_vector(out.sweep.observed.at(v.id)));
  out.h_dt.reserve(traj.u_nodes.size());
  for (Var v : traj.u_nodes)
    out.h_dt.push_back(to_vector(out.sweep.observed.at(v.id)));
  return out;
}

}  // namespace jfbctrl
