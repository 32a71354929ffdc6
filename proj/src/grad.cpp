#include "grad.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "errors.hpp"
#include "tape.hpp"

namespace jfbctrl {

namespace {

constexpr std::size_t kImplicitControlCap = 64;

void validate_batch(const std::vector<std::vector<double>>& batch) {
  if (batch.empty()) throw ConfigError("gradient estimation needs a nonempty batch");
}

void axpy(std::vector<double>& acc, const Tensor& g, double scale) {
  if (acc.size() != g.size()) throw ShapeError("gradient accumulator size mismatch");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += scale * g[i];
}

// Jfb and unrolled share everything except the track mode: record, run one
// reverse sweep with the parameter leaves requested, accumulate.
GradientEstimate tracked_backend(Backend be, const ControlProblem& pb,
                                 const ValueFunction& net,
                                 const std::vector<std::vector<double>>& batch,
                                 const GradOptions& opt) {
  validate_batch(batch);
  if (opt.retain_per_step && be == Backend::Unrolled)
    throw ConfigError("per-step attribution needs one recorded application per step; use jfb or implicit");

  GradientEstimate est;
  est.backend = be;
  est.direction.assign(net.param_count(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const std::size_t steps = opt.grid.steps;
  if (opt.retain_per_step)
    est.per_step.assign(steps, std::vector<double>(net.param_count(), 0.0));

  RolloutConfig cfg;
  cfg.grid = opt.grid;
  cfg.op = opt.op;
  cfg.track = (be == Backend::Jfb) ? TrackMode::Jfb : TrackMode::Unrolled;
  cfg.detach_z = opt.detach_z;
  cfg.node_budget = opt.node_budget;

  for (const std::vector<double>& x : batch) {
    Tape tape;
    Trajectory traj = rollout(tape, pb, net, x, cfg);
    AdjointResult adj = discrete_adjoint(tape, traj, traj.bound->param_leaves(),
                                         opt.retain_per_step);

    axpy(est.direction, traj.bound->flat_param_grad(adj.sweep), inv_b);
    est.loss += inv_b * traj.objective;
    est.work_units += adj.sweep.scopes_traversed;
    est.peak_nodes = std::max(est.peak_nodes, tape.stats().peak_node_count);
    est.nonconverged += traj.nonconverged;
    est.total_inner_iters += traj.total_inner_iters;
    if (be == Backend::Jfb) est.solves += steps;

    if (opt.retain_per_step) {
      // jfb records exactly one scope per step, in step order
      for (std::size_t k = 0; k < steps; ++k) {
        auto it = adj.sweep.per_scope.find(static_cast<std::int32_t>(k));
        if (it == adj.sweep.per_scope.end()) continue;
        VjpResult slice;
        slice.leaf_grads = std::move(it->second);
        Tensor wk = traj.bound->flat_param_grad(slice);
        for (std::size_t i = 0; i < wk.size(); ++i)
          est.per_step[k][i] += inv_b * wk[i];
      }
    }
  }
  return est;
}

std::vector<double> terminal_adjoint(Tape& tape, const ControlProblem& pb,
                                     const std::vector<double>& z_final) {
  auto mark = tape.mark();
  Var z_leaf = tape.leaf(Tensor::vec(z_final));
  Var g = pb.terminal_cost(tape, z_leaf);
  std::vector<Var> leaves{z_leaf};
  VjpResult res = tape.vjp(g, Tensor::scalar(1.0), leaves);
  std::vector<double> lambda = to_vector(res.grad(z_leaf));
  tape.rewind(mark);
  return lambda;
}

}  // namespace

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::Jfb: return "jfb";
    case Backend::Implicit: return "implicit";
    case Backend::Unrolled: return "unrolled";
  }
  return "unknown";
}

Backend backend_from_name(const std::string& name) {
  if (name == "jfb") return Backend::Jfb;
  if (name == "implicit") return Backend::Implicit;
  if (name == "unrolled") return Backend::Unrolled;
  throw ConfigError("unknown gradient backend '" + name + "'");
}

GradientEstimate grad_jfb(const ControlProblem& pb, const ValueFunction& net,
                          const std::vector<std::vector<double>>& batch,
                          const GradOptions& opt) {
  return tracked_backend(Backend::Jfb, pb, net, batch, opt);
}

GradientEstimate grad_unrolled(const ControlProblem& pb, const ValueFunction& net,
                               const std::vector<std::vector<double>>& batch,
                               const GradOptions& opt) {
  return tracked_backend(Backend::Unrolled, pb, net, batch, opt);
}

GradientEstimate grad_implicit(const ControlProblem& pb, const ValueFunction& net,
                               const std::vector<std::vector<double>>& batch,
                               const GradOptions& opt) {
  validate_batch(batch);
  const std::size_t m = pb.control_dim();
  const std::size_t n = pb.state_dim();
  if (m > kImplicitControlCap) {
    std::ostringstream msg;
    msg << "implicit backend solves an " << m << "x" << m
        << " system per step; controls above " << kImplicitControlCap
        << " are not supported";
    throw ConfigError(msg.str());
  }

  GradientEstimate est;
  est.backend = Backend::Implicit;
  est.direction.assign(net.param_count(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const std::size_t steps = opt.grid.steps;
  const double dt = opt.grid.dt();
  if (opt.retain_per_step)
    est.per_step.assign(steps, std::vector<double>(net.param_count(), 0.0));

  RolloutConfig fwd;
  fwd.grid = opt.grid;
  fwd.op = opt.op;
  fwd.track = TrackMode::None;

  for (const std::vector<double>& x : batch) {
    Tape tape;
    std::unique_ptr<BoundValue> bound = net.bind(tape);

    Trajectory traj = rollout(tape, pb, net, x, fwd);
    est.loss += inv_b * traj.objective;
    est.nonconverged += traj.nonconverged;
    est.total_inner_iters += traj.total_inner_iters;
    est.solves += steps;

    std::vector<double> lambda = terminal_adjoint(tape, pb, traj.z[steps]);
    std::vector<double> g_x(net.param_count(), 0.0);

    for (std::size_t kk = steps; kk-- > 0;) {
      const double t = opt.grid.time(kk);
      const std::vector<double>& zk = traj.z[kk];
      const std::vector<double>& uk = traj.u[kk];

      // cotangents of the one-step map dt L + <lambda, z + dt f> with the
      // control treated as its own input
      auto mark_a = tape.mark();
      Var z_leaf = tape.leaf(Tensor::vec(zk));
      Var u_leaf = tape.leaf(Tensor::vec(uk));
      Var lam = tape.constant(Tensor::vec(lambda));
      Var cost = pb.running_cost(tape, t, z_leaf, u_leaf);
      Var f = pb.dynamics(tape, t, z_leaf, u_leaf);
      Var znext = add(z_leaf, affine(f, dt, 0.0));
      Var s = add(affine(cost, dt, 0.0), dot(lam, znext));
      std::vector<Var> ab_leaves{z_leaf, u_leaf};
      VjpResult ab = tape.vjp(s, Tensor::scalar(1.0), ab_leaves);
      std::vector<double> a_k = to_vector(ab.grad(u_leaf));
      std::vector<double> b_k = to_vector(ab.grad(z_leaf));
      tape.rewind(mark_a);

      // one recorded operator application at the converged point; probe its
      // control Jacobian row by row, solve the transposed system, then pull
      // the solved cotangent back to parameters and state
      auto mark_b = tape.mark();
      Var t_node = tape.constant(Tensor::scalar(t));
      Var z_in = opt.detach_z ? tape.constant(Tensor::vec(zk))
                              : tape.leaf(Tensor::vec(zk));
      Var u_in = tape.leaf(Tensor::vec(uk));
      tape.begin_operator_scope();
      Var p_expr = bound->grad_z(t_node, z_in);
      Var t_out = apply_operator(tape, pb, opt.op, t, z_in, u_in, p_expr);
      tape.end_operator_scope();

      Eigen::MatrixXd jac(m, m);
      std::vector<Var> probe_leaves{u_in};
      for (std::size_t i = 0; i < m; ++i) {
        Tensor basis = Tensor::zeros({m});
        basis[i] = 1.0;
        VjpResult row = tape.vjp(t_out, basis, probe_leaves);
        est.work_units += row.scopes_traversed;
        const Tensor& r = row.grad(u_in);
        for (std::size_t j = 0; j < m; ++j) jac(i, j) = r[j];
      }

      Eigen::MatrixXd system = Eigen::MatrixXd::Identity(m, m) - jac;
      Eigen::FullPivLU<Eigen::MatrixXd> lu(system.transpose());
      if (!lu.isInvertible()) {
        std::ostringstream msg;
        msg << "operator linearization is singular at step " << kk
            << " (t=" << t << "); the fixed point is not locally unique";
        throw NumericError(msg.str());
      }
      Eigen::VectorXd rhs(m);
      for (std::size_t i = 0; i < m; ++i) rhs(static_cast<Eigen::Index>(i)) = a_k[i];
      Eigen::VectorXd y = lu.solve(rhs);

      Tensor y_cot = Tensor::zeros({m});
      for (std::size_t i = 0; i < m; ++i) y_cot[i] = y(static_cast<Eigen::Index>(i));
      std::vector<Var> pull_leaves(bound->param_leaves().begin(),
                                   bound->param_leaves().end());
      pull_leaves.push_back(u_in);
      if (!opt.detach_z) pull_leaves.push_back(z_in);
      VjpResult pulled = tape.vjp(t_out, y_cot, pull_leaves);
      est.work_units += pulled.scopes_traversed;

      Tensor v_k = bound->flat_param_grad(pulled);
      for (std::size_t i = 0; i < v_k.size(); ++i) g_x[i] += v_k[i];
      if (opt.retain_per_step)
        for (std::size_t i = 0; i < v_k.size(); ++i)
          est.per_step[kk][i] += inv_b * v_k[i];

      lambda = b_k;
      if (!opt.detach_z) {
        const Tensor& zpull = pulled.grad(z_in);
        for (std::size_t i = 0; i < n; ++i) lambda[i] += zpull[i];
      }
      tape.rewind(mark_b);
    }

    axpy(est.direction, Tensor::vec(std::move(g_x)), inv_b);
    est.peak_nodes = std::max(est.peak_nodes, tape.stats().peak_node_count);
  }
  return est;
}

GradientEstimate estimate_gradient(Backend backend, const ControlProblem& pb,
                                   const ValueFunction& net,
                                   const std::vector<std::vector<double>>& batch,
                                   const GradOptions& opt) {
  switch (backend) {
    case Backend::Jfb: return grad_jfb(pb, net, batch, opt);
    case Backend::Implicit: return grad_implicit(pb, net, batch, opt);
    case Backend::Unrolled: return grad_unrolled(pb, net, batch, opt);
  }
  throw ConfigError("unknown gradient backend");
}

std::vector<double> finite_diff_grad(const ControlProblem& pb, ValueFunction& net,
                                     const std::vector<std::vector<double>>& batch,
                                     const GradOptions& opt, double eps) {
  validate_batch(batch);
  if (eps <= 0.0) throw ConfigError("finite difference step must be positive");

  RolloutConfig cfg;
  cfg.grid = opt.grid;
  cfg.op = opt.op;
  cfg.track = TrackMode::None;

  auto mean_objective = [&]() {
    double acc = 0.0;
    for (const std::vector<double>& x : batch) {
      Tape tape;
      acc += rollout(tape, pb, net, x, cfg).objective;
    }
    return acc / static_cast<double>(batch.size());
  };

  std::vector<double> theta;
  net.get_params(theta);
  std::vector<double> grad(theta.size(), 0.0);
  std::vector<double> bumped = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    bumped[i] = theta[i] + eps;
    net.set_params(bumped);
    double up = mean_objective();
    bumped[i] = theta[i] - eps;
    net.set_params(bumped);
    double down = mean_objective();
    bumped[i] = theta[i];
    grad[i] = (up - down) / (2.0 * eps);
  }
  net.set_params(theta);
  return grad;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("cosine of vectors with different sizes");
  double num = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return num / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace jfbctrl
