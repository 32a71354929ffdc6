#include "diagnostics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "errors.hpp"
#include "rng.hpp"
#include "rollout.hpp"
#include "tape.hpp"

namespace jfbctrl {

namespace {

constexpr std::size_t kSpectrumControlCap = 64;

double nan_value() { return std::numeric_limits<double>::quiet_NaN(); }

double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot_vec(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Operator values at a probe point with an explicit control and costate.
std::vector<double> operator_values(const ControlProblem& pb,
                                    const OperatorConfig& op, double t,
                                    const std::vector<double>& z,
                                    const std::vector<double>& u,
                                    const std::vector<double>& p) {
  Tape tape;
  Var zv = tape.constant(Tensor::vec(z));
  Var uv = tape.constant(Tensor::vec(u));
  Var pv = tape.constant(Tensor::vec(p));
  return to_vector(apply_operator(tape, pb, op, t, zv, uv, pv).value());
}

std::vector<double> operator_values_net(const ControlProblem& pb,
                                        const ValueFunction& net,
                                        const OperatorConfig& op,
                                        const AuditPoint& pt) {
  return operator_values(pb, op, pt.t, pt.z, pt.u, net.eval_grad_z(pt.t, pt.z));
}

}  // namespace

ContractionEstimate estimate_contraction(const ControlProblem& pb,
                                         const ValueFunction& net,
                                         const OperatorConfig& op,
                                         std::span<const AuditPoint> points,
                                         int iters, std::uint64_t seed) {
  if (iters < 10) throw ConfigError("contraction probe needs at least 10 iterations");
  if (points.empty()) throw ConfigError("contraction probe needs at least one point");

  const std::size_t m = pb.control_dim();
  ContractionEstimate est;

  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    const AuditPoint& pt = points[pi];
    std::vector<double> p_vals = net.eval_grad_z(pt.t, pt.z);
    std::vector<double> base = operator_values(pb, op, pt.t, pt.z, pt.u, p_vals);

    // one recorded application; its reverse sweep is the exact transposed
    // product, the forward product comes from bumping the control values
    Tape tape;
    Var zc = tape.constant(Tensor::vec(pt.z));
    Var uc = tape.leaf(Tensor::vec(pt.u));
    Var pc = tape.constant(Tensor::vec(p_vals));
    Var out = apply_operator(tape, pb, op, pt.t, zc, uc, pc);
    std::vector<Var> leaves{uc};

    std::mt19937_64 gen = indexed_rng(seed, pi);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<double> w(m);
    for (double& x : w) x = unit(gen);
    double wn = norm2(w);
    if (wn == 0.0) w[0] = 1.0, wn = 1.0;
    for (double& x : w) x /= wn;

    const double eps = 1e-6 * (1.0 + norm2(pt.u));
    double sigma = 0.0;
    double rel = 0.0;
    for (int it = 0; it < iters; ++it) {
      // central difference keeps the directional-derivative bias at O(eps^2),
      // which the 1e-6 agreement with a dense decomposition needs
      std::vector<double> up = pt.u, down = pt.u;
      for (std::size_t i = 0; i < m; ++i) {
        up[i] += eps * w[i];
        down[i] -= eps * w[i];
      }
      std::vector<double> fwd = operator_values(pb, op, pt.t, pt.z, up, p_vals);
      std::vector<double> bwd = operator_values(pb, op, pt.t, pt.z, down, p_vals);
      std::vector<double> s(m);
      for (std::size_t i = 0; i < m; ++i) s[i] = (fwd[i] - bwd[i]) / (2.0 * eps);

      VjpResult res = tape.vjp(out, Tensor::vec(s), leaves);
      std::vector<double> r = to_vector(res.grad(uc));

      double rayleigh = dot_vec(w, r);
      double next = std::sqrt(std::max(rayleigh, 0.0));
      rel = std::abs(next - sigma) / std::max(next, 1e-300);
      sigma = next;

      double rn = norm2(r);
      if (rn == 0.0) {
        sigma = 0.0;
        rel = 0.0;
        break;
      }
      for (std::size_t i = 0; i < m; ++i) w[i] = r[i] / rn;
      if (rel < 1e-12 && it >= 1) break;
    }

    est.gamma_hat = std::max(est.gamma_hat, sigma);
    est.uncertainty = std::max(est.uncertainty, rel);
  }

  est.contractive = est.gamma_hat < 1.0;
  return est;
}

SpectrumEstimate m_theta_spectrum(const ControlProblem& pb,
                                  const ValueFunction& net,
                                  const OperatorConfig& op,
                                  std::span<const AuditPoint> points) {
  const std::size_t m = pb.control_dim();
  if (m > kSpectrumControlCap)
    throw ConfigError("spectrum probe assembles an m x m Gram matrix; control dimension above 64 is not supported");
  if (points.empty()) throw ConfigError("spectrum probe needs at least one point");

  SpectrumEstimate est;
  est.sigma_min = std::numeric_limits<double>::infinity();
  est.lambda_minus = std::numeric_limits<double>::infinity();

  for (const AuditPoint& pt : points) {
    Tape tape;
    std::unique_ptr<BoundValue> bound = net.bind(tape);
    Var t_node = tape.constant(Tensor::scalar(pt.t));
    Var zc = tape.constant(Tensor::vec(pt.z));
    Var uc = tape.constant(Tensor::vec(pt.u));
    Var p_expr = bound->grad_z(t_node, zc);
    Var out = apply_operator(tape, pb, op, pt.t, zc, uc, p_expr);

    std::vector<Tensor> rows;
    rows.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
      Tensor basis = Tensor::zeros({m});
      basis[i] = 1.0;
      VjpResult res = tape.vjp(out, basis, bound->param_leaves());
      rows.push_back(bound->flat_param_grad(res));
    }

    Eigen::MatrixXd gram(m, m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        double g = 0.0;
        for (std::size_t q = 0; q < rows[i].size(); ++q) g += rows[i][q] * rows[j][q];
        gram(i, j) = g;
        gram(j, i) = g;
      }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    double lmin = eig.eigenvalues()(0);
    double lmax = eig.eigenvalues()(static_cast<Eigen::Index>(m) - 1);
    est.lambda_minus = std::min(est.lambda_minus, lmin);
    est.lambda_plus = std::max(est.lambda_plus, lmax);
    est.sigma_min = std::min(est.sigma_min, std::sqrt(std::max(lmin, 0.0)));
    est.sigma_max = std::max(est.sigma_max, std::sqrt(std::max(lmax, 0.0)));
  }

  est.rank_full = est.lambda_minus > 1e-10;
  est.kappa_hat = est.rank_full ? est.lambda_plus / est.lambda_minus : nan_value();
  est.beta_hat = est.sigma_max > 0.0 ? 1.0 / (est.sigma_max * est.sigma_max)
                                     : nan_value();
  return est;
}

AlignmentReport alignment_report(const std::vector<double>& true_grad,
                                 const std::vector<double>& jfb_dir) {
  if (true_grad.size() != jfb_dir.size())
    throw ShapeError("alignment of vectors with different sizes");

  AlignmentReport rep;
  double ng = norm2(true_grad);
  double nd = norm2(jfb_dir);
  rep.inner = dot_vec(true_grad, jfb_dir);
  if (ng == 0.0 || nd == 0.0) {
    rep.angle = nan_value();
    rep.epsilon_v = nan_value();
    return rep;
  }
  rep.defined = true;
  double c = std::clamp(rep.inner / (ng * nd), -1.0, 1.0);
  rep.angle = std::acos(c);
  rep.descent = rep.angle < std::acos(-1.0) / 2.0;
  rep.epsilon_v = rep.inner / (ng * ng);
  return rep;
}

VarianceAudit variance_stats(
    const std::vector<std::vector<std::vector<double>>>& v,
    const std::vector<std::vector<std::vector<double>>>& w,
    const std::vector<std::vector<double>>& mean_mv,
    const std::vector<std::vector<double>>& h_norm, double gamma_hat,
    double lambda_plus, double lambda_minus) {
  VarianceAudit out;
  const std::size_t samples = v.size();
  if (samples == 0 || w.size() != samples)
    throw ShapeError("variance audit needs matching v and w series");
  const std::size_t steps = v[0].size();

  for (const auto& row : h_norm)
    for (double h : row) out.b_max_hat = std::max(out.b_max_hat, h);

  if (samples < 2) return out;  // variance undefined, flagged by `defined`
  out.defined = true;

  const double inv_s = 1.0 / static_cast<double>(samples);
  out.delta_theta_sq_hat = std::numeric_limits<double>::infinity();
  out.vw_inner_min = std::numeric_limits<double>::infinity();

  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t p = v[0][k].size();
    std::vector<double> v_bar(p, 0.0), w_bar(p, 0.0);
    for (std::size_t s = 0; s < samples; ++s)
      for (std::size_t i = 0; i < p; ++i) {
        v_bar[i] += inv_s * v[s][k][i];
        w_bar[i] += inv_s * w[s][k][i];
      }

    double var_v = 0.0, var_w = 0.0;
    for (std::size_t s = 0; s < samples; ++s)
      for (std::size_t i = 0; i < p; ++i) {
        double dv = v[s][k][i] - v_bar[i];
        double dw = w[s][k][i] - w_bar[i];
        var_v += inv_s * dv * dv;
        var_w += inv_s * dw * dw;
      }

    double worst = std::max(var_v, var_w);
    double denom = dot_vec(mean_mv[k], mean_mv[k]);
    double ratio_sq, ratio;
    if (denom > 0.0) {
      ratio_sq = worst * worst / denom;
      ratio = worst / denom;
    } else {
      ratio_sq = worst > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
      ratio = ratio_sq;
    }
    out.delta_var_hat = std::max(out.delta_var_hat, ratio_sq);
    out.delta_var_lemma = std::max(out.delta_var_lemma, ratio);
    out.vw_inner_min = std::min(out.vw_inner_min, dot_vec(v_bar, w_bar));

    double margin = lambda_minus - gamma_hat * lambda_plus - ratio;
    out.delta_theta_sq_hat = std::min(out.delta_theta_sq_hat, margin * denom);
  }
  return out;
}

VarianceAudit variance_audit(const ControlProblem& pb, ValueFunction& net,
                             const OperatorConfig& op,
                             const PerSampleSeries& series, double gamma_hat,
                             double lambda_plus, double lambda_minus) {
  const std::size_t samples = series.v.size();
  if (samples == 0) throw ShapeError("variance audit needs at least one sample");
  const std::size_t steps = series.v[0].size();
  const std::size_t m = pb.control_dim();

  std::vector<double> theta;
  net.get_params(theta);
  const double theta_norm = norm2(theta);

  std::vector<std::vector<double>> mean_mv(steps, std::vector<double>(m, 0.0));
  const double inv_s = 1.0 / static_cast<double>(samples);
  std::vector<double> bumped = theta;

  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t k = 0; k < steps; ++k) {
      const std::vector<double>& v = series.v[s][k];
      double vn = norm2(v);
      if (vn == 0.0) continue;
      const AuditPoint& pt = series.points[s][k];

      std::vector<double> base = operator_values_net(pb, net, op, pt);
      const double eps = 1e-6 * (1.0 + theta_norm) / (1.0 + vn);
      for (std::size_t i = 0; i < theta.size(); ++i) bumped[i] = theta[i] + eps * v[i];
      net.set_params(bumped);
      std::vector<double> shifted = operator_values_net(pb, net, op, pt);
      net.set_params(theta);

      for (std::size_t i = 0; i < m; ++i)
        mean_mv[k][i] += inv_s * (shifted[i] - base[i]) / eps;
    }
  }

  return variance_stats(series.v, series.w, mean_mv, series.h_norm, gamma_hat,
                        lambda_plus, lambda_minus);
}

DiagnosticsReport audit_batch(const ControlProblem& pb, ValueFunction& net,
                              const std::vector<std::vector<double>>& batch,
                              const GradOptions& opt, const AuditOptions& audit) {
  if (batch.empty()) throw ConfigError("assumption audit needs a nonempty batch");

  const std::size_t steps = opt.grid.steps;
  const std::size_t samples = batch.size();
  const double dt = opt.grid.dt();
  const std::size_t m = pb.control_dim();
  const std::size_t p = net.param_count();

  DiagnosticsReport rep;
  PerSampleSeries series;
  series.v.resize(samples);
  series.w.assign(samples, {});
  series.points.assign(samples, {});
  series.h_norm.assign(samples, {});

  RolloutConfig cfg;
  cfg.grid = opt.grid;
  cfg.op = opt.op;
  cfg.track = TrackMode::Jfb;
  cfg.detach_z = opt.detach_z;
  cfg.node_budget = opt.node_budget;

  std::vector<double> d_bar(p, 0.0);
  const double inv_s = 1.0 / static_cast<double>(samples);
  std::size_t total_solves = 0, total_nonconverged = 0;
  double second_moment = 0.0;

  for (std::size_t s = 0; s < samples; ++s) {
    Tape tape;
    Trajectory traj = rollout(tape, pb, net, batch[s], cfg);
    AdjointResult adj = discrete_adjoint(tape, traj, traj.bound->param_leaves(), true);

    Tensor d_x = traj.bound->flat_param_grad(adj.sweep);
    double sq = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      d_bar[i] += inv_s * d_x[i];
      sq += d_x[i] * d_x[i];
    }
    second_moment += inv_s * sq;
    total_solves += steps;
    total_nonconverged += traj.nonconverged;

    series.w[s].resize(steps);
    series.points[s].resize(steps);
    series.h_norm[s].resize(steps);
    for (std::size_t k = 0; k < steps; ++k) {
      auto it = adj.sweep.per_scope.find(static_cast<std::int32_t>(k));
      if (it != adj.sweep.per_scope.end()) {
        VjpResult slice;
        slice.leaf_grads = std::move(it->second);
        series.w[s][k] = to_vector(traj.bound->flat_param_grad(slice));
      } else {
        series.w[s][k].assign(p, 0.0);
      }
      series.points[s][k] = AuditPoint{opt.grid.time(k), traj.z[k], traj.u[k]};
      series.h_norm[s][k] = norm2(adj.h_dt[k]) / dt;
    }
  }

  bool with_true = p > 0 && m <= audit.max_control_dim &&
                   p <= audit.max_param_count;
  std::vector<double> g_bar(p, 0.0);
  std::vector<std::size_t> ok_idx;
  if (with_true) {
    GradOptions per = opt;
    per.retain_per_step = true;
    for (std::size_t s = 0; s < samples; ++s) {
      // A singular linearization is one of the conditions this audit exists
      // to detect; record the sample as failed and keep measuring.
      try {
        GradientEstimate im = grad_implicit(pb, net, {batch[s]}, per);
        for (std::size_t i = 0; i < p; ++i) g_bar[i] += im.direction[i];
        series.v[s] = std::move(im.per_step);
        total_solves += steps;
        total_nonconverged += im.nonconverged;
        ok_idx.push_back(s);
      } catch (const NumericError&) {
        ++rep.true_grad_failures;
      }
    }
    if (ok_idx.empty()) {
      with_true = false;
    } else {
      const double inv_ok = 1.0 / static_cast<double>(ok_idx.size());
      for (std::size_t i = 0; i < p; ++i) g_bar[i] *= inv_ok;
    }
  }
  rep.true_grad_available = with_true;
  rep.jfb_grad_norm = norm2(d_bar);
  rep.true_grad_norm = with_true ? norm2(g_bar) : nan_value();
  rep.second_moment_hat = second_moment;

  // probe points strided evenly over the (sample, step) grid
  std::vector<AuditPoint> probes;
  const std::size_t total = samples * steps;
  const std::size_t stride = std::max<std::size_t>(1, total / std::max<std::size_t>(1, audit.max_points));
  for (std::size_t idx = 0; idx < total && probes.size() < audit.max_points; idx += stride)
    probes.push_back(series.points[idx / steps][idx % steps]);

  ContractionEstimate gamma = estimate_contraction(pb, net, opt.op, probes,
                                                   audit.contraction_iters,
                                                   audit.seed);
  rep.gamma_hat = gamma.gamma_hat;
  rep.pass_a1 = gamma.contractive;

  if (m <= kSpectrumControlCap) {
    SpectrumEstimate spec = m_theta_spectrum(pb, net, opt.op, probes);
    rep.sigma_min_m = spec.sigma_min;
    rep.sigma_max_m = spec.sigma_max;
    rep.beta_hat = spec.beta_hat;
    rep.kappa_hat = spec.kappa_hat;
    rep.lambda_plus = spec.lambda_plus;
    rep.lambda_minus = spec.lambda_minus;
    rep.rank_full = spec.rank_full;
    rep.pass_a3 = spec.rank_full && rep.gamma_hat > 0.0 &&
                  spec.kappa_hat < 1.0 / rep.gamma_hat;
  } else {
    rep.sigma_min_m = rep.sigma_max_m = rep.beta_hat = nan_value();
    rep.kappa_hat = rep.lambda_plus = rep.lambda_minus = nan_value();
  }

  if (with_true) {
    AlignmentReport align = alignment_report(g_bar, d_bar);
    rep.angle = align.angle;
    rep.inner = align.inner;
    rep.epsilon_v_hat = align.epsilon_v;
    rep.alignment_defined = align.defined;
  } else {
    rep.angle = rep.inner = rep.epsilon_v_hat = nan_value();
  }

  // drop failed samples so the v and w series stay index-aligned
  if (with_true && ok_idx.size() < samples) {
    PerSampleSeries kept;
    for (std::size_t s : ok_idx) {
      kept.v.push_back(std::move(series.v[s]));
      kept.w.push_back(std::move(series.w[s]));
      kept.points.push_back(std::move(series.points[s]));
      kept.h_norm.push_back(std::move(series.h_norm[s]));
    }
    series = std::move(kept);
  }

  if (with_true && series.v.size() >= 2 && m <= kSpectrumControlCap) {
    VarianceAudit va = variance_audit(pb, net, opt.op, series, rep.gamma_hat,
                                      rep.lambda_plus, rep.lambda_minus);
    rep.delta_var_hat = va.delta_var_hat;
    rep.delta_var_lemma = va.delta_var_lemma;
    rep.delta_theta_sq_hat = va.delta_theta_sq_hat;
    rep.b_max_hat = va.b_max_hat;
    rep.vw_inner_min = va.vw_inner_min;
    rep.variance_defined = va.defined;
    rep.pass_a4 = va.defined &&
                  (rep.lambda_minus - rep.gamma_hat * rep.lambda_plus -
                   va.delta_var_lemma) > 0.0;
  } else {
    rep.delta_var_hat = rep.delta_var_lemma = nan_value();
    rep.delta_theta_sq_hat = rep.vw_inner_min = nan_value();
    double bmax = 0.0;
    for (const auto& row : series.h_norm)
      for (double h : row) bmax = std::max(bmax, h);
    rep.b_max_hat = bmax;
  }

  rep.nonconverged_rate = total_solves > 0
                              ? static_cast<double>(total_nonconverged) /
                                    static_cast<double>(total_solves)
                              : 0.0;
  return rep;
}

}  // namespace jfbctrl
