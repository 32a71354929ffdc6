#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "grad.hpp"
#include "hamiltonian.hpp"
#include "problems.hpp"
#include "valuenet.hpp"

namespace jfbctrl {

// A converged (t, z, u*) triple at which the operator linearization is probed.
struct AuditPoint {
  double t = 0.0;
  std::vector<double> z;
  std::vector<double> u;
};

// Worst-case top singular value of dT/du over the probe points, found by
// power iteration on (dT/du)^T (dT/du). The forward product uses a
// directional finite difference of the operator values; the transposed
// product is an exact reverse sweep.
struct ContractionEstimate {
  double gamma_hat = 0.0;
  bool contractive = false;
  // Largest relative Rayleigh movement on the final iteration over all
  // points; small means the iteration settled.
  double uncertainty = 0.0;
};

ContractionEstimate estimate_contraction(const ControlProblem& problem,
                                         const ValueFunction& net,
                                         const OperatorConfig& op,
                                         std::span<const AuditPoint> points,
                                         int iters = 50, std::uint64_t seed = 0);

// Spectrum of the operator's parameter Jacobian M = dT/dtheta, probed
// through the m x m Gram matrix M M^T assembled from m reverse sweeps.
// Extremes are taken over the probe points.
struct SpectrumEstimate {
  double sigma_min = 0.0;     // min over points of the smallest singular value
  double sigma_max = 0.0;     // max over points of the largest singular value
  double lambda_plus = 0.0;   // max over points of lambda_max(MM^T)
  double lambda_minus = 0.0;  // min over points of lambda_min(MM^T)
  double kappa_hat = 0.0;     // lambda_plus / lambda_minus; NaN when rank-deficient
  double beta_hat = 0.0;      // 1 / sigma_max^2
  bool rank_full = false;
};

SpectrumEstimate m_theta_spectrum(const ControlProblem& problem,
                                  const ValueFunction& net,
                                  const OperatorConfig& op,
                                  std::span<const AuditPoint> points);

struct AlignmentReport {
  double angle = 0.0;      // arccos of the normalized inner product
  double inner = 0.0;      // <g, d>
  double epsilon_v = 0.0;  // <g, d> / |g|^2
  bool defined = false;    // false when either vector has zero norm
  bool descent = false;    // angle < pi/2
};

AlignmentReport alignment_report(const std::vector<double>& true_grad,
                                 const std::vector<double>& jfb_dir);

// Per-sample, per-step integrand series collected from single-sample
// gradient runs: v from the solved linear systems, w from the single
// recorded application, h the running Hamiltonian-gradient norms.
struct PerSampleSeries {
  // indexed [sample][step], each entry a parameter-sized vector
  std::vector<std::vector<std::vector<double>>> v;
  std::vector<std::vector<std::vector<double>>> w;
  // indexed [sample][step]
  std::vector<std::vector<AuditPoint>> points;
  std::vector<std::vector<double>> h_norm;
};

struct VarianceAudit {
  // worst step of max(Var[v], Var[w])^2 / |E[Mv]|^2, the bound as stated
  double delta_var_hat = 0.0;
  // worst step of the unsquared ratio max(Var[v], Var[w]) / |E[Mv]|^2,
  // which is the constant the descent margin actually consumes
  double delta_var_lemma = 0.0;
  // min over steps of (lambda_minus - gamma lambda_plus - delta) |E[Mv]|^2
  double delta_theta_sq_hat = 0.0;
  double b_max_hat = 0.0;
  double vw_inner_min = 0.0;  // min over steps of <E[v_k], E[w_k]>
  bool defined = false;       // needs at least two samples
};

// Statistics core over already-collected series; mean_mv[k] is E_x[M v] at
// step k. Separated out so hand cases can pin the estimator.
VarianceAudit variance_stats(
    const std::vector<std::vector<std::vector<double>>>& v,
    const std::vector<std::vector<std::vector<double>>>& w,
    const std::vector<std::vector<double>>& mean_mv,
    const std::vector<std::vector<double>>& h_norm, double gamma_hat,
    double lambda_plus, double lambda_minus);

// Full audit: collects the series, computes E[Mv] by bumping theta along
// each sample's v (forward difference through the operator values), and
// reduces. Mutates the network parameters transiently; restores them.
VarianceAudit variance_audit(const ControlProblem& problem, ValueFunction& net,
                             const OperatorConfig& op,
                             const PerSampleSeries& series, double gamma_hat,
                             double lambda_plus, double lambda_minus);

// One row of the assumption audit. NaN marks a field whose prerequisite was
// unavailable (e.g. no true gradient on large nets); the pass flags are
// false in that case rather than silently true.
struct DiagnosticsReport {
  double gamma_hat = 0.0;
  double sigma_min_m = 0.0;
  double sigma_max_m = 0.0;
  double beta_hat = 0.0;
  double kappa_hat = 0.0;
  double lambda_plus = 0.0;
  double lambda_minus = 0.0;
  double angle = 0.0;
  double inner = 0.0;
  double epsilon_v_hat = 0.0;
  double delta_var_hat = 0.0;
  double delta_var_lemma = 0.0;
  double delta_theta_sq_hat = 0.0;
  double b_max_hat = 0.0;
  double vw_inner_min = 0.0;
  double jfb_grad_norm = 0.0;
  double true_grad_norm = 0.0;
  double second_moment_hat = 0.0;  // (1/S) sum of squared per-sample step norms
  double nonconverged_rate = 0.0;
  // Samples whose exact-gradient solve hit a singular linearization. They are
  // excluded from the true-gradient mean and the variance series.
  std::size_t true_grad_failures = 0;
  bool pass_a1 = false;  // gamma_hat < 1
  bool rank_full = false;
  bool pass_a3 = false;  // rank_full and kappa_hat < 1 / gamma_hat
  bool pass_a4 = false;  // lambda_minus - gamma lambda_plus - delta > 0
  bool alignment_defined = false;
  bool variance_defined = false;
  bool true_grad_available = false;
};

struct AuditOptions {
  int contraction_iters = 50;
  // Cap on (sample, step) probe points for the contraction and spectrum
  // scans; points are strided evenly across the batch.
  std::size_t max_points = 64;
  // True-gradient comparison is skipped above these sizes.
  std::size_t max_control_dim = 64;
  std::size_t max_param_count = 100000;
  std::uint64_t seed = 0;
};

DiagnosticsReport audit_batch(const ControlProblem& problem, ValueFunction& net,
                              const std::vector<std::vector<double>>& batch,
                              const GradOptions& opt, const AuditOptions& audit);

}  // namespace jfbctrl
