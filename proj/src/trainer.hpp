#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "diagnostics.hpp"
#include "grad.hpp"
#include "problems.hpp"
#include "valuenet.hpp"

namespace jfbctrl {

// Step-size schedules whose shapes satisfy the divergent-sum /
// square-summable conditions the convergence analysis needs. Diminishing
// steps are alpha0 / (1+j)^q with q in (0.5, 1]; plateau reduces
// multiplicatively when the per-epoch mean loss stops improving.
struct Schedule {
  enum class Kind { Diminishing, Constant, Plateau };
  Kind kind = Kind::Diminishing;
  double alpha0 = 0.1;
  double power = 1.0;   // diminishing only
  double factor = 0.5;  // plateau only
  int patience = 10;    // plateau only, measured in epochs

  static Schedule diminishing(double alpha0, double q);
  static Schedule constant(double alpha);
  static Schedule plateau(double alpha0, double factor, int patience);

  void validate() const;
};

// Plain SGD update theta <- theta - alpha * direction. Returns false and
// leaves the parameters untouched when the direction is not finite; the
// caller records the incident.
bool sgd_step(ValueFunction& net, const std::vector<double>& direction,
              double alpha);

struct TrainRecord {
  std::size_t j = 0;
  double alpha = 0.0;
  double loss = 0.0;
  double grad_norm_jfb = 0.0;
  double grad_norm_true = 0.0;  // NaN unless this iteration was audited
  double cesaro_avg = 0.0;      // (1/A_K) sum alpha_i |g_i|^2 up to here
  int lr_events = 0;            // cumulative plateau reductions
};

struct EpochSummary {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::size_t work_units_cum = 0;  // across the whole run so far
  std::size_t peak_nodes = 0;      // max over the run so far
  double wall_ms = 0.0;            // this epoch only
};

struct TrainHistory {
  std::vector<TrainRecord> records;
  std::vector<EpochSummary> epochs;
  std::vector<std::pair<std::size_t, DiagnosticsReport>> audits;  // (j, report)
  std::vector<std::string> incidents;  // skipped steps, schedule warnings
  double a_k = 0.0;
  double cesaro_avg = 0.0;
  double final_loss = 0.0;
  std::size_t total_work_units = 0;
  std::size_t peak_nodes = 0;
  std::size_t steps_skipped = 0;
};

struct TrainOptions {
  GradOptions grad;
  Schedule schedule;
  Backend backend = Backend::Jfb;
  std::size_t batch_size = 16;
  std::size_t iters_per_epoch = 50;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  // Assumption audit every this many iterations (0 = never). The audit
  // freezes theta, runs on the iteration's batch, and also logs the true
  // gradient norm into the record.
  std::size_t audit_every = 0;
  AuditOptions audit;
  // Called after each epoch whose index is a multiple of the cadence.
  std::size_t checkpoint_every = 0;
  std::function<void(std::size_t epoch)> on_checkpoint;
};

// Minibatch SGD on the rollout objective with the selected gradient
// backend. Batches are drawn from the problem's initial-state law with a
// deterministic counter-based stream, so identical options give an
// identical history.
TrainHistory train(const ControlProblem& problem, ValueFunction& net,
                   const TrainOptions& opt);

// Constant-step runs over a descending step-size grid, each from the same
// initial parameters and sample stream. The plateau is the mean squared
// norm of the batch-mean true gradient over the final fifth of iterations;
// runs whose loss exceeds ten times the initial loss stop early and are
// flagged divergent.
struct NeighborhoodRow {
  double alpha = 0.0;
  double plateau = 0.0;
  double final_loss = 0.0;
  bool divergent = false;
};

std::vector<NeighborhoodRow> neighborhood_experiment(
    const ControlProblem& problem, ValueFunction& net,
    const std::vector<double>& alphas, std::size_t iters,
    std::size_t batch_size, std::uint64_t seed, const GradOptions& opt);

}  // namespace jfbctrl
