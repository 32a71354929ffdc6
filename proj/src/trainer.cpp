#include "trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "errors.hpp"

namespace jfbctrl {

namespace {

double nan_value() { return std::numeric_limits<double>::quiet_NaN(); }

double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

std::vector<std::vector<double>> draw_batch(const ControlProblem& pb,
                                            std::uint64_t seed,
                                            std::uint64_t& counter,
                                            std::size_t size) {
  std::vector<std::vector<double>> batch;
  batch.reserve(size);
  for (std::size_t i = 0; i < size; ++i)
    batch.push_back(pb.sample_initial_state(seed, counter++));
  return batch;
}

}  // namespace

Schedule Schedule::diminishing(double alpha0, double q) {
  Schedule s;
  s.kind = Kind::Diminishing;
  s.alpha0 = alpha0;
  s.power = q;
  s.validate();
  return s;
}

Schedule Schedule::constant(double alpha) {
  Schedule s;
  s.kind = Kind::Constant;
  s.alpha0 = alpha;
  s.validate();
  return s;
}

Schedule Schedule::plateau(double alpha0, double factor, int patience) {
  Schedule s;
  s.kind = Kind::Plateau;
  s.alpha0 = alpha0;
  s.factor = factor;
  s.patience = patience;
  s.validate();
  return s;
}

void Schedule::validate() const {
  if (!(alpha0 > 0.0) || !std::isfinite(alpha0))
    throw ConfigError("schedule needs a positive initial step size");
  if (kind == Kind::Diminishing) {
    // q in (0.5, 1] keeps the step sum divergent and square-summable
    if (!(power > 0.5) || !(power <= 1.0))
      throw ConfigError("diminishing schedule power must lie in (0.5, 1]");
  } else if (kind == Kind::Plateau) {
    if (!(factor > 0.0) || !(factor < 1.0))
      throw ConfigError("plateau factor must lie in (0, 1)");
    if (patience < 1) throw ConfigError("plateau patience must be at least 1");
  }
}

bool sgd_step(ValueFunction& net, const std::vector<double>& direction,
              double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw ConfigError("sgd step size must be positive and finite");
  if (direction.size() != net.param_count())
    throw ShapeError("sgd direction size does not match the parameter count");
  if (!all_finite(direction)) return false;

  std::vector<double> theta;
  net.get_params(theta);
  for (std::size_t i = 0; i < theta.size(); ++i)
    theta[i] -= alpha * direction[i];
  net.set_params(theta);
  return true;
}

TrainHistory train(const ControlProblem& pb, ValueFunction& net,
                   const TrainOptions& opt) {
  opt.schedule.validate();
  if (opt.batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (opt.iters_per_epoch < 1) throw ConfigError("iterations per epoch must be at least 1");
  if (opt.epochs < 1) throw ConfigError("training needs at least one epoch");

  TrainHistory hist;
  const std::size_t total_iters = opt.epochs * opt.iters_per_epoch;
  hist.records.reserve(total_iters);

  std::uint64_t sample_counter = 0;
  double alpha_scale = 1.0;  // plateau reductions fold in here
  int lr_events = 0;
  double best_epoch_loss = std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;
  double cesaro_weight = 0.0;   // A_K
  double cesaro_sum = 0.0;      // sum alpha_j |g_j|^2
  bool cap_warned = false;

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    double epoch_loss = 0.0;

    for (std::size_t it = 0; it < opt.iters_per_epoch; ++it) {
      const std::size_t j = epoch * opt.iters_per_epoch + it;

      double alpha = opt.schedule.alpha0;
      if (opt.schedule.kind == Schedule::Kind::Diminishing)
        alpha = opt.schedule.alpha0 /
                std::pow(1.0 + static_cast<double>(j), opt.schedule.power);
      else if (opt.schedule.kind == Schedule::Kind::Plateau)
        alpha = opt.schedule.alpha0 * alpha_scale;

      std::vector<std::vector<double>> batch =
          draw_batch(pb, opt.seed, sample_counter, opt.batch_size);

      TrainRecord rec;
      rec.j = j;
      rec.alpha = alpha;
      rec.grad_norm_true = nan_value();

      GradientEstimate est;
      try {
        est = estimate_gradient(opt.backend, pb, net, batch, opt.grad);
      } catch (const Error& e) {
        std::ostringstream msg;
        msg << e.what() << " (training iteration " << j << ")";
        throw RuntimeError(msg.str());
      }

      rec.loss = est.loss;
      rec.grad_norm_jfb = norm2(est.direction);
      hist.total_work_units += est.work_units;
      hist.peak_nodes = std::max(hist.peak_nodes, est.peak_nodes);
      epoch_loss += est.loss;

      const bool audit_now = opt.audit_every > 0 && j % opt.audit_every == 0;
      if (audit_now) {
        DiagnosticsReport rep = audit_batch(pb, net, batch, opt.grad, opt.audit);
        if (rep.true_grad_available) rec.grad_norm_true = rep.true_grad_norm;
        hist.audits.emplace_back(j, rep);

        // advisory cap from the theorem's shape, with the measured
        // Hamiltonian-gradient bound standing in for the Lipschitz constant
        if (!cap_warned && rep.alignment_defined && rep.pass_a1 &&
            rep.epsilon_v_hat > 0.0 && rep.b_max_hat > 0.0) {
          double cap = 2.0 * rep.epsilon_v_hat /
                       (rep.b_max_hat * (1.0 - rep.gamma_hat) * (1.0 - rep.gamma_hat));
          if (opt.schedule.alpha0 > cap) {
            std::ostringstream msg;
            msg << "warning: initial step size " << opt.schedule.alpha0
                << " exceeds the estimated stability cap " << cap
                << " at iteration " << j;
            hist.incidents.push_back(msg.str());
            cap_warned = true;
          }
        }
      }

      if (all_finite(est.direction)) {
        cesaro_weight += alpha;
        cesaro_sum += alpha * rec.grad_norm_jfb * rec.grad_norm_jfb;
        sgd_step(net, est.direction, alpha);
      } else {
        ++hist.steps_skipped;
        std::ostringstream msg;
        msg << "skipped update at iteration " << j
            << ": gradient direction is not finite";
        hist.incidents.push_back(msg.str());
      }

      rec.cesaro_avg = cesaro_weight > 0.0 ? cesaro_sum / cesaro_weight : 0.0;
      rec.lr_events = lr_events;
      hist.records.push_back(rec);
    }

    epoch_loss /= static_cast<double>(opt.iters_per_epoch);
    const auto epoch_end = std::chrono::steady_clock::now();

    EpochSummary summary;
    summary.epoch = epoch;
    summary.mean_loss = epoch_loss;
    summary.work_units_cum = hist.total_work_units;
    summary.peak_nodes = hist.peak_nodes;
    summary.wall_ms = std::chrono::duration<double, std::milli>(epoch_end - epoch_start).count();
    hist.epochs.push_back(summary);

    if (opt.schedule.kind == Schedule::Kind::Plateau) {
      if (epoch_loss < best_epoch_loss) {
        best_epoch_loss = epoch_loss;
        epochs_since_improvement = 0;
      } else if (++epochs_since_improvement >= opt.schedule.patience) {
        alpha_scale *= opt.schedule.factor;
        epochs_since_improvement = 0;
        ++lr_events;
      }
    }

    if (opt.checkpoint_every > 0 && opt.on_checkpoint &&
        (epoch + 1) % opt.checkpoint_every == 0)
      opt.on_checkpoint(epoch);
  }

  hist.a_k = cesaro_weight;
  hist.cesaro_avg = cesaro_weight > 0.0 ? cesaro_sum / cesaro_weight : 0.0;
  hist.final_loss = hist.records.empty() ? 0.0 : hist.records.back().loss;
  return hist;
}

std::vector<NeighborhoodRow> neighborhood_experiment(
    const ControlProblem& pb, ValueFunction& net,
    const std::vector<double>& alphas, std::size_t iters,
    std::size_t batch_size, std::uint64_t seed, const GradOptions& opt) {
  if (alphas.empty()) throw ConfigError("neighborhood experiment needs step sizes");
  for (std::size_t i = 0; i + 1 < alphas.size(); ++i)
    if (alphas[i] <= alphas[i + 1])
      throw ConfigError("neighborhood step sizes must be strictly descending");
  for (double a : alphas)
    if (!(a > 0.0)) throw ConfigError("neighborhood step sizes must be positive");
  if (iters < 5) throw ConfigError("neighborhood experiment needs at least 5 iterations");

  std::vector<double> theta0;
  net.get_params(theta0);

  std::vector<NeighborhoodRow> rows;
  rows.reserve(alphas.size());
  const std::size_t window_start = iters - std::max<std::size_t>(1, iters / 5);

  for (double alpha : alphas) {
    net.set_params(theta0);  // every run starts from the same parameters
    std::uint64_t counter = 0;

    NeighborhoodRow row;
    row.alpha = alpha;
    double initial_loss = 0.0;
    double window_sum = 0.0;
    std::size_t window_count = 0;

    for (std::size_t j = 0; j < iters; ++j) {
      std::vector<std::vector<double>> batch =
          draw_batch(pb, seed, counter, batch_size);

      GradientEstimate jfb;
      try {
        jfb = grad_jfb(pb, net, batch, opt);
      } catch (const NumericError&) {
        row.divergent = true;
        break;
      }
      if (j == 0) initial_loss = jfb.loss;
      row.final_loss = jfb.loss;

      if (!std::isfinite(jfb.loss) || jfb.loss > 10.0 * std::abs(initial_loss)) {
        row.divergent = true;
        break;
      }

      if (j >= window_start) {
        GradientEstimate truth = grad_implicit(pb, net, batch, opt);
        double g = norm2(truth.direction);
        window_sum += g * g;
        ++window_count;
      }

      if (!sgd_step(net, jfb.direction, alpha)) {
        row.divergent = true;
        break;
      }
    }

    row.plateau = window_count > 0 ? window_sum / static_cast<double>(window_count)
                                   : nan_value();
    rows.push_back(row);
  }

  net.set_params(theta0);
  return rows;
}

}  // namespace jfbctrl
