#include "experiments.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "diagnostics.hpp"
#include "errors.hpp"
#include "rollout.hpp"

namespace jfbctrl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// %.17g round-trips doubles exactly, keeping reruns byte-identical
std::string fmt(double v) {
  if (std::isnan(v)) return "";  // empty cell marks an undefined value
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

std::string header_block(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "# format_version = " << kArtifactFormatVersion << "\n"
      << "# config_hash = " << config_hash(cfg) << "\n"
      << "# seed = " << cfg.problem.sample_seed << "\n";
  return out.str();
}

fs::path ensure_output_dir(const ExperimentConfig& cfg) {
  fs::path dir(cfg.output.directory);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string());
  return dir;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw IoError("cannot write " + path.string());
}

json manifest_skeleton(const ExperimentConfig& cfg, const std::string& command) {
  json m;
  m["format_version"] = kArtifactFormatVersion;
  m["config_hash"] = config_hash(cfg);
  m["seed"] = cfg.problem.sample_seed;
  m["command"] = command;
  m["artifacts"] = json::array();
  return m;
}

void write_manifest(const ExperimentConfig& cfg, const fs::path& dir, json m) {
  if (!cfg.wants_format("json")) return;
  m["artifacts"].push_back("manifest.json");
  write_file(dir / "manifest.json", m.dump(2) + "\n");
}

void require_euler_grid(const ExperimentConfig& cfg, const char* command) {
  if (cfg.grid.integrator != "euler")
    throw ConfigError(std::string("grid.integrator must be euler for ") + command +
                      "; rk4 is evaluation-only");
}

std::array<double, 3> to_array3(const std::vector<double>& v) {
  return {v[0], v[1], v[2]};
}

std::string history_csv(const ExperimentConfig& cfg, const TrainHistory& hist) {
  std::ostringstream out;
  out << header_block(cfg);
  out << "j,alpha,loss,grad_norm_jfb,grad_norm_true,cesaro_avg,lr_events\n";
  for (const TrainRecord& r : hist.records) {
    out << r.j << "," << fmt(r.alpha) << "," << fmt(r.loss) << ","
        << fmt(r.grad_norm_jfb) << "," << fmt(r.grad_norm_true) << ","
        << fmt(r.cesaro_avg) << "," << r.lr_events << "\n";
  }
  return out.str();
}

std::string diagnostics_csv(const ExperimentConfig& cfg, const TrainHistory& hist) {
  std::ostringstream out;
  out << header_block(cfg);
  out << "epoch,gamma_hat,sigma_min_M,sigma_max_M,kappa_hat,angle,epsilon_v_hat,"
         "delta_var_hat,B_max_hat,nonconverged_rate,pass_A1,pass_A3,pass_A4\n";
  for (const auto& [j, rep] : hist.audits) {
    out << j << "," << fmt(rep.gamma_hat) << "," << fmt(rep.sigma_min_m) << ","
        << fmt(rep.sigma_max_m) << "," << fmt(rep.kappa_hat) << ","
        << fmt(rep.angle) << "," << fmt(rep.epsilon_v_hat) << ","
        << fmt(rep.delta_var_hat) << "," << fmt(rep.b_max_hat) << ","
        << fmt(rep.nonconverged_rate) << "," << (rep.pass_a1 ? 1 : 0) << ","
        << (rep.pass_a3 ? 1 : 0) << "," << (rep.pass_a4 ? 1 : 0) << "\n";
  }
  return out.str();
}

std::string epochs_csv(const ExperimentConfig& cfg, const TrainHistory& hist) {
  std::ostringstream out;
  out << header_block(cfg);
  out << "epoch,mean_loss,work_units_cum,peak_nodes,wall_ms\n";
  for (const EpochSummary& e : hist.epochs) {
    out << e.epoch << "," << fmt(e.mean_loss) << "," << e.work_units_cum << ","
        << e.peak_nodes << "," << fmt(e.wall_ms) << "\n";
  }
  return out.str();
}

// One tracked rollout plus its adjoint sweep from a held-out state; the
// terminal row carries state and adjoint only.
std::string trajectory_csv(const ExperimentConfig& cfg, const ControlProblem& pb,
                           const ValueFunction& net) {
  GradOptions opt = build_grad_options(cfg);
  std::vector<double> x =
      pb.sample_initial_state(cfg.oracle.eval_seed, 0);

  Tape tape;
  RolloutConfig rc;
  rc.grid = opt.grid;
  rc.op = opt.op;
  rc.track = TrackMode::Jfb;
  rc.detach_z = opt.detach_z;
  rc.node_budget = opt.node_budget;
  Trajectory traj = rollout(tape, pb, net, x, rc);
  AdjointResult adj = discrete_adjoint(tape, traj);

  const std::size_t n = pb.state_dim();
  const std::size_t m = pb.control_dim();
  std::ostringstream out;
  out << header_block(cfg);
  out << "k,t";
  for (std::size_t i = 0; i < n; ++i) out << ",z" << i;
  for (std::size_t i = 0; i < m; ++i) out << ",u" << i;
  out << ",L";
  for (std::size_t i = 0; i < n; ++i) out << ",p" << i;
  out << "\n";

  for (std::size_t k = 0; k <= opt.grid.steps; ++k) {
    out << k << "," << fmt(opt.grid.time(k));
    for (std::size_t i = 0; i < n; ++i) out << "," << fmt(traj.z[k][i]);
    const bool interior = k < opt.grid.steps;
    for (std::size_t i = 0; i < m; ++i)
      out << "," << (interior ? fmt(traj.u[k][i]) : "");
    out << "," << (interior ? fmt(traj.running[k]) : "");
    for (std::size_t i = 0; i < n; ++i) out << "," << fmt(adj.p[k][i]);
    out << "\n";
  }
  return out.str();
}

json report_json(const DiagnosticsReport& rep) {
  json r;
  r["gamma_hat"] = rep.gamma_hat;
  r["sigma_min_M"] = rep.sigma_min_m;
  r["sigma_max_M"] = rep.sigma_max_m;
  r["beta_hat"] = rep.beta_hat;
  r["kappa_hat"] = rep.kappa_hat;
  r["lambda_plus"] = rep.lambda_plus;
  r["lambda_minus"] = rep.lambda_minus;
  r["angle"] = rep.angle;
  r["inner"] = rep.inner;
  r["epsilon_v_hat"] = rep.epsilon_v_hat;
  r["delta_var_hat"] = rep.delta_var_hat;
  r["delta_var_lemma"] = rep.delta_var_lemma;
  r["delta_theta_sq_hat"] = rep.delta_theta_sq_hat;
  r["B_max_hat"] = rep.b_max_hat;
  r["vw_inner_min"] = rep.vw_inner_min;
  r["jfb_grad_norm"] = rep.jfb_grad_norm;
  r["true_grad_norm"] = rep.true_grad_norm;
  r["second_moment_hat"] = rep.second_moment_hat;
  r["nonconverged_rate"] = rep.nonconverged_rate;
  r["true_grad_failures"] = rep.true_grad_failures;
  r["pass_A1"] = rep.pass_a1;
  r["rank_full"] = rep.rank_full;
  r["pass_A3"] = rep.pass_a3;
  r["pass_A4"] = rep.pass_a4;
  r["alignment_defined"] = rep.alignment_defined;
  r["variance_defined"] = rep.variance_defined;
  r["true_grad_available"] = rep.true_grad_available;
  return r;
}

double untracked_objective(const ControlProblem& pb, const ValueFunction& net,
                           const std::vector<double>& x, const GradOptions& opt,
                           bool rk4) {
  Tape tape;
  RolloutConfig rc;
  rc.grid = opt.grid;
  rc.op = opt.op;
  rc.rk4 = rk4;
  return rollout(tape, pb, net, x, rc).objective;
}

}  // namespace

std::unique_ptr<ControlProblem> build_problem(const ExperimentConfig& cfg) {
  cfg.validate();
  const ProblemBlock& p = cfg.problem;
  if (p.name == "lqr") return std::make_unique<LqrProblem>(build_lqr(cfg));
  if (p.name == "quadrotor") {
    QuadrotorParams prm;
    prm.mass = p.quad_mass;
    prm.gravity = p.quad_gravity;
    prm.inertia = to_array3(p.quad_inertia);
    prm.c_u = p.quad_c_u;
    prm.c_e = p.quad_c_e;
    prm.kappa_e = p.quad_kappa_e;
    prm.c_z = p.quad_c_z;
    prm.c_t = p.quad_c_t;
    prm.target = to_array3(p.quad_target);
    prm.interaction = p.quad_interaction;
    prm.c_int = p.quad_c_int;
    prm.sigma_int = p.quad_sigma_int;
    return std::make_unique<QuadrotorProblem>(prm, p.agents);
  }
  if (p.name == "bicycle") {
    BicycleParams prm;
    prm.wheelbase = p.bike_wheelbase;
    prm.c_u = p.bike_c_u;
    prm.c_z = p.bike_c_z;
    prm.c_t = p.bike_c_t;
    prm.target = {p.bike_target[0], p.bike_target[1]};
    prm.steer_limit = p.bike_steer_limit;
    prm.interaction = p.bike_interaction;
    prm.c_int = p.bike_c_int;
    prm.sigma_int = p.bike_sigma_int;
    return std::make_unique<BicycleProblem>(prm, p.agents);
  }
  ConsumptionParams prm;
  prm.r = p.cons_rate;
  prm.a = p.cons_habit_a;
  prm.b = p.cons_habit_b;
  prm.eta = p.cons_eta;
  prm.theta = p.cons_theta;
  prm.delta = p.cons_discount;
  prm.gamma = p.cons_gamma;
  prm.eps_term = p.cons_eps_term;
  prm.m = p.cons_goods;
  return std::make_unique<ConsumptionProblem>(prm, p.agents);
}

LqrProblem build_lqr(const ExperimentConfig& cfg) {
  if (cfg.problem.name != "lqr")
    throw ConfigError("problem.name must be lqr for this command");
  const ProblemBlock& p = cfg.problem;
  LqrParams prm;
  prm.A = Tensor::from({1, 1}, {p.lqr_a});
  prm.B = Tensor::from({1, 1}, {p.lqr_b});
  prm.Q = Tensor::from({1, 1}, {p.lqr_q});
  prm.R = Tensor::from({1, 1}, {p.lqr_r});
  prm.QT = Tensor::from({1, 1}, {p.lqr_qt});
  return LqrProblem(prm, p.agents);
}

MlpValueNetwork build_network(const ExperimentConfig& cfg, const ControlProblem& pb) {
  std::vector<std::size_t> widths;
  widths.push_back(1 + pb.state_dim());
  widths.insert(widths.end(), cfg.net.hidden.begin(), cfg.net.hidden.end());
  widths.push_back(1);

  if (!cfg.net.checkpoint.empty()) {
    MlpValueNetwork net = MlpValueNetwork::load(cfg.net.checkpoint);
    if (net.widths() != widths) {
      std::ostringstream msg;
      msg << "net.checkpoint " << cfg.net.checkpoint
          << " does not match the configured shape (stored state dim "
          << net.state_dim() << ", configured " << pb.state_dim() << ")";
      throw ConfigError(msg.str());
    }
    return net;
  }
  MlpValueNetwork::Init init = cfg.net.init == "zero" ? MlpValueNetwork::Init::Zero
                                                      : MlpValueNetwork::Init::Uniform;
  return MlpValueNetwork(widths, cfg.net.init_seed, init);
}

GradOptions build_grad_options(const ExperimentConfig& cfg) {
  GradOptions opt;
  opt.grid = Grid{cfg.grid.steps, cfg.grid.horizon};
  opt.op.eta = cfg.op.eta;
  opt.op.tol = cfg.op.tol;
  opt.op.max_iter = cfg.op.max_iter;
  opt.op.warm_start = cfg.op.warm_start;
  opt.detach_z = cfg.op.detach_z;
  opt.node_budget = cfg.train.node_budget;
  return opt;
}

TrainOptions build_train_options(const ExperimentConfig& cfg) {
  TrainOptions opt;
  opt.grad = build_grad_options(cfg);
  if (cfg.train.schedule == "diminishing")
    opt.schedule = Schedule::diminishing(cfg.train.alpha0, cfg.train.power);
  else if (cfg.train.schedule == "constant")
    opt.schedule = Schedule::constant(cfg.train.alpha0);
  else
    opt.schedule = Schedule::plateau(cfg.train.alpha0, cfg.train.factor,
                                     static_cast<int>(cfg.train.patience));
  opt.backend = backend_from_name(cfg.train.backend);
  opt.batch_size = cfg.train.batch;
  opt.iters_per_epoch = cfg.train.iters_per_epoch;
  opt.epochs = cfg.train.epochs;
  opt.seed = cfg.problem.sample_seed;
  opt.audit_every = cfg.train.audit_every;
  opt.audit.seed = cfg.problem.sample_seed;
  opt.checkpoint_every = cfg.train.checkpoint_every;
  return opt;
}

void run_train(const ExperimentConfig& cfg) {
  cfg.validate();
  require_euler_grid(cfg, "train");
  const fs::path dir = ensure_output_dir(cfg);

  std::unique_ptr<ControlProblem> pb = build_problem(cfg);
  MlpValueNetwork net = build_network(cfg, *pb);
  TrainOptions opt = build_train_options(cfg);

  json manifest = manifest_skeleton(cfg, "train");
  if (opt.checkpoint_every > 0) {
    opt.on_checkpoint = [&](std::size_t epoch) {
      std::ostringstream name;
      name << "checkpoint_epoch_" << epoch << ".bin";
      net.save((dir / name.str()).string());
      manifest["artifacts"].push_back(name.str());
    };
  }

  TrainHistory hist = train(*pb, net, opt);

  net.save((dir / "net_final.bin").string());
  manifest["artifacts"].push_back("net_final.bin");

  if (cfg.wants_format("csv")) {
    write_file(dir / "history.csv", history_csv(cfg, hist));
    manifest["artifacts"].push_back("history.csv");
    write_file(dir / "epochs.csv", epochs_csv(cfg, hist));
    manifest["artifacts"].push_back("epochs.csv");
    if (!hist.audits.empty()) {
      write_file(dir / "diagnostics.csv", diagnostics_csv(cfg, hist));
      manifest["artifacts"].push_back("diagnostics.csv");
    }
    write_file(dir / "trajectory.csv", trajectory_csv(cfg, *pb, net));
    manifest["artifacts"].push_back("trajectory.csv");
  }

  json summary;
  summary["final_loss"] = hist.final_loss;
  summary["cesaro_avg"] = hist.cesaro_avg;
  summary["a_k"] = hist.a_k;
  summary["total_work_units"] = hist.total_work_units;
  summary["peak_nodes"] = hist.peak_nodes;
  summary["steps_skipped"] = hist.steps_skipped;
  summary["incidents"] = hist.incidents;
  manifest["summary"] = summary;
  write_manifest(cfg, dir, std::move(manifest));
}

void run_compare(const ExperimentConfig& cfg) {
  cfg.validate();
  require_euler_grid(cfg, "compare");
  const fs::path dir = ensure_output_dir(cfg);

  std::unique_ptr<ControlProblem> pb = build_problem(cfg);

  std::ostringstream rows;
  json summary = json::object();
  for (const std::string& name : cfg.compare.backends) {
    // every backend starts from the same parameters and sample stream
    MlpValueNetwork net = build_network(cfg, *pb);
    TrainOptions opt = build_train_options(cfg);
    opt.backend = backend_from_name(name);
    opt.audit_every = 0;
    opt.checkpoint_every = 0;

    try {
      TrainHistory hist = train(*pb, net, opt);
      for (const EpochSummary& e : hist.epochs) {
        rows << e.epoch << "," << name << "," << fmt(e.mean_loss) << ","
             << e.work_units_cum << "," << e.peak_nodes << ","
             << fmt(e.wall_ms) << ",ok\n";
      }
      json s;
      s["final_loss"] = hist.final_loss;
      s["total_work_units"] = hist.total_work_units;
      s["peak_nodes"] = hist.peak_nodes;
      summary[name] = s;
    } catch (const RuntimeError& e) {
      if (std::string(e.what()).find("node budget") == std::string::npos) throw;
      rows << "," << name << ",,,,,infeasible\n";
      summary[name] = json{{"infeasible", true}};
    }
  }

  json manifest = manifest_skeleton(cfg, "compare");
  if (cfg.wants_format("csv")) {
    std::ostringstream out;
    out << header_block(cfg);
    out << "epoch,backend,loss,work_units_cum,peak_nodes,wall_ms,status\n";
    out << rows.str();
    write_file(dir / "compare.csv", out.str());
    manifest["artifacts"].push_back("compare.csv");
  }
  manifest["summary"] = summary;
  write_manifest(cfg, dir, std::move(manifest));
}

void run_diagnose(const ExperimentConfig& cfg) {
  cfg.validate();
  require_euler_grid(cfg, "diagnose");
  if (!cfg.wants_format("json"))
    throw ConfigError("output.formats must include json for diagnose");
  const fs::path dir = ensure_output_dir(cfg);

  std::unique_ptr<ControlProblem> pb = build_problem(cfg);
  MlpValueNetwork net = build_network(cfg, *pb);
  GradOptions opt = build_grad_options(cfg);

  std::vector<std::vector<double>> batch;
  for (std::size_t i = 0; i < cfg.train.batch; ++i)
    batch.push_back(pb->sample_initial_state(cfg.oracle.eval_seed, i));

  AuditOptions audit;
  audit.seed = cfg.problem.sample_seed;
  DiagnosticsReport rep = audit_batch(*pb, net, batch, opt, audit);

  json doc;
  doc["format_version"] = kArtifactFormatVersion;
  doc["config_hash"] = config_hash(cfg);
  doc["seed"] = cfg.problem.sample_seed;
  doc["command"] = "diagnose";
  doc["report"] = report_json(rep);
  write_file(dir / "diagnostics.json", doc.dump(2) + "\n");

  json manifest = manifest_skeleton(cfg, "diagnose");
  manifest["artifacts"].push_back("diagnostics.json");
  manifest["summary"] = json{{"pass_A1", rep.pass_a1},
                             {"pass_A3", rep.pass_a3},
                             {"pass_A4", rep.pass_a4},
                             {"gamma_hat", rep.gamma_hat}};
  write_manifest(cfg, dir, std::move(manifest));
}

void run_oracle(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path dir = ensure_output_dir(cfg);

  LqrProblem pb = build_lqr(cfg);
  RiccatiSolution ric = lqr_riccati(pb, cfg.grid.steps, cfg.grid.horizon);
  GradOptions opt = build_grad_options(cfg);
  const bool rk4 = cfg.grid.integrator == "rk4";

  std::unique_ptr<ValueFunction> value;
  if (cfg.oracle.use_riccati_value) {
    value = std::make_unique<QuadraticValueFunction>(ric.times, ric.p);
  } else {
    value = std::make_unique<MlpValueNetwork>(build_network(cfg, pb));
  }

  const std::size_t n = pb.state_dim();
  std::ostringstream rows;
  double net_sum = 0.0, opt_sum = 0.0, gap_max = 0.0;
  for (std::size_t i = 0; i < cfg.oracle.held_out; ++i) {
    std::vector<double> x = pb.sample_initial_state(cfg.oracle.eval_seed, i);
    const double j_net = untracked_objective(pb, *value, x, opt, rk4);
    const double j_opt = ric.optimal_cost(x);
    const double gap = (j_net - j_opt) / std::max(std::abs(j_opt), 1e-12);
    net_sum += j_net;
    opt_sum += j_opt;
    gap_max = std::max(gap_max, gap);
    rows << i;
    for (std::size_t d = 0; d < n; ++d) rows << "," << fmt(x[d]);
    rows << "," << fmt(j_net) << "," << fmt(j_opt) << "," << fmt(gap) << "\n";
  }
  // Headline number compares set-level objectives. Per-state gaps are in the
  // table but do not average well: the denominator vanishes near the origin.
  const double inv = 1.0 / static_cast<double>(cfg.oracle.held_out);
  const double gap_agg =
      (net_sum - opt_sum) / std::max(std::abs(opt_sum), 1e-12);

  json manifest = manifest_skeleton(cfg, "oracle");
  if (cfg.wants_format("csv")) {
    std::ostringstream out;
    out << header_block(cfg);
    out << "i";
    for (std::size_t d = 0; d < n; ++d) out << ",x" << d;
    out << ",objective,optimal,rel_gap\n";
    out << rows.str();
    write_file(dir / "oracle.csv", out.str());
    manifest["artifacts"].push_back("oracle.csv");
  }
  manifest["summary"] = json{{"held_out", cfg.oracle.held_out},
                             {"objective_mean", net_sum * inv},
                             {"optimal_mean", opt_sum * inv},
                             {"rel_gap", gap_agg},
                             {"max_state_rel_gap", gap_max}};
  write_manifest(cfg, dir, std::move(manifest));
}

void run_neighborhood(const ExperimentConfig& cfg) {
  cfg.validate();
  require_euler_grid(cfg, "neighborhood");
  const fs::path dir = ensure_output_dir(cfg);

  std::unique_ptr<ControlProblem> pb = build_problem(cfg);
  MlpValueNetwork net = build_network(cfg, *pb);
  GradOptions opt = build_grad_options(cfg);

  std::vector<NeighborhoodRow> table = neighborhood_experiment(
      *pb, net, cfg.neighborhood.alphas, cfg.neighborhood.iters,
      cfg.train.batch, cfg.problem.sample_seed, opt);

  json manifest = manifest_skeleton(cfg, "neighborhood");
  if (cfg.wants_format("csv")) {
    std::ostringstream out;
    out << header_block(cfg);
    out << "alpha,plateau,final_loss,divergent\n";
    for (const NeighborhoodRow& row : table) {
      out << fmt(row.alpha) << "," << fmt(row.plateau) << ","
          << fmt(row.final_loss) << "," << (row.divergent ? 1 : 0) << "\n";
    }
    write_file(dir / "neighborhood.csv", out.str());
    manifest["artifacts"].push_back("neighborhood.csv");
  }
  json rows_json = json::array();
  for (const NeighborhoodRow& row : table)
    rows_json.push_back(json{{"alpha", row.alpha},
                             {"plateau", row.plateau},
                             {"final_loss", row.final_loss},
                             {"divergent", row.divergent}});
  manifest["summary"] = json{{"rows", rows_json}};
  write_manifest(cfg, dir, std::move(manifest));
}

}  // namespace jfbctrl
