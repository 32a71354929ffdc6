#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace jfbctrl {

// One experiment per file: a flat TOML-style tree with fixed sections and a
// closed key set. Parsing is strict; a key outside the schema fails with its
// full path so typos cannot silently fall back to defaults. Values absent
// from the file keep the defaults below, and canonical serialization always
// emits every key, so two files that describe the same run hash identically.

struct ProblemBlock {
  std::string name = "lqr";  // lqr | quadrotor | bicycle | consumption
  std::size_t agents = 1;
  std::uint64_t sample_seed = 0;  // initial-state stream

  // scalar linear-quadratic coefficients (per agent)
  double lqr_a = 0.0;
  double lqr_b = 1.0;
  double lqr_q = 0.0;
  double lqr_r = 1.0;
  double lqr_qt = 1.0;

  double quad_mass = 1.0;
  double quad_gravity = 9.81;
  std::vector<double> quad_inertia = {0.02, 0.02, 0.04};
  double quad_c_u = 0.1;
  double quad_c_e = 0.01;
  double quad_kappa_e = 1.0;
  double quad_c_z = 1.0;
  double quad_c_t = 50.0;
  std::vector<double> quad_target = {0.0, 0.0, 0.0};
  bool quad_interaction = false;
  double quad_c_int = 1.0;
  double quad_sigma_int = 1.0;

  double bike_wheelbase = 1.0;
  double bike_c_u = 0.1;
  double bike_c_z = 1.0;
  double bike_c_t = 10.0;
  std::vector<double> bike_target = {0.0, 0.0};
  double bike_steer_limit = 1.2;
  bool bike_interaction = false;
  double bike_c_int = 1.0;
  double bike_sigma_int = 1.0;

  double cons_rate = 0.05;
  std::vector<double> cons_habit_a = {0.1};
  std::vector<double> cons_habit_b = {0.1};
  double cons_eta = 0.8;
  double cons_theta = 1.0;
  double cons_discount = 0.05;
  double cons_gamma = 2.0;
  double cons_eps_term = 0.5;
  std::size_t cons_goods = 1;
};

struct NetBlock {
  std::vector<std::size_t> hidden = {16};  // input/output widths come from the problem
  std::uint64_t init_seed = 0;
  std::string init = "uniform";  // uniform | zero
  std::string checkpoint;        // optional parameter file to load
};

struct OperatorBlock {
  double eta = 0.01;
  double tol = 1e-6;
  std::size_t max_iter = 500;
  bool warm_start = true;
  bool detach_z = false;
};

struct GridBlock {
  std::size_t steps = 50;
  double horizon = 1.0;
  std::string integrator = "euler";  // euler | rk4 (rk4 is evaluation-only)
};

struct TrainBlock {
  std::string schedule = "diminishing";  // diminishing | constant | plateau
  double alpha0 = 0.1;
  double power = 1.0;
  double factor = 0.5;
  std::size_t patience = 10;
  std::string backend = "jfb";  // jfb | implicit | unrolled
  std::size_t batch = 16;
  std::size_t iters_per_epoch = 50;
  std::size_t epochs = 10;
  std::size_t audit_every = 0;
  std::size_t checkpoint_every = 0;
  std::size_t node_budget = 5000000;
};

struct CompareBlock {
  std::vector<std::string> backends = {"jfb", "implicit", "unrolled"};
};

struct NeighborhoodBlock {
  std::vector<double> alphas = {0.01, 0.005, 0.0025};
  std::size_t iters = 2000;
};

struct OracleBlock {
  std::size_t held_out = 100;
  std::uint64_t eval_seed = 9001;  // held-out state stream, distinct from training
  bool use_riccati_value = false;  // evaluate the closed-form value instead of the net
};

struct OutputBlock {
  std::string directory = "out";
  std::vector<std::string> formats = {"csv", "json"};
};

struct ExperimentConfig {
  ProblemBlock problem;
  NetBlock net;
  OperatorBlock op;
  GridBlock grid;
  TrainBlock train;
  CompareBlock compare;
  NeighborhoodBlock neighborhood;
  OracleBlock oracle;
  OutputBlock output;

  // Semantic checks beyond parsing: names resolve, ranges hold. Throws
  // ConfigError naming the offending key path.
  void validate() const;

  bool wants_format(const std::string& fmt) const;
};

// Parse a config from text or file. Syntax errors, unknown keys, duplicate
// keys, and type mismatches all throw ConfigError with the key path and line.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

// Canonical form: fixed section and key order, shortest-round-trip floats.
// parse(serialize(c)) reproduces c exactly.
std::string serialize_config(const ExperimentConfig& cfg);

std::uint64_t fnv1a64(const std::string& bytes);

// 16 hex digits of the FNV-1a hash of the canonical serialization.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace jfbctrl
