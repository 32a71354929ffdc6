#include "config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "errors.hpp"

namespace jfbctrl {

namespace {

struct RawValue {
  enum class Kind { Bool, Int, Float, Str, Array };
  Kind kind = Kind::Bool;
  bool b = false;
  long long i = 0;
  double f = 0.0;
  std::string s;
  std::vector<RawValue> items;
  int line = 0;
};

using RawSection = std::map<std::string, RawValue>;
using RawTree = std::map<std::string, RawSection>;

[[noreturn]] void fail(const std::string& msg, int line) {
  std::ostringstream out;
  out << msg << " (line " << line << ")";
  throw ConfigError(out.str());
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// cut an inline comment, honoring quoted strings
std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (c == '"' && (i == 0 || s[i - 1] != '\\')) quoted = !quoted;
    else if (c == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
  return true;
}

std::string unescape(const std::string& s, int line) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out.push_back(s[i]);
      continue;
    }
    if (++i >= s.size()) fail("dangling escape in string", line);
    switch (s[i]) {
      case '"': out.push_back('"'); break;
      case '\\': out.push_back('\\'); break;
      case 'n': out.push_back('\n'); break;
      case 't': out.push_back('\t'); break;
      default: fail("unsupported escape in string", line);
    }
  }
  return out;
}

RawValue parse_scalar(const std::string& tok, int line) {
  RawValue v;
  v.line = line;
  if (tok.size() >= 2 && tok.front() == '"' && tok.back() == '"') {
    v.kind = RawValue::Kind::Str;
    v.s = unescape(tok.substr(1, tok.size() - 2), line);
    return v;
  }
  if (tok == "true" || tok == "false") {
    v.kind = RawValue::Kind::Bool;
    v.b = tok == "true";
    return v;
  }
  {
    long long iv = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), iv);
    if (ec == std::errc() && p == tok.data() + tok.size()) {
      v.kind = RawValue::Kind::Int;
      v.i = iv;
      return v;
    }
  }
  {
    char* end = nullptr;
    double fv = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() + tok.size() && !tok.empty() && std::isfinite(fv)) {
      v.kind = RawValue::Kind::Float;
      v.f = fv;
      return v;
    }
  }
  fail("cannot parse value '" + tok + "'", line);
}

// split a bracketed array body at top-level commas; strings may hold commas
std::vector<std::string> split_array(const std::string& body, int line) {
  std::vector<std::string> parts;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < body.size(); ++i) {
    char c = body[i];
    if (c == '"' && (i == 0 || body[i - 1] != '\\')) quoted = !quoted;
    if (c == '[' && !quoted) fail("nested arrays are not supported", line);
    if (c == ',' && !quoted) {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cur = trim(cur);
  if (!cur.empty()) parts.push_back(cur);  // trailing comma tolerated
  for (const std::string& p : parts)
    if (p.empty()) fail("empty array element", line);
  return parts;
}

RawValue parse_value(const std::string& tok, int line) {
  if (!tok.empty() && tok.front() == '[') {
    if (tok.back() != ']') fail("unterminated array", line);
    RawValue v;
    v.kind = RawValue::Kind::Array;
    v.line = line;
    for (const std::string& part : split_array(tok.substr(1, tok.size() - 2), line))
      v.items.push_back(parse_scalar(part, line));
    return v;
  }
  return parse_scalar(tok, line);
}

RawTree parse_tree(const std::string& text) {
  RawTree tree;
  std::istringstream in(text);
  std::string raw_line;
  std::string section;
  int line = 0;
  while (std::getline(in, raw_line)) {
    ++line;
    std::string s = trim(strip_comment(raw_line));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') fail("unterminated section header", line);
      section = trim(s.substr(1, s.size() - 2));
      if (!valid_key(section)) fail("invalid section name '" + section + "'", line);
      continue;
    }
    std::size_t eq = s.find('=');
    if (eq == std::string::npos) fail("expected key = value", line);
    std::string key = trim(s.substr(0, eq));
    std::string val = trim(s.substr(eq + 1));
    if (!valid_key(key)) fail("invalid key '" + key + "'", line);
    if (val.empty()) fail("missing value for key '" + key + "'", line);
    if (section.empty()) fail("key '" + key + "' appears before any section", line);
    RawSection& sec = tree[section];
    if (sec.count(key)) fail("duplicate key " + section + "." + key, line);
    sec[key] = parse_value(val, line);
  }
  return tree;
}

// Pulls typed keys out of the raw tree; whatever remains afterwards is
// unknown and rejected with its full path.
class Binder {
 public:
  explicit Binder(RawTree& tree) : tree_(tree) {}

  void section(const std::string& name) { section_ = name; }

  void key(const std::string& k, bool& out) {
    RawValue* v = find(k);
    if (!v) return;
    if (v->kind != RawValue::Kind::Bool) type_fail(k, "a boolean", v->line);
    out = v->b;
    erase(k);
  }

  void key(const std::string& k, double& out) {
    RawValue* v = find(k);
    if (!v) return;
    out = as_float(*v, k);
    erase(k);
  }

  // covers both counts and seeds; size_t and uint64_t coincide here
  void key(const std::string& k, std::size_t& out) {
    RawValue* v = find(k);
    if (!v) return;
    out = as_index(*v, k);
    erase(k);
  }

  void key(const std::string& k, std::string& out) {
    RawValue* v = find(k);
    if (!v) return;
    if (v->kind != RawValue::Kind::Str) type_fail(k, "a string", v->line);
    out = v->s;
    erase(k);
  }

  void key(const std::string& k, std::vector<double>& out) {
    RawValue* v = find(k);
    if (!v) return;
    if (v->kind != RawValue::Kind::Array) type_fail(k, "an array of numbers", v->line);
    out.clear();
    for (RawValue& item : v->items) out.push_back(as_float(item, k));
    erase(k);
  }

  void key(const std::string& k, std::vector<std::size_t>& out) {
    RawValue* v = find(k);
    if (!v) return;
    if (v->kind != RawValue::Kind::Array) type_fail(k, "an array of integers", v->line);
    out.clear();
    for (RawValue& item : v->items) out.push_back(as_index(item, k));
    erase(k);
  }

  void key(const std::string& k, std::vector<std::string>& out) {
    RawValue* v = find(k);
    if (!v) return;
    if (v->kind != RawValue::Kind::Array) type_fail(k, "an array of strings", v->line);
    out.clear();
    for (RawValue& item : v->items) {
      if (item.kind != RawValue::Kind::Str) type_fail(k, "an array of strings", item.line);
      out.push_back(item.s);
    }
    erase(k);
  }

  void finish() const {
    for (const auto& [sec, keys] : tree_) {
      if (keys.empty()) continue;
      const auto& [k, v] = *keys.begin();
      fail("unknown key " + sec + "." + k, v.line);
    }
  }

 private:
  RawValue* find(const std::string& k) {
    auto sec = tree_.find(section_);
    if (sec == tree_.end()) return nullptr;
    auto it = sec->second.find(k);
    return it == sec->second.end() ? nullptr : &it->second;
  }

  void erase(const std::string& k) { tree_[section_].erase(k); }

  [[noreturn]] void type_fail(const std::string& k, const char* want, int line) const {
    fail("key " + section_ + "." + k + " needs " + want, line);
  }

  double as_float(const RawValue& v, const std::string& k) const {
    if (v.kind == RawValue::Kind::Float) return v.f;
    if (v.kind == RawValue::Kind::Int) return static_cast<double>(v.i);
    type_fail(k, "a number", v.line);
  }

  std::size_t as_index(const RawValue& v, const std::string& k) const {
    if (v.kind != RawValue::Kind::Int || v.i < 0)
      type_fail(k, "a nonnegative integer", v.line);
    return static_cast<std::size_t>(v.i);
  }

  RawTree& tree_;
  std::string section_;
};

void bind_all(Binder& b, ExperimentConfig& c) {
  b.section("problem");
  b.key("name", c.problem.name);
  b.key("agents", c.problem.agents);
  b.key("sample_seed", c.problem.sample_seed);
  b.key("lqr_a", c.problem.lqr_a);
  b.key("lqr_b", c.problem.lqr_b);
  b.key("lqr_q", c.problem.lqr_q);
  b.key("lqr_r", c.problem.lqr_r);
  b.key("lqr_qt", c.problem.lqr_qt);
  b.key("quad_mass", c.problem.quad_mass);
  b.key("quad_gravity", c.problem.quad_gravity);
  b.key("quad_inertia", c.problem.quad_inertia);
  b.key("quad_c_u", c.problem.quad_c_u);
  b.key("quad_c_e", c.problem.quad_c_e);
  b.key("quad_kappa_e", c.problem.quad_kappa_e);
  b.key("quad_c_z", c.problem.quad_c_z);
  b.key("quad_c_t", c.problem.quad_c_t);
  b.key("quad_target", c.problem.quad_target);
  b.key("quad_interaction", c.problem.quad_interaction);
  b.key("quad_c_int", c.problem.quad_c_int);
  b.key("quad_sigma_int", c.problem.quad_sigma_int);
  b.key("bike_wheelbase", c.problem.bike_wheelbase);
  b.key("bike_c_u", c.problem.bike_c_u);
  b.key("bike_c_z", c.problem.bike_c_z);
  b.key("bike_c_t", c.problem.bike_c_t);
  b.key("bike_target", c.problem.bike_target);
  b.key("bike_steer_limit", c.problem.bike_steer_limit);
  b.key("bike_interaction", c.problem.bike_interaction);
  b.key("bike_c_int", c.problem.bike_c_int);
  b.key("bike_sigma_int", c.problem.bike_sigma_int);
  b.key("cons_rate", c.problem.cons_rate);
  b.key("cons_habit_a", c.problem.cons_habit_a);
  b.key("cons_habit_b", c.problem.cons_habit_b);
  b.key("cons_eta", c.problem.cons_eta);
  b.key("cons_theta", c.problem.cons_theta);
  b.key("cons_discount", c.problem.cons_discount);
  b.key("cons_gamma", c.problem.cons_gamma);
  b.key("cons_eps_term", c.problem.cons_eps_term);
  b.key("cons_goods", c.problem.cons_goods);

  b.section("net");
  b.key("hidden", c.net.hidden);
  b.key("init_seed", c.net.init_seed);
  b.key("init", c.net.init);
  b.key("checkpoint", c.net.checkpoint);

  b.section("operator");
  b.key("eta", c.op.eta);
  b.key("tol", c.op.tol);
  b.key("max_iter", c.op.max_iter);
  b.key("warm_start", c.op.warm_start);
  b.key("detach_z", c.op.detach_z);

  b.section("grid");
  b.key("steps", c.grid.steps);
  b.key("horizon", c.grid.horizon);
  b.key("integrator", c.grid.integrator);

  b.section("train");
  b.key("schedule", c.train.schedule);
  b.key("alpha0", c.train.alpha0);
  b.key("power", c.train.power);
  b.key("factor", c.train.factor);
  b.key("patience", c.train.patience);
  b.key("backend", c.train.backend);
  b.key("batch", c.train.batch);
  b.key("iters_per_epoch", c.train.iters_per_epoch);
  b.key("epochs", c.train.epochs);
  b.key("audit_every", c.train.audit_every);
  b.key("checkpoint_every", c.train.checkpoint_every);
  b.key("node_budget", c.train.node_budget);

  b.section("compare");
  b.key("backends", c.compare.backends);

  b.section("neighborhood");
  b.key("alphas", c.neighborhood.alphas);
  b.key("iters", c.neighborhood.iters);

  b.section("oracle");
  b.key("held_out", c.oracle.held_out);
  b.key("eval_seed", c.oracle.eval_seed);
  b.key("use_riccati_value", c.oracle.use_riccati_value);

  b.section("output");
  b.key("directory", c.output.directory);
  b.key("formats", c.output.formats);
}

[[noreturn]] void bad_key(const std::string& path, const std::string& why) {
  throw ConfigError("key " + path + " " + why);
}

bool one_of(const std::string& v, std::initializer_list<const char*> set) {
  for (const char* s : set)
    if (v == s) return true;
  return false;
}

std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

struct Emitter {
  std::ostringstream out;

  void section(const char* name) { out << "[" << name << "]\n"; }
  void gap() { out << "\n"; }
  void kv(const char* k, bool v) { out << k << " = " << (v ? "true" : "false") << "\n"; }
  void kv(const char* k, double v) { out << k << " = " << fmt_double(v) << "\n"; }
  void kv(const char* k, std::size_t v) { out << k << " = " << v << "\n"; }
  void kv(const char* k, const std::string& v) { out << k << " = " << quote(v) << "\n"; }
  void kv(const char* k, const std::vector<double>& v) {
    out << k << " = [";
    for (std::size_t i = 0; i < v.size(); ++i)
      out << (i ? ", " : "") << fmt_double(v[i]);
    out << "]\n";
  }
  void kv(const char* k, const std::vector<std::size_t>& v) {
    out << k << " = [";
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? ", " : "") << v[i];
    out << "]\n";
  }
  void kv(const char* k, const std::vector<std::string>& v) {
    out << k << " = [";
    for (std::size_t i = 0; i < v.size(); ++i)
      out << (i ? ", " : "") << quote(v[i]);
    out << "]\n";
  }
};

}  // namespace

void ExperimentConfig::validate() const {
  if (!one_of(problem.name, {"lqr", "quadrotor", "bicycle", "consumption"}))
    bad_key("problem.name", "must be one of lqr, quadrotor, bicycle, consumption");
  if (problem.agents < 1) bad_key("problem.agents", "must be at least 1");
  if (problem.quad_inertia.size() != 3)
    bad_key("problem.quad_inertia", "needs exactly 3 entries");
  if (problem.quad_target.size() != 3)
    bad_key("problem.quad_target", "needs exactly 3 entries");
  if (problem.bike_target.size() != 2)
    bad_key("problem.bike_target", "needs exactly 2 entries");
  if (problem.cons_goods < 1) bad_key("problem.cons_goods", "must be at least 1");
  if (problem.cons_habit_a.size() != problem.cons_goods)
    bad_key("problem.cons_habit_a", "needs one entry per good");
  if (problem.cons_habit_b.size() != problem.cons_goods)
    bad_key("problem.cons_habit_b", "needs one entry per good");
  if (!(problem.cons_gamma > 0.0) || problem.cons_gamma == 1.0)
    bad_key("problem.cons_gamma", "must be positive and not 1");

  if (net.hidden.empty()) bad_key("net.hidden", "needs at least one layer width");
  for (std::size_t w : net.hidden)
    if (w < 1) bad_key("net.hidden", "widths must be at least 1");
  if (!one_of(net.init, {"uniform", "zero"}))
    bad_key("net.init", "must be uniform or zero");

  if (!(op.eta > 0.0)) bad_key("operator.eta", "must be positive");
  if (!(op.tol >= 0.0)) bad_key("operator.tol", "must be nonnegative");
  if (op.max_iter < 1) bad_key("operator.max_iter", "must be at least 1");

  if (grid.steps < 1) bad_key("grid.steps", "must be at least 1");
  if (!(grid.horizon > 0.0)) bad_key("grid.horizon", "must be positive");
  if (!one_of(grid.integrator, {"euler", "rk4"}))
    bad_key("grid.integrator", "must be euler or rk4");

  if (!one_of(train.schedule, {"diminishing", "constant", "plateau"}))
    bad_key("train.schedule", "must be diminishing, constant, or plateau");
  if (!(train.alpha0 > 0.0)) bad_key("train.alpha0", "must be positive");
  if (train.schedule == "diminishing" && !(train.power > 0.5 && train.power <= 1.0))
    bad_key("train.power", "must lie in (0.5, 1]");
  if (train.schedule == "plateau") {
    if (!(train.factor > 0.0 && train.factor < 1.0))
      bad_key("train.factor", "must lie in (0, 1)");
    if (train.patience < 1) bad_key("train.patience", "must be at least 1");
  }
  if (!one_of(train.backend, {"jfb", "implicit", "unrolled"}))
    bad_key("train.backend", "must be jfb, implicit, or unrolled");
  if (train.batch < 1) bad_key("train.batch", "must be at least 1");
  if (train.iters_per_epoch < 1) bad_key("train.iters_per_epoch", "must be at least 1");
  if (train.epochs < 1) bad_key("train.epochs", "must be at least 1");
  if (train.node_budget < 1) bad_key("train.node_budget", "must be at least 1");

  if (compare.backends.empty()) bad_key("compare.backends", "needs at least one backend");
  for (const std::string& name : compare.backends)
    if (!one_of(name, {"jfb", "implicit", "unrolled"}))
      bad_key("compare.backends", "must list only jfb, implicit, or unrolled");

  if (neighborhood.alphas.empty())
    bad_key("neighborhood.alphas", "needs at least one step size");
  for (std::size_t i = 0; i < neighborhood.alphas.size(); ++i) {
    if (!(neighborhood.alphas[i] > 0.0))
      bad_key("neighborhood.alphas", "step sizes must be positive");
    if (i && neighborhood.alphas[i - 1] <= neighborhood.alphas[i])
      bad_key("neighborhood.alphas", "step sizes must be strictly descending");
  }
  if (neighborhood.iters < 5) bad_key("neighborhood.iters", "must be at least 5");

  if (oracle.held_out < 1) bad_key("oracle.held_out", "must be at least 1");

  if (output.directory.empty()) bad_key("output.directory", "must not be empty");
  if (output.formats.empty()) bad_key("output.formats", "needs at least one format");
  for (const std::string& fmt : output.formats)
    if (!one_of(fmt, {"csv", "json"}))
      bad_key("output.formats", "must list only csv or json");
}

bool ExperimentConfig::wants_format(const std::string& fmt) const {
  return std::find(output.formats.begin(), output.formats.end(), fmt) !=
         output.formats.end();
}

ExperimentConfig parse_config(const std::string& text) {
  RawTree tree = parse_tree(text);
  ExperimentConfig cfg;
  Binder binder(tree);
  bind_all(binder, cfg);
  binder.finish();
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file is unreadable: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  Emitter e;
  e.section("problem");
  e.kv("name", c.problem.name);
  e.kv("agents", c.problem.agents);
  e.kv("sample_seed", c.problem.sample_seed);
  e.kv("lqr_a", c.problem.lqr_a);
  e.kv("lqr_b", c.problem.lqr_b);
  e.kv("lqr_q", c.problem.lqr_q);
  e.kv("lqr_r", c.problem.lqr_r);
  e.kv("lqr_qt", c.problem.lqr_qt);
  e.kv("quad_mass", c.problem.quad_mass);
  e.kv("quad_gravity", c.problem.quad_gravity);
  e.kv("quad_inertia", c.problem.quad_inertia);
  e.kv("quad_c_u", c.problem.quad_c_u);
  e.kv("quad_c_e", c.problem.quad_c_e);
  e.kv("quad_kappa_e", c.problem.quad_kappa_e);
  e.kv("quad_c_z", c.problem.quad_c_z);
  e.kv("quad_c_t", c.problem.quad_c_t);
  e.kv("quad_target", c.problem.quad_target);
  e.kv("quad_interaction", c.problem.quad_interaction);
  e.kv("quad_c_int", c.problem.quad_c_int);
  e.kv("quad_sigma_int", c.problem.quad_sigma_int);
  e.kv("bike_wheelbase", c.problem.bike_wheelbase);
  e.kv("bike_c_u", c.problem.bike_c_u);
  e.kv("bike_c_z", c.problem.bike_c_z);
  e.kv("bike_c_t", c.problem.bike_c_t);
  e.kv("bike_target", c.problem.bike_target);
  e.kv("bike_steer_limit", c.problem.bike_steer_limit);
  e.kv("bike_interaction", c.problem.bike_interaction);
  e.kv("bike_c_int", c.problem.bike_c_int);
  e.kv("bike_sigma_int", c.problem.bike_sigma_int);
  e.kv("cons_rate", c.problem.cons_rate);
  e.kv("cons_habit_a", c.problem.cons_habit_a);
  e.kv("cons_habit_b", c.problem.cons_habit_b);
  e.kv("cons_eta", c.problem.cons_eta);
  e.kv("cons_theta", c.problem.cons_theta);
  e.kv("cons_discount", c.problem.cons_discount);
  e.kv("cons_gamma", c.problem.cons_gamma);
  e.kv("cons_eps_term", c.problem.cons_eps_term);
  e.kv("cons_goods", c.problem.cons_goods);
  e.gap();
  e.section("net");
  e.kv("hidden", c.net.hidden);
  e.kv("init_seed", c.net.init_seed);
  e.kv("init", c.net.init);
  e.kv("checkpoint", c.net.checkpoint);
  e.gap();
  e.section("operator");
  e.kv("eta", c.op.eta);
  e.kv("tol", c.op.tol);
  e.kv("max_iter", c.op.max_iter);
  e.kv("warm_start", c.op.warm_start);
  e.kv("detach_z", c.op.detach_z);
  e.gap();
  e.section("grid");
  e.kv("steps", c.grid.steps);
  e.kv("horizon", c.grid.horizon);
  e.kv("integrator", c.grid.integrator);
  e.gap();
  e.section("train");
  e.kv("schedule", c.train.schedule);
  e.kv("alpha0", c.train.alpha0);
  e.kv("power", c.train.power);
  e.kv("factor", c.train.factor);
  e.kv("patience", c.train.patience);
  e.kv("backend", c.train.backend);
  e.kv("batch", c.train.batch);
  e.kv("iters_per_epoch", c.train.iters_per_epoch);
  e.kv("epochs", c.train.epochs);
  e.kv("audit_every", c.train.audit_every);
  e.kv("checkpoint_every", c.train.checkpoint_every);
  e.kv("node_budget", c.train.node_budget);
  e.gap();
  e.section("compare");
  e.kv("backends", c.compare.backends);
  e.gap();
  e.section("neighborhood");
  e.kv("alphas", c.neighborhood.alphas);
  e.kv("iters", c.neighborhood.iters);
  e.gap();
  e.section("oracle");
  e.kv("held_out", c.oracle.held_out);
  e.kv("eval_seed", c.oracle.eval_seed);
  e.kv("use_riccati_value", c.oracle.use_riccati_value);
  e.gap();
  e.section("output");
  e.kv("directory", c.output.directory);
  e.kv("formats", c.output.formats);
  return e.out.str();
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(serialize_config(cfg))));
  return std::string(buf);
}

}  // namespace jfbctrl
