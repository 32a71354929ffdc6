#include "jfbctrl/jfbctrl.h"

#include <exception>
#include <string>

#include "config.hpp"
#include "errors.hpp"
#include "experiments.hpp"

struct jfbctrl_experiment {
  jfbctrl::ExperimentConfig cfg;
  // Buffers backing the const char* getters. One per getter so a caller can
  // hold both at once.
  std::string text;
  std::string hash;
};

namespace {

thread_local std::string g_last_error;

int status_of(const jfbctrl::Error& e) {
  return e.code() == jfbctrl::ErrorCode::Config ? JFBCTRL_ERR_CONFIG : JFBCTRL_ERR_RUNTIME;
}

int fail(int status, const std::string& message) {
  g_last_error = message;
  return status;
}

}  // namespace

extern "C" {

jfbctrl_experiment* jfbctrl_open(const char* config_path) {
  if (config_path == nullptr) {
    g_last_error = "config path is null";
    return nullptr;
  }
  try {
    auto* exp = new jfbctrl_experiment;
    exp->cfg = jfbctrl::load_config_file(config_path);
    exp->cfg.validate();
    g_last_error.clear();
    return exp;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return nullptr;
  }
}

void jfbctrl_close(jfbctrl_experiment* exp) { delete exp; }

int jfbctrl_set_seed(jfbctrl_experiment* exp, unsigned long long seed) {
  if (exp == nullptr) return fail(JFBCTRL_ERR_CONFIG, "null experiment handle");
  exp->cfg.problem.sample_seed = static_cast<std::size_t>(seed);
  g_last_error.clear();
  return JFBCTRL_OK;
}

int jfbctrl_set_audit_every(jfbctrl_experiment* exp, size_t every) {
  if (exp == nullptr) return fail(JFBCTRL_ERR_CONFIG, "null experiment handle");
  exp->cfg.train.audit_every = every;
  g_last_error.clear();
  return JFBCTRL_OK;
}

int jfbctrl_set_output_dir(jfbctrl_experiment* exp, const char* dir) {
  if (exp == nullptr) return fail(JFBCTRL_ERR_CONFIG, "null experiment handle");
  if (dir == nullptr || *dir == '\0')
    return fail(JFBCTRL_ERR_CONFIG, "output directory override is empty");
  exp->cfg.output.directory = dir;
  g_last_error.clear();
  return JFBCTRL_OK;
}

int jfbctrl_run(jfbctrl_experiment* exp, const char* command) {
  if (exp == nullptr) return fail(JFBCTRL_ERR_CONFIG, "null experiment handle");
  if (command == nullptr) return fail(JFBCTRL_ERR_CONFIG, "command is null");
  const std::string cmd = command;
  try {
    if (cmd == "train")
      jfbctrl::run_train(exp->cfg);
    else if (cmd == "compare")
      jfbctrl::run_compare(exp->cfg);
    else if (cmd == "diagnose")
      jfbctrl::run_diagnose(exp->cfg);
    else if (cmd == "oracle")
      jfbctrl::run_oracle(exp->cfg);
    else if (cmd == "neighborhood")
      jfbctrl::run_neighborhood(exp->cfg);
    else
      return fail(JFBCTRL_ERR_CONFIG, "unknown command '" + cmd + "'");
    g_last_error.clear();
    return JFBCTRL_OK;
  } catch (const jfbctrl::Error& e) {
    return fail(status_of(e), e.what());
  } catch (const std::exception& e) {
    return fail(JFBCTRL_ERR_RUNTIME, e.what());
  }
}

const char* jfbctrl_config_text(jfbctrl_experiment* exp) {
  if (exp == nullptr) return "";
  exp->text = jfbctrl::serialize_config(exp->cfg);
  return exp->text.c_str();
}

const char* jfbctrl_config_hash_hex(jfbctrl_experiment* exp) {
  if (exp == nullptr) return "";
  exp->hash = jfbctrl::config_hash(exp->cfg);
  return exp->hash.c_str();
}

const char* jfbctrl_last_error(void) { return g_last_error.c_str(); }

int jfbctrl_format_version(void) { return jfbctrl::kArtifactFormatVersion; }

}  // extern "C"
