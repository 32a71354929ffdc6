// Exercises the C surface the way an embedding application would: only the
// installed header and the shared library, no core internals.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "jfbctrl/jfbctrl.h"

namespace fs = std::filesystem;

namespace {

std::string write_config(const std::string& name, const std::string& body) {
  fs::create_directories("capi_out");
  const std::string path = "capi_out/" + name;
  std::ofstream out(path);
  out << body;
  return path;
}

const char* kTinyLqr = R"(
[problem]
name = "lqr"
sample_seed = 3
[net]
hidden = [4]
[operator]
eta = 0.5
tol = 1e-10
max_iter = 50
[grid]
steps = 8
[train]
alpha0 = 0.1
batch = 2
iters_per_epoch = 3
epochs = 2
[oracle]
held_out = 5
[neighborhood]
alphas = [0.05, 0.02]
iters = 10
[output]
directory = "capi_out/run"
)";

}  // namespace

TEST_CASE("opening a missing or invalid config fails with a message") {
  jfbctrl_experiment* exp = jfbctrl_open("capi_out/does_not_exist.toml");
  CHECK(exp == nullptr);
  CHECK(std::strlen(jfbctrl_last_error()) > 0);

  const std::string bad = write_config("bad_key.toml",
                                       "[problem]\nnmae = \"lqr\"\n");
  exp = jfbctrl_open(bad.c_str());
  CHECK(exp == nullptr);
  CHECK(std::string(jfbctrl_last_error()).find("problem.nmae") != std::string::npos);

  CHECK(jfbctrl_open(nullptr) == nullptr);
}

TEST_CASE("handles expose the effective config and its hash") {
  const std::string path = write_config("tiny.toml", kTinyLqr);
  jfbctrl_experiment* exp = jfbctrl_open(path.c_str());
  REQUIRE(exp != nullptr);

  const std::string hash0 = jfbctrl_config_hash_hex(exp);
  CHECK(hash0.size() == 16);
  for (char c : hash0) CHECK(std::isxdigit(static_cast<unsigned char>(c)));

  std::string text = jfbctrl_config_text(exp);
  CHECK(text.find("name = \"lqr\"") != std::string::npos);
  CHECK(text.find("sample_seed = 3") != std::string::npos);

  // overrides land in the serialized config, and therefore in the hash
  CHECK(jfbctrl_set_seed(exp, 99) == JFBCTRL_OK);
  CHECK(jfbctrl_set_audit_every(exp, 2) == JFBCTRL_OK);
  CHECK(jfbctrl_set_output_dir(exp, "capi_out/override") == JFBCTRL_OK);
  text = jfbctrl_config_text(exp);
  CHECK(text.find("sample_seed = 99") != std::string::npos);
  CHECK(text.find("audit_every = 2") != std::string::npos);
  CHECK(text.find("capi_out/override") != std::string::npos);
  CHECK(std::string(jfbctrl_config_hash_hex(exp)) != hash0);

  CHECK(jfbctrl_set_output_dir(exp, "") == JFBCTRL_ERR_CONFIG);
  jfbctrl_close(exp);

  CHECK(jfbctrl_format_version() >= 1);
}

TEST_CASE("null handles are rejected, not dereferenced") {
  CHECK(jfbctrl_set_seed(nullptr, 1) == JFBCTRL_ERR_CONFIG);
  CHECK(jfbctrl_set_audit_every(nullptr, 1) == JFBCTRL_ERR_CONFIG);
  CHECK(jfbctrl_set_output_dir(nullptr, "x") == JFBCTRL_ERR_CONFIG);
  CHECK(jfbctrl_run(nullptr, "train") == JFBCTRL_ERR_CONFIG);
  CHECK(std::string(jfbctrl_config_text(nullptr)).empty());
  CHECK(std::string(jfbctrl_config_hash_hex(nullptr)).empty());
  jfbctrl_close(nullptr);  // must be a no-op
}

TEST_CASE("run dispatches commands and maps error classes to status codes") {
  const std::string path = write_config("tiny_run.toml", kTinyLqr);
  jfbctrl_experiment* exp = jfbctrl_open(path.c_str());
  REQUIRE(exp != nullptr);
  CHECK(jfbctrl_set_output_dir(exp, "capi_out/dispatch") == JFBCTRL_OK);

  CHECK(jfbctrl_run(exp, "bogus") == JFBCTRL_ERR_CONFIG);
  CHECK(std::string(jfbctrl_last_error()).find("bogus") != std::string::npos);
  CHECK(jfbctrl_run(exp, nullptr) == JFBCTRL_ERR_CONFIG);

  CHECK(jfbctrl_run(exp, "train") == JFBCTRL_OK);
  CHECK(std::strlen(jfbctrl_last_error()) == 0);
  CHECK(fs::exists("capi_out/dispatch/history.csv"));
  CHECK(fs::exists("capi_out/dispatch/manifest.json"));

  CHECK(jfbctrl_run(exp, "oracle") == JFBCTRL_OK);
  CHECK(fs::exists("capi_out/dispatch/oracle.csv"));

  CHECK(jfbctrl_run(exp, "neighborhood") == JFBCTRL_OK);
  CHECK(fs::exists("capi_out/dispatch/neighborhood.csv"));

  CHECK(jfbctrl_run(exp, "diagnose") == JFBCTRL_OK);
  CHECK(fs::exists("capi_out/dispatch/diagnostics.json"));

  CHECK(jfbctrl_run(exp, "compare") == JFBCTRL_OK);
  CHECK(fs::exists("capi_out/dispatch/compare.csv"));
  jfbctrl_close(exp);
}

TEST_CASE("config-class failures return 2 and runtime failures return 1") {
  // rk4 is evaluation-only; asking train to use it is a config error
  std::string body = kTinyLqr;
  body.insert(body.find("[train]"), "integrator = \"rk4\"\n");
  const std::string rk4 = write_config("rk4.toml", body);
  jfbctrl_experiment* exp = jfbctrl_open(rk4.c_str());
  REQUIRE(exp != nullptr);
  CHECK(jfbctrl_run(exp, "train") == JFBCTRL_ERR_CONFIG);
  CHECK(std::string(jfbctrl_last_error()).find("integrator") != std::string::npos);
  jfbctrl_close(exp);

  // an expansive operator makes warm-started solves blow up mid-rollout,
  // which is a runtime failure, not a config one
  std::string hot = kTinyLqr;
  hot.replace(hot.find("eta = 0.5"), 9, "eta = 3.0");
  hot.replace(hot.find("max_iter = 50"), 13, "max_iter = 400");
  const std::string diverging = write_config("diverging.toml", hot);
  exp = jfbctrl_open(diverging.c_str());
  REQUIRE(exp != nullptr);
  CHECK(jfbctrl_set_output_dir(exp, "capi_out/diverge") == JFBCTRL_OK);
  CHECK(jfbctrl_run(exp, "train") == JFBCTRL_ERR_RUNTIME);
  CHECK(std::string(jfbctrl_last_error()).find("training iteration") != std::string::npos);
  jfbctrl_close(exp);
}
