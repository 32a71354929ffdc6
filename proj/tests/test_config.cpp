#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>

#include "config.hpp"
#include "errors.hpp"

using namespace jfbctrl;

namespace {

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("empty input yields the documented defaults") {
  ExperimentConfig cfg = parse_config("");
  CHECK(cfg.problem.name == "lqr");
  CHECK(cfg.problem.agents == 1);
  CHECK(cfg.net.hidden == std::vector<std::size_t>{16});
  CHECK(cfg.op.eta == doctest::Approx(0.01));
  CHECK(cfg.op.max_iter == 500);
  CHECK(cfg.op.warm_start);
  CHECK(cfg.grid.steps == 50);
  CHECK(cfg.grid.integrator == "euler");
  CHECK(cfg.train.schedule == "diminishing");
  CHECK(cfg.train.batch == 16);
  CHECK(cfg.output.directory == "out");
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("values parse across every supported type") {
  const std::string text = R"(
# experiment header comment
[problem]
name = "quadrotor"   # inline comment
agents = 2
quad_inertia = [0.01, 0.01, 0.02,]
quad_interaction = true
lqr_a = -0.5

[operator]
eta = 0.5
tol = 1e-8

[net]
hidden = [32, 16]
checkpoint = "runs/a \"b\" c.bin"

[train]
schedule = "constant"
alpha0 = 0.025

[output]
formats = ["csv"]
)";
  ExperimentConfig cfg = parse_config(text);
  CHECK(cfg.problem.name == "quadrotor");
  CHECK(cfg.problem.agents == 2);
  CHECK(cfg.problem.quad_inertia == std::vector<double>{0.01, 0.01, 0.02});
  CHECK(cfg.problem.quad_interaction);
  CHECK(cfg.problem.lqr_a == doctest::Approx(-0.5));
  CHECK(cfg.op.eta == doctest::Approx(0.5));
  CHECK(cfg.op.tol == doctest::Approx(1e-8));
  CHECK(cfg.net.hidden == std::vector<std::size_t>{32, 16});
  CHECK(cfg.net.checkpoint == "runs/a \"b\" c.bin");
  CHECK(cfg.train.schedule == "constant");
  CHECK(cfg.train.alpha0 == doctest::Approx(0.025));
  CHECK(cfg.wants_format("csv"));
  CHECK_FALSE(cfg.wants_format("json"));
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("serialization round-trips to an identical canonical form") {
  ExperimentConfig cfg = parse_config("[problem]\nname = \"bicycle\"\n"
                                      "[operator]\neta = 0.3\ntol = 2.5e-9\n"
                                      "[neighborhood]\nalphas = [0.2, 0.1, 0.05]\n");
  const std::string once = serialize_config(cfg);
  ExperimentConfig back = parse_config(once);
  const std::string twice = serialize_config(back);
  CHECK(once == twice);
  CHECK(config_hash(cfg) == config_hash(back));

  SUBCASE("defaults spelled out explicitly hash the same as omitted ones") {
    ExperimentConfig terse = parse_config("[problem]\nname = \"lqr\"\n");
    ExperimentConfig verbose = parse_config(
        "[problem]\nname = \"lqr\"\nagents = 1\nsample_seed = 0\n"
        "[train]\nbatch = 16\nepochs = 10\n");
    CHECK(config_hash(terse) == config_hash(verbose));
    CHECK(config_hash(terse) == config_hash(parse_config("")));
  }

  SUBCASE("a changed value changes the hash") {
    ExperimentConfig other = cfg;
    other.op.eta = 0.31;
    CHECK(config_hash(cfg) != config_hash(other));
  }
}

TEST_CASE("unknown keys are rejected with their full path") {
  std::string msg = message_of([] { parse_config("[problem]\nnmae = \"lqr\"\n"); });
  CHECK(msg.find("problem.nmae") != std::string::npos);

  msg = message_of([] { parse_config("[problme]\nname = \"lqr\"\n"); });
  CHECK(msg.find("problme.name") != std::string::npos);

  msg = message_of([] { parse_config("[train]\nlearning_rate = 0.1\n"); });
  CHECK(msg.find("train.learning_rate") != std::string::npos);
}

TEST_CASE("syntax and type errors name the offence and line") {
  CHECK_THROWS_AS(parse_config("name = \"lqr\"\n"), ConfigError);  // before any section
  CHECK_THROWS_AS(parse_config("[problem\nname = \"lqr\"\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[problem]\nname\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[problem]\nname =\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[problem]\nname = \"a\"\nname = \"b\"\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[net]\nhidden = [1, [2]]\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[operator]\neta = oops\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[operator]\neta = nan\n"), ConfigError);

  std::string msg = message_of([] { parse_config("[problem]\nagents = \"two\"\n"); });
  CHECK(msg.find("problem.agents") != std::string::npos);
  CHECK(msg.find("line 2") != std::string::npos);

  msg = message_of([] { parse_config("[problem]\nagents = -1\n"); });
  CHECK(msg.find("problem.agents") != std::string::npos);

  msg = message_of([] { parse_config("[operator]\neta = true\n"); });
  CHECK(msg.find("operator.eta") != std::string::npos);
}

TEST_CASE("semantic validation names the offending key") {
  auto reject = [](const std::string& text, const std::string& path) {
    ExperimentConfig cfg = parse_config(text);
    std::string msg = message_of([&] { cfg.validate(); });
    INFO("expected failure for ", path, ", got: ", msg);
    CHECK(msg.find(path) != std::string::npos);
  };

  reject("[problem]\nname = \"pendulum\"\n", "problem.name");
  reject("[problem]\nagents = 0\n", "problem.agents");
  reject("[problem]\nquad_inertia = [1.0, 2.0]\n", "problem.quad_inertia");
  reject("[net]\nhidden = []\n", "net.hidden");
  reject("[net]\ninit = \"xavier\"\n", "net.init");
  reject("[operator]\neta = 0.0\n", "operator.eta");
  reject("[grid]\nintegrator = \"rk2\"\n", "grid.integrator");
  reject("[train]\nschedule = \"cosine\"\n", "train.schedule");
  reject("[train]\npower = 0.5\n", "train.power");
  reject("[train]\nschedule = \"plateau\"\nfactor = 1.0\n", "train.factor");
  reject("[train]\nbackend = \"adjoint\"\n", "train.backend");
  reject("[compare]\nbackends = [\"jfb\", \"ad\"]\n", "compare.backends");
  reject("[neighborhood]\nalphas = [0.1, 0.2]\n", "neighborhood.alphas");
  reject("[neighborhood]\nalphas = [0.1, -0.2]\n", "neighborhood.alphas");
  reject("[oracle]\nheld_out = 0\n", "oracle.held_out");
  reject("[output]\nformats = [\"xml\"]\n", "output.formats");
  reject("[output]\ndirectory = \"\"\n", "output.directory");
}

TEST_CASE("missing config files are a config error") {
  CHECK_THROWS_AS(load_config_file("/no/such/file.toml"), ConfigError);
}

TEST_CASE("hash is stable across runs and sensitive to every byte") {
  const std::string canon = serialize_config(parse_config(""));
  const std::uint64_t h = fnv1a64(canon);
  CHECK(h == fnv1a64(canon));
  CHECK(h != fnv1a64(canon + " "));
  CHECK(config_hash(parse_config("")).size() == 16);
}
