#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "priorfuse/experiment.hpp"

using namespace priorfuse;
namespace fs = std::filesystem;
using doctest::Approx;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("priorfuse_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kAllocate = R"(
mode: allocate
seed: 7
allocate:
  batches: 3
  scenarios:
    - p_range: [0.0, 1.0]
      count: 64
      prior: exact
)";

}  // namespace

TEST_CASE("allocate with an exact prior spends k_init per prompt") {
  auto cfg = parse_config(kAllocate);
  cfg.output = scratch("allocate");
  const auto out = run_experiment(cfg);
  CHECK(out.all_pass());
  CHECK(out.exit_code() == 0);
  for (const char* f : {"rounds.jsonl", "allocations.csv", "reports.json", "summary.txt"}) {
    CHECK(fs::exists(cfg.output / f));
  }
  CHECK_FALSE(fs::exists(cfg.output / ".staging"));
  const auto j = nlohmann::json::parse(slurp(cfg.output / "reports.json"));
  CHECK(j["results"]["mean_rollouts_per_prompt"].get<double>() == Approx(4.0));
  CHECK(slurp(cfg.output / "summary.txt").rfind("# generated ", 0) == 0);
  fs::remove_all(cfg.output);
}

TEST_CASE("config errors name the field") {
  CHECK_THROWS_WITH_AS(parse_config("mode: verify\n").validate(), doctest::Contains("seed required"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("seed: 1\ntrainer:\n  stepz: 3\n"), doctest::Contains("trainer.stepz"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("seed: 1\nallocator:\n  k_min: 2\n").validate(), doctest::Contains("k_min"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("seed: -1\n"), doctest::Contains("seed"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed: 1\nmode: dance\n"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("seed: 1\ntrainer:\n  prior: {kind: psychic}\n"), doctest::Contains("kind"),
                       ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.yaml"), ConfigError);
}

TEST_CASE("JSON configs parse like YAML") {
  const auto y = parse_config("seed: 5\nmode: train\ntrainer: {steps: 12, prior: {kind: fixed_bias, delta: 0.1}}\n");
  const auto j = parse_config(R"({"seed": 5, "mode": "train", "trainer": {"steps": 12,
                                  "prior": {"kind": "fixed_bias", "delta": 0.1}}})");
  CHECK(*y.seed == *j.seed);
  CHECK(y.mode == Mode::Train);
  CHECK(j.trainer.steps == 12);
  CHECK(std::get<scenario::FixedBias>(j.trainer.prior).delta == Approx(0.1));
}

TEST_CASE("scenario sources are exclusive") {
  CHECK_THROWS_AS(parse_config(R"(
seed: 1
allocate:
  scenarios:
    - {p_true: 0.5, p_values: [0.1], count: 2}
)"),
                  ConfigError);
  const auto c = parse_config("seed: 1\nallocate:\n  scenarios:\n    - {p_true: 0.3, count: 5}\n");
  REQUIRE(c.scenarios.size() == 1);
  CHECK(c.scenarios[0].p_values.size() == 5);
}

TEST_CASE("compute parity of trainer configs") {
  const auto c = parse_config("seed: 1\nmode: sweep\n");
  CHECK(c.trainer_for("grpo").nominal_rollouts() == c.rollouts_per_step);
  CHECK(c.trainer_for("v05").nominal_rollouts() == c.rollouts_per_step);
  CHECK_THROWS(c.trainer_for("sgd"));
}

TEST_CASE("a failed publish leaves no staging area behind") {
  auto cfg = parse_config(kAllocate);
  cfg.output = scratch("publish");
  // A non-empty directory where a file must go makes the final move fail.
  fs::create_directories(cfg.output / "reports.json" / "blocker");
  CHECK_THROWS(run_experiment(cfg));
  CHECK_FALSE(fs::exists(cfg.output / ".staging"));
  CHECK_FALSE(fs::exists(cfg.output / "rounds.jsonl"));
  fs::remove_all(cfg.output);
}

TEST_CASE("reruns are byte identical") {
  auto cfg = parse_config(kAllocate);
  const auto dir = scratch("determinism");
  const auto r = check_determinism(cfg, dir);
  CHECK(r.pass);
  fs::remove_all(dir);
}

TEST_CASE("verify mode runs a reduced check list") {
  auto cfg = parse_config(R"(
seed: 3
mode: verify
verify:
  checks: [C2, C3, C7]
  weight_draws: 50
)");
  cfg.output = scratch("verify");
  const auto out = run_experiment(cfg);
  CHECK(out.checks.size() == 3);
  CHECK(out.all_pass());
  const auto table = render_table(out.checks);
  CHECK(table.find("overall: PASS (3/3") != std::string::npos);
  fs::remove_all(cfg.output);
}
