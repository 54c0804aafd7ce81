#include <doctest.h>

#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "priorfuse/scheduler.hpp"

using namespace priorfuse;
using doctest::Approx;

namespace {

// Every prompt's reward sequence is fixed by its id: ids below `bad_from`
// always succeed, the rest always fail. Calls are appended to `log`.
struct ScriptedEnv : RolloutEnv {
  PromptId bad_from = 1000;
  bool fail_after_cold_start = false;
  std::size_t calls = 0;
  std::vector<std::string>* log = nullptr;

  std::vector<Reward> rollout(const PromptSpec& spec, std::size_t n, std::size_t already_drawn) override {
    if (fail_after_cold_start && already_drawn > 0) throw std::runtime_error("env down");
    ++calls;
    if (log) log->push_back("R" + std::to_string(spec.id));
    return std::vector<Reward>(n, spec.id < bad_from ? Reward::success() : Reward::failure());
  }
};

// Predicts certain success for every prompt.
struct ConfidentPrior : PriorOracle {
  std::vector<std::string>* log = nullptr;
  PriorEstimate predict(const PromptSpec& spec, std::span<const SupportEntry>) override {
    if (log) log->push_back("P" + std::to_string(spec.id));
    return PriorEstimate::from_value(1.0);
  }
};

std::vector<PromptSpec> prompts(std::size_t n) {
  std::vector<PromptSpec> out;
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(i, 0.5);
  return out;
}

std::size_t rollouts_in(const BatchState& s) {
  std::size_t total = 0;
  for (const auto& p : s.prompts) total += p.group.k();
  return total;
}

}  // namespace

TEST_CASE("cold start draws k_init per prompt") {
  ScriptedEnv env;
  ConfidentPrior prior;
  const auto s = cold_start(prompts(8), env, prior, SchedulerConfig{});
  CHECK(rollouts_in(s) == 32);
  CHECK(s.dispatched_total() == 32);
  CHECK(s.active_count() == 8);
  CHECK_THROWS_AS(cold_start({}, env, prior, SchedulerConfig{}), std::invalid_argument);
  auto dup = prompts(2);
  dup[1].id = 0;
  CHECK_THROWS_AS(cold_start(dup, env, prior, SchedulerConfig{}), std::invalid_argument);
}

TEST_CASE("every prior is queried before the first rollout") {
  std::vector<std::string> log;
  ScriptedEnv env;
  env.log = &log;
  ConfidentPrior prior;
  prior.log = &log;
  const auto s = cold_start(prompts(5), env, prior, SchedulerConfig{});
  REQUIRE(log.size() == 10);
  for (std::size_t i = 0; i < 5; ++i) CHECK(log[i][0] == 'P');
  for (std::size_t i = 5; i < 10; ++i) CHECK(log[i][0] == 'R');
  std::uint64_t last_prior = 0;
  std::uint64_t first_rollout = ~0ull;
  for (const auto& p : s.prompts) {
    last_prior = std::max(last_prior, p.prior_tick);
    first_rollout = std::min(first_rollout, p.first_rollout_tick);
  }
  CHECK(last_prior < first_rollout);
}

TEST_CASE("global halt below a quarter of the batch") {
  // One rejecting prompt out of eight: 1/8 < 0.25, so it is force-stopped.
  ScriptedEnv env;
  env.bad_from = 7;
  ConfidentPrior prior;
  auto s = cold_start(prompts(8), env, prior, SchedulerConfig{});
  run_round(s, env, SchedulerConfig{});
  CHECK(s.complete());
  CHECK(s.log.back().global_halt);
  CHECK(s.log.back().dispatched == 0);
  CHECK(s.prompts[7].force_stopped);
  CHECK(s.prompts[7].group.k() == 4);
  CHECK_FALSE(s.prompts[0].force_stopped);
}

TEST_CASE("three of eight active keep going") {
  ScriptedEnv env;
  env.bad_from = 5;
  ConfidentPrior prior;
  auto s = cold_start(prompts(8), env, prior, SchedulerConfig{});
  run_round(s, env, SchedulerConfig{});
  CHECK_FALSE(s.log.back().global_halt);
  CHECK(s.active_count() == 3);
  CHECK(s.log.back().requested == 6);
  CHECK(s.log.back().dispatched == 32);
}

TEST_CASE("dispatch is padded to a multiple of 32 and spread round robin") {
  ScriptedEnv env;
  env.bad_from = 3;
  ConfidentPrior prior;
  SchedulerConfig cfg;
  auto s = cold_start(prompts(8), env, prior, cfg);
  const auto before = rollouts_in(s);
  run_round(s, env, cfg);
  const auto& ev = s.log.back();
  CHECK(ev.active_count == 5);
  CHECK(ev.requested == 10);
  CHECK(ev.dispatched == 32);
  CHECK(ev.discarded == 0);
  CHECK(rollouts_in(s) - before == 32);
  std::vector<std::size_t> ks;
  for (std::size_t i = 3; i < 8; ++i) ks.push_back(s.prompts[i].group.k());
  CHECK(*std::max_element(ks.begin(), ks.end()) - *std::min_element(ks.begin(), ks.end()) <= 1);
  for (std::size_t i = 0; i < 3; ++i) CHECK(s.prompts[i].group.k() == 4);
}

TEST_CASE("padding respects the budget cap and can be discarded") {
  ScriptedEnv env;
  env.bad_from = 0;
  ConfidentPrior prior;
  SchedulerConfig cfg;
  cfg.discard_padding = true;
  auto s = cold_start(prompts(3), env, prior, cfg);
  run_round(s, env, cfg);
  CHECK(s.log.back().requested == 6);
  CHECK(s.log.back().dispatched == 32);
  CHECK(s.log.back().discarded == 26);
  for (const auto& p : s.prompts) CHECK(p.group.k() == 6);

  SchedulerConfig spread;
  auto t = cold_start(prompts(3), env, prior, spread);
  while (!t.complete()) run_round(t, env, spread);
  for (const auto& p : t.prompts) CHECK(p.group.k() <= spread.allocator.budget_cap);
}

TEST_CASE("finalize") {
  ScriptedEnv env;
  env.bad_from = 0;
  ConfidentPrior prior;
  auto s = cold_start(prompts(4), env, prior, SchedulerConfig{});
  CHECK_THROWS_WITH_AS(finalize(s), "batch incomplete", std::logic_error);
  while (!s.complete()) run_round(s, env, SchedulerConfig{});
  SupportBuffer support;
  const auto out = finalize(s, &support);
  CHECK(out.size() == 4);
  CHECK(support.size() == rollouts_in(s));
  for (const auto& o : out) CHECK(o.k == 16);
}

TEST_CASE("finalize on an accepted prior uses the prior as baseline") {
  BatchState s;
  PromptState p;
  p.spec = PromptSpec(1, 0.9);
  p.prior = PriorEstimate::from_value(0.8);
  p.group = RolloutGroup(1, {Reward(1), Reward(1), Reward(1), Reward(-1)});
  p.phase = Phase::Stopped;
  s.prompts.push_back(p);
  const auto out = finalize(s);
  CHECK(out[0].fusion.mu_star == Approx(0.8));
  CHECK(out[0].advantages[0] == Approx((1 - 0.8) / 0.6));
  CHECK(out[0].advantages[3] == Approx(-3.0));
}

TEST_CASE("environment failure leaves the state untouched") {
  ScriptedEnv env;
  env.bad_from = 0;
  ConfidentPrior prior;
  auto s = cold_start(prompts(4), env, prior, SchedulerConfig{});
  env.fail_after_cold_start = true;
  const auto clock = s.clock;
  const auto round = s.round;
  CHECK_THROWS_AS(run_round(s, env, SchedulerConfig{}), std::runtime_error);
  CHECK(s.clock == clock);
  CHECK(s.round == round);
  CHECK(s.log.size() == 1);
  CHECK(rollouts_in(s) == 16);
  for (const auto& p : s.prompts) CHECK(p.phase == Phase::Active);
}

TEST_CASE("run_round on a finished batch is an error") {
  ScriptedEnv env;
  ConfidentPrior prior;
  auto s = cold_start(prompts(2), env, prior, SchedulerConfig{});
  run_round(s, env, SchedulerConfig{});
  REQUIRE(s.complete());
  CHECK_THROWS_AS(run_round(s, env, SchedulerConfig{}), std::logic_error);
}

TEST_CASE("simulated batches account for every rollout") {
  SchedulerConfig cfg;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<PromptSpec> ps;
    for (std::size_t i = 0; i < 32; ++i) ps.emplace_back(i, std::uniform_real_distribution<double>(0, 1)(rng));
    SimulatedEnv env(seed);
    ScenarioPrior prior(scenario::FixedBias{0.4}, seed);
    const auto r = run_batch(ps, env, prior, cfg);
    std::size_t used = 0;
    for (const auto& o : r.outcomes) {
      CHECK(o.k >= cfg.allocator.k_min);
      CHECK(o.k <= cfg.allocator.budget_cap);
      used += o.k;
    }
    std::size_t discarded = 0;
    for (const auto& e : r.state.log) {
      CHECK(e.dispatched % (e.round == 0 ? 1 : cfg.pad_multiple) == 0);
      discarded += e.discarded;
    }
    CHECK(used + discarded == r.state.dispatched_total());
  }
}

TEST_CASE("support buffer evicts oldest entries") {
  SupportBuffer b(3);
  for (PromptId i = 0; i < 5; ++i) b.push({i, Reward::success()});
  CHECK(b.size() == 3);
  const auto c = b.contents();
  CHECK(c[0].prompt_id == 2);
  CHECK(c[2].prompt_id == 4);
  Engine rng = make_engine({1});
  const auto s = b.sample(10, rng);
  CHECK(s.size() == 3);
  std::vector<PromptId> ids;
  for (const auto& e : s) ids.push_back(e.prompt_id);
  std::sort(ids.begin(), ids.end());
  CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
}

TEST_CASE("round events serialize") {
  ScriptedEnv env;
  env.bad_from = 1;
  ConfidentPrior prior;
  auto s = cold_start(prompts(2), env, prior, SchedulerConfig{});
  run_round(s, env, SchedulerConfig{});
  const auto j = s.log.back().to_json();
  CHECK(j["round"] == 1);
  CHECK(j["prompts"].size() == 2);
}
