#include "priorfuse/checks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "priorfuse/estimator.hpp"
#include "priorfuse/parallel.hpp"
#include "priorfuse/scheduler.hpp"
#include "priorfuse/trainer.hpp"

namespace priorfuse {

namespace {

constexpr std::uint64_t kMseTag = 1;
constexpr std::uint64_t kWeightTag = 2;
constexpr std::uint64_t kBatchTag = 6;
constexpr std::uint64_t kRegretTag = 8;
constexpr std::uint64_t kGradientTag = 9;
constexpr std::uint64_t kFalseRejectTag = 13;
constexpr std::uint64_t kFdTag = 11;

/// Per-prompt scenario lookup for mixed batches.
class MixedPrior final : public PriorOracle {
 public:
  MixedPrior(std::vector<PriorScenario> scenarios, std::uint64_t seed)
      : scenarios_(std::move(scenarios)), seed_(seed) {}

  PriorEstimate predict(const PromptSpec& spec, std::span<const SupportEntry>) override {
    Engine rng = make_engine({seed_, spec.id});
    return prior_predict(spec, scenarios_.at(spec.id), rng);
  }

 private:
  std::vector<PriorScenario> scenarios_;
  std::uint64_t seed_;
};

double least_squares_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

}  // namespace

nlohmann::ordered_json CheckResult::to_json() const {
  nlohmann::ordered_json j;
  j["id"] = id;
  j["name"] = name;
  j["pass"] = pass;
  j["detail"] = detail;
  j["data"] = data;
  auto& arr = j["reports"] = nlohmann::ordered_json::array();
  for (const auto& r : reports) arr.push_back(r.to_json());
  return j;
}

CheckResult check_mse_decomposition(const CheckBudget& budget, std::uint64_t seed, std::size_t jobs) {
  CheckResult res{"C1", "fixed-weight MSE decomposition"};
  struct Config {
    double p, v, w;
    std::size_t k;
  };
  Engine rng = make_engine({seed, kMseTag});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  std::uniform_int_distribution<std::size_t> ks(4, 64);
  std::vector<Config> configs;
  for (std::size_t i = 0; i < budget.mse_configs; ++i) {
    Config c{};
    c.p = unit(rng);
    c.v = sym(rng);
    c.w = unit(rng);
    c.k = ks(rng);
    configs.push_back(c);
  }
  res.reports.resize(configs.size());
  parallel_for(configs.size(), jobs, [&](std::size_t i) {
    const auto& c = configs[i];
    res.reports[i] = mc_fixed_weight_mse(c.p, c.v, c.k, c.w, budget.mse_trials, derive_key({seed, kMseTag, i}));
  });
  const auto passed = static_cast<std::size_t>(
      std::count_if(res.reports.begin(), res.reports.end(), [](const MCReport& r) { return r.pass; }));
  // At least 96% of configurations within the band (48 of 50 at the default budget).
  const std::size_t required = (budget.mse_configs * 48 + 49) / 50;
  res.pass = !configs.empty() && passed >= required;
  res.detail = fmt::format("{}/{} configs within 3 SE at {} trials (need {})", passed, configs.size(),
                           budget.mse_trials, required);
  res.data["passed"] = passed;
  res.data["required"] = required;
  return res;
}

CheckResult check_optimal_weight(const CheckBudget& budget, std::uint64_t seed) {
  CheckResult res{"C2", "optimal shrinkage weight"};
  Engine rng = make_engine({seed, kWeightTag});
  std::uniform_real_distribution<double> sigma(1e-3, 1.0);
  std::uniform_real_distribution<double> delta(0.0, 4.0);
  // Relative slack for rounding in the two quadratic evaluations.
  constexpr double kRelSlack = 1e-14;
  std::size_t violations = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < budget.weight_draws; ++i) {
    const double s2 = sigma(rng);
    const double d2 = delta(rng);
    const double w_star = optimal_weight(s2, d2);
    const double best = theoretical_mse(w_star, s2, d2);
    for (int g = 0; g <= 100; ++g) {
      const double m = theoretical_mse(g / 100.0, s2, d2);
      if (best > m * (1.0 + kRelSlack)) {
        ++violations;
        worst = std::max(worst, best - m);
      }
    }
  }
  res.pass = budget.weight_draws > 0 && violations == 0;
  res.detail = fmt::format("{} draws x 101 grid weights, {} violations", budget.weight_draws, violations);
  res.data["violations"] = violations;
  res.data["worst_excess"] = worst;
  return res;
}

CheckResult check_bias_bound() {
  CheckResult res{"C3", "exact bias bound"};
  std::size_t violations = 0;
  std::size_t points = 0;
  double tightest = std::numeric_limits<double>::infinity();
  for (int pi = 0; pi <= 10; ++pi) {
    for (int vi = 0; vi <= 10; ++vi) {
      for (std::size_t k : {4, 8, 16, 32, 64}) {
        const double p = pi / 10.0;
        const double v = -1.0 + vi / 5.0;
        const auto m = enumerate_estimator_moments(p, v, k);
        const double bound = 1.0 / std::sqrt(static_cast<double>(k));
        ++points;
        tightest = std::min(tightest, bound - std::abs(m.bias));
        if (std::abs(m.bias) > bound + kLatticeTol) ++violations;
      }
    }
  }
  res.pass = violations == 0;
  res.detail = fmt::format("{} grid points, {} violations, min slack {:.3g}", points, violations, tightest);
  res.data["points"] = points;
  res.data["violations"] = violations;
  res.data["min_slack"] = tightest;
  return res;
}

CheckResult check_bias_decay() {
  CheckResult res{"C4", "bias decay rate"};
  std::vector<double> lx;
  std::vector<double> ly;
  for (std::size_t k = 16; k <= 256; k *= 2) {
    const auto m = enumerate_estimator_moments(0.9, 0.0, k);
    lx.push_back(std::log(static_cast<double>(k)));
    ly.push_back(std::log(std::abs(m.bias)));
    res.reports.push_back(MCReport{fmt::format("|bias|(p=0.9, V=0, k={})", k), std::abs(m.bias), 0.0, 0, true,
                                   1.0 / std::sqrt(static_cast<double>(k)),
                                   std::abs(m.bias) <= 1.0 / std::sqrt(static_cast<double>(k))});
  }
  const double slope = least_squares_slope(lx, ly);
  res.pass = slope <= -0.9;
  res.detail = fmt::format("log-log slope {:.4f} over k=16..256 (need <= -0.9)", slope);
  res.data["slope"] = slope;
  return res;
}

CheckResult check_marginal_return() {
  CheckResult res{"C5", "one-step return lower bound"};
  std::size_t violations = 0;
  std::size_t points = 0;
  for (std::size_t k = 1; k <= 64; ++k) {
    for (int e = 0; e <= 60; ++e) {
      // Log grid from 1e-3 to 4.
      const double d2 = 1e-3 * std::pow(4000.0, e / 60.0);
      const auto kd = static_cast<double>(k);
      const double drop = d2 * d2 / ((kd * d2 + 1.0) * ((kd + 1.0) * d2 + 1.0));
      const double lb = marginal_return_lower_bound(k, d2);
      ++points;
      if (!(lb < drop)) ++violations;
    }
  }
  res.pass = violations == 0;
  res.detail = fmt::format("{} (k, delta2) points, {} violations", points, violations);
  res.data["points"] = points;
  res.data["violations"] = violations;
  return res;
}

CheckResult check_stopping_constants(const CheckBudget& budget, std::uint64_t seed) {
  CheckResult res{"C6", "stopping constants and budgets"};
  const SchedulerConfig config;
  const double boundary = 1.0 / std::sqrt(config.allocator.c);
  const bool boundary_ok = std::abs(boundary - 16.01) <= 0.01;

  // Exact prior on a difficulty sweep that includes both deterministic ends.
  std::size_t exact_prompts = 0;
  std::size_t not_k4 = 0;
  std::size_t accepted_off_prior = 0;
  std::size_t rejected = 0;
  std::size_t endpoint_off_prior = 0;
  for (std::size_t b = 0; b < budget.exact_batches; ++b) {
    std::vector<PromptSpec> specs;
    for (std::size_t i = 0; i < 64; ++i) specs.emplace_back(i, static_cast<double>(i) / 63.0);
    SimulatedEnv env(seed, derive_key({kBatchTag, b}));
    ScenarioPrior prior(scenario::Exact{}, seed, b);
    const auto out = run_batch(specs, env, prior, config);
    for (std::size_t i = 0; i < out.outcomes.size(); ++i) {
      const auto& o = out.outcomes[i];
      ++exact_prompts;
      if (o.k != 4) ++not_k4;
      if (o.fusion.delta2_hat > 0.0) {
        ++rejected;
      } else if (o.fusion.mu_star != o.prior_value) {
        ++accepted_off_prior;
      }
      if ((i == 0 || i == 63) && o.fusion.mu_star != o.prior_value) ++endpoint_off_prior;
    }
  }

  // Mixed hallucinated, biased, noisy and exact priors on random difficulties.
  std::size_t random_prompts = 0;
  std::size_t out_of_range = 0;
  std::size_t k_min_seen = std::numeric_limits<std::size_t>::max();
  std::size_t k_max_seen = 0;
  Engine rng = make_engine({seed, kBatchTag});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  for (std::size_t b = 0; b < budget.random_batches; ++b) {
    std::vector<PromptSpec> specs;
    std::vector<PriorScenario> scenarios;
    for (std::size_t i = 0; i < 32; ++i) {
      specs.emplace_back(i, unit(rng));
      switch (i % 4) {
        case 0: scenarios.emplace_back(scenario::Hallucinated{sym(rng)}); break;
        case 1: scenarios.emplace_back(scenario::FixedBias{sym(rng)}); break;
        case 2: scenarios.emplace_back(scenario::NoisyUnbiased{0.3}); break;
        default: scenarios.emplace_back(scenario::Exact{}); break;
      }
    }
    SimulatedEnv env(seed, derive_key({kBatchTag, 1, b}));
    MixedPrior prior(std::move(scenarios), derive_key({seed, b}));
    const auto out = run_batch(specs, env, prior, config);
    for (const auto& o : out.outcomes) {
      ++random_prompts;
      k_min_seen = std::min(k_min_seen, o.k);
      k_max_seen = std::max(k_max_seen, o.k);
      if (o.k < 4 || o.k > 16) ++out_of_range;
    }
  }

  res.pass = boundary_ok && not_k4 == 0 && accepted_off_prior == 0 && endpoint_off_prior == 0 &&
             out_of_range == 0 && exact_prompts > 0 && random_prompts > 0;
  res.detail = fmt::format(
      "1/sqrt(c)={:.4f}; exact prior: {}/{} stop at k=4, {} accepted with mu*!=V, {} rejected at k=4 "
      "(halted); random K* in [{}, {}] over {} prompts",
      boundary, exact_prompts - not_k4, exact_prompts, accepted_off_prior, rejected,
      random_prompts > 0 ? k_min_seen : 0, k_max_seen, random_prompts);
  res.data["boundary"] = boundary;
  res.data["exact_prompts"] = exact_prompts;
  res.data["exact_not_k4"] = not_k4;
  res.data["exact_rejected_at_k4"] = rejected;
  res.data["accepted_off_prior"] = accepted_off_prior;
  res.data["random_prompts"] = random_prompts;
  res.data["random_k_min"] = random_prompts > 0 ? k_min_seen : 0;
  res.data["random_k_max"] = k_max_seen;
  return res;
}

CheckResult check_group_size_examples() {
  CheckResult res{"C7", "minimum group size"};
  std::size_t table_mismatch = 0;
  for (const auto& row : check_base_group_size(1, 64)) {
    if (row.robust != (row.k >= 4)) ++table_mismatch;
  }
  auto delta2 = [](std::vector<int> rs) {
    std::vector<Reward> rewards;
    for (int r : rs) rewards.emplace_back(r);
    return empirical_bias(empirical_mean(rewards), 0.8, rewards.size());
  };
  const bool k1 = delta2({-1}) > 0.0;
  const bool k2 = delta2({1, -1}) > 0.0;
  const bool k3 = delta2({1, -1, -1}) > 0.0;
  const bool k4_full = delta2({1, 1, 1, 1}) == 0.0;
  const bool k4_half = delta2({1, 1, 1, -1}) == 0.0;
  res.pass = table_mismatch == 0 && k1 && k2 && k3 && k4_full && k4_half;
  res.detail = fmt::format(
      "robust<=>k>=4 mismatches: {}; V=0.8 rejects k=1:{} k=2:{} k=3:{}; accepts k=4 mean 1.0:{} mean 0.5:{}",
      table_mismatch, k1, k2, k3, k4_full, k4_half);
  res.data["table_mismatch"] = table_mismatch;
  return res;
}

std::vector<RegretScenario> default_regret_scenarios() {
  return {
      {"hallucinated(0.8)/p=0", 0.0, scenario::Hallucinated{0.8}},
      {"hallucinated(0.8)/p=0.1", 0.1, scenario::Hallucinated{0.8}},
      {"hallucinated(-0.5)/p=0.95", 0.95, scenario::Hallucinated{-0.5}},
      {"fixed_bias(-1)/p=0.9", 0.9, scenario::FixedBias{-1.0}},
  };
}

CheckResult check_regret(const CheckBudget& budget, std::uint64_t seed, std::size_t jobs) {
  CheckResult res{"C8", "regret scaling"};
  const auto scenarios = default_regret_scenarios();
  const auto& costs = budget.regret_costs;
  std::vector<RegretPoint> points(scenarios.size() * costs.size());
  parallel_for(points.size(), jobs, [&](std::size_t i) {
    const auto& s = scenarios[i / costs.size()];
    points[i] = mc_regret(s, costs[i % costs.size()], budget.regret_episodes, derive_key({seed, kRegretTag}), {},
                          true);
  });

  res.pass = !points.empty();
  auto& per = res.data["scenarios"] = nlohmann::ordered_json::array();
  std::vector<std::string> parts;
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    std::vector<double> ratios;
    nlohmann::ordered_json js;
    js["scenario"] = scenarios[s].label;
    auto& pts = js["points"] = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < costs.size(); ++c) {
      const auto& pt = points[s * costs.size() + c];
      ratios.push_back(pt.regret_over_c);
      pts.push_back(pt.to_json());
      res.reports.push_back(MCReport{fmt::format("regret/c[{}, c={}]", pt.scenario, pt.c), pt.regret_over_c,
                                     pt.std_error / pt.c, pt.episodes, false, 0.0, true});
    }
    const auto trend = regret_trend(ratios);
    for (std::size_t c = 0; c < costs.size(); ++c) {
      auto& r = res.reports[res.reports.size() - costs.size() + c];
      r.bound = trend.fitted_constant;
      r.pass = trend.pass;
    }
    js["fitted_constant"] = trend.fitted_constant;
    js["max_over_min"] = std::isfinite(trend.max_over_min) ? nlohmann::ordered_json(trend.max_over_min)
                                                           : nlohmann::ordered_json(nullptr);
    js["kendall_s"] = trend.kendall_s;
    js["p_upward"] = trend.p_upward;
    js["pass"] = trend.pass;
    per.push_back(std::move(js));
    res.pass = res.pass && trend.pass;
    parts.push_back(fmt::format("{}: C={:.3g} p={:.3f} {}", scenarios[s].label, trend.fitted_constant,
                                trend.p_upward, trend.pass ? "ok" : "TREND"));
  }
  res.detail = fmt::format("{}", fmt::join(parts, "; "));
  return res;
}

CheckResult check_gradient_variance(const CheckBudget& budget, std::uint64_t seed, std::size_t jobs) {
  CheckResult res{"C9", "gradient variance bound"};
  const std::vector<double> thetas{0.1, 0.3, 0.5, 0.7, 0.9};
  const PolicyState policy = PolicyState::from_probabilities(thetas);
  std::vector<std::size_t> prompts(thetas.size());
  std::iota(prompts.begin(), prompts.end(), 0);
  const std::vector<BaselineKind> kinds{BaselineKind::Oracle, BaselineKind::EmpiricalMean, BaselineKind::Fused,
                                        BaselineKind::PriorOnly};
  const std::vector<PriorScenario> priors{scenario::Exact{}, scenario::FixedBias{0.3}};

  std::vector<std::vector<GradientBoundReport>> cells(kinds.size() * priors.size());
  parallel_for(cells.size(), jobs, [&](std::size_t i) {
    GradientCheckConfig cfg;
    cfg.baseline = kinds[i / priors.size()];
    cfg.prior = priors[i % priors.size()];
    cfg.trials = budget.gradient_trials;
    cfg.seed = derive_key({seed, kGradientTag, i});
    cells[i] = check_gradient_bound(policy, prompts, cfg);
  });

  std::size_t total = 0;
  std::size_t passed = 0;
  std::size_t inconclusive = 0;
  auto& arr = res.data["reports"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (const auto& r : cells[i]) {
      ++total;
      passed += r.status == CheckStatus::Pass;
      inconclusive += r.status == CheckStatus::Inconclusive;
      auto j = r.to_json();
      j["prior"] = describe(priors[i % priors.size()]);
      arr.push_back(std::move(j));
      res.reports.push_back(MCReport{fmt::format("tr_var[{}, {}, theta={}]", to_string(r.baseline),
                                                 describe(priors[i % priors.size()]), r.theta),
                                     r.var_trace, r.var_trace_se, r.trials, false, r.bound_value,
                                     r.status == CheckStatus::Pass});
    }
  }
  res.pass = total > 0 && passed == total;
  res.detail = fmt::format("{}/{} (baseline, prior, prompt) cells within 3 SE of the bound, {} inconclusive",
                           passed, total, inconclusive);
  return res;
}

CheckResult check_false_rejection(const CheckBudget& budget, std::uint64_t seed) {
  CheckResult res{"P1", "false rejection rate at k=4"};
  std::size_t passed = 0;
  for (int i = 0; i <= 10; ++i) {
    auto r = false_rejection_mc(i / 10.0, 4, budget.false_rejection_trials, derive_key({seed, kFalseRejectTag}));
    passed += r.pass;
    res.reports.push_back(std::move(r));
  }
  res.pass = passed == res.reports.size();
  res.detail = fmt::format("{}/{} difficulty levels match the exact rate within 3 SE", passed, res.reports.size());
  return res;
}

CheckResult check_training_claims(const CheckBudget& budget, std::uint64_t seed, std::size_t jobs) {
  CheckResult res{"C10", "training dynamics at compute parity"};
  TrainerConfig grpo;
  grpo.method = method::Grpo{16};
  grpo.batch_size = 16;
  grpo.steps = budget.training_steps;
  grpo.seed = seed;
  TrainerConfig v05 = grpo;
  v05.method = method::V05{};
  v05.batch_size = 64;
  require_compute_parity(grpo, v05);

  const auto a = train_seeds(grpo, budget.training_seeds, jobs);
  const auto b = train_seeds(v05, budget.training_seeds, jobs);
  const auto cmp = compare(a, b);
  res.pass = budget.training_seeds >= 1 && cmp.variance_claim && cmp.entropy_claim;
  res.detail = fmt::format(
      "{} seeds x {} steps: v05 EMA grad-var lower at {:.1f}% of steps (need >= 80%); final entropy v05 {:.5f} vs "
      "grpo {:.5f}{}",
      cmp.seeds, cmp.steps, 100.0 * cmp.fraction_candidate_lower_var, cmp.final_entropy_candidate,
      cmp.final_entropy_baseline, cmp.any_diverged ? "; divergence" : "");
  res.data["fraction_lower_var"] = cmp.fraction_candidate_lower_var;
  res.data["final_entropy_grpo"] = cmp.final_entropy_baseline;
  res.data["final_entropy_v05"] = cmp.final_entropy_candidate;
  res.data["diverged"] = cmp.any_diverged;
  return res;
}

CheckResult check_surrogate_gradient(const CheckBudget& budget, std::uint64_t seed) {
  CheckResult res{"C11", "surrogate gradient"};
  Engine rng = make_engine({seed, kFdTag});
  std::uniform_real_distribution<double> old_logit(-3.0, 3.0);
  std::normal_distribution<double> drift(0.0, 0.3);
  std::normal_distribution<double> adv(0.0, 1.5);
  std::uniform_int_distribution<std::size_t> group_size(1, 8);
  std::bernoulli_distribution coin(0.5);
  constexpr std::size_t kPrompts = 8;
  constexpr double kEps = 0.2;
  constexpr double kStep = 1e-6;

  double worst = 0.0;
  for (std::size_t s = 0; s < budget.fd_states; ++s) {
    std::vector<double> old(kPrompts);
    std::vector<double> cur(kPrompts);
    for (std::size_t i = 0; i < kPrompts; ++i) {
      old[i] = old_logit(rng);
      cur[i] = old[i] + drift(rng);
    }
    PolicyState state(cur);
    state.set_old_logits(old);
    std::vector<GroupSample> groups;
    for (std::size_t x = 0; x < kPrompts; x += 2) {
      GroupSample g;
      g.prompt = x;
      const std::size_t k = group_size(rng);
      for (std::size_t i = 0; i < k; ++i) {
        g.rewards.push_back(coin(rng) ? Reward::success() : Reward::failure());
        g.advantages.push_back(adv(rng));
      }
      groups.push_back(std::move(g));
    }
    const auto grad = surrogate_gradient(state, groups, kEps);
    double err2 = 0.0;
    double ref2 = 0.0;
    for (std::size_t i = 0; i < kPrompts; ++i) {
      auto z = state.logits();
      const double z0 = z[i];
      z[i] = z0 + kStep;
      const double up = surrogate_objective(state, groups, kEps);
      z[i] = z0 - kStep;
      const double down = surrogate_objective(state, groups, kEps);
      z[i] = z0;
      const double fd = (up - down) / (2.0 * kStep);
      err2 += (grad[i] - fd) * (grad[i] - fd);
      ref2 += fd * fd;
    }
    const double rel = std::sqrt(err2) / std::max(std::sqrt(ref2), 1e-12);
    worst = std::max(worst, rel);
  }
  res.pass = budget.fd_states > 0 && worst < 1e-5;
  res.detail = fmt::format("{} random states, max relative error {:.3g} (need < 1e-5)", budget.fd_states, worst);
  res.data["max_relative_error"] = worst;
  return res;
}

}  // namespace priorfuse
