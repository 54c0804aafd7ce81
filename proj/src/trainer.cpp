#include "priorfuse/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "priorfuse/parallel.hpp"

namespace priorfuse {

namespace {

constexpr std::uint64_t kBatchTag = 0x6261746368ULL;  // "batch"
constexpr std::uint64_t kStepTag = 0x73746570ULL;     // "step"

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::vector<std::size_t> sample_batch(std::size_t n, std::size_t b, Engine& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < b; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(b);
  return idx;
}

std::vector<double> fixed_baseline_advantages(std::span<const Reward> rewards, double baseline) {
  const double sd = fused_std(baseline);
  std::vector<double> out;
  out.reserve(rewards.size());
  for (Reward r : rewards) out.push_back((r.value() - baseline) / sd);
  return out;
}

struct SampleTerms {
  double rho;
  double score;
  bool clipped;
};

SampleTerms sample_terms(double theta, double old_theta, bool success, double adv, double eps) {
  const double pi = success ? theta : 1.0 - theta;
  const double pi_old = success ? old_theta : 1.0 - old_theta;
  const double rho = pi / pi_old;
  const bool clipped = (adv > 0.0 && rho > 1.0 + eps) || (adv < 0.0 && rho < 1.0 - eps);
  return {rho, score(theta, success), clipped};
}

void check_group(const PolicyState& state, const GroupSample& g) {
  if (g.prompt >= state.size()) throw std::out_of_range("surrogate: prompt index out of range");
  if (g.rewards.size() != g.advantages.size()) {
    throw std::invalid_argument("surrogate: rewards and advantages differ in length");
  }
  if (g.rewards.empty()) throw std::invalid_argument("surrogate: empty group");
}

}  // namespace

double surrogate_objective(const PolicyState& state, std::span<const GroupSample> groups, double clip_eps) {
  if (groups.empty()) return 0.0;
  double total = 0.0;
  for (const auto& g : groups) {
    check_group(state, g);
    const double theta = state.theta(g.prompt);
    const double old_theta = state.old_theta(g.prompt);
    double sum = 0.0;
    for (std::size_t i = 0; i < g.rewards.size(); ++i) {
      const auto t = sample_terms(theta, old_theta, g.rewards[i].is_success(), g.advantages[i], clip_eps);
      const double clipped_rho = std::clamp(t.rho, 1.0 - clip_eps, 1.0 + clip_eps);
      sum += std::min(t.rho * g.advantages[i], clipped_rho * g.advantages[i]);
    }
    total += sum / static_cast<double>(g.rewards.size());
  }
  return total / static_cast<double>(groups.size());
}

std::vector<double> surrogate_gradient(const PolicyState& state, std::span<const GroupSample> groups,
                                       double clip_eps) {
  std::vector<double> grad(state.size(), 0.0);
  if (groups.empty()) return grad;
  const auto b = static_cast<double>(groups.size());
  for (const auto& g : groups) {
    check_group(state, g);
    const double theta = state.theta(g.prompt);
    const double old_theta = state.old_theta(g.prompt);
    double sum = 0.0;
    for (std::size_t i = 0; i < g.rewards.size(); ++i) {
      const auto t = sample_terms(theta, old_theta, g.rewards[i].is_success(), g.advantages[i], clip_eps);
      if (!t.clipped) sum += g.advantages[i] * t.rho * t.score;
    }
    grad[g.prompt] += sum / static_cast<double>(g.rewards.size()) / b;
  }
  return grad;
}

std::vector<double> group_normalized_advantages(std::span<const Reward> rewards) {
  std::vector<double> out(rewards.size(), 0.0);
  if (rewards.empty()) return out;
  const double mean = empirical_mean(rewards);
  const double sd = std::sqrt(std::max(0.0, 1.0 - mean * mean));
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    out[i] = (rewards[i].value() - mean) / (sd + kStdFloor);
  }
  return out;
}

std::string method_name(const BaselineMethod& m) {
  return std::visit(overloaded{
                        [](const method::Grpo&) { return std::string("grpo"); },
                        [](const method::V05&) { return std::string("v05"); },
                        [](const method::Oracle&) { return std::string("oracle"); },
                        [](const method::PriorOnly&) { return std::string("prior_only"); },
                    },
                    m);
}

std::size_t nominal_group_size(const BaselineMethod& m) {
  return std::visit(overloaded{
                        [](const method::Grpo& g) { return g.group_size; },
                        [](const method::V05& v) { return v.scheduler.allocator.k_init; },
                        [](const method::Oracle& o) { return o.group_size; },
                        [](const method::PriorOnly& p) { return p.group_size; },
                    },
                    m);
}

void TrainerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("trainer.learning_rate must be > 0");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw std::invalid_argument("trainer.clip_eps must lie in (0, 1)");
  if (steps < 1) throw std::invalid_argument("trainer.steps must be >= 1");
  if (num_prompts < 1) throw std::invalid_argument("trainer.num_prompts must be >= 1");
  if (batch_size < 1 || batch_size > num_prompts) {
    throw std::invalid_argument("trainer.batch_size must lie in [1, trainer.num_prompts]");
  }
  if (!(p_low > 0.0 && p_low <= p_high && p_high < 1.0)) {
    throw std::invalid_argument("trainer.p_range must satisfy 0 < low <= high < 1");
  }
  if (kl_coef < 0.0) throw std::invalid_argument("trainer.kl_coef must be >= 0");
  if (!(divergence_limit > 0.0)) throw std::invalid_argument("trainer.divergence_limit must be > 0");
  if (nominal_group_size(method) < 1) throw std::invalid_argument("trainer.group_size must be >= 1");
  if (const auto* v = std::get_if<method::V05>(&method)) v->scheduler.validate();
}

std::string TrainingTrace::to_csv() const {
  std::string out = "step,grad_norm,grad_var,entropy,mean_reward,rollouts_used\n";
  for (const auto& s : steps) {
    out += fmt::format("{},{},{},{},{},{}\n", s.step, s.grad_norm, s.grad_var, s.entropy, s.mean_reward,
                       s.rollouts_used);
  }
  return out;
}

TrainingTrace train(const TrainerConfig& config) {
  config.validate();
  const std::size_t n = config.num_prompts;
  std::vector<double> probs(n);
  for (std::size_t i = 0; i < n; ++i) {
    probs[i] = n == 1 ? config.p_low
                      : config.p_low + (config.p_high - config.p_low) * static_cast<double>(i) /
                                           static_cast<double>(n - 1);
  }
  PolicyState policy = PolicyState::from_probabilities(probs);
  const std::vector<double> reference(policy.logits().begin(), policy.logits().end());

  const auto* v05 = std::get_if<method::V05>(&config.method);
  SupportBuffer support(v05 != nullptr ? v05->scheduler.support_capacity : 1);

  TrainingTrace trace;
  trace.method = method_name(config.method);
  trace.seed = config.seed;

  for (std::size_t step = 0; step < config.steps; ++step) {
    policy.snapshot();
    Engine batch_rng = make_engine({config.seed, kBatchTag, step});
    const auto batch = sample_batch(n, config.batch_size, batch_rng);

    SimulatedEnv env(config.seed, step);
    ScenarioPrior prior(config.prior, config.seed, step);
    std::vector<PromptSpec> specs;
    specs.reserve(batch.size());
    for (std::size_t x : batch) specs.emplace_back(x, policy.theta(x));

    std::vector<GroupSample> groups(batch.size());
    std::size_t rollouts = 0;
    std::visit(overloaded{
                   [&](const method::Grpo& m) {
                     for (std::size_t i = 0; i < specs.size(); ++i) {
                       groups[i] = {batch[i], env.rollout(specs[i], m.group_size, 0), {}};
                       groups[i].advantages = group_normalized_advantages(groups[i].rewards);
                     }
                     rollouts = specs.size() * m.group_size;
                   },
                   [&](const method::Oracle& m) {
                     for (std::size_t i = 0; i < specs.size(); ++i) {
                       groups[i] = {batch[i], env.rollout(specs[i], m.group_size, 0), {}};
                       groups[i].advantages =
                           fixed_baseline_advantages(groups[i].rewards, specs[i].mu_true());
                     }
                     rollouts = specs.size() * m.group_size;
                   },
                   [&](const method::PriorOnly& m) {
                     for (std::size_t i = 0; i < specs.size(); ++i) {
                       const double v = prior.predict(specs[i], {}).value;
                       groups[i] = {batch[i], env.rollout(specs[i], m.group_size, 0), {}};
                       groups[i].advantages = fixed_baseline_advantages(groups[i].rewards, v);
                     }
                     rollouts = specs.size() * m.group_size;
                   },
                   [&](const method::V05& m) {
                     auto result = run_batch(specs, env, prior, m.scheduler, &support,
                                             derive_key({config.seed, kStepTag, step}));
                     for (std::size_t i = 0; i < specs.size(); ++i) {
                       const auto& ps = result.state.prompts[i];
                       groups[i] = {batch[i],
                                    std::vector<Reward>(ps.group.rewards().begin(), ps.group.rewards().end()),
                                    std::move(result.outcomes[i].advantages)};
                     }
                     rollouts = result.state.dispatched_total();
                   },
               },
               config.method);

    std::vector<double> grad = surrogate_gradient(policy, groups, config.clip_eps);
    if (config.kl_coef > 0.0) {
      // d/dz KL(Bern(theta) || Bern(theta_ref)) = theta (1 - theta) (z - z_ref)
      const auto b = static_cast<double>(batch.size());
      for (std::size_t x : batch) {
        const double th = policy.theta(x);
        grad[x] -= config.kl_coef * th * (1.0 - th) * (policy.logits()[x] - reference[x]) / b;
      }
    }

    StepRecord rec;
    rec.step = step;
    rec.rollouts_used = rollouts;
    double norm2 = 0.0;
    double var = 0.0;
    for (std::size_t x = 0; x < n; ++x) {
      const double th = policy.theta(x);
      const double ideal = std::sqrt(th * (1.0 - th)) / static_cast<double>(n);
      norm2 += grad[x] * grad[x];
      var += (grad[x] - ideal) * (grad[x] - ideal);
    }
    rec.grad_norm = std::sqrt(norm2);
    rec.grad_var = var;
    double reward_sum = 0.0;
    std::size_t reward_count = 0;
    for (const auto& g : groups) {
      for (Reward r : g.rewards) reward_sum += r.value();
      reward_count += g.rewards.size();
    }
    rec.mean_reward = reward_count > 0 ? reward_sum / static_cast<double>(reward_count) : 0.0;

    auto z = policy.logits();
    bool diverged = false;
    for (std::size_t x = 0; x < n; ++x) {
      z[x] += config.learning_rate * grad[x];
      if (!std::isfinite(z[x]) || std::abs(z[x]) > config.divergence_limit) diverged = true;
    }
    rec.entropy = policy.mean_entropy();
    trace.steps.push_back(rec);
    if (diverged) {
      trace.diverged = true;
      break;
    }
  }
  return trace;
}

std::vector<double> ema(std::span<const double> xs, double beta) {
  std::vector<double> out;
  out.reserve(xs.size());
  double m = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    m = i == 0 ? xs[0] : beta * m + (1.0 - beta) * xs[i];
    out.push_back(m);
  }
  return out;
}

void require_compute_parity(const TrainerConfig& a, const TrainerConfig& b) {
  if (a.nominal_rollouts() != b.nominal_rollouts()) {
    throw std::invalid_argument(fmt::format("compute parity violated: {} spends {} rollouts per step, {} spends {}",
                                            method_name(a.method), a.nominal_rollouts(),
                                            method_name(b.method), b.nominal_rollouts()));
  }
}

std::vector<TrainingTrace> train_seeds(TrainerConfig config, std::size_t seeds, std::size_t jobs) {
  config.validate();
  std::vector<TrainingTrace> out(seeds);
  parallel_for(seeds, jobs, [&](std::size_t i) {
    TrainerConfig c = config;
    c.seed = config.seed + i;
    out[i] = train(c);
  });
  return out;
}

Comparison compare(const std::vector<TrainingTrace>& baseline, const std::vector<TrainingTrace>& candidate) {
  if (baseline.empty() || candidate.empty()) throw std::invalid_argument("compare: no traces");
  Comparison c;
  c.baseline_name = baseline.front().method;
  c.candidate_name = candidate.front().method;
  c.seeds = std::min(baseline.size(), candidate.size());
  std::size_t steps = std::numeric_limits<std::size_t>::max();
  for (const auto* set : {&baseline, &candidate}) {
    for (const auto& t : *set) {
      steps = std::min(steps, t.steps.size());
      c.any_diverged = c.any_diverged || t.diverged;
    }
  }
  c.steps = steps;

  auto average = [steps](const std::vector<TrainingTrace>& traces, bool smooth, auto field) {
    std::vector<double> acc(steps, 0.0);
    for (const auto& t : traces) {
      std::vector<double> xs(steps);
      for (std::size_t i = 0; i < steps; ++i) xs[i] = field(t.steps[i]);
      if (smooth) xs = ema(xs);
      for (std::size_t i = 0; i < steps; ++i) acc[i] += xs[i];
    }
    for (double& a : acc) a /= static_cast<double>(traces.size());
    return acc;
  };
  auto grad_var = [](const StepRecord& s) { return s.grad_var; };
  auto entropy = [](const StepRecord& s) { return s.entropy; };
  c.baseline_grad_var = average(baseline, true, grad_var);
  c.candidate_grad_var = average(candidate, true, grad_var);
  c.baseline_entropy = average(baseline, false, entropy);
  c.candidate_entropy = average(candidate, false, entropy);

  if (steps > 0) {
    std::size_t lower = 0;
    for (std::size_t i = 0; i < steps; ++i) lower += c.candidate_grad_var[i] < c.baseline_grad_var[i];
    c.fraction_candidate_lower_var = static_cast<double>(lower) / static_cast<double>(steps);
    c.final_entropy_baseline = c.baseline_entropy.back();
    c.final_entropy_candidate = c.candidate_entropy.back();
  }
  c.variance_claim = !c.any_diverged && steps > 0 && c.fraction_candidate_lower_var >= 0.8;
  c.entropy_claim = !c.any_diverged && steps > 0 && c.final_entropy_candidate > c.final_entropy_baseline;
  return c;
}

std::string Comparison::to_csv() const {
  std::string out = fmt::format("step,ema_grad_var_{0},ema_grad_var_{1},entropy_{0},entropy_{1}\n",
                                baseline_name, candidate_name);
  for (std::size_t i = 0; i < steps; ++i) {
    out += fmt::format("{},{},{},{},{}\n", i, baseline_grad_var[i], candidate_grad_var[i], baseline_entropy[i],
                       candidate_entropy[i]);
  }
  return out;
}

}  // namespace priorfuse
