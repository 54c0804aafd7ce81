#include "priorfuse/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include <fmt/format.h>

namespace priorfuse {

namespace {

constexpr std::uint64_t kContextTag = 0x636f6e74657874ULL;  // "context"

std::size_t room_left(const PromptState& p, std::size_t cap) {
  return cap > p.group.k() ? cap - p.group.k() : 0;
}

PromptEvent event_for(const PromptState& p, const AllocationDecision& d, const char* label) {
  return PromptEvent{p.spec.id, p.group.k(), empirical_mean(p.group), d.delta2_hat, label, 0};
}

void stop_prompt(PromptState& p, bool forced) {
  p.phase = Phase::Stopped;
  p.force_stopped = forced;
  p.fusion = fuse(p.group, p.prior);
}

}  // namespace

void SchedulerConfig::validate() const {
  allocator.validate();
  if (!(halt_fraction > 0.0 && halt_fraction <= 1.0)) {
    throw std::invalid_argument("scheduler.halt_fraction must lie in (0, 1]");
  }
  if (pad_multiple < 1) throw std::invalid_argument("scheduler.pad_multiple must be >= 1");
  if (support_capacity < 1) throw std::invalid_argument("scheduler.support_capacity must be >= 1");
  if (support_sample > support_capacity) {
    throw std::invalid_argument("scheduler.support_sample must be <= scheduler.support_capacity");
  }
}

SupportBuffer::SupportBuffer(std::size_t capacity) : data_(capacity) {
  if (capacity == 0) throw std::invalid_argument("SupportBuffer: capacity must be >= 1");
}

void SupportBuffer::push(SupportEntry e) {
  data_[head_] = e;
  head_ = (head_ + 1) % data_.size();
  size_ = std::min(size_ + 1, data_.size());
}

std::vector<SupportEntry> SupportBuffer::contents() const {
  std::vector<SupportEntry> out;
  out.reserve(size_);
  const std::size_t start = (head_ + data_.size() - size_) % data_.size();
  for (std::size_t i = 0; i < size_; ++i) out.push_back(data_[(start + i) % data_.size()]);
  return out;
}

std::vector<SupportEntry> SupportBuffer::sample(std::size_t n, Engine& rng) const {
  std::vector<SupportEntry> all = contents();
  n = std::min(n, all.size());
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, all.size() - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(n);
  return all;
}

nlohmann::ordered_json RoundEvent::to_json() const {
  nlohmann::ordered_json j;
  j["round"] = round;
  j["active"] = active_count;
  j["requested"] = requested;
  j["dispatched"] = dispatched;
  j["discarded"] = discarded;
  j["global_halt"] = global_halt;
  auto& arr = j["prompts"] = nlohmann::ordered_json::array();
  for (const auto& p : prompts) {
    nlohmann::ordered_json e;
    e["id"] = p.prompt_id;
    e["k"] = p.k;
    e["v_bar"] = p.v_bar;
    e["delta2_hat"] = p.delta2_hat;
    e["decision"] = p.decision;
    e["assigned"] = p.assigned;
    arr.push_back(std::move(e));
  }
  return j;
}

std::size_t BatchState::active_count() const {
  return static_cast<std::size_t>(std::count_if(
      prompts.begin(), prompts.end(), [](const PromptState& p) { return p.phase == Phase::Active; }));
}

std::size_t BatchState::dispatched_total() const {
  return std::accumulate(log.begin(), log.end(), std::size_t{0},
                         [](std::size_t acc, const RoundEvent& e) { return acc + e.dispatched; });
}

BatchState cold_start(const std::vector<PromptSpec>& prompts, RolloutEnv& env, PriorOracle& prior,
                      const SchedulerConfig& config, std::span<const SupportEntry> context) {
  if (prompts.empty()) throw std::invalid_argument("cold_start: empty batch");
  config.validate();

  std::unordered_set<PromptId> seen;
  for (const auto& p : prompts) {
    if (!seen.insert(p.id).second) {
      throw std::invalid_argument(fmt::format("cold_start: duplicate prompt id {}", p.id));
    }
  }

  BatchState state;
  state.prompts.reserve(prompts.size());
  // Every prior is acquired before any rollout is generated.
  for (const auto& spec : prompts) {
    PromptState ps;
    ps.spec = spec;
    ps.prior = prior.predict(spec, context);
    ps.group = RolloutGroup(spec.id);
    ps.prior_tick = ++state.clock;
    state.prompts.push_back(std::move(ps));
  }

  const std::size_t k_init = config.allocator.k_init;
  RoundEvent ev;
  ev.round = 0;
  ev.active_count = prompts.size();
  for (auto& ps : state.prompts) {
    const auto rewards = env.rollout(ps.spec, k_init, 0);
    if (rewards.size() != k_init) {
      throw std::runtime_error(fmt::format("environment returned {} rewards for prompt {}, expected {}",
                                           rewards.size(), ps.spec.id, k_init));
    }
    ps.group.append(rewards);
    ps.first_rollout_tick = ++state.clock;
    const double v_bar = empirical_mean(ps.group);
    ev.prompts.push_back(PromptEvent{ps.spec.id, ps.group.k(), v_bar,
                                     empirical_bias(v_bar, ps.prior.value, ps.group.k()),
                                     "cold_start", k_init});
  }
  ev.requested = ev.dispatched = k_init * prompts.size();
  state.log.push_back(std::move(ev));
  return state;
}

void run_round(BatchState& state, RolloutEnv& env, const SchedulerConfig& config) {
  if (state.complete()) throw std::logic_error("run_round: no active prompts");

  const auto& alloc = config.allocator;
  BatchState next = state;
  RoundEvent ev;
  ev.round = next.round + 1;

  std::vector<std::size_t> active;
  std::vector<std::size_t> base_request;
  for (std::size_t i = 0; i < next.prompts.size(); ++i) {
    auto& p = next.prompts[i];
    if (p.phase != Phase::Active) continue;
    const auto d = decide(p.group, p.prior, alloc);
    if (d.action == Action::Stop) {
      stop_prompt(p, false);
      ev.prompts.push_back(event_for(p, d, "stop"));
    } else {
      active.push_back(i);
      base_request.push_back(std::min(d.n, room_left(p, alloc.budget_cap)));
      ev.prompts.push_back(event_for(p, d, "more"));
    }
  }
  ev.active_count = active.size();

  const auto batch_size = static_cast<double>(next.prompts.size());
  if (!active.empty() && static_cast<double>(active.size()) / batch_size < config.halt_fraction) {
    ev.global_halt = true;
    for (std::size_t i : active) stop_prompt(next.prompts[i], true);
    for (auto& e : ev.prompts) {
      if (e.decision == "more") e.decision = "halt";
    }
    active.clear();
  }

  if (!active.empty()) {
    std::vector<std::size_t> assigned = base_request;
    ev.requested = std::accumulate(base_request.begin(), base_request.end(), std::size_t{0});
    const std::size_t pad = config.pad_multiple;
    ev.dispatched = (ev.requested + pad - 1) / pad * pad;
    std::size_t surplus = ev.dispatched - ev.requested;

    if (!config.discard_padding) {
      // Round-robin over active prompts, skipping those at the budget cap.
      bool progressed = true;
      while (surplus > 0 && progressed) {
        progressed = false;
        for (std::size_t a = 0; a < active.size() && surplus > 0; ++a) {
          if (room_left(next.prompts[active[a]], alloc.budget_cap) > assigned[a]) {
            ++assigned[a];
            --surplus;
            progressed = true;
          }
        }
      }
    }
    ev.discarded = surplus;

    // Draw everything before mutating so an environment failure leaves the
    // caller's state untouched.
    std::vector<std::vector<Reward>> drawn(active.size());
    for (std::size_t a = 0; a < active.size(); ++a) {
      const auto& p = next.prompts[active[a]];
      if (assigned[a] == 0) continue;
      drawn[a] = env.rollout(p.spec, assigned[a], p.group.k());
      if (drawn[a].size() != assigned[a]) {
        throw std::runtime_error(fmt::format("environment returned {} rewards for prompt {}, expected {}",
                                             drawn[a].size(), p.spec.id, assigned[a]));
      }
    }
    for (std::size_t a = 0; a < active.size(); ++a) {
      auto& p = next.prompts[active[a]];
      p.group.append(drawn[a]);
      ++next.clock;
      for (auto& e : ev.prompts) {
        if (e.prompt_id == p.spec.id) e.assigned = assigned[a];
      }
    }
  }

  next.round = ev.round;
  next.log.push_back(std::move(ev));
  state = std::move(next);
}

std::vector<PromptOutcome> finalize(const BatchState& state, SupportBuffer* support) {
  if (!state.complete()) throw std::logic_error("batch incomplete");
  std::vector<PromptOutcome> out;
  out.reserve(state.prompts.size());
  for (const auto& p : state.prompts) {
    PromptOutcome o;
    o.prompt_id = p.spec.id;
    o.k = p.group.k();
    o.v_bar = empirical_mean(p.group);
    o.prior_value = p.prior.value;
    o.fusion = p.fusion ? *p.fusion : fuse(p.group, p.prior);
    o.advantages = advantages(p.group, o.fusion);
    o.force_stopped = p.force_stopped;
    out.push_back(std::move(o));
    if (support != nullptr) {
      for (Reward r : p.group.rewards()) support->push(SupportEntry{p.spec.id, r});
    }
  }
  return out;
}

BatchResult run_batch(const std::vector<PromptSpec>& prompts, RolloutEnv& env, PriorOracle& prior,
                      const SchedulerConfig& config, SupportBuffer* support,
                      std::uint64_t context_seed) {
  std::vector<SupportEntry> context;
  if (support != nullptr) {
    Engine rng = make_engine({context_seed, kContextTag});
    context = support->sample(config.support_sample, rng);
  }
  BatchResult result{cold_start(prompts, env, prior, config, context), {}};
  while (!result.state.complete()) run_round(result.state, env, config);
  result.outcomes = finalize(result.state, support);
  return result;
}

}  // namespace priorfuse
