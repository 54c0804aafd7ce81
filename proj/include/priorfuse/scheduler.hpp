#pragma once

// Batch-level orchestration of prior query, cold start, per-round deviation
// testing, global halt, dispatch padding and final fusion.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "priorfuse/allocator.hpp"
#include "priorfuse/estimator.hpp"
#include "priorfuse/simulator.hpp"

namespace priorfuse {

struct SchedulerConfig {
  AllocatorConfig allocator;
  double halt_fraction = 0.25;
  std::size_t pad_multiple = 32;
  std::size_t support_capacity = 512;
  std::size_t support_sample = 256;
  /// When true, padding rollouts are accounted for but not added to any group.
  bool discard_padding = false;

  void validate() const;
};

/// Fixed-capacity ring of (prompt id, reward) pairs; oldest entries are
/// evicted first.
class SupportBuffer {
 public:
  explicit SupportBuffer(std::size_t capacity = 512);

  void push(SupportEntry e);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return data_.size(); }

  /// Entries from oldest to newest.
  std::vector<SupportEntry> contents() const;

  /// Uniform sample of min(n, size()) distinct entries.
  std::vector<SupportEntry> sample(std::size_t n, Engine& rng) const;

 private:
  std::vector<SupportEntry> data_;
  std::size_t head_ = 0;  // next write position
  std::size_t size_ = 0;
};

enum class Phase { Active, Stopped };

struct PromptState {
  PromptSpec spec;
  PriorEstimate prior;
  RolloutGroup group;
  Phase phase = Phase::Active;
  std::optional<FusionResult> fusion;
  bool force_stopped = false;
  std::uint64_t prior_tick = 0;
  std::uint64_t first_rollout_tick = 0;
};

struct PromptEvent {
  PromptId prompt_id = 0;
  std::size_t k = 0;
  double v_bar = 0.0;
  double delta2_hat = 0.0;
  std::string decision;  // "stop", "more", "halt"
  std::size_t assigned = 0;
};

struct RoundEvent {
  std::size_t round = 0;
  std::size_t active_count = 0;
  std::size_t requested = 0;
  std::size_t dispatched = 0;
  std::size_t discarded = 0;
  bool global_halt = false;
  std::vector<PromptEvent> prompts;

  nlohmann::ordered_json to_json() const;
};

struct BatchState {
  std::vector<PromptState> prompts;
  std::size_t round = 0;
  std::uint64_t clock = 0;
  std::vector<RoundEvent> log;

  std::size_t active_count() const;
  bool complete() const { return active_count() == 0; }
  /// Rollouts generated or accounted for so far, padding included.
  std::size_t dispatched_total() const;
};

struct PromptOutcome {
  PromptId prompt_id = 0;
  std::size_t k = 0;
  double v_bar = 0.0;
  double prior_value = 0.0;
  FusionResult fusion;
  std::vector<double> advantages;
  bool force_stopped = false;
};

/// Queries the prior for every prompt first, then draws k_init rollouts each.
/// `context` is passed to the oracle as its support set. Throws on an empty
/// batch; oracle and environment errors propagate.
BatchState cold_start(const std::vector<PromptSpec>& prompts, RolloutEnv& env, PriorOracle& prior,
                      const SchedulerConfig& config,
                      std::span<const SupportEntry> context = {});

/// One decision-and-dispatch round. Leaves `state` untouched if the
/// environment throws.
void run_round(BatchState& state, RolloutEnv& env, const SchedulerConfig& config);

/// Per-prompt fusion over the final observations. Pushes every
/// (prompt id, reward) pair into `support` when given. Throws
/// std::logic_error("batch incomplete") while any prompt is active.
std::vector<PromptOutcome> finalize(const BatchState& state, SupportBuffer* support = nullptr);

/// cold_start, then run_round until complete, then finalize.
struct BatchResult {
  BatchState state;
  std::vector<PromptOutcome> outcomes;
};
BatchResult run_batch(const std::vector<PromptSpec>& prompts, RolloutEnv& env, PriorOracle& prior,
                      const SchedulerConfig& config, SupportBuffer* support = nullptr,
                      std::uint64_t context_seed = 0);

}  // namespace priorfuse
