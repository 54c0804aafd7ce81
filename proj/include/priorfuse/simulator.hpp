#pragma once

// Synthetic rollout environment and prior oracle standing in for a learned
// value model. Randomness is counter-based: the j-th reward of a prompt depends
// only on (seed, salt, prompt id, j), never on batch order or allocation
// history.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "priorfuse/estimator.hpp"

namespace priorfuse {

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Hashes a list of words into a single 64-bit key.
std::uint64_t derive_key(std::initializer_list<std::uint64_t> words);

/// Random-access stream of 64-bit words: word(i) is a pure function of
/// (key, i).
class CounterStream {
 public:
  explicit CounterStream(std::uint64_t key) : key_(key) {}

  std::uint64_t word(std::uint64_t index) const;
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform(std::uint64_t index) const;

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
};

/// Sequential engine for consumers that need std distributions.
using Engine = std::mt19937_64;
Engine make_engine(std::initializer_list<std::uint64_t> words);

struct PromptSpec {
  PromptId id = 0;
  double p_true = 0.5;

  PromptSpec() = default;
  PromptSpec(PromptId id, double p_true);

  double mu_true() const { return 2.0 * p_true - 1.0; }
};

namespace scenario {
struct Exact {};
struct FixedBias {
  double delta = 0.0;
};
struct Hallucinated {
  double forced_value = 0.0;
};
struct NoisyUnbiased {
  double sd = 0.0;
};
}  // namespace scenario

using PriorScenario = std::variant<scenario::Exact, scenario::FixedBias,
                                   scenario::Hallucinated, scenario::NoisyUnbiased>;

std::string describe(const PriorScenario& s);

/// i.i.d. rewards with P(+1) = p_true. Reward j uses stream word `first + j`.
std::vector<Reward> sample_rollouts(const PromptSpec& spec, std::size_t n,
                                    const CounterStream& stream, std::uint64_t first = 0);

/// Prior value for a prompt under a scenario, clamped to [-1, 1]. Only
/// NoisyUnbiased consumes randomness.
PriorEstimate prior_predict(const PromptSpec& spec, const PriorScenario& s, Engine& rng);

/// True squared prior bias (V - mu_true)^2 of a deterministic scenario.
double true_delta2(const PromptSpec& spec, const PriorScenario& s);

struct SupportEntry {
  PromptId prompt_id = 0;
  Reward reward = Reward::success();
};

class RolloutEnv {
 public:
  virtual ~RolloutEnv() = default;
  /// Returns rewards number `already_drawn` .. `already_drawn + n - 1` of the
  /// prompt's reward sequence.
  virtual std::vector<Reward> rollout(const PromptSpec& spec, std::size_t n,
                                      std::size_t already_drawn) = 0;
};

class PriorOracle {
 public:
  virtual ~PriorOracle() = default;
  virtual PriorEstimate predict(const PromptSpec& spec, std::span<const SupportEntry> context) = 0;
};

/// Bernoulli environment keyed by (seed, salt, prompt id).
class SimulatedEnv final : public RolloutEnv {
 public:
  explicit SimulatedEnv(std::uint64_t seed, std::uint64_t salt = 0) : seed_(seed), salt_(salt) {}

  std::vector<Reward> rollout(const PromptSpec& spec, std::size_t n,
                              std::size_t already_drawn) override;

  CounterStream stream_for(PromptId id) const;

 private:
  std::uint64_t seed_;
  std::uint64_t salt_;
};

/// Applies one scenario to every prompt. The support context is accepted for
/// interface fidelity and ignored.
class ScenarioPrior final : public PriorOracle {
 public:
  ScenarioPrior(PriorScenario scenario, std::uint64_t seed, std::uint64_t salt = 0)
      : scenario_(scenario), seed_(seed), salt_(salt) {}

  PriorEstimate predict(const PromptSpec& spec, std::span<const SupportEntry> context) override;

 private:
  PriorScenario scenario_;
  std::uint64_t seed_;
  std::uint64_t salt_;
};

}  // namespace priorfuse
