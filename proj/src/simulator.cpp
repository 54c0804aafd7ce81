#include "priorfuse/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace priorfuse {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kPriorTag = 0x7072696f72ULL;  // "prior"

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;
}  // namespace

std::uint64_t mix64(std::uint64_t x) {
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_key(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (std::uint64_t w : words) h = mix64(h + kGolden + mix64(w));
  return h;
}

std::uint64_t CounterStream::word(std::uint64_t index) const {
  return mix64(key_ + (index + 1) * kGolden);
}

double CounterStream::uniform(std::uint64_t index) const {
  return static_cast<double>(word(index) >> 11) * 0x1.0p-53;
}

Engine make_engine(std::initializer_list<std::uint64_t> words) {
  const std::uint64_t key = derive_key(words);
  std::seed_seq seq{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)};
  return Engine(seq);
}

PromptSpec::PromptSpec(PromptId id_, double p) : id(id_), p_true(p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument(fmt::format("prompt {}: p_true must lie in [0, 1], got {}", id_, p));
  }
}

std::string describe(const PriorScenario& s) {
  return std::visit(
      overloaded{
          [](const scenario::Exact&) { return std::string("exact"); },
          [](const scenario::FixedBias& f) { return fmt::format("fixed_bias({})", f.delta); },
          [](const scenario::Hallucinated& h) {
            return fmt::format("hallucinated({})", h.forced_value);
          },
          [](const scenario::NoisyUnbiased& n) { return fmt::format("noisy_unbiased({})", n.sd); },
      },
      s);
}

std::vector<Reward> sample_rollouts(const PromptSpec& spec, std::size_t n,
                                    const CounterStream& stream, std::uint64_t first) {
  std::vector<Reward> out;
  out.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    out.push_back(stream.uniform(first + j) < spec.p_true ? Reward::success() : Reward::failure());
  }
  return out;
}

PriorEstimate prior_predict(const PromptSpec& spec, const PriorScenario& s, Engine& rng) {
  const double mu = spec.mu_true();
  const double v = std::visit(
      overloaded{
          [&](const scenario::Exact&) { return mu; },
          [&](const scenario::FixedBias& f) { return mu + f.delta; },
          [&](const scenario::Hallucinated& h) { return h.forced_value; },
          [&](const scenario::NoisyUnbiased& n) {
            if (n.sd <= 0.0) return mu;
            std::normal_distribution<double> noise(0.0, n.sd);
            return mu + noise(rng);
          },
      },
      s);
  return PriorEstimate::from_value(std::clamp(v, -1.0, 1.0));
}

double true_delta2(const PromptSpec& spec, const PriorScenario& s) {
  if (std::holds_alternative<scenario::NoisyUnbiased>(s)) {
    throw std::invalid_argument("true_delta2: noisy scenario has no fixed bias");
  }
  Engine unused(0);
  const double gap = prior_predict(spec, s, unused).value - spec.mu_true();
  return gap * gap;
}

CounterStream SimulatedEnv::stream_for(PromptId id) const {
  return CounterStream(derive_key({seed_, salt_, id}));
}

std::vector<Reward> SimulatedEnv::rollout(const PromptSpec& spec, std::size_t n,
                                          std::size_t already_drawn) {
  return sample_rollouts(spec, n, stream_for(spec.id), already_drawn);
}

PriorEstimate ScenarioPrior::predict(const PromptSpec& spec, std::span<const SupportEntry>) {
  Engine rng = make_engine({seed_, salt_, spec.id, kPriorTag});
  return prior_predict(spec, scenario_, rng);
}

}  // namespace priorfuse
