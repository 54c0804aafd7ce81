#include "priorfuse/policy.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace priorfuse {

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("logit: p must lie in (0, 1)");
  return std::log(p) - std::log1p(-p);
}

double bernoulli_entropy(double theta) {
  if (theta <= 0.0 || theta >= 1.0) return 0.0;
  return -(theta * std::log(theta) + (1.0 - theta) * std::log1p(-theta));
}

PolicyState::PolicyState(std::vector<double> logits)
    : logits_(std::move(logits)), old_logits_(logits_) {}

PolicyState PolicyState::from_probabilities(std::span<const double> probs) {
  std::vector<double> z;
  z.reserve(probs.size());
  for (double p : probs) z.push_back(logit(p));
  return PolicyState(std::move(z));
}

void PolicyState::snapshot() { old_logits_ = logits_; }

void PolicyState::set_old_logits(std::vector<double> old) {
  if (old.size() != logits_.size()) throw std::invalid_argument("set_old_logits: size mismatch");
  old_logits_ = std::move(old);
}

double PolicyState::mean_entropy() const {
  if (logits_.empty()) return 0.0;
  double sum = 0.0;
  for (double z : logits_) sum += bernoulli_entropy(logistic(z));
  return sum / static_cast<double>(logits_.size());
}

}  // namespace priorfuse
