#pragma once

// Toy Bernoulli policy: one logit per prompt, success probability
// logistic(logit). The old-policy snapshot feeds importance ratios.

#include <cstddef>
#include <span>
#include <vector>

namespace priorfuse {

double logistic(double z);
double logit(double p);

/// Binary entropy in nats; 0 at the endpoints.
double bernoulli_entropy(double theta);

class PolicyState {
 public:
  PolicyState() = default;
  explicit PolicyState(std::vector<double> logits);

  static PolicyState from_probabilities(std::span<const double> probs);

  std::size_t size() const { return logits_.size(); }
  double theta(std::size_t i) const { return logistic(logits_[i]); }
  double old_theta(std::size_t i) const { return logistic(old_logits_[i]); }

  std::span<const double> logits() const { return logits_; }
  std::span<const double> old_logits() const { return old_logits_; }
  std::span<double> logits() { return logits_; }

  /// Makes the current policy the old policy.
  void snapshot();
  void set_old_logits(std::vector<double> old);

  double mean_entropy() const;

 private:
  std::vector<double> logits_;
  std::vector<double> old_logits_;
};

/// d/dz log pi(o) for the logistic policy: 1 - theta for a success, -theta
/// for a failure.
inline double score(double theta, bool success) { return success ? 1.0 - theta : -theta; }

}  // namespace priorfuse
