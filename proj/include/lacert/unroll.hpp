#pragma once

#include <string>
#include <vector>

#include "lacert/engines.hpp"

namespace lacert {

// Training loss of a finished unroll together with its exact reverse-mode
// gradient in schedule coordinates.
struct LossGradient {
  double value = 0.0;
  std::vector<double> dalpha;
  std::vector<double> dbeta;
  ThetaInv dtheta_inv;
};

// Runs the accelerated recursion for sched.K steps from the zero start,
// evaluates the engine loss at the final pair (z^K, y^K) and back-propagates
// through every step. One factorization total: the reverse pass reuses the
// operator's cached solver.
LossGradient grad_unrolled(const FixedPointOperator& op,
                           const HyperparamSchedule& sched);

// Packs (alphas, betas, theta_inv) into one unconstrained vector. Positive
// coordinates (every alpha and every theta entry) are stored as logs so any
// raw value maps back to a valid schedule; betas are stored as-is.
class ReparamVector {
 public:
  explicit ReparamVector(const HyperparamSchedule& s);

  int size() const { return static_cast<int>(raw_.size()); }
  const Vec& raw() const { return raw_; }
  void set_raw(const Vec& v);

  HyperparamSchedule schedule() const;

  // chain rule from schedule-space gradients to raw space at the current point
  Vec grad_to_raw(const LossGradient& g) const;

 private:
  EngineKind kind_;
  int K_;
  std::vector<std::string> names_;  // theta entries, fixed order
  Vec raw_;                         // [log alphas | betas | log thetas]
};

}  // namespace lacert
