#include "lacert/unroll.hpp"

#include <cmath>

namespace lacert {

LossGradient grad_unrolled(const FixedPointOperator& op,
                           const HyperparamSchedule& sched) {
  sched.validate();
  if (sched.kind != op.kind())
    throw InvalidConfig("grad_unrolled: schedule built for another engine");
  const int K = sched.K;
  const int n = op.dim();

  std::vector<Vec> ys(K + 1), zs(K + 1);
  std::vector<StepData> steps(K);
  ys[0] = Vec::Zero(n);
  zs[0] = Vec::Zero(n);
  for (int k = 0; k < K; ++k) {
    steps[k] = op.step(zs[k], sched.alphas[k]);
    ys[k + 1] = steps[k].y;
    zs[k + 1] =
        (1.0 + sched.betas[k]) * ys[k + 1] - sched.betas[k] * ys[k];
    if (!ys[k + 1].allFinite() || !zs[k + 1].allFinite())
      throw NonFiniteIterate("grad_unrolled: nonfinite iterate", k + 1);
  }

  LossGradient g;
  g.dalpha.assign(K, 0.0);
  g.dbeta.assign(K, 0.0);
  for (const auto& name : theta_inv_names(op.kind())) g.dtheta_inv[name] = 0.0;

  g.value = op.loss(zs[K], ys[K]);
  Vec zbar = Vec::Zero(n);
  Vec ybar = Vec::Zero(n);
  op.loss_vjp(zs[K], ys[K], zbar, ybar, g.dtheta_inv);

  // walk the recursion backwards; ybar holds the adjoint of y^{k+1}
  for (int k = K - 1; k >= 0; --k) {
    ybar += (1.0 + sched.betas[k]) * zbar;
    Vec yprevbar = -sched.betas[k] * zbar;
    g.dbeta[k] += zbar.dot(ys[k + 1] - ys[k]);

    Vec zkbar = Vec::Zero(n);
    op.step_vjp(steps[k], zs[k], sched.alphas[k], ybar, zkbar, g.dalpha[k],
                g.dtheta_inv);
    zbar = std::move(zkbar);
    ybar = std::move(yprevbar);
  }
  return g;
}

ReparamVector::ReparamVector(const HyperparamSchedule& s)
    : kind_(s.kind), K_(s.K), names_(theta_inv_names(s.kind)) {
  s.validate();
  raw_.resize(2 * K_ + static_cast<int>(names_.size()));
  for (int k = 0; k < K_; ++k) raw_(k) = std::log(s.alphas[k]);
  for (int k = 0; k < K_; ++k) raw_(K_ + k) = s.betas[k];
  for (size_t j = 0; j < names_.size(); ++j)
    raw_(2 * K_ + static_cast<int>(j)) = std::log(s.theta_inv.at(names_[j]));
}

void ReparamVector::set_raw(const Vec& v) {
  if (v.size() != raw_.size())
    throw DimensionMismatch("ReparamVector: raw length");
  raw_ = v;
}

HyperparamSchedule ReparamVector::schedule() const {
  HyperparamSchedule s;
  s.kind = kind_;
  s.K = K_;
  s.alphas.resize(K_);
  s.betas.resize(K_);
  for (int k = 0; k < K_; ++k) s.alphas[k] = std::exp(raw_(k));
  for (int k = 0; k < K_; ++k) s.betas[k] = raw_(K_ + k);
  for (size_t j = 0; j < names_.size(); ++j)
    s.theta_inv[names_[j]] = std::exp(raw_(2 * K_ + static_cast<int>(j)));
  return s;
}

Vec ReparamVector::grad_to_raw(const LossGradient& g) const {
  if (static_cast<int>(g.dalpha.size()) != K_ ||
      static_cast<int>(g.dbeta.size()) != K_)
    throw DimensionMismatch("grad_to_raw: gradient length");
  Vec out(raw_.size());
  for (int k = 0; k < K_; ++k) out(k) = g.dalpha[k] * std::exp(raw_(k));
  for (int k = 0; k < K_; ++k) out(K_ + k) = g.dbeta[k];
  for (size_t j = 0; j < names_.size(); ++j) {
    int i = 2 * K_ + static_cast<int>(j);
    out(i) = g.dtheta_inv.at(names_[j]) * std::exp(raw_(i));
  }
  return out;
}

}  // namespace lacert
