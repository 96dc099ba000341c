#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "lacert/linalg.hpp"

namespace lacert {

struct InvalidConfig : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct Unsupported : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown by iterative reference solvers at the iteration cap; carries the
// best iterate found so far.
struct DidNotConverge : std::runtime_error {
  DidNotConverge(std::string what, Vec best, double res)
      : std::runtime_error(std::move(what)),
        best_iterate(std::move(best)),
        residual(res) {}
  Vec best_iterate;
  double residual;
};

enum class FamilyKind { lasso, nonneg_ls, logistic, random_qp, random_socp };

const char* family_name(FamilyKind k);
FamilyKind family_from_name(const std::string& s);

struct Cones {
  int zero = 0;
  int nonneg = 0;
  std::vector<int> soc;
  int total() const;
};

struct FamilyConfig {
  FamilyKind kind = FamilyKind::lasso;
  int n = 50;  // decision dim; conic families: primal dim
  int d = 25;  // observation dim (lasso/nonneg_ls) or feature dim (logistic)
  int m = 0;   // logistic data points; conic constraint rows
  int m_eq = 0;            // random_qp equality rows (l == u)
  Cones cones;             // random_socp cone layout (rows ordered zero, nonneg, soc)
  std::uint64_t data_seed = 0;
  double reg = 0.1;        // lasso l1 weight
  double cluster_sep = 1.0;  // logistic cluster mean offset along a random direction
  double huber_rho = 1.0;  // scale of planted socp slack/dual magnitudes
  double plant_std = 1.0;  // std of the planted signal / ground truth
  double ref_tol = 1e-10;
  int ref_cap = 200000;

  void validate() const;  // throws InvalidConfig
  bool is_conic() const {
    return kind == FamilyKind::random_qp || kind == FamilyKind::random_socp;
  }
};

struct ParametricInstance {
  FamilyConfig cfg;
  std::uint64_t instance_seed = 0;
  Vec x;       // parameter vector (conic: stacked per-instance data)
  Vec zstar;   // reference solution in decision-variable space
  double fstar = 0.0;
  Vec ztrue;       // lasso: sparse ground-truth signal behind x
  Vec dual_star;   // conic: planted dual (qp: y*, socp: v*)
  Vec slack_star;  // socp: planted slack s*
};

struct SmoothnessConstants {
  double mu = 0.0;
  double L = 1.0;
};

struct ConicData {
  Mat P;  // PSD quadratic term
  Mat A;
  Vec c;
  Vec l, u;     // random_qp box
  Vec b;        // random_socp right-hand side
  Cones cones;  // random_socp only
};

ParametricInstance sample_instance(const FamilyConfig& cfg,
                                   std::uint64_t instance_seed);

// Fixed design matrix for lasso / nonneg_ls (depends only on data_seed).
Mat design_matrix(const FamilyConfig& cfg);

// mu/L of the smooth part. For logistic the bound is taken over the given
// training instances; the config-only overload uses the canonical ten
// training seeds.
SmoothnessConstants smoothness_constants(const FamilyConfig& cfg);
SmoothnessConstants smoothness_constants(
    const FamilyConfig& cfg, const std::vector<ParametricInstance>& train);

struct ReferenceSolution {
  Vec zstar;
  double fstar;
  double residual;
  int iterations;
};

// Runs an accelerated baseline to the requested optimality residual
// (gradient norm / prox fixed-point / planted KKT certificate).
ReferenceSolution reference_solution(const FamilyConfig& cfg, const Vec& x,
                                     double tol);

ConicData to_conic(const ParametricInstance& inst);

// Canonical seeds: train i -> i, test j -> 1000000 + j, ood j -> 2000000 + j.
std::uint64_t train_seed(int i);
std::uint64_t test_seed(int j);
std::uint64_t ood_seed(int j);

// Out-of-distribution shift used by the evaluation harness: the ground-truth
// (or planted-solution) variance is tripled.
FamilyConfig ood_shift(const FamilyConfig& cfg);

// Composite objective f + g exposed through callbacks, so the gradient-step
// engines can also run on synthetic functions in the certified class.
class CompositeOracle {
 public:
  virtual ~CompositeOracle() = default;
  virtual int zdim() const = 0;
  virtual bool composite() const = 0;  // has a nonsmooth g term
  virtual double f(const Vec& z) const = 0;
  virtual Vec grad(const Vec& z) const = 0;
  virtual Vec hvp(const Vec& z, const Vec& v) const = 0;
  virtual double g(const Vec& z) const = 0;
  virtual Vec prox_g(const Vec& v, double t) const = 0;
  // reverse-mode through w = prox_g(v, t); kink/boundary derivative follows
  // the active-set convention (zero on the clamped side)
  virtual void prox_g_vjp(const Vec& v, double t, const Vec& w,
                          const Vec& wbar, Vec& vbar, double& tbar) const = 0;
  virtual Vec g_subgrad(const Vec& z) const = 0;
  virtual double objective_star() const = 0;  // reference optimal value
  double objective(const Vec& z) const { return f(z) + g(z); }
};

// Callable views of one instance with the family data realized once.
class InstanceOps : public CompositeOracle {
 public:
  explicit InstanceOps(ParametricInstance inst);

  const ParametricInstance& instance() const { return inst_; }
  int zdim() const override;
  bool composite() const override;

  double f(const Vec& z) const override;
  Vec grad(const Vec& z) const override;
  Vec hvp(const Vec& z, const Vec& v) const override;
  double g(const Vec& z) const override;  // l1 value; 0 for indicator terms
  Vec prox_g(const Vec& v, double t) const override;
  void prox_g_vjp(const Vec& v, double t, const Vec& w, const Vec& wbar,
                  Vec& vbar, double& tbar) const override;
  Vec g_subgrad(const Vec& z) const override;
  double objective_star() const override { return inst_.fstar; }

  const ConicData* conic() const { return conic_ ? conic_.get() : nullptr; }
  // smooth-part data matrix (lasso/nonneg_ls: A; logistic: bias-extended)
  const Mat& data_matrix() const { return a_; }
  const Vec& target() const { return target_; }

 private:
  ParametricInstance inst_;
  Mat a_;
  Vec target_;  // lasso/nonneg_ls observation; logistic labels
  std::unique_ptr<ConicData> conic_;
};

}  // namespace lacert
