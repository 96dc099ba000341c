#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "lacert/families.hpp"
#include "lacert/linalg.hpp"

namespace lacert {

struct BoxInverted : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StepUnderflow : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonFiniteIterate : std::runtime_error {
  NonFiniteIterate(std::string what, int at) : std::runtime_error(std::move(what)), k(at) {}
  int k;
};

enum class EngineKind { gd, prox_gd, admm, osqp, scs };

const char* engine_name(EngineKind k);
EngineKind engine_from_name(const std::string& s);
bool admm_based(EngineKind k);

// proximal / projection primitives
Vec prox_l1(const Vec& v, double t);
Vec project_nonneg(const Vec& v);
Vec project_box(const Vec& v, const Vec& l, const Vec& u);
Vec project_soc(const Vec& v);  // (t, x) block

using ThetaInv = std::map<std::string, double>;  // ordered, deterministic

struct HyperparamSchedule {
  EngineKind kind = EngineKind::gd;
  int K = 0;
  std::vector<double> alphas;
  std::vector<double> betas;
  ThetaInv theta_inv;

  void validate() const;  // throws InvalidConfig
};

// names and defaults of the time-invariant hyperparameters per engine
std::vector<std::string> theta_inv_names(EngineKind k);
ThetaInv theta_inv_defaults(EngineKind k);

struct IterateTrace {
  std::vector<Vec> ys;  // y^0..y^K
  std::vector<Vec> zs;  // z^0..z^K
  std::vector<double> metrics;         // per-iterate performance metric
  std::vector<double> primal_res, dual_res;  // conic engines, else empty
  int factorizations = 0;
  double wall_seconds = 0.0;
};

// intermediates of one T application, kept for the reverse pass
struct StepData {
  Vec y;
  std::vector<Vec> stash;
};

// One of the five Table-1 methods bound to an instance, with the
// time-invariant hyperparameters baked in (factorization done once here).
class FixedPointOperator {
 public:
  virtual ~FixedPointOperator() = default;

  EngineKind kind() const { return kind_; }
  int dim() const { return dim_; }
  const ThetaInv& theta_inv() const { return theta_inv_; }
  int factorizations() const { return factorizations_; }

  // y = T(z; alpha) plus whatever the adjoint pass needs
  virtual StepData step(const Vec& z, double alpha) const = 0;
  Vec apply(const Vec& z, double alpha) const { return step(z, alpha).y; }

  // reverse-mode: given ybar, accumulate into zbar / alphabar / invbar
  virtual void step_vjp(const StepData& sd, const Vec& z, double alpha,
                        const Vec& ybar, Vec& zbar, double& alphabar,
                        ThetaInv& invbar) const = 0;

  // S(z) with T_alpha(z) = (1 - alpha/2) z + (alpha/2) S(z); ADMM kinds only
  virtual Vec fixed_point_map(const Vec& z) const;

  // diagonal of R(theta_inv); identity for plain ADMM
  virtual Vec metric_diag() const;

  // per-iterate performance metric (suboptimality or residual sum)
  virtual double metric_at(const Vec& z, const Vec& y) const = 0;

  // training loss at the final iterate and its reverse-mode seed
  virtual double loss(const Vec& zK, const Vec& yK) const = 0;
  virtual void loss_vjp(const Vec& zK, const Vec& yK, Vec& zbar, Vec& ybar,
                        ThetaInv& invbar) const = 0;

  // Appendix-A primal/dual residual pair; Unsupported for non-conic kinds
  virtual std::pair<double, double> residual_pair(const Vec& z) const;

 protected:
  FixedPointOperator(EngineKind kind, ThetaInv theta_inv, int dim)
      : kind_(kind), theta_inv_(std::move(theta_inv)), dim_(dim) {}
  double inv(const std::string& name) const;

  EngineKind kind_;
  ThetaInv theta_inv_;
  int dim_;
  int factorizations_ = 0;
};

std::unique_ptr<FixedPointOperator> bind_engine(
    EngineKind kind, std::shared_ptr<const InstanceOps> ops,
    const ThetaInv& theta_inv);

// gd / prox_gd on an arbitrary composite oracle (synthetic test functions)
std::unique_ptr<FixedPointOperator> bind_gradient_engine(
    EngineKind kind, std::shared_ptr<const CompositeOracle> oracle);

IterateTrace run_accelerated(const FixedPointOperator& op,
                             const HyperparamSchedule& sched, int K = -1);

// per-iterate Appendix-A residuals for a finished trace
std::vector<std::pair<double, double>> residuals(const FixedPointOperator& op,
                                                 const IterateTrace& trace);

HyperparamSchedule nesterov_schedule(EngineKind kind, int K, double mu, double L);
HyperparamSchedule vanilla_admm_schedule(EngineKind kind, int K);

struct BacktrackResult {
  double alpha;
  Vec znew;
  int evals;
};

// Armijo line search (prox-gradient decrease test for composite families)
BacktrackResult backtracking_step(const InstanceOps& ops, const Vec& z,
                                  double alpha0, double shrink, double c1);

void trace_to_csv(const IterateTrace& trace, const std::string& path);

}  // namespace lacert
