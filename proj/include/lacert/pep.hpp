#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lacert/engines.hpp"
#include "lacert/linalg.hpp"
#include "lacert/sdp.hpp"

namespace lacert {

struct UnsupportedCombination : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DualsUnavailable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class PepClass { smooth_convex, quadratic, nonexpansive };
enum class PepMetric { function_gap, distance_sq, fp_residual };
enum class Averaging { half_alpha, alpha };

const char* pep_class_name(PepClass k);
const char* pep_metric_name(PepMetric m);

// Problem class + performance metric a certificate is stated for.
//   function_gap  : smooth_convex with mu == 0; bounds f(z^K) [+ g(y^K)] - F*
//   distance_sq   : smooth_convex or quadratic; bounds ||z^K - z*||^2
//   fp_residual   : nonexpansive;               bounds ||z^K - S(z^K)||^2
// `averaging` selects how a step size alpha^k maps to the averaging weight
// a^k of the nonexpansive update (a = alpha/2 matches the splitting engines).
struct ClassSpec {
  PepClass kind = PepClass::smooth_convex;
  double mu = 0.0;
  double L = 1.0;
  PepMetric metric = PepMetric::function_gap;
  bool composite = false;
  Averaging averaging = Averaging::half_alpha;

  int metric_case() const;  // 1, 2, 3; 0 for fp_residual
  void validate() const;    // throws UnsupportedCombination
};

// Coefficients of every algorithm quantity in the column basis P:
// z^k = P rho_z^k, y^k = P rho_y^k, gradient/operator evaluations P sigma^k,
// subgradients P tau^k.  Function classes use columns
//   (z^0, z*, df at z^0..z^K and z*[, dg at y^1..y^K and z*]),
// the nonexpansive class (z^0, z*, S at z^0..z^K and z*).
struct CoefficientTableau {
  std::vector<std::string> basis;
  std::vector<Vec> rho_z;  // z^0..z^K
  std::vector<Vec> rho_y;  // y^0..y^K (y^0 = z^0)
  Vec rho_star;
  std::vector<Vec> sigma;  // evaluations at z^0..z^K
  Vec sigma_star;
  std::vector<Vec> tau;  // subgradients at y^1..y^K (index k-1); composite only
  Vec tau_star;
};

struct Certificate {
  double gamma = 0.0;
  ClassSpec cls;
  int budget = 0;  // K
  std::uint64_t schedule_fingerprint = 0;
  SdpStatus status = SdpStatus::solved;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double gap = 0.0;
  int iterations = 0;
  std::string metric_note;
};

std::uint64_t schedule_fingerprint(const HyperparamSchedule& sched);

// The recursion used depends on the class kind only: function classes follow
// the prox-gradient update, the nonexpansive class the averaged update with
// weight a^k derived from alpha^k.  theta_inv never enters the coefficients.
CoefficientTableau propagate_coefficients(const HyperparamSchedule& sched,
                                          const ClassSpec& cls, int K);

SdpProblem build_pep_sdp(const HyperparamSchedule& sched, const ClassSpec& cls,
                         int K);

Certificate certify(const HyperparamSchedule& sched, const ClassSpec& cls,
                    int K, const SdpOptions& opts = {});

// Exact worst case over Q_{mu,L} quadratics (g == 0) of the schedule's final
// distance contraction: max over an eigenvalue grid of the squared scalar
// propagation product.  Lower bound on the certified gamma; equal for
// GD-type schedules.
double spectral_oracle_quadratic(const HyperparamSchedule& sched, double mu,
                                 double L, int K, int grid = 2001);

struct CertifyGradient {
  double gamma = 0.0;
  Vec dalpha;  // dgamma/dalpha^k, size K
  Vec dbeta;   // dgamma/dbeta^k, size K
  bool used_fallback = false;
};

// Envelope-theorem gradient of gamma from the SDP duals; falls back to
// central finite differences when the dual residual exceeds 1e-5.
CertifyGradient certify_gradient(const HyperparamSchedule& sched,
                                 const ClassSpec& cls, int K,
                                 const SdpOptions& opts = {});

std::string certificate_json(const Certificate& cert);

}  // namespace lacert
