#pragma once

// Splitting solver for the small dense SDPs produced by the certifier:
//
//   maximize   tr(objective·G) + scalar_objective·t
//   s.t.       tr(gmat_c·G) + scalars_c·t  (<= | ==)  rhs_c
//              M⁽ᵇ⁾ ⪰ 0 for each LMI block b, where entry (i,j) of M⁽ᵇ⁾
//                 is tr(gmat·G) + scalars·t − rhs of a psd_block constraint
//              G ⪰ 0
//
// with G a symmetric matrix variable and t free scalar variables.

#include <stdexcept>
#include <string>
#include <vector>

#include "lacert/linalg.hpp"

namespace lacert {

struct SolverFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class SdpSense { le, eq, psd_block };

struct SdpConstraint {
  Mat gmat;     // symmetric coefficient on G
  Vec scalars;  // coefficients on t; empty means all zero
  double rhs = 0.0;
  SdpSense sense = SdpSense::le;
  // psd_block only: which LMI block this entry belongs to and the
  // upper-triangular slot (row <= col) it fills; slots left unfilled are
  // pinned to zero
  int block = -1;
  int row = 0;
  int col = 0;
};

struct SdpProblem {
  int psd_dim = 0;
  int scalar_dim = 0;
  Mat objective;         // symmetric, psd_dim x psd_dim
  Vec scalar_objective;  // size scalar_dim (or empty when scalar_dim == 0)
  std::vector<SdpConstraint> constraints;
  std::vector<int> block_dims;  // LMI block sizes; empty when none

  void validate() const;  // throws DimensionMismatch on inconsistency
};

enum class SdpStatus { solved, max_iterations, infeasible_suspected };

std::string status_name(SdpStatus s);

struct SdpSolution {
  Mat gmat;
  Vec scalars;
  // One multiplier per constraint, in input order. For eq/le rows this is
  // the sensitivity d(objective)/d(rhs_c); le multipliers are >= 0. For
  // psd_block rows it is entry (row, col) of that block's multiplier
  // matrix N ⪰ 0 (stored once; off-diagonal entries weigh twice in any
  // stationarity sum).
  Vec duals;
  double objective = 0.0;
  SdpStatus status = SdpStatus::max_iterations;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double gap = 0.0;
  int iterations = 0;
};

struct SdpOptions {
  double tol = 1e-6;
  int max_iter = 100000;
  double over_relax = 1.5;  // relaxation of the affine half-step
  int ruiz_passes = 10;     // diagonal equilibration passes on the data
  int check_every = 25;     // termination checks use unscaled residuals
};

struct KktResiduals {
  double primal = 0.0;  // worst constraint or cone violation
  double dual = 0.0;    // worst stationarity or dual-cone violation
  double gap = 0.0;     // |primal objective − dual objective|
};

// Alternates between a projection onto the affine constraint set (one
// cached SPD factorization of the normal system) and a projection onto the
// cone (PSD on G and the LMI blocks, nonnegativity on inequality slacks),
// with over-relaxation and a deterministic penalty rebalancing rule.
SdpSolution solve_sdp(const SdpProblem& p, const SdpOptions& opts = {});
SdpSolution solve_sdp(const SdpProblem& p, double tol, int max_iter);

// Recomputes feasibility, stationarity, and the duality gap from the
// problem data alone; shares nothing with the solver iteration.
KktResiduals kkt_residuals(const SdpProblem& p, const SdpSolution& sol);

// Debug dumps; matrices appear as dense row-major arrays.
std::string sdp_problem_json(const SdpProblem& p);
std::string sdp_solution_json(const SdpSolution& sol);

}  // namespace lacert
