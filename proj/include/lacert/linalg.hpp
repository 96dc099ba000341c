#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace lacert {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct NotPositiveDefinite : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NoConvergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Symmetric matrix with checked construction (1e-12 relative symmetry).
class SymMatrix {
 public:
  explicit SymMatrix(Mat m);
  static SymMatrix zero(int dim) { return SymMatrix(Mat::Zero(dim, dim)); }
  static SymMatrix identity(int dim) {
    return SymMatrix(Mat::Identity(dim, dim));
  }

  int dim() const { return static_cast<int>(m_.rows()); }
  const Mat& mat() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }

 private:
  Mat m_;
};

// Cholesky factor A = L Lᵀ with identity permutation.
class SpdFactor {
 public:
  int dim() const { return static_cast<int>(l_.rows()); }
  const Mat& lower() const { return l_; }
  Vec solve(const Vec& b) const;
  Mat solve(const Mat& b) const;
  Mat reconstruct() const { return l_ * l_.transpose(); }

 private:
  friend SpdFactor factorize_spd(const SymMatrix& a);
  explicit SpdFactor(Mat l) : l_(std::move(l)) {}
  Mat l_;
};

// Unpivoted Cholesky; throws NotPositiveDefinite when a pivot falls at or
// below dim * 1e-14 * max(diag).
SpdFactor factorize_spd(const SymMatrix& a);

inline Vec solve_factored(const SpdFactor& f, const Vec& b) {
  return f.solve(b);
}

struct EigDecomposition {
  Vec values;  // ascending
  Mat vectors; // orthonormal columns, A = V diag(values) Vᵀ
};

// Cyclic Jacobi eigensolver; NoConvergence after sweep_cap sweeps.
EigDecomposition sym_eig(const SymMatrix& a, int sweep_cap = 100);

// Frobenius-nearest PSD matrix (eigenvalues clipped at zero).
SymMatrix psd_project(const SymMatrix& a);

}  // namespace lacert
