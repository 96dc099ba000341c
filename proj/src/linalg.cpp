#include "lacert/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace lacert {

SymMatrix::SymMatrix(Mat m) : m_(std::move(m)) {
  if (m_.rows() < 1 || m_.rows() != m_.cols())
    throw DimensionMismatch("SymMatrix: need square matrix, dim >= 1");
  double scale = m_.cwiseAbs().maxCoeff();
  double tol = 1e-12 * (scale > 0 ? scale : 1.0);
  for (int i = 0; i < m_.rows(); ++i)
    for (int j = 0; j < i; ++j) {
      if (std::abs(m_(i, j) - m_(j, i)) > tol)
        throw DimensionMismatch("SymMatrix: input not symmetric");
      double v = 0.5 * (m_(i, j) + m_(j, i));
      m_(i, j) = m_(j, i) = v;
    }
}

SpdFactor factorize_spd(const SymMatrix& a) {
  const Mat& m = a.mat();
  const int n = a.dim();
  if (n == 1) {
    if (m(0, 0) <= 1e-14 * m(0, 0) || m(0, 0) <= 0.0)
      throw NotPositiveDefinite("factorize_spd: 1x1 pivot not positive");
    Mat l(1, 1);
    l(0, 0) = std::sqrt(m(0, 0));
    return SpdFactor(std::move(l));
  }
  double max_diag = m.diagonal().maxCoeff();
  double pivot_floor = n * 1e-14 * (max_diag > 0 ? max_diag : 1.0);
  Mat l = Mat::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    double d = m(j, j) - l.row(j).head(j).squaredNorm();
    if (d <= pivot_floor)
      throw NotPositiveDefinite("factorize_spd: pivot " + std::to_string(d) +
                                " at column " + std::to_string(j));
    l(j, j) = std::sqrt(d);
    for (int i = j + 1; i < n; ++i) {
      double s = m(i, j) - l.row(i).head(j).dot(l.row(j).head(j));
      l(i, j) = s / l(j, j);
    }
  }
  return SpdFactor(std::move(l));
}

Vec SpdFactor::solve(const Vec& b) const {
  if (b.size() != l_.rows())
    throw DimensionMismatch("solve_factored: rhs length " +
                            std::to_string(b.size()) + " != dim " +
                            std::to_string(l_.rows()));
  Vec y = l_.triangularView<Eigen::Lower>().solve(b);
  return l_.transpose().triangularView<Eigen::Upper>().solve(y);
}

Mat SpdFactor::solve(const Mat& b) const {
  if (b.rows() != l_.rows())
    throw DimensionMismatch("solve_factored: rhs rows mismatch");
  Mat y = l_.triangularView<Eigen::Lower>().solve(b);
  return l_.transpose().triangularView<Eigen::Upper>().solve(y);
}

EigDecomposition sym_eig(const SymMatrix& a, int sweep_cap) {
  const int n = a.dim();
  if (n == 1) {
    EigDecomposition e;
    e.values = Vec::Constant(1, a(0, 0));
    e.vectors = Mat::Identity(1, 1);
    return e;
  }
  Mat m = a.mat();
  Mat v = Mat::Identity(n, n);
  double norm = m.norm();
  double stop = 1e-14 * (norm > 0 ? norm : 1.0);

  auto off_norm = [&]() {
    double s = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) s += m(i, j) * m(i, j);
    return std::sqrt(2.0 * s);
  };

  int sweep = 0;
  while (off_norm() > stop) {
    if (++sweep > sweep_cap)
      throw NoConvergence("sym_eig: Jacobi sweep cap exceeded");
    for (int p = 0; p < n - 1; ++p)
      for (int q = p + 1; q < n; ++q) {
        double apq = m(p, q);
        if (std::abs(apq) <= 1e-300) continue;
        double app = m(p, p), aqq = m(q, q);
        double tau = (aqq - app) / (2.0 * apq);
        double t = (tau >= 0 ? 1.0 : -1.0) /
                   (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        double c = 1.0 / std::sqrt(1.0 + t * t);
        double s = t * c;
        // two-sided rotation on rows/cols p,q
        for (int k = 0; k < n; ++k) {
          double mkp = m(k, p), mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (int k = 0; k < n; ++k) {
          double mpk = m(p, k), mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
        for (int k = 0; k < n; ++k) {
          double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
  }

  // sort ascending
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&](int i, int j) { return m(i, i) < m(j, j); });
  EigDecomposition e;
  e.values.resize(n);
  e.vectors.resize(n, n);
  for (int i = 0; i < n; ++i) {
    e.values(i) = m(idx[i], idx[i]);
    e.vectors.col(i) = v.col(idx[i]);
  }
  return e;
}

SymMatrix psd_project(const SymMatrix& a) {
  EigDecomposition e = sym_eig(a);
  Vec clipped = e.values.cwiseMax(0.0);
  Mat out = e.vectors * clipped.asDiagonal() * e.vectors.transpose();
  out = 0.5 * (out + out.transpose());
  return SymMatrix(std::move(out));
}

}  // namespace lacert
