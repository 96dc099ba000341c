#include "lacert/sdp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <utility>

#include <json.hpp>

namespace lacert {

namespace {

constexpr double kRt2 = 1.4142135623730951;

int tri(int p) { return p * (p + 1) / 2; }
int tri_index(int i, int j) { return j * (j + 1) / 2 + i; }  // i <= j

// svec scales off-diagonals by sqrt(2) so dot products match tr(A B)
Vec svec(const Mat& a) {
  const int p = static_cast<int>(a.rows());
  Vec v(tri(p));
  int k = 0;
  for (int j = 0; j < p; ++j)
    for (int i = 0; i <= j; ++i, ++k)
      v(k) = i == j ? a(i, j) : kRt2 * a(i, j);
  return v;
}

Mat smat(const Vec& v, int p) {
  Mat a(p, p);
  int k = 0;
  for (int j = 0; j < p; ++j)
    for (int i = 0; i <= j; ++i, ++k) {
      double x = i == j ? v(k) : v(k) / kRt2;
      a(i, j) = x;
      a(j, i) = x;
    }
  return a;
}

Mat force_sym(const Mat& a) { return 0.5 * (a + a.transpose()); }

double min_eig(const Mat& a) {
  if (a.rows() == 0) return 0.0;
  return sym_eig(SymMatrix(force_sym(a))).values(0);
}

Vec psd_part(const Vec& v, int p) {
  return svec(psd_project(SymMatrix(smat(v, p))).mat());
}

double inner(const Mat& a, const Mat& b) {
  return (a.array() * b.array()).sum();
}

// row/column layout of the conic embedding  min c·x  s.t. A x + s = b,
// s in {0}^eq x R+^le x PSD-blocks, x = [svec(G); t] with svec(G) in PSD
struct Assembled {
  int sd = 0, nx = 0, m = 0, n_eq = 0, n_le = 0;
  Mat a;
  Vec b, c;
  double anorm = 0.0, bnorm = 0.0, cnorm = 0.0;  // unscaled data norms
  std::vector<int> block_start;  // first svec row of each LMI block
  std::vector<int> row_of;       // constraint -> row
  std::vector<int> con_of;       // row -> constraint, -1 for filler
};

Assembled assemble(const SdpProblem& p) {
  Assembled w;
  w.sd = tri(p.psd_dim);
  w.nx = w.sd + p.scalar_dim;
  for (const SdpConstraint& c : p.constraints) {
    if (c.sense == SdpSense::eq) ++w.n_eq;
    if (c.sense == SdpSense::le) ++w.n_le;
  }
  w.m = w.n_eq + w.n_le;
  for (int d : p.block_dims) {
    w.block_start.push_back(w.m);
    w.m += tri(d);
  }
  w.a = Mat::Zero(w.m, w.nx);
  w.b = Vec::Zero(w.m);
  w.row_of.assign(p.constraints.size(), -1);
  w.con_of.assign(w.m, -1);

  auto fill_coeffs = [&](int r, const SdpConstraint& c, double scale) {
    w.a.row(r).head(w.sd) = scale * svec(c.gmat).transpose();
    if (c.scalars.size() > 0)
      w.a.row(r).tail(p.scalar_dim) = scale * c.scalars.transpose();
  };

  int next_eq = 0, next_le = w.n_eq;
  for (size_t ci = 0; ci < p.constraints.size(); ++ci) {
    const SdpConstraint& c = p.constraints[ci];
    if (c.sense == SdpSense::psd_block) {
      // slack holds svec(M) of the block, so the row is negated and the
      // off-diagonal slots carry the svec sqrt(2)
      int r = w.block_start[c.block] + tri_index(c.row, c.col);
      double scale = c.row == c.col ? 1.0 : kRt2;
      fill_coeffs(r, c, -scale);
      w.b(r) = -scale * c.rhs;
      w.row_of[ci] = r;
      w.con_of[r] = static_cast<int>(ci);
      continue;
    }
    int r = c.sense == SdpSense::eq ? next_eq++ : next_le++;
    fill_coeffs(r, c, 1.0);
    w.b(r) = c.rhs;
    w.row_of[ci] = r;
    w.con_of[r] = static_cast<int>(ci);
  }

  w.c = Vec::Zero(w.nx);
  w.c.head(w.sd) = -svec(p.objective);
  if (p.scalar_dim > 0) w.c.tail(p.scalar_dim) = -p.scalar_objective;
  w.anorm = w.m > 0 ? w.a.cwiseAbs().maxCoeff() : 0.0;
  w.bnorm = w.m > 0 ? w.b.cwiseAbs().maxCoeff() : 0.0;
  w.cnorm = w.c.cwiseAbs().maxCoeff();
  return w;
}

// Ruiz equilibration; PSD groups (the svec(G) columns, each LMI block's
// rows) share one factor so diagonal scaling maps cones to cones
void ruiz_scale(const SdpProblem& p, Assembled& w, int passes, Vec& rowscale,
                Vec& colscale) {
  rowscale = Vec::Ones(w.m);
  colscale = Vec::Ones(w.nx);
  if (w.m == 0) return;
  auto factor = [](double norm) { return norm > 0 ? 1.0 / std::sqrt(norm) : 1.0; };
  for (int pass = 0; pass < passes; ++pass) {
    for (int r = 0; r < w.n_eq + w.n_le; ++r) {
      double f = factor(w.a.row(r).lpNorm<Eigen::Infinity>());
      w.a.row(r) *= f;
      rowscale(r) *= f;
    }
    for (size_t bi = 0; bi < p.block_dims.size(); ++bi) {
      int r0 = w.block_start[bi], nr = tri(p.block_dims[bi]);
      double f = factor(
          w.a.middleRows(r0, nr).lpNorm<Eigen::Infinity>());
      w.a.middleRows(r0, nr) *= f;
      rowscale.segment(r0, nr) *= f;
    }
    double fg = factor(w.a.leftCols(w.sd).lpNorm<Eigen::Infinity>());
    w.a.leftCols(w.sd) *= fg;
    colscale.head(w.sd) *= fg;
    for (int j = w.sd; j < w.nx; ++j) {
      double f = factor(w.a.col(j).lpNorm<Eigen::Infinity>());
      w.a.col(j) *= f;
      colscale(j) *= f;
    }
  }
  w.b = rowscale.cwiseProduct(w.b);
  w.c = colscale.cwiseProduct(w.c);
}

struct Candidate {
  SdpSolution sol;
  KktResiduals res;
  double score = 0.0;
};

}  // namespace

void SdpProblem::validate() const {
  auto sym_ok = [](const Mat& m) {
    double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale;
  };
  if (psd_dim < 1) throw DimensionMismatch("sdp: psd_dim must be positive");
  if (scalar_dim < 0) throw DimensionMismatch("sdp: negative scalar_dim");
  if (objective.rows() != psd_dim || objective.cols() != psd_dim)
    throw DimensionMismatch("sdp: objective dimension mismatch");
  if (!sym_ok(objective)) throw DimensionMismatch("sdp: objective asymmetric");
  if (scalar_objective.size() != scalar_dim &&
      !(scalar_dim == 0 && scalar_objective.size() == 0))
    throw DimensionMismatch("sdp: scalar objective size mismatch");
  for (int d : block_dims)
    if (d < 1) throw DimensionMismatch("sdp: empty LMI block");
  std::vector<char> seen;
  std::vector<int> offs;
  int slots = 0;
  for (int d : block_dims) {
    offs.push_back(slots);
    slots += tri(d);
  }
  seen.assign(slots, 0);
  for (const SdpConstraint& c : constraints) {
    if (c.gmat.rows() != psd_dim || c.gmat.cols() != psd_dim)
      throw DimensionMismatch("sdp: constraint matrix dimension mismatch");
    if (!sym_ok(c.gmat))
      throw DimensionMismatch("sdp: constraint matrix asymmetric");
    if (c.scalars.size() != 0 && c.scalars.size() != scalar_dim)
      throw DimensionMismatch("sdp: constraint scalar row size mismatch");
    if (c.sense != SdpSense::psd_block) continue;
    if (c.block < 0 || c.block >= static_cast<int>(block_dims.size()))
      throw DimensionMismatch("sdp: block index out of range");
    int d = block_dims[c.block];
    if (c.row < 0 || c.col < c.row || c.col >= d)
      throw DimensionMismatch("sdp: block entry out of range");
    char& flag = seen[offs[c.block] + tri_index(c.row, c.col)];
    if (flag) throw DimensionMismatch("sdp: duplicate block entry");
    flag = 1;
  }
}

std::string status_name(SdpStatus s) {
  switch (s) {
    case SdpStatus::solved: return "solved";
    case SdpStatus::max_iterations: return "max_iterations";
    case SdpStatus::infeasible_suspected: return "infeasible_suspected";
  }
  return "unknown";
}

KktResiduals kkt_residuals(const SdpProblem& p, const SdpSolution& sol) {
  const Mat& g = sol.gmat;
  const Vec& t = sol.scalars;
  if (g.rows() != p.psd_dim || g.cols() != p.psd_dim)
    throw DimensionMismatch("kkt_residuals: G dimension mismatch");
  if (sol.duals.size() != static_cast<long>(p.constraints.size()))
    throw DimensionMismatch("kkt_residuals: dual count mismatch");

  KktResiduals out;
  std::vector<Mat> mval, nmat;
  for (int d : p.block_dims) {
    mval.push_back(Mat::Zero(d, d));
    nmat.push_back(Mat::Zero(d, d));
  }

  Mat zmat = -p.objective;
  Vec trow = p.scalar_dim > 0 ? Vec(p.scalar_objective) : Vec();
  double dobj = 0.0;

  for (size_t ci = 0; ci < p.constraints.size(); ++ci) {
    const SdpConstraint& c = p.constraints[ci];
    double val = inner(c.gmat, g);
    if (c.scalars.size() > 0) val += c.scalars.dot(t);
    double nu = sol.duals(static_cast<long>(ci));
    if (c.sense == SdpSense::psd_block) {
      mval[c.block](c.row, c.col) = val - c.rhs;
      mval[c.block](c.col, c.row) = val - c.rhs;
      nmat[c.block](c.row, c.col) = nu;
      nmat[c.block](c.col, c.row) = nu;
      double wgt = (c.row == c.col ? 1.0 : 2.0) * nu;
      zmat -= wgt * c.gmat;
      if (c.scalars.size() > 0) trow += wgt * c.scalars;
      dobj -= wgt * c.rhs;
      continue;
    }
    if (c.sense == SdpSense::eq) {
      out.primal = std::max(out.primal, std::abs(val - c.rhs));
    } else {
      out.primal = std::max(out.primal, val - c.rhs);
      out.dual = std::max(out.dual, -nu);  // le multipliers are nonnegative
    }
    zmat += nu * c.gmat;
    if (c.scalars.size() > 0) trow -= nu * c.scalars;
    dobj += nu * c.rhs;
  }

  out.primal = std::max(out.primal, -min_eig(g));
  for (const Mat& mv : mval) out.primal = std::max(out.primal, -min_eig(mv));
  out.primal = std::max(out.primal, 0.0);

  out.dual = std::max(out.dual, -min_eig(zmat));
  for (const Mat& nm : nmat) out.dual = std::max(out.dual, -min_eig(nm));
  if (trow.size() > 0)
    out.dual = std::max(out.dual, trow.cwiseAbs().maxCoeff());
  out.dual = std::max(out.dual, 0.0);

  double pobj = inner(p.objective, g);
  if (p.scalar_dim > 0) pobj += p.scalar_objective.dot(t);
  out.gap = std::abs(pobj - dobj);
  return out;
}

namespace {

// KKT polish: Newton's method on the optimality system of the SDP.
//
// The splitting iteration has an O(1/k) tail on degenerate problems, but it
// identifies the active inequalities long before the iterates themselves
// converge.  With the active set frozen the optimum solves the square
// nonlinear system
//
//   <A_c, G> + s_c.t = rhs_c                  (active constraints)
//   q - sum nu s + sum (2-d) N s = 0          (scalar stationarity)
//   sym(G Z) = 0 with Z = sum nu A - sum (2-d) N A - U
//   sym(N_b M_b) = 0                          (block complementarity)
//
// which Newton polishes superlinearly from the accuracy the splitting solver
// reaches quickly.  Conic feasibility of G, Z, N, M is not part of the
// system; the caller re-checks the polished point with kkt_residuals and
// keeps it only if it actually improves, so a wrong active-set guess is
// harmless.
std::optional<SdpSolution> newton_kkt(const SdpProblem& p,
                                      const SdpSolution& cur,
                                      const std::vector<int>& act) {
  const int pd = p.psd_dim;
  const int sd = p.scalar_dim;
  const int nb = static_cast<int>(p.block_dims.size());
  const int nc = static_cast<int>(p.constraints.size());
  const int spd = tri(pd);
  const int na = static_cast<int>(act.size());

  // block entry -> constraint index
  std::vector<std::vector<int>> slot(static_cast<size_t>(nb));
  for (int b = 0; b < nb; ++b)
    slot[static_cast<size_t>(b)].assign(
        static_cast<size_t>(tri(p.block_dims[static_cast<size_t>(b)])), -1);
  for (int c = 0; c < nc; ++c) {
    const SdpConstraint& con = p.constraints[static_cast<size_t>(c)];
    if (con.sense == SdpSense::psd_block)
      slot[static_cast<size_t>(con.block)]
          [static_cast<size_t>(tri_index(con.row, con.col))] = c;
  }

  // unknowns: svec(G) | t | nu_active | svec(N_b)...
  const int off_t = spd;
  const int off_nu = spd + sd;
  int total = off_nu + na;
  std::vector<int> off_n(static_cast<size_t>(nb));
  for (int b = 0; b < nb; ++b) {
    off_n[static_cast<size_t>(b)] = total;
    total += tri(p.block_dims[static_cast<size_t>(b)]);
  }
  // rows: active feasibility | scalar stationarity | sym(GZ) | sym(N M)...
  int rows = na + sd + spd;
  for (int b = 0; b < nb; ++b)
    rows += tri(p.block_dims[static_cast<size_t>(b)]);
  if (total > 2000) return std::nullopt;  // polish targets the small systems

  std::vector<Vec> asv(static_cast<size_t>(nc));
  for (int c = 0; c < nc; ++c)
    asv[static_cast<size_t>(c)] =
        svec(p.constraints[static_cast<size_t>(c)].gmat);

  struct State {
    Mat g;
    Vec t;
    Vec nu;                 // over all constraints, inactive pinned to zero
    std::vector<Mat> nmat;  // block multipliers
    std::vector<Mat> mval;  // block values minus rhs
    Mat z;                  // dual slack
  };

  auto build = [&](const Vec& x) {
    State s;
    s.g = smat(Vec(x.head(spd)), pd);
    s.t = sd > 0 ? Vec(x.segment(off_t, sd)) : Vec();
    s.nu = Vec::Zero(nc);
    for (int a = 0; a < na; ++a)
      s.nu(act[static_cast<size_t>(a)]) = x(off_nu + a);
    s.z = -p.objective;
    for (int b = 0; b < nb; ++b) {
      const int q = p.block_dims[static_cast<size_t>(b)];
      s.nmat.push_back(
          smat(Vec(x.segment(off_n[static_cast<size_t>(b)], tri(q))), q));
      s.mval.push_back(Mat::Zero(q, q));
    }
    for (int c = 0; c < nc; ++c) {
      const SdpConstraint& con = p.constraints[static_cast<size_t>(c)];
      if (con.sense == SdpSense::psd_block) {
        double val = inner(con.gmat, s.g);
        if (con.scalars.size() > 0) val += con.scalars.dot(s.t);
        s.mval[static_cast<size_t>(con.block)](con.row, con.col) = val - con.rhs;
        s.mval[static_cast<size_t>(con.block)](con.col, con.row) = val - con.rhs;
        const double n =
            s.nmat[static_cast<size_t>(con.block)](con.row, con.col);
        s.z -= (con.row == con.col ? 1.0 : 2.0) * n * con.gmat;
      } else {
        s.z += s.nu(c) * con.gmat;
      }
    }
    return s;
  };

  auto residual = [&](const State& s) {
    Vec r = Vec::Zero(rows);
    int row = 0;
    for (int a = 0; a < na; ++a) {
      const SdpConstraint& con =
          p.constraints[static_cast<size_t>(act[static_cast<size_t>(a)])];
      double val = inner(con.gmat, s.g);
      if (con.scalars.size() > 0) val += con.scalars.dot(s.t);
      r(row++) = val - con.rhs;
    }
    for (int j = 0; j < sd; ++j) {
      double v = p.scalar_objective(j);
      for (int c = 0; c < nc; ++c) {
        const SdpConstraint& con = p.constraints[static_cast<size_t>(c)];
        if (con.scalars.size() == 0) continue;
        if (con.sense == SdpSense::psd_block)
          v += (con.row == con.col ? 1.0 : 2.0) *
               s.nmat[static_cast<size_t>(con.block)](con.row, con.col) *
               con.scalars(j);
        else
          v -= s.nu(c) * con.scalars(j);
      }
      r(row++) = v;
    }
    r.segment(row, spd) = svec(Mat(0.5 * (s.g * s.z + s.z * s.g)));
    row += spd;
    for (int b = 0; b < nb; ++b) {
      const int q = p.block_dims[static_cast<size_t>(b)];
      const Mat& nm = s.nmat[static_cast<size_t>(b)];
      const Mat& mv = s.mval[static_cast<size_t>(b)];
      r.segment(row, tri(q)) = svec(Mat(0.5 * (nm * mv + mv * nm)));
      row += tri(q);
    }
    return r;
  };

  auto jacobian = [&](const State& s) {
    Mat jm = Mat::Zero(rows, total);
    int row = 0;
    for (int a = 0; a < na; ++a) {
      const int c = act[static_cast<size_t>(a)];
      const SdpConstraint& con = p.constraints[static_cast<size_t>(c)];
      jm.row(row).head(spd) = asv[static_cast<size_t>(c)].transpose();
      if (con.scalars.size() > 0)
        jm.row(row).segment(off_t, sd) = con.scalars.transpose();
      ++row;
    }
    for (int j = 0; j < sd; ++j) {
      for (int a = 0; a < na; ++a) {
        const SdpConstraint& con =
            p.constraints[static_cast<size_t>(act[static_cast<size_t>(a)])];
        if (con.scalars.size() > 0) jm(row, off_nu + a) = -con.scalars(j);
      }
      for (int b = 0; b < nb; ++b) {
        const int q = p.block_dims[static_cast<size_t>(b)];
        for (int k = 0; k < tri(q); ++k) {
          Vec ek = Vec::Zero(tri(q));
          ek(k) = 1.0;
          const Mat ekm = smat(ek, q);
          double v = 0.0;
          for (int jj = 0; jj < q; ++jj)
            for (int ii = 0; ii <= jj; ++ii) {
              const int c = slot[static_cast<size_t>(b)]
                                [static_cast<size_t>(tri_index(ii, jj))];
              if (c < 0) continue;
              const SdpConstraint& con = p.constraints[static_cast<size_t>(c)];
              if (con.scalars.size() > 0)
                v += (ii == jj ? 1.0 : 2.0) * ekm(ii, jj) * con.scalars(j);
            }
          jm(row, off_n[static_cast<size_t>(b)] + k) = v;
        }
      }
      ++row;
    }
    // sym(G Z): differentiate through both factors
    {
      auto put = [&](int colidx, const Mat& dm) {
        jm.block(row, colidx, spd, 1) = svec(Mat(0.5 * (dm + dm.transpose())));
      };
      for (int k = 0; k < spd; ++k) {
        Vec ek = Vec::Zero(spd);
        ek(k) = 1.0;
        put(k, Mat(smat(ek, pd) * s.z));
      }
      for (int a = 0; a < na; ++a)
        put(off_nu + a,
            Mat(s.g *
                p.constraints[static_cast<size_t>(act[static_cast<size_t>(a)])]
                    .gmat));
      for (int b = 0; b < nb; ++b) {
        const int q = p.block_dims[static_cast<size_t>(b)];
        for (int k = 0; k < tri(q); ++k) {
          Vec ek = Vec::Zero(tri(q));
          ek(k) = 1.0;
          const Mat ekm = smat(ek, q);
          Mat dz = Mat::Zero(pd, pd);
          for (int jj = 0; jj < q; ++jj)
            for (int ii = 0; ii <= jj; ++ii) {
              const int c = slot[static_cast<size_t>(b)]
                                [static_cast<size_t>(tri_index(ii, jj))];
              if (c < 0) continue;
              dz -= (ii == jj ? 1.0 : 2.0) * ekm(ii, jj) *
                    p.constraints[static_cast<size_t>(c)].gmat;
            }
          put(off_n[static_cast<size_t>(b)] + k, Mat(s.g * dz));
        }
      }
      row += spd;
    }
    // sym(N_b M_b): differentiate through both factors
    for (int b = 0; b < nb; ++b) {
      const int q = p.block_dims[static_cast<size_t>(b)];
      const Mat& nm = s.nmat[static_cast<size_t>(b)];
      auto put = [&](int colidx, const Mat& dm) {
        jm.block(row, colidx, tri(q), 1) =
            svec(Mat(0.5 * (dm + dm.transpose())));
      };
      for (int k = 0; k < spd; ++k) {
        Mat dm = Mat::Zero(q, q);
        for (int jj = 0; jj < q; ++jj)
          for (int ii = 0; ii <= jj; ++ii) {
            const int c = slot[static_cast<size_t>(b)]
                              [static_cast<size_t>(tri_index(ii, jj))];
            if (c < 0) continue;
            dm(ii, jj) = dm(jj, ii) = asv[static_cast<size_t>(c)](k);
          }
        put(k, Mat(nm * dm));
      }
      for (int j = 0; j < sd; ++j) {
        Mat dm = Mat::Zero(q, q);
        for (int jj = 0; jj < q; ++jj)
          for (int ii = 0; ii <= jj; ++ii) {
            const int c = slot[static_cast<size_t>(b)]
                              [static_cast<size_t>(tri_index(ii, jj))];
            if (c < 0) continue;
            const SdpConstraint& con = p.constraints[static_cast<size_t>(c)];
            if (con.scalars.size() > 0) dm(ii, jj) = dm(jj, ii) = con.scalars(j);
          }
        put(off_t + j, Mat(nm * dm));
      }
      for (int k = 0; k < tri(q); ++k) {
        Vec ek = Vec::Zero(tri(q));
        ek(k) = 1.0;
        put(off_n[static_cast<size_t>(b)] + k,
            Mat(smat(ek, q) * s.mval[static_cast<size_t>(b)]));
      }
      row += tri(q);
    }
    return jm;
  };

  try {
    Vec x = Vec::Zero(total);
    x.head(spd) = svec(force_sym(cur.gmat));
    if (sd > 0) x.segment(off_t, sd) = cur.scalars;
    for (int a = 0; a < na; ++a)
      x(off_nu + a) = cur.duals(act[static_cast<size_t>(a)]);
    for (int b = 0; b < nb; ++b) {
      const int q = p.block_dims[static_cast<size_t>(b)];
      Mat nm = Mat::Zero(q, q);
      for (int jj = 0; jj < q; ++jj)
        for (int ii = 0; ii <= jj; ++ii) {
          const int c = slot[static_cast<size_t>(b)]
                            [static_cast<size_t>(tri_index(ii, jj))];
          if (c >= 0) nm(ii, jj) = nm(jj, ii) = cur.duals(c);
        }
      x.segment(off_n[static_cast<size_t>(b)], tri(q)) = svec(nm);
    }

    State s = build(x);
    Vec r = residual(s);
    double rn = r.cwiseAbs().maxCoeff();
    // Levenberg-Marquardt on the residual: degeneracy (non-unique duals,
    // strict complementarity failure) makes the Jacobian singular near the
    // optimum, where an undamped Newton step blasts off along the null
    // directions and stalls.
    double phi = 0.5 * r.squaredNorm();
    double lmpar = 0.0;
    for (int iter = 0; iter < 60 && rn > 1e-13; ++iter) {
      const Mat jm = jacobian(s);
      const Mat jtj = jm.transpose() * jm;
      const Vec grad = jm.transpose() * r;
      if (grad.cwiseAbs().maxCoeff() < 1e-16) break;
      if (lmpar == 0.0) lmpar = 1e-6 * jtj.diagonal().maxCoeff();
      bool accepted = false;
      for (int inner = 0; inner < 12 && !accepted; ++inner) {
        Mat a = jtj;
        a.diagonal().array() += lmpar;
        Eigen::LDLT<Mat> ldlt(a);
        if (ldlt.info() == Eigen::Success) {
          Vec step = ldlt.solve(Vec(-grad));
          State sn = build(Vec(x + step));
          Vec rnext = residual(sn);
          const double phin = 0.5 * rnext.squaredNorm();
          if (phin < phi) {
            x += step;
            s = std::move(sn);
            r = std::move(rnext);
            phi = phin;
            rn = r.cwiseAbs().maxCoeff();
            lmpar = std::max(lmpar / 3.0,
                             1e-14 * jtj.diagonal().maxCoeff());
            accepted = true;
          }
        }
        if (!accepted) lmpar *= 10.0;
      }
      if (!accepted) break;
    }

    SdpSolution out;
    out.gmat = force_sym(smat(Vec(x.head(spd)), pd));
    out.scalars = sd > 0 ? Vec(x.segment(off_t, sd)) : Vec();
    out.duals = Vec::Zero(nc);
    for (int a = 0; a < na; ++a)
      out.duals(act[static_cast<size_t>(a)]) = x(off_nu + a);
    for (int b = 0; b < nb; ++b) {
      const int q = p.block_dims[static_cast<size_t>(b)];
      const Mat nm =
          smat(Vec(x.segment(off_n[static_cast<size_t>(b)], tri(q))), q);
      for (int jj = 0; jj < q; ++jj)
        for (int ii = 0; ii <= jj; ++ii) {
          const int c = slot[static_cast<size_t>(b)]
                            [static_cast<size_t>(tri_index(ii, jj))];
          if (c >= 0) out.duals(c) = nm(ii, jj);
        }
    }
    out.objective = inner(p.objective, out.gmat);
    if (sd > 0) out.objective += p.scalar_objective.dot(out.scalars);
    out.status = cur.status;
    out.iterations = cur.iterations;
    return out;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

// The activity thresholds depend on how far the iterate still is from the
// optimum, so scan a short ladder of relative cuts and keep the candidate
// with the best independently recomputed residual score.
std::optional<SdpSolution> try_polish(const SdpProblem& p,
                                      const SdpSolution& cur) {
  const int nc = static_cast<int>(p.constraints.size());
  double numax = 1e-3;
  std::vector<double> slack(static_cast<size_t>(nc), 0.0);
  for (int c = 0; c < nc; ++c) {
    const SdpConstraint& con = p.constraints[static_cast<size_t>(c)];
    if (con.sense == SdpSense::psd_block) continue;
    double v = inner(con.gmat, cur.gmat);
    if (con.scalars.size() > 0) v += con.scalars.dot(cur.scalars);
    slack[static_cast<size_t>(c)] = con.rhs - v;
    if (con.sense == SdpSense::le) numax = std::max(numax, cur.duals(c));
  }

  std::optional<SdpSolution> best;
  double best_score = std::numeric_limits<double>::infinity();
  std::vector<int> last;
  for (double lam : {1e-2, 1e-3, 1e-4}) {
    std::vector<int> act;
    for (int c = 0; c < nc; ++c) {
      const SdpConstraint& con = p.constraints[static_cast<size_t>(c)];
      if (con.sense == SdpSense::psd_block) continue;
      if (con.sense == SdpSense::eq ||
          slack[static_cast<size_t>(c)] <= lam * (1.0 + std::abs(con.rhs)) ||
          cur.duals(c) > lam * numax)
        act.push_back(c);
    }
    if (act == last) continue;
    last = act;
    std::optional<SdpSolution> cand = newton_kkt(p, cur, act);
    if (!cand) continue;
    KktResiduals res = kkt_residuals(p, *cand);
    const double score = std::max(
        {res.primal, res.dual, res.gap / (1.0 + std::abs(cand->objective))});
    if (std::getenv("LACERT_SDP_TRACE") != nullptr)
      std::fprintf(stderr,
                   "    polish lam=%.0e act=%zu pri=%.2e dua=%.2e gap=%.2e "
                   "obj=%.8f\n",
                   lam, act.size(), res.primal, res.dual, res.gap,
                   cand->objective);
    if (score < best_score) {
      best_score = score;
      best = std::move(cand);
    }
    if (best_score <= 1e-10) break;
  }
  return best;
}

// Structural presolve: an equality row tr(G·A) = 0 with sign-definite A and
// no scalar part pins G·range(A) = 0 for every feasible G ⪰ 0, so the search
// can run on the orthogonal complement. Besides shrinking the cone this is a
// conditioning fix: such rows often admit no finite optimal multiplier (the
// dual is attained only in a limit), which caps the accuracy any solver or
// refinement of the full-size problem can reach.
struct FacialReduction {
  Mat basis;                    // psd_dim x reduced_dim, orthonormal columns
  std::vector<size_t> dropped;  // eliminated constraint indices
  std::vector<double> sign;     // +1: gmat ⪰ 0, -1: gmat ⪯ 0
};

std::optional<FacialReduction> detect_face(const SdpProblem& p) {
  if (p.psd_dim == 0) return std::nullopt;
  Mat span = Mat::Zero(p.psd_dim, p.psd_dim);
  FacialReduction fr;
  for (size_t ci = 0; ci < p.constraints.size(); ++ci) {
    const SdpConstraint& c = p.constraints[ci];
    if (c.sense != SdpSense::eq || c.rhs != 0.0) continue;
    if (c.scalars.size() > 0 && c.scalars.cwiseAbs().maxCoeff() > 0.0)
      continue;
    const double scale = c.gmat.cwiseAbs().maxCoeff();
    if (scale <= 0.0) continue;  // vacuous row, nothing pinned
    Eigen::SelfAdjointEigenSolver<Mat> es(c.gmat);
    if (es.eigenvalues().minCoeff() >= -1e-12 * scale) {
      span += c.gmat / scale;
      fr.dropped.push_back(ci);
      fr.sign.push_back(1.0);
    } else if (es.eigenvalues().maxCoeff() <= 1e-12 * scale) {
      span -= c.gmat / scale;
      fr.dropped.push_back(ci);
      fr.sign.push_back(-1.0);
    }
  }
  if (fr.dropped.empty()) return std::nullopt;
  Eigen::SelfAdjointEigenSolver<Mat> es(span);
  const Vec& ev = es.eigenvalues();  // ascending
  const double cut = 1e-10 * std::max(1.0, ev.maxCoeff());
  int keep = 0;
  while (keep < p.psd_dim && ev(keep) <= cut) ++keep;
  // keep == 0 would zero out G entirely; leave that degenerate case to the
  // base solver rather than emit an empty cone
  if (keep == 0 || keep == p.psd_dim) return std::nullopt;
  fr.basis = es.eigenvectors().leftCols(keep);
  return fr;
}

SdpSolution solve_reduced(const SdpProblem& p, const FacialReduction& fr,
                          const SdpOptions& opts) {
  const Mat& q = fr.basis;
  SdpProblem r;
  r.psd_dim = static_cast<int>(q.cols());
  r.scalar_dim = p.scalar_dim;
  r.objective = force_sym(Mat(q.transpose() * p.objective * q));
  r.scalar_objective = p.scalar_objective;
  r.block_dims = p.block_dims;
  std::vector<size_t> kept;
  size_t di = 0;
  for (size_t ci = 0; ci < p.constraints.size(); ++ci) {
    if (di < fr.dropped.size() && fr.dropped[di] == ci) {
      ++di;
      continue;
    }
    SdpConstraint c = p.constraints[ci];
    c.gmat = force_sym(Mat(q.transpose() * c.gmat * q));
    r.constraints.push_back(std::move(c));
    kept.push_back(ci);
  }

  SdpSolution rs = solve_sdp(r, opts);

  SdpSolution s;
  s.gmat = force_sym(Mat(q * rs.gmat * q.transpose()));
  s.scalars = rs.scalars;
  s.duals = Vec::Zero(static_cast<long>(p.constraints.size()));
  for (size_t i = 0; i < kept.size(); ++i)
    s.duals(static_cast<long>(kept[i])) = rs.duals(static_cast<long>(i));
  s.objective = inner(p.objective, s.gmat);
  if (p.scalar_dim > 0) s.objective += p.scalar_objective.dot(s.scalars);
  s.status = rs.status;
  s.iterations = rs.iterations;

  // The eliminated rows still need multipliers for the full-size optimality
  // system. Each contributes a semidefinite direction to the dual slack, so
  // walk its multiplier up until the slack clears the cone to tolerance (a
  // finite value reaching any fixed tolerance exists even when the exact
  // multiplier does not), then bisect the magnitude back down.
  Mat zmat = -p.objective;
  for (size_t ci = 0; ci < p.constraints.size(); ++ci) {
    const SdpConstraint& c = p.constraints[ci];
    const double nu = s.duals(static_cast<long>(ci));
    if (c.sense == SdpSense::psd_block)
      zmat -= (c.row == c.col ? 1.0 : 2.0) * nu * c.gmat;
    else
      zmat += nu * c.gmat;
  }
  const double thresh = 0.05 * opts.tol;
  for (size_t i = 0; i < fr.dropped.size(); ++i) {
    if (min_eig(zmat) >= -thresh) break;
    const SdpConstraint& c = p.constraints[fr.dropped[i]];
    const Mat dir = fr.sign[i] * c.gmat;
    const double base = std::max(1.0, zmat.cwiseAbs().maxCoeff()) /
                        dir.cwiseAbs().maxCoeff();
    double hi = base;
    bool cleared = false;
    for (int e = 0; e < 50; ++e) {
      if (min_eig(Mat(zmat + hi * dir)) >= -thresh) {
        cleared = true;
        break;
      }
      hi *= 2.0;
    }
    if (cleared) {
      double lo = hi / 2.0;
      for (int b = 0; b < 40 && hi - lo > 1e-3 * hi; ++b) {
        const double mid = 0.5 * (lo + hi);
        if (min_eig(Mat(zmat + mid * dir)) >= -thresh)
          hi = mid;
        else
          lo = mid;
      }
    }
    zmat += hi * dir;
    s.duals(static_cast<long>(fr.dropped[i])) = fr.sign[i] * hi;
  }

  KktResiduals res = kkt_residuals(p, s);
  s.primal_residual = res.primal;
  s.dual_residual = res.dual;
  s.gap = res.gap;
  if (s.status == SdpStatus::solved &&
      !(res.primal <= opts.tol && res.dual <= opts.tol &&
        res.gap <= opts.tol * (1.0 + std::abs(s.objective))))
    s.status = SdpStatus::max_iterations;
  return s;
}

}  // namespace

SdpSolution solve_sdp(const SdpProblem& p, const SdpOptions& opts) {
  p.validate();
  if (opts.tol <= 0) throw DimensionMismatch("sdp: tol must be positive");

  if (auto face = detect_face(p)) return solve_reduced(p, *face, opts);

  Assembled w = assemble(p);
  Vec rowscale, colscale;
  ruiz_scale(p, w, opts.ruiz_passes, rowscale, colscale);
  const Vec rinv = rowscale.cwiseInverse();
  const Vec cinv = colscale.cwiseInverse();

  std::optional<SpdFactor> kkt;
  if (w.m > 0)
    kkt = factorize_spd(
        SymMatrix(force_sym(Mat(w.a * w.a.transpose())) +
                  Mat(Mat::Identity(w.m, w.m))));
  const Vec ac = w.m > 0 ? Vec(w.a * w.c) : Vec();

  const double omega = opts.over_relax;
  double pen = 1.0;
  Vec xt = Vec::Zero(w.nx), st = Vec::Zero(w.m);
  Vec ux = Vec::Zero(w.nx), us = Vec::Zero(w.m);
  Vec nu = Vec::Zero(w.m);

  auto extract = [&](int iterations) {
    SdpSolution s;
    Vec xu = colscale.cwiseProduct(xt);
    s.gmat = smat(xu.head(w.sd), p.psd_dim);
    s.scalars = p.scalar_dim > 0 ? Vec(xu.tail(p.scalar_dim)) : Vec();
    s.duals = Vec::Zero(static_cast<long>(p.constraints.size()));
    Vec nu_orig = rowscale.cwiseProduct(nu);
    for (size_t ci = 0; ci < p.constraints.size(); ++ci) {
      const SdpConstraint& c = p.constraints[ci];
      double v = nu_orig(w.row_of[ci]);
      if (c.sense == SdpSense::psd_block && c.row != c.col) v /= kRt2;
      s.duals(static_cast<long>(ci)) = v;
    }
    s.objective = inner(p.objective, s.gmat);
    if (p.scalar_dim > 0) s.objective += p.scalar_objective.dot(s.scalars);
    s.iterations = iterations;
    return s;
  };

  std::optional<Candidate> best;
  Vec prev_nu = Vec::Zero(w.m), prev_x = xt;
  int pri_hits = 0, dua_hits = 0, checks = 0;

  if (opts.max_iter < 1) {
    SdpSolution s = extract(0);
    KktResiduals res = kkt_residuals(p, s);
    s.primal_residual = res.primal;
    s.dual_residual = res.dual;
    s.gap = res.gap;
    return s;
  }

  for (int it = 1; it <= opts.max_iter; ++it) {
    // affine half-step: projection onto {A x + s = b} tilted by the cost
    Vec vx = xt - ux;
    Vec vs = st - us;
    if (w.m > 0) {
      nu = kkt->solve(Vec(pen * (w.a * vx + vs - w.b) - ac));
    }
    Vec px = vx - (w.c + (w.m > 0 ? Vec(w.a.transpose() * nu) : Vec::Zero(w.nx))) / pen;
    Vec ps = w.m > 0 ? Vec(vs - nu / pen) : Vec();

    // over-relaxed cone projection
    Vec qx = omega * px + (1 - omega) * xt + ux;
    Vec qs = w.m > 0 ? Vec(omega * ps + (1 - omega) * st + us) : Vec();
    xt = qx;
    xt.head(w.sd) = psd_part(qx.head(w.sd), p.psd_dim);
    if (w.m > 0) {
      st = qs;
      st.head(w.n_eq).setZero();
      st.segment(w.n_eq, w.n_le) = qs.segment(w.n_eq, w.n_le).cwiseMax(0.0);
      for (size_t bi = 0; bi < p.block_dims.size(); ++bi)
        st.segment(w.block_start[bi], tri(p.block_dims[bi])) = psd_part(
            qs.segment(w.block_start[bi], tri(p.block_dims[bi])),
            p.block_dims[bi]);
    }
    ux = qx - xt;
    if (w.m > 0) us = qs - st;

    if (it % opts.check_every != 0 && it != opts.max_iter) continue;
    ++checks;

    Candidate cand;
    cand.sol = extract(it);
    cand.res = kkt_residuals(p, cand.sol);
    cand.sol.primal_residual = cand.res.primal;
    cand.sol.dual_residual = cand.res.dual;
    cand.sol.gap = cand.res.gap;
    double objscale = 1.0 + std::abs(cand.sol.objective);
    static const bool trace = std::getenv("LACERT_SDP_TRACE") != nullptr;
    if (trace)
      std::fprintf(stderr, "  it=%7d pri=%9.3e dua=%9.3e gap=%9.3e pen=%8.2e obj=%.8f\n",
                    it, cand.res.primal, cand.res.dual, cand.res.gap, pen,
                    cand.sol.objective);
    cand.score = std::max({cand.res.primal, cand.res.dual,
                           cand.res.gap / objscale});
    if (!best || cand.score < best->score) best = cand;

    if (cand.res.primal <= opts.tol && cand.res.dual <= opts.tol &&
        cand.res.gap <= opts.tol * objscale) {
      cand.sol.status = SdpStatus::solved;
      return cand.sol;
    }

    // face-restricted polish once the iterate is near-optimal
    if (cand.score <= 1e-2 &&
        (checks % 10 == 0 || cand.score <= 10 * opts.tol ||
         it == opts.max_iter)) {
      if (auto pol = try_polish(p, cand.sol)) {
        KktResiduals pres = kkt_residuals(p, *pol);
        pol->primal_residual = pres.primal;
        pol->dual_residual = pres.dual;
        pol->gap = pres.gap;
        const double pscale = 1.0 + std::abs(pol->objective);
        Candidate pc{*pol, pres,
                     std::max({pres.primal, pres.dual, pres.gap / pscale})};
        if (trace)
          std::fprintf(stderr, "  it=%7d polish score=%9.3e obj=%.8f\n", it,
                        pc.score, pc.sol.objective);
        if (pc.score < best->score) best = pc;
        if (pres.primal <= opts.tol && pres.dual <= opts.tol &&
            pres.gap <= opts.tol * pscale) {
          pc.sol.status = SdpStatus::solved;
          pc.sol.iterations = it;
          return pc.sol;
        }
      }
    }

    // deterministic penalty rebalancing; u is the scaled dual, so it is
    // rescaled in the opposite direction
    if (checks % 4 == 0) {
      if (cand.res.primal > 10 * cand.res.dual && pen < 1e4) {
        pen *= 2;
        ux /= 2;
        us /= 2;
      } else if (cand.res.dual > 10 * cand.res.primal && pen > 1e-4) {
        pen /= 2;
        ux *= 2;
        us *= 2;
      }
    }

    // divergence diagnostics on the unscaled drift directions; the scaled
    // data satisfies A = R⁻¹ Â C⁻¹, so every certificate below is mapped
    // back through rinv/cinv before thresholding against the raw norms
    if (w.m > 0 && it > 500) {
      Vec ydir = rowscale.cwiseProduct(nu) - prev_nu;
      double yn = ydir.cwiseAbs().maxCoeff();
      bool pri_cert = false;
      if (yn > 1e-12) {
        ydir /= yn;
        Vec aty = cinv.cwiseProduct(
            Vec(w.a.transpose() * rinv.cwiseProduct(ydir)));
        double cap = 1e-5 * std::max(w.anorm, 1e-12);
        // Farkas direction: Aᵀy lands in the dual of the variable cone
        // (PSD on the G columns, zero on the free scalars), y sits in the
        // dual of the slack cone, and it cuts off the rhs
        pri_cert = min_eig(smat(aty.head(w.sd), p.psd_dim)) >= -cap;
        if (pri_cert && p.scalar_dim > 0)
          pri_cert = aty.tail(p.scalar_dim).cwiseAbs().maxCoeff() <= cap;
        for (int r = w.n_eq; r < w.n_eq + w.n_le && pri_cert; ++r)
          pri_cert = ydir(r) >= -1e-6;
        for (size_t bi = 0; bi < p.block_dims.size() && pri_cert; ++bi)
          pri_cert = min_eig(smat(ydir.segment(w.block_start[bi],
                                               tri(p.block_dims[bi])),
                                  p.block_dims[bi])) >= -1e-6;
        if (pri_cert)
          pri_cert = rinv.cwiseProduct(w.b).dot(ydir) <
                     -1e-6 * (1.0 + w.bnorm);
      }
      pri_hits = pri_cert ? pri_hits + 1 : 0;

      Vec xu = colscale.cwiseProduct(xt);
      Vec ddir = xu - prev_x;
      double dn = ddir.cwiseAbs().maxCoeff();
      bool dua_cert = false;
      if (dn > 1e-12) {
        ddir /= dn;
        // improving recession direction: objective decreases along it while
        // every constraint stays satisfiable
        dua_cert = cinv.cwiseProduct(w.c).dot(ddir) < -1e-6 * (1.0 + w.cnorm);
        if (dua_cert)
          dua_cert = min_eig(smat(ddir.head(w.sd), p.psd_dim)) >= -1e-6;
        if (dua_cert) {
          Vec adu = rinv.cwiseProduct(Vec(w.a * cinv.cwiseProduct(ddir)));
          double cap = 1e-5 * std::max(w.anorm, 1e-12);
          for (int r = 0; r < w.n_eq && dua_cert; ++r)
            dua_cert = std::abs(adu(r)) <= cap;
          for (int r = w.n_eq; r < w.n_eq + w.n_le && dua_cert; ++r)
            dua_cert = adu(r) <= cap;
          for (size_t bi = 0; bi < p.block_dims.size() && dua_cert; ++bi)
            dua_cert = min_eig(smat(
                           Vec(-adu.segment(w.block_start[bi],
                                            tri(p.block_dims[bi]))),
                           p.block_dims[bi])) >= -cap;
        }
      }
      dua_hits = dua_cert ? dua_hits + 1 : 0;

      prev_nu = rowscale.cwiseProduct(nu);
      prev_x = xu;

      if (pri_hits >= 3 || dua_hits >= 3) {
        best->sol.status = SdpStatus::infeasible_suspected;
        best->sol.iterations = it;
        return best->sol;
      }
    } else if (w.m > 0) {
      prev_nu = rowscale.cwiseProduct(nu);
      prev_x = colscale.cwiseProduct(xt);
    }
  }

  best->sol.status = SdpStatus::max_iterations;
  best->sol.iterations = opts.max_iter;
  return best->sol;
}

SdpSolution solve_sdp(const SdpProblem& p, double tol, int max_iter) {
  SdpOptions opts;
  opts.tol = tol;
  opts.max_iter = max_iter;
  return solve_sdp(p, opts);
}

namespace {

nlohmann::json mat_json(const Mat& m) {
  nlohmann::json data = nlohmann::json::array();
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

nlohmann::json vec_json(const Vec& v) {
  nlohmann::json data = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) data.push_back(v(i));
  return data;
}

}  // namespace

std::string sdp_problem_json(const SdpProblem& p) {
  nlohmann::json j;
  j["psd_dim"] = p.psd_dim;
  j["scalar_dim"] = p.scalar_dim;
  j["objective"] = mat_json(p.objective);
  j["scalar_objective"] = vec_json(p.scalar_objective);
  j["block_dims"] = p.block_dims;
  nlohmann::json cs = nlohmann::json::array();
  for (const SdpConstraint& c : p.constraints) {
    nlohmann::json jc;
    jc["sense"] = c.sense == SdpSense::le   ? "le"
                  : c.sense == SdpSense::eq ? "eq"
                                            : "psd_block";
    jc["gmat"] = mat_json(c.gmat);
    jc["scalars"] = vec_json(c.scalars);
    jc["rhs"] = c.rhs;
    if (c.sense == SdpSense::psd_block) {
      jc["block"] = c.block;
      jc["row"] = c.row;
      jc["col"] = c.col;
    }
    cs.push_back(std::move(jc));
  }
  j["constraints"] = std::move(cs);
  return j.dump();
}

std::string sdp_solution_json(const SdpSolution& sol) {
  nlohmann::json j;
  j["gmat"] = mat_json(sol.gmat);
  j["scalars"] = vec_json(sol.scalars);
  j["duals"] = vec_json(sol.duals);
  j["objective"] = sol.objective;
  j["status"] = status_name(sol.status);
  j["primal_residual"] = sol.primal_residual;
  j["dual_residual"] = sol.dual_residual;
  j["gap"] = sol.gap;
  j["iterations"] = sol.iterations;
  return j.dump();
}

}  // namespace lacert
