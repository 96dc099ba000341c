#include "lacert/families.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lacert/rng.hpp"

namespace lacert {

namespace {

constexpr std::uint64_t kFamilyStream = 101;
constexpr std::uint64_t kInstanceStream = 202;

Rng family_rng(const FamilyConfig& cfg) {
  return Rng(mix_seed(cfg.data_seed, kFamilyStream));
}

Rng instance_rng(const FamilyConfig& cfg, std::uint64_t instance_seed) {
  return Rng(mix_seed(cfg.data_seed, kInstanceStream) ^
             mix_seed(instance_seed, kInstanceStream + 1));
}

Vec normal_vec(Rng& rng, int n, double std = 1.0) {
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = std * rng.normal();
  return v;
}

Mat normal_mat(Rng& rng, int rows, int cols, double std = 1.0) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = std * rng.normal();
  return m;
}

double soft(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

// numerically stable log(1 + exp(u))
double log1pexp(double u) {
  if (u > 0) return u + std::log1p(std::exp(-u));
  return std::log1p(std::exp(u));
}

double sigmoid(double u) {
  if (u >= 0) return 1.0 / (1.0 + std::exp(-u));
  double e = std::exp(u);
  return e / (1.0 + e);
}

struct QpFamilyData {
  Mat P;
  Mat A;
};

QpFamilyData conic_family_data(const FamilyConfig& cfg) {
  Rng rng = family_rng(cfg);
  int q = cfg.n;
  int m = cfg.kind == FamilyKind::random_qp ? cfg.m : cfg.cones.total();
  QpFamilyData fd;
  Mat b = normal_mat(rng, q, q, 1.0 / std::sqrt(static_cast<double>(q)));
  fd.P = b.transpose() * b;
  fd.P = 0.5 * (fd.P + fd.P.transpose());
  fd.A = normal_mat(rng, m, q, 1.0 / std::sqrt(static_cast<double>(q)));
  return fd;
}

}  // namespace

int Cones::total() const {
  return zero + nonneg + std::accumulate(soc.begin(), soc.end(), 0);
}

const char* family_name(FamilyKind k) {
  switch (k) {
    case FamilyKind::lasso: return "lasso";
    case FamilyKind::nonneg_ls: return "nonneg_ls";
    case FamilyKind::logistic: return "logistic";
    case FamilyKind::random_qp: return "random_qp";
    case FamilyKind::random_socp: return "random_socp";
  }
  return "?";
}

FamilyKind family_from_name(const std::string& s) {
  if (s == "lasso") return FamilyKind::lasso;
  if (s == "nonneg_ls") return FamilyKind::nonneg_ls;
  if (s == "logistic") return FamilyKind::logistic;
  if (s == "random_qp") return FamilyKind::random_qp;
  if (s == "random_socp") return FamilyKind::random_socp;
  throw InvalidConfig("unknown family: " + s);
}

void FamilyConfig::validate() const {
  if (n < 1 || d < 1) throw InvalidConfig("family dims must be >= 1");
  switch (kind) {
    case FamilyKind::lasso:
      if (reg <= 0) throw InvalidConfig("lasso needs reg > 0");
      break;
    case FamilyKind::nonneg_ls:
      break;
    case FamilyKind::logistic:
      if (m < 2) throw InvalidConfig("logistic needs m >= 2");
      break;
    case FamilyKind::random_qp:
      if (m < 1) throw InvalidConfig("random_qp needs m >= 1");
      if (m_eq < 0 || m_eq > m) throw InvalidConfig("random_qp m_eq out of range");
      break;
    case FamilyKind::random_socp: {
      if (cones.zero < 0 || cones.nonneg < 0)
        throw InvalidConfig("negative cone sizes");
      for (int sd : cones.soc)
        if (sd < 2) throw InvalidConfig("soc blocks need dim >= 2");
      if (cones.total() < 1) throw InvalidConfig("random_socp needs rows");
      break;
    }
  }
  if (plant_std <= 0 || huber_rho <= 0) throw InvalidConfig("scales must be > 0");
  if (ref_tol <= 0 || ref_cap < 1) throw InvalidConfig("reference solve limits");
}

std::uint64_t train_seed(int i) { return static_cast<std::uint64_t>(i); }
std::uint64_t test_seed(int j) { return 1000000ULL + j; }
std::uint64_t ood_seed(int j) { return 2000000ULL + j; }

FamilyConfig ood_shift(const FamilyConfig& cfg) {
  FamilyConfig out = cfg;
  out.plant_std = cfg.plant_std * std::sqrt(3.0);
  return out;
}

Mat design_matrix(const FamilyConfig& cfg) {
  if (cfg.kind != FamilyKind::lasso && cfg.kind != FamilyKind::nonneg_ls)
    throw Unsupported("design_matrix: only lasso / nonneg_ls");
  Rng rng = family_rng(cfg);
  Mat a = normal_mat(rng, cfg.d, cfg.n, 1.0 / std::sqrt(static_cast<double>(cfg.d)));
  for (int j = 0; j < a.cols(); ++j) a.col(j) /= a.col(j).norm();
  return a;
}

namespace {

Vec lasso_parameter(const FamilyConfig& cfg, Rng& rng, const Mat& a,
                    Vec& ztrue_out) {
  // 90% sparse ground truth, then noise scaled to 40 dB SNR
  int n = cfg.n;
  Vec ztrue = normal_vec(rng, n, cfg.plant_std);
  int zeros = static_cast<int>(std::lround(0.9 * n));
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = n - 1; i > 0; --i)
    std::swap(idx[i], idx[rng.below(static_cast<std::uint64_t>(i + 1))]);
  for (int i = 0; i < zeros; ++i) ztrue(idx[i]) = 0.0;
  Vec signal = a * ztrue;
  Vec noise = normal_vec(rng, cfg.d);
  double nn = noise.norm();
  if (nn > 0) noise *= signal.norm() * std::pow(10.0, -40.0 / 20.0) / nn;
  ztrue_out = ztrue;
  return signal + noise;
}

Vec logistic_parameter(const FamilyConfig& cfg, Rng& rng) {
  // two Gaussian clusters at +/- cluster_sep along a seed-fixed direction
  int q = cfg.d, m = cfg.m;
  Rng frng = family_rng(cfg);
  Vec dir = normal_vec(frng, q);
  dir /= dir.norm();
  Vec x(static_cast<Eigen::Index>(q) * m + m);
  for (int j = 0; j < m; ++j) {
    double label = j < m / 2 ? 0.0 : 1.0;
    double sign = label > 0.5 ? 1.0 : -1.0;
    Vec aj = sign * cfg.cluster_sep * dir + normal_vec(rng, q, cfg.plant_std);
    x.segment(static_cast<Eigen::Index>(j) * q, q) = aj;
    x(static_cast<Eigen::Index>(q) * m + j) = label;
  }
  return x;
}

struct PlantedQp {
  Vec x;  // stacked (c, l, u)
  Vec wstar, ystar;
};

PlantedQp plant_qp(const FamilyConfig& cfg, Rng& rng, const QpFamilyData& fd) {
  int q = cfg.n, m = cfg.m;
  PlantedQp out;
  out.wstar = normal_vec(rng, q, cfg.plant_std);
  Vec aw = fd.A * out.wstar;
  Vec l(m), u(m), y(m);
  for (int i = 0; i < m; ++i) {
    if (i < cfg.m_eq) {
      l(i) = u(i) = aw(i);
      y(i) = rng.normal();
      continue;
    }
    double pick = rng.uniform();
    double gap1 = 0.1 + std::abs(rng.normal());
    double gap2 = 0.1 + std::abs(rng.normal());
    if (pick < 0.3) {  // upper bound active
      u(i) = aw(i);
      l(i) = aw(i) - gap1;
      y(i) = 0.1 + std::abs(rng.normal());
    } else if (pick < 0.6) {  // lower bound active
      l(i) = aw(i);
      u(i) = aw(i) + gap1;
      y(i) = -(0.1 + std::abs(rng.normal()));
    } else {  // inactive
      l(i) = aw(i) - gap1;
      u(i) = aw(i) + gap2;
      y(i) = 0.0;
    }
  }
  Vec c = -(fd.P * out.wstar) - fd.A.transpose() * y;
  out.ystar = y;
  out.x.resize(q + 2 * m);
  out.x << c, l, u;
  return out;
}

struct PlantedSocp {
  Vec x;  // stacked (c, b)
  Vec wstar, vstar, sstar;
};

PlantedSocp plant_socp(const FamilyConfig& cfg, Rng& rng,
                       const QpFamilyData& fd) {
  int q = cfg.n, m = cfg.cones.total();
  PlantedSocp out;
  out.wstar = normal_vec(rng, q, cfg.plant_std);
  Vec s = Vec::Zero(m), v = Vec::Zero(m);
  int row = 0;
  for (int i = 0; i < cfg.cones.zero; ++i, ++row) {
    s(row) = 0.0;
    v(row) = rng.normal();
  }
  for (int i = 0; i < cfg.cones.nonneg; ++i, ++row) {
    if (rng.uniform() < 0.5) {
      s(row) = 0.0;
      v(row) = 0.1 + std::abs(rng.normal());
    } else {
      s(row) = 0.1 + std::abs(rng.normal());
      v(row) = 0.0;
    }
  }
  for (int sd : cfg.cones.soc) {
    double pick = rng.uniform();
    Vec xx = normal_vec(rng, sd - 1, cfg.huber_rho);
    if (pick < 1.0 / 3) {  // s interior, v = 0
      s(row) = xx.norm() * (1.2 + rng.uniform());
      s.segment(row + 1, sd - 1) = xx;
    } else if (pick < 2.0 / 3) {  // v interior, s = 0
      v(row) = xx.norm() * (1.2 + rng.uniform());
      v.segment(row + 1, sd - 1) = xx;
    } else {  // complementary boundary pair
      double t = xx.norm();
      double kappa = 0.2 + rng.uniform();
      s(row) = t;
      s.segment(row + 1, sd - 1) = xx;
      v(row) = kappa * t;
      v.segment(row + 1, sd - 1) = -kappa * xx;
    }
    row += sd;
  }
  out.sstar = s;
  out.vstar = v;
  Vec b = fd.A * out.wstar + s;
  Vec c = -(fd.P * out.wstar) - fd.A.transpose() * v;
  out.x.resize(q + m);
  out.x << c, b;
  return out;
}

double conic_objective(const Mat& p, const Vec& c, const Vec& w) {
  return 0.5 * w.dot(p * w) + c.dot(w);
}

// top eigenvalue of AᵀA without forming an eigendecomposition
double top_gram_eig(const Mat& a) {
  Vec v(a.cols());
  for (int i = 0; i < v.size(); ++i) v(i) = 1.0 + 0.01 * std::sin(1.0 + i);
  v /= v.norm();
  double lam = 0, prev = -1;
  for (int i = 0; i < 5000 && std::abs(lam - prev) > 1e-12 * (1 + lam); ++i) {
    prev = lam;
    Vec w = a.transpose() * (a * v);
    double n = w.norm();
    if (n == 0) return 0;
    v = w / n;
    lam = n;
  }
  return lam;
}

// independent KKT check for planted conic instances
double planted_kkt_residual(const ParametricInstance& inst) {
  ConicData cd = to_conic(inst);
  const Vec& w = inst.zstar;
  if (inst.cfg.kind == FamilyKind::random_qp) {
    const Vec& y = inst.dual_star;
    Vec aw = cd.A * w;
    double r = (cd.P * w + cd.c + cd.A.transpose() * y).norm();
    for (int i = 0; i < aw.size(); ++i) {
      r = std::max(r, std::max(aw(i) - cd.u(i), cd.l(i) - aw(i)));
      if (y(i) > 0) r = std::max(r, std::abs(aw(i) - cd.u(i)));
      if (y(i) < 0 && cd.l(i) < cd.u(i)) r = std::max(r, std::abs(aw(i) - cd.l(i)));
    }
    return r;
  }
  const Vec& v = inst.dual_star;
  const Vec& s = inst.slack_star;
  double r = (cd.A * w + s - cd.b).norm();
  r = std::max(r, (cd.P * w + cd.c + cd.A.transpose() * v).norm());
  r = std::max(r, std::abs(s.dot(v)));
  return r;
}

}  // namespace

ParametricInstance sample_instance(const FamilyConfig& cfg,
                                   std::uint64_t instance_seed) {
  cfg.validate();
  Rng rng = instance_rng(cfg, instance_seed);
  ParametricInstance inst;
  inst.cfg = cfg;
  inst.instance_seed = instance_seed;
  switch (cfg.kind) {
    case FamilyKind::lasso:
    case FamilyKind::nonneg_ls: {
      Mat a = design_matrix(cfg);
      inst.x = cfg.kind == FamilyKind::lasso
                   ? lasso_parameter(cfg, rng, a, inst.ztrue)
                   : normal_vec(rng, cfg.d, cfg.plant_std);
      ReferenceSolution ref = reference_solution(cfg, inst.x, cfg.ref_tol);
      inst.zstar = ref.zstar;
      inst.fstar = ref.fstar;
      break;
    }
    case FamilyKind::logistic: {
      inst.x = logistic_parameter(cfg, rng);
      ReferenceSolution ref = reference_solution(cfg, inst.x, cfg.ref_tol);
      inst.zstar = ref.zstar;
      inst.fstar = ref.fstar;
      break;
    }
    case FamilyKind::random_qp: {
      QpFamilyData fd = conic_family_data(cfg);
      PlantedQp p = plant_qp(cfg, rng, fd);
      inst.x = p.x;
      inst.zstar = p.wstar;
      inst.dual_star = p.ystar;
      inst.fstar = conic_objective(fd.P, p.x.head(cfg.n), p.wstar);
      if (planted_kkt_residual(inst) > 1e-9)
        throw InvalidConfig("planted qp failed its KKT check");
      break;
    }
    case FamilyKind::random_socp: {
      QpFamilyData fd = conic_family_data(cfg);
      PlantedSocp p = plant_socp(cfg, rng, fd);
      inst.x = p.x;
      inst.zstar = p.wstar;
      inst.dual_star = p.vstar;
      inst.slack_star = p.sstar;
      inst.fstar = conic_objective(fd.P, p.x.head(cfg.n), p.wstar);
      if (planted_kkt_residual(inst) > 1e-9)
        throw InvalidConfig("planted socp failed its KKT check");
      break;
    }
  }
  return inst;
}

SmoothnessConstants smoothness_constants(const FamilyConfig& cfg) {
  if (cfg.is_conic())
    throw Unsupported("smoothness_constants: conic families use the operator class");
  if (cfg.kind == FamilyKind::logistic) {
    std::vector<ParametricInstance> train;
    for (int i = 0; i < 10; ++i) train.push_back(sample_instance(cfg, train_seed(i)));
    return smoothness_constants(cfg, train);
  }
  Mat a = design_matrix(cfg);
  SmoothnessConstants sc;
  if (cfg.n > cfg.d) {
    sc.mu = 0.0;  // rank-deficient gram matrix, skip the full decomposition
    sc.L = top_gram_eig(a);
  } else {
    EigDecomposition e = sym_eig(SymMatrix(a.transpose() * a));
    sc.L = e.values(e.values.size() - 1);
    sc.mu = std::max(0.0, e.values(0));
  }
  return sc;
}

SmoothnessConstants smoothness_constants(
    const FamilyConfig& cfg, const std::vector<ParametricInstance>& train) {
  if (cfg.kind != FamilyKind::logistic)
    return smoothness_constants(cfg);
  if (train.empty()) throw InvalidConfig("logistic smoothness needs instances");
  SmoothnessConstants sc;
  sc.mu = 0.0;
  sc.L = 0.0;
  for (const auto& inst : train) {
    InstanceOps ops(inst);
    const Mat& a = ops.data_matrix();  // m x (q+1), bias column included
    double m = static_cast<double>(a.rows());
    sc.L = std::max(sc.L, top_gram_eig(a) / (4.0 * m));
  }
  return sc;
}

namespace {

// FISTA with function-value restart; g supplied through prox/value callbacks
template <class FVal, class FGrad, class GVal, class GProx, class Residual>
ReferenceSolution accel_reference(int n, double lstep, FVal fval, FGrad fgrad,
                                  GVal gval, GProx gprox, Residual resid,
                                  double tol, int cap) {
  Vec z = Vec::Zero(n), y = Vec::Zero(n);
  double t = 1.0;
  double best_res = resid(z);
  Vec best = z;
  double prev_obj = fval(z) + gval(z);
  int it = 0;
  while (best_res > tol) {
    if (++it > cap)
      throw DidNotConverge("reference solve hit the iteration cap", best, best_res);
    Vec znew = gprox(y - lstep * fgrad(y), lstep);
    double tnew = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    Vec ynew = znew + ((t - 1.0) / tnew) * (znew - z);
    double obj = fval(znew) + gval(znew);
    if (obj > prev_obj) {  // adaptive restart
      ynew = znew;
      tnew = 1.0;
    }
    prev_obj = obj;
    z = znew;
    y = ynew;
    t = tnew;
    double r = resid(z);
    if (r < best_res) {
      best_res = r;
      best = z;
    }
  }
  ReferenceSolution out;
  out.zstar = best;
  out.fstar = fval(best) + gval(best);
  out.residual = best_res;
  out.iterations = it;
  return out;
}

ReferenceSolution conic_reference(const FamilyConfig& cfg, const Vec& x,
                                  double tol);

}  // namespace

ReferenceSolution reference_solution(const FamilyConfig& cfg, const Vec& x,
                                     double tol) {
  if (tol <= 0) throw InvalidConfig("reference_solution: tol must be > 0");
  cfg.validate();
  if (cfg.is_conic()) return conic_reference(cfg, x, tol);

  ParametricInstance shell;
  shell.cfg = cfg;
  shell.x = x;
  InstanceOps ops(shell);
  double lmax = top_gram_eig(ops.data_matrix());
  if (cfg.kind == FamilyKind::logistic) lmax /= 4.0 * ops.data_matrix().rows();
  double step = 1.0 / lmax;
  auto fval = [&](const Vec& z) { return ops.f(z); };
  auto fgrad = [&](const Vec& z) { return ops.grad(z); };
  auto gval = [&](const Vec& z) { return ops.g(z); };
  auto resid = [&](const Vec& z) {
    if (cfg.kind == FamilyKind::logistic) return ops.grad(z).norm();
    return (z - ops.prox_g(z - step * ops.grad(z), step)).norm();
  };
  auto gprox = [&](const Vec& v, double t) {
    if (cfg.kind == FamilyKind::logistic) return v;
    return ops.prox_g(v, t);
  };
  return accel_reference(ops.zdim(), step, fval, fgrad, gval, gprox, resid,
                         tol, cfg.ref_cap);
}

namespace {

Vec project_box(const Vec& v, const Vec& l, const Vec& u) {
  return v.cwiseMax(l).cwiseMin(u);
}

Vec project_cone_dual(const Vec& p, const Cones& cones) {
  // projection onto {0}^zero dual (free) x R+ x soc blocks
  Vec out = p;
  int row = cones.zero;  // dual of the zero cone is free
  for (int i = 0; i < cones.nonneg; ++i, ++row) out(row) = std::max(0.0, p(row));
  for (int sd : cones.soc) {
    double t = p(row);
    double nx = p.segment(row + 1, sd - 1).norm();
    if (nx <= t) {
      // inside, unchanged
    } else if (nx <= -t) {
      out.segment(row, sd).setZero();
    } else {
      double scale = 0.5 * (1.0 + t / nx);
      out(row) = scale * nx;
      out.segment(row + 1, sd - 1) = scale * p.segment(row + 1, sd - 1);
    }
    row += sd;
  }
  return out;
}

// Vanilla (non-relaxed, non-accelerated) splitting loops used only to
// produce reference solutions; the instrumented engines live elsewhere.
ReferenceSolution conic_reference(const FamilyConfig& cfg, const Vec& x,
                                  double tol) {
  QpFamilyData fd = conic_family_data(cfg);
  int q = cfg.n;
  if (cfg.kind == FamilyKind::random_qp) {
    int m = cfg.m;
    Vec c = x.head(q), l = x.segment(q, m), u = x.tail(m);
    double sigma = 1e-6, rho = 1.0;
    Mat qmat = fd.P + sigma * Mat::Identity(q, q) +
               rho * fd.A.transpose() * fd.A;
    SpdFactor fac = factorize_spd(SymMatrix(qmat));
    Vec w = Vec::Zero(q), xi = Vec::Zero(m);
    Vec best_w = w;
    double best_res = std::numeric_limits<double>::infinity();
    int it = 0;
    while (true) {
      Vec v = project_box(xi, l, u);
      Vec y = rho * (xi - v);
      double res = std::max((fd.A * w - v).norm(),
                            (fd.P * w + fd.A.transpose() * y + c).norm());
      if (res < best_res) {
        best_res = res;
        best_w = w;
      }
      if (best_res <= tol) break;
      if (++it > cfg.ref_cap)
        throw DidNotConverge("conic reference hit the iteration cap", best_w,
                             best_res);
      Vec wt = fac.solve(Vec(sigma * w - c +
                             fd.A.transpose() * (rho * (2.0 * v - xi))));
      xi = xi + fd.A * wt - v;
      w = wt;
    }
    ReferenceSolution out;
    out.zstar = best_w;
    out.fstar = conic_objective(fd.P, c, best_w);
    out.residual = best_res;
    out.iterations = it;
    return out;
  }

  int m = cfg.cones.total();
  Vec c = x.head(q), b = x.tail(m);
  Mat qmat = Mat::Identity(q, q) + fd.P + fd.A.transpose() * fd.A;
  SpdFactor fac = factorize_spd(SymMatrix(qmat));
  Vec zw = Vec::Zero(q), zv = Vec::Zero(m);
  Vec best_w = zw;
  double best_res = std::numeric_limits<double>::infinity();
  int it = 0;
  while (true) {
    // resolvent of the monotone KKT operator at unit metric
    Vec rhs = (zw - c) - fd.A.transpose() * (zv - b);
    Vec wt = fac.solve(rhs);
    Vec vt = zv - b + fd.A * wt;
    Vec pw = 2.0 * wt - zw, pv = 2.0 * vt - zv;
    Vec uv = project_cone_dual(pv, cfg.cones);
    Vec s = uv - pv;
    double res = std::max((fd.A * wt + s - b).norm(),
                          (fd.P * wt + fd.A.transpose() * uv + c).norm());
    if (res < best_res) {
      best_res = res;
      best_w = wt;
    }
    if (best_res <= tol) break;
    if (++it > cfg.ref_cap)
      throw DidNotConverge("conic reference hit the iteration cap", best_w,
                           best_res);
    zw = zw + pw - wt;  // pw - wt = wt - zw, plain DR update
    zv = zv + uv - vt;
  }
  ReferenceSolution out;
  out.zstar = best_w;
  out.fstar = conic_objective(fd.P, c, best_w);
  out.residual = best_res;
  out.iterations = it;
  return out;
}

}  // namespace

ConicData to_conic(const ParametricInstance& inst) {
  const FamilyConfig& cfg = inst.cfg;
  if (!cfg.is_conic()) throw Unsupported("to_conic: family is not conic");
  QpFamilyData fd = conic_family_data(cfg);
  ConicData cd;
  cd.P = fd.P;
  cd.A = fd.A;
  int q = cfg.n;
  if (cfg.kind == FamilyKind::random_qp) {
    int m = cfg.m;
    cd.c = inst.x.head(q);
    cd.l = inst.x.segment(q, m);
    cd.u = inst.x.tail(m);
  } else {
    int m = cfg.cones.total();
    cd.c = inst.x.head(q);
    cd.b = inst.x.tail(m);
    cd.cones = cfg.cones;
  }
  return cd;
}

InstanceOps::InstanceOps(ParametricInstance inst) : inst_(std::move(inst)) {
  const FamilyConfig& cfg = inst_.cfg;
  switch (cfg.kind) {
    case FamilyKind::lasso:
    case FamilyKind::nonneg_ls:
      a_ = design_matrix(cfg);
      target_ = inst_.x;
      break;
    case FamilyKind::logistic: {
      int q = cfg.d, m = cfg.m;
      a_.resize(m, q + 1);
      target_.resize(m);
      for (int j = 0; j < m; ++j) {
        a_.row(j).head(q) = inst_.x.segment(static_cast<Eigen::Index>(j) * q, q);
        a_(j, q) = 1.0;
        target_(j) = inst_.x(static_cast<Eigen::Index>(q) * m + j);
      }
      break;
    }
    case FamilyKind::random_qp:
    case FamilyKind::random_socp:
      conic_ = std::make_unique<ConicData>(to_conic(inst_));
      break;
  }
}

int InstanceOps::zdim() const {
  switch (inst_.cfg.kind) {
    case FamilyKind::logistic: return inst_.cfg.d + 1;
    default: return inst_.cfg.n;
  }
}

bool InstanceOps::composite() const {
  return inst_.cfg.kind == FamilyKind::lasso ||
         inst_.cfg.kind == FamilyKind::nonneg_ls;
}

double InstanceOps::f(const Vec& z) const {
  switch (inst_.cfg.kind) {
    case FamilyKind::lasso:
    case FamilyKind::nonneg_ls:
      return 0.5 * (a_ * z - target_).squaredNorm();
    case FamilyKind::logistic: {
      Vec u = a_ * z;
      double s = 0;
      for (int j = 0; j < u.size(); ++j)
        s += log1pexp(u(j)) - target_(j) * u(j);
      return s / u.size();
    }
    default:
      return 0.5 * z.dot(conic_->P * z) + conic_->c.dot(z);
  }
}

Vec InstanceOps::grad(const Vec& z) const {
  switch (inst_.cfg.kind) {
    case FamilyKind::lasso:
    case FamilyKind::nonneg_ls:
      return a_.transpose() * (a_ * z - target_);
    case FamilyKind::logistic: {
      Vec u = a_ * z;
      Vec r(u.size());
      for (int j = 0; j < u.size(); ++j) r(j) = sigmoid(u(j)) - target_(j);
      return a_.transpose() * r / u.size();
    }
    default:
      return conic_->P * z + conic_->c;
  }
}

Vec InstanceOps::hvp(const Vec& z, const Vec& v) const {
  switch (inst_.cfg.kind) {
    case FamilyKind::lasso:
    case FamilyKind::nonneg_ls:
      return a_.transpose() * (a_ * v);
    case FamilyKind::logistic: {
      Vec u = a_ * z;
      Vec av = a_ * v;
      for (int j = 0; j < u.size(); ++j) {
        double s = sigmoid(u(j));
        av(j) *= s * (1.0 - s);
      }
      return a_.transpose() * av / u.size();
    }
    default:
      return conic_->P * v;
  }
}

double InstanceOps::g(const Vec& z) const {
  if (inst_.cfg.kind == FamilyKind::lasso)
    return inst_.cfg.reg * z.lpNorm<1>();
  return 0.0;
}

Vec InstanceOps::prox_g(const Vec& v, double t) const {
  switch (inst_.cfg.kind) {
    case FamilyKind::lasso: {
      Vec out(v.size());
      double thr = t * inst_.cfg.reg;
      for (int i = 0; i < v.size(); ++i) out(i) = soft(v(i), thr);
      return out;
    }
    case FamilyKind::nonneg_ls:
      return v.cwiseMax(0.0);
    default:
      return v;
  }
}

void InstanceOps::prox_g_vjp(const Vec& v, double t, const Vec& w,
                             const Vec& wbar, Vec& vbar, double& tbar) const {
  switch (inst_.cfg.kind) {
    case FamilyKind::lasso: {
      double thr = t * inst_.cfg.reg;
      for (int i = 0; i < v.size(); ++i) {
        if (std::abs(v(i)) > thr) {
          vbar(i) += wbar(i);
          tbar += wbar(i) * (v(i) > 0 ? -1.0 : 1.0) * inst_.cfg.reg;
        }
      }
      break;
    }
    case FamilyKind::nonneg_ls:
      for (int i = 0; i < v.size(); ++i)
        if (v(i) > 0) vbar(i) += wbar(i);
      break;
    default:
      vbar += wbar;
      break;
  }
  (void)w;
}

Vec InstanceOps::g_subgrad(const Vec& z) const {
  if (inst_.cfg.kind != FamilyKind::lasso) return Vec::Zero(z.size());
  Vec s(z.size());
  for (int i = 0; i < z.size(); ++i)
    s(i) = z(i) > 0 ? inst_.cfg.reg : (z(i) < 0 ? -inst_.cfg.reg : 0.0);
  return s;
}

}  // namespace lacert
