#include "lacert/engines.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

namespace lacert {

const char* engine_name(EngineKind k) {
  switch (k) {
    case EngineKind::gd: return "gd";
    case EngineKind::prox_gd: return "prox_gd";
    case EngineKind::admm: return "admm";
    case EngineKind::osqp: return "osqp";
    case EngineKind::scs: return "scs";
  }
  return "?";
}

EngineKind engine_from_name(const std::string& s) {
  if (s == "gd") return EngineKind::gd;
  if (s == "prox_gd") return EngineKind::prox_gd;
  if (s == "admm") return EngineKind::admm;
  if (s == "osqp") return EngineKind::osqp;
  if (s == "scs") return EngineKind::scs;
  throw InvalidConfig("unknown engine: " + s);
}

bool admm_based(EngineKind k) {
  return k == EngineKind::admm || k == EngineKind::osqp || k == EngineKind::scs;
}

Vec prox_l1(const Vec& v, double t) {
  if (t < 0) throw InvalidConfig("prox_l1: t must be >= 0");
  Vec out(v.size());
  for (int i = 0; i < v.size(); ++i) {
    double a = std::abs(v(i)) - t;
    out(i) = a > 0 ? (v(i) > 0 ? a : -a) : 0.0;
  }
  return out;
}

Vec project_nonneg(const Vec& v) { return v.cwiseMax(0.0); }

Vec project_box(const Vec& v, const Vec& l, const Vec& u) {
  if (l.size() != v.size() || u.size() != v.size())
    throw DimensionMismatch("project_box: bound lengths");
  for (int i = 0; i < v.size(); ++i)
    if (l(i) > u(i)) throw BoxInverted("project_box: l > u at " + std::to_string(i));
  return v.cwiseMax(l).cwiseMin(u);
}

Vec project_soc(const Vec& v) {
  double t = v(0);
  double nx = v.tail(v.size() - 1).norm();
  if (nx <= t) return v;
  Vec out = Vec::Zero(v.size());
  if (nx <= -t) return out;
  double s = 0.5 * (1.0 + t / nx);
  out(0) = s * nx;
  out.tail(v.size() - 1) = s * v.tail(v.size() - 1);
  return out;
}

std::vector<std::string> theta_inv_names(EngineKind k) {
  switch (k) {
    case EngineKind::admm: return {"eta"};
    case EngineKind::osqp: return {"rho_eq", "rho_ineq", "sigma"};
    case EngineKind::scs: return {"r_w", "r_ynz", "r_yz"};
    default: return {};
  }
}

ThetaInv theta_inv_defaults(EngineKind k) {
  ThetaInv t;
  for (const auto& name : theta_inv_names(k))
    t[name] = (k == EngineKind::osqp && name == "sigma") ? 1e-6 : 1.0;
  return t;
}

void HyperparamSchedule::validate() const {
  if (K < 0) throw InvalidConfig("schedule: K must be >= 0");
  if (static_cast<int>(alphas.size()) != K || static_cast<int>(betas.size()) != K)
    throw InvalidConfig("schedule: alphas/betas must have length K");
  for (double a : alphas)
    if (!(a > 0)) throw InvalidConfig("schedule: alphas must be positive");
  auto names = theta_inv_names(kind);
  if (theta_inv.size() != names.size())
    throw InvalidConfig("schedule: wrong theta_inv entries for engine");
  for (const auto& name : names) {
    auto it = theta_inv.find(name);
    if (it == theta_inv.end()) throw InvalidConfig("schedule: missing " + name);
    if (!(it->second > 0)) throw InvalidConfig("schedule: " + name + " must be > 0");
  }
}

double FixedPointOperator::inv(const std::string& name) const {
  auto it = theta_inv_.find(name);
  if (it == theta_inv_.end()) throw InvalidConfig("theta_inv missing " + name);
  return it->second;
}

Vec FixedPointOperator::fixed_point_map(const Vec&) const {
  throw Unsupported("fixed_point_map: gradient-step engines have no S form");
}

Vec FixedPointOperator::metric_diag() const { return Vec::Ones(dim_); }

std::pair<double, double> FixedPointOperator::residual_pair(const Vec&) const {
  throw Unsupported("residual_pair: only conic engines report residuals");
}

namespace {

// ---------------------------------------------------------------- gradient
class GdEngine final : public FixedPointOperator {
 public:
  GdEngine(std::shared_ptr<const CompositeOracle> o)
      : FixedPointOperator(EngineKind::gd, {}, o->zdim()), o_(std::move(o)) {
    if (o_->composite())
      throw InvalidConfig("gd engine needs a smooth objective (g == 0)");
  }

  StepData step(const Vec& z, double alpha) const override {
    StepData sd;
    Vec g = o_->grad(z);
    sd.y = z - alpha * g;
    sd.stash.push_back(std::move(g));
    return sd;
  }

  void step_vjp(const StepData& sd, const Vec& z, double alpha, const Vec& ybar,
                Vec& zbar, double& alphabar, ThetaInv&) const override {
    zbar += ybar - alpha * o_->hvp(z, ybar);
    alphabar -= ybar.dot(sd.stash[0]);
  }

  double metric_at(const Vec& z, const Vec&) const override {
    return o_->f(z) - o_->objective_star();
  }
  double loss(const Vec& zK, const Vec&) const override {
    return o_->f(zK) - o_->objective_star();
  }
  void loss_vjp(const Vec& zK, const Vec&, Vec& zbar, Vec&, ThetaInv&) const override {
    zbar += o_->grad(zK);
  }

 private:
  std::shared_ptr<const CompositeOracle> o_;
};

// ---------------------------------------------------------- proximal gradient
class ProxGdEngine final : public FixedPointOperator {
 public:
  ProxGdEngine(std::shared_ptr<const CompositeOracle> o)
      : FixedPointOperator(EngineKind::prox_gd, {}, o->zdim()), o_(std::move(o)) {}

  StepData step(const Vec& z, double alpha) const override {
    StepData sd;
    Vec g = o_->grad(z);
    Vec u = z - alpha * g;
    sd.y = o_->prox_g(u, alpha);
    sd.stash.push_back(std::move(g));
    sd.stash.push_back(std::move(u));
    return sd;
  }

  void step_vjp(const StepData& sd, const Vec& z, double alpha, const Vec& ybar,
                Vec& zbar, double& alphabar, ThetaInv&) const override {
    const Vec& g = sd.stash[0];
    const Vec& u = sd.stash[1];
    Vec ubar = Vec::Zero(dim_);
    o_->prox_g_vjp(u, alpha, sd.y, ybar, ubar, alphabar);
    zbar += ubar - alpha * o_->hvp(z, ubar);
    alphabar -= ubar.dot(g);
  }

  // feasible representative: l1 objectives are finite at z^K, indicator
  // objectives are measured at the last prox output y^K
  double metric_at(const Vec& z, const Vec& y) const override {
    const Vec& p = indicator_g() ? y : z;
    return o_->objective(p) - o_->objective_star();
  }
  double loss(const Vec& zK, const Vec& yK) const override {
    return metric_at(zK, yK);
  }
  void loss_vjp(const Vec& zK, const Vec& yK, Vec& zbar, Vec& ybar,
                ThetaInv&) const override {
    if (indicator_g()) {
      ybar += o_->grad(yK) + o_->g_subgrad(yK);
    } else {
      zbar += o_->grad(zK) + o_->g_subgrad(zK);
    }
  }

 private:
  bool indicator_g() const {
    // detect indicator-style g: value identically 0 but prox not identity
    Vec probe = Vec::Constant(dim_, -1.0);
    return o_->g(probe) == 0.0;
  }
  std::shared_ptr<const CompositeOracle> o_;
};

// ------------------------------------------------- Douglas-Rachford (ADMM)
// splitting on f(w) = 0.5 ||Aw - x||^2, g from the family; eta is the prox scale
class AdmmEngine final : public FixedPointOperator {
 public:
  AdmmEngine(std::shared_ptr<const InstanceOps> ops, ThetaInv inv)
      : FixedPointOperator(EngineKind::admm, std::move(inv), ops->zdim()),
        ops_(std::move(ops)),
        a_(ops_->data_matrix()),
        atx_(a_.transpose() * ops_->target()),
        eta_(this->inv("eta")) {
    if (ops_->conic()) throw InvalidConfig("admm engine wants a composite family");
    Mat m = eta_ * (a_.transpose() * a_);
    m.diagonal().array() += 1.0;
    fac_ = std::make_unique<SpdFactor>(factorize_spd(SymMatrix(m)));
    factorizations_ = 1;
  }

  StepData step(const Vec& z, double alpha) const override {
    StepData sd;
    Vec w = fac_->solve(Vec(z + eta_ * atx_));
    Vec p = 2.0 * w - z;
    Vec wt = ops_->prox_g(p, eta_);
    sd.y = z + alpha * (wt - w);
    sd.stash = {std::move(w), std::move(p), std::move(wt)};
    return sd;
  }

  void step_vjp(const StepData& sd, const Vec&, double alpha, const Vec& ybar,
                Vec& zbar, double& alphabar, ThetaInv& invbar) const override {
    const Vec& w = sd.stash[0];
    const Vec& p = sd.stash[1];
    const Vec& wt = sd.stash[2];
    alphabar += ybar.dot(wt - w);
    zbar += ybar;
    Vec wtbar = alpha * ybar;
    Vec wbar = -alpha * ybar;
    double etabar = 0.0;
    Vec pbar = Vec::Zero(dim_);
    ops_->prox_g_vjp(p, eta_, wt, wtbar, pbar, etabar);
    wbar += 2.0 * pbar;
    zbar -= pbar;
    prox_f_vjp(w, wbar, zbar, etabar);
    invbar["eta"] += etabar;
  }

  Vec fixed_point_map(const Vec& z) const override {
    Vec w = fac_->solve(Vec(z + eta_ * atx_));
    Vec wt = ops_->prox_g(2.0 * w - z, eta_);
    return z + 2.0 * (wt - w);
  }

  double metric_at(const Vec& z, const Vec&) const override {
    Vec w = fac_->solve(Vec(z + eta_ * atx_));
    Vec wt = ops_->prox_g(2.0 * w - z, eta_);
    return ops_->objective(wt) - ops_->objective_star();
  }
  double loss(const Vec& zK, const Vec& yK) const override {
    return metric_at(zK, yK);
  }
  void loss_vjp(const Vec& zK, const Vec&, Vec& zbar, Vec&,
                ThetaInv& invbar) const override {
    Vec w = fac_->solve(Vec(zK + eta_ * atx_));
    Vec p = 2.0 * w - zK;
    Vec wt = ops_->prox_g(p, eta_);
    Vec wtbar = ops_->grad(wt) + ops_->g_subgrad(wt);
    double etabar = 0.0;
    Vec pbar = Vec::Zero(dim_);
    ops_->prox_g_vjp(p, eta_, wt, wtbar, pbar, etabar);
    Vec wbar = 2.0 * pbar;
    zbar -= pbar;
    prox_f_vjp(w, wbar, zbar, etabar);
    invbar["eta"] += etabar;
  }

 private:
  // w = (I + eta AᵀA)^{-1} (z + eta Aᵀx); accumulate adjoints of z and eta
  void prox_f_vjp(const Vec& w, const Vec& wbar, Vec& zbar, double& etabar) const {
    Vec rbar = fac_->solve(wbar);
    zbar += rbar;
    etabar += rbar.dot(atx_) - (a_ * rbar).dot(a_ * w);
  }

  std::shared_ptr<const InstanceOps> ops_;
  Mat a_;
  Vec atx_;
  double eta_;
  std::unique_ptr<SpdFactor> fac_;
};

// --------------------------------------------------------------------- OSQP
class OsqpEngine final : public FixedPointOperator {
 public:
  OsqpEngine(std::shared_ptr<const InstanceOps> ops, ThetaInv inv)
      : FixedPointOperator(
            EngineKind::osqp, std::move(inv),
            ops->conic() ? static_cast<int>(ops->conic()->P.rows() +
                                            ops->conic()->A.rows())
                         : 0),
        ops_(std::move(ops)) {
    const ConicData* cd = ops_->conic();
    if (!cd || cd->l.size() == 0)
      throw InvalidConfig("osqp engine needs a box-constrained qp instance");
    p_ = cd->P;
    a_ = cd->A;
    c_ = cd->c;
    l_ = cd->l;
    u_ = cd->u;
    q_ = static_cast<int>(p_.rows());
    m_ = static_cast<int>(a_.rows());
    sigma_ = this->inv("sigma");
    rho_.resize(m_);
    eq_row_.resize(m_);
    for (int i = 0; i < m_; ++i) {
      eq_row_[i] = l_(i) == u_(i);
      rho_(i) = eq_row_[i] ? this->inv("rho_eq") : this->inv("rho_ineq");
    }
    Mat qm = p_ + a_.transpose() * rho_.asDiagonal() * a_;
    qm.diagonal().array() += sigma_;
    fac_ = std::make_unique<SpdFactor>(factorize_spd(SymMatrix(qm)));
    factorizations_ = 1;
  }

  StepData step(const Vec& z, double alpha) const override {
    Vec w = z.head(q_), xi = z.tail(m_);
    Vec v = project_box(xi, l_, u_);
    Vec rhs = sigma_ * w - c_ + a_.transpose() * (rho_.cwiseProduct(2.0 * v - xi));
    Vec wt = fac_->solve(rhs);
    Vec awt = a_ * wt;
    StepData sd;
    sd.y.resize(dim_);
    sd.y.head(q_) = w + alpha * (wt - w);
    sd.y.tail(m_) = xi + alpha * (awt - v);
    sd.stash = {std::move(v), std::move(wt), std::move(awt)};
    return sd;
  }

  void step_vjp(const StepData& sd, const Vec& z, double alpha, const Vec& ybar,
                Vec& zbar, double& alphabar, ThetaInv& invbar) const override {
    const Vec& v = sd.stash[0];
    const Vec& wt = sd.stash[1];
    const Vec& awt = sd.stash[2];
    Vec w = z.head(q_), xi = z.tail(m_);
    Vec ybw = ybar.head(q_), ybxi = ybar.tail(m_);

    alphabar += ybw.dot(wt - w) + ybxi.dot(awt - v);
    Vec wbar = (1.0 - alpha) * ybw;
    Vec wtbar = alpha * (ybw + a_.transpose() * ybxi);
    Vec vbar = -alpha * ybxi;
    Vec xibar = ybxi;

    Vec rb = fac_->solve(wtbar);
    wbar += sigma_ * rb;
    double sigmabar = rb.dot(w) - rb.dot(wt);
    Vec arb = a_ * rb;
    Vec s2v = 2.0 * v - xi;
    double rho_eq_bar = 0, rho_ineq_bar = 0;
    for (int i = 0; i < m_; ++i) {
      double d = arb(i) * (s2v(i) - awt(i));
      (eq_row_[i] ? rho_eq_bar : rho_ineq_bar) += d;
    }
    vbar += 2.0 * rho_.cwiseProduct(arb);
    xibar -= rho_.cwiseProduct(arb);
    for (int i = 0; i < m_; ++i)
      if (l_(i) < xi(i) && xi(i) < u_(i)) xibar(i) += vbar(i);

    zbar.head(q_) += wbar;
    zbar.tail(m_) += xibar;
    invbar["sigma"] += sigmabar;
    invbar["rho_eq"] += rho_eq_bar;
    invbar["rho_ineq"] += rho_ineq_bar;
  }

  Vec fixed_point_map(const Vec& z) const override {
    StepData sd = step(z, 2.0);
    return sd.y;
  }

  Vec metric_diag() const override {
    Vec r(dim_);
    r.head(q_).setConstant(sigma_);
    r.tail(m_) = rho_;
    return r;
  }

  std::pair<double, double> residual_pair(const Vec& z) const override {
    Vec w = z.head(q_), xi = z.tail(m_);
    Vec v = project_box(xi, l_, u_);
    Vec y = rho_.cwiseProduct(xi - v);
    double pri = (a_ * w - v).norm();
    double dua = (p_ * w + a_.transpose() * y + c_).norm();
    return {pri, dua};
  }

  double metric_at(const Vec& z, const Vec&) const override {
    auto [pri, dua] = residual_pair(z);
    return pri + dua;
  }
  double loss(const Vec& zK, const Vec& yK) const override {
    return metric_at(zK, yK);
  }
  void loss_vjp(const Vec& zK, const Vec&, Vec& zbar, Vec&,
                ThetaInv& invbar) const override {
    Vec w = zK.head(q_), xi = zK.tail(m_);
    Vec v = project_box(xi, l_, u_);
    Vec d = xi - v;
    Vec e = a_ * w - v;
    Vec gv = p_ * w + a_.transpose() * (rho_.cwiseProduct(d)) + c_;
    Vec wbar = Vec::Zero(q_), xibar = Vec::Zero(m_), vbar = Vec::Zero(m_);
    double en = e.norm(), gn = gv.norm();
    if (en > 0) {
      Vec eh = e / en;
      wbar += a_.transpose() * eh;
      vbar -= eh;
    }
    if (gn > 0) {
      Vec gh = gv / gn;
      wbar += p_ * gh;
      Vec agh = a_ * gh;
      Vec dbar = rho_.cwiseProduct(agh);
      double rho_eq_bar = 0, rho_ineq_bar = 0;
      for (int i = 0; i < m_; ++i)
        (eq_row_[i] ? rho_eq_bar : rho_ineq_bar) += agh(i) * d(i);
      invbar["rho_eq"] += rho_eq_bar;
      invbar["rho_ineq"] += rho_ineq_bar;
      xibar += dbar;
      vbar -= dbar;
    }
    for (int i = 0; i < m_; ++i)
      if (l_(i) < xi(i) && xi(i) < u_(i)) xibar(i) += vbar(i);
    zbar.head(q_) += wbar;
    zbar.tail(m_) += xibar;
  }

 private:
  std::shared_ptr<const InstanceOps> ops_;
  Mat p_, a_;
  Vec c_, l_, u_, rho_;
  std::vector<bool> eq_row_;
  double sigma_ = 0;
  int q_ = 0, m_ = 0;
  std::unique_ptr<SpdFactor> fac_;
};

// ---------------------------------------------------------------------- SCS
class ScsEngine final : public FixedPointOperator {
 public:
  ScsEngine(std::shared_ptr<const InstanceOps> ops, ThetaInv inv)
      : FixedPointOperator(
            EngineKind::scs, std::move(inv),
            ops->conic() ? static_cast<int>(ops->conic()->P.rows() +
                                            ops->conic()->A.rows())
                         : 0),
        ops_(std::move(ops)) {
    const ConicData* cd = ops_->conic();
    if (!cd || cd->b.size() == 0)
      throw InvalidConfig("scs engine needs a cone-form instance");
    p_ = cd->P;
    a_ = cd->A;
    c_ = cd->c;
    b_ = cd->b;
    cones_ = cd->cones;
    q_ = static_cast<int>(p_.rows());
    m_ = static_cast<int>(a_.rows());
    rw_ = this->inv("r_w");
    rv_.resize(m_);
    for (int i = 0; i < m_; ++i)
      rv_(i) = i < cones_.zero ? this->inv("r_yz") : this->inv("r_ynz");
    Mat qm = p_ + a_.transpose() * rv_.cwiseInverse().asDiagonal() * a_;
    qm.diagonal().array() += rw_;
    fac_ = std::make_unique<SpdFactor>(factorize_spd(SymMatrix(qm)));
    factorizations_ = 1;
  }

  // resolvent of the affine KKT operator in the metric R = diag(rw, rv)
  struct Resolvent {
    Vec ut;  // (wt, vt)
    Vec p;   // 2 ut - z
    Vec u;   // projection of p onto R^q x K^*
  };

  Resolvent resolve(const Vec& z) const {
    Resolvent r;
    Vec r1 = rw_ * z.head(q_) - c_;
    Vec r2 = rv_.cwiseProduct(z.tail(m_)) - b_;
    Vec wt = fac_->solve(Vec(r1 - a_.transpose() * r2.cwiseQuotient(rv_)));
    Vec vt = (r2 + a_ * wt).cwiseQuotient(rv_);
    r.ut.resize(dim_);
    r.ut << wt, vt;
    r.p = 2.0 * r.ut - z;
    r.u = r.p;
    r.u.tail(m_) = project_dual_cone(r.p.tail(m_));
    return r;
  }

  StepData step(const Vec& z, double alpha) const override {
    Resolvent r = resolve(z);
    StepData sd;
    sd.y = z + alpha * (r.u - r.ut);
    sd.stash = {std::move(r.ut), std::move(r.p), std::move(r.u)};
    return sd;
  }

  void step_vjp(const StepData& sd, const Vec& z, double alpha, const Vec& ybar,
                Vec& zbar, double& alphabar, ThetaInv& invbar) const override {
    const Vec& ut = sd.stash[0];
    const Vec& p = sd.stash[1];
    const Vec& u = sd.stash[2];
    alphabar += ybar.dot(u - ut);
    zbar += ybar;
    Vec ubar = alpha * ybar;
    Vec utbar = -alpha * ybar;
    Vec pbar = ubar;
    pbar.tail(m_) = dual_cone_vjp(p.tail(m_), ubar.tail(m_));
    utbar += 2.0 * pbar;
    zbar -= pbar;
    solve_adjoint(z, ut, utbar, zbar, invbar);
  }

  Vec fixed_point_map(const Vec& z) const override {
    Resolvent r = resolve(z);
    return z + 2.0 * (r.u - r.ut);
  }

  Vec metric_diag() const override {
    Vec r(dim_);
    r.head(q_).setConstant(rw_);
    r.tail(m_) = rv_;
    return r;
  }

  std::pair<double, double> residual_pair(const Vec& z) const override {
    Resolvent r = resolve(z);
    Vec w = r.ut.head(q_);
    Vec v = r.u.tail(m_);
    Vec s = rv_.cwiseProduct(r.u.tail(m_) - r.p.tail(m_));
    double pri = (a_ * w + s - b_).norm();
    double dua = (p_ * w + a_.transpose() * v + c_).norm();
    return {pri, dua};
  }

  double metric_at(const Vec& z, const Vec&) const override {
    auto [pri, dua] = residual_pair(z);
    return pri + dua;
  }
  double loss(const Vec& zK, const Vec& yK) const override {
    return metric_at(zK, yK);
  }
  void loss_vjp(const Vec& zK, const Vec&, Vec& zbar, Vec&,
                ThetaInv& invbar) const override {
    Resolvent r = resolve(zK);
    Vec w = r.ut.head(q_);
    Vec uv = r.u.tail(m_), pv = r.p.tail(m_);
    Vec dv = uv - pv;
    Vec s = rv_.cwiseProduct(dv);
    Vec e = a_ * w + s - b_;
    Vec gv = p_ * w + a_.transpose() * uv + c_;
    double en = e.norm(), gn = gv.norm();
    Vec utbar = Vec::Zero(dim_);
    Vec ubar = Vec::Zero(dim_);
    Vec sbar = Vec::Zero(m_);
    if (en > 0) {
      Vec eh = e / en;
      utbar.head(q_) += a_.transpose() * eh;
      sbar += eh;
    }
    if (gn > 0) {
      Vec gh = gv / gn;
      utbar.head(q_) += p_ * gh;
      ubar.tail(m_) += a_ * gh;
    }
    // s = rv (uv - pv)
    Vec rvbar_vec = sbar.cwiseProduct(dv);
    ubar.tail(m_) += rv_.cwiseProduct(sbar);
    Vec pvbar_direct = -rv_.cwiseProduct(sbar);
    // u = proj(p)
    Vec pbar = Vec::Zero(dim_);
    pbar.tail(m_) = dual_cone_vjp(pv, Vec(ubar.tail(m_))) + pvbar_direct;
    pbar.head(q_) += ubar.head(q_);  // identity part (unused by residuals)
    utbar += 2.0 * pbar;
    zbar -= pbar;
    accumulate_rv(rvbar_vec, invbar);
    solve_adjoint(zK, r.ut, utbar, zbar, invbar);
  }

 private:
  Vec project_dual_cone(const Vec& p) const {
    Vec out = p;
    int row = cones_.zero;  // dual of the zero cone is all of R
    for (int i = 0; i < cones_.nonneg; ++i, ++row) out(row) = std::max(0.0, p(row));
    for (int sd : cones_.soc) {
      out.segment(row, sd) = project_soc(p.segment(row, sd));
      row += sd;
    }
    return out;
  }

  // reverse-mode through the dual-cone projection (active-set convention)
  Vec dual_cone_vjp(const Vec& p, const Vec& ubar) const {
    Vec pbar = Vec::Zero(m_);
    int row = 0;
    for (int i = 0; i < cones_.zero; ++i, ++row) pbar(row) = ubar(row);
    for (int i = 0; i < cones_.nonneg; ++i, ++row)
      if (p(row) > 0) pbar(row) = ubar(row);
    for (int sd : cones_.soc) {
      double t = p(row);
      Vec x = p.segment(row + 1, sd - 1);
      double nx = x.norm();
      if (nx <= t) {
        pbar.segment(row, sd) = ubar.segment(row, sd);
      } else if (nx <= -t) {
        // projection is 0, jacobian 0
      } else {
        Vec xh = x / nx;
        double a = ubar(row);
        Vec bb = ubar.segment(row + 1, sd - 1);
        double xb = xh.dot(bb);
        pbar(row) = 0.5 * (a + xb);
        pbar.segment(row + 1, sd - 1) =
            0.5 * (a * xh + (1.0 + t / nx) * bb - (t / nx) * xb * xh);
      }
      row += sd;
    }
    return pbar;
  }

  // adjoint of ut = (R+M)^{-1}(Rz - q): transposed elimination reuses fac_
  void solve_adjoint(const Vec& z, const Vec& ut, const Vec& utbar, Vec& zbar,
                     ThetaInv& invbar) const {
    Vec hw = utbar.head(q_), hv = utbar.tail(m_);
    Vec gw = fac_->solve(Vec(hw + a_.transpose() * hv.cwiseQuotient(rv_)));
    Vec gv = (hv - a_ * gw).cwiseQuotient(rv_);
    zbar.head(q_) += rw_ * gw;
    zbar.tail(m_) += rv_.cwiseProduct(gv);
    Vec zmu = z - ut;
    invbar["r_w"] += gw.dot(zmu.head(q_));
    accumulate_rv(Vec(gv.cwiseProduct(zmu.tail(m_))), invbar);
  }

  void accumulate_rv(const Vec& per_row, ThetaInv& invbar) const {
    double yz = 0, ynz = 0;
    for (int i = 0; i < m_; ++i) (i < cones_.zero ? yz : ynz) += per_row(i);
    invbar["r_yz"] += yz;
    invbar["r_ynz"] += ynz;
  }

  std::shared_ptr<const InstanceOps> ops_;
  Mat p_, a_;
  Vec c_, b_, rv_;
  Cones cones_;
  double rw_ = 1.0;
  int q_ = 0, m_ = 0;
  std::unique_ptr<SpdFactor> fac_;
};

}  // namespace

std::unique_ptr<FixedPointOperator> bind_engine(
    EngineKind kind, std::shared_ptr<const InstanceOps> ops,
    const ThetaInv& theta_inv) {
  if ((kind == EngineKind::gd || kind == EngineKind::prox_gd) && ops->conic())
    throw InvalidConfig("gradient engines need an unconstrained family");
  switch (kind) {
    case EngineKind::gd: return std::make_unique<GdEngine>(ops);
    case EngineKind::prox_gd: return std::make_unique<ProxGdEngine>(ops);
    case EngineKind::admm: return std::make_unique<AdmmEngine>(ops, theta_inv);
    case EngineKind::osqp: return std::make_unique<OsqpEngine>(ops, theta_inv);
    case EngineKind::scs: return std::make_unique<ScsEngine>(ops, theta_inv);
  }
  throw InvalidConfig("bind_engine: unknown kind");
}

std::unique_ptr<FixedPointOperator> bind_gradient_engine(
    EngineKind kind, std::shared_ptr<const CompositeOracle> oracle) {
  if (kind == EngineKind::gd) return std::make_unique<GdEngine>(std::move(oracle));
  if (kind == EngineKind::prox_gd)
    return std::make_unique<ProxGdEngine>(std::move(oracle));
  throw InvalidConfig("bind_gradient_engine: gd/prox_gd only");
}

IterateTrace run_accelerated(const FixedPointOperator& op,
                             const HyperparamSchedule& sched, int K) {
  sched.validate();
  if (sched.kind != op.kind())
    throw InvalidConfig("run_accelerated: schedule built for another engine");
  if (K < 0) K = sched.K;
  if (K > sched.K) throw InvalidConfig("run_accelerated: K exceeds schedule");
  auto t0 = std::chrono::steady_clock::now();
  IterateTrace tr;
  int n = op.dim();
  tr.ys.push_back(Vec::Zero(n));
  tr.zs.push_back(Vec::Zero(n));
  for (int k = 0; k < K; ++k) {
    Vec y = op.apply(tr.zs[k], sched.alphas[k]);
    Vec z = (1.0 + sched.betas[k]) * y - sched.betas[k] * tr.ys[k];
    if (!y.allFinite() || !z.allFinite())
      throw NonFiniteIterate("run_accelerated: nonfinite iterate", k + 1);
    tr.ys.push_back(std::move(y));
    tr.zs.push_back(std::move(z));
  }
  bool conic = op.kind() == EngineKind::osqp || op.kind() == EngineKind::scs;
  for (int k = 0; k <= K; ++k) {
    tr.metrics.push_back(op.metric_at(tr.zs[k], tr.ys[k]));
    if (conic) {
      auto [pri, dua] = op.residual_pair(tr.zs[k]);
      tr.primal_res.push_back(pri);
      tr.dual_res.push_back(dua);
    }
  }
  tr.factorizations = op.factorizations();
  tr.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return tr;
}

std::vector<std::pair<double, double>> residuals(const FixedPointOperator& op,
                                                 const IterateTrace& trace) {
  std::vector<std::pair<double, double>> out;
  out.reserve(trace.zs.size());
  for (const Vec& z : trace.zs) out.push_back(op.residual_pair(z));
  return out;
}

HyperparamSchedule nesterov_schedule(EngineKind kind, int K, double mu, double L) {
  if (!(L > 0) || mu < 0 || mu > L) throw InvalidConfig("nesterov_schedule: bad mu/L");
  if (admm_based(kind)) throw InvalidConfig("nesterov_schedule: gd/prox_gd only");
  HyperparamSchedule s;
  s.kind = kind;
  s.K = K;
  s.alphas.assign(K, 1.0 / L);
  s.betas.resize(K);
  if (mu > 0) {
    double b = (std::sqrt(L) - std::sqrt(mu)) / (std::sqrt(L) + std::sqrt(mu));
    std::fill(s.betas.begin(), s.betas.end(), b);
  } else {
    double t = 1.0;
    for (int k = 0; k < K; ++k) {
      double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      s.betas[k] = (t - 1.0) / tn;
      t = tn;
    }
  }
  return s;
}

HyperparamSchedule vanilla_admm_schedule(EngineKind kind, int K) {
  if (!admm_based(kind)) throw InvalidConfig("vanilla_admm_schedule: admm kinds only");
  HyperparamSchedule s;
  s.kind = kind;
  s.K = K;
  s.alphas.assign(K, 1.0);
  s.betas.assign(K, 0.0);
  s.theta_inv = theta_inv_defaults(kind);
  return s;
}

BacktrackResult backtracking_step(const InstanceOps& ops, const Vec& z,
                                  double alpha0, double shrink, double c1) {
  if (!(alpha0 > 0) || !(shrink > 0) || !(shrink < 1) || !(c1 > 0) || !(c1 < 1))
    throw InvalidConfig("backtracking_step: bad parameters");
  Vec g = ops.grad(z);
  double fz = ops.f(z);
  double alpha = alpha0;
  int evals = 0;
  while (true) {
    if (alpha < 1e-16)
      throw StepUnderflow("backtracking_step: step below 1e-16");
    ++evals;
    if (ops.composite()) {
      Vec znew = ops.prox_g(z - alpha * g, alpha);
      Vec diff = znew - z;
      if (ops.f(znew) <=
          fz + g.dot(diff) + diff.squaredNorm() / (2.0 * alpha))
        return {alpha, znew, evals};
    } else {
      Vec znew = z - alpha * g;
      if (ops.f(znew) <= fz - c1 * alpha * g.squaredNorm())
        return {alpha, znew, evals};
    }
    alpha *= shrink;
  }
}

void trace_to_csv(const IterateTrace& trace, const std::string& path) {
  std::ofstream out(path);
  out << "k,metric,primal_res,dual_res\n";
  for (size_t k = 0; k < trace.metrics.size(); ++k) {
    out << k << ',' << trace.metrics[k] << ',';
    if (k < trace.primal_res.size())
      out << trace.primal_res[k] << ',' << trace.dual_res[k];
    else
      out << ",";
    out << '\n';
  }
}

}  // namespace lacert
