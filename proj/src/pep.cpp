#include "lacert/pep.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <utility>

#include <json.hpp>

namespace lacert {

namespace {

// ---------------------------------------------------------------------------
// forward-mode jets: a coefficient vector plus its derivative against every
// schedule entry (alpha^0..alpha^{K-1}, beta^0..beta^{K-1})

struct Jet {
  Vec val;
  std::vector<Vec> der;
};

Jet zero_jet(int basis, int ntheta) {
  Jet j;
  j.val = Vec::Zero(basis);
  j.der.assign(static_cast<size_t>(ntheta), Vec::Zero(basis));
  return j;
}

Jet basis_jet(int col, int basis, int ntheta) {
  Jet j = zero_jet(basis, ntheta);
  j.val(col) = 1.0;
  return j;
}

Jet lincomb(double a, const Jet& x, double b, const Jet& y) {
  Jet j;
  j.val = a * x.val + b * y.val;
  j.der.resize(x.der.size());
  for (size_t t = 0; t < x.der.size(); ++t)
    j.der[t] = a * x.der[t] + b * y.der[t];
  return j;
}

// ---------------------------------------------------------------------------
// coefficient propagation

struct Tableau {
  int basis = 0;
  int ntheta = 0;
  std::vector<std::string> labels;
  std::vector<Jet> rho_z, rho_y;  // 0..K
  Jet rho_star;
  std::vector<Jet> sigma;  // 0..K
  Jet sigma_star;
  std::vector<Jet> tau;  // 1..K at index k-1
  Jet tau_star;
};

Tableau propagate(const HyperparamSchedule& sched, const ClassSpec& cls,
                  int K) {
  const bool oper = cls.kind == PepClass::nonexpansive;
  const bool comp = cls.composite;
  Tableau tb;
  tb.basis = (!oper && comp) ? 2 * K + 5 : K + 4;
  tb.ntheta = 2 * K;

  tb.labels.emplace_back("z0");
  tb.labels.emplace_back("zstar");
  const char* ev = oper ? "S" : "df";
  for (int k = 0; k <= K; ++k) tb.labels.push_back(ev + std::to_string(k));
  tb.labels.push_back(std::string(ev) + "star");
  if (!oper && comp) {
    for (int k = 1; k <= K; ++k) tb.labels.push_back("dg" + std::to_string(k));
    tb.labels.emplace_back("dgstar");
  }

  auto unit = [&](int col) { return basis_jet(col, tb.basis, tb.ntheta); };
  for (int k = 0; k <= K; ++k) tb.sigma.push_back(unit(2 + k));
  tb.sigma_star = unit(K + 3);
  if (!oper && comp) {
    for (int k = 1; k <= K; ++k) tb.tau.push_back(unit(K + 3 + k));
    tb.tau_star = unit(2 * K + 4);
  }

  tb.rho_z.push_back(unit(0));
  tb.rho_y.push_back(unit(0));
  tb.rho_star = unit(1);
  for (int k = 0; k < K; ++k) {
    const double alpha = sched.alphas[static_cast<size_t>(k)];
    const double beta = sched.betas[static_cast<size_t>(k)];
    const int ja = k, jb = K + k;
    Jet y1 = zero_jet(tb.basis, tb.ntheta);
    if (oper) {
      const double da = cls.averaging == Averaging::half_alpha ? 0.5 : 1.0;
      const double a = da * alpha;
      y1 = lincomb(1.0 - a, tb.rho_z[static_cast<size_t>(k)], a,
                   tb.sigma[static_cast<size_t>(k)]);
      y1.der[static_cast<size_t>(ja)] +=
          da * (tb.sigma[static_cast<size_t>(k)].val -
                tb.rho_z[static_cast<size_t>(k)].val);
    } else {
      Jet dir = comp ? lincomb(1.0, tb.sigma[static_cast<size_t>(k)], 1.0,
                               tb.tau[static_cast<size_t>(k)])
                     : tb.sigma[static_cast<size_t>(k)];
      y1 = lincomb(1.0, tb.rho_z[static_cast<size_t>(k)], -alpha, dir);
      y1.der[static_cast<size_t>(ja)] -= dir.val;
    }
    Jet z1 = lincomb(1.0 + beta, y1, -beta, tb.rho_y[static_cast<size_t>(k)]);
    z1.der[static_cast<size_t>(jb)] +=
        y1.val - tb.rho_y[static_cast<size_t>(k)].val;
    tb.rho_y.push_back(std::move(y1));
    tb.rho_z.push_back(std::move(z1));
  }
  return tb;
}

// ---------------------------------------------------------------------------
// abstract constraint data: every matrix is a sum of symmetric outer-product
// terms coeff * sym(vecs[u] vecs[v]^T), so the same representation serves the
// SDP assembly and the envelope gradient (product rule through the jets).

struct Term {
  double coeff;
  int u, v;
};

struct Entry {
  std::vector<Term> terms;
  std::vector<std::pair<int, double>> scalars;
  double rhs = 0.0;
  SdpSense sense = SdpSense::le;
  int block = -1;
  int row = 0, col = 0;
};

struct Program {
  Tableau tb;
  std::vector<Jet> vecs;
  Entry objective;
  std::vector<Entry> cons;
  int nscalar = 0;
  std::vector<int> block_dims;
};

int push_vec(Program& p, Jet j) {
  p.vecs.push_back(std::move(j));
  return static_cast<int>(p.vecs.size()) - 1;
}

void check_args(const HyperparamSchedule& sched, const ClassSpec& cls, int K) {
  cls.validate();
  sched.validate();
  if (sched.K != K)
    throw DimensionMismatch("schedule has K=" + std::to_string(sched.K) +
                            " but the certification budget is " +
                            std::to_string(K));
  if (cls.kind != PepClass::nonexpansive && K < 1)
    throw UnsupportedCombination("function-class certification needs K >= 1");
}

Program build_program(const HyperparamSchedule& sched, const ClassSpec& cls,
                      int K) {
  check_args(sched, cls, K);
  Program p;
  p.tb = propagate(sched, cls, K);

  // sample points: index 0..K at the iterates, index K+1 at z*
  const int star = K + 1;
  const bool comp = cls.composite;
  // With g present, step K's f-sample sits at the prox output y^K: that is
  // where the function gap is measured, and pairing f and g values at two
  // different points would let a steep shared slope (f linear up, g linear
  // down, invisible to the algorithm) grow the gap without bound. Without
  // momentum on the last step y^K and z^K coincide.
  auto rho_f = [&](int i) {
    if (i == star) return p.tb.rho_star;
    if (comp && i == K && cls.kind == PepClass::smooth_convex)
      return p.tb.rho_y[static_cast<size_t>(K)];
    return p.tb.rho_z[static_cast<size_t>(i)];
  };
  auto sig = [&](int i) {
    return i == star ? p.tb.sigma_star : p.tb.sigma[static_cast<size_t>(i)];
  };
  // g is sampled at the prox outputs y^1..y^K and z* (indices 1..K, star)
  [[maybe_unused]] auto rho_g = [&](int i) {
    return i == star ? p.tb.rho_star : p.tb.rho_y[static_cast<size_t>(i)];
  };
  [[maybe_unused]] auto tau = [&](int i) {
    return i == star ? p.tb.tau_star : p.tb.tau[static_cast<size_t>(i - 1)];
  };

  int fbase = -1, gbase = -1;
  if (cls.kind == PepClass::smooth_convex) {
    fbase = 0;
    p.nscalar = K + 2;
    if (comp) {
      gbase = K + 2;
      p.nscalar += K + 1;
    }
  } else if (cls.kind == PepClass::quadratic && comp) {
    gbase = 0;
    p.nscalar = K + 1;
  }
  [[maybe_unused]] auto fscal = [&](int i) { return fbase + i; };  // 0..K, star
  [[maybe_unused]] auto gscal = [&](int i) { return gbase + i - 1; };  // 1..K
  [[maybe_unused]] auto gscal_star = [&]() { return gbase + K; };

  // initial distance tr(G A0) <= 1
  {
    Entry e;
    int d = push_vec(p, lincomb(1, p.tb.rho_z[0], -1, p.tb.rho_star));
    e.terms = {{1.0, d, d}};
    e.rhs = 1.0;
    e.sense = SdpSense::le;
    p.cons.push_back(std::move(e));
  }
  // optimality of z*: zero gradient sum (function case) or fixed point
  {
    Jet w = cls.kind == PepClass::nonexpansive
                ? lincomb(1, p.tb.rho_star, -1, p.tb.sigma_star)
                : (comp ? lincomb(1, p.tb.sigma_star, 1, p.tb.tau_star)
                        : p.tb.sigma_star);
    Entry e;
    int wi = push_vec(p, std::move(w));
    e.terms = {{1.0, wi, wi}};
    e.rhs = 0.0;
    e.sense = SdpSense::eq;
    p.cons.push_back(std::move(e));
  }

  if (cls.kind == PepClass::smooth_convex) {
    const double cmu =
        cls.mu > 0.0 ? cls.mu / (2.0 * (1.0 - cls.mu / cls.L)) : 0.0;
    for (int i = 0; i <= star; ++i) {
      for (int j = 0; j <= star; ++j) {
        if (i == j) continue;
        Entry e;
        int d = push_vec(p, lincomb(1, rho_f(j), -1, rho_f(i)));
        int si = push_vec(p, sig(i));
        e.terms.push_back({1.0, d, si});
        int s = push_vec(p, lincomb(1, sig(i), -1, sig(j)));
        e.terms.push_back({1.0 / (2.0 * cls.L), s, s});
        if (cmu > 0.0) {
          int q = push_vec(
              p, lincomb(-1, p.vecs[static_cast<size_t>(d)], -1.0 / cls.L,
                         p.vecs[static_cast<size_t>(s)]));
          e.terms.push_back({cmu, q, q});
        }
        e.scalars = {{fscal(i), 1.0}, {fscal(j), -1.0}};
        e.sense = SdpSense::le;
        p.cons.push_back(std::move(e));
      }
    }
  } else if (cls.kind == PepClass::quadratic) {
    // symmetry equalities rho^a G sigma^b = rho^b G sigma^a
    for (int a = 0; a <= star; ++a) {
      for (int b = a + 1; b <= star; ++b) {
        Entry e;
        e.terms = {{1.0, push_vec(p, rho_f(a)), push_vec(p, sig(b))},
                   {-1.0, push_vec(p, rho_f(b)), push_vec(p, sig(a))}};
        e.sense = SdpSense::eq;
        p.cons.push_back(std::move(e));
      }
    }
    // spectrum block (sigma - mu rho)^T G (L rho - sigma) >= 0, symmetrized
    p.block_dims = {K + 2};
    std::vector<int> lo(static_cast<size_t>(star + 1)),
        hi(static_cast<size_t>(star + 1));
    for (int i = 0; i <= star; ++i) {
      lo[static_cast<size_t>(i)] =
          push_vec(p, lincomb(1, sig(i), -cls.mu, rho_f(i)));
      hi[static_cast<size_t>(i)] =
          push_vec(p, lincomb(cls.L, rho_f(i), -1, sig(i)));
    }
    for (int a = 0; a <= star; ++a) {
      for (int b = a; b <= star; ++b) {
        Entry e;
        e.terms = {{0.5, lo[static_cast<size_t>(a)], hi[static_cast<size_t>(b)]},
                   {0.5, lo[static_cast<size_t>(b)], hi[static_cast<size_t>(a)]}};
        e.sense = SdpSense::psd_block;
        e.block = 0;
        e.row = a;
        e.col = b;
        p.cons.push_back(std::move(e));
      }
    }
  } else {
    // nonexpansiveness ||S z^i - S z^j||^2 <= ||z^i - z^j||^2, unordered pairs
    for (int i = 0; i <= star; ++i) {
      for (int j = i + 1; j <= star; ++j) {
        Entry e;
        int s = push_vec(p, lincomb(1, sig(i), -1, sig(j)));
        int d = push_vec(p, lincomb(1, rho_f(i), -1, rho_f(j)));
        e.terms = {{1.0, s, s}, {-1.0, d, d}};
        e.sense = SdpSense::le;
        p.cons.push_back(std::move(e));
      }
    }
  }

  if (comp && cls.kind != PepClass::nonexpansive) {
    // F_{0,inf} interpolation of g over its sample set {1..K, star}
    for (int i = 1; i <= star; ++i) {
      for (int j = 1; j <= star; ++j) {
        if (i == j) continue;
        Entry e;
        int d = push_vec(p, lincomb(1, rho_g(j), -1, rho_g(i)));
        e.terms = {{1.0, d, push_vec(p, tau(i))}};
        e.scalars = {{i == star ? gscal_star() : gscal(i), 1.0},
                     {j == star ? gscal_star() : gscal(j), -1.0}};
        e.sense = SdpSense::le;
        p.cons.push_back(std::move(e));
      }
    }
  }

  // objective
  switch (cls.metric) {
    case PepMetric::function_gap: {
      p.objective.scalars = {{fscal(K), 1.0}, {fscal(star), -1.0}};
      if (comp) {
        p.objective.scalars.push_back({gscal(K), 1.0});
        p.objective.scalars.push_back({gscal_star(), -1.0});
      }
      break;
    }
    case PepMetric::distance_sq: {
      int r = push_vec(
          p, lincomb(1, p.tb.rho_z[static_cast<size_t>(K)], -1, p.tb.rho_star));
      p.objective.terms = {{1.0, r, r}};
      break;
    }
    case PepMetric::fp_residual: {
      int r = push_vec(p, lincomb(1, p.tb.rho_z[static_cast<size_t>(K)], -1,
                                  p.tb.sigma[static_cast<size_t>(K)]));
      p.objective.terms = {{1.0, r, r}};
      break;
    }
  }
  return p;
}

Mat materialize(const Program& p, const std::vector<Term>& terms) {
  Mat m = Mat::Zero(p.tb.basis, p.tb.basis);
  for (const Term& t : terms) {
    const Vec& u = p.vecs[static_cast<size_t>(t.u)].val;
    const Vec& v = p.vecs[static_cast<size_t>(t.v)].val;
    m += 0.5 * t.coeff * (u * v.transpose() + v * u.transpose());
  }
  return m;
}

Vec scalar_row(const Program& p, const std::vector<std::pair<int, double>>& s) {
  if (s.empty()) return Vec();
  Vec row = Vec::Zero(p.nscalar);
  for (auto& [i, c] : s) row(i) += c;
  return row;
}

SdpProblem to_sdp(const Program& p) {
  SdpProblem sp;
  sp.psd_dim = p.tb.basis;
  sp.scalar_dim = p.nscalar;
  sp.objective = materialize(p, p.objective.terms);
  sp.scalar_objective = scalar_row(p, p.objective.scalars);
  if (p.nscalar > 0 && sp.scalar_objective.size() == 0)
    sp.scalar_objective = Vec::Zero(p.nscalar);
  sp.block_dims = p.block_dims;
  for (const Entry& e : p.cons) {
    SdpConstraint c;
    c.gmat = materialize(p, e.terms);
    c.scalars = scalar_row(p, e.scalars);
    c.rhs = e.rhs;
    c.sense = e.sense;
    c.block = e.block;
    c.row = e.row;
    c.col = e.col;
    sp.constraints.push_back(std::move(c));
  }
  return sp;
}

std::string metric_note(const ClassSpec& cls) {
  switch (cls.metric) {
    case PepMetric::function_gap:
      return cls.composite
                 ? "bounds f(y^K) + g(y^K) - (f+g)(z*) against ||z^0 - z*||^2"
                 : "bounds f(z^K) - f(z*) against ||z^0 - z*||^2";
    case PepMetric::distance_sq:
      return "bounds ||z^K - z*||^2 against ||z^0 - z*||^2";
    case PepMetric::fp_residual:
      return "bounds ||z^K - S(z^K)||^2 against ||z^0 - z*||^2, both in the "
             "R(theta_inv) norm for splitting engines";
  }
  return "";
}

void fnv_bytes(std::uint64_t& h, const void* data, size_t n) {
  const auto* b = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 1099511628211ull;
  }
}

void fnv_double(std::uint64_t& h, double x) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &x, sizeof bits);
  fnv_bytes(h, &bits, sizeof bits);
}

}  // namespace

const char* pep_class_name(PepClass k) {
  switch (k) {
    case PepClass::smooth_convex: return "smooth_convex";
    case PepClass::quadratic: return "quadratic";
    case PepClass::nonexpansive: return "nonexpansive";
  }
  return "?";
}

const char* pep_metric_name(PepMetric m) {
  switch (m) {
    case PepMetric::function_gap: return "function_gap";
    case PepMetric::distance_sq: return "distance_sq";
    case PepMetric::fp_residual: return "fp_residual";
  }
  return "?";
}

int ClassSpec::metric_case() const {
  switch (metric) {
    case PepMetric::function_gap: return 1;
    case PepMetric::distance_sq:
      return kind == PepClass::quadratic ? 3 : 2;
    case PepMetric::fp_residual: return 0;
  }
  return 0;
}

void ClassSpec::validate() const {
  if (kind == PepClass::nonexpansive) {
    if (metric != PepMetric::fp_residual)
      throw UnsupportedCombination(
          "nonexpansive class certifies the fixed-point residual only");
    if (composite)
      throw UnsupportedCombination("nonexpansive class has no g term");
    return;
  }
  if (!(L > 0.0) || !std::isfinite(L))
    throw UnsupportedCombination("function class needs finite L > 0");
  if (mu < 0.0 || mu >= L)
    throw UnsupportedCombination("function class needs 0 <= mu < L");
  if (metric == PepMetric::fp_residual)
    throw UnsupportedCombination(
        "fp_residual metric belongs to the nonexpansive class");
  if (metric == PepMetric::function_gap) {
    if (kind == PepClass::quadratic)
      throw UnsupportedCombination(
          "function-gap metric is not defined for the quadratic class");
    if (mu != 0.0)
      throw UnsupportedCombination("function-gap certification needs mu = 0");
  }
}

std::uint64_t schedule_fingerprint(const HyperparamSchedule& sched) {
  std::uint64_t h = 1469598103934665603ull;
  const char* name = engine_name(sched.kind);
  fnv_bytes(h, name, std::strlen(name));
  fnv_double(h, static_cast<double>(sched.K));
  for (double a : sched.alphas) fnv_double(h, a);
  for (double b : sched.betas) fnv_double(h, b);
  for (const auto& [k, v] : sched.theta_inv) {
    fnv_bytes(h, k.data(), k.size());
    fnv_double(h, v);
  }
  return h;
}

CoefficientTableau propagate_coefficients(const HyperparamSchedule& sched,
                                          const ClassSpec& cls, int K) {
  check_args(sched, cls, K);
  Tableau tb = propagate(sched, cls, K);
  CoefficientTableau out;
  out.basis = tb.labels;
  for (auto& j : tb.rho_z) out.rho_z.push_back(j.val);
  for (auto& j : tb.rho_y) out.rho_y.push_back(j.val);
  out.rho_star = tb.rho_star.val;
  for (auto& j : tb.sigma) out.sigma.push_back(j.val);
  out.sigma_star = tb.sigma_star.val;
  for (auto& j : tb.tau) out.tau.push_back(j.val);
  if (tb.tau_star.val.size() > 0) out.tau_star = tb.tau_star.val;
  return out;
}

SdpProblem build_pep_sdp(const HyperparamSchedule& sched, const ClassSpec& cls,
                         int K) {
  return to_sdp(build_program(sched, cls, K));
}

Certificate certify(const HyperparamSchedule& sched, const ClassSpec& cls,
                    int K, const SdpOptions& opts) {
  SdpProblem sp = build_pep_sdp(sched, cls, K);
  SdpSolution sol = solve_sdp(sp, opts);
  if (sol.status != SdpStatus::solved)
    throw SolverFailed("certification SDP " + status_name(sol.status) +
                       " (primal " + std::to_string(sol.primal_residual) +
                       ", dual " + std::to_string(sol.dual_residual) + ")");
  Certificate c;
  c.gamma = std::max(0.0, sol.objective);
  c.cls = cls;
  c.budget = K;
  c.schedule_fingerprint = schedule_fingerprint(sched);
  c.status = sol.status;
  c.primal_residual = sol.primal_residual;
  c.dual_residual = sol.dual_residual;
  c.gap = sol.gap;
  c.iterations = sol.iterations;
  c.metric_note = metric_note(cls);
  return c;
}

double spectral_oracle_quadratic(const HyperparamSchedule& sched, double mu,
                                 double L, int K, int grid) {
  sched.validate();
  if (sched.K != K)
    throw DimensionMismatch("schedule/budget mismatch in spectral oracle");
  if (!(mu >= 0.0) || !(L >= mu) || !std::isfinite(L))
    throw UnsupportedCombination("spectral oracle needs 0 <= mu <= L < inf");
  auto value = [&](double lam) {
    double z = 1.0, y = 1.0;
    for (int k = 0; k < K; ++k) {
      const double ynew = (1.0 - sched.alphas[static_cast<size_t>(k)] * lam) * z;
      const double znew = (1.0 + sched.betas[static_cast<size_t>(k)]) * ynew -
                          sched.betas[static_cast<size_t>(k)] * y;
      y = ynew;
      z = znew;
    }
    return z * z;
  };
  if (mu == L || grid < 2) return value(mu);
  double lo = mu, hi = L;
  int pts = std::max(grid, 2);
  double best = value(mu), bestlam = mu;
  for (int round = 0; round < 4; ++round) {
    for (int i = 0; i < pts; ++i) {
      const double lam = lo + (hi - lo) * i / (pts - 1);
      const double v = value(lam);
      if (v > best) {
        best = v;
        bestlam = lam;
      }
    }
    const double h = (hi - lo) / (pts - 1);
    lo = std::max(mu, bestlam - h);
    hi = std::min(L, bestlam + h);
    pts = 129;
  }
  return best;
}

CertifyGradient certify_gradient(const HyperparamSchedule& sched,
                                 const ClassSpec& cls, int K,
                                 const SdpOptions& opts) {
  Program p = build_program(sched, cls, K);
  SdpProblem sp = to_sdp(p);
  SdpSolution sol = solve_sdp(sp, opts);
  if (sol.status != SdpStatus::solved)
    throw SolverFailed("certification SDP " + status_name(sol.status) +
                       " while differentiating");
  CertifyGradient out;
  out.gamma = std::max(0.0, sol.objective);
  out.dalpha = Vec::Zero(K);
  out.dbeta = Vec::Zero(K);

  if (sol.dual_residual <= 1e-5) {
    const Mat& g = sol.gmat;
    auto dval = [&](const Entry& e, int t) {
      double v = 0.0;
      for (const Term& term : e.terms) {
        const Jet& u = p.vecs[static_cast<size_t>(term.u)];
        const Jet& w = p.vecs[static_cast<size_t>(term.v)];
        v += term.coeff * (u.der[static_cast<size_t>(t)].dot(g * w.val) +
                           u.val.dot(g * w.der[static_cast<size_t>(t)]));
      }
      return v;
    };
    for (int t = 0; t < 2 * K; ++t) {
      double grad = dval(p.objective, t);
      for (size_t c = 0; c < p.cons.size(); ++c) {
        const Entry& e = p.cons[c];
        const double d = dval(e, t);
        if (d == 0.0) continue;
        if (e.sense == SdpSense::psd_block)
          grad += (e.row == e.col ? 1.0 : 2.0) *
                  sol.duals(static_cast<int>(c)) * d;
        else
          grad -= sol.duals(static_cast<int>(c)) * d;
      }
      if (t < K)
        out.dalpha(t) = grad;
      else
        out.dbeta(t - K) = grad;
    }
    return out;
  }

  out.used_fallback = true;
  auto gamma_at = [&](const HyperparamSchedule& s) {
    SdpSolution r = solve_sdp(to_sdp(build_program(s, cls, K)), opts);
    if (r.status != SdpStatus::solved)
      throw SolverFailed("finite-difference probe " + status_name(r.status));
    return std::max(0.0, r.objective);
  };
  try {
    for (int t = 0; t < 2 * K; ++t) {
      HyperparamSchedule up = sched, dn = sched;
      double& u = t < K ? up.alphas[static_cast<size_t>(t)]
                        : up.betas[static_cast<size_t>(t - K)];
      double& d = t < K ? dn.alphas[static_cast<size_t>(t)]
                        : dn.betas[static_cast<size_t>(t - K)];
      double h = 1e-4 * std::max(1.0, std::abs(u));
      if (t < K) h = std::min(h, 0.5 * u);  // keep alpha positive
      u += h;
      d -= h;
      const double grad = (gamma_at(up) - gamma_at(dn)) / (2.0 * h);
      if (t < K)
        out.dalpha(t) = grad;
      else
        out.dbeta(t - K) = grad;
    }
  } catch (const SolverFailed& e) {
    throw DualsUnavailable(std::string("duals below quality threshold and ") +
                           e.what());
  }
  return out;
}

std::string certificate_json(const Certificate& cert) {
  nlohmann::json j;
  j["gamma"] = cert.gamma;
  j["class"] = {{"kind", pep_class_name(cert.cls.kind)},
                {"mu", cert.cls.mu},
                {"L", cert.cls.L},
                {"metric", pep_metric_name(cert.cls.metric)},
                {"metric_case", cert.cls.metric_case()},
                {"composite", cert.cls.composite},
                {"averaging", cert.cls.averaging == Averaging::half_alpha
                                  ? "half-alpha"
                                  : "alpha"}};
  j["K"] = cert.budget;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(cert.schedule_fingerprint));
  j["schedule_fingerprint"] = std::string(buf);
  j["status"] = status_name(cert.status);
  j["primal_residual"] = cert.primal_residual;
  j["dual_residual"] = cert.dual_residual;
  j["gap"] = cert.gap;
  j["iterations"] = cert.iterations;
  j["metric_note"] = cert.metric_note;
  return j.dump(2);
}

}  // namespace lacert
