#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "doctest.h"
#include "lacert/engines.hpp"
#include "lacert/rng.hpp"
#include "oracles.hpp"

using namespace lacert;

namespace {

FamilyConfig lasso_cfg() {
  FamilyConfig cfg;
  cfg.kind = FamilyKind::lasso;
  cfg.n = 8;
  cfg.d = 12;
  cfg.reg = 0.15;
  cfg.data_seed = 7;
  return cfg;
}

FamilyConfig qp_cfg() {
  FamilyConfig cfg;
  cfg.kind = FamilyKind::random_qp;
  cfg.n = 6;
  cfg.m = 8;
  cfg.m_eq = 2;
  cfg.data_seed = 11;
  return cfg;
}

FamilyConfig socp_cfg() {
  FamilyConfig cfg;
  cfg.kind = FamilyKind::random_socp;
  cfg.n = 5;
  cfg.cones.zero = 2;
  cfg.cones.nonneg = 3;
  cfg.cones.soc = {3};
  cfg.data_seed = 13;
  return cfg;
}

std::shared_ptr<const InstanceOps> make_ops(const FamilyConfig& cfg,
                                            std::uint64_t seed) {
  return std::make_shared<InstanceOps>(sample_instance(cfg, seed));
}

double rnorm(const Vec& d, const Vec& rdiag) {
  return std::sqrt((rdiag.array() * d.array().square()).sum());
}

HyperparamSchedule constant_schedule(EngineKind kind, int K, double alpha,
                                     double beta, ThetaInv inv = {}) {
  HyperparamSchedule s;
  s.kind = kind;
  s.K = K;
  s.alphas.assign(K, alpha);
  s.betas.assign(K, beta);
  s.theta_inv = std::move(inv);
  return s;
}

Vec random_vec(Rng& rng, int n, double scale = 1.0) {
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

}  // namespace

TEST_SUITE("engines") {

TEST_CASE("engine names round trip") {
  for (EngineKind k : {EngineKind::gd, EngineKind::prox_gd, EngineKind::admm,
                       EngineKind::osqp, EngineKind::scs})
    CHECK(engine_from_name(engine_name(k)) == k);
  CHECK_THROWS_AS(engine_from_name("fista"), InvalidConfig);
  CHECK(!admm_based(EngineKind::gd));
  CHECK(!admm_based(EngineKind::prox_gd));
  CHECK(admm_based(EngineKind::admm));
  CHECK(admm_based(EngineKind::scs));
}

TEST_CASE("proximal and projection primitives") {
  Vec v(3);
  v << 3.0, -0.5, 0.2;
  Vec p = prox_l1(v, 1.0);
  CHECK(p(0) == doctest::Approx(2.0));
  CHECK(p(1) == 0.0);
  CHECK(p(2) == 0.0);
  CHECK_THROWS_AS(prox_l1(v, -0.1), InvalidConfig);

  Vec q(2);
  q << -1.0, 2.0;
  CHECK(project_nonneg(q)(0) == 0.0);
  CHECK(project_nonneg(q)(1) == 2.0);

  Vec l = Vec::Zero(2), u = Vec::Ones(2);
  Vec boxed = project_box(q, l, u);
  CHECK(boxed(0) == 0.0);
  CHECK(boxed(1) == 1.0);
  Vec badl(2);
  badl << 2.0, 0.0;
  CHECK_THROWS_AS(project_box(q, badl, u), BoxInverted);
  CHECK_THROWS_AS(project_box(q, Vec::Zero(1), u), DimensionMismatch);

  Vec inside(3), polar(3), outside(3);
  inside << 2.0, 1.0, 0.0;
  polar << -2.0, 1.0, 0.0;
  outside << 0.0, 1.0, 0.0;
  CHECK((project_soc(inside) - inside).norm() == 0.0);
  CHECK(project_soc(polar).norm() == 0.0);
  Vec ps = project_soc(outside);
  CHECK(ps(0) == doctest::Approx(0.5));
  CHECK(ps(1) == doctest::Approx(0.5));
  CHECK(ps(2) == 0.0);
  // the residual of a projection onto a cone is orthogonal to the projection
  CHECK(std::abs((outside - ps).dot(ps)) < 1e-14);
}

TEST_CASE("schedule validation") {
  HyperparamSchedule s = constant_schedule(EngineKind::gd, 3, 0.5, 0.2);
  CHECK_NOTHROW(s.validate());
  s.alphas.pop_back();
  CHECK_THROWS_AS(s.validate(), InvalidConfig);

  s = constant_schedule(EngineKind::gd, 2, -0.5, 0.0);
  CHECK_THROWS_AS(s.validate(), InvalidConfig);

  s = constant_schedule(EngineKind::admm, 2, 1.0, 0.0);
  CHECK_THROWS_AS(s.validate(), InvalidConfig);  // eta missing
  s.theta_inv["eta"] = 0.0;
  CHECK_THROWS_AS(s.validate(), InvalidConfig);
  s.theta_inv["eta"] = 2.0;
  CHECK_NOTHROW(s.validate());

  CHECK(theta_inv_defaults(EngineKind::osqp).at("sigma") == 1e-6);
  CHECK(theta_inv_defaults(EngineKind::osqp).at("rho_eq") == 1.0);
  CHECK(theta_inv_defaults(EngineKind::scs).at("r_w") == 1.0);
  CHECK(theta_inv_names(EngineKind::gd).empty());
  CHECK(theta_inv_names(EngineKind::admm) == std::vector<std::string>{"eta"});
}

TEST_CASE("one unit step on a unit-curvature quadratic lands on the optimum") {
  Vec b(3);
  b << 0.7, -1.3, 2.1;
  auto quad =
      std::make_shared<oracle::QuadOracle>(Mat::Identity(3, 3), b, 0.0, b, 0.0);
  auto op = bind_gradient_engine(EngineKind::gd, quad);
  IterateTrace tr =
      run_accelerated(*op, constant_schedule(EngineKind::gd, 1, 1.0, 0.0));
  CHECK((tr.ys[1] - b).norm() < 1e-15);
  CHECK((tr.zs[1] - b).norm() < 1e-15);
  CHECK(tr.metrics[0] == doctest::Approx(0.5 * b.squaredNorm()));
  CHECK(std::abs(tr.metrics[1]) < 1e-14);
}

TEST_CASE("zero momentum collapses z onto y") {
  Rng rng(4);
  auto quad = oracle::random_quadratic_inclass(rng, 4, 0.3, 2.0);
  auto op = bind_gradient_engine(EngineKind::gd, quad);
  IterateTrace tr =
      run_accelerated(*op, constant_schedule(EngineKind::gd, 6, 0.4, 0.0));
  for (int k = 1; k <= 6; ++k) CHECK((tr.zs[k] - tr.ys[k]).norm() == 0.0);
}

TEST_CASE("accelerated loop matches the textbook recursion") {
  Rng rng(9);
  auto quad = oracle::random_quadratic_inclass(rng, 5, 0.0, 3.7);
  auto op = bind_gradient_engine(EngineKind::gd, quad);
  HyperparamSchedule s = nesterov_schedule(EngineKind::gd, 10, 0.0, 3.7);
  IterateTrace tr = run_accelerated(*op, s);
  auto zs = oracle::textbook_accelerated(
      [&](const Vec& z) { return quad->grad(z); },
      [](const Vec& v, double) { return v; }, 5, s.alphas, s.betas);
  REQUIRE(zs.size() == tr.zs.size());
  for (size_t k = 0; k < zs.size(); ++k)
    CHECK((zs[k] - tr.zs[k]).norm() < 1e-12 * (1.0 + zs[k].norm()));

  auto comp = oracle::random_quadratic_composite_inclass(rng, 5, 0.4, 2.2, 0.3);
  auto pop = bind_gradient_engine(EngineKind::prox_gd, comp);
  HyperparamSchedule ps = nesterov_schedule(EngineKind::prox_gd, 12, 0.4, 2.2);
  IterateTrace ptr = run_accelerated(*pop, ps);
  auto pzs = oracle::textbook_accelerated(
      [&](const Vec& z) { return comp->grad(z); },
      [&](const Vec& v, double t) { return comp->prox_g(v, t); }, 5, ps.alphas,
      ps.betas);
  REQUIRE(pzs.size() == ptr.zs.size());
  for (size_t k = 0; k < pzs.size(); ++k)
    CHECK((pzs[k] - ptr.zs[k]).norm() < 1e-12 * (1.0 + pzs[k].norm()));
}

TEST_CASE("trace stores exactly the y = T(z) applications") {
  auto ops = make_ops(lasso_cfg(), train_seed(0));
  auto op = bind_engine(EngineKind::admm, ops, {{"eta", 1.3}});
  HyperparamSchedule s =
      constant_schedule(EngineKind::admm, 5, 0.9, 0.4, {{"eta", 1.3}});
  IterateTrace tr = run_accelerated(*op, s);
  REQUIRE(tr.ys.size() == 6);
  REQUIRE(tr.zs.size() == 6);
  CHECK(tr.ys[0].isZero());
  CHECK(tr.zs[0].isZero());
  for (int k = 0; k < 5; ++k) {
    Vec y = op->apply(tr.zs[k], s.alphas[k]);
    CHECK((y - tr.ys[k + 1]).norm() == 0.0);
    Vec z = (1.0 + s.betas[k]) * tr.ys[k + 1] - s.betas[k] * tr.ys[k];
    CHECK((z - tr.zs[k + 1]).norm() == 0.0);
  }
  CHECK(tr.metrics.size() == 6);
  CHECK(tr.primal_res.empty());
  CHECK(tr.wall_seconds >= 0.0);
}

TEST_CASE("splitting steps are affine in alpha around the S form") {
  Rng rng(21);
  auto check_affine = [&](const FixedPointOperator& op) {
    for (int trial = 0; trial < 5; ++trial) {
      Vec z = random_vec(rng, op.dim());
      Vec s = op.fixed_point_map(z);
      for (double alpha : {0.4, 1.0, 1.9}) {
        Vec y = op.apply(z, alpha);
        Vec expect = (1.0 - 0.5 * alpha) * z + 0.5 * alpha * s;
        CHECK((y - expect).norm() < 1e-10 * (1.0 + expect.norm()));
      }
    }
  };
  check_affine(*bind_engine(EngineKind::admm, make_ops(lasso_cfg(), train_seed(1)),
                            {{"eta", 0.8}}));
  check_affine(*bind_engine(EngineKind::osqp, make_ops(qp_cfg(), train_seed(1)),
                            {{"rho_eq", 2.3}, {"rho_ineq", 0.6}, {"sigma", 0.5}}));
  check_affine(*bind_engine(EngineKind::scs, make_ops(socp_cfg(), train_seed(1)),
                            {{"r_w", 1.4}, {"r_ynz", 0.8}, {"r_yz", 2.0}}));
}

TEST_CASE("splitting operators are nonexpansive in their metric") {
  Rng rng(33);
  auto check = [&](const FixedPointOperator& op, int pairs) {
    Vec rdiag = op.metric_diag();
    for (int t = 0; t < pairs; ++t) {
      Vec z1 = random_vec(rng, op.dim(), 3.0);
      Vec z2 = random_vec(rng, op.dim(), 3.0);
      double num = rnorm(op.fixed_point_map(z1) - op.fixed_point_map(z2), rdiag);
      double den = rnorm(z1 - z2, rdiag);
      CHECK(num <= den * (1.0 + 1e-10));
    }
  };
  check(*bind_engine(EngineKind::admm, make_ops(lasso_cfg(), train_seed(2)),
                     {{"eta", 1.7}}),
        1000);
  check(*bind_engine(EngineKind::osqp, make_ops(qp_cfg(), train_seed(2)),
                     {{"rho_eq", 2.3}, {"rho_ineq", 0.6}, {"sigma", 0.5}}),
        1000);
  check(*bind_engine(EngineKind::scs, make_ops(socp_cfg(), train_seed(2)),
                     {{"r_w", 1.4}, {"r_ynz", 0.8}, {"r_yz", 2.0}}),
        1000);
}

TEST_CASE("planted optima are fixed points with zero residuals") {
  SUBCASE("admm on lasso") {
    auto inst = sample_instance(lasso_cfg(), train_seed(3));
    auto ops = std::make_shared<InstanceOps>(inst);
    double eta = 1.3;
    auto op = bind_engine(EngineKind::admm, ops, {{"eta", eta}});
    Vec zfix = inst.zstar + eta * ops->grad(inst.zstar);
    Vec s = op->fixed_point_map(zfix);
    CHECK((s - zfix).norm() < 1e-7 * (1.0 + zfix.norm()));
    CHECK(op->metric_at(zfix, zfix) < 1e-8);
  }
  SUBCASE("osqp on a planted qp") {
    auto inst = sample_instance(qp_cfg(), train_seed(3));
    auto ops = std::make_shared<InstanceOps>(inst);
    ThetaInv inv{{"rho_eq", 2.3}, {"rho_ineq", 0.6}, {"sigma", 1e-4}};
    auto op = bind_engine(EngineKind::osqp, ops, inv);
    const ConicData* cd = ops->conic();
    REQUIRE(cd != nullptr);
    int q = inst.cfg.n;
    Vec zfix(op->dim());
    zfix.head(q) = inst.zstar;
    Vec aw = cd->A * inst.zstar;
    for (int i = 0; i < aw.size(); ++i) {
      double rho = i < inst.cfg.m_eq ? inv.at("rho_eq") : inv.at("rho_ineq");
      zfix(q + i) = aw(i) + inst.dual_star(i) / rho;
    }
    auto [pri, dua] = op->residual_pair(zfix);
    CHECK(pri < 1e-8);
    CHECK(dua < 1e-8);
    Vec y = op->apply(zfix, 0.7);
    CHECK((y - zfix).norm() < 1e-8 * (1.0 + zfix.norm()));
  }
  SUBCASE("scs on a planted socp") {
    auto inst = sample_instance(socp_cfg(), train_seed(3));
    auto ops = std::make_shared<InstanceOps>(inst);
    ThetaInv inv{{"r_w", 1.4}, {"r_ynz", 0.8}, {"r_yz", 2.0}};
    auto op = bind_engine(EngineKind::scs, ops, inv);
    int q = inst.cfg.n;
    int m = op->dim() - q;
    Vec zfix(op->dim());
    zfix.head(q) = inst.zstar;
    for (int i = 0; i < m; ++i) {
      double rv = i < inst.cfg.cones.zero ? inv.at("r_yz") : inv.at("r_ynz");
      zfix(q + i) = inst.dual_star(i) + inst.slack_star(i) / rv;
    }
    auto [pri, dua] = op->residual_pair(zfix);
    CHECK(pri < 1e-8);
    CHECK(dua < 1e-8);
    Vec y = op->apply(zfix, 1.3);
    CHECK((y - zfix).norm() < 1e-8 * (1.0 + zfix.norm()));
  }
}

TEST_CASE("scs resolvent elimination agrees with a dense solve") {
  auto inst = sample_instance(socp_cfg(), train_seed(4));
  auto ops = std::make_shared<InstanceOps>(inst);
  ThetaInv inv{{"r_w", 1.7}, {"r_ynz", 0.6}, {"r_yz", 2.4}};
  auto op = bind_engine(EngineKind::scs, ops, inv);
  const ConicData* cd = ops->conic();
  int q = static_cast<int>(cd->P.rows());
  int m = static_cast<int>(cd->A.rows());
  Vec rdiag = op->metric_diag();

  Mat km = Mat::Zero(q + m, q + m);
  km.topLeftCorner(q, q) = cd->P;
  km.topRightCorner(q, m) = cd->A.transpose();
  km.bottomLeftCorner(m, q) = -cd->A;
  km.diagonal() += rdiag;
  Vec qvec(q + m);
  qvec << cd->c, cd->b;

  Rng rng(55);
  for (int t = 0; t < 10; ++t) {
    Vec z = random_vec(rng, q + m);
    Vec ut = km.fullPivLu().solve(Vec(rdiag.cwiseProduct(z) - qvec));
    Vec p = 2.0 * ut - z;
    Vec u = p;
    int row = q + cd->cones.zero;  // rows of the zero cone stay free
    for (int i = 0; i < cd->cones.nonneg; ++i, ++row)
      u(row) = std::max(0.0, p(row));
    for (int sd : cd->cones.soc) {
      u.segment(row, sd) = project_soc(p.segment(row, sd));
      row += sd;
    }
    Vec y = op->apply(z, 1.0);
    CHECK((y - (z + (u - ut))).norm() < 1e-9 * (1.0 + y.norm()));
  }
}

TEST_CASE("osqp residuals recompute from the definition") {
  auto inst = sample_instance(qp_cfg(), train_seed(5));
  auto ops = std::make_shared<InstanceOps>(inst);
  ThetaInv inv{{"rho_eq", 1.9}, {"rho_ineq", 0.7}, {"sigma", 1e-3}};
  auto op = bind_engine(EngineKind::osqp, ops, inv);
  const ConicData* cd = ops->conic();
  int q = inst.cfg.n;
  int m = static_cast<int>(cd->A.rows());
  Rng rng(66);
  for (int t = 0; t < 8; ++t) {
    Vec z = random_vec(rng, q + m, 2.0);
    Vec w = z.head(q), xi = z.tail(m);
    Vec v = xi.cwiseMax(cd->l).cwiseMin(cd->u);
    Vec rho(m);
    for (int i = 0; i < m; ++i) rho(i) = cd->l(i) == cd->u(i) ? 1.9 : 0.7;
    Vec y = rho.cwiseProduct(xi - v);
    double pri = (cd->A * w - v).norm();
    double dua = (cd->P * w + cd->A.transpose() * y + cd->c).norm();
    auto [ep, ed] = op->residual_pair(z);
    CHECK(ep == doctest::Approx(pri).epsilon(1e-12));
    CHECK(ed == doctest::Approx(dua).epsilon(1e-12));
  }
  auto [p0, d0] = op->residual_pair(Vec::Zero(q + m));
  CHECK(p0 >= 0.0);
  CHECK(d0 >= 0.0);
}

TEST_CASE("one factorization per bind regardless of horizon") {
  auto op = bind_engine(EngineKind::osqp, make_ops(qp_cfg(), train_seed(6)),
                        theta_inv_defaults(EngineKind::osqp));
  CHECK(run_accelerated(*op, vanilla_admm_schedule(EngineKind::osqp, 1))
            .factorizations == 1);
  CHECK(run_accelerated(*op, vanilla_admm_schedule(EngineKind::osqp, 30))
            .factorizations == 1);
  CHECK(op->factorizations() == 1);

  auto admm = bind_engine(EngineKind::admm, make_ops(lasso_cfg(), train_seed(6)),
                          {{"eta", 1.0}});
  run_accelerated(*admm, vanilla_admm_schedule(EngineKind::admm, 25));
  CHECK(admm->factorizations() == 1);

  auto scs = bind_engine(EngineKind::scs, make_ops(socp_cfg(), train_seed(6)),
                         theta_inv_defaults(EngineKind::scs));
  run_accelerated(*scs, vanilla_admm_schedule(EngineKind::scs, 25));
  CHECK(scs->factorizations() == 1);

  auto gd = bind_gradient_engine(
      EngineKind::gd, std::make_shared<oracle::QuadOracle>(
                          Mat::Identity(2, 2), Vec::Ones(2), 0.0, Vec::Ones(2), 0.0));
  CHECK(gd->factorizations() == 0);
}

TEST_CASE("metric diagonals expose the engine scaling") {
  auto op = bind_engine(EngineKind::osqp, make_ops(qp_cfg(), train_seed(10)),
                        {{"rho_eq", 2.0}, {"rho_ineq", 0.5}, {"sigma", 1e-3}});
  Vec r = op->metric_diag();
  CHECK(r.head(6).isConstant(1e-3));
  CHECK(r(6) == 2.0);      // first constraint rows are the equality block
  CHECK(r(6 + 2) == 0.5);  // m_eq = 2, the rest are inequalities

  auto admm = bind_engine(EngineKind::admm, make_ops(lasso_cfg(), train_seed(10)),
                          {{"eta", 3.0}});
  CHECK(admm->metric_diag().isOnes());

  auto scs = bind_engine(EngineKind::scs, make_ops(socp_cfg(), train_seed(10)),
                         {{"r_w", 1.5}, {"r_ynz", 0.7}, {"r_yz", 2.5}});
  Vec rs = scs->metric_diag();
  CHECK(rs.head(5).isConstant(1.5));
  CHECK(rs(5) == 2.5);      // zero-cone rows
  CHECK(rs(5 + 2) == 0.7);  // nonneg and soc rows
}

TEST_CASE("nesterov and vanilla schedule values") {
  HyperparamSchedule s = nesterov_schedule(EngineKind::gd, 4, 0.0, 2.0);
  CHECK(s.alphas == std::vector<double>(4, 0.5));
  CHECK(s.betas[0] == 0.0);
  CHECK(s.betas[1] > 0.0);
  CHECK(s.betas[2] > s.betas[1]);

  HyperparamSchedule sc = nesterov_schedule(EngineKind::prox_gd, 3, 0.25, 4.0);
  for (double b : sc.betas) CHECK(b == doctest::Approx(0.6));
  HyperparamSchedule eq = nesterov_schedule(EngineKind::gd, 3, 4.0, 4.0);
  for (double b : eq.betas) CHECK(b == 0.0);
  CHECK_THROWS_AS(nesterov_schedule(EngineKind::admm, 3, 0.0, 1.0), InvalidConfig);
  CHECK_THROWS_AS(nesterov_schedule(EngineKind::gd, 3, 2.0, 1.0), InvalidConfig);

  HyperparamSchedule v = vanilla_admm_schedule(EngineKind::admm, 2);
  CHECK(v.alphas == std::vector<double>(2, 1.0));
  CHECK(v.betas == std::vector<double>(2, 0.0));
  CHECK(v.theta_inv.at("eta") == 1.0);
  CHECK_THROWS_AS(vanilla_admm_schedule(EngineKind::gd, 2), InvalidConfig);
}

TEST_CASE("binding and run guards") {
  auto conic_ops = make_ops(qp_cfg(), train_seed(7));
  CHECK_THROWS_AS(bind_engine(EngineKind::gd, conic_ops, {}), InvalidConfig);
  CHECK_THROWS_AS(bind_engine(EngineKind::admm, conic_ops, {{"eta", 1.0}}),
                  InvalidConfig);
  CHECK_THROWS_AS(bind_engine(EngineKind::scs, conic_ops,
                              theta_inv_defaults(EngineKind::scs)),
                  InvalidConfig);
  auto lasso_ops = make_ops(lasso_cfg(), train_seed(7));
  CHECK_THROWS_AS(bind_engine(EngineKind::osqp, lasso_ops,
                              theta_inv_defaults(EngineKind::osqp)),
                  InvalidConfig);

  Rng rng(5);
  auto comp = oracle::random_composite_inclass(rng, 4, 0.2, 1.5, 0.4);
  CHECK_THROWS_AS(bind_gradient_engine(EngineKind::gd, comp), InvalidConfig);
  CHECK_THROWS_AS(bind_gradient_engine(EngineKind::admm, comp), InvalidConfig);

  auto smooth = oracle::random_smooth_inclass(rng, 4, 0.2, 1.5);
  auto op = bind_gradient_engine(EngineKind::gd, smooth);
  CHECK_THROWS_AS(op->fixed_point_map(Vec::Zero(4)), Unsupported);
  CHECK_THROWS_AS(op->residual_pair(Vec::Zero(4)), Unsupported);
  CHECK(op->metric_diag().isOnes());

  HyperparamSchedule wrong = constant_schedule(EngineKind::prox_gd, 2, 0.5, 0.0);
  CHECK_THROWS_AS(run_accelerated(*op, wrong), InvalidConfig);
  HyperparamSchedule ok = constant_schedule(EngineKind::gd, 2, 0.5, 0.0);
  CHECK_THROWS_AS(run_accelerated(*op, ok, 3), InvalidConfig);
  IterateTrace tr = run_accelerated(*op, ok, 1);  // a prefix run is fine
  CHECK(tr.ys.size() == 2);
}

TEST_CASE("diverging steps raise a flagged iterate") {
  Vec b(2);
  b << 1.0, -2.0;
  auto quad =
      std::make_shared<oracle::QuadOracle>(Mat::Identity(2, 2), b, 0.0, b, 0.0);
  auto op = bind_gradient_engine(EngineKind::gd, quad);
  HyperparamSchedule s = constant_schedule(EngineKind::gd, 400, 100.0, 0.0);
  try {
    run_accelerated(*op, s);
    FAIL("expected NonFiniteIterate");
  } catch (const NonFiniteIterate& e) {
    CHECK(e.k >= 1);
    CHECK(e.k <= 400);
  }
}

TEST_CASE("conic traces carry residual columns") {
  auto op = bind_engine(EngineKind::scs, make_ops(socp_cfg(), train_seed(12)),
                        theta_inv_defaults(EngineKind::scs));
  IterateTrace tr = run_accelerated(*op, vanilla_admm_schedule(EngineKind::scs, 4));
  REQUIRE(tr.primal_res.size() == 5);
  REQUIRE(tr.dual_res.size() == 5);
  auto rs = residuals(*op, tr);
  REQUIRE(rs.size() == 5);
  for (int k = 0; k <= 4; ++k) {
    CHECK(rs[k].first == tr.primal_res[k]);
    CHECK(rs[k].second == tr.dual_res[k]);
    CHECK(tr.metrics[k] == rs[k].first + rs[k].second);
    CHECK(rs[k].first >= 0.0);
    CHECK(rs[k].second >= 0.0);
  }
}

TEST_CASE("step adjoints match finite differences") {
  auto fd_match = [](double got, double want) {
    return std::abs(got - want) < 1e-5 * (1.0 + std::abs(want));
  };

  auto check_engine = [&](EngineKind kind, const FamilyConfig& cfg,
                          const ThetaInv& inv) {
    auto ops = make_ops(cfg, train_seed(11));
    auto op = bind_engine(kind, ops, inv);
    Rng rng(77 + static_cast<int>(kind));
    Vec z = random_vec(rng, op->dim());
    Vec u = random_vec(rng, op->dim());
    double alpha = 0.8;

    StepData sd = op->step(z, alpha);
    Vec zbar = Vec::Zero(op->dim());
    double alphabar = 0.0;
    ThetaInv invbar;
    for (const auto& [nm, val] : inv) invbar[nm] = 0.0;
    op->step_vjp(sd, z, alpha, u, zbar, alphabar, invbar);

    auto h = [&](const Vec& zz, double aa, const ThetaInv& ii) {
      auto op2 = bind_engine(kind, ops, ii);
      return u.dot(op2->apply(zz, aa));
    };
    for (int i = 0; i < op->dim(); ++i) {
      Vec zp = z, zm = z;
      zp(i) += 1e-6;
      zm(i) -= 1e-6;
      double fd = (h(zp, alpha, inv) - h(zm, alpha, inv)) / 2e-6;
      CHECK(fd_match(zbar(i), fd));
    }
    double fda = (h(z, alpha + 1e-6, inv) - h(z, alpha - 1e-6, inv)) / 2e-6;
    CHECK(fd_match(alphabar, fda));
    for (const auto& [nm, val] : inv) {
      double hstep = 1e-6 * std::max(0.01, std::abs(val));
      ThetaInv ip = inv, im = inv;
      ip[nm] = val + hstep;
      im[nm] = val - hstep;
      double fd = (h(z, alpha, ip) - h(z, alpha, im)) / (2.0 * hstep);
      CHECK(fd_match(invbar.at(nm), fd));
    }
  };

  check_engine(EngineKind::admm, lasso_cfg(), {{"eta", 1.2}});
  check_engine(EngineKind::osqp, qp_cfg(),
               {{"rho_eq", 1.8}, {"rho_ineq", 0.7}, {"sigma", 0.05}});
  check_engine(EngineKind::scs, socp_cfg(),
               {{"r_w", 1.3}, {"r_ynz", 0.9}, {"r_yz", 1.6}});

  // gradient engines against a synthetic composite oracle
  Rng org(88);
  auto so = oracle::random_composite_inclass(org, 5, 0.3, 2.0, 0.25);
  auto pop = bind_gradient_engine(EngineKind::prox_gd, so);
  Vec z = random_vec(org, 5);
  Vec u = random_vec(org, 5);
  double alpha = 0.7;
  StepData sd = pop->step(z, alpha);
  Vec zbar = Vec::Zero(5);
  double alphabar = 0.0;
  ThetaInv none;
  pop->step_vjp(sd, z, alpha, u, zbar, alphabar, none);
  auto h = [&](const Vec& zz, double aa) { return u.dot(pop->apply(zz, aa)); };
  for (int i = 0; i < 5; ++i) {
    Vec zp = z, zm = z;
    zp(i) += 1e-6;
    zm(i) -= 1e-6;
    CHECK(fd_match(zbar(i), (h(zp, alpha) - h(zm, alpha)) / 2e-6));
  }
  CHECK(fd_match(alphabar, (h(z, alpha + 1e-6) - h(z, alpha - 1e-6)) / 2e-6));
}

TEST_CASE("loss adjoints match finite differences") {
  auto fd_match = [](double got, double want) {
    return std::abs(got - want) < 1e-5 * (1.0 + std::abs(want));
  };
  auto check_loss = [&](EngineKind kind, const FamilyConfig& cfg,
                        const ThetaInv& inv) {
    auto ops = make_ops(cfg, train_seed(13));
    auto op = bind_engine(kind, ops, inv);
    Rng rng(99 + static_cast<int>(kind));
    Vec z = random_vec(rng, op->dim());
    Vec y = random_vec(rng, op->dim());
    Vec zbar = Vec::Zero(op->dim()), ybar = Vec::Zero(op->dim());
    ThetaInv invbar;
    for (const auto& [nm, val] : inv) invbar[nm] = 0.0;
    op->loss_vjp(z, y, zbar, ybar, invbar);

    auto h = [&](const Vec& zz, const ThetaInv& ii) {
      return bind_engine(kind, ops, ii)->loss(zz, y);
    };
    for (int i = 0; i < op->dim(); ++i) {
      Vec zp = z, zm = z;
      zp(i) += 1e-6;
      zm(i) -= 1e-6;
      CHECK(fd_match(zbar(i), (h(zp, inv) - h(zm, inv)) / 2e-6));
    }
    for (const auto& [nm, val] : inv) {
      double hstep = 1e-6 * std::max(0.01, std::abs(val));
      ThetaInv ip = inv, im = inv;
      ip[nm] = val + hstep;
      im[nm] = val - hstep;
      CHECK(fd_match(invbar.at(nm), (h(z, ip) - h(z, im)) / (2.0 * hstep)));
    }
  };
  check_loss(EngineKind::admm, lasso_cfg(), {{"eta", 0.9}});
  check_loss(EngineKind::osqp, qp_cfg(),
             {{"rho_eq", 1.4}, {"rho_ineq", 0.8}, {"sigma", 0.05}});
  check_loss(EngineKind::scs, socp_cfg(),
             {{"r_w", 1.1}, {"r_ynz", 0.7}, {"r_yz", 1.9}});
}

TEST_CASE("backtracking accepts safe steps and shrinks huge ones") {
  FamilyConfig cfg;
  cfg.kind = FamilyKind::nonneg_ls;
  cfg.n = 6;
  cfg.d = 10;
  cfg.data_seed = 3;
  auto inst = sample_instance(cfg, train_seed(8));
  InstanceOps ops(inst);
  Mat a = ops.data_matrix();
  double L = oracle::top_eig_power(Mat(a.transpose() * a));
  Rng rng(12);
  Vec z = random_vec(rng, 6);

  BacktrackResult safe = backtracking_step(ops, z, 0.9 / L, 0.5, 1e-4);
  CHECK(safe.evals == 1);
  CHECK(safe.alpha == doctest::Approx(0.9 / L));

  BacktrackResult big = backtracking_step(ops, z, 1e6 / L, 0.5, 1e-4);
  CHECK(big.alpha < 1e6 / L);
  CHECK(big.evals > 1);
  Vec g = ops.grad(z);
  Vec diff = big.znew - z;
  CHECK(ops.f(big.znew) <=
        ops.f(z) + g.dot(diff) + diff.squaredNorm() / (2.0 * big.alpha) + 1e-12);

  CHECK_THROWS_AS(backtracking_step(ops, z, -1.0, 0.5, 1e-4), InvalidConfig);
  CHECK_THROWS_AS(backtracking_step(ops, z, 1.0, 1.5, 1e-4), InvalidConfig);
  CHECK_THROWS_AS(backtracking_step(ops, z, 1.0, 0.5, 2.0), InvalidConfig);

  // smooth branch: pick a first trial that is certainly rejected
  FamilyConfig lg;
  lg.kind = FamilyKind::logistic;
  lg.n = 5;
  lg.d = 4;
  lg.m = 30;
  lg.data_seed = 5;
  auto li = sample_instance(lg, train_seed(8));
  InstanceOps lops(li);
  Vec z0 = Vec::Zero(lops.zdim());
  double c1 = 0.9;
  double g2 = lops.grad(z0).squaredNorm();
  double alpha0 = 10.0 * (lops.f(z0) + 1.0) / (c1 * g2);
  BacktrackResult r = backtracking_step(lops, z0, alpha0, 0.5, c1);
  CHECK(r.evals > 1);
  CHECK(r.alpha < alpha0);
  CHECK(lops.f(r.znew) <= lops.f(z0) - c1 * r.alpha * g2 + 1e-12);
}

TEST_CASE("vanilla horizons reach tight accuracy on every family") {
  SUBCASE("lasso under accelerated proximal gradient") {
    FamilyConfig cfg = lasso_cfg();
    auto ops = make_ops(cfg, train_seed(9));
    SmoothnessConstants sc = smoothness_constants(cfg);
    auto op = bind_engine(EngineKind::prox_gd, ops, {});
    IterateTrace tr = run_accelerated(
        *op, nesterov_schedule(EngineKind::prox_gd, 1500, 0.0, sc.L));
    CHECK(tr.metrics.back() < 1e-6);
  }
  SUBCASE("nonneg least squares under accelerated proximal gradient") {
    FamilyConfig cfg;
    cfg.kind = FamilyKind::nonneg_ls;
    cfg.n = 7;
    cfg.d = 11;
    cfg.data_seed = 17;
    auto ops = make_ops(cfg, train_seed(9));
    SmoothnessConstants sc = smoothness_constants(cfg);
    auto op = bind_engine(EngineKind::prox_gd, ops, {});
    IterateTrace tr = run_accelerated(
        *op, nesterov_schedule(EngineKind::prox_gd, 1500, 0.0, sc.L));
    CHECK(tr.metrics.back() < 1e-6);
  }
  SUBCASE("logistic under accelerated gradient descent") {
    FamilyConfig cfg;
    cfg.kind = FamilyKind::logistic;
    cfg.n = 5;
    cfg.d = 4;
    cfg.m = 30;
    cfg.data_seed = 19;
    auto inst = sample_instance(cfg, train_seed(9));
    auto ops = std::make_shared<InstanceOps>(inst);
    SmoothnessConstants sc = smoothness_constants(cfg, {inst});
    auto op = bind_engine(EngineKind::gd, ops, {});
    IterateTrace tr =
        run_accelerated(*op, nesterov_schedule(EngineKind::gd, 4000, 0.0, sc.L));
    CHECK(tr.metrics.back() < 1e-6);
  }
  SUBCASE("lasso under vanilla splitting") {
    auto ops = make_ops(lasso_cfg(), train_seed(9));
    auto op = bind_engine(EngineKind::admm, ops, {{"eta", 1.0}});
    IterateTrace tr =
        run_accelerated(*op, vanilla_admm_schedule(EngineKind::admm, 2000));
    CHECK(tr.metrics.back() < 1e-6);
  }
  SUBCASE("qp under vanilla operator splitting") {
    auto ops = make_ops(qp_cfg(), train_seed(9));
    auto op = bind_engine(EngineKind::osqp, ops,
                          theta_inv_defaults(EngineKind::osqp));
    IterateTrace tr =
        run_accelerated(*op, vanilla_admm_schedule(EngineKind::osqp, 8000));
    CHECK(tr.metrics.back() < 1e-6);
  }
  SUBCASE("socp under vanilla operator splitting") {
    auto ops = make_ops(socp_cfg(), train_seed(9));
    auto op = bind_engine(EngineKind::scs, ops,
                          theta_inv_defaults(EngineKind::scs));
    IterateTrace tr =
        run_accelerated(*op, vanilla_admm_schedule(EngineKind::scs, 8000));
    CHECK(tr.metrics.back() < 1e-6);
  }
}

TEST_CASE("trace csv dumps one row per iterate") {
  auto op = bind_engine(EngineKind::osqp, make_ops(qp_cfg(), train_seed(14)),
                        theta_inv_defaults(EngineKind::osqp));
  IterateTrace tr = run_accelerated(*op, vanilla_admm_schedule(EngineKind::osqp, 3));
  const std::string path = "engines_trace_test.csv";
  trace_to_csv(tr, path);
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  CHECK(line == "k,metric,primal_res,dual_res");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 4);
  in.close();
  std::remove(path.c_str());
}

}  // TEST_SUITE
