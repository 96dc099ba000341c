#include <doctest.h>

#include <cmath>

#include "lacert/linalg.hpp"
#include "lacert/rng.hpp"
#include "oracles.hpp"

using namespace lacert;

namespace {

Mat random_sym(Rng& rng, int n, double scale = 1.0) {
  Mat a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) a(i, j) = a(j, i) = scale * rng.normal();
  return a;
}

}  // namespace

TEST_SUITE("linalg") {

TEST_CASE("symmetric wrapper rejects asymmetry and bad shapes") {
  Mat bad(2, 2);
  bad << 1, 2, 3, 4;
  CHECK_THROWS_AS(SymMatrix{bad}, DimensionMismatch);
  CHECK_THROWS_AS(SymMatrix{Mat::Zero(2, 3)}, DimensionMismatch);
  // tiny asymmetry within 1e-12 relative is accepted and symmetrized
  Mat ok(2, 2);
  ok << 1.0, 1.0 + 1e-14, 1.0, 2.0;
  SymMatrix s(ok);
  CHECK(s(0, 1) == s(1, 0));
}

TEST_CASE("cholesky identity") {
  SpdFactor f = factorize_spd(SymMatrix::identity(3));
  CHECK(f.lower().isApprox(Mat::Identity(3, 3), 1e-14));
  Vec b(3);
  b << 1, -2, 3;
  CHECK((f.solve(b) - b).norm() == doctest::Approx(0).epsilon(1e-14));
}

TEST_CASE("cholesky 2x2 hand value") {
  Mat a(2, 2);
  a << 4, 2, 2, 3;
  SpdFactor f = factorize_spd(SymMatrix(a));
  CHECK(f.lower()(0, 0) == doctest::Approx(2.0));
  CHECK(f.lower()(1, 0) == doctest::Approx(1.0));
  CHECK(f.lower()(1, 1) == doctest::Approx(std::sqrt(2.0)));
  CHECK((f.reconstruct() - a).norm() <= 1e-12);

  Vec b(2);
  b << 8, 7;
  Vec x = f.solve(b);
  CHECK(x(0) == doctest::Approx(1.25));
  CHECK(x(1) == doctest::Approx(1.5));
}

TEST_CASE("cholesky rejects indefinite input") {
  Mat a(2, 2);
  a << 1, 2, 2, 1;  // eigenvalues 3, -1
  CHECK_THROWS_AS(factorize_spd(SymMatrix(a)), NotPositiveDefinite);
}

TEST_CASE("solve_factored rejects wrong length") {
  SpdFactor f = factorize_spd(SymMatrix::identity(3));
  CHECK_THROWS_AS(f.solve(Vec(Vec::Ones(4))), DimensionMismatch);
}

TEST_CASE("spd roundtrip solve on random matrices") {
  Rng rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    int n = 1 + static_cast<int>(rng.below(39));
    Mat g = random_sym(rng, n);
    Mat a = g * g.transpose();
    a.diagonal().array() += 0.5;
    SpdFactor f = factorize_spd(SymMatrix(a));
    Vec x(n);
    for (int i = 0; i < n; ++i) x(i) = rng.normal();
    Vec got = f.solve(Vec(a * x));
    CHECK((got - x).norm() <= 1e-7 * (1 + x.norm()));
  }
}

TEST_CASE("jacobi eigensolver diagonal and 2x2") {
  Mat a = Vec::Zero(3).asDiagonal();
  a.diagonal() << 3, 1, 2;
  EigDecomposition e = sym_eig(SymMatrix(a));
  CHECK(e.values(0) == doctest::Approx(1));
  CHECK(e.values(1) == doctest::Approx(2));
  CHECK(e.values(2) == doctest::Approx(3));

  Mat b(2, 2);
  b << 2, 1, 1, 2;
  EigDecomposition eb = sym_eig(SymMatrix(b));
  CHECK(eb.values(0) == doctest::Approx(1));
  CHECK(eb.values(1) == doctest::Approx(3));
}

TEST_CASE("jacobi reconstruction and orthonormality on 100 random matrices") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    int n = 1 + static_cast<int>(rng.below(40));
    Mat a = random_sym(rng, n, 1.0 + 3.0 * rng.uniform());
    EigDecomposition e = sym_eig(SymMatrix(a));
    Mat rec = e.vectors * e.values.asDiagonal() * e.vectors.transpose();
    CHECK((rec - a).norm() <= 1e-9 * (1 + a.norm()));
    CHECK((e.vectors.transpose() * e.vectors - Mat::Identity(n, n)).norm() <= 1e-9);
    for (int i = 0; i + 1 < n; ++i) CHECK(e.values(i) <= e.values(i + 1));
  }
}

TEST_CASE("psd projection clips and is idempotent") {
  Mat a = Vec::Zero(2).asDiagonal();
  a.diagonal() << 1, -2;
  SymMatrix p = psd_project(SymMatrix(a));
  CHECK(p(0, 0) == doctest::Approx(1));
  CHECK(p(1, 1) == doctest::Approx(0).epsilon(1e-12));

  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    int n = 2 + static_cast<int>(rng.below(20));
    Mat m = random_sym(rng, n);
    SymMatrix p1 = psd_project(SymMatrix(m));
    SymMatrix p2 = psd_project(p1);
    CHECK((p1.mat() - p2.mat()).norm() <= 1e-10 * (1 + p1.mat().norm()));
    EigDecomposition e = sym_eig(p1);
    CHECK(e.values(0) >= -1e-9);
    // PSD input passes through unchanged
    Mat g = random_sym(rng, n);
    Mat spd = g * g.transpose();
    SymMatrix kept = psd_project(SymMatrix(spd));
    CHECK((kept.mat() - spd).norm() <= 1e-8 * (1 + spd.norm()));
  }
}

TEST_CASE("dim-1 fast paths") {
  SpdFactor f = factorize_spd(SymMatrix(Mat::Constant(1, 1, 9.0)));
  CHECK(f.lower()(0, 0) == doctest::Approx(3.0));
  EigDecomposition e = sym_eig(SymMatrix(Mat::Constant(1, 1, -4.0)));
  CHECK(e.values(0) == doctest::Approx(-4.0));
  CHECK_THROWS_AS(factorize_spd(SymMatrix(Mat::Constant(1, 1, -1.0))),
                  NotPositiveDefinite);
}

}  // TEST_SUITE
