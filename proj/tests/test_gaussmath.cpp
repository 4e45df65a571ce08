#include <doctest.h>

#include <cmath>
#include <numbers>

#include "kfbench/gaussmath.hpp"

using namespace kfb;

TEST_CASE("cholesky_factor of the identity is the identity") {
  CHECK(cholesky_factor(Matrix::Identity(2, 2)).isApprox(Matrix::Identity(2, 2)));
}

TEST_CASE("cholesky_factor reproduces a 2x2 SPD matrix") {
  Matrix a(2, 2);
  a << 4, 2, 2, 3;
  const Matrix L = cholesky_factor(a);
  CHECK(L(0, 0) == doctest::Approx(2.0));
  CHECK(L(1, 0) == doctest::Approx(1.0));
  CHECK(L(1, 1) == doctest::Approx(std::sqrt(2.0)));
  CHECK(L(0, 1) == 0.0);
  CHECK((L * L.transpose() - a).norm() / a.norm() < 1e-10);
}

TEST_CASE("cholesky_factor rejects an indefinite matrix") {
  Matrix a(2, 2);
  a << 1, 2, 2, 1;
  try {
    cholesky_factor(a);
    FAIL("expected NotPositiveDefinite");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NotPositiveDefinite);
  }
}

TEST_CASE("cholesky_factor on random B^T B + I") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 7;
    Matrix b(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) b(i, j) = rng.normal();
    const Matrix a = b.transpose() * b + Matrix::Identity(n, n);
    const Matrix L = cholesky_factor(a);
    CHECK((L * L.transpose() - a).norm() / a.norm() < 1e-10);
  }
}

TEST_CASE("log_pdf closed forms") {
  const Gaussian g1{Vector::Zero(1), Matrix::Identity(1, 1)};
  CHECK(log_pdf(g1, Vector::Zero(1)) == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)));
  CHECK(log_pdf(g1, Vector::Zero(1)) == doctest::Approx(-0.918939).epsilon(1e-6));

  const Gaussian g2{Vector::Zero(2), Matrix::Identity(2, 2)};
  CHECK(log_pdf(g2, Vector::Ones(2)) == doctest::Approx(-std::log(2 * std::numbers::pi) - 1.0));

  const Gaussian g4{Vector::Zero(1), Matrix::Constant(1, 1, 4.0)};
  CHECK(log_pdf(g4, Vector::Constant(1, 2.0)) ==
        doctest::Approx(-0.5 * std::log(8 * std::numbers::pi) - 0.5));
}

TEST_CASE("log_pdf propagates factorization failure") {
  Matrix bad(2, 2);
  bad << 1, 2, 2, 1;
  CHECK_THROWS_AS(log_pdf(Gaussian{Vector::Zero(2), bad}, Vector::Zero(2)), Error);
}

TEST_CASE("exp(log_pdf) integrates to one") {
  const double sd = 1.7;
  const Gaussian g{Vector::Constant(1, 0.3), Matrix::Constant(1, 1, sd * sd)};
  const int n = 20001;
  const double lo = 0.3 - 8 * sd, hi = 0.3 + 8 * sd, h = (hi - lo) / (n - 1);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    total += w * std::exp(log_pdf(g, Vector::Constant(1, lo + i * h)));
  }
  CHECK(std::abs(total * h - 1.0) < 1e-4);
}

TEST_CASE("sample_gaussian with zero covariance returns the mean") {
  Rng rng(1);
  const Vector mu = (Vector(3) << 1.0, -2.0, 0.5).finished();
  CHECK(sample_gaussian(Gaussian{mu, Matrix::Zero(3, 3)}, rng) == mu);
}

TEST_CASE("sample_gaussian moments and determinism") {
  Rng rng(5);
  const Gaussian g{Vector::Zero(1), Matrix::Identity(1, 1)};
  const int n = 100000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double v = sample_gaussian(g, rng)[0];
    s += v;
    s2 += v * v;
  }
  const double mean = s / n;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(s2 / n - mean * mean - 1.0) < 0.05);

  Rng a(42), b(42);
  const Gaussian g3{Vector::Ones(3), Matrix::Identity(3, 3) * 2.0};
  CHECK(sample_gaussian(g3, a) == sample_gaussian(g3, b));
}

TEST_CASE("sample_gaussian empirical covariance") {
  Matrix cov(3, 3);
  cov << 2.0, 0.6, -0.3, 0.6, 1.0, 0.2, -0.3, 0.2, 0.5;
  const Gaussian g{Vector::Zero(3), cov};
  Rng rng(9);
  Matrix acc = Matrix::Zero(3, 3);
  Vector sum = Vector::Zero(3);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const Vector v = sample_gaussian(g, rng);
    acc += v * v.transpose();
    sum += v;
  }
  const Vector mean = sum / n;
  const Matrix emp = acc / n - mean * mean.transpose();
  CHECK((emp - cov).norm() / cov.norm() < 0.05);
}

TEST_CASE("psd helpers") {
  CHECK(is_psd(Matrix::Zero(2, 2)));
  Matrix neg = Matrix::Identity(2, 2);
  neg(1, 1) = -1.0;
  CHECK_FALSE(is_psd(neg));
  Matrix a(2, 2);
  a << 2, 1, 1, 2;
  const Matrix x = spd_solve(a, Matrix::Identity(2, 2));
  CHECK((a * x - Matrix::Identity(2, 2)).norm() < 1e-12);
  CHECK(symmetrize((Matrix(2, 2) << 1, 2, 0, 1).finished())(0, 1) == 1.0);
}

TEST_CASE("derive_seed separates streams") {
  CHECK(derive_seed(1, 1) != derive_seed(1, 2));
  CHECK(derive_seed(1, 1) != derive_seed(2, 1));
  CHECK(derive_seed(7, 3) == derive_seed(7, 3));
}
