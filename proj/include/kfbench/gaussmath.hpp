#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "kfbench/error.hpp"

namespace kfb {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kPsdJitter = 1e-12;

/// Seeded normal/uniform stream. Identical seeds give identical draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  Vector normal_vector(Eigen::Index n);
  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Derives independent stream seeds from a base seed (SplitMix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

struct Gaussian {
  Vector mean;
  Matrix cov;

  Eigen::Index dim() const { return mean.size(); }
};

Matrix symmetrize(const Matrix& a);

/// Lower-triangular L with L*L^T = a. Throws NotPositiveDefinite when a pivot
/// is not strictly positive.
Matrix cholesky_factor(const Matrix& a);

/// Cholesky of a + kPsdJitter*I; used for PSD checks on beliefs.
Eigen::LLT<Matrix> psd_llt(const Matrix& a);

bool is_psd(const Matrix& a);

/// Solves a*X = b for symmetric positive definite a.
Matrix spd_solve(const Matrix& a, const Matrix& b);

double log_pdf(const Gaussian& g, const Vector& x);

Vector sample_gaussian(const Gaussian& g, Rng& rng);

/// Zero-mean draw with covariance cov given its precomputed factor.
Vector sample_with_factor(const Matrix& lower, Rng& rng);

bool all_finite(const Matrix& a);

void require_same_dim(Eigen::Index a, Eigen::Index b, const char* what);

}  // namespace kfb
