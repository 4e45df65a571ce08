#include "kfbench/gaussmath.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace kfb {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::NotPositiveDefinite: return "NotPositiveDefinite";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::NonFiniteEstimate: return "NonFiniteEstimate";
    case Errc::NonFinitePrior: return "NonFinitePrior";
    case Errc::NonFiniteState: return "NonFiniteState";
    case Errc::DegenerateWeights: return "DegenerateWeights";
    case Errc::Diverged: return "Diverged";
    case Errc::DivergedSimulation: return "DivergedSimulation";
    case Errc::RankDeficientH: return "RankDeficientH";
    case Errc::SingularUpdate: return "SingularUpdate";
    case Errc::IoError: return "IoError";
    case Errc::SchemaError: return "SchemaError";
    case Errc::ConfigError: return "ConfigError";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

bool is_numeric(Errc code) {
  switch (code) {
    case Errc::NotPositiveDefinite:
    case Errc::NonFiniteLoss:
    case Errc::NonFiniteEstimate:
    case Errc::NonFinitePrior:
    case Errc::NonFiniteState:
    case Errc::DegenerateWeights:
    case Errc::Diverged:
    case Errc::DivergedSimulation:
    case Errc::RankDeficientH:
    case Errc::SingularUpdate:
      return true;
    default:
      return false;
  }
}

Vector Rng::normal_vector(Eigen::Index n) {
  Vector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = normal();
  return z;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

void require_same_dim(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    throw Error(Errc::ShapeMismatch, std::string(what) + ": " +
                                         std::to_string(a) + " vs " +
                                         std::to_string(b));
  }
}

bool all_finite(const Matrix& a) { return a.allFinite(); }

Matrix cholesky_factor(const Matrix& a) {
  if (a.rows() != a.cols()) {
    throw Error(Errc::ShapeMismatch, "cholesky_factor needs a square matrix");
  }
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if (!((a - a.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * scale)) {
    throw Error(Errc::InvalidArgument, "cholesky_factor needs a symmetric matrix");
  }
  const Eigen::Index n = a.rows();
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = a(j, j) - l.row(j).head(j).squaredNorm();
    if (!(pivot > 0.0)) {
      throw Error(Errc::NotPositiveDefinite,
                  "pivot " + std::to_string(j) + " is " + std::to_string(pivot));
    }
    l(j, j) = std::sqrt(pivot);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
    }
  }
  return l;
}

Eigen::LLT<Matrix> psd_llt(const Matrix& a) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) return llt;
  Matrix jittered = a;
  jittered.diagonal().array() += kPsdJitter;
  llt.compute(jittered);
  if (llt.info() != Eigen::Success || !llt.matrixLLT().allFinite()) {
    throw Error(Errc::NotPositiveDefinite, "covariance is not positive definite");
  }
  return llt;
}

bool is_psd(const Matrix& a) {
  Matrix jittered = symmetrize(a);
  jittered.diagonal().array() += kPsdJitter;
  Eigen::LLT<Matrix> llt(jittered);
  return llt.info() == Eigen::Success;
}

Matrix spd_solve(const Matrix& a, const Matrix& b) { return psd_llt(a).solve(b); }

double log_pdf(const Gaussian& g, const Vector& x) {
  require_same_dim(x.size(), g.mean.size(), "log_pdf");
  const auto llt = psd_llt(g.cov);
  const Matrix& l = llt.matrixLLT();
  const Vector z = llt.matrixL().solve(x - g.mean);
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  const double n = static_cast<double>(x.size());
  return -0.5 * (n * std::log(2.0 * std::numbers::pi) + log_det + z.squaredNorm());
}

Vector sample_with_factor(const Matrix& lower, Rng& rng) {
  return lower.triangularView<Eigen::Lower>() * rng.normal_vector(lower.rows());
}

Vector sample_gaussian(const Gaussian& g, Rng& rng) {
  require_same_dim(g.cov.rows(), g.mean.size(), "sample_gaussian");
  if (g.cov.isZero(0.0)) {
    // Keep the draw count identical to the noisy case.
    rng.normal_vector(g.mean.size());
    return g.mean;
  }
  const auto llt = psd_llt(g.cov);
  return g.mean + sample_with_factor(llt.matrixL(), rng);
}

}  // namespace kfb
