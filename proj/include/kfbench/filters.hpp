#pragma once

#include <optional>
#include <vector>

#include "kfbench/ssm.hpp"

namespace kfb {

/// Per-step posterior moments of a forward filter. prior_means/prior_covs hold
/// x_{t|t-1}, Sigma_{t|t-1} when the filter propagates them (KF, EKF).
struct FilterOutput {
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  std::vector<Matrix> gains;
  std::vector<Vector> innovations;
  std::vector<Vector> prior_means;
  std::vector<Matrix> prior_covs;

  std::size_t length() const { return means.size(); }
};

struct SmootherOutput {
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  std::vector<Matrix> backward_gains;
};

/// One measurement update of a Gaussian prior (Joseph-form covariance).
struct UpdateResult {
  Gaussian posterior;
  Matrix gain;
  Vector innovation;
};
UpdateResult kalman_update(const Gaussian& prior, const Vector& predicted_obs,
                           const Matrix& obs_jacobian, const Matrix& R,
                           const Vector& y);

FilterOutput kf_filter(const LinearModel& model, const std::vector<Vector>& obs,
                       const std::vector<Vector>* inputs = nullptr);

FilterOutput ekf_filter(const NonlinearModel& model, const std::vector<Vector>& obs);

SmootherOutput rts_smooth(const LinearModel& model, const FilterOutput& forward);
SmootherOutput rts_smooth(const NonlinearModel& model, const FilterOutput& forward);

struct ParticleFilterOptions {
  std::size_t particles = 1000;
};

/// Bootstrap particle filter with systematic resampling every step. Reported
/// moments are the weighted moments before resampling; covariances carry
/// kPsdJitter on the diagonal.
FilterOutput bootstrap_pf(const NonlinearModel& model, const std::vector<Vector>& obs,
                          const ParticleFilterOptions& options, Rng& rng);

struct MapSmootherOptions {
  std::size_t iterations = 200;
  /// Gradient-ascent step. Unset selects 1/L with L a bound on the Hessian
  /// norm of the log-joint; an explicit 0 leaves the initialization untouched.
  std::optional<double> step;
  /// Stop once the largest coordinate update falls below this.
  double tolerance = 0.0;
};

/// MAP smoothing of a time-invariant linear model by gradient ascent on
/// log p(y_{1:T}, x_{1:T}) with the gradient assembled from the three local
/// messages per index.
std::vector<Vector> map_gradient_smoother(const LinearModel& model,
                                          const std::vector<Vector>& obs,
                                          const MapSmootherOptions& options = {});

/// Largest stable step 1/L for map_gradient_smoother.
double map_smoother_default_step(const LinearModel& model);

}  // namespace kfb
