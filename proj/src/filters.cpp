#include "kfbench/filters.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace kfb {

namespace {

void check_obs(const std::vector<Vector>& obs, Eigen::Index n) {
  for (const auto& y : obs) require_same_dim(y.size(), n, "observation dimension");
}

Matrix backward_gain(const Matrix& post_cov, const Matrix& transition,
                     const Matrix& next_prior_cov) {
  // Sigma_{t|t} F^T Sigma_{t+1|t}^{-1}, computed as a transposed SPD solve.
  const Matrix rhs = transition * post_cov;
  return psd_llt(next_prior_cov).solve(rhs).transpose();
}

template <typename TransitionAt>
SmootherOutput rts_backward(const FilterOutput& fwd, TransitionAt transition_at) {
  const std::size_t steps = fwd.length();
  SmootherOutput out;
  out.means = fwd.means;
  out.covs = fwd.covs;
  if (steps == 0) return out;
  if (fwd.prior_means.size() != steps || fwd.prior_covs.size() != steps) {
    throw Error(Errc::InvalidArgument, "rts_smooth needs a KF/EKF forward pass");
  }
  out.backward_gains.assign(steps, Matrix::Zero(fwd.covs[0].rows(), fwd.covs[0].cols()));
  for (std::size_t k = steps - 1; k-- > 0;) {
    const Matrix gain = backward_gain(fwd.covs[k], transition_at(k), fwd.prior_covs[k + 1]);
    out.means[k] = fwd.means[k] + gain * (out.means[k + 1] - fwd.prior_means[k + 1]);
    out.covs[k] = symmetrize(fwd.covs[k] -
                             gain * (fwd.prior_covs[k + 1] - out.covs[k + 1]) * gain.transpose());
    out.backward_gains[k] = gain;
  }
  return out;
}

}  // namespace

UpdateResult kalman_update(const Gaussian& prior, const Vector& predicted_obs,
                           const Matrix& obs_jacobian, const Matrix& R,
                           const Vector& y) {
  const Matrix& P = prior.cov;
  const Matrix& H = obs_jacobian;
  const Matrix S = symmetrize(H * P * H.transpose() + R);
  const auto llt = psd_llt(S);
  const Matrix gain = llt.solve(H * P).transpose();
  UpdateResult res;
  res.innovation = y - predicted_obs;
  res.gain = gain;
  res.posterior.mean = prior.mean + gain * res.innovation;
  const Matrix ikh = Matrix::Identity(P.rows(), P.cols()) - gain * H;
  res.posterior.cov =
      symmetrize(ikh * P * ikh.transpose() + gain * R * gain.transpose());
  return res;
}

FilterOutput kf_filter(const LinearModel& model, const std::vector<Vector>& obs,
                       const std::vector<Vector>* inputs) {
  model.validate();
  check_obs(obs, model.obs_dim());
  if (inputs && model.G && inputs->size() < obs.size()) {
    throw Error(Errc::ShapeMismatch, "input sequence shorter than observations");
  }
  FilterOutput out;
  Gaussian belief = model.init;
  for (std::size_t t = 0; t < obs.size(); ++t) {
    Gaussian prior;
    prior.mean = model.F * belief.mean;
    if (model.G && inputs) prior.mean += *model.G * (*inputs)[t];
    prior.cov = symmetrize(model.F * belief.cov * model.F.transpose() + model.Q);
    auto upd = kalman_update(prior, model.H * prior.mean, model.H, model.R, obs[t]);
    belief = upd.posterior;
    out.prior_means.push_back(prior.mean);
    out.prior_covs.push_back(prior.cov);
    out.means.push_back(belief.mean);
    out.covs.push_back(belief.cov);
    out.gains.push_back(std::move(upd.gain));
    out.innovations.push_back(std::move(upd.innovation));
  }
  return out;
}

FilterOutput ekf_filter(const NonlinearModel& model, const std::vector<Vector>& obs) {
  check_obs(obs, model.obs_dim());
  FilterOutput out;
  Gaussian belief = model.init;
  for (std::size_t t = 0; t < obs.size(); ++t) {
    const Matrix F = model.f_jacobian(belief.mean);
    Gaussian prior;
    prior.mean = model.f(belief.mean);
    prior.cov = symmetrize(F * belief.cov * F.transpose() + model.Q);
    const Matrix H = model.h_jacobian(prior.mean);
    auto upd = kalman_update(prior, model.h(prior.mean), H, model.R, obs[t]);
    if (!upd.posterior.mean.allFinite()) {
      throw Error(Errc::NonFiniteEstimate, "EKF estimate diverged at step " + std::to_string(t));
    }
    belief = upd.posterior;
    out.prior_means.push_back(prior.mean);
    out.prior_covs.push_back(prior.cov);
    out.means.push_back(belief.mean);
    out.covs.push_back(belief.cov);
    out.gains.push_back(std::move(upd.gain));
    out.innovations.push_back(std::move(upd.innovation));
  }
  return out;
}

SmootherOutput rts_smooth(const LinearModel& model, const FilterOutput& forward) {
  return rts_backward(forward, [&](std::size_t) -> const Matrix& { return model.F; });
}

SmootherOutput rts_smooth(const NonlinearModel& model, const FilterOutput& forward) {
  return rts_backward(forward,
                      [&](std::size_t k) { return model.f_jacobian(forward.means[k]); });
}

FilterOutput bootstrap_pf(const NonlinearModel& model, const std::vector<Vector>& obs,
                          const ParticleFilterOptions& options, Rng& rng) {
  const std::size_t n = options.particles;
  if (n < 1) throw Error(Errc::InvalidArgument, "particle filter needs particles");
  check_obs(obs, model.obs_dim());
  const Eigen::Index m = model.state_dim();

  const auto r_llt = psd_llt(model.R);
  const bool noisy = !model.Q.isZero(0.0);
  const Matrix q_factor = noisy ? Matrix(psd_llt(model.Q).matrixL()) : Matrix::Zero(m, m);
  const Matrix init_factor = model.init.cov.isZero(0.0)
                                 ? Matrix::Zero(m, m)
                                 : Matrix(psd_llt(model.init.cov).matrixL());

  Matrix particles(m, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    particles.col(static_cast<Eigen::Index>(i)) =
        model.init.mean + sample_with_factor(init_factor, rng);
  }

  FilterOutput out;
  Vector logw(static_cast<Eigen::Index>(n));
  Vector weights(static_cast<Eigen::Index>(n));
  Matrix resampled(m, static_cast<Eigen::Index>(n));
  for (std::size_t t = 0; t < obs.size(); ++t) {
    for (Eigen::Index i = 0; i < particles.cols(); ++i) {
      Vector x = model.f(particles.col(i));
      if (noisy) x += sample_with_factor(q_factor, rng);
      particles.col(i) = x;
      const Vector e = r_llt.matrixL().solve(obs[t] - model.h(x));
      logw[i] = -0.5 * e.squaredNorm();
    }
    double max_logw = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < logw.size(); ++i) {
      if (std::isfinite(logw[i])) max_logw = std::max(max_logw, logw[i]);
    }
    if (!std::isfinite(max_logw)) {
      throw Error(Errc::DegenerateWeights,
                  "all particle likelihoods vanished at step " + std::to_string(t));
    }
    for (Eigen::Index i = 0; i < logw.size(); ++i) {
      weights[i] = std::isfinite(logw[i]) ? std::exp(logw[i] - max_logw) : 0.0;
    }
    weights /= weights.sum();

    const Vector mean = particles * weights;
    const Matrix centered = particles.colwise() - mean;
    Matrix cov = centered * weights.asDiagonal() * centered.transpose();
    cov = symmetrize(cov);
    cov.diagonal().array() += kPsdJitter;
    out.means.push_back(mean);
    out.covs.push_back(std::move(cov));

    // Systematic resampling.
    const double step = 1.0 / static_cast<double>(n);
    double u = rng.uniform() * step;
    double cumulative = weights[0];
    Eigen::Index src = 0;
    for (Eigen::Index i = 0; i < particles.cols(); ++i) {
      while (u > cumulative && src + 1 < particles.cols()) cumulative += weights[++src];
      resampled.col(i) = particles.col(src);
      u += step;
    }
    particles.swap(resampled);
  }
  return out;
}

double map_smoother_default_step(const LinearModel& model) {
  const Matrix p1 = symmetrize(model.F * model.init.cov * model.F.transpose() + model.Q);
  Eigen::SelfAdjointEigenSolver<Matrix> q_eig(model.Q), p1_eig(p1);
  const Matrix info = model.H.transpose() * spd_solve(model.R, model.H);
  Eigen::SelfAdjointEigenSolver<Matrix> info_eig(symmetrize(info));
  const double f_norm = model.F.operatorNorm();
  const double q_inv = 1.0 / q_eig.eigenvalues().minCoeff();
  const double p1_inv = 1.0 / p1_eig.eigenvalues().minCoeff();
  const double bound = std::max(q_inv, p1_inv) * (1.0 + f_norm) * (1.0 + f_norm) +
                       info_eig.eigenvalues().maxCoeff();
  return 1.0 / bound;
}

std::vector<Vector> map_gradient_smoother(const LinearModel& model,
                                          const std::vector<Vector>& obs,
                                          const MapSmootherOptions& options) {
  model.validate();
  check_obs(obs, model.obs_dim());
  const double step = options.step.value_or(map_smoother_default_step(model));
  if (step < 0.0) throw Error(Errc::InvalidArgument, "step must be >= 0");

  const std::size_t steps = obs.size();
  const Matrix& F = model.F;
  const Matrix& H = model.H;
  const auto q_llt = psd_llt(model.Q);
  const auto r_llt = psd_llt(model.R);
  // x_1 is tied to the initial belief through its one-step prediction.
  const Vector first_mean = F * model.init.mean;
  const auto p1_llt = psd_llt(symmetrize(F * model.init.cov * F.transpose() + model.Q));

  // Least-squares inversion of the observation map per step.
  const Matrix pinv = H.transpose() * psd_llt(H * H.transpose()).solve(
                                          Matrix::Identity(H.rows(), H.rows()));
  std::vector<Vector> x(steps);
  for (std::size_t t = 0; t < steps; ++t) x[t] = pinv * obs[t];
  if (step == 0.0 || steps == 0) return x;

  std::vector<Vector> grad(steps);
  for (std::size_t it = 0; it < options.iterations; ++it) {
    for (std::size_t t = 0; t < steps; ++t) {
      Vector g = H.transpose() * r_llt.solve(obs[t] - H * x[t]);
      if (t == 0) {
        g -= p1_llt.solve(x[0] - first_mean);
      } else {
        g -= q_llt.solve(x[t] - F * x[t - 1]);
      }
      if (t + 1 < steps) g += F.transpose() * q_llt.solve(x[t + 1] - F * x[t]);
      grad[t] = std::move(g);
    }
    double largest = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
      const Vector delta = step * grad[t];
      x[t] += delta;
      largest = std::max(largest, delta.cwiseAbs().maxCoeff());
      if (!(x[t].norm() <= 1e9)) {
        throw Error(Errc::Diverged, "gradient smoother iterate exceeded 1e9 at iteration " +
                                        std::to_string(it));
      }
    }
    if (largest < options.tolerance) break;
  }
  return x;
}

}  // namespace kfb
