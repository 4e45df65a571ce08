#include "kfbench/ssm.hpp"

#include <algorithm>
#include <cmath>

namespace kfb {

void LinearModel::validate() const {
  const auto m = F.rows();
  require_same_dim(F.cols(), m, "F must be square");
  require_same_dim(H.cols(), m, "H columns vs state dim");
  require_same_dim(Q.rows(), m, "Q rows");
  require_same_dim(Q.cols(), m, "Q cols");
  require_same_dim(R.rows(), H.rows(), "R rows vs obs dim");
  require_same_dim(R.cols(), H.rows(), "R cols vs obs dim");
  require_same_dim(init.mean.size(), m, "init mean");
  require_same_dim(init.cov.rows(), m, "init cov");
  if (G) require_same_dim(G->rows(), m, "G rows");
  if (!is_psd(Q) || !is_psd(R) || !is_psd(init.cov)) {
    throw Error(Errc::NotPositiveDefinite, "linear model covariances must be PSD");
  }
}

Matrix numeric_jacobian(const VectorMap& fn, const Vector& x) {
  const Vector f0 = fn(x);
  Matrix jac(f0.size(), x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double step = std::max(1e-6, 1e-6 * std::abs(x[i]));
    probe[i] = x[i] + step;
    const Vector up = fn(probe);
    probe[i] = x[i] - step;
    const Vector down = fn(probe);
    probe[i] = x[i];
    jac.col(i) = (up - down) / (2.0 * step);
  }
  return jac;
}

Matrix NonlinearModel::f_jacobian(const Vector& x) const {
  return jac_f ? jac_f(x) : numeric_jacobian(f, x);
}

Matrix NonlinearModel::h_jacobian(const Vector& x) const {
  return jac_h ? jac_h(x) : numeric_jacobian(h, x);
}

NonlinearModel NonlinearModel::from_linear(const LinearModel& model) {
  NonlinearModel out;
  out.f = [F = model.F](const Vector& x) -> Vector { return F * x; };
  out.h = [H = model.H](const Vector& x) -> Vector { return H * x; };
  out.jac_f = [F = model.F](const Vector&) -> Matrix { return F; };
  out.jac_h = [H = model.H](const Vector&) -> Matrix { return H; };
  out.Q = model.Q;
  out.R = model.R;
  out.init = model.init;
  return out;
}

bool Dataset::supervised() const {
  return !trajectories.empty() &&
         std::all_of(trajectories.begin(), trajectories.end(),
                     [](const Trajectory& t) { return t.states.has_value(); });
}

namespace {

// Factor of a noise covariance, or nullopt for an exactly-zero covariance.
std::optional<Matrix> noise_factor(const Matrix& cov) {
  if (cov.isZero(0.0)) return std::nullopt;
  return Matrix(psd_llt(cov).matrixL());
}

Vector draw(const std::optional<Matrix>& factor, Eigen::Index dim, Rng& rng) {
  // Always consume dim draws so zero and nonzero noise share the stream layout.
  const Vector z = rng.normal_vector(dim);
  if (!factor) return Vector::Zero(dim);
  return factor->triangularView<Eigen::Lower>() * z;
}

}  // namespace

Trajectory simulate(const LinearModel& model, std::size_t steps, Rng& rng,
                    const std::vector<Vector>* inputs) {
  model.validate();
  if (steps < 1) throw Error(Errc::InvalidArgument, "simulate needs T >= 1");
  if (inputs && inputs->size() < steps) {
    throw Error(Errc::ShapeMismatch, "input sequence shorter than T");
  }
  const auto q = noise_factor(model.Q);
  const auto r = noise_factor(model.R);
  Trajectory traj;
  traj.states.emplace();
  Vector x = sample_gaussian(model.init, rng);
  for (std::size_t t = 0; t < steps; ++t) {
    Vector next = model.F * x;
    if (model.G && inputs) next += *model.G * (*inputs)[t];
    x = next + draw(q, model.state_dim(), rng);
    traj.states->push_back(x);
    traj.obs.push_back(model.H * x + draw(r, model.obs_dim(), rng));
  }
  return traj;
}

Trajectory simulate(const NonlinearModel& model, std::size_t steps, Rng& rng) {
  if (steps < 1) throw Error(Errc::InvalidArgument, "simulate needs T >= 1");
  const auto q = noise_factor(model.Q);
  const auto r = noise_factor(model.R);
  Trajectory traj;
  traj.states.emplace();
  Vector x = sample_gaussian(model.init, rng);
  for (std::size_t t = 0; t < steps; ++t) {
    x = model.f(x) + draw(q, model.state_dim(), rng);
    traj.states->push_back(x);
    traj.obs.push_back(model.h(x) + draw(r, model.obs_dim(), rng));
  }
  return traj;
}

Dataset strip_states(const Dataset& ds) {
  Dataset out = ds;
  for (auto& t : out.trajectories) t.states.reset();
  return out;
}

}  // namespace kfb
