#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kfbench/gaussmath.hpp"

namespace kfb {

using VectorMap = std::function<Vector(const Vector&)>;
using JacobianMap = std::function<Matrix(const Vector&)>;

/// x_t = F x_{t-1} + G u_{t-1} + v_t,  y_t = H x_t + w_t.
struct LinearModel {
  Matrix F;
  std::optional<Matrix> G;
  Matrix H;
  Matrix Q;
  Matrix R;
  Gaussian init;

  Eigen::Index state_dim() const { return F.rows(); }
  Eigen::Index obs_dim() const { return H.rows(); }

  /// Throws ShapeMismatch / NotPositiveDefinite on inconsistent fields.
  void validate() const;
};

/// x_t = f(x_{t-1}) + v_t,  y_t = h(x_t) + w_t. Missing Jacobians are
/// replaced by central differences.
struct NonlinearModel {
  VectorMap f;
  VectorMap h;
  JacobianMap jac_f;
  JacobianMap jac_h;
  Matrix Q;
  Matrix R;
  Gaussian init;

  Eigen::Index state_dim() const { return Q.rows(); }
  Eigen::Index obs_dim() const { return R.rows(); }

  Matrix f_jacobian(const Vector& x) const;
  Matrix h_jacobian(const Vector& x) const;

  /// Wraps a linear model with exact Jacobians.
  static NonlinearModel from_linear(const LinearModel& model);
};

/// Central differences with per-coordinate step max(1e-6, 1e-6*|x_i|).
Matrix numeric_jacobian(const VectorMap& fn, const Vector& x);

struct Trajectory {
  std::string id;
  double dt = 1.0;
  std::vector<Vector> obs;
  std::optional<std::vector<Vector>> states;

  std::size_t length() const { return obs.size(); }
};

struct Dataset {
  std::vector<Trajectory> trajectories;

  bool supervised() const;
  bool empty() const { return trajectories.empty(); }
  std::size_t size() const { return trajectories.size(); }
};

Trajectory simulate(const LinearModel& model, std::size_t steps, Rng& rng,
                    const std::vector<Vector>* inputs = nullptr);
Trajectory simulate(const NonlinearModel& model, std::size_t steps, Rng& rng);

/// Observations of a dataset without the state labels.
Dataset strip_states(const Dataset& ds);

}  // namespace kfb
