#pragma once

#include <cstddef>

#include "kfbench/ssm.hpp"

namespace kfb::lorenz {

inline constexpr double kSigma = 10.0;
inline constexpr double kRho = 28.0;
inline constexpr double kBeta = 8.0 / 3.0;

struct GeneratorConfig {
  double dt_fine = 1e-5;
  std::size_t decimation = 2000;
  std::size_t steps = 3000;
  double r2 = 1.0;
  double q2 = 0.0;
  /// x_0 ~ N(init_mean * 1, init_var * I)
  double init_mean = 1.0;
  double init_var = 1.0;
};

/// Continuous-time vector field.
Vector derivative(const Vector& x);

/// Ground truth by RK4 at dt_fine, keeping every decimation-th state.
/// Observations are x_t + N(0, r2 I). Throws DivergedSimulation if the state
/// norm exceeds 1e6.
Trajectory generate(const GeneratorConfig& cfg, Rng& rng);

/// State-dependent dynamics matrix A(x) with dx/dt = A(x) x.
Matrix dynamics_matrix(const Vector& x);

/// Discrete transition x -> sum_{j<=order} (A(x) dt)^j / j! * x.
Vector taylor_step(const Vector& x, double dt, int order);

/// Exact Jacobian of taylor_step with respect to x.
Matrix taylor_jacobian(const Vector& x, double dt, int order);

struct FilterModelConfig {
  double dt = 0.02;
  int taylor_order = 5;
  double q2 = 1e-3;
  double r2 = 1.0;
  double init_mean = 1.0;
  double init_var = 1.0;
};

/// The mismatched discrete model used by the filters: Taylor-discretized
/// dynamics with identity observation.
NonlinearModel filter_model(const FilterModelConfig& cfg);

}  // namespace kfb::lorenz
