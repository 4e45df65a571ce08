#include "kfbench/lorenz.hpp"

#include <array>
#include <cmath>
#include <string>

namespace kfb::lorenz {

namespace {

using State = std::array<double, 3>;

inline State field(const State& s) {
  return {kSigma * (s[1] - s[0]), s[0] * (kRho - s[2]) - s[1],
          s[0] * s[1] - kBeta * s[2]};
}

inline State axpy(const State& x, double a, const State& k) {
  return {x[0] + a * k[0], x[1] + a * k[1], x[2] + a * k[2]};
}

inline void rk4(State& s, double h) {
  const State k1 = field(s);
  const State k2 = field(axpy(s, 0.5 * h, k1));
  const State k3 = field(axpy(s, 0.5 * h, k2));
  const State k4 = field(axpy(s, h, k3));
  for (int i = 0; i < 3; ++i) {
    s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
}

Vector to_vector(const State& s) { return Vector{{s[0], s[1], s[2]}}; }

}  // namespace

Vector derivative(const Vector& x) {
  const State d = field({x[0], x[1], x[2]});
  return to_vector(d);
}

Trajectory generate(const GeneratorConfig& cfg, Rng& rng) {
  if (!(cfg.dt_fine > 0.0)) throw Error(Errc::InvalidArgument, "dt_fine must be > 0");
  if (cfg.decimation < 1) throw Error(Errc::InvalidArgument, "decimation must be >= 1");
  if (cfg.steps < 1) throw Error(Errc::InvalidArgument, "need at least one step");
  if (cfg.r2 < 0.0 || cfg.q2 < 0.0) {
    throw Error(Errc::InvalidArgument, "noise variances must be non-negative");
  }

  State s;
  for (auto& v : s) v = cfg.init_mean + std::sqrt(cfg.init_var) * rng.normal();

  Trajectory traj;
  traj.dt = cfg.dt_fine * static_cast<double>(cfg.decimation);
  traj.states.emplace();
  traj.states->reserve(cfg.steps);
  traj.obs.reserve(cfg.steps);
  const double q_std = std::sqrt(cfg.q2);
  const double r_std = std::sqrt(cfg.r2);
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    for (std::size_t k = 0; k < cfg.decimation; ++k) rk4(s, cfg.dt_fine);
    if (cfg.q2 > 0.0) {
      for (auto& v : s) v += q_std * rng.normal();
    }
    const double norm = std::sqrt(s[0] * s[0] + s[1] * s[1] + s[2] * s[2]);
    if (!(norm <= 1e6)) {
      throw Error(Errc::DivergedSimulation,
                  "Lorenz state norm exceeded 1e6 at step " + std::to_string(t));
    }
    Vector x = to_vector(s);
    Vector y = x;
    for (int i = 0; i < 3; ++i) {
      const double w = rng.normal();
      if (cfg.r2 > 0.0) y[i] += r_std * w;
    }
    traj.states->push_back(std::move(x));
    traj.obs.push_back(std::move(y));
  }
  return traj;
}

Matrix dynamics_matrix(const Vector& x) {
  Matrix a(3, 3);
  a << -kSigma, kSigma, 0.0,
       kRho, -1.0, -x[0],
       0.0, x[0], -kBeta;
  return a;
}

Vector taylor_step(const Vector& x, double dt, int order) {
  const Matrix a = dynamics_matrix(x) * dt;
  Vector term = x;
  Vector out = x;
  for (int j = 1; j <= order; ++j) {
    term = a * term / static_cast<double>(j);
    out += term;
  }
  return out;
}

Matrix taylor_jacobian(const Vector& x, double dt, int order) {
  // d/dx [A^j x] = A^j + sum_k A^k E A^(j-1-k) x e_1^T, E = dA/dx_1.
  Matrix a = dynamics_matrix(x) * dt;
  Matrix e = Matrix::Zero(3, 3);
  e(1, 2) = -dt;
  e(2, 1) = dt;

  std::vector<Matrix> powers{Matrix::Identity(3, 3)};
  for (int j = 1; j <= order; ++j) powers.push_back(powers.back() * a);

  Matrix jac = Matrix::Zero(3, 3);
  Vector column = Vector::Zero(3);
  double factorial = 1.0;
  for (int j = 0; j <= order; ++j) {
    if (j > 0) factorial *= j;
    jac += powers[j] / factorial;
    Vector sum = Vector::Zero(3);
    for (int k = 0; k < j; ++k) sum += powers[k] * (e * (powers[j - 1 - k] * x));
    column += sum / factorial;
  }
  jac.col(0) += column;
  return jac;
}

NonlinearModel filter_model(const FilterModelConfig& cfg) {
  NonlinearModel model;
  const double dt = cfg.dt;
  const int order = cfg.taylor_order;
  model.f = [dt, order](const Vector& x) { return taylor_step(x, dt, order); };
  model.jac_f = [dt, order](const Vector& x) { return taylor_jacobian(x, dt, order); };
  model.h = [](const Vector& x) -> Vector { return x; };
  model.jac_h = [](const Vector&) -> Matrix { return Matrix::Identity(3, 3); };
  model.Q = cfg.q2 * Matrix::Identity(3, 3);
  model.R = cfg.r2 * Matrix::Identity(3, 3);
  model.init.mean = Vector::Constant(3, cfg.init_mean);
  model.init.cov = cfg.init_var * Matrix::Identity(3, 3);
  return model;
}

}  // namespace kfb::lorenz
