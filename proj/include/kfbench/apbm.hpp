#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "kfbench/filters.hpp"
#include "kfbench/nn.hpp"
#include "kfbench/ssm.hpp"

namespace kfb::apbm {

enum class Regularization { Full, MixingOnly };

Regularization regularization_from_string(std::string_view name);
const char* to_string(Regularization mode);

/// x_t = phi0 f(x_{t-1}) + phi1 g(x_{t-1}; theta_dnn) + v_t with
/// g = FC(m -> hidden, tanh) -> FC(hidden -> m). The parameter vector is
/// theta = [phi0, phi1, theta_dnn], laid out in `params` ("mix" first).
struct ApbmModel {
  NonlinearModel pbm;  // f, h, Jacobians, Q_x, R and the x-block initial belief
  ParamStore params;   // layout of theta; values hold the nominal point
  Vector theta_bar;    // phi0 = 1, phi1 = 0, theta_dnn = initialization
  double q_theta = 1e-6;
  double eta = 1.0;  // pseudo-observation precision; 0 omits the pseudo-rows
  Regularization mode = Regularization::Full;

  static ApbmModel create(NonlinearModel pbm, Eigen::Index hidden, Rng& rng);

  Eigen::Index state_dim() const { return pbm.state_dim(); }
  Eigen::Index param_dim() const { return params.size(); }
  Eigen::Index hidden_size() const { return params.slice("g1.W").rows; }

  /// g(x; theta_dnn) with theta_dnn read from the full theta vector.
  Vector g(const Vector& x, const Vector& theta) const;
};

/// Joint Gaussian over [x; theta].
struct AugmentedBelief {
  Vector mean;
  Matrix cov;

  static AugmentedBelief initial(const ApbmModel& model, const Vector& theta,
                                 const Matrix& theta_cov);
};

Vector apbm_transition(const ApbmModel& model, const Vector& x, const Vector& theta);

struct TransitionLinearization {
  Vector value;   // phi0 f(x) + phi1 g(x)
  Matrix jx;      // m x m
  Matrix jtheta;  // m x d: [f(x), g(x), phi1 dg/dtheta_dnn]
};

/// Transition value and Jacobians; dg/dx and dg/dtheta by reverse mode on g
/// (one sweep per output coordinate), df/dx from the PBM.
TransitionLinearization linearize_transition(const ApbmModel& model, const Vector& x,
                                             const Vector& theta);

AugmentedBelief apbm_predict(const ApbmModel& model, const AugmentedBelief& belief);
/// Measurement update with y_t, then the pseudo-observation theta_bar.
AugmentedBelief apbm_update(const ApbmModel& model, const AugmentedBelief& prior,
                            const Vector& y);
AugmentedBelief apbm_augmented_step(const ApbmModel& model, const AugmentedBelief& belief,
                                    const Vector& y);

struct OfflineConfig {
  std::size_t epochs = 1;
  double theta_init_var = 1e-2;
  double time_cap_seconds = 1800.0;
};

struct OfflineResult {
  Vector theta;
  Matrix theta_cov;
  std::size_t epochs_run = 0;
  std::size_t sequences_seen = 0;
};

/// Runs the augmented filter over every sequence and epoch, resetting the
/// x-block per sequence and carrying the theta-block.
OfflineResult train_apbm_offline(const ApbmModel& model, const Dataset& ds,
                                 const OfflineConfig& cfg);

/// Plain model x_t = transition(x_{t-1}; theta) for EKF evaluation with theta frozen.
NonlinearModel fixed_theta_model(const ApbmModel& model, const Vector& theta);

struct OnlineResult {
  FilterOutput states;              // x-marginal
  std::vector<Vector> theta_trace;  // posterior theta mean per step
};

OnlineResult run_apbm_online(const ApbmModel& model, const std::vector<Vector>& obs,
                             const AugmentedBelief& init);

/// Checkpoint of a learned theta (values = posterior mean, arch holds the
/// covariance diagonal and the nominal point).
Checkpoint to_checkpoint(const ApbmModel& model, const OfflineResult& result);
/// Rebuilds the model around `pbm` and returns the stored posterior mean in `theta`.
ApbmModel from_checkpoint(const Checkpoint& ckpt, NonlinearModel pbm, Vector& theta);

}  // namespace kfb::apbm
