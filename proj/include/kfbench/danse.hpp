#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "kfbench/filters.hpp"
#include "kfbench/nn.hpp"
#include "kfbench/ssm.hpp"

namespace kfb::danse {

/// Known linear observation model y_t = H x_t + w_t, w_t ~ N(0, R).
struct ObsModel {
  Matrix H;
  Matrix R;

  Eigen::Index state_dim() const { return H.cols(); }
  Eigen::Index obs_dim() const { return H.rows(); }
  /// Throws ShapeMismatch, RankDeficientH or NotPositiveDefinite.
  void validate() const;
};

/// GRU over past observations with a mean head and a log-variance head.
/// Inputs are standardized as (y - input_shift) * input_gain and outputs
/// mapped back as mean = output_shift + output_scale * head; the default
/// affine maps are the identity.
class DansePriorNet {
 public:
  static DansePriorNet create(Eigen::Index state_dim, Eigen::Index obs_dim, Eigen::Index hidden,
                              Rng& rng);
  static DansePriorNet from_checkpoint(const Checkpoint& ckpt);
  Checkpoint to_checkpoint() const;

  Eigen::Index state_dim() const { return m_; }
  Eigen::Index obs_dim() const { return n_; }
  Eigen::Index hidden_size() const { return gru_.hidden(); }

  /// Advances `hidden` with the previous observation (nullptr at t = 1) and
  /// returns the diagonal Gaussian prior over x_t.
  Gaussian prior(const Vector* y_prev, Vector& hidden) const;
  /// Tape version: returns {mean, variance, next hidden}.
  struct TapePrior {
    Var mean;
    Var var;
    Var hidden;
  };
  TapePrior prior(Tape& tape, const Vector* y_prev, Var hidden) const;

  ParamStore params;
  Vector input_shift;
  Vector input_gain;
  Vector output_shift;
  Vector output_scale;

  static constexpr double kMinVariance = 1e-6;
  static constexpr double kMaxVariance = 1e6;

 private:
  Vector gru_input(const Vector* y_prev) const;

  Eigen::Index m_ = 0;
  Eigen::Index n_ = 0;
  GruCell gru_;
  FcLayer mean_head_;
  FcLayer logvar_head_;
};

/// Kalman-style update of a (network) prior under the linear observation model.
Gaussian danse_posterior(const Gaussian& prior, const ObsModel& obs_model, const Vector& y);

/// Negative log marginal likelihood of one observation sequence,
/// sum_t -ln N(y_t; H mu_t, H Sigma_t H^T + R).
double danse_sequence_nll(const DansePriorNet& net, const ObsModel& obs_model,
                          const std::vector<Vector>& obs);

/// Posterior means/covariances (and priors) over a sequence. The optional
/// per-step H overrides obs_model.H at inference.
FilterOutput danse_filter(const DansePriorNet& net, const ObsModel& obs_model,
                          const std::vector<Vector>& obs,
                          const std::vector<Matrix>* per_step_H = nullptr);

struct TrainConfig {
  Eigen::Index hidden = 0;  // 0 selects 10 * (m + n)
  std::size_t epochs = 20;
  std::size_t batch = 8;
  std::size_t window = 30;
  double lr = 1e-3;
  double clip = 10.0;
  /// Fit the input/output affine maps to training-set statistics of H^+ y.
  bool standardize = true;
  double time_cap_seconds = 1800.0;
  std::uint64_t seed = 0;
};

struct TrainResult {
  DansePriorNet net;
  std::vector<double> train_loss;       // mean NLL per step, per epoch
  std::vector<double> validation_loss;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

TrainResult train_danse(const Dataset& train, const Dataset* validation,
                        const ObsModel& obs_model, const TrainConfig& cfg);

/// Mean per-step NLL over a dataset.
double mean_nll(const DansePriorNet& net, const ObsModel& obs_model, const Dataset& ds);

}  // namespace kfb::danse
