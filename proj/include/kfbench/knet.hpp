#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "kfbench/filters.hpp"
#include "kfbench/nn.hpp"
#include "kfbench/ssm.hpp"

namespace kfb::knet {

/// Per-coordinate running RMS of the gain-network input features.
struct FeatureScaler {
  Vector mean_square;
  long count = 0;
  double momentum = 0.99;

  explicit FeatureScaler(Eigen::Index dim = 0) : mean_square(Vector::Zero(dim)) {}

  void update(const Vector& features);
  /// 1 / RMS (bias-corrected); ones before the first update.
  Vector inverse_scale() const;
};

/// FC(relu) -> GRU -> FC producing an m x n gain (row-major) from
/// [obs_diff; state_diff].
class KGainNet {
 public:
  static KGainNet create(Eigen::Index state_dim, Eigen::Index obs_dim, Eigen::Index hidden,
                         Rng& rng);
  static KGainNet from_checkpoint(const Checkpoint& ckpt);
  Checkpoint to_checkpoint() const;

  Eigen::Index state_dim() const { return m_; }
  Eigen::Index obs_dim() const { return n_; }
  Eigen::Index hidden_size() const { return gru_.hidden(); }

  /// Plain evaluation: returns the gain and advances `hidden`.
  Matrix gain(const Vector& normalized_features, Vector& hidden) const;
  /// Tape evaluation: returns the flattened gain and the next hidden state.
  std::pair<Var, Var> gain(Tape& tape, Var normalized_features, Var hidden) const;

  ParamStore params;
  FeatureScaler scaler;

 private:
  Eigen::Index m_ = 0;
  Eigen::Index n_ = 0;
  FcLayer input_;
  GruCell gru_;
  FcLayer output_;
};

/// Filter state carried between steps.
struct KnetState {
  Vector posterior;       // x_{t-1}
  Vector prior;           // x_{t-1|t-2}
  Vector hidden;
  bool started = false;

  static KnetState initial(const NonlinearModel& model, const KGainNet& net);
};

struct KnetStep {
  Vector posterior;        // x_t
  Matrix gain;             // K_t
  Vector predicted_obs;    // y_{t|t-1}
  Vector prior;            // x_{t|t-1}
};

/// One step of the learned-gain EKF: first moments only,
/// x_t = f(x_{t-1}) + K_t (y_t - h(f(x_{t-1}))).
KnetStep knet_step(const NonlinearModel& model, const KGainNet& net, KnetState& state,
                   const Vector& y);

/// Runs knet_step over a whole sequence. covs is left empty.
FilterOutput knet_filter(const NonlinearModel& model, const KGainNet& net,
                         const std::vector<Vector>& obs);

/// Prior and posterior error covariances implied by a gain:
///   Sigma_{t|t-1} = (I - K H)^{-1} K R H (H^T H)^{-1},
///   Sigma_t       = (I - K H) Sigma_{t|t-1}.
/// Throws RankDeficientH if H^T H is singular and SingularUpdate if I - K H is.
std::pair<Matrix, Matrix> extract_uncertainty(const Matrix& gain, const Matrix& H,
                                              const Matrix& R);

struct TrainConfig {
  Eigen::Index hidden = 0;  // 0 selects 10 * (m + n)
  std::size_t epochs = 20;
  std::size_t batch = 8;
  std::size_t window = 30;
  double lr = 1e-3;
  double clip = 10.0;
  /// Multiply the learning rate by lr_decay after `patience` epochs without
  /// a validation improvement; patience 0 keeps it fixed.
  std::size_t patience = 0;
  double lr_decay = 0.5;
  /// A batch whose estimates go non-finite is rolled back and skipped, and
  /// the learning rate is multiplied by lr_decay. After this many rollbacks
  /// the next divergence throws NonFiniteLoss.
  std::size_t max_recoveries = 3;
  bool squared_loss = true;
  double time_cap_seconds = 1800.0;
  std::uint64_t seed = 0;
};

struct TrainResult {
  KGainNet net;
  std::vector<double> train_loss;       // mean per epoch
  std::vector<double> validation_loss;  // per epoch (empty without validation data)
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::size_t recoveries = 0;
};

/// Minimizes the mean squared state error over a labelled dataset.
TrainResult train_supervised(const NonlinearModel& model, const Dataset& train,
                             const Dataset* validation, const TrainConfig& cfg);

/// Minimizes the mean squared next-observation prediction error
/// ||h(f(x_t)) - y_{t+1}||^2 over observation-only sequences.
TrainResult train_unsupervised(const NonlinearModel& model, const Dataset& train,
                               const Dataset* validation, const TrainConfig& cfg);

/// Mean per-step state error of the filter over a labelled dataset.
double supervised_loss(const NonlinearModel& model, const KGainNet& net, const Dataset& ds,
                       bool squared = true);
/// Mean per-term next-observation prediction error.
double unsupervised_loss(const NonlinearModel& model, const KGainNet& net, const Dataset& ds,
                         bool squared = true);

}  // namespace kfb::knet
