#include "kfbench/knet.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

namespace kfb::knet {

using nlohmann::json;

void FeatureScaler::update(const Vector& features) {
  ++count;
  mean_square = momentum * mean_square + (1.0 - momentum) * features.cwiseAbs2();
}

Vector FeatureScaler::inverse_scale() const {
  if (count == 0) return Vector::Ones(mean_square.size());
  const double correction = 1.0 - std::pow(momentum, static_cast<double>(count));
  return ((mean_square.array() / correction).sqrt() + 1e-6).inverse().matrix();
}

KGainNet KGainNet::create(Eigen::Index state_dim, Eigen::Index obs_dim, Eigen::Index hidden,
                          Rng& rng) {
  KGainNet net;
  net.m_ = state_dim;
  net.n_ = obs_dim;
  if (hidden <= 0) hidden = 10 * (state_dim + obs_dim);
  const Eigen::Index features = state_dim + obs_dim;
  net.input_ = FcLayer::create(net.params, "in", features, hidden);
  net.gru_ = GruCell::create(net.params, "gru", hidden, hidden);
  net.output_ = FcLayer::create(net.params, "out", hidden, state_dim * obs_dim);
  net.params.initialize(rng);
  // Start from K = 0 (open-loop prediction); random gains make chaotic
  // models leave the region where the Taylor map is usable.
  net.params.segment(net.output_.weight).setZero();
  net.scaler = FeatureScaler(features);
  return net;
}

KGainNet KGainNet::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.method != "knet") {
    throw Error(Errc::SchemaError, "checkpoint method is '" + ckpt.method + "', expected knet");
  }
  KGainNet net;
  try {
    net.m_ = ckpt.arch.at("m").get<Eigen::Index>();
    net.n_ = ckpt.arch.at("n").get<Eigen::Index>();
    net.params = ckpt.params;
    net.input_ = FcLayer::bind(net.params, "in");
    net.gru_ = GruCell::bind(net.params, "gru");
    net.output_ = FcLayer::bind(net.params, "out");
    net.scaler = FeatureScaler(net.m_ + net.n_);
    net.scaler.mean_square = vector_from_json(ckpt.arch.at("feature_mean_square"));
    net.scaler.count = ckpt.arch.at("feature_count").get<long>();
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaError, std::string("knet checkpoint: ") + e.what());
  }
  require_same_dim(net.output_.out(), net.m_ * net.n_, "knet output layer");
  return net;
}

Checkpoint KGainNet::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.method = "knet";
  ckpt.params = params;
  ckpt.arch = {{"m", m_},
               {"n", n_},
               {"hidden", hidden_size()},
               {"feature_mean_square", vector_to_json(scaler.mean_square)},
               {"feature_count", scaler.count}};
  return ckpt;
}

Matrix KGainNet::gain(const Vector& normalized_features, Vector& hidden) const {
  const Vector a = fc_forward(params, input_, normalized_features, Activation::Relu);
  hidden = gru_step(params, gru_, a, hidden);
  const Vector k = fc_forward(params, output_, hidden, Activation::Identity);
  return Eigen::Map<const RowMatrix>(k.data(), m_, n_);
}

std::pair<Var, Var> KGainNet::gain(Tape& tape, Var normalized_features, Var hidden) const {
  const Var a = fc_forward(tape, input_, normalized_features, Activation::Relu);
  const Var h = gru_step(tape, gru_, a, hidden);
  return {fc_forward(tape, output_, h, Activation::Identity), h};
}

KnetState KnetState::initial(const NonlinearModel& model, const KGainNet& net) {
  KnetState s;
  s.posterior = model.init.mean;
  s.prior = model.init.mean;
  s.hidden = Vector::Zero(net.hidden_size());
  return s;
}

namespace {

Vector features_of(const Vector& obs_diff, const Vector& state_diff) {
  Vector f(obs_diff.size() + state_diff.size());
  f << obs_diff, state_diff;
  return f;
}

}  // namespace

KnetStep knet_step(const NonlinearModel& model, const KGainNet& net, KnetState& state,
                   const Vector& y) {
  require_same_dim(y.size(), net.obs_dim(), "knet observation");
  KnetStep step;
  step.prior = model.f(state.posterior);
  step.predicted_obs = model.h(step.prior);
  const Vector obs_diff = y - step.predicted_obs;
  const Vector state_diff =
      state.started ? Vector(state.posterior - state.prior) : Vector::Zero(net.state_dim());
  const Vector feats =
      features_of(obs_diff, state_diff).cwiseProduct(net.scaler.inverse_scale());
  step.gain = net.gain(feats, state.hidden);
  step.posterior = step.prior + step.gain * obs_diff;
  if (!step.posterior.allFinite()) {
    throw Error(Errc::NonFiniteEstimate, "learned-gain estimate is not finite");
  }
  state.prior = step.prior;
  state.posterior = step.posterior;
  state.started = true;
  return step;
}

FilterOutput knet_filter(const NonlinearModel& model, const KGainNet& net,
                         const std::vector<Vector>& obs) {
  FilterOutput out;
  KnetState state = KnetState::initial(model, net);
  for (const auto& y : obs) {
    KnetStep step = knet_step(model, net, state, y);
    out.innovations.push_back(y - step.predicted_obs);
    out.prior_means.push_back(std::move(step.prior));
    out.means.push_back(std::move(step.posterior));
    out.gains.push_back(std::move(step.gain));
  }
  return out;
}

std::pair<Matrix, Matrix> extract_uncertainty(const Matrix& gain, const Matrix& H,
                                              const Matrix& R) {
  require_same_dim(gain.rows(), H.cols(), "gain rows vs state dim");
  require_same_dim(gain.cols(), H.rows(), "gain cols vs obs dim");
  require_same_dim(R.rows(), H.rows(), "R vs obs dim");
  const Eigen::Index m = H.cols();
  const Matrix hth = H.transpose() * H;
  Eigen::FullPivLU<Matrix> hth_lu(hth);
  hth_lu.setThreshold(1e-12);
  if (H.rows() < m || hth_lu.rank() < m) {
    throw Error(Errc::RankDeficientH, "H^T H is not invertible");
  }
  const Matrix ikh = Matrix::Identity(m, m) - gain * H;
  Eigen::FullPivLU<Matrix> ikh_lu(ikh);
  ikh_lu.setThreshold(1e-12);
  if (!ikh_lu.isInvertible()) {
    throw Error(Errc::SingularUpdate, "I - K H is singular");
  }
  const Matrix h_tilde = hth_lu.inverse();
  const Matrix prior = symmetrize(ikh_lu.solve(gain * R * H * h_tilde));
  const Matrix post = symmetrize(ikh * prior);
  return {prior, post};
}

// ---------------------------------------------------------------------------
// Training

namespace {

enum class Objective { Supervised, Unsupervised };

struct SequenceCursor {
  const Trajectory* traj = nullptr;
  std::size_t t = 0;
  Vector posterior;  // x_{t-1}
  Vector prior;      // x_{t-1|t-2}
  Vector hidden;
  bool started = false;
};

double term(Tape& tape, Var estimate, const Vector& target, bool squared,
            std::vector<Var>& terms) {
  const Var e = squared ? tape.squared_error(estimate, target) : tape.norm_error(estimate, target);
  terms.push_back(e);
  return tape.scalar(e);
}

// Advances one cursor through up to `window` steps on the tape, appending loss
// terms. Returns the number of terms added.
std::size_t unroll(Tape& tape, const NonlinearModel& model, KGainNet& net,
                   SequenceCursor& cur, std::size_t window, Objective objective,
                   bool squared, std::vector<Var>& terms) {
  const auto& obs = cur.traj->obs;
  const std::size_t end = std::min(cur.t + window, obs.size());
  const std::size_t before = terms.size();

  Var posterior = tape.constant(cur.posterior);
  Var prev_prior = tape.constant(cur.prior);
  Var hidden = tape.constant(cur.hidden);
  Var prior = tape.map(posterior, model.f(cur.posterior), model.f_jacobian(cur.posterior));
  const Vector inv_scale = net.scaler.inverse_scale();

  for (std::size_t t = cur.t; t < end; ++t) {
    const Vector& y = obs[t];
    const Vector& prior_value = tape.value(prior);
    const Var y_pred = tape.map(prior, model.h(prior_value), model.h_jacobian(prior_value));
    const Var obs_diff = tape.add_const(tape.scale(y_pred, -1.0), y);
    const Var state_diff = cur.started ? tape.sub(posterior, prev_prior)
                                       : tape.constant(Vector::Zero(net.state_dim()));
    const Var raw = tape.concat(obs_diff, state_diff);
    net.scaler.update(tape.value(raw));
    const Var feats = tape.mul_const(raw, inv_scale);
    const auto [k, h_next] = net.gain(tape, feats, hidden);
    const Var new_posterior =
        tape.add(prior, tape.gain_apply(k, obs_diff, net.state_dim(), net.obs_dim()));
    if (!tape.value(new_posterior).allFinite()) {
      throw Error(Errc::NonFiniteLoss, "learned-gain estimate diverged during training");
    }

    const Vector& post_value = tape.value(new_posterior);
    const Var next_prior = tape.map(new_posterior, model.f(post_value), model.f_jacobian(post_value));
    if (objective == Objective::Supervised) {
      term(tape, new_posterior, (*cur.traj->states)[t], squared, terms);
    } else if (t + 1 < obs.size()) {
      const Vector& np = tape.value(next_prior);
      const Var next_obs = tape.map(next_prior, model.h(np), model.h_jacobian(np));
      term(tape, next_obs, obs[t + 1], squared, terms);
    }

    prev_prior = prior;
    posterior = new_posterior;
    prior = next_prior;
    hidden = h_next;
    cur.started = true;
  }
  cur.t = end;
  cur.posterior = tape.value(posterior);
  cur.prior = tape.value(prev_prior);
  cur.hidden = tape.value(hidden);
  return terms.size() - before;
}

double evaluate_loss(const NonlinearModel& model, const KGainNet& net, const Dataset& ds,
                     Objective objective, bool squared) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& traj : ds.trajectories) {
    KnetState state = KnetState::initial(model, net);
    for (std::size_t t = 0; t < traj.length(); ++t) {
      const KnetStep step = knet_step(model, net, state, traj.obs[t]);
      Vector err;
      if (objective == Objective::Supervised) {
        err = step.posterior - (*traj.states)[t];
      } else if (t + 1 < traj.length()) {
        err = model.h(model.f(step.posterior)) - traj.obs[t + 1];
      } else {
        continue;
      }
      total += squared ? err.squaredNorm() : err.norm();
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

TrainResult train(const NonlinearModel& model, const Dataset& train_set,
                  const Dataset* validation, const TrainConfig& cfg, Objective objective) {
  if (train_set.empty()) throw Error(Errc::EmptyInput, "training set is empty");
  if (objective == Objective::Supervised && !train_set.supervised()) {
    throw Error(Errc::InvalidArgument, "supervised training needs state labels");
  }
  if (validation && validation->empty()) validation = nullptr;
  if (objective == Objective::Supervised && validation && !validation->supervised()) {
    throw Error(Errc::InvalidArgument, "supervised validation needs state labels");
  }
  const Eigen::Index m = model.state_dim();
  const Eigen::Index n = model.obs_dim();
  Rng rng(cfg.seed);
  TrainResult result{KGainNet::create(m, n, cfg.hidden, rng), {}, {}, 0, 0};
  KGainNet& net = result.net;
  AdamState adam = AdamState::for_params(net.params, cfg.lr);

  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch);
  const std::size_t window = std::max<std::size_t>(1, cfg.window);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  KGainNet best_net = net;
  bool out_of_time = false;

  for (std::size_t epoch = 0; epoch < cfg.epochs && !out_of_time; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.next_u64() % i]);
    }
    double epoch_loss = 0.0;
    std::size_t epoch_terms = 0;
    for (std::size_t b0 = 0; b0 < order.size() && !out_of_time; b0 += batch) {
      std::vector<SequenceCursor> cursors;
      for (std::size_t b = b0; b < std::min(b0 + batch, order.size()); ++b) {
        SequenceCursor cur;
        cur.traj = &train_set.trajectories[order[b]];
        cur.posterior = model.init.mean;
        cur.prior = model.init.mean;
        cur.hidden = Vector::Zero(net.hidden_size());
        cursors.push_back(std::move(cur));
      }
      // Snapshot for rolling back a batch whose estimates diverge.
      const KGainNet batch_net = net;
      const AdamState batch_adam = adam;
      double batch_loss = 0.0;
      std::size_t batch_terms = 0;
      bool active = true;
      try {
      while (active) {
        active = false;
        Tape tape(net.params);
        std::vector<Var> terms;
        for (auto& cur : cursors) {
          if (cur.t >= cur.traj->length()) continue;
          unroll(tape, model, net, cur, window, objective, cfg.squared_loss, terms);
          active = active || cur.t < cur.traj->length();
        }
        if (terms.empty()) continue;
        const Var total = tape.scale(tape.sum(terms), 1.0 / static_cast<double>(terms.size()));
        const double loss = tape.backward(total);
        Vector grad = tape.param_grad();
        if (!std::isfinite(loss) || !grad.allFinite()) {
          throw Error(Errc::NonFiniteLoss, "learned-gain training loss is not finite");
        }
        clip_grad_norm(grad, cfg.clip);
        adam_step(adam, net.params, grad);
        batch_loss += loss * static_cast<double>(terms.size());
        batch_terms += terms.size();
        if (elapsed() > cfg.time_cap_seconds) {
          out_of_time = true;
          break;
        }
      }
      } catch (const Error& e) {
        if (e.code() != Errc::NonFiniteLoss || result.recoveries >= cfg.max_recoveries) throw;
        net = batch_net;
        adam = batch_adam;
        adam.lr *= cfg.lr_decay;
        ++result.recoveries;
        continue;
      }
      epoch_loss += batch_loss;
      epoch_terms += batch_terms;
    }
    result.train_loss.push_back(epoch_terms ? epoch_loss / static_cast<double>(epoch_terms) : 0.0);
    ++result.epochs_run;
    const double score =
        validation ? evaluate_loss(model, net, *validation, objective, cfg.squared_loss)
                   : result.train_loss.back();
    if (validation) result.validation_loss.push_back(score);
    if (std::isfinite(score) && score <= best) {
      best = score;
      best_net = net;
      result.best_epoch = epoch;
    } else if (cfg.patience > 0 && epoch - result.best_epoch >= cfg.patience &&
               (epoch - result.best_epoch) % cfg.patience == 0) {
      adam.lr *= cfg.lr_decay;
    }
  }
  if (result.epochs_run > 0 && std::isfinite(best)) result.net = std::move(best_net);
  return result;
}

}  // namespace

TrainResult train_supervised(const NonlinearModel& model, const Dataset& train_set,
                             const Dataset* validation, const TrainConfig& cfg) {
  return train(model, train_set, validation, cfg, Objective::Supervised);
}

TrainResult train_unsupervised(const NonlinearModel& model, const Dataset& train_set,
                               const Dataset* validation, const TrainConfig& cfg) {
  return train(model, train_set, validation, cfg, Objective::Unsupervised);
}

double supervised_loss(const NonlinearModel& model, const KGainNet& net, const Dataset& ds,
                       bool squared) {
  return evaluate_loss(model, net, ds, Objective::Supervised, squared);
}

double unsupervised_loss(const NonlinearModel& model, const KGainNet& net, const Dataset& ds,
                         bool squared) {
  return evaluate_loss(model, net, ds, Objective::Unsupervised, squared);
}

}  // namespace kfb::knet
