#include "kfbench/danse.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace kfb::danse {

using nlohmann::json;

void ObsModel::validate() const {
  require_same_dim(R.rows(), H.rows(), "R rows vs H rows");
  require_same_dim(R.cols(), H.rows(), "R cols vs H rows");
  Eigen::FullPivLU<Matrix> lu(H);
  if (lu.rank() < H.cols()) {
    throw Error(Errc::RankDeficientH, "observation matrix must have full column rank");
  }
  psd_llt(R);
}

DansePriorNet DansePriorNet::create(Eigen::Index state_dim, Eigen::Index obs_dim,
                                    Eigen::Index hidden, Rng& rng) {
  DansePriorNet net;
  net.m_ = state_dim;
  net.n_ = obs_dim;
  if (hidden <= 0) hidden = 10 * (state_dim + obs_dim);
  net.gru_ = GruCell::create(net.params, "gru", obs_dim, hidden);
  net.mean_head_ = FcLayer::create(net.params, "mean", hidden, state_dim);
  net.logvar_head_ = FcLayer::create(net.params, "logvar", hidden, state_dim);
  net.params.initialize(rng);
  net.input_shift = Vector::Zero(obs_dim);
  net.input_gain = Vector::Ones(obs_dim);
  net.output_shift = Vector::Zero(state_dim);
  net.output_scale = Vector::Ones(state_dim);
  return net;
}

DansePriorNet DansePriorNet::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.method != "danse") {
    throw Error(Errc::SchemaError, "checkpoint method is '" + ckpt.method + "', expected danse");
  }
  DansePriorNet net;
  try {
    net.m_ = ckpt.arch.at("m").get<Eigen::Index>();
    net.n_ = ckpt.arch.at("n").get<Eigen::Index>();
    net.params = ckpt.params;
    net.gru_ = GruCell::bind(net.params, "gru");
    net.mean_head_ = FcLayer::bind(net.params, "mean");
    net.logvar_head_ = FcLayer::bind(net.params, "logvar");
    net.input_shift = vector_from_json(ckpt.arch.at("input_shift"));
    net.input_gain = vector_from_json(ckpt.arch.at("input_gain"));
    net.output_shift = vector_from_json(ckpt.arch.at("output_shift"));
    net.output_scale = vector_from_json(ckpt.arch.at("output_scale"));
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaError, std::string("danse checkpoint: ") + e.what());
  }
  require_same_dim(net.input_shift.size(), net.n_, "danse input_shift");
  require_same_dim(net.input_gain.size(), net.n_, "danse input_gain");
  require_same_dim(net.output_shift.size(), net.m_, "danse output_shift");
  require_same_dim(net.output_scale.size(), net.m_, "danse output_scale");
  require_same_dim(net.mean_head_.out(), net.m_, "danse mean head");
  return net;
}

Checkpoint DansePriorNet::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.method = "danse";
  ckpt.params = params;
  ckpt.arch = {{"m", m_},
               {"n", n_},
               {"hidden", hidden_size()},
               {"input_shift", vector_to_json(input_shift)},
               {"input_gain", vector_to_json(input_gain)},
               {"output_shift", vector_to_json(output_shift)},
               {"output_scale", vector_to_json(output_scale)}};
  return ckpt;
}

Vector DansePriorNet::gru_input(const Vector* y_prev) const {
  if (!y_prev) return Vector::Zero(n_);
  require_same_dim(y_prev->size(), n_, "danse observation");
  return (*y_prev - input_shift).cwiseProduct(input_gain);
}

Gaussian DansePriorNet::prior(const Vector* y_prev, Vector& hidden) const {
  hidden = gru_step(params, gru_, gru_input(y_prev), hidden);
  Gaussian g;
  g.mean = output_shift + output_scale.cwiseProduct(
                              fc_forward(params, mean_head_, hidden, Activation::Identity));
  const Vector logvar = fc_forward(params, logvar_head_, hidden, Activation::Identity);
  const Vector var = (output_scale.array().square() * logvar.array().exp())
                         .max(kMinVariance)
                         .min(kMaxVariance)
                         .matrix();
  g.cov = var.asDiagonal();
  if (!g.mean.allFinite() || !var.allFinite()) {
    throw Error(Errc::NonFinitePrior, "network prior is not finite");
  }
  return g;
}

DansePriorNet::TapePrior DansePriorNet::prior(Tape& tape, const Vector* y_prev,
                                              Var hidden) const {
  const Var x = tape.constant(gru_input(y_prev));
  const Var h = gru_step(tape, gru_, x, hidden);
  const Var mean = tape.add_const(
      tape.mul_const(fc_forward(tape, mean_head_, h, Activation::Identity), output_scale),
      output_shift);
  const Var var = tape.clamp(
      tape.mul_const(tape.exp(fc_forward(tape, logvar_head_, h, Activation::Identity)),
                     output_scale.cwiseAbs2()),
      kMinVariance, kMaxVariance);
  if (!tape.value(mean).allFinite() || !tape.value(var).allFinite()) {
    throw Error(Errc::NonFinitePrior, "network prior is not finite");
  }
  return {mean, var, h};
}

Gaussian danse_posterior(const Gaussian& prior, const ObsModel& obs_model, const Vector& y) {
  require_same_dim(prior.mean.size(), obs_model.state_dim(), "danse prior");
  return kalman_update(prior, obs_model.H * prior.mean, obs_model.H, obs_model.R, y).posterior;
}

double danse_sequence_nll(const DansePriorNet& net, const ObsModel& obs_model,
                          const std::vector<Vector>& obs) {
  Vector hidden = Vector::Zero(net.hidden_size());
  double nll = 0.0;
  for (std::size_t t = 0; t < obs.size(); ++t) {
    const Gaussian p = net.prior(t ? &obs[t - 1] : nullptr, hidden);
    const Gaussian marginal{obs_model.H * p.mean,
                            symmetrize(obs_model.H * p.cov * obs_model.H.transpose() +
                                       obs_model.R)};
    nll -= log_pdf(marginal, obs[t]);
  }
  return nll;
}

FilterOutput danse_filter(const DansePriorNet& net, const ObsModel& obs_model,
                          const std::vector<Vector>& obs, const std::vector<Matrix>* per_step_H) {
  if (per_step_H) require_same_dim(per_step_H->size(), obs.size(), "per-step H count");
  FilterOutput out;
  Vector hidden = Vector::Zero(net.hidden_size());
  ObsModel step_model = obs_model;
  for (std::size_t t = 0; t < obs.size(); ++t) {
    const Gaussian p = net.prior(t ? &obs[t - 1] : nullptr, hidden);
    if (per_step_H) step_model.H = (*per_step_H)[t];
    UpdateResult u = kalman_update(p, step_model.H * p.mean, step_model.H, step_model.R, obs[t]);
    out.means.push_back(std::move(u.posterior.mean));
    out.covs.push_back(std::move(u.posterior.cov));
    out.gains.push_back(std::move(u.gain));
    out.innovations.push_back(std::move(u.innovation));
    out.prior_means.push_back(p.mean);
    out.prior_covs.push_back(p.cov);
  }
  return out;
}

double mean_nll(const DansePriorNet& net, const ObsModel& obs_model, const Dataset& ds) {
  double total = 0.0;
  std::size_t steps = 0;
  for (const auto& traj : ds.trajectories) {
    total += danse_sequence_nll(net, obs_model, traj.obs);
    steps += traj.length();
  }
  return steps ? total / static_cast<double>(steps) : 0.0;
}

namespace {

void fit_standardization(DansePriorNet& net, const ObsModel& obs_model, const Dataset& ds) {
  const Eigen::Index n = obs_model.obs_dim();
  const Eigen::Index m = obs_model.state_dim();
  const Matrix pinv = obs_model.H.completeOrthogonalDecomposition().pseudoInverse();
  Vector y_sum = Vector::Zero(n), y_sq = Vector::Zero(n);
  Vector x_sum = Vector::Zero(m), x_sq = Vector::Zero(m);
  double count = 0.0;
  for (const auto& traj : ds.trajectories) {
    for (const auto& y : traj.obs) {
      const Vector x = pinv * y;
      y_sum += y;
      y_sq += y.cwiseAbs2();
      x_sum += x;
      x_sq += x.cwiseAbs2();
      count += 1.0;
    }
  }
  if (count < 2.0) return;
  const auto stddev = [count](const Vector& sum, const Vector& sq) -> Vector {
    const Vector mean = sum / count;
    return (sq / count - mean.cwiseAbs2()).cwiseMax(1e-12).cwiseSqrt();
  };
  net.input_shift = y_sum / count;
  net.input_gain = stddev(y_sum, y_sq).cwiseInverse();
  net.output_shift = x_sum / count;
  net.output_scale = stddev(x_sum, x_sq);
}

struct Cursor {
  const Trajectory* traj = nullptr;
  std::size_t t = 0;
  Vector hidden;
};

}  // namespace

TrainResult train_danse(const Dataset& train_set, const Dataset* validation,
                        const ObsModel& obs_model, const TrainConfig& cfg) {
  if (train_set.empty()) throw Error(Errc::EmptyInput, "training set is empty");
  obs_model.validate();
  if (validation && validation->empty()) validation = nullptr;
  Rng rng(cfg.seed);
  TrainResult result{
      DansePriorNet::create(obs_model.state_dim(), obs_model.obs_dim(), cfg.hidden, rng),
      {}, {}, 0, 0};
  DansePriorNet& net = result.net;
  if (cfg.standardize) fit_standardization(net, obs_model, train_set);
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
  DansePriorNet best_net = net;
  bool out_of_time = false;

  for (std::size_t epoch = 0; epoch < cfg.epochs && !out_of_time; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.next_u64() % i]);
    }
    double epoch_loss = 0.0;
    std::size_t epoch_terms = 0;
    for (std::size_t b0 = 0; b0 < order.size() && !out_of_time; b0 += batch) {
      std::vector<Cursor> cursors;
      for (std::size_t b = b0; b < std::min(b0 + batch, order.size()); ++b) {
        cursors.push_back({&train_set.trajectories[order[b]], 0,
                           Vector::Zero(net.hidden_size())});
      }
      bool active = true;
      while (active) {
        active = false;
        Tape tape(net.params);
        std::vector<Var> terms;
        for (auto& cur : cursors) {
          const auto& obs = cur.traj->obs;
          if (cur.t >= obs.size()) continue;
          const std::size_t end = std::min(cur.t + window, obs.size());
          Var hidden = tape.constant(cur.hidden);
          for (std::size_t t = cur.t; t < end; ++t) {
            const auto p = net.prior(tape, t ? &obs[t - 1] : nullptr, hidden);
            terms.push_back(tape.gaussian_nll(p.mean, p.var, obs_model.H, obs_model.R, obs[t]));
            hidden = p.hidden;
          }
          cur.t = end;
          cur.hidden = tape.value(hidden);
          active = active || cur.t < obs.size();
        }
        if (terms.empty()) continue;
        const Var total = tape.scale(tape.sum(terms), 1.0 / static_cast<double>(terms.size()));
        const double loss = tape.backward(total);
        Vector grad = tape.param_grad();
        if (!std::isfinite(loss) || !grad.allFinite()) {
          throw Error(Errc::NonFiniteLoss, "DANSE training loss is not finite");
        }
        clip_grad_norm(grad, cfg.clip);
        adam_step(adam, net.params, grad);
        epoch_loss += loss * static_cast<double>(terms.size());
        epoch_terms += terms.size();
        if (elapsed() > cfg.time_cap_seconds) {
          out_of_time = true;
          break;
        }
      }
    }
    result.train_loss.push_back(epoch_terms ? epoch_loss / static_cast<double>(epoch_terms) : 0.0);
    ++result.epochs_run;
    const double score =
        validation ? mean_nll(net, obs_model, *validation) : result.train_loss.back();
    if (validation) result.validation_loss.push_back(score);
    if (std::isfinite(score) && score <= best) {
      best = score;
      best_net = net;
      result.best_epoch = epoch;
    }
  }
  if (std::isfinite(best)) result.net = std::move(best_net);
  return result;
}

}  // namespace kfb::danse
