#include "kfbench/apbm.hpp"

#include <chrono>
#include <memory>
#include <string>

namespace kfb::apbm {

using nlohmann::json;

Regularization regularization_from_string(std::string_view name) {
  if (name == "full") return Regularization::Full;
  if (name == "mixing_only") return Regularization::MixingOnly;
  throw Error(Errc::ConfigError, "unknown APBM regularization '" + std::string(name) + "'");
}

const char* to_string(Regularization mode) {
  return mode == Regularization::Full ? "full" : "mixing_only";
}

ApbmModel ApbmModel::create(NonlinearModel pbm, Eigen::Index hidden, Rng& rng) {
  if (hidden < 1) throw Error(Errc::ConfigError, "APBM hidden size must be positive");
  ApbmModel model;
  const Eigen::Index m = pbm.state_dim();
  model.pbm = std::move(pbm);
  model.params.add("mix", 2, 1, 0);
  FcLayer::create(model.params, "g1", m, hidden);
  FcLayer::create(model.params, "g2", hidden, m);
  model.params.initialize(rng);
  model.params.values[0] = 1.0;
  model.params.values[1] = 0.0;
  model.theta_bar = model.params.values;
  return model;
}

namespace {

void check_theta(const ApbmModel& model, const Vector& theta) {
  require_same_dim(theta.size(), model.param_dim(), "APBM parameter vector");
}

}  // namespace

Vector ApbmModel::g(const Vector& x, const Vector& theta) const {
  check_theta(*this, theta);
  require_same_dim(x.size(), state_dim(), "APBM state");
  ParamStore p = params;
  p.values = theta;
  const Vector a = fc_forward(p, FcLayer::bind(p, "g1"), x, Activation::Tanh);
  return fc_forward(p, FcLayer::bind(p, "g2"), a, Activation::Identity);
}

Vector apbm_transition(const ApbmModel& model, const Vector& x, const Vector& theta) {
  Vector out = theta[0] * model.pbm.f(x) + theta[1] * model.g(x, theta);
  if (!out.allFinite()) throw Error(Errc::NonFiniteState, "APBM transition is not finite");
  return out;
}

TransitionLinearization linearize_transition(const ApbmModel& model, const Vector& x,
                                             const Vector& theta) {
  check_theta(model, theta);
  require_same_dim(x.size(), model.state_dim(), "APBM state");
  const Eigen::Index m = model.state_dim();
  ParamStore p = model.params;
  p.values = theta;
  Tape tape(p);
  const Var xv = tape.constant(x);
  const Var a = fc_forward(tape, FcLayer::bind(p, "g1"), xv, Activation::Tanh);
  const Var gv = fc_forward(tape, FcLayer::bind(p, "g2"), a, Activation::Identity);
  const Vector g = tape.value(gv);

  Matrix jg_x(m, m);
  Matrix jg_theta(m, theta.size());
  for (Eigen::Index i = 0; i < m; ++i) {
    tape.zero_grad();
    tape.backward(gv, Vector::Unit(m, i));
    jg_x.row(i) = tape.grad(xv).transpose();
    jg_theta.row(i) = tape.param_grad().transpose();
  }

  const Vector fx = model.pbm.f(x);
  TransitionLinearization lin;
  lin.value = theta[0] * fx + theta[1] * g;
  lin.jx = theta[0] * model.pbm.f_jacobian(x) + theta[1] * jg_x;
  lin.jtheta = theta[1] * jg_theta;
  lin.jtheta.col(0) = fx;
  lin.jtheta.col(1) = g;
  if (!lin.value.allFinite() || !all_finite(lin.jx) || !all_finite(lin.jtheta)) {
    throw Error(Errc::NonFiniteState, "APBM transition is not finite");
  }
  return lin;
}

AugmentedBelief AugmentedBelief::initial(const ApbmModel& model, const Vector& theta,
                                         const Matrix& theta_cov) {
  check_theta(model, theta);
  const Eigen::Index m = model.state_dim();
  const Eigen::Index d = model.param_dim();
  require_same_dim(theta_cov.rows(), d, "APBM parameter covariance");
  AugmentedBelief b;
  b.mean.resize(m + d);
  b.mean << model.pbm.init.mean, theta;
  b.cov = Matrix::Zero(m + d, m + d);
  b.cov.topLeftCorner(m, m) = model.pbm.init.cov;
  b.cov.bottomRightCorner(d, d) = theta_cov;
  return b;
}

AugmentedBelief apbm_predict(const ApbmModel& model, const AugmentedBelief& belief) {
  const Eigen::Index m = model.state_dim();
  const Eigen::Index d = model.param_dim();
  require_same_dim(belief.mean.size(), m + d, "augmented belief");
  const Vector x = belief.mean.head(m);
  const Vector theta = belief.mean.tail(d);
  const TransitionLinearization lin = linearize_transition(model, x, theta);

  // F_aug = [[Jx, Jtheta], [0, I]] applied blockwise.
  const auto pxx = belief.cov.topLeftCorner(m, m);
  const auto pxt = belief.cov.topRightCorner(m, d);
  const auto ptt = belief.cov.bottomRightCorner(d, d);
  const Matrix cross = lin.jx * pxt + lin.jtheta * ptt;  // new P_{x,theta}
  const Matrix jx_pxt_jt = lin.jx * pxt * lin.jtheta.transpose();

  AugmentedBelief prior;
  prior.mean.resize(m + d);
  prior.mean << lin.value, theta;
  prior.cov.resize(m + d, m + d);
  prior.cov.topLeftCorner(m, m) =
      symmetrize(lin.jx * pxx * lin.jx.transpose() + jx_pxt_jt + jx_pxt_jt.transpose() +
                 lin.jtheta * ptt * lin.jtheta.transpose() + model.pbm.Q);
  prior.cov.topRightCorner(m, d) = cross;
  prior.cov.bottomLeftCorner(d, m) = cross.transpose();
  prior.cov.bottomRightCorner(d, d) = ptt;
  prior.cov.bottomRightCorner(d, d).diagonal().array() += model.q_theta;
  return prior;
}

AugmentedBelief apbm_update(const ApbmModel& model, const AugmentedBelief& prior,
                            const Vector& y) {
  const Eigen::Index m = model.state_dim();
  const Eigen::Index d = model.param_dim();
  const Eigen::Index dim = m + d;
  AugmentedBelief post = prior;

  // Observation y_t = h(x_t) + w_t. The x-block goes through the same
  // Joseph-form update as the plain EKF.
  {
    const Vector x = prior.mean.head(m);
    const Matrix H = model.pbm.h_jacobian(x);
    const Gaussian px{x, prior.cov.topLeftCorner(m, m)};
    const UpdateResult upd = kalman_update(px, model.pbm.h(x), H, model.pbm.R, y);
    const Matrix S = symmetrize(H * px.cov * H.transpose() + model.pbm.R);
    const auto llt = psd_llt(S);
    const Matrix ptx = prior.cov.bottomLeftCorner(d, m);
    const Matrix k_theta = llt.solve(H * ptx.transpose()).transpose();  // d x n
    post.mean.head(m) = upd.posterior.mean;
    post.mean.tail(d) += k_theta * upd.innovation;
    post.cov.topLeftCorner(m, m) = upd.posterior.cov;
    const Matrix cross = ptx - k_theta * S * upd.gain.transpose();  // d x m
    post.cov.bottomLeftCorner(d, m) = cross;
    post.cov.topRightCorner(m, d) = cross.transpose();
    post.cov.bottomRightCorner(d, d) =
        symmetrize(prior.cov.bottomRightCorner(d, d) - k_theta * S * k_theta.transpose());
  }

  // Pseudo-observation theta_bar = theta + u, u ~ N(0, eta^{-1} I).
  if (model.eta > 0.0) {
    const Eigen::Index k = model.mode == Regularization::Full ? d : 2;
    const Matrix p_cols = post.cov.middleCols(m, k);  // dim x k
    Matrix S = post.cov.block(m, m, k, k);
    S.diagonal().array() += 1.0 / model.eta;
    const auto llt = psd_llt(symmetrize(S));
    const Matrix gain = llt.solve(p_cols.transpose()).transpose();  // dim x k
    const Vector resid = model.theta_bar.head(k) - post.mean.segment(m, k);
    post.mean += gain * resid;
    post.cov = symmetrize(post.cov - gain * p_cols.transpose());
  }
  require_same_dim(post.mean.size(), dim, "augmented belief");
  if (!post.mean.allFinite() || !all_finite(post.cov)) {
    throw Error(Errc::NonFiniteState, "augmented belief is not finite");
  }
  return post;
}

AugmentedBelief apbm_augmented_step(const ApbmModel& model, const AugmentedBelief& belief,
                                    const Vector& y) {
  return apbm_update(model, apbm_predict(model, belief), y);
}

OfflineResult train_apbm_offline(const ApbmModel& model, const Dataset& ds,
                                 const OfflineConfig& cfg) {
  const Eigen::Index d = model.param_dim();
  OfflineResult result;
  result.theta = model.theta_bar;
  result.theta_cov = Matrix::Identity(d, d) * cfg.theta_init_var;
  if (cfg.epochs > 0 && ds.empty()) throw Error(Errc::EmptyInput, "training set is empty");

  const auto start = std::chrono::steady_clock::now();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& traj : ds.trajectories) {
      AugmentedBelief belief = AugmentedBelief::initial(model, result.theta, result.theta_cov);
      for (const auto& y : traj.obs) belief = apbm_augmented_step(model, belief, y);
      result.theta = belief.mean.tail(d);
      result.theta_cov = belief.cov.bottomRightCorner(d, d);
      ++result.sequences_seen;
      const double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (elapsed > cfg.time_cap_seconds) {
        result.epochs_run = epoch + 1;
        return result;
      }
    }
    result.epochs_run = epoch + 1;
  }
  return result;
}

NonlinearModel fixed_theta_model(const ApbmModel& model, const Vector& theta) {
  check_theta(model, theta);
  NonlinearModel out = model.pbm;
  // Copy so the returned closures do not outlive `model`.
  auto owned = std::make_shared<const ApbmModel>(model);
  out.f = [owned, theta](const Vector& x) { return apbm_transition(*owned, x, theta); };
  out.jac_f = [owned, theta](const Vector& x) {
    return linearize_transition(*owned, x, theta).jx;
  };
  return out;
}

OnlineResult run_apbm_online(const ApbmModel& model, const std::vector<Vector>& obs,
                             const AugmentedBelief& init) {
  const Eigen::Index m = model.state_dim();
  const Eigen::Index d = model.param_dim();
  OnlineResult res;
  AugmentedBelief belief = init;
  for (const auto& y : obs) {
    belief = apbm_augmented_step(model, belief, y);
    res.states.means.push_back(belief.mean.head(m));
    res.states.covs.push_back(belief.cov.topLeftCorner(m, m));
    res.theta_trace.push_back(belief.mean.tail(d));
  }
  return res;
}

Checkpoint to_checkpoint(const ApbmModel& model, const OfflineResult& result) {
  Checkpoint ckpt;
  ckpt.method = "apbm";
  ckpt.params = model.params;
  ckpt.params.values = result.theta;
  ckpt.arch = {{"m", model.state_dim()},
               {"hidden", model.hidden_size()},
               {"eta", model.eta},
               {"q_theta", model.q_theta},
               {"regularization", to_string(model.mode)},
               {"theta_bar", vector_to_json(model.theta_bar)},
               {"theta_var", vector_to_json(result.theta_cov.diagonal())}};
  return ckpt;
}

ApbmModel from_checkpoint(const Checkpoint& ckpt, NonlinearModel pbm, Vector& theta) {
  if (ckpt.method != "apbm") {
    throw Error(Errc::SchemaError, "checkpoint method is '" + ckpt.method + "', expected apbm");
  }
  ApbmModel model;
  try {
    require_same_dim(ckpt.arch.at("m").get<Eigen::Index>(), pbm.state_dim(),
                     "APBM checkpoint state dim");
    model.pbm = std::move(pbm);
    model.params = ckpt.params;
    model.theta_bar = vector_from_json(ckpt.arch.at("theta_bar"));
    model.eta = ckpt.arch.at("eta").get<double>();
    model.q_theta = ckpt.arch.at("q_theta").get<double>();
    model.mode = regularization_from_string(ckpt.arch.at("regularization").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaError, std::string("apbm checkpoint: ") + e.what());
  }
  if (!model.params.has("mix") || !model.params.has("g1.W") || !model.params.has("g2.W")) {
    throw Error(Errc::SchemaError, "apbm checkpoint is missing parameter slices");
  }
  require_same_dim(model.theta_bar.size(), model.params.size(), "APBM nominal parameters");
  theta = ckpt.params.values;
  return model;
}

}  // namespace kfb::apbm
