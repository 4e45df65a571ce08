#include <doctest.h>

#include <cmath>

#include "kfbench/filters.hpp"
#include "kfbench/knet.hpp"
#include "oracles.hpp"

using namespace kfb;
using namespace kfb::knet;

namespace {

LinearModel scalar_model(double F, double Q, double H, double R) {
  LinearModel m;
  m.F = Matrix::Constant(1, 1, F);
  m.H = Matrix::Constant(1, 1, H);
  m.Q = Matrix::Constant(1, 1, Q);
  m.R = Matrix::Constant(1, 1, R);
  m.init = {Vector::Zero(1), Matrix::Identity(1, 1)};
  return m;
}

// Net whose output is the constant gain `k` regardless of its input.
KGainNet constant_gain_net(const Matrix& k) {
  Rng rng(1);
  KGainNet net = KGainNet::create(k.rows(), k.cols(), 8, rng);
  net.params.segment(net.params.slice("out.W")).setZero();
  const RowMatrix flat = k;
  net.params.segment(net.params.slice("out.b")) =
      Eigen::Map<const Vector>(flat.data(), flat.size());
  return net;
}

}  // namespace

TEST_CASE("steady-state gain reproduces the steady-state KF") {
  LinearModel m = scalar_model(1, 1, 1, 1);
  const double k = oracle::scalar_steady_gain(1, 1, 1, 1);
  m.init.cov = Matrix::Constant(1, 1, k);  // posterior variance equals the gain here
  Rng rng(2);
  const Trajectory t = simulate(m, 200, rng);
  const FilterOutput kf = kf_filter(m, t.obs);
  const FilterOutput kn =
      knet_filter(NonlinearModel::from_linear(m), constant_gain_net(Matrix::Constant(1, 1, k)),
                  t.obs);
  for (std::size_t i = 0; i < t.length(); ++i) {
    CHECK(std::abs(kf.means[i][0] - kn.means[i][0]) < 1e-8);
  }
}

TEST_CASE("zero gain is open-loop prediction, identity gain follows observations") {
  LinearModel m;
  m.F = (Matrix(2, 2) << 0.9, 0.1, -0.2, 0.8).finished();
  m.H = Matrix::Identity(2, 2);
  m.Q = Matrix::Identity(2, 2);
  m.R = Matrix::Identity(2, 2);
  m.init = {(Vector(2) << 1.0, 2.0).finished(), Matrix::Identity(2, 2)};
  const NonlinearModel nm = NonlinearModel::from_linear(m);
  Rng rng(3);
  const Trajectory t = simulate(m, 30, rng);

  const FilterOutput open = knet_filter(nm, constant_gain_net(Matrix::Zero(2, 2)), t.obs);
  Vector x = m.init.mean;
  for (std::size_t i = 0; i < 30; ++i) {
    x = m.F * x;
    CHECK((open.means[i] - x).norm() < 1e-12);
  }
  const FilterOutput trust = knet_filter(nm, constant_gain_net(Matrix::Identity(2, 2)), t.obs);
  for (std::size_t i = 0; i < 30; ++i) CHECK((trust.means[i] - t.obs[i]).norm() < 1e-12);
}

TEST_CASE("knet update is affine in the innovation for any gain") {
  const LinearModel m = scalar_model(0.7, 1, 2, 1);
  const NonlinearModel nm = NonlinearModel::from_linear(m);
  Rng rng(4);
  KGainNet net = KGainNet::create(1, 1, 6, rng);
  net.params.initialize(rng);  // random output layer
  const Trajectory t = simulate(m, 40, rng);
  KnetState state = KnetState::initial(nm, net);
  for (const auto& y : t.obs) {
    const KnetStep s = knet_step(nm, net, state, y);
    CHECK((s.posterior - s.prior - s.gain * (y - s.predicted_obs)).norm() < 1e-12);
  }
}

TEST_CASE("extract_uncertainty recovers KF covariances from analytic gains") {
  Rng rng(5);
  LinearModel m;
  m.F = (Matrix(2, 2) << 0.9, 0.3, -0.2, 0.7).finished();
  m.H = (Matrix(3, 2) << 1, 0, 0, 1, 1, 1).finished();
  m.Q = Matrix::Identity(2, 2) * 0.4;
  m.R = Matrix::Identity(3, 3) * 0.7;
  m.R(0, 1) = m.R(1, 0) = 0.1;
  m.init = {Vector::Zero(2), Matrix::Identity(2, 2)};
  const FilterOutput kf = kf_filter(m, simulate(m, 30, rng).obs);
  for (std::size_t t = 0; t < 30; ++t) {
    const auto [prior, post] = extract_uncertainty(kf.gains[t], m.H, m.R);
    CHECK((prior - kf.prior_covs[t]).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((post - kf.covs[t]).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("extract_uncertainty edge cases") {
  const auto [prior, post] =
      extract_uncertainty(Matrix::Zero(2, 2), Matrix::Identity(2, 2), Matrix::Identity(2, 2));
  CHECK(prior.isZero());
  CHECK(post.isZero());

  const Matrix H = (Matrix(1, 2) << 1, 1).finished();
  try {
    extract_uncertainty(Matrix::Zero(2, 1), H, Matrix::Identity(1, 1));
    FAIL("expected RankDeficientH");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::RankDeficientH);
  }
  try {
    extract_uncertainty(Matrix::Identity(2, 2), Matrix::Identity(2, 2), Matrix::Identity(2, 2));
    FAIL("expected SingularUpdate");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::SingularUpdate);
  }
}

TEST_CASE("KGainNet tape gradient matches finite differences") {
  Rng rng(6);
  KGainNet net = KGainNet::create(3, 2, 7, rng);
  net.params.initialize(rng);
  for (Eigen::Index i = 0; i < net.params.size(); ++i) net.params.values[i] += 0.1 * rng.normal();
  const Vector f1 = rng.normal_vector(5), f2 = rng.normal_vector(5), v = rng.normal_vector(2);
  const Vector target = rng.normal_vector(3);
  const auto loss = [&](Tape& t) {
    Var h = t.constant(Vector::Zero(net.hidden_size()));
    auto [k1, h1] = net.gain(t, t.constant(f1), h);
    auto [k2, h2] = net.gain(t, t.constant(f2), h1);
    const Var x = t.add(t.gain_apply(k1, t.constant(v), 3, 2), t.gain_apply(k2, t.constant(v), 3, 2));
    return t.squared_error(x, target);
  };
  const auto r = gradient_of(loss, net.params);
  const Vector fd = finite_difference_gradient(
      [&](const ParamStore& p) {
        Tape t(p);
        return t.scalar(loss(t));
      },
      net.params);
  double worst = 0;
  for (Eigen::Index i = 0; i < fd.size(); ++i) {
    worst = std::max(worst, std::abs(r.grad[i] - fd[i]) /
                                std::max({std::abs(fd[i]), std::abs(r.grad[i]), 1e-3}));
  }
  CHECK(worst <= 1e-5);

  // Plain and tape paths agree.
  Vector hidden = Vector::Zero(net.hidden_size());
  const Matrix k = net.gain(f1, hidden);
  Tape t(net.params);
  auto [kt, ht] = net.gain(t, t.constant(f1), t.constant(Vector::Zero(net.hidden_size())));
  const RowMatrix kr = k;
  CHECK((Eigen::Map<const Vector>(kr.data(), kr.size()) - t.value(kt)).norm() < 1e-14);
  CHECK((t.value(ht) - hidden).norm() < 1e-14);
}

TEST_CASE("supervised training drives a noiseless identity system to zero loss") {
  LinearModel m = scalar_model(1, 0, 1, 0);
  m.init = {Vector::Zero(1), Matrix::Zero(1, 1)};
  Dataset ds;
  for (int i = 0; i < 8; ++i) {
    Trajectory t;
    t.id = std::to_string(i);
    const double c = 0.5 * (i + 1);
    t.obs.assign(20, Vector::Constant(1, c));
    t.states = t.obs;
    ds.trajectories.push_back(t);
  }
  const NonlinearModel nm = NonlinearModel::from_linear(m);
  TrainConfig cfg;
  cfg.hidden = 8;
  cfg.epochs = 60;
  cfg.batch = 4;
  cfg.window = 10;
  cfg.lr = 1e-2;
  const TrainResult r = train_supervised(nm, ds, nullptr, cfg);
  REQUIRE(r.train_loss.size() == 60);
  CHECK(r.train_loss.back() < 0.05 * r.train_loss.front());
  CHECK(supervised_loss(nm, r.net, ds) < 0.05 * r.train_loss.front());
}

TEST_CASE("diverging batches are rolled back until the budget runs out") {
  const NonlinearModel nm = NonlinearModel::from_linear(scalar_model(1, 1, 1, 1));
  Dataset ds;
  Rng rng(5);
  for (int i = 0; i < 4; ++i) {
    Trajectory t;
    std::vector<Vector> states;
    for (int k = 0; k < 300; ++k) {
      states.push_back(Vector::Constant(1, rng.normal()));
      t.obs.push_back(states.back() + Vector::Constant(1, rng.normal()));
    }
    t.states = states;
    ds.trajectories.push_back(t);
  }
  TrainConfig cfg;
  cfg.hidden = 8;
  cfg.epochs = 3;
  cfg.batch = 4;
  cfg.window = 100;
  cfg.lr = 1e4;  // first update makes the gain huge
  cfg.max_recoveries = 0;
  try {
    train_supervised(nm, ds, nullptr, cfg);
    FAIL("expected NonFiniteLoss");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NonFiniteLoss);
  }

  cfg.max_recoveries = 3;
  cfg.lr_decay = 1e-9;
  const TrainResult r = train_supervised(nm, ds, nullptr, cfg);
  CHECK(r.recoveries >= 1);
  CHECK(r.recoveries <= 3);
  CHECK(r.epochs_run == 3);
  CHECK(r.net.params.values.allFinite());
  CHECK(std::isfinite(supervised_loss(nm, r.net, ds)));
}

TEST_CASE("unsupervised loss on one length-2 trajectory has one term") {
  const LinearModel m = scalar_model(0.5, 1, 1, 1);
  const NonlinearModel nm = NonlinearModel::from_linear(m);
  Dataset ds;
  Trajectory t;
  t.obs = {Vector::Constant(1, 1.0), Vector::Constant(1, 2.0)};
  ds.trajectories.push_back(t);
  TrainConfig cfg;
  cfg.epochs = 2;
  const TrainResult r = train_unsupervised(nm, ds, nullptr, cfg);
  CHECK(r.epochs_run == 2);
  // K = 0 at initialization: x_1 = 0, prediction h(f(0)) = 0, error 2^2.
  Rng rng(0);
  KGainNet fresh = KGainNet::create(1, 1, 0, rng);
  CHECK(unsupervised_loss(nm, fresh, ds) == doctest::Approx(4.0));
}

TEST_CASE("supervised training needs labels") {
  const NonlinearModel nm = NonlinearModel::from_linear(scalar_model(0.5, 1, 1, 1));
  Dataset ds;
  Trajectory t;
  t.obs = {Vector::Constant(1, 1.0)};
  ds.trajectories.push_back(t);
  CHECK_THROWS_AS(train_supervised(nm, ds, nullptr, {}), Error);
}

TEST_CASE("KGainNet checkpoint roundtrip") {
  Rng rng(7);
  KGainNet net = KGainNet::create(3, 3, 0, rng);
  CHECK(net.hidden_size() == 60);
  net.scaler.update(Vector::Ones(6));
  const KGainNet back = KGainNet::from_checkpoint(net.to_checkpoint());
  CHECK(back.params.values == net.params.values);
  CHECK(back.scaler.inverse_scale() == net.scaler.inverse_scale());
  Checkpoint wrong = net.to_checkpoint();
  wrong.method = "danse";
  CHECK_THROWS_AS(KGainNet::from_checkpoint(wrong), Error);
}
