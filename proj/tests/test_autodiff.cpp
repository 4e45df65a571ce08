#include <doctest.h>

#include <cmath>

#include "kfbench/autodiff.hpp"
#include "kfbench/nn.hpp"
#include "oracles.hpp"

using namespace kfb;

namespace {

double max_rel_error(const Vector& a, const Vector& b) {
  double worst = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-3});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace

TEST_CASE("gradient of p^2 at 3") {
  ParamStore ps;
  const Slice p = ps.add("p", 1, 1, 0);
  ps.values[0] = 3.0;
  const auto r = gradient_of([&](Tape& t) {
    const Var v = t.param(p);
    return t.mul(v, v);
  }, ps);
  CHECK(r.loss == doctest::Approx(9.0));
  CHECK(r.grad[0] == doctest::Approx(6.0));
}

TEST_CASE("gradient of sum of squares of a linear map") {
  ParamStore ps;
  const Slice w = ps.add_weight("W", 2, 3);
  Rng rng(1);
  ps.initialize(rng);
  const Vector x = rng.normal_vector(3);
  const Vector target = rng.normal_vector(2);
  const auto r = gradient_of([&](Tape& t) {
    return t.squared_error(t.linear(w, t.constant(x)), target);
  }, ps);
  const Matrix W = ps.matrix(w);
  const Vector e = W * x - target;
  const Matrix expected = 2.0 * e * x.transpose();
  CHECK(r.loss == doctest::Approx(e.squaredNorm()));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) CHECK(r.grad[i * 3 + j] == doctest::Approx(expected(i, j)));
}

TEST_CASE("gradient of tanh and sigmoid match their derivatives") {
  ParamStore ps;
  const Slice p = ps.add("p", 5, 1, 0);
  Rng rng(2);
  for (Eigen::Index i = 0; i < 5; ++i) ps.values[i] = rng.normal();
  const auto r = gradient_of([&](Tape& t) {
    const Var v = t.param(p);
    const Var s = t.add(t.tanh(v), t.sigmoid(v));
    return t.sum(std::vector<Var>{t.slice(s, 0, 1), t.slice(s, 1, 1), t.slice(s, 2, 1),
                                  t.slice(s, 3, 1), t.slice(s, 4, 1)});
  }, ps);
  for (Eigen::Index i = 0; i < 5; ++i) {
    const double x = ps.values[i];
    const double sg = 1.0 / (1.0 + std::exp(-x));
    const double expected = 1.0 - std::tanh(x) * std::tanh(x) + sg * (1.0 - sg);
    CHECK(std::abs(r.grad[i] - expected) < 1e-12);
  }
}

TEST_CASE("non-finite loss is reported") {
  ParamStore ps;
  const Slice p = ps.add("p", 1, 1, 0);
  ps.values[0] = 1000.0;
  try {
    gradient_of([&](Tape& t) { return t.exp(t.param(p)); }, ps);
    FAIL("expected NonFiniteLoss");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NonFiniteLoss);
  }
}

TEST_CASE("two-layer network gradient matches finite differences") {
  ParamStore ps;
  const FcLayer l1 = FcLayer::create(ps, "l1", 4, 6);
  const FcLayer l2 = FcLayer::create(ps, "l2", 6, 2);
  Rng rng(3);
  ps.initialize(rng);
  for (Eigen::Index i = 0; i < ps.size(); ++i) ps.values[i] += 0.1 * rng.normal();
  const Vector x = rng.normal_vector(4), target = rng.normal_vector(2);
  const auto loss = [&](Tape& t) {
    const Var h = fc_forward(t, l1, t.constant(x), Activation::Tanh);
    return t.squared_error(fc_forward(t, l2, h, Activation::Identity), target);
  };
  const auto r = gradient_of(loss, ps);
  const Vector fd = finite_difference_gradient(
      [&](const ParamStore& p) {
        Tape t(p);
        return t.scalar(loss(t));
      },
      ps);
  CHECK(max_rel_error(r.grad, fd) <= 1e-5);
}

TEST_CASE("fc_forward closed forms") {
  ParamStore ps;
  const FcLayer l = FcLayer::create(ps, "fc", 2, 2);
  ps.matrix(l.weight) = RowMatrix::Identity(2, 2);
  ps.segment(l.bias).setZero();
  const Vector x = (Vector(2) << -1.0, 2.0).finished();
  CHECK(fc_forward(ps, l, x, Activation::Identity) == x);
  CHECK(fc_forward(ps, l, x, Activation::Relu) == (Vector(2) << 0.0, 2.0).finished());
  ps.matrix(l.weight).setZero();
  ps.segment(l.bias) = (Vector(2) << 0.5, -3.0).finished();
  CHECK(fc_forward(ps, l, x, Activation::Identity) == (Vector(2) << 0.5, -3.0).finished());
  CHECK_THROWS_AS(fc_forward(ps, l, Vector::Zero(3), Activation::Identity), Error);
}

TEST_CASE("GRU with zero weights halves the hidden state") {
  ParamStore ps;
  const GruCell cell = GruCell::create(ps, "gru", 3, 4);
  const Vector h = (Vector(4) << 1.0, -2.0, 0.5, 4.0).finished();
  CHECK((gru_step(ps, cell, Vector::Ones(3), h) - 0.5 * h).norm() < 1e-15);
  CHECK(gru_step(ps, cell, Vector::Ones(3), Vector::Zero(4)).norm() == 0.0);
  CHECK_THROWS_AS(gru_step(ps, cell, Vector::Ones(2), h), Error);
}

TEST_CASE("GRU gradient matches finite differences and the plain path") {
  ParamStore ps;
  const GruCell cell = GruCell::create(ps, "gru", 3, 5);
  Rng rng(4);
  ps.initialize(rng);
  for (Eigen::Index i = 0; i < ps.size(); ++i) ps.values[i] += 0.2 * rng.normal();
  const Vector x = rng.normal_vector(3), h = rng.normal_vector(5);
  const auto loss = [&](Tape& t) {
    return t.squared_error(gru_step(t, cell, t.constant(x), t.constant(h)), Vector::Zero(5));
  };
  const auto r = gradient_of(loss, ps);
  CHECK(r.loss == doctest::Approx(gru_step(ps, cell, x, h).squaredNorm()).epsilon(1e-14));
  const Vector fd = finite_difference_gradient(
      [&](const ParamStore& p) { return gru_step(p, cell, x, h).squaredNorm(); }, ps);
  CHECK(max_rel_error(r.grad, fd) <= 1e-5);
}

TEST_CASE("Tape node gradients: gain_apply, map, gaussian_nll") {
  Rng rng(5);
  const Vector k0 = rng.normal_vector(6), v0 = rng.normal_vector(2), y = rng.normal_vector(2);
  const Matrix H = (Matrix(2, 3) << 1, 0, 0.5, 0, 1, -1).finished();
  const Matrix R = Matrix::Identity(2, 2) * 0.3;
  const auto run = [&](const Vector& z, Vector* grad) {
    ParamStore ps;
    Tape t(ps);
    const Var kz = t.constant(z.head(6));
    const Var vz = t.constant(z.segment(6, 2));
    const Var mean = t.gain_apply(kz, vz, 3, 2);
    const Var var = t.add_const(t.exp(t.slice(kz, 0, 3)), Vector::Constant(3, 0.1));
    const Matrix jac = Matrix::Identity(3, 3) * 2.0;
    const Var mapped = t.map(mean, 2.0 * t.value(mean), jac);
    const Var loss = t.gaussian_nll(mapped, var, H, R, y);
    const double value = t.backward(loss);
    if (grad) {
      grad->resize(8);
      *grad << t.grad(kz), t.grad(vz);
    }
    return value;
  };
  Vector z(8);
  z << k0, v0;
  Vector grad;
  run(z, &grad);
  const Vector fd = oracle::fd_gradient([&](const Vector& p) { return run(p, nullptr); }, z);
  CHECK(max_rel_error(grad, fd) <= 1e-5);
}

TEST_CASE("Adam step behaviour") {
  ParamStore ps;
  ps.add("p", 3, 1, 0);
  ps.values << 1.0, -2.0, 0.5;
  AdamState st = AdamState::for_params(ps, 0.1);
  const Vector before = ps.values;
  adam_step(st, ps, Vector::Zero(3));
  CHECK(ps.values == before);

  AdamState st2 = AdamState::for_params(ps, 0.1);
  const Vector g = (Vector(3) << 4.0, -0.5, 1e-3).finished();
  adam_step(st2, ps, g);
  for (int i = 0; i < 3; ++i) {
    const double expected = -0.1 * g[i] / (std::abs(g[i]) + 1e-8);
    CHECK(ps.values[i] - before[i] == doctest::Approx(expected).epsilon(1e-6));
  }
}

TEST_CASE("Adam runs are reproducible") {
  const auto run = [] {
    ParamStore ps;
    const FcLayer l = FcLayer::create(ps, "fc", 2, 1);
    Rng rng(6);
    ps.initialize(rng);
    AdamState st = AdamState::for_params(ps, 0.01);
    for (int i = 0; i < 20; ++i) {
      const Vector x = rng.normal_vector(2);
      const auto r = gradient_of([&](Tape& t) {
        return t.squared_error(fc_forward(t, l, t.constant(x), Activation::Identity),
                               Vector::Constant(1, x.sum()));
      }, ps);
      adam_step(st, ps, r.grad);
    }
    return ps.values;
  };
  CHECK(run() == run());
}

TEST_CASE("gradient clipping") {
  Vector g = (Vector(2) << 30.0, 40.0).finished();
  clip_grad_norm(g, 10.0);
  CHECK(g.norm() == doctest::Approx(10.0));
  Vector small = (Vector(2) << 0.3, 0.4).finished();
  clip_grad_norm(small, 10.0);
  CHECK(small.norm() == doctest::Approx(0.5));
}

TEST_CASE("parameter initialization bounds") {
  ParamStore ps;
  const Slice w = ps.add_weight("W", 10, 16);
  const Slice b = ps.add_bias("b", 10);
  Rng rng(7);
  ps.initialize(rng);
  CHECK(ps.matrix(w).cwiseAbs().maxCoeff() <= 0.25);
  CHECK(ps.segment(b).isZero());
  CHECK(ps.layout().size() == 2);
  CHECK_THROWS_AS(ps.slice("missing"), Error);
}

TEST_CASE("checkpoint roundtrip") {
  Checkpoint c;
  c.method = "knet";
  FcLayer::create(c.params, "fc", 3, 2);
  Rng rng(8);
  c.params.initialize(rng);
  c.meta = {{"seed", 8}, {"epochs", 2}, {"config_hash", "abc"}};
  c.arch = {{"m", 2}};
  const auto path = std::filesystem::temp_directory_path() / "kfbench_ckpt.json";
  save_checkpoint(path, c);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.method == "knet");
  CHECK(back.params.values == c.params.values);
  CHECK(back.params.slice("fc.W").rows == 2);
  CHECK(back.meta == c.meta);
  CHECK(back.arch == c.arch);
  std::filesystem::remove(path);
}
