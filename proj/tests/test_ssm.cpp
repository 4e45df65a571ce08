#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "kfbench/dataset.hpp"
#include "kfbench/lorenz.hpp"
#include "kfbench/ssm.hpp"

using namespace kfb;

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

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("kfbench_" + name);
}

}  // namespace

TEST_CASE("noise-free identity model stays constant") {
  LinearModel m;
  m.F = Matrix::Identity(2, 2);
  m.H = Matrix::Identity(2, 2);
  m.Q = Matrix::Zero(2, 2);
  m.R = Matrix::Zero(2, 2);
  const Vector c = (Vector(2) << 3.0, -1.5).finished();
  m.init = {c, Matrix::Zero(2, 2)};
  Rng rng(1);
  const Trajectory t = simulate(m, 20, rng);
  REQUIRE(t.length() == 20);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK((*t.states)[i] == c);
    CHECK(t.obs[i] == c);
  }
}

TEST_CASE("AR(1) stationary variance") {
  const LinearModel m = scalar_model(0.9, 1.0, 1.0, 1.0);
  Rng rng(3);
  const Trajectory t = simulate(m, 100000, rng);
  double s = 0, s2 = 0;
  for (std::size_t i = 1000; i < t.length(); ++i) {
    const double v = (*t.states)[i][0];
    s += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(t.length() - 1000);
  const double var = s2 / n - (s / n) * (s / n);
  CHECK(std::abs(var - 1.0 / 0.19) / (1.0 / 0.19) < 0.05);
}

TEST_CASE("simulation is deterministic per seed") {
  const LinearModel m = scalar_model(0.5, 1.0, 2.0, 0.1);
  Rng a(17), b(17);
  const Trajectory ta = simulate(m, 50, a), tb = simulate(m, 50, b);
  CHECK(ta.obs == tb.obs);
  CHECK(*ta.states == *tb.states);
}

TEST_CASE("ensemble mean follows F-power propagation") {
  LinearModel m;
  m.F = (Matrix(2, 2) << 0.9, 0.2, -0.1, 0.8).finished();
  m.H = Matrix::Identity(2, 2);
  m.Q = Matrix::Identity(2, 2) * 0.5;
  m.R = Matrix::Identity(2, 2);
  m.init = {(Vector(2) << 5.0, -3.0).finished(), Matrix::Identity(2, 2)};
  const int T = 5, runs = 10000;
  Vector sum = Vector::Zero(2), sq = Vector::Zero(2);
  for (int r = 0; r < runs; ++r) {
    Rng rng(derive_seed(99, r));
    const Vector x = simulate(m, T, rng).states->back();
    sum += x;
    sq += x.cwiseAbs2();
  }
  Vector expected = m.init.mean;
  for (int t = 0; t < T; ++t) expected = m.F * expected;
  const Vector mean = sum / runs;
  const Vector se = ((sq / runs - mean.cwiseAbs2()) / runs).cwiseSqrt();
  for (int i = 0; i < 2; ++i) CHECK(std::abs(mean[i] - expected[i]) < 3.0 * se[i]);
}

TEST_CASE("simulate rejects an invalid noise covariance") {
  LinearModel m = scalar_model(1.0, -1.0, 1.0, 1.0);
  Rng rng(1);
  CHECK_THROWS_AS(simulate(m, 3, rng), Error);
}

TEST_CASE("lorenz generator: step, noiseless observations, determinism") {
  lorenz::GeneratorConfig cfg;
  cfg.steps = 50;
  Rng rng(1);
  const Trajectory t = lorenz::generate(cfg, rng);
  CHECK(t.dt == doctest::Approx(0.02));
  CHECK(t.length() == 50);

  lorenz::GeneratorConfig clean = cfg;
  clean.r2 = 0.0;
  clean.decimation = 1;
  clean.dt_fine = 1e-3;
  Rng a(4), b(4);
  const Trajectory ta = lorenz::generate(clean, a), tb = lorenz::generate(clean, b);
  CHECK(ta.obs == *ta.states);
  CHECK(*ta.states == *tb.states);
}

TEST_CASE("lorenz Taylor Jacobian matches finite differences") {
  const Vector x = (Vector(3) << 3.0, -4.0, 20.0).finished();
  const Matrix analytic = lorenz::taylor_jacobian(x, 0.02, 5);
  const Matrix numeric =
      numeric_jacobian([](const Vector& v) { return lorenz::taylor_step(v, 0.02, 5); }, x);
  CHECK((analytic - numeric).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("lorenz Taylor step approximates the flow over one coarse step") {
  lorenz::GeneratorConfig cfg;
  cfg.steps = 2;
  cfg.r2 = 0.0;
  Rng rng(2);
  const Trajectory t = lorenz::generate(cfg, rng);
  const Vector pred = lorenz::taylor_step((*t.states)[0], 0.02, 5);
  CHECK((pred - (*t.states)[1]).norm() < 0.1 * (*t.states)[1].norm());
}

TEST_CASE("dataset roundtrip is the identity") {
  const auto path = temp_file("roundtrip.ndjson");
  Dataset empty;
  save_dataset(path, empty);
  CHECK(load_dataset(path).empty());

  Dataset ds;
  Trajectory t;
  t.id = "seq-1";
  t.dt = 0.02;
  t.obs = {(Vector(2) << 0.1, 1.0 / 3.0).finished(), (Vector(2) << -1e-300, 2.5e10).finished(),
           (Vector(2) << std::nextafter(1.0, 2.0), -0.0).finished()};
  t.states = std::vector<Vector>{Vector::Constant(3, M_PI), Vector::Constant(3, 1e-17),
                                 Vector::Constant(3, -7.0)};
  ds.trajectories.push_back(t);
  Trajectory u = t;
  u.id = "seq-2";
  u.states.reset();
  ds.trajectories.push_back(u);
  save_dataset(path, ds);
  const Dataset back = load_dataset(path);
  REQUIRE(back.size() == 2);
  CHECK(back.trajectories[0].id == "seq-1");
  CHECK(back.trajectories[0].dt == t.dt);
  CHECK(back.trajectories[0].obs == t.obs);
  CHECK(*back.trajectories[0].states == *t.states);
  CHECK_FALSE(back.trajectories[1].states.has_value());
  CHECK_FALSE(back.supervised());
  std::filesystem::remove(path);
}

TEST_CASE("dataset loader rejects malformed lines") {
  const auto path = temp_file("bad.ndjson");
  const auto expect_schema = [&](const std::string& line) {
    std::ofstream(path) << line << '\n';
    try {
      load_dataset(path);
      FAIL("expected SchemaError for " << line);
    } catch (const Error& e) {
      CHECK(e.code() == Errc::SchemaError);
    }
  };
  expect_schema(R"({"id": "a", "dt": 1.0})");
  expect_schema(R"({"id": "a", "dt": 1.0, "obs": [[1, 2], [3]]})");
  expect_schema(R"({"id": "a", "dt": 1.0, "obs": [[1]], "states": [[1], [2]]})");
  expect_schema("not json");
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_dataset(temp_file("does_not_exist.ndjson")), Error);
}
