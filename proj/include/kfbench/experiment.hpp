#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kfbench/autodiff.hpp"
#include "kfbench/metrics.hpp"
#include "kfbench/ssm.hpp"

namespace kfb {

/// Data-generating model plus split sizes.
struct BenchmarkSpec {
  std::string model = "lorenz";  // lorenz | linear
  std::size_t seq_len = 3000;
  std::size_t train_sequences = 80;
  std::size_t val_sequences = 10;
  std::size_t test_sequences = 10;
  double r2 = 1.0;
  double q2 = 0.0;
  // lorenz
  double dt_fine = 1e-5;
  std::size_t decimation = 2000;
  double init_mean = 1.0;
  double init_var = 1.0;
  int taylor_order = 5;
  double filter_q2 = 0.1;
  // linear (Q and R taken from the matrices, init from init_mean/init_var)
  std::optional<LinearModel> linear;
};

struct MethodSpec {
  std::string name = "ekf";  // noise|kf|ekf|pf|knet|danse|apbm|apbm-online
  nlohmann::json params = nlohmann::json::object();
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  BenchmarkSpec benchmark;
  MethodSpec method;
  std::optional<std::filesystem::path> train_data;
  std::optional<std::filesystem::path> val_data;
  std::optional<std::filesystem::path> test_data;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> report;
  bool timing = false;
  /// Canonical form the config hash is computed from.
  nlohmann::json canonical = nlohmann::json::object();
};

/// Parses and validates a config document. The KFBENCH_SEED environment
/// variable, when set, replaces "seed". Throws ConfigError.
ExperimentConfig parse_experiment_config(const nlohmann::json& j, bool use_env = true);
ExperimentConfig load_experiment_config(const std::filesystem::path& path, bool use_env = true);

bool method_needs_training(const std::string& method);

enum class Split : std::uint64_t { Train = 1, Validation = 2, Test = 3 };

/// `count` sequences of the benchmark model; sequence i uses
/// derive_seed(derive_seed(seed, split), i).
Dataset generate_split(const BenchmarkSpec& spec, std::uint64_t seed, Split split,
                       std::size_t count);

/// Filter-side model for the benchmark. For Lorenz, `dt` is taken from the
/// data and process noise from the method override "q2" if present.
NonlinearModel benchmark_filter_model(const BenchmarkSpec& spec, const MethodSpec& method,
                                      double dt);

Checkpoint train_method(const ExperimentConfig& cfg, const Dataset& train,
                        const Dataset* validation);

/// State estimates for every trajectory of `test`.
std::vector<StateSequence> estimate_states(const ExperimentConfig& cfg, const Dataset& test,
                                           const Checkpoint* checkpoint);

MetricReport evaluate_method(const ExperimentConfig& cfg, const Dataset& test,
                             const Checkpoint* checkpoint);

/// Generates or loads data, trains when needed and no checkpoint is given,
/// evaluates on the test split and writes the report if a path is set.
MetricReport run_experiment(const ExperimentConfig& cfg);

}  // namespace kfb
