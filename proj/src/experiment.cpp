#include "kfbench/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "kfbench/apbm.hpp"
#include "kfbench/danse.hpp"
#include "kfbench/dataset.hpp"
#include "kfbench/filters.hpp"
#include "kfbench/knet.hpp"
#include "kfbench/lorenz.hpp"

namespace kfb {

using nlohmann::json;

namespace {

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(Errc::ConfigError, std::string("config field '") + key + "' has the wrong type");
  }
}

Matrix matrix_field(const json& obj, const char* key) {
  if (!obj.contains(key)) {
    throw Error(Errc::ConfigError, std::string("linear benchmark needs '") + key + "'");
  }
  const json& v = obj.at(key);
  try {
    if (v.is_number()) return Matrix::Constant(1, 1, v.get<double>());
    return matrix_from_json(v);
  } catch (const Error& e) {
    throw Error(Errc::ConfigError, std::string("config field '") + key + "': " + e.what());
  }
}

Vector vector_field(const json& obj, const char* key, Eigen::Index dim, double fallback) {
  if (!obj.contains(key)) return Vector::Constant(dim, fallback);
  const json& v = obj.at(key);
  if (v.is_number()) return Vector::Constant(dim, v.get<double>());
  Vector out;
  try {
    out = vector_from_json(v);
  } catch (const Error& e) {
    throw Error(Errc::ConfigError, std::string("config field '") + key + "': " + e.what());
  }
  if (out.size() != dim) {
    throw Error(Errc::ConfigError, std::string("config field '") + key + "' has wrong length");
  }
  return out;
}

std::optional<std::filesystem::path> path_field(const json& obj, const char* key) {
  const auto s = get_or<std::string>(obj, key, "");
  if (s.empty()) return std::nullopt;
  return std::filesystem::path(s);
}

BenchmarkSpec parse_benchmark(const json& b) {
  BenchmarkSpec s;
  s.model = get_or<std::string>(b, "model", s.model);
  s.seq_len = get_or<std::size_t>(b, "seq_len", s.seq_len);
  s.train_sequences = get_or<std::size_t>(b, "train_sequences", s.train_sequences);
  s.val_sequences = get_or<std::size_t>(b, "val_sequences", s.val_sequences);
  s.test_sequences = get_or<std::size_t>(b, "test_sequences", s.test_sequences);
  s.r2 = get_or<double>(b, "r2", s.r2);
  s.q2 = get_or<double>(b, "q2", s.q2);
  if (s.seq_len < 1) throw Error(Errc::ConfigError, "seq_len must be at least 1");
  if (s.r2 < 0.0 || s.q2 < 0.0) throw Error(Errc::ConfigError, "noise levels must be >= 0");
  if (s.model == "lorenz") {
    s.dt_fine = get_or<double>(b, "dt_fine", s.dt_fine);
    s.decimation = get_or<std::size_t>(b, "decimation", s.decimation);
    s.init_mean = get_or<double>(b, "init_mean", s.init_mean);
    s.init_var = get_or<double>(b, "init_var", s.init_var);
    s.taylor_order = get_or<int>(b, "taylor_order", s.taylor_order);
    s.filter_q2 = get_or<double>(b, "filter_q2", s.filter_q2);
    if (!(s.dt_fine > 0.0) || s.decimation < 1) {
      throw Error(Errc::ConfigError, "dt_fine must be > 0 and decimation >= 1");
    }
    if (s.taylor_order < 1) throw Error(Errc::ConfigError, "taylor_order must be >= 1");
  } else if (s.model == "linear") {
    LinearModel lm;
    lm.F = matrix_field(b, "F");
    lm.H = matrix_field(b, "H");
    lm.Q = matrix_field(b, "Q");
    lm.R = matrix_field(b, "R");
    const Eigen::Index m = lm.F.rows();
    lm.init.mean = vector_field(b, "init_mean", m, 0.0);
    lm.init.cov = Matrix::Identity(m, m) * get_or<double>(b, "init_var", 1.0);
    try {
      lm.validate();
    } catch (const Error& e) {
      throw Error(Errc::ConfigError, std::string("linear benchmark: ") + e.what());
    }
    s.linear = std::move(lm);
  } else {
    throw Error(Errc::ConfigError, "unknown benchmark model '" + s.model + "'");
  }
  return s;
}

const char* const kMethods[] = {"noise", "kf", "ekf", "pf", "knet", "danse", "apbm",
                                "apbm-online"};

}  // namespace

bool method_needs_training(const std::string& method) {
  return method == "knet" || method == "danse" || method == "apbm";
}

ExperimentConfig parse_experiment_config(const json& j, bool use_env) {
  if (!j.is_object()) throw Error(Errc::ConfigError, "config must be a JSON object");
  ExperimentConfig cfg;
  cfg.canonical = j;
  cfg.seed = get_or<std::uint64_t>(j, "seed", 0);
  if (use_env) {
    if (const char* env = std::getenv("KFBENCH_SEED"); env && *env) {
      char* end = nullptr;
      const unsigned long long v = std::strtoull(env, &end, 10);
      if (*end != '\0') throw Error(Errc::ConfigError, "KFBENCH_SEED is not an integer");
      cfg.seed = v;
    }
  }
  cfg.canonical["seed"] = cfg.seed;
  cfg.benchmark = parse_benchmark(j.value("benchmark", json::object()));

  const json method = j.value("method", json::object());
  if (method.is_string()) {
    cfg.method.name = method.get<std::string>();
  } else if (method.is_object()) {
    cfg.method.name = get_or<std::string>(method, "name", cfg.method.name);
    cfg.method.params = method;
    cfg.method.params.erase("name");
  } else {
    throw Error(Errc::ConfigError, "'method' must be a string or object");
  }
  bool known = false;
  for (const char* m : kMethods) known = known || cfg.method.name == m;
  if (!known) throw Error(Errc::ConfigError, "unknown method '" + cfg.method.name + "'");
  if (cfg.method.name == "kf" && cfg.benchmark.model != "linear") {
    throw Error(Errc::ConfigError, "method kf needs a linear benchmark model");
  }

  const json data = j.value("data", json::object());
  cfg.train_data = path_field(data, "train");
  cfg.val_data = path_field(data, "val");
  cfg.test_data = path_field(data, "test");
  cfg.checkpoint = path_field(j, "checkpoint");
  cfg.report = path_field(j, "report");
  cfg.timing = get_or<bool>(j, "timing", false);
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path, bool use_env) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot read config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, path.string() + ": " + e.what());
  }
  return parse_experiment_config(j, use_env);
}

Dataset generate_split(const BenchmarkSpec& spec, std::uint64_t seed, Split split,
                       std::size_t count) {
  static const char* const kNames[] = {"", "train", "val", "test"};
  const std::uint64_t split_seed = derive_seed(seed, static_cast<std::uint64_t>(split));
  Dataset ds;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(split_seed, i));
    Trajectory traj;
    if (spec.model == "lorenz") {
      lorenz::GeneratorConfig g;
      g.dt_fine = spec.dt_fine;
      g.decimation = spec.decimation;
      g.steps = spec.seq_len;
      g.r2 = spec.r2;
      g.q2 = spec.q2;
      g.init_mean = spec.init_mean;
      g.init_var = spec.init_var;
      traj = lorenz::generate(g, rng);
    } else {
      traj = simulate(*spec.linear, spec.seq_len, rng);
    }
    char id[32];
    std::snprintf(id, sizeof id, "%s-%04zu", kNames[static_cast<int>(split)], i);
    traj.id = id;
    ds.trajectories.push_back(std::move(traj));
  }
  return ds;
}

NonlinearModel benchmark_filter_model(const BenchmarkSpec& spec, const MethodSpec& method,
                                      double dt) {
  if (spec.model == "linear") {
    LinearModel lm = *spec.linear;
    if (method.params.contains("q2")) {
      lm.Q = Matrix::Identity(lm.F.rows(), lm.F.rows()) * get_or<double>(method.params, "q2", 0.0);
    }
    return NonlinearModel::from_linear(lm);
  }
  lorenz::FilterModelConfig f;
  f.dt = dt;
  f.taylor_order = spec.taylor_order;
  f.q2 = get_or<double>(method.params, "q2", spec.filter_q2);
  f.r2 = spec.r2;
  f.init_mean = spec.init_mean;
  f.init_var = spec.init_var;
  return lorenz::filter_model(f);
}

namespace {

double dataset_dt(const Dataset& ds) {
  return ds.empty() ? 0.02 : ds.trajectories.front().dt;
}

Dataset head(const Dataset& ds, std::size_t limit) {
  if (limit == 0 || limit >= ds.size()) return ds;
  Dataset out;
  out.trajectories.assign(ds.trajectories.begin(),
                          ds.trajectories.begin() + static_cast<std::ptrdiff_t>(limit));
  return out;
}

knet::TrainConfig knet_config(const json& p, std::uint64_t seed) {
  knet::TrainConfig c;
  c.hidden = get_or<Eigen::Index>(p, "hidden", c.hidden);
  c.epochs = get_or<std::size_t>(p, "epochs", c.epochs);
  c.batch = get_or<std::size_t>(p, "batch", c.batch);
  c.window = get_or<std::size_t>(p, "window", c.window);
  c.lr = get_or<double>(p, "lr", c.lr);
  c.clip = get_or<double>(p, "clip", c.clip);
  c.patience = get_or<std::size_t>(p, "patience", c.patience);
  c.lr_decay = get_or<double>(p, "lr_decay", c.lr_decay);
  c.max_recoveries = get_or<std::size_t>(p, "max_recoveries", c.max_recoveries);
  c.squared_loss = get_or<bool>(p, "squared_loss", c.squared_loss);
  c.time_cap_seconds = get_or<double>(p, "time_cap_seconds", c.time_cap_seconds);
  c.seed = seed;
  return c;
}

danse::TrainConfig danse_config(const json& p, std::uint64_t seed) {
  danse::TrainConfig c;
  c.hidden = get_or<Eigen::Index>(p, "hidden", c.hidden);
  c.epochs = get_or<std::size_t>(p, "epochs", c.epochs);
  c.batch = get_or<std::size_t>(p, "batch", c.batch);
  c.window = get_or<std::size_t>(p, "window", c.window);
  c.lr = get_or<double>(p, "lr", c.lr);
  c.clip = get_or<double>(p, "clip", c.clip);
  c.standardize = get_or<bool>(p, "standardize", c.standardize);
  c.time_cap_seconds = get_or<double>(p, "time_cap_seconds", c.time_cap_seconds);
  c.seed = seed;
  return c;
}

danse::ObsModel danse_obs_model(const NonlinearModel& model) {
  return {model.h_jacobian(Vector::Zero(model.state_dim())), model.R};
}

apbm::ApbmModel apbm_model(const json& p, NonlinearModel pbm, std::uint64_t seed) {
  Rng rng(seed);
  apbm::ApbmModel model =
      apbm::ApbmModel::create(std::move(pbm), get_or<Eigen::Index>(p, "hidden", 32), rng);
  model.eta = get_or<double>(p, "eta", model.eta);
  model.q_theta = get_or<double>(p, "q_theta", model.q_theta);
  model.mode = apbm::regularization_from_string(
      get_or<std::string>(p, "regularization", apbm::to_string(model.mode)));
  if (model.eta < 0.0 || model.q_theta < 0.0) {
    throw Error(Errc::ConfigError, "APBM eta and q_theta must be >= 0");
  }
  return model;
}

std::uint64_t training_seed(const ExperimentConfig& cfg) { return derive_seed(cfg.seed, 0x7a); }

}  // namespace

Checkpoint train_method(const ExperimentConfig& cfg, const Dataset& train,
                        const Dataset* validation) {
  const std::string& name = cfg.method.name;
  const json& p = cfg.method.params;
  if (!method_needs_training(name)) {
    throw Error(Errc::ConfigError, "method '" + name + "' has nothing to train");
  }
  const NonlinearModel model = benchmark_filter_model(cfg.benchmark, cfg.method, dataset_dt(train));
  const Dataset subset = head(train, get_or<std::size_t>(p, "train_sequences", 0));
  const std::uint64_t seed = training_seed(cfg);
  Checkpoint ckpt;
  std::size_t epochs = 0;
  json history = json::object();
  if (name == "knet") {
    const auto c = knet_config(p, seed);
    const std::string objective = get_or<std::string>(p, "objective", "supervised");
    knet::TrainResult r;
    if (objective == "supervised") {
      r = knet::train_supervised(model, subset, validation, c);
    } else if (objective == "unsupervised") {
      const Dataset unlabelled = strip_states(subset);
      r = knet::train_unsupervised(model, unlabelled, validation, c);
    } else {
      throw Error(Errc::ConfigError, "knet objective must be supervised or unsupervised");
    }
    ckpt = r.net.to_checkpoint();
    epochs = r.epochs_run;
    history = {{"train_loss", r.train_loss},
               {"validation_loss", r.validation_loss},
               {"best_epoch", r.best_epoch},
               {"recoveries", r.recoveries}};
  } else if (name == "danse") {
    const auto r = danse::train_danse(strip_states(subset), validation, danse_obs_model(model),
                                      danse_config(p, seed));
    ckpt = r.net.to_checkpoint();
    epochs = r.epochs_run;
    history = {{"train_loss", r.train_loss},
               {"validation_loss", r.validation_loss},
               {"best_epoch", r.best_epoch}};
  } else {
    const apbm::ApbmModel am = apbm_model(p, model, seed);
    apbm::OfflineConfig oc;
    oc.epochs = get_or<std::size_t>(p, "epochs", oc.epochs);
    oc.theta_init_var = get_or<double>(p, "theta_init_var", oc.theta_init_var);
    oc.time_cap_seconds = get_or<double>(p, "time_cap_seconds", oc.time_cap_seconds);
    const auto r = apbm::train_apbm_offline(am, strip_states(subset), oc);
    ckpt = apbm::to_checkpoint(am, r);
    epochs = r.epochs_run;
  }
  ckpt.meta = {{"seed", cfg.seed}, {"epochs", epochs}, {"config_hash", config_hash(cfg.canonical)}};
  ckpt.meta.update(history);
  return ckpt;
}

std::vector<StateSequence> estimate_states(const ExperimentConfig& cfg, const Dataset& test,
                                           const Checkpoint* checkpoint) {
  const std::string& name = cfg.method.name;
  const json& p = cfg.method.params;
  if (method_needs_training(name) && !checkpoint) {
    throw Error(Errc::ConfigError, "method '" + name + "' needs a checkpoint");
  }
  const NonlinearModel model = benchmark_filter_model(cfg.benchmark, cfg.method, dataset_dt(test));
  std::vector<StateSequence> out;
  out.reserve(test.size());

  std::optional<knet::KGainNet> kgn;
  std::optional<danse::DansePriorNet> dnet;
  std::optional<NonlinearModel> frozen;
  std::optional<apbm::ApbmModel> online;
  if (name == "knet") kgn = knet::KGainNet::from_checkpoint(*checkpoint);
  if (name == "danse") dnet = danse::DansePriorNet::from_checkpoint(*checkpoint);
  if (name == "apbm") {
    Vector theta;
    const apbm::ApbmModel am = apbm::from_checkpoint(*checkpoint, model, theta);
    frozen = apbm::fixed_theta_model(am, theta);
  }
  if (name == "apbm-online") online = apbm_model(p, model, training_seed(cfg));
  if (name == "noise" && model.obs_dim() != model.state_dim()) {
    throw Error(Errc::ConfigError, "noise baseline needs observations in state space");
  }
  if (name == "kf" && cfg.benchmark.model != "linear") {
    throw Error(Errc::ConfigError, "method kf needs a linear benchmark model");
  }

  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& obs = test.trajectories[i].obs;
    if (name == "noise") {
      out.push_back(obs);
    } else if (name == "kf") {
      out.push_back(kf_filter(*cfg.benchmark.linear, obs).means);
    } else if (name == "ekf") {
      out.push_back(ekf_filter(model, obs).means);
    } else if (name == "pf") {
      ParticleFilterOptions o;
      o.particles = get_or<std::size_t>(p, "particles", o.particles);
      Rng rng(derive_seed(derive_seed(cfg.seed, 0x9f), i));
      out.push_back(bootstrap_pf(model, obs, o, rng).means);
    } else if (name == "knet") {
      out.push_back(knet::knet_filter(model, *kgn, obs).means);
    } else if (name == "danse") {
      out.push_back(danse::danse_filter(*dnet, danse_obs_model(model), obs).means);
    } else if (name == "apbm") {
      out.push_back(ekf_filter(*frozen, obs).means);
    } else {
      const Eigen::Index d = online->param_dim();
      const auto init = apbm::AugmentedBelief::initial(
          *online, online->theta_bar,
          Matrix::Identity(d, d) * get_or<double>(p, "theta_init_var", 1e-2));
      out.push_back(apbm::run_apbm_online(*online, obs, init).states.means);
    }
  }
  return out;
}

MetricReport evaluate_method(const ExperimentConfig& cfg, const Dataset& test,
                             const Checkpoint* checkpoint) {
  if (test.empty()) throw Error(Errc::EmptyInput, "no test sequences");
  if (!test.supervised()) {
    throw Error(Errc::SchemaError, "evaluation data must carry ground-truth states");
  }
  const auto start = std::chrono::steady_clock::now();
  const auto estimates = estimate_states(cfg, test, checkpoint);
  std::vector<StateSequence> truth;
  for (const auto& t : test.trajectories) truth.push_back(*t.states);
  MetricReport report = mse_db(estimates, truth, cfg.method.name);
  report.config_hash = config_hash(cfg.canonical);
  if (cfg.timing) {
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return report;
}

MetricReport run_experiment(const ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const BenchmarkSpec& b = cfg.benchmark;
  const Dataset test = cfg.test_data ? load_dataset(*cfg.test_data)
                                     : generate_split(b, cfg.seed, Split::Test, b.test_sequences);
  std::optional<Checkpoint> ckpt;
  if (cfg.checkpoint && std::filesystem::exists(*cfg.checkpoint)) {
    ckpt = load_checkpoint(*cfg.checkpoint);
  } else if (method_needs_training(cfg.method.name)) {
    const Dataset train = cfg.train_data
                              ? load_dataset(*cfg.train_data)
                              : generate_split(b, cfg.seed, Split::Train, b.train_sequences);
    const Dataset val = cfg.val_data ? load_dataset(*cfg.val_data)
                                     : generate_split(b, cfg.seed, Split::Validation,
                                                      b.val_sequences);
    ckpt = train_method(cfg, train, val.empty() ? nullptr : &val);
    if (cfg.checkpoint) save_checkpoint(*cfg.checkpoint, *ckpt);
  }
  MetricReport report = evaluate_method(cfg, test, ckpt ? &*ckpt : nullptr);
  if (cfg.timing) {
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  if (cfg.report) save_report(*cfg.report, report);
  return report;
}

}  // namespace kfb
