// kfbench: simulate, train, evaluate and tabulate state estimators.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "kfbench/kfbench.h"

namespace {

using nlohmann::json;

int exit_code(kfb_status s) {
  switch (s) {
    case KFB_OK: return 0;
    case KFB_ERR_NUMERIC: return 3;
    case KFB_ERR_INTERNAL: return 1;
    default: return 2;
  }
}

struct Context {
  kfb_context* ctx = kfb_context_new();
  ~Context() { kfb_context_free(ctx); }

  int fail(kfb_status s) const {
    std::cerr << "kfbench: " << kfb_last_error(ctx) << '\n';
    return exit_code(s);
  }
};

bool read_json(const std::string& path, json& out) {
  if (path.empty()) {
    out = json::object();
    return true;
  }
  std::ifstream in(path);
  if (!in) {
    std::cerr << "kfbench: cannot read config " << path << '\n';
    return false;
  }
  try {
    in >> out;
  } catch (const json::exception& e) {
    std::cerr << "kfbench: " << path << ": " << e.what() << '\n';
    return false;
  }
  if (!out.is_object()) {
    std::cerr << "kfbench: " << path << ": config must be a JSON object\n";
    return false;
  }
  return true;
}

void set_method(json& cfg, const std::string& method) {
  if (method.empty()) return;
  if (!cfg.contains("method") || !cfg["method"].is_object()) cfg["method"] = json::object();
  cfg["method"]["name"] = method;
}

struct SimulateArgs {
  std::string model = "lorenz";
  std::string config;
  double dt_fine = 1e-5;
  std::size_t decimation = 2000;
  std::size_t seq_len = 3000;
  std::size_t num_seq = 10;
  double r2 = 1.0;
  double q2 = 0.0;
  std::uint64_t seed = 0;
  std::string split = "test";
  std::string out;
};

int run_simulate(const SimulateArgs& a) {
  json cfg;
  if (!read_json(a.config, cfg)) return 2;
  if (cfg.contains("benchmark")) cfg = cfg["benchmark"];
  cfg["model"] = a.model;
  cfg["seq_len"] = a.seq_len;
  cfg["num_seq"] = a.num_seq;
  cfg["r2"] = a.r2;
  cfg["q2"] = a.q2;
  cfg["seed"] = a.seed;
  cfg["split"] = a.split;
  if (a.model == "lorenz") {
    cfg["dt_fine"] = a.dt_fine;
    cfg["decimation"] = a.decimation;
  }
  Context c;
  kfb_dataset* ds = nullptr;
  if (auto s = kfb_simulate(c.ctx, cfg.dump().c_str(), &ds); s != KFB_OK) return c.fail(s);
  const kfb_status s = kfb_dataset_save(c.ctx, ds, a.out.c_str());
  kfb_dataset_free(ds);
  if (s != KFB_OK) return c.fail(s);
  std::cout << "wrote " << a.num_seq << " sequences to " << a.out << '\n';
  return 0;
}

struct TrainArgs {
  std::string method;
  std::string data;
  std::string val;
  std::string config;
  std::string out;
};

int run_train(const TrainArgs& a) {
  json cfg;
  if (!read_json(a.config, cfg)) return 2;
  set_method(cfg, a.method);
  Context c;
  kfb_dataset* train = nullptr;
  kfb_dataset* val = nullptr;
  kfb_status s = kfb_dataset_load(c.ctx, a.data.c_str(), &train);
  if (s == KFB_OK && !a.val.empty()) s = kfb_dataset_load(c.ctx, a.val.c_str(), &val);
  if (s == KFB_OK) s = kfb_train(c.ctx, cfg.dump().c_str(), train, val, a.out.c_str());
  kfb_dataset_free(train);
  kfb_dataset_free(val);
  if (s != KFB_OK) return c.fail(s);
  std::cout << "wrote checkpoint " << a.out << '\n';
  return 0;
}

struct EvalArgs {
  std::string method;
  std::string data;
  std::string ckpt;
  std::string config;
  std::string report;
  bool timing = false;
};

int run_eval(const EvalArgs& a) {
  json cfg;
  if (!read_json(a.config, cfg)) return 2;
  set_method(cfg, a.method);
  if (a.timing) cfg["timing"] = true;
  Context c;
  kfb_dataset* test = nullptr;
  kfb_report* rep = nullptr;
  kfb_status s = kfb_dataset_load(c.ctx, a.data.c_str(), &test);
  if (s == KFB_OK) {
    s = kfb_evaluate(c.ctx, cfg.dump().c_str(), test, a.ckpt.empty() ? nullptr : a.ckpt.c_str(),
                     &rep);
  }
  kfb_dataset_free(test);
  if (s == KFB_OK && !a.report.empty()) s = kfb_report_save(c.ctx, rep, a.report.c_str());
  if (s != KFB_OK) {
    kfb_report_free(rep);
    return c.fail(s);
  }
  std::printf("%s: %.3f dB +- %.3f over %zu sequences\n",
              a.method.empty() ? "method" : a.method.c_str(), kfb_report_mean_db(rep),
              kfb_report_std_db(rep), kfb_report_sequences(rep));
  kfb_report_free(rep);
  return 0;
}

struct RunArgs {
  std::string config;
  std::string report;
  bool timing = false;
};

int run_run(const RunArgs& a) {
  json cfg;
  if (!read_json(a.config, cfg)) return 2;
  if (!a.report.empty()) cfg["report"] = a.report;
  if (a.timing) cfg["timing"] = true;
  Context c;
  kfb_report* rep = nullptr;
  if (auto s = kfb_run_experiment(c.ctx, cfg.dump().c_str(), &rep); s != KFB_OK) {
    return c.fail(s);
  }
  std::printf("%.3f dB +- %.3f over %zu sequences\n", kfb_report_mean_db(rep),
              kfb_report_std_db(rep), kfb_report_sequences(rep));
  kfb_report_free(rep);
  return 0;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string format = "markdown";
  std::string out;
};

int run_report(const ReportArgs& a) {
  Context c;
  std::vector<kfb_report*> reports;
  kfb_status s = KFB_OK;
  for (const auto& path : a.inputs) {
    kfb_report* r = nullptr;
    s = kfb_report_load(c.ctx, path.c_str(), &r);
    if (s != KFB_OK) break;
    reports.push_back(r);
  }
  char* text = nullptr;
  if (s == KFB_OK) {
    s = kfb_render_reports(c.ctx, reports.data(), reports.size(), a.format.c_str(), &text);
  }
  for (auto* r : reports) kfb_report_free(r);
  if (s != KFB_OK) return c.fail(s);
  if (a.out.empty()) {
    std::cout << text;
  } else {
    std::ofstream out(a.out);
    out << text;
    if (!out) {
      kfb_string_free(text);
      std::cerr << "kfbench: cannot write " << a.out << '\n';
      return 2;
    }
  }
  kfb_string_free(text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kalman-family and learned state estimators on the Lorenz benchmark"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a trajectory dataset");
  simulate->add_option("--model", sim.model, "lorenz or linear")
      ->check(CLI::IsMember({"lorenz", "linear"}));
  simulate->add_option("--config", sim.config, "JSON with extra benchmark fields (F, H, Q, R, ...)");
  simulate->add_option("--dt-fine", sim.dt_fine);
  simulate->add_option("--decimation", sim.decimation);
  simulate->add_option("--seq-len", sim.seq_len);
  simulate->add_option("--num-seq", sim.num_seq);
  simulate->add_option("--r2", sim.r2, "observation noise variance");
  simulate->add_option("--q2", sim.q2, "process noise variance");
  simulate->add_option("--seed", sim.seed);
  simulate->add_option("--split", sim.split)->check(CLI::IsMember({"train", "val", "test"}));
  simulate->add_option("--out", sim.out)->required();

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a learned estimator");
  train->add_option("--method", tr.method)->required()->check(
      CLI::IsMember({"knet", "danse", "apbm"}));
  train->add_option("--data", tr.data)->required();
  train->add_option("--val", tr.val, "validation dataset");
  train->add_option("--config", tr.config, "experiment config JSON");
  train->add_option("--out", tr.out, "checkpoint path")->required();

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Evaluate an estimator on a labelled dataset");
  eval->add_option("--method", ev.method)->required()->check(CLI::IsMember(
      {"noise", "kf", "ekf", "pf", "knet", "danse", "apbm", "apbm-online"}));
  eval->add_option("--data", ev.data)->required();
  eval->add_option("--ckpt", ev.ckpt);
  eval->add_option("--config", ev.config, "experiment config JSON");
  eval->add_option("--report", ev.report);
  eval->add_flag("--timing", ev.timing, "record wall-clock seconds in the report");

  RunArgs rn;
  auto* run = app.add_subcommand("run", "Run a full experiment from a config file");
  run->add_option("--config", rn.config)->required();
  run->add_option("--report", rn.report);
  run->add_flag("--timing", rn.timing, "record wall-clock seconds in the report");

  ReportArgs rp;
  auto* report = app.add_subcommand("report", "Tabulate metric reports");
  report->add_option("--inputs", rp.inputs)->required()->delimiter(',');
  report->add_option("--format", rp.format)->check(CLI::IsMember({"csv", "markdown"}));
  report->add_option("--out", rp.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*simulate) return run_simulate(sim);
  if (*train) return run_train(tr);
  if (*eval) return run_eval(ev);
  if (*run) return run_run(rn);
  return run_report(rp);
}
