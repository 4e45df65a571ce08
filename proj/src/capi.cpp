#include "kfbench/kfbench.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <optional>
#include <string>

#include "kfbench/dataset.hpp"
#include "kfbench/experiment.hpp"
#include "kfbench/metrics.hpp"

struct kfb_context {
  std::string last_error;
};

struct kfb_dataset {
  kfb::Dataset data;
};

struct kfb_report {
  kfb::MetricReport report;
};

namespace {

using nlohmann::json;

kfb_status status_of(kfb::Errc code) {
  using kfb::Errc;
  switch (code) {
    case Errc::ConfigError: return KFB_ERR_CONFIG;
    case Errc::IoError: return KFB_ERR_IO;
    case Errc::SchemaError: return KFB_ERR_SCHEMA;
    case Errc::ShapeMismatch:
    case Errc::EmptyInput:
    case Errc::InvalidArgument: return KFB_ERR_ARGUMENT;
    default: break;
  }
  return kfb::is_numeric(code) ? KFB_ERR_NUMERIC : KFB_ERR_INTERNAL;
}

template <typename Fn>
kfb_status guarded(kfb_context* ctx, Fn&& fn) {
  if (!ctx) return KFB_ERR_ARGUMENT;
  ctx->last_error.clear();
  try {
    fn();
    return KFB_OK;
  } catch (const kfb::Error& e) {
    ctx->last_error = e.what();
    return status_of(e.code());
  } catch (const json::exception& e) {
    ctx->last_error = std::string("ConfigError: ") + e.what();
    return KFB_ERR_CONFIG;
  } catch (const std::bad_alloc&) {
    ctx->last_error = "out of memory";
    return KFB_ERR_INTERNAL;
  } catch (const std::exception& e) {
    ctx->last_error = e.what();
    return KFB_ERR_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw kfb::Error(kfb::Errc::InvalidArgument, what);
}

json parse_json(const char* text) {
  require(text != nullptr, "config is NULL");
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw kfb::Error(kfb::Errc::ConfigError, std::string("invalid JSON: ") + e.what());
  }
}

kfb::Split split_of(const std::string& name) {
  if (name == "train") return kfb::Split::Train;
  if (name == "val") return kfb::Split::Validation;
  if (name == "test") return kfb::Split::Test;
  throw kfb::Error(kfb::Errc::ConfigError, "unknown split '" + name + "'");
}

}  // namespace

extern "C" {

kfb_context* kfb_context_new(void) { return new (std::nothrow) kfb_context(); }

void kfb_context_free(kfb_context* ctx) { delete ctx; }

const char* kfb_last_error(const kfb_context* ctx) {
  return ctx ? ctx->last_error.c_str() : "";
}

const char* kfb_status_name(kfb_status status) {
  switch (status) {
    case KFB_OK: return "ok";
    case KFB_ERR_INTERNAL: return "internal error";
    case KFB_ERR_CONFIG: return "config error";
    case KFB_ERR_NUMERIC: return "numeric error";
    case KFB_ERR_IO: return "i/o error";
    case KFB_ERR_SCHEMA: return "schema error";
    case KFB_ERR_ARGUMENT: return "invalid argument";
  }
  return "unknown";
}

kfb_status kfb_simulate(kfb_context* ctx, const char* config_json, kfb_dataset** out) {
  return guarded(ctx, [&] {
    require(out != nullptr, "output pointer is NULL");
    json j = parse_json(config_json);
    require(j.is_object(), "simulation config must be an object");
    const auto seed = j.value("seed", std::uint64_t{0});
    const auto count = j.value("num_seq", std::size_t{1});
    const auto split = split_of(j.value("split", std::string("test")));
    json bench = j;
    for (const char* k : {"seed", "num_seq", "split"}) bench.erase(k);
    const auto cfg = kfb::parse_experiment_config(
        json{{"seed", seed}, {"benchmark", bench}, {"method", "noise"}}, false);
    auto ds = std::make_unique<kfb_dataset>();
    ds->data = kfb::generate_split(cfg.benchmark, seed, split, count);
    *out = ds.release();
  });
}

kfb_status kfb_dataset_load(kfb_context* ctx, const char* path, kfb_dataset** out) {
  return guarded(ctx, [&] {
    require(path && out, "NULL argument");
    auto ds = std::make_unique<kfb_dataset>();
    ds->data = kfb::load_dataset(path);
    *out = ds.release();
  });
}

kfb_status kfb_dataset_save(kfb_context* ctx, const kfb_dataset* ds, const char* path) {
  return guarded(ctx, [&] {
    require(ds && path, "NULL argument");
    kfb::save_dataset(path, ds->data);
  });
}

size_t kfb_dataset_size(const kfb_dataset* ds) { return ds ? ds->data.size() : 0; }

size_t kfb_dataset_length(const kfb_dataset* ds, size_t i) {
  if (!ds || i >= ds->data.size()) return 0;
  return ds->data.trajectories[i].length();
}

void kfb_dataset_free(kfb_dataset* ds) { delete ds; }

kfb_status kfb_train(kfb_context* ctx, const char* config_json, const kfb_dataset* train,
                     const kfb_dataset* validation, const char* checkpoint_path) {
  return guarded(ctx, [&] {
    require(train && checkpoint_path, "NULL argument");
    const auto cfg = kfb::parse_experiment_config(parse_json(config_json));
    const auto ckpt =
        kfb::train_method(cfg, train->data, validation ? &validation->data : nullptr);
    kfb::save_checkpoint(checkpoint_path, ckpt);
  });
}

kfb_status kfb_evaluate(kfb_context* ctx, const char* config_json, const kfb_dataset* test,
                        const char* checkpoint_path, kfb_report** out) {
  return guarded(ctx, [&] {
    require(test && out, "NULL argument");
    const auto cfg = kfb::parse_experiment_config(parse_json(config_json));
    std::optional<kfb::Checkpoint> ckpt;
    if (checkpoint_path) ckpt = kfb::load_checkpoint(checkpoint_path);
    auto rep = std::make_unique<kfb_report>();
    rep->report = kfb::evaluate_method(cfg, test->data, ckpt ? &*ckpt : nullptr);
    *out = rep.release();
  });
}

kfb_status kfb_run_experiment(kfb_context* ctx, const char* config_json, kfb_report** out) {
  return guarded(ctx, [&] {
    require(out != nullptr, "output pointer is NULL");
    const auto cfg = kfb::parse_experiment_config(parse_json(config_json));
    auto rep = std::make_unique<kfb_report>();
    rep->report = kfb::run_experiment(cfg);
    *out = rep.release();
  });
}

kfb_status kfb_report_load(kfb_context* ctx, const char* path, kfb_report** out) {
  return guarded(ctx, [&] {
    require(path && out, "NULL argument");
    auto rep = std::make_unique<kfb_report>();
    rep->report = kfb::load_report(path);
    *out = rep.release();
  });
}

kfb_status kfb_report_save(kfb_context* ctx, const kfb_report* report, const char* path) {
  return guarded(ctx, [&] {
    require(report && path, "NULL argument");
    kfb::save_report(path, report->report);
  });
}

double kfb_report_mean_db(const kfb_report* report) {
  return report ? report->report.mean_db : 0.0;
}

double kfb_report_std_db(const kfb_report* report) {
  return report ? report->report.std_db : 0.0;
}

size_t kfb_report_sequences(const kfb_report* report) {
  return report ? report->report.per_sequence_db.size() : 0;
}

void kfb_report_free(kfb_report* report) { delete report; }

kfb_status kfb_render_reports(kfb_context* ctx, const kfb_report* const* reports, size_t count,
                              const char* format, char** out) {
  return guarded(ctx, [&] {
    require(out && format && (reports || count == 0), "NULL argument");
    std::vector<kfb::MetricReport> list;
    for (size_t i = 0; i < count; ++i) {
      require(reports[i] != nullptr, "NULL report");
      list.push_back(reports[i]->report);
    }
    const std::string text =
        kfb::render_reports(std::move(list), kfb::report_format_from_string(format));
    char* buf = static_cast<char*>(std::malloc(text.size() + 1));
    if (!buf) throw std::bad_alloc();
    std::memcpy(buf, text.c_str(), text.size() + 1);
    *out = buf;
  });
}

void kfb_string_free(char* s) { std::free(s); }

}  // extern "C"
