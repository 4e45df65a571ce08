#include "kfbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace kfb {

using nlohmann::json;

double sequence_mse(const StateSequence& estimates, const StateSequence& truth) {
  require_same_dim(static_cast<Eigen::Index>(estimates.size()),
                   static_cast<Eigen::Index>(truth.size()), "sequence length");
  if (truth.empty()) throw Error(Errc::EmptyInput, "empty state sequence");
  const Eigen::Index m = truth.front().size();
  double total = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    require_same_dim(truth[t].size(), m, "state dimension");
    require_same_dim(estimates[t].size(), m, "estimate dimension");
    total += (estimates[t] - truth[t]).squaredNorm();
  }
  return total / (static_cast<double>(truth.size()) * static_cast<double>(m));
}

double to_db(double mse) {
  if (!(mse > 0.0)) return kDbFloor;
  return std::max(kDbFloor, 10.0 * std::log10(mse));
}

MetricReport mse_db(const std::vector<StateSequence>& estimates,
                    const std::vector<StateSequence>& truth, std::string method) {
  require_same_dim(static_cast<Eigen::Index>(estimates.size()),
                   static_cast<Eigen::Index>(truth.size()), "sequence count");
  if (truth.empty()) throw Error(Errc::EmptyInput, "no sequences to score");
  MetricReport report;
  report.method = std::move(method);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    report.per_sequence_db.push_back(to_db(sequence_mse(estimates[i], truth[i])));
  }
  const double n = static_cast<double>(report.per_sequence_db.size());
  double sum = 0.0;
  for (double v : report.per_sequence_db) sum += v;
  report.mean_db = sum / n;
  if (report.per_sequence_db.size() > 1) {
    double ss = 0.0;
    for (double v : report.per_sequence_db) ss += (v - report.mean_db) * (v - report.mean_db);
    report.std_db = std::sqrt(ss / (n - 1.0));
  }
  return report;
}

json report_to_json(const MetricReport& report) {
  json j = {{"method", report.method},
            {"per_sequence_db", report.per_sequence_db},
            {"mean_db", report.mean_db},
            {"std_db", report.std_db},
            {"config_hash", report.config_hash}};
  if (report.wall_seconds) j["wall_seconds"] = *report.wall_seconds;
  return j;
}

MetricReport report_from_json(const json& j) {
  try {
    MetricReport r;
    r.method = j.at("method").get<std::string>();
    r.per_sequence_db = j.at("per_sequence_db").get<std::vector<double>>();
    r.mean_db = j.at("mean_db").get<double>();
    r.std_db = j.at("std_db").get<double>();
    r.config_hash = j.value("config_hash", std::string{});
    if (j.contains("wall_seconds")) r.wall_seconds = j.at("wall_seconds").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaError, std::string("metric report: ") + e.what());
  }
}

void save_report(const std::filesystem::path& path, const MetricReport& report) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << report_to_json(report).dump(2) << '\n';
  if (!out) throw Error(Errc::IoError, "failed writing " + path.string());
}

MetricReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaError, path.string() + ": " + e.what());
  }
  return report_from_json(j);
}

ReportFormat report_format_from_string(std::string_view name) {
  if (name == "csv") return ReportFormat::Csv;
  if (name == "markdown" || name == "md") return ReportFormat::Markdown;
  throw Error(Errc::ConfigError, "unknown report format '" + std::string(name) + "'");
}

namespace {

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

std::string render_reports(std::vector<MetricReport> reports, ReportFormat format) {
  if (reports.empty()) throw Error(Errc::EmptyInput, "no reports to render");
  std::stable_sort(reports.begin(), reports.end(),
                   [](const MetricReport& a, const MetricReport& b) {
                     return a.mean_db < b.mean_db;
                   });
  std::ostringstream out;
  if (format == ReportFormat::Csv) {
    out << "method,mean_db,std_db,sequences\n";
    for (const auto& r : reports) {
      out << csv_field(r.method) << ',' << fixed(r.mean_db) << ',' << fixed(r.std_db) << ','
          << r.per_sequence_db.size() << '\n';
    }
  } else {
    out << "| Method | MSE [dB] | Std [dB] | Sequences |\n";
    out << "|---|---:|---:|---:|\n";
    for (const auto& r : reports) {
      out << "| " << r.method << " | " << fixed(r.mean_db) << " | ±" << fixed(r.std_db)
          << " | " << r.per_sequence_db.size() << " |\n";
    }
  }
  return out.str();
}

std::string config_hash(const json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace kfb
