#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kfbench/gaussmath.hpp"

namespace kfb {

using StateSequence = std::vector<Vector>;

/// Per-sequence and aggregate MSE in dB for one method.
struct MetricReport {
  std::string method;
  std::vector<double> per_sequence_db;
  double mean_db = 0.0;
  double std_db = 0.0;  // sample standard deviation over sequences
  std::optional<double> wall_seconds;
  std::string config_hash;
};

inline constexpr double kDbFloor = -300.0;

/// (1 / (T m)) sum_t ||est_t - truth_t||^2.
double sequence_mse(const StateSequence& estimates, const StateSequence& truth);
double to_db(double mse);

MetricReport mse_db(const std::vector<StateSequence>& estimates,
                    const std::vector<StateSequence>& truth, std::string method = {});

nlohmann::json report_to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& j);
void save_report(const std::filesystem::path& path, const MetricReport& report);
MetricReport load_report(const std::filesystem::path& path);

enum class ReportFormat { Csv, Markdown };
ReportFormat report_format_from_string(std::string_view name);

/// One row per report sorted ascending by mean dB.
std::string render_reports(std::vector<MetricReport> reports, ReportFormat format);

/// FNV-1a 64 of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

}  // namespace kfb
