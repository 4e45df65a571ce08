#include "kfbench/dataset.hpp"

#include <fstream>

#include <json.hpp>

namespace kfb {

using nlohmann::json;

namespace {

json vectors_to_json(const std::vector<Vector>& seq) {
  json out = json::array();
  for (const auto& v : seq) {
    json row = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) row.push_back(v[i]);
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<Vector> vectors_from_json(const json& arr, const char* field) {
  if (!arr.is_array()) {
    throw Error(Errc::SchemaError, std::string("field '") + field + "' must be an array");
  }
  std::vector<Vector> out;
  out.reserve(arr.size());
  Eigen::Index dim = -1;
  for (const auto& row : arr) {
    if (!row.is_array()) {
      throw Error(Errc::SchemaError, std::string("rows of '") + field + "' must be arrays");
    }
    Vector v(static_cast<Eigen::Index>(row.size()));
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (!row[i].is_number()) {
        throw Error(Errc::SchemaError, std::string("non-numeric entry in '") + field + "'");
      }
      v[static_cast<Eigen::Index>(i)] = row[i].get<double>();
    }
    if (dim >= 0 && v.size() != dim) {
      throw Error(Errc::SchemaError, std::string("ragged rows in '") + field + "'");
    }
    dim = v.size();
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

std::string trajectory_to_json_line(const Trajectory& traj) {
  json j;
  j["id"] = traj.id;
  j["dt"] = traj.dt;
  j["obs"] = vectors_to_json(traj.obs);
  j["states"] = traj.states ? vectors_to_json(*traj.states) : json(nullptr);
  return j.dump();
}

Trajectory trajectory_from_json_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw Error(Errc::SchemaError, std::string("malformed JSON line: ") + e.what());
  }
  if (!j.is_object()) throw Error(Errc::SchemaError, "trajectory line must be an object");
  for (const char* key : {"id", "dt", "obs"}) {
    if (!j.contains(key)) {
      throw Error(Errc::SchemaError, std::string("missing field '") + key + "'");
    }
  }
  if (!j["id"].is_string()) throw Error(Errc::SchemaError, "'id' must be a string");
  if (!j["dt"].is_number()) throw Error(Errc::SchemaError, "'dt' must be a number");

  Trajectory traj;
  traj.id = j["id"].get<std::string>();
  traj.dt = j["dt"].get<double>();
  traj.obs = vectors_from_json(j["obs"], "obs");
  if (traj.obs.empty()) throw Error(Errc::SchemaError, "trajectory needs T >= 1");
  if (j.contains("states") && !j["states"].is_null()) {
    traj.states = vectors_from_json(j["states"], "states");
    if (traj.states->size() != traj.obs.size()) {
      throw Error(Errc::SchemaError, "'states' and 'obs' lengths differ");
    }
  }
  return traj;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot open '" + path.string() + "' for writing");
  for (const auto& traj : ds.trajectories) out << trajectory_to_json_line(traj) << '\n';
  if (!out) throw Error(Errc::IoError, "write failed for '" + path.string() + "'");
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open '" + path.string() + "'");
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      ds.trajectories.push_back(trajectory_from_json_line(line));
    } catch (const Error& e) {
      throw Error(Errc::SchemaError, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return ds;
}

}  // namespace kfb
