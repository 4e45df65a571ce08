#pragma once

#include <filesystem>
#include <string>

#include "kfbench/ssm.hpp"

namespace kfb {

// One trajectory per line:
//   {"id": str, "dt": num, "obs": [[...], ...], "states": [[...], ...] | null}
// Doubles are written with shortest round-trip precision.

std::string trajectory_to_json_line(const Trajectory& traj);
Trajectory trajectory_from_json_line(const std::string& line);

void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace kfb
