#pragma once

#include <filesystem>
#include <vector>

#include "voxrf/pose.hpp"

namespace voxrf {

struct Trajectory {
  std::vector<double> timestamps;
  std::vector<Pose> poses;

  std::size_t size() const { return poses.size(); }
  bool empty() const { return poses.empty(); }
  void push(double ts, const Pose& p) {
    timestamps.push_back(ts);
    poses.push_back(p);
  }
};

// TUM format: "timestamp tx ty tz qx qy qz qw" per line, '#' comments.
// Values are printed with 17 significant digits so doubles round-trip.
void save_tum(const std::filesystem::path& path, const Trajectory& traj);
Trajectory load_tum(const std::filesystem::path& path);

}  // namespace voxrf
