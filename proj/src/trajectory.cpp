#include "voxrf/trajectory.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace voxrf {

void save_tum(const std::filesystem::path& path, const Trajectory& traj) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_tum: cannot open " + path.string());
  os << "# timestamp tx ty tz qx qy qz qw\n";
  char line[512];
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const Pose& p = traj.poses[i];
    std::snprintf(line, sizeof(line),
                  "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                  traj.timestamps[i], p.t.x(), p.t.y(), p.t.z(), p.q.x(), p.q.y(),
                  p.q.z(), p.q.w());
    os << line;
  }
}

Trajectory load_tum(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_tum: cannot open " + path.string());
  Trajectory traj;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    double ts, tx, ty, tz, qx, qy, qz, qw;
    if (!(ss >> ts >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
      throw std::runtime_error("load_tum: malformed line " + std::to_string(lineno) +
                               " in " + path.string());
    Pose p;
    p.t = {tx, ty, tz};
    p.q = Eigen::Quaterniond(qw, qx, qy, qz);
    traj.push(ts, p);
  }
  return traj;
}

}  // namespace voxrf
