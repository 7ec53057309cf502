#pragma once

#include <filesystem>

#include "voxrf/rng.hpp"
#include "voxrf/voxel_grid.hpp"

namespace voxrf::testing {

inline VoxelGrid random_grid(Rng& rng, int n = 4, double voxel_size = 0.25,
                             const Eigen::Vector3d& origin = {0, 0, 0},
                             double sigma_lo = 0.0, double sigma_hi = 2.0) {
  GridGeometry geom;
  geom.res = Eigen::Vector3i(n, n, n);
  geom.voxel_size = voxel_size;
  geom.origin = origin;
  VoxelGrid grid(geom);
  for (std::int64_t v = 0; v < geom.num_vertices(); ++v) {
    double* payload = grid.vertex(std::uint32_t(v));
    payload[0] = rng.uniform(sigma_lo, sigma_hi);
    for (int m = 0; m < kShPerVertex; ++m) payload[1 + m] = rng.uniform(-0.5, 0.5);
  }
  return grid;
}

inline std::filesystem::path test_tmp_dir(const std::string& name) {
  const std::filesystem::path dir = std::filesystem::path(VOXRF_TEST_TMP) / name;
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace voxrf::testing
