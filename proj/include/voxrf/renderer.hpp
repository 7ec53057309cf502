#pragma once

#include <array>
#include <vector>

#include "voxrf/camera.hpp"
#include "voxrf/frame.hpp"
#include "voxrf/voxel_grid.hpp"

namespace voxrf {

struct RenderParams {
  double step = 0.0;              // sample spacing, meters; <= 0 uses voxel_size / 2
  double t_near = 0.05;           // meters
  double t_far = 0.0;             // <= 0 uses the grid diagonal
  double termination_eps = 1e-4;  // stop marching once transmittance falls below

  double effective_step(const GridGeometry& g) const {
    return step > 0.0 ? step : 0.5 * g.voxel_size;
  }
  double effective_t_far(const GridGeometry& g) const {
    return t_far > 0.0 ? t_far : g.diagonal();
  }
};

// Midpoint sample positions t and segment lengths delta along a ray.
struct SampleSchedule {
  std::vector<double> t;
  std::vector<double> delta;

  void clear() {
    t.clear();
    delta.clear();
  }
  std::size_t size() const { return t.size(); }
  bool empty() const { return t.empty(); }
};

// Everything the forward pass records that the gradient passes reuse: the
// per-sample arrays of the rendering equations plus the clamp states, with
// the truncation produced by early termination.
struct RayWorkspace {
  Ray ray{};
  ShBasis basis{};
  int count = 0;
  bool hit = false;
  bool terminated_early = false;
  double transmittance_terminal = 1.0;  // T_{N+1}
  Eigen::Vector3d color_out{0, 0, 0};   // rendered color
  double depth_out = 0.0;               // rendered expected depth, meters

  std::vector<double> t;          // distance from origin, meters
  std::vector<double> delta;      // segment length, meters
  std::vector<double> sigma_raw;  // interpolated density before activation
  std::vector<double> sigma;      // max(sigma_raw, 0)
  std::vector<double> transmittance;  // T_i at the sample
  std::vector<double> weight;         // w_i = T_i (1 - exp(-sigma_i delta_i))
  std::vector<Eigen::Vector3d> position;
  std::vector<Eigen::Vector3d> color;          // post-clamp sample color
  std::vector<std::array<bool, 3>> clamped;    // color channel hit the [0,1] clamp

  void reset();
};

// Uniform sampling clipped to the grid bounds; samples falling in inactive
// cells are dropped. Empty result = ray misses (renders as background).
void sample_ray(const VoxelGrid& grid, const Ray& ray, const RenderParams& params,
                SampleSchedule& out);

// Discrete volumetric color and expected-depth accumulation over an explicit
// schedule. A frozen basis overrides the direction-derived SH basis (used by
// the pose path, which treats the basis as constant in d).
void render_ray_scheduled(const VoxelGrid& grid, const Ray& ray,
                          const SampleSchedule& schedule, const RenderParams& params,
                          RayWorkspace& ws, const ShBasis* frozen_basis = nullptr);

void render_ray(const VoxelGrid& grid, const Ray& ray, const RenderParams& params,
                RayWorkspace& ws, const ShBasis* frozen_basis = nullptr);

// Full-image render at the given stride; output is ceil(size/stride) with
// pixel (i,j) cast at (i*stride, j*stride). No-hit pixels render background
// (black, depth 0 = invalid).
Frame render_image(const VoxelGrid& grid, const CameraIntrinsics& intr, const Pose& pose,
                   const RenderParams& params, int stride = 1, int threads = 0);

}  // namespace voxrf
