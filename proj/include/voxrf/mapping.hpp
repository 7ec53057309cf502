#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "voxrf/dataset.hpp"
#include "voxrf/gradients.hpp"
#include "voxrf/renderer.hpp"
#include "voxrf/rng.hpp"
#include "voxrf/voxel_grid.hpp"

namespace voxrf {

struct MappingConfig {
  double lambda_d = 1.0;          // geometric loss weight
  int rays_per_batch = 4096;
  int iterations_per_stage = 2000;
  double lr_sigma = 30.0;
  double lr_sh = 1e-2;
  double rmsprop_decay = 0.95;
  double rmsprop_eps = 1e-8;
  int keyframe_stride = 10;
  int initial_resolution = 33;    // vertices on the longest axis at stage 0
  int upsample_stages = 2;        // nested 2x refinements between stages
  int max_resolution = 513;
  double prune_threshold = 1e-3;  // 1/m
  int prune_every = 0;            // iterations; 0 disables
  double sigma_init = 0.1;
  double bounds_margin = 0.05;    // fraction added around the data bounding box
  std::uint64_t seed = 1;
  int threads = 0;
  bool deterministic = false;     // forces single-threaded reductions
  RenderParams render;

  int effective_threads() const { return deterministic ? 1 : threads; }
};

MappingConfig mapping_config_from_json(const nlohmann::json& j);
nlohmann::json mapping_config_to_json(const MappingConfig& config);

// Running mean of squared gradients, updated sparsely (untouched parameters
// keep their state).
struct RmspropState {
  std::vector<double> v;

  void reset(std::size_t num_params) { v.assign(num_params, 0.0); }
};

// Eq.-style batch losses. photometric: mean over rays of the squared rgb
// residual norm; geometric: mean squared depth error over rays with valid
// reference depth (reference <= 0 is invalid).
double photometric_loss(const std::vector<Eigen::Vector3d>& rendered,
                        const std::vector<Eigen::Vector3d>& reference);

struct GeometricLossResult {
  double value = 0.0;
  int valid_rays = 0;
  bool empty = false;  // no valid depth in the batch; contributes 0 with a flag
};
GeometricLossResult geometric_loss(const std::vector<double>& rendered,
                                   const std::vector<double>& reference);

struct MapStepStats {
  double loss_photometric = 0.0;
  double loss_geometric = 0.0;
  double loss_total = 0.0;
  int rays_color = 0;   // rays that hit and enter the photometric term
  int rays_depth = 0;   // subset with valid reference depth
  double psnr_estimate = 0.0;
};

// One optimization step: sample rays over (keyframe, pixel), render, apply
// the combined loss gradient through RMSProp. Rays that miss every active
// cell are dropped from the losses.
MapStepStats mapping_step(VoxelGrid& grid, const std::vector<const Frame*>& keyframes,
                          const CameraIntrinsics& intrinsics, const MappingConfig& config,
                          RmspropState& rmsprop, Rng& rng);

struct MapLogRow {
  int iteration = 0;
  MapStepStats stats;
  double elapsed_ms = 0.0;
};

struct MapResult {
  VoxelGrid grid;
  std::vector<MapLogRow> log;
};

// Full offline mapping: keyframe selection, bounds fit (unless an explicit
// geometry is given), stage schedule with nested upsampling and optional
// pruning.
MapResult map_scene(const Dataset& dataset, const MappingConfig& config,
                    const std::optional<GridGeometry>& geometry = std::nullopt);

void write_map_log_csv(const std::filesystem::path& path,
                       const std::vector<MapLogRow>& log, const MappingConfig& config);

// Bounding box of the back-projected valid depth samples plus the camera
// centers, inflated by the configured margin.
GridGeometry fit_grid_geometry(const Dataset& dataset,
                               const std::vector<const Frame*>& keyframes,
                               const MappingConfig& config);

}  // namespace voxrf
