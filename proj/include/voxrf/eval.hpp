#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "voxrf/dataset.hpp"
#include "voxrf/tracking.hpp"
#include "voxrf/trajectory.hpp"

namespace voxrf {

struct MetricReport {
  std::optional<double> psnr_db;
  std::optional<double> depth_l1_m;
  std::optional<double> ate_rmse_m;
  std::optional<double> ate_unaligned_m;
  std::optional<double> rpe_t_m;
  std::optional<double> rpe_r_deg;
  int color_samples = 0;
  int depth_pixels = 0;
  int pose_pairs = 0;
  int rpe_pairs = 0;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

// "Randomly sampled pixels from randomly sampled images": images drawn with
// replacement, pixels uniform, both seed-controlled.
struct PixelSampleSpec {
  int images = 10;
  int pixels_per_image = 10000;
  std::uint64_t seed = 0;
};

// 10 log10(1 / MSE) with peak 1.0 over sampled valid pixels (mask != 0 where
// given); identical inputs cap at 99 dB. Throws when nothing is sampled.
double psnr(const std::vector<const ImageF*>& rendered,
            const std::vector<const ImageF*>& reference,
            const std::vector<const ImageF*>& valid_masks, const PixelSampleSpec& spec,
            int* samples_out = nullptr);

// Mean |rendered - reference| in meters over pixels valid in both.
double depth_l1(const std::vector<const ImageF*>& rendered,
                const std::vector<const ImageF*>& reference,
                const std::vector<const ImageF*>& valid_masks, int* pixels_out = nullptr);

// Timestamp association: nearest neighbours within the window, 1:1.
std::vector<std::pair<int, int>> associate_trajectories(const Trajectory& estimate,
                                                        const Trajectory& reference,
                                                        double max_dt = 0.02);

// RMSE of translation residuals, optionally after the closed-form rigid
// (no-scale) alignment of estimate onto reference.
double ate_rmse(const Trajectory& estimate, const Trajectory& reference, bool align,
                int* pairs_out = nullptr);

struct RpeResult {
  double rpe_t = 0.0;      // meters
  double rpe_r_deg = 0.0;  // degrees
  int pairs = 0;
};

// Relative pose error over fixed path-length intervals measured along the
// reference trajectory.
RpeResult rpe(const Trajectory& estimate, const Trajectory& reference,
              double interval_m = 1.0);

// --------------------------------------------------------------------------

struct MapQualityOptions {
  PixelSampleSpec sampling;
  RenderParams render;
  int threads = 0;
  bool prefer_exact_depth = true;
};

struct MapQuality {
  double psnr_db = 0.0;
  double depth_l1_m = 0.0;
  int color_samples = 0;
  int depth_pixels = 0;
};

// Renders the dataset poses at the listed frame indices and scores the map
// against the stored images.
MapQuality evaluate_map_quality(const VoxelGrid& grid, const Dataset& dataset,
                                const std::vector<int>& frame_indices,
                                const MapQualityOptions& options);

// --------------------------------------------------------------------------

struct SweepRow {
  int rays = 0;
  int iterations = 0;
  double ate_m = 0.0;
  double ate_std_m = 0.0;
  double rpe_t_m = 0.0;
  double rpe_r_deg = 0.0;
  double ms_per_frame = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  double spearman_rays_vs_ate = 0.0;  // monotone-trend statistic
};

// Tracks the dataset once per (rays, iterations) setting and reports mean/std
// ATE over `repeats` seeds.
SweepResult speed_accuracy_sweep(const VoxelGrid& grid, const Dataset& dataset,
                                 const std::vector<int>& ray_counts,
                                 const std::vector<int>& iteration_counts,
                                 const TrackingConfig& base_config, int repeats = 1);

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& sweep);

double spearman_rank_correlation(const std::vector<double>& a,
                                 const std::vector<double>& b);

}  // namespace voxrf
