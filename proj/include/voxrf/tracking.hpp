#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "voxrf/dataset.hpp"
#include "voxrf/renderer.hpp"
#include "voxrf/rng.hpp"
#include "voxrf/trajectory.hpp"

namespace voxrf {

// Local pose update: rotation exp([omega]x) about the camera center composed
// onto the rotation, translation added. |omega| < pi.
struct PosePerturbation {
  Eigen::Vector3d omega{0, 0, 0};  // axis-angle, radians
  Eigen::Vector3d tau{0, 0, 0};    // meters

  Pose applied_to(const Pose& pose) const {
    Pose out;
    out.q = (exp_so3(omega) * pose.q).normalized();
    out.t = pose.t + tau;
    return out;
  }
};

struct TrackingConfig {
  int rays_per_iteration = 2048;
  int iterations = 40;
  double lr_omega = 1e-3;  // radians
  double lr_tau = 1e-3;    // meters
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double lambda_p = 1.0;  // photometric weight (0 = depth-only tracking)
  double lambda_d = 1.0;
  enum class Init { kPreviousPose, kConstantVelocity };
  Init init_policy = Init::kPreviousPose;
  double convergence_step = 0.0;  // stop when the applied update is smaller; 0 = off
  double divergence_factor = 10.0;
  int divergence_patience = 20;
  int max_redraws = 50;  // attempts to replace an invalid-depth pixel draw
  std::uint64_t seed = 7;
  int threads = 0;
  bool deterministic = false;
  RenderParams render;

  int effective_threads() const { return deterministic ? 1 : threads; }
};

TrackingConfig tracking_config_from_json(const nlohmann::json& j);
nlohmann::json tracking_config_to_json(const TrackingConfig& config);

struct PixelSample {
  int px = 0, py = 0;
};

struct PoseGradient {
  Eigen::Vector3d d_omega{0, 0, 0};
  Eigen::Vector3d d_tau{0, 0, 0};
  double loss = 0.0;
  int rays_used = 0;
};

// Eq. 12-14 ray gradients mapped onto the rigid chart: translation collects
// dL/do directly; rotation collects d x (tangent-projected dL/dd). Throws
// when every sampled ray misses the grid ("untrackable frame").
PoseGradient pose_gradient(const VoxelGrid& grid, const Frame& frame,
                           const CameraIntrinsics& intrinsics, const Pose& pose,
                           const std::vector<PixelSample>& pixels,
                           const TrackingConfig& config);

struct TrackFrameResult {
  Pose pose;
  std::vector<double> loss_trace;
  bool failed = false;
  int iterations_run = 0;
};

TrackFrameResult track_frame(const VoxelGrid& grid, const Frame& frame,
                             const CameraIntrinsics& intrinsics, const Pose& init,
                             const TrackingConfig& config);

struct FrameStatus {
  int frame = 0;
  int iterations = 0;
  double final_loss = 0.0;
  double elapsed_ms = 0.0;
  bool failed = false;
};

struct TrackSequenceResult {
  Trajectory trajectory;
  std::vector<FrameStatus> status;
};

// Tracks every frame; the first frame adopts the dataset pose (the usual
// evaluation protocol). Failed frames fall back to their init and tracking
// continues from the last good estimate.
TrackSequenceResult track_sequence(const VoxelGrid& grid, const Dataset& dataset,
                                   const TrackingConfig& config);

}  // namespace voxrf
