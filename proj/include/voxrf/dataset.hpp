#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "voxrf/camera.hpp"
#include "voxrf/frame.hpp"
#include "voxrf/renderer.hpp"
#include "voxrf/trajectory.hpp"
#include "voxrf/voxel_grid.hpp"

namespace voxrf {

struct Dataset {
  CameraIntrinsics intrinsics;
  std::vector<Frame> frames;
  std::vector<ImageF> exact_depth;  // noise-free depth when synthesized; may be empty

  Trajectory gt_trajectory() const;  // frames with poses, in order
};

// Directory layout: intrinsics.json, color/%06d.png (8-bit), depth/%06d.png
// (16-bit, depth_scale units/m), poses.txt (TUM, optional),
// depth_exact/%06d.png (optional), metadata.json (optional).
Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset,
                  const nlohmann::json* metadata = nullptr);

// --------------------------------------------------------------------------
// Synthetic scenes

struct CheckerTexture {
  double period = 0.25;                       // meters
  Eigen::Vector3d albedo2{0.1, 0.1, 0.1};     // color of the odd parity cells
};

struct Primitive {
  enum class Kind { kSphere, kBox };
  Kind kind = Kind::kSphere;
  Eigen::Vector3d center{0, 0, 0};  // sphere
  double radius = 0.5;              // sphere
  Eigen::Vector3d box_min{0, 0, 0}, box_max{0, 0, 0};
  Eigen::Vector3d albedo{0.7, 0.7, 0.7};
  std::optional<CheckerTexture> checker;
};

struct TrajectorySpec {
  enum class Kind { kCircle, kLine, kWaypoints };
  Kind kind = Kind::kCircle;
  int frames = 1;
  double fps = 30.0;
  // circle: arc around `center` at `radius`/`height`, spanning arc_deg degrees
  Eigen::Vector3d center{0, 0, 0};
  double radius = 1.0;
  double height = 0.0;
  double arc_deg = 360.0;
  double start_deg = 0.0;
  Eigen::Vector3d look_at_point{0, 0, 0};
  // line: from `line_from` to `line_to`, looking at look_at_point
  Eigen::Vector3d line_from{0, 0, 0}, line_to{0, 0, 0};
  // explicit poses
  std::vector<Pose> waypoints;

  Trajectory generate() const;
};

struct SceneSpec {
  Eigen::Vector3d room_min{0, 0, 0};
  Eigen::Vector3d room_max{4, 4, 3};
  std::array<Eigen::Vector3d, 6> wall_albedos;  // -x +x -y +y -z +z
  std::optional<CheckerTexture> wall_checker;
  std::vector<Primitive> primitives;
  TrajectorySpec trajectory;
  CameraIntrinsics intrinsics;
  double depth_noise_sigma = 0.0;   // meters
  double invalid_dropout = 0.0;     // probability a depth pixel is dropped
  std::uint64_t seed = 1;

  SceneSpec();
  void validate() const;
};

SceneSpec scene_spec_from_json(const nlohmann::json& j);
SceneSpec load_scene_spec(const std::filesystem::path& path);
CameraIntrinsics intrinsics_from_json(const nlohmann::json& j);

struct PrimitiveHit {
  bool hit = false;
  double t = 0.0;  // along-ray distance, meters
  Eigen::Vector3d albedo{0, 0, 0};
};

// Analytic ray caster for the room walls and the embedded primitives;
// provides exact depth for the synthetic oracles.
class PrimitiveScene {
 public:
  explicit PrimitiveScene(const SceneSpec& spec) : spec_(spec) {}
  PrimitiveHit trace(const Ray& ray) const;
  // Throws when the position is outside the room or inside a primitive.
  void check_viewpoint(const Eigen::Vector3d& position) const;

 private:
  const SceneSpec& spec_;
};

// Renders the spec's trajectory into a dataset with exact depth as the
// oracle channel; color and depth are quantized to their PNG precision.
Dataset synth_from_primitives(const SceneSpec& spec);

// Self-consistency generator: frames rendered from the grid itself.
Dataset synth_from_grid(const VoxelGrid& grid, const Trajectory& trajectory,
                        const CameraIntrinsics& intrinsics, const RenderParams& params,
                        int threads = 0);

}  // namespace voxrf
