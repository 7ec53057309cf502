#include "voxrf/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "voxrf/parallel.hpp"
#include "voxrf/rng.hpp"

namespace voxrf {

using nlohmann::json;

namespace {

std::string frame_name(int index, const char* ext = ".png") {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d%s", index, ext);
  return buf;
}

json load_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

Eigen::Vector3d vec3_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw std::runtime_error("expected 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

CheckerTexture checker_from_json(const json& j) {
  CheckerTexture c;
  c.period = j.value("period", 0.25);
  if (j.contains("albedo2")) c.albedo2 = vec3_from_json(j.at("albedo2"));
  if (!(c.period > 0)) throw std::runtime_error("checker period must be > 0");
  return c;
}

}  // namespace

Trajectory Dataset::gt_trajectory() const {
  Trajectory traj;
  for (const Frame& f : frames)
    if (f.gt_pose) traj.push(f.timestamp, *f.gt_pose);
  return traj;
}

CameraIntrinsics intrinsics_from_json(const json& j) {
  CameraIntrinsics intr;
  try {
    intr.fx = j.at("fx").get<double>();
    intr.fy = j.at("fy").get<double>();
    intr.cx = j.at("cx").get<double>();
    intr.cy = j.at("cy").get<double>();
    intr.width = j.at("width").get<int>();
    intr.height = j.at("height").get<int>();
    intr.depth_scale = j.value("depth_scale", 1000.0);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("intrinsics: ") + e.what());
  }
  intr.validate();
  return intr;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw std::runtime_error("load_dataset: not a directory: " + dir.string());
  Dataset ds;
  ds.intrinsics = intrinsics_from_json(load_json_file(dir / "intrinsics.json"));

  int count = 0;
  while (std::filesystem::exists(dir / "color" / frame_name(count))) ++count;
  if (count == 0) throw std::runtime_error("load_dataset: no frames under " + dir.string());

  std::optional<Trajectory> poses;
  if (std::filesystem::exists(dir / "poses.txt")) {
    poses = load_tum(dir / "poses.txt");
    if (int(poses->size()) != count)
      throw std::runtime_error("load_dataset: poses.txt has " +
                               std::to_string(poses->size()) + " poses but " +
                               std::to_string(count) + " frames are present");
  }

  ds.frames.resize(count);
  for (int i = 0; i < count; ++i) {
    Frame& f = ds.frames[i];
    f.color = read_color_png(dir / "color" / frame_name(i));
    const auto depth_path = dir / "depth" / frame_name(i);
    if (!std::filesystem::exists(depth_path))
      throw std::runtime_error("load_dataset: missing " + depth_path.string());
    f.depth = read_depth_png(depth_path, ds.intrinsics.depth_scale);
    if (f.color.width != ds.intrinsics.width || f.color.height != ds.intrinsics.height ||
        f.depth.width != ds.intrinsics.width || f.depth.height != ds.intrinsics.height)
      throw std::runtime_error("load_dataset: frame " + std::to_string(i) +
                               " dimensions do not match intrinsics");
    if (poses) {
      f.timestamp = poses->timestamps[i];
      f.gt_pose = poses->poses[i];
    } else {
      f.timestamp = double(i);
    }
    if (i > 0 && !(ds.frames[i].timestamp > ds.frames[i - 1].timestamp))
      throw std::runtime_error("load_dataset: non-monotone timestamps at frame " +
                               std::to_string(i));
  }

  if (std::filesystem::exists(dir / "depth_exact")) {
    ds.exact_depth.resize(count);
    for (int i = 0; i < count; ++i)
      ds.exact_depth[i] =
          read_depth_png(dir / "depth_exact" / frame_name(i), ds.intrinsics.depth_scale);
  }
  return ds;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset,
                  const json* metadata) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "color");
  fs::create_directories(dir / "depth");
  if (!dataset.exact_depth.empty()) fs::create_directories(dir / "depth_exact");

  json intr = {{"fx", dataset.intrinsics.fx},       {"fy", dataset.intrinsics.fy},
               {"cx", dataset.intrinsics.cx},       {"cy", dataset.intrinsics.cy},
               {"width", dataset.intrinsics.width}, {"height", dataset.intrinsics.height},
               {"depth_scale", dataset.intrinsics.depth_scale}};
  std::ofstream(dir / "intrinsics.json") << intr.dump(2) << "\n";

  bool all_posed = !dataset.frames.empty();
  for (std::size_t i = 0; i < dataset.frames.size(); ++i) {
    const Frame& f = dataset.frames[i];
    write_color_png(dir / "color" / frame_name(int(i)), f.color);
    write_depth_png(dir / "depth" / frame_name(int(i)), f.depth,
                    dataset.intrinsics.depth_scale);
    if (i < dataset.exact_depth.size())
      write_depth_png(dir / "depth_exact" / frame_name(int(i)), dataset.exact_depth[i],
                      dataset.intrinsics.depth_scale);
    all_posed = all_posed && f.gt_pose.has_value();
  }
  if (all_posed) save_tum(dir / "poses.txt", dataset.gt_trajectory());
  if (metadata) std::ofstream(dir / "metadata.json") << metadata->dump(2) << "\n";
}

// ---------------------------------------------------------------------------

Trajectory TrajectorySpec::generate() const {
  if (frames < 1) throw std::runtime_error("trajectory: frame count must be >= 1");
  Trajectory traj;
  for (int k = 0; k < frames; ++k) {
    const double ts = double(k) / fps;
    const double s = frames > 1 ? double(k) / (frames - 1) : 0.0;
    switch (kind) {
      case Kind::kCircle: {
        const double angle = (start_deg + arc_deg * s) * M_PI / 180.0;
        const Eigen::Vector3d eye = center + Eigen::Vector3d(radius * std::cos(angle),
                                                             radius * std::sin(angle),
                                                             height);
        traj.push(ts, look_at(eye, look_at_point));
        break;
      }
      case Kind::kLine: {
        const Eigen::Vector3d eye = line_from + s * (line_to - line_from);
        traj.push(ts, look_at(eye, look_at_point));
        break;
      }
      case Kind::kWaypoints: {
        if (int(waypoints.size()) != frames)
          throw std::runtime_error("trajectory: waypoint count != frames");
        traj.push(ts, waypoints[k]);
        break;
      }
    }
  }
  return traj;
}

SceneSpec::SceneSpec() {
  wall_albedos.fill(Eigen::Vector3d(0.65, 0.65, 0.65));
  intrinsics = {277.0, 277.0, 160.0, 120.0, 320, 240, 1000.0};
  trajectory.frames = 1;
  trajectory.center = {2.0, 2.0, 0.0};
  trajectory.radius = 0.8;
  trajectory.height = 1.5;
  trajectory.look_at_point = {2.0, 3.5, 1.5};
}

void SceneSpec::validate() const {
  if ((room_max - room_min).minCoeff() <= 0)
    throw std::runtime_error("scene: room extents must be positive");
  intrinsics.validate();
  if (depth_noise_sigma < 0 || invalid_dropout < 0 || invalid_dropout >= 1)
    throw std::runtime_error("scene: bad noise/dropout parameters");
  PrimitiveScene scene(*this);
  const Trajectory traj = trajectory.generate();
  for (const Pose& p : traj.poses) scene.check_viewpoint(p.t);
}

SceneSpec scene_spec_from_json(const json& j) {
  SceneSpec spec;
  if (j.contains("room")) {
    const json& room = j.at("room");
    if (room.contains("min")) spec.room_min = vec3_from_json(room.at("min"));
    if (room.contains("max")) spec.room_max = vec3_from_json(room.at("max"));
    if (room.contains("wall_albedo"))
      spec.wall_albedos.fill(vec3_from_json(room.at("wall_albedo")));
    if (room.contains("wall_albedos")) {
      const json& walls = room.at("wall_albedos");
      if (!walls.is_array() || walls.size() != 6)
        throw std::runtime_error("scene: wall_albedos needs 6 entries");
      for (int i = 0; i < 6; ++i) spec.wall_albedos[i] = vec3_from_json(walls[i]);
    }
    if (room.contains("wall_checker"))
      spec.wall_checker = checker_from_json(room.at("wall_checker"));
  }
  for (const json& jp : j.value("primitives", json::array())) {
    Primitive p;
    const std::string kind = jp.value("kind", "sphere");
    if (kind == "sphere") {
      p.kind = Primitive::Kind::kSphere;
      p.center = vec3_from_json(jp.at("center"));
      p.radius = jp.at("radius").get<double>();
      if (!(p.radius > 0)) throw std::runtime_error("scene: sphere radius must be > 0");
    } else if (kind == "box") {
      p.kind = Primitive::Kind::kBox;
      p.box_min = vec3_from_json(jp.at("min"));
      p.box_max = vec3_from_json(jp.at("max"));
      if ((p.box_max - p.box_min).minCoeff() <= 0)
        throw std::runtime_error("scene: box extents must be positive");
    } else {
      throw std::runtime_error("scene: unknown primitive kind '" + kind + "'");
    }
    if (jp.contains("albedo")) p.albedo = vec3_from_json(jp.at("albedo"));
    if (jp.contains("checker")) p.checker = checker_from_json(jp.at("checker"));
    spec.primitives.push_back(p);
  }
  if (j.contains("trajectory")) {
    const json& jt = j.at("trajectory");
    TrajectorySpec& t = spec.trajectory;
    const std::string kind = jt.value("kind", "circle");
    if (kind == "circle")
      t.kind = TrajectorySpec::Kind::kCircle;
    else if (kind == "line")
      t.kind = TrajectorySpec::Kind::kLine;
    else if (kind == "waypoints")
      t.kind = TrajectorySpec::Kind::kWaypoints;
    else
      throw std::runtime_error("scene: unknown trajectory kind '" + kind + "'");
    t.frames = jt.value("frames", 1);
    t.fps = jt.value("fps", 30.0);
    if (jt.contains("center")) t.center = vec3_from_json(jt.at("center"));
    t.radius = jt.value("radius", t.radius);
    t.height = jt.value("height", t.height);
    t.arc_deg = jt.value("arc_deg", t.arc_deg);
    t.start_deg = jt.value("start_deg", t.start_deg);
    if (jt.contains("look_at")) t.look_at_point = vec3_from_json(jt.at("look_at"));
    if (jt.contains("from")) t.line_from = vec3_from_json(jt.at("from"));
    if (jt.contains("to")) t.line_to = vec3_from_json(jt.at("to"));
    for (const json& jw : jt.value("waypoints", json::array())) {
      Pose p;
      p.t = vec3_from_json(jw.at("position"));
      if (jw.contains("look_at"))
        p = look_at(p.t, vec3_from_json(jw.at("look_at")));
      t.waypoints.push_back(p);
    }
  }
  if (j.contains("intrinsics")) spec.intrinsics = intrinsics_from_json(j.at("intrinsics"));
  spec.depth_noise_sigma = j.value("depth_noise_sigma", 0.0);
  spec.invalid_dropout = j.value("invalid_dropout", 0.0);
  spec.seed = j.value("seed", std::uint64_t(1));
  spec.validate();
  return spec;
}

SceneSpec load_scene_spec(const std::filesystem::path& path) {
  return scene_spec_from_json(load_json_file(path));
}

// ---------------------------------------------------------------------------

namespace {

bool sphere_intersect(const Ray& ray, const Eigen::Vector3d& center, double radius,
                      double& t_hit) {
  const Eigen::Vector3d oc = ray.o - center;
  const double b = oc.dot(ray.d);
  const double c = oc.squaredNorm() - radius * radius;
  const double disc = b * b - c;
  if (disc < 0) return false;
  const double sq = std::sqrt(disc);
  const double t0 = -b - sq, t1 = -b + sq;
  if (t0 > 1e-9) {
    t_hit = t0;
    return true;
  }
  if (t1 > 1e-9) {
    t_hit = t1;
    return true;
  }
  return false;
}

bool box_intersect(const Ray& ray, const Eigen::Vector3d& bmin, const Eigen::Vector3d& bmax,
                   double& t_hit) {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(ray.d[a]) < 1e-15) {
      if (ray.o[a] < bmin[a] || ray.o[a] > bmax[a]) return false;
      continue;
    }
    double t0 = (bmin[a] - ray.o[a]) / ray.d[a];
    double t1 = (bmax[a] - ray.o[a]) / ray.d[a];
    if (t0 > t1) std::swap(t0, t1);
    lo = std::max(lo, t0);
    hi = std::min(hi, t1);
  }
  if (hi < lo) return false;
  if (lo > 1e-9) {
    t_hit = lo;
    return true;
  }
  return false;
}

Eigen::Vector3d apply_checker(const Eigen::Vector3d& base,
                              const std::optional<CheckerTexture>& checker,
                              const Eigen::Vector3d& p) {
  if (!checker) return base;
  const long parity = std::lround(std::floor(p.x() / checker->period)) +
                      std::lround(std::floor(p.y() / checker->period)) +
                      std::lround(std::floor(p.z() / checker->period));
  return (parity & 1) ? checker->albedo2 : base;
}

}  // namespace

void PrimitiveScene::check_viewpoint(const Eigen::Vector3d& pos) const {
  for (int a = 0; a < 3; ++a)
    if (pos[a] <= spec_.room_min[a] || pos[a] >= spec_.room_max[a])
      throw std::runtime_error("scene: camera position outside the room");
  for (const Primitive& p : spec_.primitives) {
    if (p.kind == Primitive::Kind::kSphere) {
      if ((pos - p.center).norm() <= p.radius)
        throw std::runtime_error("scene: camera inside a sphere primitive");
    } else {
      bool inside = true;
      for (int a = 0; a < 3; ++a)
        inside = inside && pos[a] > p.box_min[a] && pos[a] < p.box_max[a];
      if (inside) throw std::runtime_error("scene: camera inside a box primitive");
    }
  }
}

PrimitiveHit PrimitiveScene::trace(const Ray& ray) const {
  PrimitiveHit best;

  // Room walls seen from inside: the exit face along the ray.
  double t_wall = std::numeric_limits<double>::infinity();
  int wall_id = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(ray.d[a]) < 1e-15) continue;
    const bool positive = ray.d[a] > 0;
    const double bound = positive ? spec_.room_max[a] : spec_.room_min[a];
    const double t = (bound - ray.o[a]) / ray.d[a];
    if (t > 1e-9 && t < t_wall) {
      t_wall = t;
      wall_id = 2 * a + (positive ? 1 : 0);
    }
  }
  if (wall_id >= 0 && std::isfinite(t_wall)) {
    best.hit = true;
    best.t = t_wall;
    best.albedo = apply_checker(spec_.wall_albedos[wall_id], spec_.wall_checker,
                                ray.o + t_wall * ray.d);
  }

  for (const Primitive& p : spec_.primitives) {
    double t = 0;
    const bool hit = p.kind == Primitive::Kind::kSphere
                         ? sphere_intersect(ray, p.center, p.radius, t)
                         : box_intersect(ray, p.box_min, p.box_max, t);
    if (hit && (!best.hit || t < best.t)) {
      best.hit = true;
      best.t = t;
      best.albedo = apply_checker(p.albedo, p.checker, ray.o + t * ray.d);
    }
  }
  return best;
}

Dataset synth_from_primitives(const SceneSpec& spec) {
  spec.validate();
  PrimitiveScene scene(spec);
  const Trajectory traj = spec.trajectory.generate();
  const CameraIntrinsics& intr = spec.intrinsics;

  Dataset ds;
  ds.intrinsics = intr;
  ds.frames.resize(traj.size());
  ds.exact_depth.resize(traj.size());

  Rng master(spec.seed);
  std::vector<std::uint64_t> frame_seeds(traj.size());
  for (auto& s : frame_seeds) s = master.next_u64();

  parallel_chunks(traj.size(), 0, [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t fi = begin; fi < end; ++fi) {
      Rng rng(frame_seeds[fi]);
      Frame& f = ds.frames[fi];
      f.timestamp = traj.timestamps[fi];
      f.gt_pose = traj.poses[fi];
      f.color = ImageF(intr.width, intr.height, 3);
      f.depth = ImageF(intr.width, intr.height, 1);
      ds.exact_depth[fi] = ImageF(intr.width, intr.height, 1);
      for (int y = 0; y < intr.height; ++y)
        for (int x = 0; x < intr.width; ++x) {
          const Ray ray = generate_ray(intr, *f.gt_pose, x, y);
          const PrimitiveHit hit = scene.trace(ray);
          if (!hit.hit) continue;  // open scene edge; leave invalid
          for (int ch = 0; ch < 3; ++ch)
            f.color.at(x, y, ch) = quantize_color(hit.albedo[ch]);
          ds.exact_depth[fi].at(x, y) = quantize_depth(hit.t, intr.depth_scale);
          double d = hit.t;
          if (spec.depth_noise_sigma > 0) d += spec.depth_noise_sigma * rng.normal();
          if (spec.invalid_dropout > 0 && rng.uniform() < spec.invalid_dropout) d = 0.0;
          f.depth.at(x, y) = quantize_depth(std::max(d, 0.0), intr.depth_scale);
        }
    }
  });
  return ds;
}

Dataset synth_from_grid(const VoxelGrid& grid, const Trajectory& trajectory,
                        const CameraIntrinsics& intrinsics, const RenderParams& params,
                        int threads) {
  Dataset ds;
  ds.intrinsics = intrinsics;
  ds.frames.resize(trajectory.size());
  ds.exact_depth.resize(trajectory.size());
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    Frame rendered = render_image(grid, intrinsics, trajectory.poses[i], params, 1, threads);
    Frame& f = ds.frames[i];
    f.timestamp = trajectory.timestamps[i];
    f.gt_pose = trajectory.poses[i];
    f.color = std::move(rendered.color);
    f.depth = std::move(rendered.depth);
    for (auto& v : f.color.data) v = quantize_color(v);
    for (auto& v : f.depth.data) v = quantize_depth(v, intrinsics.depth_scale);
    ds.exact_depth[i] = f.depth;
  }
  return ds;
}

}  // namespace voxrf
