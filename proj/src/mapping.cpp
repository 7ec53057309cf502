#include "voxrf/mapping.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "voxrf/parallel.hpp"

namespace voxrf {

using nlohmann::json;

MappingConfig mapping_config_from_json(const json& j) {
  MappingConfig c;
  c.lambda_d = j.value("lambda_d", c.lambda_d);
  c.rays_per_batch = j.value("rays_per_batch", c.rays_per_batch);
  c.iterations_per_stage = j.value("iterations_per_stage", c.iterations_per_stage);
  c.lr_sigma = j.value("lr_sigma", c.lr_sigma);
  c.lr_sh = j.value("lr_sh", c.lr_sh);
  c.rmsprop_decay = j.value("rmsprop_decay", c.rmsprop_decay);
  c.rmsprop_eps = j.value("rmsprop_eps", c.rmsprop_eps);
  c.keyframe_stride = j.value("keyframe_stride", c.keyframe_stride);
  c.initial_resolution = j.value("initial_resolution", c.initial_resolution);
  c.upsample_stages = j.value("upsample_stages", c.upsample_stages);
  c.max_resolution = j.value("max_resolution", c.max_resolution);
  c.prune_threshold = j.value("prune_threshold", c.prune_threshold);
  c.prune_every = j.value("prune_every", c.prune_every);
  c.sigma_init = j.value("sigma_init", c.sigma_init);
  c.bounds_margin = j.value("bounds_margin", c.bounds_margin);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  c.deterministic = j.value("deterministic", c.deterministic);
  c.render.step = j.value("render_step", c.render.step);
  c.render.t_near = j.value("t_near", c.render.t_near);
  c.render.t_far = j.value("t_far", c.render.t_far);
  c.render.termination_eps = j.value("termination_eps", c.render.termination_eps);
  if (c.lambda_d < 0) throw std::runtime_error("mapping config: lambda_d must be >= 0");
  if (c.rays_per_batch < 1) throw std::runtime_error("mapping config: rays_per_batch must be >= 1");
  if (c.keyframe_stride < 1) throw std::runtime_error("mapping config: keyframe_stride must be >= 1");
  return c;
}

json mapping_config_to_json(const MappingConfig& c) {
  return json{{"lambda_d", c.lambda_d},
              {"rays_per_batch", c.rays_per_batch},
              {"iterations_per_stage", c.iterations_per_stage},
              {"lr_sigma", c.lr_sigma},
              {"lr_sh", c.lr_sh},
              {"rmsprop_decay", c.rmsprop_decay},
              {"rmsprop_eps", c.rmsprop_eps},
              {"keyframe_stride", c.keyframe_stride},
              {"initial_resolution", c.initial_resolution},
              {"upsample_stages", c.upsample_stages},
              {"max_resolution", c.max_resolution},
              {"prune_threshold", c.prune_threshold},
              {"prune_every", c.prune_every},
              {"sigma_init", c.sigma_init},
              {"bounds_margin", c.bounds_margin},
              {"seed", c.seed},
              {"threads", c.threads},
              {"deterministic", c.deterministic},
              {"render_step", c.render.step},
              {"t_near", c.render.t_near},
              {"t_far", c.render.t_far},
              {"termination_eps", c.render.termination_eps}};
}

double photometric_loss(const std::vector<Eigen::Vector3d>& rendered,
                        const std::vector<Eigen::Vector3d>& reference) {
  if (rendered.empty() || rendered.size() != reference.size())
    throw std::runtime_error("photometric_loss: empty batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i)
    sum += (rendered[i] - reference[i]).squaredNorm();
  return sum / double(rendered.size());
}

GeometricLossResult geometric_loss(const std::vector<double>& rendered,
                                   const std::vector<double>& reference) {
  if (rendered.size() != reference.size())
    throw std::runtime_error("geometric_loss: size mismatch");
  GeometricLossResult out;
  double sum = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    if (!(reference[i] > 0.0)) continue;  // invalid depth is disregarded
    const double r = rendered[i] - reference[i];
    sum += r * r;
    ++out.valid_rays;
  }
  if (out.valid_rays == 0) {
    out.empty = true;
    return out;
  }
  out.value = sum / out.valid_rays;
  return out;
}

namespace {

struct RaySample {
  int frame = 0;
  int px = 0, py = 0;
};

double psnr_from_lp(double lp) {
  if (lp <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(3.0 / lp));  // lp sums 3 channels
}

}  // namespace

MapStepStats mapping_step(VoxelGrid& grid, const std::vector<const Frame*>& keyframes,
                          const CameraIntrinsics& intrinsics, const MappingConfig& config,
                          RmspropState& rmsprop, Rng& rng) {
  if (keyframes.empty()) throw std::runtime_error("mapping_step: no keyframes");
  const int n_rays = config.rays_per_batch;
  const int threads = config.effective_threads();

  // The batch is drawn single-threaded so the sample sequence depends only on
  // the seed, never on scheduling.
  std::vector<RaySample> batch(n_rays);
  for (RaySample& s : batch) {
    s.frame = int(rng.uniform_index(keyframes.size()));
    s.px = int(rng.uniform_index(std::uint64_t(intrinsics.width)));
    s.py = int(rng.uniform_index(std::uint64_t(intrinsics.height)));
  }

  // Pass 1: schedules only, to fix the loss normalization (Eq. 4/5 use the
  // count of contributing rays).
  std::vector<SampleSchedule> schedules(n_rays);
  std::vector<std::uint8_t> hits(n_rays, 0);
  parallel_chunks(n_rays, threads, [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t i = begin; i < end; ++i) {
      const RaySample& s = batch[i];
      const Ray ray = generate_ray(intrinsics, *keyframes[s.frame]->gt_pose, s.px, s.py);
      sample_ray(grid, ray, config.render, schedules[i]);
      hits[i] = schedules[i].empty() ? 0 : 1;
    }
  });

  int m_color = 0, m_depth = 0;
  for (int i = 0; i < n_rays; ++i) {
    if (!hits[i]) continue;
    ++m_color;
    if (keyframes[batch[i].frame]->depth_valid(batch[i].px, batch[i].py)) ++m_depth;
  }
  MapStepStats stats;
  stats.rays_color = m_color;
  stats.rays_depth = m_depth;
  if (m_color == 0) throw std::runtime_error("mapping_step: no ray hit the grid");

  // Pass 2: forward + backward with exact upstream scales.
  const int n_workers = std::max(1, std::min<int>(resolve_threads(threads), n_rays));
  std::vector<GradientBuffer> buffers(n_workers);
  for (auto& b : buffers) b.resize(std::size_t(grid.geometry().num_vertices()));
  std::vector<double> lp_parts(n_workers, 0.0), lg_parts(n_workers, 0.0);
  std::vector<int> bad_ray(n_workers, -1);

  parallel_chunks(n_rays, threads, [&](std::size_t begin, std::size_t end, int worker) {
    RayWorkspace ws;
    MapGradContribution contrib;
    GradientBuffer& buf = buffers[worker];
    for (std::size_t i = begin; i < end; ++i) {
      if (!hits[i]) continue;
      const RaySample& s = batch[i];
      const Frame& frame = *keyframes[s.frame];
      const Ray ray = generate_ray(intrinsics, *frame.gt_pose, s.px, s.py);
      render_ray_scheduled(grid, ray, schedules[i], config.render, ws);

      const Eigen::Vector3d target(frame.color.at(s.px, s.py, 0),
                                   frame.color.at(s.px, s.py, 1),
                                   frame.color.at(s.px, s.py, 2));
      const Eigen::Vector3d residual = ws.color_out - target;
      if (!std::isfinite(residual.squaredNorm()) || !std::isfinite(ws.depth_out)) {
        bad_ray[worker] = int(i);
        return;
      }
      lp_parts[worker] += residual.squaredNorm();
      const Eigen::Vector3d upstream_c = 2.0 * residual / double(m_color);

      double upstream_d = 0.0;
      const bool depth_ok = frame.depth_valid(s.px, s.py) && m_depth > 0;
      if (depth_ok) {
        const double dres = ws.depth_out - double(frame.depth.at(s.px, s.py));
        lg_parts[worker] += dres * dres;
        upstream_d = config.lambda_d * 2.0 * dres / double(m_depth);
      }

      contrib.resize_zero(ws.count);
      grad_color_wrt_params(ws, upstream_c, contrib);
      if (depth_ok && upstream_d != 0.0) grad_depth_wrt_sigma(ws, upstream_d, contrib);
      backprop_to_vertices(grid, ws, contrib, buf);
    }
  });

  for (int w = 0; w < n_workers; ++w)
    if (bad_ray[w] >= 0)
      throw std::runtime_error("mapping_step: non-finite loss at keyframe " +
                               std::to_string(batch[bad_ray[w]].frame) + " pixel (" +
                               std::to_string(batch[bad_ray[w]].px) + "," +
                               std::to_string(batch[bad_ray[w]].py) + ")");

  // Fixed merge order: workers in index order, vertices sorted within each.
  GradientBuffer& total = buffers[0];
  for (int w = 1; w < n_workers; ++w) buffers[w].merge_into(total);

  for (int w = 0; w < n_workers; ++w) {
    stats.loss_photometric += lp_parts[w];
    stats.loss_geometric += lg_parts[w];
  }
  stats.loss_photometric /= double(m_color);
  stats.loss_geometric = m_depth > 0 ? stats.loss_geometric / double(m_depth) : 0.0;
  stats.loss_total = stats.loss_photometric + config.lambda_d * stats.loss_geometric;
  stats.psnr_estimate = psnr_from_lp(stats.loss_photometric);

  // Sparse RMSProp update over the touched parameters.
  if (rmsprop.v.size() != grid.data().size()) rmsprop.reset(grid.data().size());
  const double rho = config.rmsprop_decay;
  for (const std::uint32_t vtx : total.sorted_touched()) {
    const double* g = total.grad(vtx);
    double* theta = grid.vertex(vtx);
    double* v = rmsprop.v.data() + std::size_t(vtx) * kPayloadSize;
    for (int c = 0; c < kPayloadSize; ++c) {
      if (g[c] == 0.0) continue;  // zero gradient leaves parameter and state alone
      v[c] = rho * v[c] + (1.0 - rho) * g[c] * g[c];
      const double lr = (c == 0) ? config.lr_sigma : config.lr_sh;
      theta[c] -= lr * g[c] / std::sqrt(v[c] + config.rmsprop_eps);
    }
  }
  return stats;
}

GridGeometry fit_grid_geometry(const Dataset& dataset,
                               const std::vector<const Frame*>& keyframes,
                               const MappingConfig& config) {
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  auto grow = [&](const Eigen::Vector3d& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  };
  const CameraIntrinsics& intr = dataset.intrinsics;
  for (const Frame* f : keyframes) {
    if (!f->gt_pose) continue;
    grow(f->gt_pose->t);
    for (int y = 0; y < intr.height; y += 8)
      for (int x = 0; x < intr.width; x += 8) {
        const double d = f->depth.at(x, y);
        if (!(d > 0.0)) continue;
        const Ray ray = generate_ray(intr, *f->gt_pose, x, y);
        grow(ray.o + double(d) * ray.d);
      }
  }
  if (!lo.allFinite() || !hi.allFinite())
    throw std::runtime_error("fit_grid_geometry: no valid depth to bound the scene");

  const Eigen::Vector3d extent = hi - lo;
  const Eigen::Vector3d margin = extent * config.bounds_margin;
  lo -= margin;
  hi += margin;

  GridGeometry geom;
  const double longest = (hi - lo).maxCoeff();
  geom.voxel_size = longest / double(config.initial_resolution - 1);
  for (int a = 0; a < 3; ++a) {
    const int cells = std::max(1, int(std::ceil((hi[a] - lo[a]) / geom.voxel_size - 1e-9)));
    geom.res[a] = cells + 1;
    // Center the covered span on the data bounds.
    const double slack = cells * geom.voxel_size - (hi[a] - lo[a]);
    geom.origin[a] = lo[a] - 0.5 * slack;
  }
  geom.validate();
  return geom;
}

MapResult map_scene(const Dataset& dataset, const MappingConfig& config,
                    const std::optional<GridGeometry>& geometry) {
  if (dataset.frames.empty()) throw std::runtime_error("map_scene: empty dataset");
  std::vector<const Frame*> keyframes;
  for (std::size_t i = 0; i < dataset.frames.size(); i += config.keyframe_stride) {
    if (!dataset.frames[i].gt_pose)
      throw std::runtime_error("map_scene: keyframe " + std::to_string(i) + " has no pose");
    keyframes.push_back(&dataset.frames[i]);
  }

  const GridGeometry geom =
      geometry ? *geometry : fit_grid_geometry(dataset, keyframes, config);
  MapResult result{VoxelGrid(geom, config.sigma_init), {}};

  Rng rng(config.seed);
  RmspropState rmsprop;
  const auto t0 = std::chrono::steady_clock::now();
  int iteration = 0;
  for (int stage = 0; stage <= config.upsample_stages; ++stage) {
    if (stage > 0) {
      result.grid = result.grid.upsampled(config.max_resolution);
      rmsprop.reset(result.grid.data().size());
    }
    for (int it = 0; it < config.iterations_per_stage; ++it, ++iteration) {
      const MapStepStats stats =
          mapping_step(result.grid, keyframes, dataset.intrinsics, config, rmsprop, rng);
      if (config.prune_every > 0 && (iteration + 1) % config.prune_every == 0)
        result.grid.prune(config.prune_threshold);
      MapLogRow row;
      row.iteration = iteration;
      row.stats = stats;
      row.elapsed_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
              .count();
      result.log.push_back(row);
    }
  }
  return result;
}

void write_map_log_csv(const std::filesystem::path& path,
                       const std::vector<MapLogRow>& log, const MappingConfig& config) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os << "# config " << mapping_config_to_json(config).dump() << "\n";
  os << "iteration,L_p,L_g,L,psnr_estimate,elapsed_ms\n";
  os.precision(10);
  for (const MapLogRow& r : log)
    os << r.iteration << "," << r.stats.loss_photometric << "," << r.stats.loss_geometric
       << "," << r.stats.loss_total << "," << r.stats.psnr_estimate << "," << r.elapsed_ms
       << "\n";
}

}  // namespace voxrf
