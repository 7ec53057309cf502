#include "voxrf/renderer.hpp"

#include <cmath>

#include "voxrf/parallel.hpp"

namespace voxrf {

namespace {

// Slab test against the grid's world AABB. Returns false on a miss.
bool intersect_bounds(const GridGeometry& g, const Ray& ray, double& t_enter, double& t_exit) {
  const Eigen::Vector3d lo = g.world_min();
  const Eigen::Vector3d hi = g.world_max();
  t_enter = 0.0;
  t_exit = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(ray.d[a]) < 1e-15) {
      if (ray.o[a] < lo[a] || ray.o[a] > hi[a]) return false;
      continue;
    }
    double t0 = (lo[a] - ray.o[a]) / ray.d[a];
    double t1 = (hi[a] - ray.o[a]) / ray.d[a];
    if (t0 > t1) std::swap(t0, t1);
    t_enter = std::max(t_enter, t0);
    t_exit = std::min(t_exit, t1);
  }
  return t_enter < t_exit;
}

}  // namespace

void RayWorkspace::reset() {
  count = 0;
  hit = false;
  terminated_early = false;
  transmittance_terminal = 1.0;
  color_out.setZero();
  depth_out = 0.0;
  t.clear();
  delta.clear();
  sigma_raw.clear();
  sigma.clear();
  transmittance.clear();
  weight.clear();
  position.clear();
  color.clear();
  clamped.clear();
}

void sample_ray(const VoxelGrid& grid, const Ray& ray, const RenderParams& params,
                SampleSchedule& out) {
  out.clear();
  const GridGeometry& g = grid.geometry();
  const double step = params.effective_step(g);
  if (!(step > 0.0)) throw std::invalid_argument("sample_ray: step must be > 0");
  if (!(params.t_near >= 0.0) || params.effective_t_far(g) <= params.t_near)
    throw std::invalid_argument("sample_ray: need 0 <= t_near < t_far");

  double t_enter = 0.0, t_exit = 0.0;
  if (!intersect_bounds(g, ray, t_enter, t_exit)) return;
  const double lo = std::max(params.t_near, t_enter);
  const double hi = std::min(params.effective_t_far(g), t_exit);
  if (hi <= lo) return;

  const auto n_segments = static_cast<std::size_t>(std::ceil((hi - lo) / step - 1e-12));
  CellLocator loc;
  for (std::size_t k = 0; k < n_segments; ++k) {
    const double s0 = lo + double(k) * step;
    const double s1 = std::min(s0 + step, hi);
    const double len = s1 - s0;
    if (len < 1e-12) continue;
    const double tm = 0.5 * (s0 + s1);
    const Eigen::Vector3d p = ray.o + tm * ray.d;
    if (!grid.try_locate(p, loc)) continue;  // grazing FP edge; skip
    if (!grid.cell_active(g.cell_index(loc.cell.x(), loc.cell.y(), loc.cell.z()))) continue;
    out.t.push_back(tm);
    out.delta.push_back(len);
  }
}

void render_ray_scheduled(const VoxelGrid& grid, const Ray& ray,
                          const SampleSchedule& schedule, const RenderParams& params,
                          RayWorkspace& ws, const ShBasis* frozen_basis) {
  ws.reset();
  ws.ray = ray;
  ws.basis = frozen_basis ? *frozen_basis : sh_eval(ray.d);

  double T = 1.0;
  GridSample sample;
  CellLocator loc;
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const double ti = schedule.t[i];
    const double di = schedule.delta[i];
    const Eigen::Vector3d p = ray.o + ti * ray.d;
    loc = grid.locate(p);
    grid.trilerp(loc, sample);

    const double sigma = std::max(sample.sigma_raw, 0.0);
    const double decay = std::exp(-sigma * di);
    const double alpha = 1.0 - decay;
    const double w = T * alpha;

    Eigen::Vector3d c;
    std::array<bool, 3> clamped_ch{};
    for (int ch = 0; ch < kColorChannels; ++ch) {
      double v = 0.5;
      const double* coeff = sample.sh.data() + ch * kShCoeffCount;
      for (int m = 0; m < kShCoeffCount; ++m) v += coeff[m] * ws.basis[m];
      clamped_ch[ch] = (v <= 0.0 || v >= 1.0);
      c[ch] = std::clamp(v, 0.0, 1.0);
    }

    ws.t.push_back(ti);
    ws.delta.push_back(di);
    ws.sigma_raw.push_back(sample.sigma_raw);
    ws.sigma.push_back(sigma);
    ws.transmittance.push_back(T);
    ws.weight.push_back(w);
    ws.position.push_back(p);
    ws.color.push_back(c);
    ws.clamped.push_back(clamped_ch);

    ws.color_out += w * c;
    ws.depth_out += w * ti;

    T *= decay;
    if (T < params.termination_eps) {
      ws.terminated_early = true;
      break;
    }
  }
  ws.count = int(ws.t.size());
  ws.transmittance_terminal = T;
  ws.hit = ws.count > 0;
  if (!ws.hit) {
    ws.color_out.setZero();
    ws.depth_out = 0.0;
  }
}

void render_ray(const VoxelGrid& grid, const Ray& ray, const RenderParams& params,
                RayWorkspace& ws, const ShBasis* frozen_basis) {
  thread_local SampleSchedule schedule;
  sample_ray(grid, ray, params, schedule);
  render_ray_scheduled(grid, ray, schedule, params, ws, frozen_basis);
}

Frame render_image(const VoxelGrid& grid, const CameraIntrinsics& intr, const Pose& pose,
                   const RenderParams& params, int stride, int threads) {
  if (stride < 1) throw std::invalid_argument("render_image: stride must be >= 1");
  const int out_w = (intr.width + stride - 1) / stride;
  const int out_h = (intr.height + stride - 1) / stride;
  Frame frame;
  frame.color = ImageF(out_w, out_h, 3);
  frame.depth = ImageF(out_w, out_h, 1);
  frame.gt_pose = pose;

  parallel_chunks(std::size_t(out_w) * out_h, threads,
                  [&](std::size_t begin, std::size_t end, int) {
                    RayWorkspace ws;
                    for (std::size_t idx = begin; idx < end; ++idx) {
                      const int px = int(idx % out_w);
                      const int py = int(idx / out_w);
                      const Ray ray = generate_ray(intr, pose, double(px) * stride,
                                                   double(py) * stride);
                      render_ray(grid, ray, params, ws);
                      for (int ch = 0; ch < 3; ++ch)
                        frame.color.at(px, py, ch) = ws.color_out[ch];
                      frame.depth.at(px, py) = ws.hit ? ws.depth_out : 0.0;
                    }
                  });
  return frame;
}

}  // namespace voxrf
