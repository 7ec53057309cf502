#include "voxrf/gradients.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "voxrf/rng.hpp"

namespace voxrf {

void GradientBuffer::resize(std::size_t num_vertices) {
  acc_.assign(num_vertices * kPayloadSize, 0.0);
  touched_flag_.assign(num_vertices, 0);
  touched_.clear();
  oob_ = 0;
}

void GradientBuffer::clear() {
  for (const std::uint32_t v : touched_) {
    double* g = acc_.data() + std::size_t(v) * kPayloadSize;
    std::fill(g, g + kPayloadSize, 0.0);
    touched_flag_[v] = 0;
  }
  touched_.clear();
  oob_ = 0;
}

void GradientBuffer::add(std::uint32_t vertex, const std::array<double, kPayloadSize>& g,
                         double scale) {
  double* dst = acc_.data() + std::size_t(vertex) * kPayloadSize;
  for (int i = 0; i < kPayloadSize; ++i) dst[i] += scale * g[i];
  if (!touched_flag_[vertex]) {
    touched_flag_[vertex] = 1;
    touched_.push_back(vertex);
  }
}

void GradientBuffer::scatter(const CellLocator& loc,
                             const std::array<double, kPayloadSize>& upstream) {
  for (int k = 0; k < 8; ++k) add(loc.corner[k], upstream, loc.weight[k]);
}

std::vector<std::uint32_t> GradientBuffer::sorted_touched() const {
  std::vector<std::uint32_t> v(touched_);
  std::sort(v.begin(), v.end());
  return v;
}

void GradientBuffer::merge_into(GradientBuffer& dst) const {
  for (const std::uint32_t v : sorted_touched()) {
    const double* src = acc_.data() + std::size_t(v) * kPayloadSize;
    std::array<double, kPayloadSize> g;
    std::copy(src, src + kPayloadSize, g.begin());
    dst.add(v, g, 1.0);
  }
  dst.oob_ += oob_;
}

void scatter_grad(GradientBuffer& buffer, const VoxelGrid& grid, const Eigen::Vector3d& p,
                  const std::array<double, kPayloadSize>& upstream) {
  CellLocator loc;
  if (!grid.try_locate(p, loc)) {
    buffer.note_out_of_bounds();
    return;
  }
  buffer.scatter(loc, upstream);
}

void grad_color_wrt_params(const RayWorkspace& ws, const Eigen::Vector3d& upstream,
                           MapGradContribution& contrib) {
  Eigen::Vector3d prefix = Eigen::Vector3d::Zero();  // sum_{j<=i} c_j w_j
  for (int i = 0; i < ws.count; ++i) {
    const double T_next =
        (i + 1 < ws.count) ? ws.transmittance[i + 1] : ws.transmittance_terminal;
    const double w = ws.weight[i];
    const Eigen::Vector3d& c = ws.color[i];
    prefix += c * w;
    double d_sigma = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
      contrib.d_color[i][ch] += upstream[ch] * w;
      d_sigma += upstream[ch] * ws.delta[i] * (c[ch] * T_next - ws.color_out[ch] + prefix[ch]);
    }
    contrib.d_sigma[i] += d_sigma;
  }
}

void grad_depth_wrt_sigma(const RayWorkspace& ws, double upstream,
                          MapGradContribution& contrib) {
  double prefix = 0.0;  // sum_{j<=i} t_j w_j
  for (int i = 0; i < ws.count; ++i) {
    const double T_next =
        (i + 1 < ws.count) ? ws.transmittance[i + 1] : ws.transmittance_terminal;
    prefix += ws.t[i] * ws.weight[i];
    contrib.d_sigma[i] +=
        upstream * ws.delta[i] * (ws.t[i] * T_next - ws.depth_out + prefix);
  }
}

void backprop_to_vertices(const VoxelGrid& grid, const RayWorkspace& ws,
                          const MapGradContribution& contrib, GradientBuffer& buffer) {
  std::array<double, kPayloadSize> up;
  for (int i = 0; i < ws.count; ++i) {
    up.fill(0.0);
    // Clamped activations propagate nothing.
    up[0] = ws.sigma_raw[i] > 0.0 ? contrib.d_sigma[i] : 0.0;
    for (int ch = 0; ch < 3; ++ch) {
      if (ws.clamped[i][ch]) continue;
      const double g = contrib.d_color[i][ch];
      for (int m = 0; m < kShCoeffCount; ++m)
        up[1 + ch * kShCoeffCount + m] = g * ws.basis[m];
    }
    scatter_grad(buffer, grid, ws.position[i], up);
  }
}

PoseGradContribution grad_wrt_ray(const VoxelGrid& grid, const RayWorkspace& ws,
                                  const Eigen::Vector3d& upstream_color,
                                  double upstream_depth) {
  MapGradContribution contrib;
  contrib.resize_zero(ws.count);
  grad_color_wrt_params(ws, upstream_color, contrib);
  grad_depth_wrt_sigma(ws, upstream_depth, contrib);

  PoseGradContribution out;
  GridSampleGrad sg;
  CellLocator loc;
  for (int i = 0; i < ws.count; ++i) {
    if (!grid.try_locate(ws.position[i], loc)) continue;
    grid.trilerp_spatial_grad(loc, sg);
    Eigen::Vector3d g = Eigen::Vector3d::Zero();
    if (ws.sigma_raw[i] > 0.0) g += contrib.d_sigma[i] * sg.d_sigma;
    for (int ch = 0; ch < 3; ++ch) {
      if (ws.clamped[i][ch]) continue;
      Eigen::Vector3d grad_c = Eigen::Vector3d::Zero();
      const Eigen::Vector3d* dsh = sg.d_sh.data() + ch * kShCoeffCount;
      for (int m = 0; m < kShCoeffCount; ++m) grad_c += ws.basis[m] * dsh[m];
      g += contrib.d_color[i][ch] * grad_c;
    }
    out.d_origin += g;
    out.d_direction += ws.t[i] * g;
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string FdReport::to_text() const {
  std::ostringstream os;
  os.precision(12);
  os << "# index analytic numeric rel_err (eps=" << eps << ")\n";
  for (const auto& r : rows)
    os << r.index << " " << r.analytic << " " << r.numeric << " " << r.rel_err << "\n";
  os << "# max_rel_err " << max_rel_err << " at index " << worst.index << "\n";
  return os.str();
}

FdReport fd_check(const std::function<double(const std::vector<double>&)>& loss,
                  std::vector<double> params, const std::vector<double>& analytic,
                  double eps, double denom_floor) {
  if (analytic.size() != params.size())
    throw std::invalid_argument("fd_check: analytic size mismatch");
  FdReport report;
  report.eps = eps;
  report.rows.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + eps;
    const double f_plus = loss(params);
    params[i] = saved - eps;
    const double f_minus = loss(params);
    params[i] = saved;
    if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
      throw std::runtime_error("fd_check: non-finite loss");
    FdRow row;
    row.index = i;
    row.numeric = (f_plus - f_minus) / (2.0 * eps);
    row.analytic = analytic[i];
    row.rel_err = std::abs(row.analytic - row.numeric) /
                  std::max({std::abs(row.analytic), std::abs(row.numeric), denom_floor});
    report.rows.push_back(row);
    if (row.rel_err >= report.max_rel_err) {
      report.max_rel_err = row.rel_err;
      report.worst = row;
    }
  }
  return report;
}

namespace {

struct TrialSetup {
  VoxelGrid grid;
  Ray ray;
  SampleSchedule schedule;
  RenderParams params;
  Eigen::Vector3d target_color;
  double target_depth = 0.0;
};

bool slab_range(const GridGeometry& g, const Ray& ray, double& lo, double& hi) {
  lo = 0.0;
  hi = std::numeric_limits<double>::infinity();
  const Eigen::Vector3d bmin = g.world_min(), bmax = g.world_max();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(ray.d[a]) < 1e-12) {
      if (ray.o[a] < bmin[a] || ray.o[a] > bmax[a]) return false;
      continue;
    }
    double t0 = (bmin[a] - ray.o[a]) / ray.d[a];
    double t1 = (bmax[a] - ray.o[a]) / ray.d[a];
    if (t0 > t1) std::swap(t0, t1);
    lo = std::max(lo, t0);
    hi = std::min(hi, t1);
  }
  return lo < hi;
}

// The render loss is only piecewise smooth; reject configurations where a
// finite-difference step could cross a cell face, an activation clamp or the
// early-termination threshold.
bool margins_ok(const VoxelGrid& grid, const RayWorkspace& ws, double eps_T) {
  constexpr double kFracMargin = 1e-3;
  constexpr double kValueMargin = 1e-3;
  CellLocator loc;
  GridSample s;
  for (int i = 0; i < ws.count; ++i) {
    if (!grid.try_locate(ws.position[i], loc)) return false;
    for (int a = 0; a < 3; ++a)
      if (loc.frac[a] < kFracMargin || loc.frac[a] > 1.0 - kFracMargin) return false;
    grid.trilerp(loc, s);
    if (std::abs(s.sigma_raw) < kValueMargin) return false;
    for (int ch = 0; ch < 3; ++ch) {
      double pre = 0.5;
      for (int m = 0; m < kShCoeffCount; ++m)
        pre += s.sh[ch * kShCoeffCount + m] * ws.basis[m];
      if (std::abs(pre) < kValueMargin || std::abs(pre - 1.0) < kValueMargin) return false;
    }
    if (std::abs(ws.transmittance[i] / eps_T - 1.0) < 1e-2) return false;
  }
  if (std::abs(ws.transmittance_terminal / eps_T - 1.0) < 1e-2) return false;
  return true;
}

// Central differences resolve gradients down to roughly ulp(loss)/eps, about
// 1e-10 here; below this scale the comparison must be absolute. Entries under
// the floor are held to |analytic - numeric| < floor * tol.
constexpr double kGradFloor = 3e-5;

double render_loss(const VoxelGrid& grid, const Ray& ray, const SampleSchedule& schedule,
                   const RenderParams& params, const ShBasis* basis,
                   const Eigen::Vector3d& target_c, double target_d, double lambda_d) {
  RayWorkspace ws;
  render_ray_scheduled(grid, ray, schedule, params, ws, basis);
  return (ws.color_out - target_c).squaredNorm() +
         lambda_d * (ws.depth_out - target_d) * (ws.depth_out - target_d);
}

}  // namespace

GradcheckResult run_render_gradcheck(const GradcheckOptions& opts) {
  Rng rng(opts.seed);
  GradcheckResult result;
  std::ostringstream report;
  report.precision(6);

  FdRow worst_map, worst_ray;
  int guard = 0;
  while (result.trials_run < opts.trials && guard < opts.trials * 60) {
    ++guard;
    GridGeometry geom;
    const int n = opts.grid_resolution;
    geom.res = Eigen::Vector3i(n, n, n);
    geom.voxel_size = rng.uniform(0.06, 0.15);
    geom.origin = Eigen::Vector3d(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4),
                                  rng.uniform(-0.4, 0.4));
    VoxelGrid grid(geom);
    for (std::int64_t v = 0; v < geom.num_vertices(); ++v) {
      double* payload = grid.vertex(std::uint32_t(v));
      payload[0] = rng.uniform() < 0.8 ? rng.uniform(0.3, 3.0) : rng.uniform(-1.5, -0.3);
      for (int ch = 0; ch < 3; ++ch) {
        payload[1 + ch * kShCoeffCount] = rng.uniform(-1.0, 1.0);
        for (int m = 1; m < kShCoeffCount; ++m)
          payload[1 + ch * kShCoeffCount + m] = rng.uniform(-0.12, 0.12);
      }
    }

    const Eigen::Vector3d center = 0.5 * (geom.world_min() + geom.world_max());
    Ray ray;
    ray.d = rng.unit_vector();
    ray.o = center + Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()) *
                         (0.15 * geom.diagonal());
    double lo = 0.0, hi = 0.0;
    if (!slab_range(geom, ray, lo, hi)) {
      ++result.resampled;
      continue;
    }
    const double span = hi - lo;
    lo += 0.1 * span;
    hi -= 0.1 * span;
    if (hi - lo < 0.3 * span) {
      ++result.resampled;
      continue;
    }

    TrialSetup trial{std::move(grid), ray, {}, {}, Eigen::Vector3d::Zero(), 0.0};
    const int n_samples = opts.samples_per_ray;
    const double step = (hi - lo) / n_samples;
    for (int i = 0; i < n_samples; ++i) {
      trial.schedule.t.push_back(lo + (i + 0.5) * step);
      trial.schedule.delta.push_back(step);
    }

    RayWorkspace ws;
    render_ray_scheduled(trial.grid, trial.ray, trial.schedule, trial.params, ws);
    if (ws.count != n_samples || !margins_ok(trial.grid, ws, trial.params.termination_eps)) {
      ++result.resampled;
      continue;
    }

    trial.target_color = ws.color_out + Eigen::Vector3d(rng.uniform(-0.3, 0.3),
                                                        rng.uniform(-0.3, 0.3),
                                                        rng.uniform(-0.3, 0.3));
    trial.target_depth = ws.depth_out + rng.uniform(-0.3, 0.3);

    // Analytic gradients.
    const Eigen::Vector3d upstream_c = 2.0 * (ws.color_out - trial.target_color);
    const double upstream_d =
        2.0 * opts.lambda_d * (ws.depth_out - trial.target_depth);
    MapGradContribution contrib;
    contrib.resize_zero(ws.count);
    grad_color_wrt_params(ws, upstream_c, contrib);
    grad_depth_wrt_sigma(ws, upstream_d, contrib);
    GradientBuffer buffer(std::size_t(geom.num_vertices()));
    backprop_to_vertices(trial.grid, ws, contrib, buffer);
    const PoseGradContribution pose_grad =
        grad_wrt_ray(trial.grid, ws, upstream_c, upstream_d);

    // Central differences over every touched vertex parameter.
    auto eval_map = [&]() {
      return render_loss(trial.grid, trial.ray, trial.schedule, trial.params, nullptr,
                         trial.target_color, trial.target_depth, opts.lambda_d);
    };
    for (const std::uint32_t v : buffer.sorted_touched()) {
      double* payload = trial.grid.vertex(v);
      for (int slot = 0; slot < kPayloadSize; ++slot) {
        const double saved = payload[slot];
        payload[slot] = saved + opts.eps;
        const double f_plus = eval_map();
        payload[slot] = saved - opts.eps;
        const double f_minus = eval_map();
        payload[slot] = saved;
        const double numeric = (f_plus - f_minus) / (2.0 * opts.eps);
        const double analytic = buffer.grad(v)[slot];
        const double rel = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
        if (rel >= result.max_rel_err_map) {
          result.max_rel_err_map = rel;
          worst_map = {std::size_t(v) * kPayloadSize + slot, analytic, numeric, rel};
        }
      }
    }

    // Ray origin: three axes.
    for (int a = 0; a < 3; ++a) {
      Ray r = trial.ray;
      r.o[a] += opts.eps;
      const double f_plus = render_loss(trial.grid, r, trial.schedule, trial.params,
                                        &ws.basis, trial.target_color, trial.target_depth,
                                        opts.lambda_d);
      r.o[a] = trial.ray.o[a] - opts.eps;
      const double f_minus = render_loss(trial.grid, r, trial.schedule, trial.params,
                                         &ws.basis, trial.target_color, trial.target_depth,
                                         opts.lambda_d);
      const double numeric = (f_plus - f_minus) / (2.0 * opts.eps);
      const double analytic = pose_grad.d_origin[a];
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
      if (rel >= result.max_rel_err_ray) {
        result.max_rel_err_ray = rel;
        worst_ray = {std::size_t(a), analytic, numeric, rel};
      }
    }

    // Ray direction: finite differences along the unit-sphere tangent with the
    // SH basis frozen, against the tangent-projected analytic gradient.
    Eigen::Vector3d e1 = trial.ray.d.cross(Eigen::Vector3d(1, 0, 0));
    if (e1.squaredNorm() < 1e-6) e1 = trial.ray.d.cross(Eigen::Vector3d(0, 1, 0));
    e1.normalize();
    const Eigen::Vector3d e2 = trial.ray.d.cross(e1).normalized();
    const Eigen::Vector3d g_tangent =
        pose_grad.d_direction -
        trial.ray.d * (trial.ray.d.dot(pose_grad.d_direction));
    for (const Eigen::Vector3d& e : {e1, e2}) {
      Ray r = trial.ray;
      r.d = (trial.ray.d + opts.eps * e).normalized();
      const double f_plus = render_loss(trial.grid, r, trial.schedule, trial.params,
                                        &ws.basis, trial.target_color, trial.target_depth,
                                        opts.lambda_d);
      r.d = (trial.ray.d - opts.eps * e).normalized();
      const double f_minus = render_loss(trial.grid, r, trial.schedule, trial.params,
                                         &ws.basis, trial.target_color, trial.target_depth,
                                         opts.lambda_d);
      const double numeric = (f_plus - f_minus) / (2.0 * opts.eps);
      const double analytic = g_tangent.dot(e);
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
      if (rel >= result.max_rel_err_ray) {
        result.max_rel_err_ray = rel;
        worst_ray = {std::size_t(3), analytic, numeric, rel};
      }
    }

    ++result.trials_run;
  }

  report << "gradcheck trials=" << result.trials_run << " resampled=" << result.resampled
         << "\n";
  report << "map params: max_rel_err=" << result.max_rel_err_map
         << " (analytic=" << worst_map.analytic << " numeric=" << worst_map.numeric
         << " index=" << worst_map.index << ")\n";
  report << "ray params: max_rel_err=" << result.max_rel_err_ray
         << " (analytic=" << worst_ray.analytic << " numeric=" << worst_ray.numeric
         << " axis=" << worst_ray.index << ")\n";
  result.passed = result.trials_run == opts.trials &&
                  result.max_rel_err_map < opts.tol_map &&
                  result.max_rel_err_ray < opts.tol_ray;
  report << (result.passed ? "PASS" : "FAIL") << " (tol map " << opts.tol_map << ", ray "
         << opts.tol_ray << ")\n";
  result.report_text = report.str();
  return result;
}

}  // namespace voxrf
