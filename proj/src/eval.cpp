#include "voxrf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "voxrf/renderer.hpp"
#include "voxrf/rng.hpp"

namespace voxrf {

using nlohmann::json;

json MetricReport::to_json() const {
  json j;
  auto put = [&j](const char* key, const std::optional<double>& v) {
    if (v)
      j[key] = *v;
    else
      j[key] = nullptr;
  };
  put("psnr_db", psnr_db);
  put("depth_l1_m", depth_l1_m);
  put("ate_rmse_m", ate_rmse_m);
  put("ate_unaligned_m", ate_unaligned_m);
  put("rpe_t_m", rpe_t_m);
  put("rpe_r_deg", rpe_r_deg);
  j["color_samples"] = color_samples;
  j["depth_pixels"] = depth_pixels;
  j["pose_pairs"] = pose_pairs;
  j["rpe_pairs"] = rpe_pairs;
  return j;
}

std::string MetricReport::to_text() const {
  std::ostringstream os;
  os.precision(6);
  auto row = [&os](const char* name, const std::optional<double>& v, const char* unit,
                   int count, const char* count_name) {
    os << std::left;
    os.width(16);
    os << name;
    if (v)
      os << *v << " " << unit;
    else
      os << "n/a";
    if (count > 0) os << "  (" << count << " " << count_name << ")";
    os << "\n";
  };
  row("psnr", psnr_db, "dB", color_samples, "samples");
  row("depth_l1", depth_l1_m, "m", depth_pixels, "pixels");
  row("ate_rmse", ate_rmse_m, "m", pose_pairs, "pairs");
  row("ate_unaligned", ate_unaligned_m, "m", pose_pairs, "pairs");
  row("rpe_t", rpe_t_m, "m", rpe_pairs, "pairs");
  row("rpe_r", rpe_r_deg, "deg", rpe_pairs, "pairs");
  return os.str();
}

double psnr(const std::vector<const ImageF*>& rendered,
            const std::vector<const ImageF*>& reference,
            const std::vector<const ImageF*>& valid_masks, const PixelSampleSpec& spec,
            int* samples_out) {
  if (rendered.empty() || rendered.size() != reference.size())
    throw std::runtime_error("psnr: empty or mismatched image sets");
  Rng rng(spec.seed);
  double sum_sq = 0.0;
  std::int64_t samples = 0;
  for (int i = 0; i < spec.images; ++i) {
    const std::size_t img = rng.uniform_index(rendered.size());
    const ImageF& a = *rendered[img];
    const ImageF& b = *reference[img];
    if (a.width != b.width || a.height != b.height)
      throw std::runtime_error("psnr: image dimensions differ");
    const ImageF* mask = valid_masks.empty() ? nullptr : valid_masks[img];
    for (int s = 0; s < spec.pixels_per_image; ++s) {
      const int x = int(rng.uniform_index(std::uint64_t(a.width)));
      const int y = int(rng.uniform_index(std::uint64_t(a.height)));
      if (mask && !(mask->at(x, y) > 0.0)) continue;
      for (int ch = 0; ch < 3; ++ch) {
        const double d = double(a.at(x, y, ch)) - double(b.at(x, y, ch));
        sum_sq += d * d;
      }
      ++samples;
    }
  }
  if (samples == 0) throw std::runtime_error("psnr: no valid pixels sampled");
  if (samples_out) *samples_out = int(samples);
  const double mse = sum_sq / double(samples * 3);
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double depth_l1(const std::vector<const ImageF*>& rendered,
                const std::vector<const ImageF*>& reference,
                const std::vector<const ImageF*>& valid_masks, int* pixels_out) {
  if (rendered.empty() || rendered.size() != reference.size())
    throw std::runtime_error("depth_l1: empty or mismatched image sets");
  double sum = 0.0;
  std::int64_t count = 0;
  for (std::size_t img = 0; img < rendered.size(); ++img) {
    const ImageF& a = *rendered[img];
    const ImageF& b = *reference[img];
    if (a.width != b.width || a.height != b.height)
      throw std::runtime_error("depth_l1: image dimensions differ");
    const ImageF* mask = valid_masks.empty() ? nullptr : valid_masks[img];
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x) {
        if (!(b.at(x, y) > 0.0)) continue;
        if (mask && !(mask->at(x, y) > 0.0)) continue;
        sum += std::abs(double(a.at(x, y)) - double(b.at(x, y)));
        ++count;
      }
  }
  if (count == 0) throw std::runtime_error("depth_l1: empty valid mask");
  if (pixels_out) *pixels_out = int(count);
  return sum / double(count);
}

std::vector<std::pair<int, int>> associate_trajectories(const Trajectory& estimate,
                                                        const Trajectory& reference,
                                                        double max_dt) {
  std::vector<std::pair<int, int>> pairs;
  int j = 0;
  for (int i = 0; i < int(estimate.size()); ++i) {
    const double ts = estimate.timestamps[i];
    while (j + 1 < int(reference.size()) &&
           std::abs(reference.timestamps[j + 1] - ts) <=
               std::abs(reference.timestamps[j] - ts))
      ++j;
    if (std::abs(reference.timestamps[j] - ts) <= max_dt) pairs.emplace_back(i, j);
  }
  return pairs;
}

double ate_rmse(const Trajectory& estimate, const Trajectory& reference, bool align,
                int* pairs_out) {
  const auto pairs = associate_trajectories(estimate, reference);
  if (pairs.size() < 2) throw std::runtime_error("ate_rmse: fewer than 2 matched poses");
  if (pairs_out) *pairs_out = int(pairs.size());

  const int n = int(pairs.size());
  Eigen::Matrix3Xd p_est(3, n), p_ref(3, n);
  for (int k = 0; k < n; ++k) {
    p_est.col(k) = estimate.poses[pairs[k].first].t;
    p_ref.col(k) = reference.poses[pairs[k].second].t;
  }

  Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
  Eigen::Vector3d trans = Eigen::Vector3d::Zero();
  if (align) {
    // Closed-form rigid alignment from the cross-covariance SVD (no scale).
    const Eigen::Vector3d c_est = p_est.rowwise().mean();
    const Eigen::Vector3d c_ref = p_ref.rowwise().mean();
    const Eigen::Matrix3d cov =
        (p_ref.colwise() - c_ref) * (p_est.colwise() - c_est).transpose();
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) flip(2, 2) = -1.0;
    rot = svd.matrixU() * flip * svd.matrixV().transpose();
    trans = c_ref - rot * c_est;
  }

  double sum_sq = 0.0;
  for (int k = 0; k < n; ++k)
    sum_sq += ((rot * p_est.col(k) + trans) - p_ref.col(k)).squaredNorm();
  return std::sqrt(sum_sq / n);
}

RpeResult rpe(const Trajectory& estimate, const Trajectory& reference, double interval_m) {
  const auto pairs = associate_trajectories(estimate, reference);
  if (pairs.size() < 2) throw std::runtime_error("rpe: fewer than 2 matched poses");

  // Cumulative path length along the reference.
  const int n = int(pairs.size());
  std::vector<double> cum(n, 0.0);
  for (int k = 1; k < n; ++k)
    cum[k] = cum[k - 1] + (reference.poses[pairs[k].second].t -
                           reference.poses[pairs[k - 1].second].t)
                              .norm();

  double sum_t = 0.0, sum_r = 0.0;
  int count = 0;
  int j = 0;
  for (int i = 0; i < n; ++i) {
    while (j < n && cum[j] - cum[i] < interval_m) ++j;
    if (j >= n) break;
    const Pose& pi = estimate.poses[pairs[i].first];
    const Pose& pj = estimate.poses[pairs[j].first];
    const Pose& qi = reference.poses[pairs[i].second];
    const Pose& qj = reference.poses[pairs[j].second];
    const Pose rel_err = (qi.inverse() * qj).inverse() * (pi.inverse() * pj);
    sum_t += rel_err.t.squaredNorm();
    const double angle = rotation_angle_rad(rel_err.q);
    sum_r += angle * angle;
    ++count;
  }
  if (count == 0) throw std::runtime_error("rpe: reference path shorter than the interval");
  RpeResult out;
  out.pairs = count;
  out.rpe_t = std::sqrt(sum_t / count);
  out.rpe_r_deg = std::sqrt(sum_r / count) * 180.0 / M_PI;
  return out;
}

MapQuality evaluate_map_quality(const VoxelGrid& grid, const Dataset& dataset,
                                const std::vector<int>& frame_indices,
                                const MapQualityOptions& options) {
  if (frame_indices.empty()) throw std::runtime_error("evaluate_map_quality: no frames");
  std::vector<Frame> renders;
  renders.reserve(frame_indices.size());
  for (const int idx : frame_indices) {
    const Frame& f = dataset.frames.at(idx);
    if (!f.gt_pose) throw std::runtime_error("evaluate_map_quality: frame without pose");
    renders.push_back(
        render_image(grid, dataset.intrinsics, *f.gt_pose, options.render, 1, options.threads));
  }

  std::vector<const ImageF*> rc, ref_c, rd, ref_d, masks;
  for (std::size_t k = 0; k < renders.size(); ++k) {
    const int idx = frame_indices[k];
    rc.push_back(&renders[k].color);
    ref_c.push_back(&dataset.frames[idx].color);
    rd.push_back(&renders[k].depth);
    const bool use_exact =
        options.prefer_exact_depth && idx < int(dataset.exact_depth.size()) &&
        !dataset.exact_depth[idx].empty();
    ref_d.push_back(use_exact ? &dataset.exact_depth[idx] : &dataset.frames[idx].depth);
    masks.push_back(&renders[k].depth);  // rendered hit mask (depth > 0)
  }

  MapQuality q;
  q.psnr_db = psnr(rc, ref_c, masks, options.sampling, &q.color_samples);
  q.depth_l1_m = depth_l1(rd, ref_d, masks, &q.depth_pixels);
  return q;
}

double spearman_rank_correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::runtime_error("spearman: need two equal-length series");
  auto ranks = [](const std::vector<double>& v) {
    const int n = int(v.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int x, int y) { return v[x] < v[y]; });
    std::vector<double> r(n, 0.0);
    int i = 0;
    while (i < n) {
      int j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * (i + j) + 1.0;  // average rank over ties
      for (int k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> ra = ranks(a), rb = ranks(b);
  const double n = double(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  if (da == 0 || db == 0) return 0.0;
  return num / std::sqrt(da * db);
}

SweepResult speed_accuracy_sweep(const VoxelGrid& grid, const Dataset& dataset,
                                 const std::vector<int>& ray_counts,
                                 const std::vector<int>& iteration_counts,
                                 const TrackingConfig& base_config, int repeats) {
  if (ray_counts.empty() || iteration_counts.empty() || repeats < 1)
    throw std::runtime_error("sweep: empty settings");
  const Trajectory reference = dataset.gt_trajectory();

  SweepResult result;
  for (const int iters : iteration_counts) {
    for (const int rays : ray_counts) {
      std::vector<double> ates;
      double rpe_t_sum = 0.0, rpe_r_sum = 0.0, ms_sum = 0.0;
      for (int rep = 0; rep < repeats; ++rep) {
        TrackingConfig cfg = base_config;
        cfg.rays_per_iteration = rays;
        cfg.iterations = iters;
        cfg.seed = base_config.seed + 1000003u * std::uint64_t(rep);
        const TrackSequenceResult run = track_sequence(grid, dataset, cfg);
        ates.push_back(ate_rmse(run.trajectory, reference, /*align=*/false));
        const RpeResult r = rpe(run.trajectory, reference, 1.0);
        rpe_t_sum += r.rpe_t;
        rpe_r_sum += r.rpe_r_deg;
        double ms = 0.0;
        for (const FrameStatus& s : run.status) ms += s.elapsed_ms;
        ms_sum += run.status.size() > 1 ? ms / double(run.status.size() - 1) : 0.0;
      }
      SweepRow row;
      row.rays = rays;
      row.iterations = iters;
      double mean = 0.0;
      for (double a : ates) mean += a;
      mean /= double(ates.size());
      double var = 0.0;
      for (double a : ates) var += (a - mean) * (a - mean);
      row.ate_m = mean;
      row.ate_std_m = ates.size() > 1 ? std::sqrt(var / double(ates.size() - 1)) : 0.0;
      row.rpe_t_m = rpe_t_sum / repeats;
      row.rpe_r_deg = rpe_r_sum / repeats;
      row.ms_per_frame = ms_sum / repeats;
      result.rows.push_back(row);
    }
  }

  std::vector<double> rays_series, ate_series;
  for (const SweepRow& r : result.rows) {
    rays_series.push_back(double(r.rays));
    ate_series.push_back(r.ate_m);
  }
  result.spearman_rays_vs_ate =
      result.rows.size() >= 2 ? spearman_rank_correlation(rays_series, ate_series) : 0.0;
  return result;
}

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& sweep) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os << "rays,iters,ate_m,ate_std_m,rpe_t_m,rpe_r_deg,ms_per_frame\n";
  os.precision(10);
  for (const SweepRow& r : sweep.rows)
    os << r.rays << "," << r.iterations << "," << r.ate_m << "," << r.ate_std_m << ","
       << r.rpe_t_m << "," << r.rpe_r_deg << "," << r.ms_per_frame << "\n";
  os << "# spearman_rays_vs_ate " << sweep.spearman_rays_vs_ate << "\n";
}

}  // namespace voxrf
