#include "voxrf/tracking.hpp"

#include <chrono>
#include <cmath>

#include <nlohmann/json.hpp>

#include "voxrf/gradients.hpp"
#include "voxrf/parallel.hpp"

namespace voxrf {

using nlohmann::json;

TrackingConfig tracking_config_from_json(const json& j) {
  TrackingConfig c;
  c.rays_per_iteration = j.value("rays_per_iteration", c.rays_per_iteration);
  c.iterations = j.value("iterations", c.iterations);
  c.lr_omega = j.value("lr_omega", c.lr_omega);
  c.lr_tau = j.value("lr_tau", c.lr_tau);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.lambda_p = j.value("lambda_p", c.lambda_p);
  c.lambda_d = j.value("lambda_d", c.lambda_d);
  const std::string policy = j.value("init_policy", std::string("previous"));
  if (policy == "previous")
    c.init_policy = TrackingConfig::Init::kPreviousPose;
  else if (policy == "constant_velocity")
    c.init_policy = TrackingConfig::Init::kConstantVelocity;
  else
    throw std::runtime_error("tracking config: unknown init_policy '" + policy + "'");
  c.convergence_step = j.value("convergence_step", c.convergence_step);
  c.divergence_factor = j.value("divergence_factor", c.divergence_factor);
  c.divergence_patience = j.value("divergence_patience", c.divergence_patience);
  c.max_redraws = j.value("max_redraws", c.max_redraws);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  c.deterministic = j.value("deterministic", c.deterministic);
  c.render.step = j.value("render_step", c.render.step);
  c.render.t_near = j.value("t_near", c.render.t_near);
  c.render.t_far = j.value("t_far", c.render.t_far);
  c.render.termination_eps = j.value("termination_eps", c.render.termination_eps);
  if (c.rays_per_iteration < 1 || c.iterations < 0)
    throw std::runtime_error("tracking config: bad counts");
  if (c.lr_omega < 0 || c.lr_tau < 0) throw std::runtime_error("tracking config: bad rates");
  return c;
}

json tracking_config_to_json(const TrackingConfig& c) {
  return json{{"rays_per_iteration", c.rays_per_iteration},
              {"iterations", c.iterations},
              {"lr_omega", c.lr_omega},
              {"lr_tau", c.lr_tau},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"lambda_p", c.lambda_p},
              {"lambda_d", c.lambda_d},
              {"init_policy", c.init_policy == TrackingConfig::Init::kPreviousPose
                                  ? "previous"
                                  : "constant_velocity"},
              {"convergence_step", c.convergence_step},
              {"divergence_factor", c.divergence_factor},
              {"divergence_patience", c.divergence_patience},
              {"max_redraws", c.max_redraws},
              {"seed", c.seed},
              {"threads", c.threads},
              {"deterministic", c.deterministic},
              {"render_step", c.render.step},
              {"t_near", c.render.t_near},
              {"t_far", c.render.t_far},
              {"termination_eps", c.render.termination_eps}};
}

PoseGradient pose_gradient(const VoxelGrid& grid, const Frame& frame,
                           const CameraIntrinsics& intrinsics, const Pose& pose,
                           const std::vector<PixelSample>& pixels,
                           const TrackingConfig& config) {
  const int n = int(pixels.size());
  if (n == 0) throw std::runtime_error("pose_gradient: empty pixel set");
  const int threads = config.effective_threads();

  // Pass 1: schedules fix the set of contributing rays and hence the 1/M
  // normalization before any gradient is formed.
  std::vector<SampleSchedule> schedules(n);
  std::vector<std::uint8_t> hits(n, 0);
  parallel_chunks(n, threads, [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t i = begin; i < end; ++i) {
      const Ray ray = generate_ray(intrinsics, pose, pixels[i].px, pixels[i].py);
      sample_ray(grid, ray, config.render, schedules[i]);
      hits[i] = schedules[i].empty() ? 0 : 1;
    }
  });
  int m = 0;
  for (int i = 0; i < n; ++i) m += hits[i];
  if (m == 0) throw std::runtime_error("untrackable frame: all sampled rays miss the grid");

  const int n_workers = std::max(1, std::min<int>(resolve_threads(threads), n));
  std::vector<Eigen::Vector3d> d_o(n_workers, Eigen::Vector3d::Zero());
  std::vector<Eigen::Vector3d> d_d_omega(n_workers, Eigen::Vector3d::Zero());
  std::vector<double> losses(n_workers, 0.0);

  parallel_chunks(n, threads, [&](std::size_t begin, std::size_t end, int worker) {
    RayWorkspace ws;
    for (std::size_t i = begin; i < end; ++i) {
      if (!hits[i]) continue;
      const Ray ray = generate_ray(intrinsics, pose, pixels[i].px, pixels[i].py);
      render_ray_scheduled(grid, ray, schedules[i], config.render, ws);

      const Eigen::Vector3d target(frame.color.at(pixels[i].px, pixels[i].py, 0),
                                   frame.color.at(pixels[i].px, pixels[i].py, 1),
                                   frame.color.at(pixels[i].px, pixels[i].py, 2));
      const double target_d = frame.depth.at(pixels[i].px, pixels[i].py);
      const Eigen::Vector3d cres = ws.color_out - target;
      const double dres = ws.depth_out - target_d;
      losses[worker] += (config.lambda_p * cres.squaredNorm() + config.lambda_d * dres * dres);

      const Eigen::Vector3d upstream_c = config.lambda_p * 2.0 * cres / double(m);
      const double upstream_d = config.lambda_d * 2.0 * dres / double(m);
      const PoseGradContribution rg = grad_wrt_ray(grid, ws, upstream_c, upstream_d);

      // Translation moves the origin only; rotation about the camera center
      // turns d, with the radial component projected out (d stays unit).
      d_o[worker] += rg.d_origin;
      const Eigen::Vector3d g_perp =
          rg.d_direction - ray.d * ray.d.dot(rg.d_direction);
      d_d_omega[worker] += ray.d.cross(g_perp);
    }
  });

  PoseGradient out;
  out.rays_used = m;
  for (int w = 0; w < n_workers; ++w) {  // fixed reduction order
    out.d_tau += d_o[w];
    out.d_omega += d_d_omega[w];
    out.loss += losses[w];
  }
  out.loss /= double(m);
  if (!std::isfinite(out.loss) || !out.d_tau.allFinite() || !out.d_omega.allFinite())
    throw std::runtime_error("pose_gradient: non-finite result");
  return out;
}

namespace {

std::vector<PixelSample> draw_valid_pixels(const Frame& frame, int count, int max_redraws,
                                           Rng& rng) {
  std::vector<PixelSample> pixels;
  pixels.reserve(count);
  const int w = frame.depth.width, h = frame.depth.height;
  for (int i = 0; i < count; ++i) {
    PixelSample s;
    bool ok = false;
    for (int attempt = 0; attempt < max_redraws; ++attempt) {
      s.px = int(rng.uniform_index(std::uint64_t(w)));
      s.py = int(rng.uniform_index(std::uint64_t(h)));
      if (frame.depth_valid(s.px, s.py)) {
        ok = true;
        break;
      }
    }
    if (ok) pixels.push_back(s);
  }
  return pixels;
}

}  // namespace

TrackFrameResult track_frame(const VoxelGrid& grid, const Frame& frame,
                             const CameraIntrinsics& intrinsics, const Pose& init,
                             const TrackingConfig& config) {
  TrackFrameResult result;
  result.pose = init;
  if (config.iterations == 0) return result;

  Rng rng(config.seed);
  Pose pose = init;
  Pose best_pose = init;
  double best_loss = std::numeric_limits<double>::infinity();
  double initial_loss = 0.0;
  int over_budget_streak = 0;

  Eigen::Matrix<double, 6, 1> m_adam = Eigen::Matrix<double, 6, 1>::Zero();
  Eigen::Matrix<double, 6, 1> v_adam = Eigen::Matrix<double, 6, 1>::Zero();

  for (int it = 0; it < config.iterations; ++it) {
    const std::vector<PixelSample> pixels =
        draw_valid_pixels(frame, config.rays_per_iteration, config.max_redraws, rng);
    if (pixels.empty())
      throw std::runtime_error("track_frame: no valid-depth pixels to sample");

    const PoseGradient g = pose_gradient(grid, frame, intrinsics, pose, pixels, config);
    result.loss_trace.push_back(g.loss);
    ++result.iterations_run;
    if (it == 0) initial_loss = g.loss;
    if (g.loss < best_loss) {
      best_loss = g.loss;
      best_pose = pose;
    }

    if (g.loss > config.divergence_factor * initial_loss) {
      if (++over_budget_streak >= config.divergence_patience) {
        result.pose = init;
        result.failed = true;
        return result;
      }
    } else {
      over_budget_streak = 0;
    }

    Eigen::Matrix<double, 6, 1> grad;
    grad << g.d_omega, g.d_tau;
    m_adam = config.beta1 * m_adam + (1.0 - config.beta1) * grad;
    v_adam = config.beta2 * v_adam +
             (1.0 - config.beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(config.beta1, it + 1);
    const double bc2 = 1.0 - std::pow(config.beta2, it + 1);

    PosePerturbation update;
    for (int k = 0; k < 6; ++k) {
      const double mhat = m_adam[k] / bc1;
      const double vhat = v_adam[k] / bc2;
      const double lr = k < 3 ? config.lr_omega : config.lr_tau;
      const double step = -lr * mhat / (std::sqrt(vhat) + config.adam_eps);
      if (k < 3)
        update.omega[k] = step;
      else
        update.tau[k - 3] = step;
    }
    pose = update.applied_to(pose);  // renormalizes the quaternion

    if (config.convergence_step > 0.0 && update.omega.norm() < config.convergence_step &&
        update.tau.norm() < config.convergence_step)
      break;
  }

  // Evaluate the final iterate so the best-pose selection can see it.
  {
    const std::vector<PixelSample> pixels =
        draw_valid_pixels(frame, config.rays_per_iteration, config.max_redraws, rng);
    if (!pixels.empty()) {
      const PoseGradient g = pose_gradient(grid, frame, intrinsics, pose, pixels, config);
      if (g.loss < best_loss) {
        best_loss = g.loss;
        best_pose = pose;
      }
    }
  }
  result.pose = best_pose;
  return result;
}

TrackSequenceResult track_sequence(const VoxelGrid& grid, const Dataset& dataset,
                                   const TrackingConfig& config) {
  if (dataset.frames.empty()) throw std::runtime_error("track_sequence: empty dataset");
  if (!dataset.frames.front().gt_pose)
    throw std::runtime_error("track_sequence: first frame needs a pose");

  TrackSequenceResult result;
  const Pose first = *dataset.frames.front().gt_pose;
  result.trajectory.push(dataset.frames.front().timestamp, first);
  result.status.push_back({0, 0, 0.0, 0.0, false});

  Pose prev = first;
  Pose prev_prev = first;
  bool have_two = false;

  for (std::size_t i = 1; i < dataset.frames.size(); ++i) {
    Pose init = prev;
    if (config.init_policy == TrackingConfig::Init::kConstantVelocity && have_two)
      init = prev * (prev_prev.inverse() * prev);  // replay the last relative motion

    TrackingConfig frame_config = config;
    frame_config.seed = config.seed + 0x9e3779b9u * std::uint64_t(i);

    const auto t0 = std::chrono::steady_clock::now();
    const TrackFrameResult tf =
        track_frame(grid, dataset.frames[i], dataset.intrinsics, init, frame_config);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();

    result.trajectory.push(dataset.frames[i].timestamp, tf.pose);
    result.status.push_back({int(i), tf.iterations_run,
                             tf.loss_trace.empty() ? 0.0 : tf.loss_trace.back(), ms,
                             tf.failed});
    if (!tf.failed) {
      prev_prev = prev;
      prev = tf.pose;
      have_two = true;
    }
  }
  return result;
}

}  // namespace voxrf
