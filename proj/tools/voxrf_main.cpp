// voxrf: RGB-D mapping and 6-DoF tracking in a sparse voxel radiance field.
// Subcommands: synth, map, track, render, eval, gradcheck, sweep.
// Exit codes: 0 success, 2 input/config error, 3 runtime failure.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "voxrf/dataset.hpp"
#include "voxrf/eval.hpp"
#include "voxrf/gradients.hpp"
#include "voxrf/mapping.hpp"
#include "voxrf/tracking.hpp"

using namespace voxrf;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitRuntime = 3;

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw InputError("malformed JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

json maybe_config(const std::string& path) {
  if (path.empty()) return json::object();
  return read_json(path);
}

VoxelGrid load_grid_checked(const std::string& path) {
  try {
    return VoxelGrid::load(path);
  } catch (const std::exception& e) {
    throw InputError(e.what());
  }
}

Dataset load_dataset_checked(const std::string& dir) {
  try {
    return load_dataset(dir);
  } catch (const std::exception& e) {
    throw InputError(e.what());
  }
}

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(std::stoi(tok));
  }
  if (out.empty()) throw InputError("empty integer list: '" + csv + "'");
  return out;
}

// Shared flags; <0 / empty mean "not provided".
struct CommonArgs {
  std::string config_path;
  std::int64_t seed = -1;
  int threads = -1;
  bool deterministic = false;
  std::string out;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool out_required = true) {
  cmd->add_option("--config", args.config_path, "JSON config file (flags override it)");
  cmd->add_option("--seed", args.seed, "RNG seed (u64)");
  cmd->add_option("--threads", args.threads, "worker thread cap, 0 = all cores");
  cmd->add_flag("--deterministic", args.deterministic,
                "single-threaded ordered reductions for byte-stable outputs");
  auto* out = cmd->add_option("--out", args.out, "output path");
  if (out_required) out->required();
}

void apply_common(MappingConfig& cfg, const CommonArgs& args) {
  if (args.seed >= 0) cfg.seed = std::uint64_t(args.seed);
  if (args.threads >= 0) cfg.threads = args.threads;
  if (args.deterministic) cfg.deterministic = true;
}

void apply_common(TrackingConfig& cfg, const CommonArgs& args) {
  if (args.seed >= 0) cfg.seed = std::uint64_t(args.seed);
  if (args.threads >= 0) cfg.threads = args.threads;
  if (args.deterministic) cfg.deterministic = true;
}

// ---------------------------------------------------------------------------

int cmd_synth(const CommonArgs& common, const std::string& spec_path) {
  json spec_json = read_json(spec_path);
  if (common.seed >= 0) spec_json["seed"] = std::uint64_t(common.seed);

  const std::string generator = spec_json.value("generator", "primitives");
  Dataset dataset;
  json metadata;
  if (generator == "primitives") {
    SceneSpec spec;
    try {
      spec = scene_spec_from_json(spec_json);
    } catch (const std::exception& e) {
      throw InputError(e.what());
    }
    dataset = synth_from_primitives(spec);
    metadata = {{"generator", "primitives"}, {"seed", spec.seed}};
  } else if (generator == "grid") {
    if (!spec_json.contains("grid")) throw InputError("grid generator spec needs \"grid\"");
    const VoxelGrid grid = load_grid_checked(spec_json.at("grid").get<std::string>());
    SceneSpec spec;
    try {
      spec = scene_spec_from_json(spec_json);
    } catch (const std::exception& e) {
      throw InputError(e.what());
    }
    RenderParams params;
    params.step = spec_json.value("render_step", 0.0);
    dataset = synth_from_grid(grid, spec.trajectory.generate(), spec.intrinsics, params,
                              common.deterministic ? 1 : 0);
    metadata = {{"generator", "grid"},
                {"seed", spec.seed},
                {"grid_checksum", grid.checksum()}};
  } else {
    throw InputError("unknown generator '" + generator + "'");
  }
  metadata["frames"] = dataset.frames.size();
  save_dataset(common.out, dataset, &metadata);
  std::cout << "wrote " << dataset.frames.size() << " frames to " << common.out << "\n";
  return kExitOk;
}

int cmd_map(const CommonArgs& common, const std::string& dataset_dir,
            const std::string& log_path, MappingConfig cfg, const CLI::App* cmd) {
  const Dataset dataset = load_dataset_checked(dataset_dir);
  for (std::size_t i = 0; i < dataset.frames.size(); i += cfg.keyframe_stride)
    if (!dataset.frames[i].gt_pose) throw InputError("mapping requires poses.txt");

  MapResult result = map_scene(dataset, cfg);
  result.grid.save(common.out);
  if (!log_path.empty()) write_map_log_csv(log_path, result.log, cfg);
  (void)cmd;
  std::cout << "mapped " << dataset.frames.size() << " frames -> " << common.out
            << " (final L=" << (result.log.empty() ? 0.0 : result.log.back().stats.loss_total)
            << ")\n";
  return kExitOk;
}

int cmd_track(const CommonArgs& common, const std::string& grid_path,
              const std::string& dataset_dir, const std::string& status_path,
              TrackingConfig cfg) {
  const VoxelGrid grid = load_grid_checked(grid_path);
  const Dataset dataset = load_dataset_checked(dataset_dir);
  const TrackSequenceResult result = track_sequence(grid, dataset, cfg);
  save_tum(common.out, result.trajectory);
  if (!status_path.empty()) {
    std::ofstream os(status_path);
    os << "# config " << tracking_config_to_json(cfg).dump() << "\n";
    os << "frame,iterations,final_loss,elapsed_ms,failed\n";
    os.precision(10);
    for (const FrameStatus& s : result.status)
      os << s.frame << "," << s.iterations << "," << s.final_loss << "," << s.elapsed_ms
         << "," << (s.failed ? 1 : 0) << "\n";
  }
  int failures = 0;
  for (const FrameStatus& s : result.status) failures += s.failed ? 1 : 0;
  std::cout << "tracked " << result.trajectory.size() << " frames (" << failures
            << " failed) -> " << common.out << "\n";
  return kExitOk;
}

int cmd_render(const CommonArgs& common, const std::string& grid_path,
               const std::string& dataset_dir, int frame_index,
               const std::string& pose_str, int stride, double step) {
  const VoxelGrid grid = load_grid_checked(grid_path);
  const Dataset dataset = load_dataset_checked(dataset_dir);
  Pose pose;
  if (!pose_str.empty()) {
    std::istringstream ss(pose_str);
    double tx, ty, tz, qx, qy, qz, qw;
    if (!(ss >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
      throw InputError("--pose expects \"tx ty tz qx qy qz qw\"");
    pose.t = {tx, ty, tz};
    pose.q = Eigen::Quaterniond(qw, qx, qy, qz).normalized();
  } else {
    if (frame_index < 0 || frame_index >= int(dataset.frames.size()))
      throw InputError("--frame out of range");
    if (!dataset.frames[frame_index].gt_pose)
      throw InputError("frame has no pose; pass --pose");
    pose = *dataset.frames[frame_index].gt_pose;
  }
  RenderParams params;
  params.step = step;
  const Frame rendered = render_image(grid, dataset.intrinsics, pose, params, stride,
                                      common.deterministic ? 1 : common.threads);
  write_color_png(common.out + "_color.png", rendered.color);
  write_depth_png(common.out + "_depth.png", rendered.depth, dataset.intrinsics.depth_scale);
  std::cout << "rendered " << rendered.color.width << "x" << rendered.color.height
            << " -> " << common.out << "_{color,depth}.png\n";
  return kExitOk;
}

int cmd_eval(const CommonArgs& common, const std::string& est_path,
             const std::string& ref_path, const std::string& grid_path,
             const std::string& dataset_dir, double rpe_interval, bool text,
             std::int64_t eval_seed) {
  MetricReport report;
  json config_echo;
  if (!est_path.empty() || !ref_path.empty()) {
    if (est_path.empty() || ref_path.empty())
      throw InputError("trajectory eval needs both --est and --ref");
    Trajectory est, ref;
    try {
      est = load_tum(est_path);
      ref = load_tum(ref_path);
    } catch (const std::exception& e) {
      throw InputError(e.what());
    }
    report.ate_rmse_m = ate_rmse(est, ref, true, &report.pose_pairs);
    report.ate_unaligned_m = ate_rmse(est, ref, false);
    try {
      const RpeResult r = rpe(est, ref, rpe_interval);
      report.rpe_t_m = r.rpe_t;
      report.rpe_r_deg = r.rpe_r_deg;
      report.rpe_pairs = r.pairs;
    } catch (const std::exception&) {
      // Path shorter than the interval; RPE stays unavailable.
    }
    config_echo["rpe_interval_m"] = rpe_interval;
  }
  if (!grid_path.empty()) {
    if (dataset_dir.empty()) throw InputError("map eval needs --dataset");
    const VoxelGrid grid = load_grid_checked(grid_path);
    const Dataset dataset = load_dataset_checked(dataset_dir);
    MapQualityOptions options;
    if (eval_seed >= 0) options.sampling.seed = std::uint64_t(eval_seed);
    options.threads = common.deterministic ? 1 : common.threads;
    std::vector<int> indices(dataset.frames.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = int(i);
    const MapQuality q = evaluate_map_quality(grid, dataset, indices, options);
    report.psnr_db = q.psnr_db;
    report.depth_l1_m = q.depth_l1_m;
    report.color_samples = q.color_samples;
    report.depth_pixels = q.depth_pixels;
    config_echo["sampling_seed"] = options.sampling.seed;
  }
  if (!report.ate_rmse_m && !report.psnr_db)
    throw InputError("nothing to evaluate: pass --est/--ref and/or --grid/--dataset");

  json out = report.to_json();
  out["config"] = config_echo;
  if (!common.out.empty()) std::ofstream(common.out) << out.dump(2) << "\n";
  if (text || common.out.empty()) std::cout << report.to_text();
  return kExitOk;
}

int cmd_gradcheck(const CommonArgs& common, GradcheckOptions opts) {
  if (common.seed >= 0) opts.seed = std::uint64_t(common.seed);
  const GradcheckResult result = run_render_gradcheck(opts);
  if (!common.out.empty()) std::ofstream(common.out) << result.report_text;
  std::cout << result.report_text;
  return result.passed ? kExitOk : kExitRuntime;
}

int cmd_sweep(const CommonArgs& common, const std::string& grid_path,
              const std::string& dataset_dir, const std::string& rays_csv,
              const std::string& iters_csv, int repeats, TrackingConfig cfg) {
  const VoxelGrid grid = load_grid_checked(grid_path);
  const Dataset dataset = load_dataset_checked(dataset_dir);
  const SweepResult sweep = speed_accuracy_sweep(grid, dataset, parse_int_list(rays_csv),
                                                 parse_int_list(iters_csv), cfg, repeats);
  write_sweep_csv(common.out, sweep);
  std::cout << "sweep rows: " << sweep.rows.size()
            << " spearman(rays, ate) = " << sweep.spearman_rays_vs_ate << " -> "
            << common.out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RGB-D mapping and tracking in a sparse voxel radiance field"};
  app.require_subcommand(1);

  // synth
  CommonArgs synth_args;
  std::string synth_spec;
  auto* synth = app.add_subcommand("synth", "generate a synthetic RGB-D dataset");
  synth->add_option("--spec", synth_spec, "scene spec JSON")->required();
  add_common(synth, synth_args);

  // map
  CommonArgs map_args;
  std::string map_dataset, map_log;
  double map_lambda_d = -1, map_lr_sigma = -1, map_lr_sh = -1, map_step = -1;
  int map_iters = -1, map_rays = -1, map_res = -1, map_stages = -1, map_stride = -1,
      map_prune_every = -1;
  auto* map = app.add_subcommand("map", "optimize a grid from a posed RGB-D dataset");
  map->add_option("--dataset", map_dataset, "dataset directory")->required();
  map->add_option("--log", map_log, "training log CSV path");
  map->add_option("--lambda-d", map_lambda_d, "geometric loss weight (unitless)");
  map->add_option("--iterations", map_iters, "iterations per stage");
  map->add_option("--rays", map_rays, "rays per batch");
  map->add_option("--resolution", map_res, "initial vertices on the longest axis");
  map->add_option("--upsample-stages", map_stages, "number of nested 2x refinements");
  map->add_option("--keyframe-stride", map_stride, "use every k-th frame");
  map->add_option("--lr-sigma", map_lr_sigma, "density learning rate");
  map->add_option("--lr-sh", map_lr_sh, "SH learning rate");
  map->add_option("--step", map_step, "ray sampling step, meters (0 = voxel/2)");
  map->add_option("--prune-every", map_prune_every, "prune period in iterations (0 = off)");
  add_common(map, map_args);

  // track
  CommonArgs track_args;
  std::string track_grid, track_dataset, track_status, track_init;
  int track_iters = -1, track_rays = -1;
  double track_lr_omega = -1, track_lr_tau = -1, track_lambda_d = -1, track_lambda_p = -1;
  auto* track = app.add_subcommand("track", "frame-to-model pose tracking");
  track->add_option("--grid", track_grid, "grid file (.vxgf)")->required();
  track->add_option("--dataset", track_dataset, "dataset directory")->required();
  track->add_option("--status", track_status, "per-frame status CSV");
  track->add_option("--iterations", track_iters, "iterations per frame");
  track->add_option("--rays", track_rays, "rays per iteration");
  track->add_option("--init", track_init, "init policy: previous | constant_velocity");
  track->add_option("--lr-omega", track_lr_omega, "rotation learning rate, radians");
  track->add_option("--lr-tau", track_lr_tau, "translation learning rate, meters");
  track->add_option("--lambda-d", track_lambda_d, "geometric loss weight");
  track->add_option("--lambda-p", track_lambda_p, "photometric loss weight");
  add_common(track, track_args);

  // render
  CommonArgs render_args;
  std::string render_grid, render_dataset, render_pose;
  int render_frame = 0, render_stride = 1;
  double render_step = 0.0;
  auto* render = app.add_subcommand("render", "render color and depth from a grid");
  render->add_option("--grid", render_grid, "grid file")->required();
  render->add_option("--dataset", render_dataset, "dataset directory (intrinsics source)")
      ->required();
  render->add_option("--frame", render_frame, "render at this dataset frame's pose");
  render->add_option("--pose", render_pose, "explicit pose: \"tx ty tz qx qy qz qw\"");
  render->add_option("--stride", render_stride, "pixel stride (subsampled preview)");
  render->add_option("--step", render_step, "ray sampling step, meters (0 = voxel/2)");
  add_common(render, render_args);

  // eval
  CommonArgs eval_args;
  std::string eval_est, eval_ref, eval_grid, eval_dataset;
  double eval_interval = 1.0;
  bool eval_text = false;
  std::int64_t eval_seed = -1;
  auto* eval = app.add_subcommand("eval", "trajectory (ATE/RPE) and map (PSNR/L1) metrics");
  eval->add_option("--est", eval_est, "estimated trajectory (TUM)");
  eval->add_option("--ref", eval_ref, "reference trajectory (TUM)");
  eval->add_option("--grid", eval_grid, "grid file for map quality");
  eval->add_option("--dataset", eval_dataset, "dataset with reference images");
  eval->add_option("--interval", eval_interval, "RPE path interval, meters");
  eval->add_flag("--text", eval_text, "print the plain-text table");
  eval->add_option("--sample-seed", eval_seed, "pixel sampling seed");
  add_common(eval, eval_args, /*out_required=*/false);

  // gradcheck
  CommonArgs gc_args;
  GradcheckOptions gc_opts;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gradcheck->add_option("--trials", gc_opts.trials, "random configurations");
  gradcheck->add_option("--resolution", gc_opts.grid_resolution, "test grid vertices/axis");
  gradcheck->add_option("--samples", gc_opts.samples_per_ray, "samples per ray");
  gradcheck->add_option("--eps", gc_opts.eps, "finite-difference step");
  gradcheck->add_option("--lambda-d", gc_opts.lambda_d, "geometric loss weight");
  gradcheck->add_option("--tol-map", gc_opts.tol_map, "max rel. err for map parameters");
  gradcheck->add_option("--tol-ray", gc_opts.tol_ray, "max rel. err for ray parameters");
  add_common(gradcheck, gc_args, /*out_required=*/false);

  // sweep
  CommonArgs sweep_args;
  std::string sweep_grid, sweep_dataset, sweep_rays = "128,256,512,1024,2048",
                                         sweep_iters = "40";
  int sweep_repeats = 1;
  auto* sweep = app.add_subcommand("sweep", "speed-accuracy trade-off over ray budgets");
  sweep->add_option("--grid", sweep_grid, "grid file")->required();
  sweep->add_option("--dataset", sweep_dataset, "dataset directory")->required();
  sweep->add_option("--rays", sweep_rays, "comma-separated rays per iteration");
  sweep->add_option("--iters", sweep_iters, "comma-separated iteration counts");
  sweep->add_option("--repeats", sweep_repeats, "repeats per setting (seed-shifted)");
  add_common(sweep, sweep_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the message
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_args, synth_spec);

    if (map->parsed()) {
      MappingConfig cfg;
      try {
        cfg = mapping_config_from_json(maybe_config(map_args.config_path));
      } catch (const std::exception& e) {
        throw InputError(e.what());
      }
      apply_common(cfg, map_args);
      if (map_lambda_d >= 0) cfg.lambda_d = map_lambda_d;
      if (map_iters >= 0) cfg.iterations_per_stage = map_iters;
      if (map_rays >= 0) cfg.rays_per_batch = map_rays;
      if (map_res >= 0) cfg.initial_resolution = map_res;
      if (map_stages >= 0) cfg.upsample_stages = map_stages;
      if (map_stride >= 0) cfg.keyframe_stride = map_stride;
      if (map_lr_sigma >= 0) cfg.lr_sigma = map_lr_sigma;
      if (map_lr_sh >= 0) cfg.lr_sh = map_lr_sh;
      if (map_step >= 0) cfg.render.step = map_step;
      if (map_prune_every >= 0) cfg.prune_every = map_prune_every;
      return cmd_map(map_args, map_dataset, map_log, cfg, map);
    }

    if (track->parsed()) {
      TrackingConfig cfg;
      try {
        cfg = tracking_config_from_json(maybe_config(track_args.config_path));
        if (!track_init.empty()) {
          json j = tracking_config_to_json(cfg);
          j["init_policy"] = track_init;
          cfg = tracking_config_from_json(j);
        }
      } catch (const std::exception& e) {
        throw InputError(e.what());
      }
      apply_common(cfg, track_args);
      if (track_iters >= 0) cfg.iterations = track_iters;
      if (track_rays >= 0) cfg.rays_per_iteration = track_rays;
      if (track_lr_omega >= 0) cfg.lr_omega = track_lr_omega;
      if (track_lr_tau >= 0) cfg.lr_tau = track_lr_tau;
      if (track_lambda_d >= 0) cfg.lambda_d = track_lambda_d;
      if (track_lambda_p >= 0) cfg.lambda_p = track_lambda_p;
      return cmd_track(track_args, track_grid, track_dataset, track_status, cfg);
    }

    if (render->parsed())
      return cmd_render(render_args, render_grid, render_dataset, render_frame,
                        render_pose, render_stride, render_step);

    if (eval->parsed())
      return cmd_eval(eval_args, eval_est, eval_ref, eval_grid, eval_dataset,
                      eval_interval, eval_text, eval_seed);

    if (gradcheck->parsed()) return cmd_gradcheck(gc_args, gc_opts);

    if (sweep->parsed()) {
      TrackingConfig cfg;
      try {
        cfg = tracking_config_from_json(maybe_config(sweep_args.config_path));
      } catch (const std::exception& e) {
        throw InputError(e.what());
      }
      apply_common(cfg, sweep_args);
      return cmd_sweep(sweep_args, sweep_grid, sweep_dataset, sweep_rays, sweep_iters,
                       sweep_repeats, cfg);
    }
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitInput;
}
