#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "voxrf/renderer.hpp"
#include "voxrf/voxel_grid.hpp"

namespace voxrf {

// Dense per-parameter accumulator with a touched list, so sparse batches
// clear and merge in O(touched). Merging is done in vertex-index order to
// keep reductions reproducible.
class GradientBuffer {
 public:
  GradientBuffer() = default;
  explicit GradientBuffer(std::size_t num_vertices) { resize(num_vertices); }

  void resize(std::size_t num_vertices);
  void clear();

  void add(std::uint32_t vertex, const std::array<double, kPayloadSize>& g, double scale);
  void scatter(const CellLocator& loc, const std::array<double, kPayloadSize>& upstream);

  const double* grad(std::uint32_t vertex) const {
    return acc_.data() + std::size_t(vertex) * kPayloadSize;
  }
  std::vector<std::uint32_t> sorted_touched() const;
  std::size_t touched_count() const { return touched_.size(); }
  std::uint64_t out_of_bounds_count() const { return oob_; }
  void note_out_of_bounds() { ++oob_; }

  // Adds this buffer into dst, visiting vertices in sorted index order.
  void merge_into(GradientBuffer& dst) const;

 private:
  std::vector<double> acc_;
  std::vector<std::uint8_t> touched_flag_;
  std::vector<std::uint32_t> touched_;
  std::uint64_t oob_ = 0;
};

// Trilinear adjoint: distributes upstream over the 8 enclosing vertices.
// Out-of-bounds points are counted and ignored.
void scatter_grad(GradientBuffer& buffer, const VoxelGrid& grid, const Eigen::Vector3d& p,
                  const std::array<double, kPayloadSize>& upstream);

// Per-sample loss derivatives against the rendering inputs, prior to the
// activation and interpolation chain.
struct MapGradContribution {
  std::vector<double> d_sigma;             // dL/d sigma_i (effective density)
  std::vector<Eigen::Vector3d> d_color;    // dL/d c_i (post-clamp sample color)

  void resize_zero(int n) {
    d_sigma.assign(n, 0.0);
    d_color.assign(n, Eigen::Vector3d::Zero());
  }
};

// dC/dc_i = w_i and dC/dsigma_i = delta_i [c_i T_{i+1} - C + sum_{j<=i} c_j w_j],
// contracted with upstream = dL/dC. Accumulates into contrib.
void grad_color_wrt_params(const RayWorkspace& ws, const Eigen::Vector3d& upstream,
                           MapGradContribution& contrib);

// Depth analogue with t_i in place of c_i; adds into contrib.d_sigma.
void grad_depth_wrt_sigma(const RayWorkspace& ws, double upstream,
                          MapGradContribution& contrib);

// Chains contributions through the density activation, the color clamp, the
// SH basis and the trilinear adjoint into vertex-parameter slots.
void backprop_to_vertices(const VoxelGrid& grid, const RayWorkspace& ws,
                          const MapGradContribution& contrib, GradientBuffer& buffer);

struct PoseGradContribution {
  Eigen::Vector3d d_origin{0, 0, 0};     // dL/do
  Eigen::Vector3d d_direction{0, 0, 0};  // dL/dd, SH basis held fixed
};

// Ray-path chain rule: per-sample spatial gradients weighted by the Eq. 8-10
// factors, accumulated with dp_i/do = I and dp_i/dd = t_i.
PoseGradContribution grad_wrt_ray(const VoxelGrid& grid, const RayWorkspace& ws,
                                  const Eigen::Vector3d& upstream_color,
                                  double upstream_depth);

// ---------------------------------------------------------------------------
// Finite-difference verification harness

struct FdRow {
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct FdReport {
  std::vector<FdRow> rows;
  FdRow worst;
  double max_rel_err = 0.0;
  double eps = 0.0;

  std::string to_text() const;
};

// Central differences of `loss` against `analytic`, per parameter. The loss
// must be deterministic; non-finite values throw. Relative error uses
// max(|analytic|, |numeric|, floor) as denominator.
FdReport fd_check(const std::function<double(const std::vector<double>&)>& loss,
                  std::vector<double> params, const std::vector<double>& analytic,
                  double eps, double denom_floor = 1e-7);

// Randomized end-to-end gradient check of the render loss
// |C - C*|^2 + lambda_d (D - D*)^2 over small random grids:
// analytic vertex/ray gradients vs central differences. Configurations whose
// samples sit too close to a cell face, an activation clamp or the
// termination threshold are resampled, since the loss is only piecewise
// smooth there.
struct GradcheckOptions {
  int trials = 100;
  int grid_resolution = 8;
  int samples_per_ray = 12;
  double lambda_d = 1.0;
  double eps = 1e-6;
  std::uint64_t seed = 12345;
  double tol_map = 1e-5;
  double tol_ray = 1e-4;
};

struct GradcheckResult {
  double max_rel_err_map = 0.0;
  double max_rel_err_ray = 0.0;
  int trials_run = 0;
  int resampled = 0;
  bool passed = false;
  std::string report_text;
};

GradcheckResult run_render_gradcheck(const GradcheckOptions& options);

}  // namespace voxrf
