#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

namespace voxrf {

inline constexpr int kShCoeffCount = 9;   // real SH, degrees 0..2
inline constexpr int kColorChannels = 3;
inline constexpr int kShPerVertex = kShCoeffCount * kColorChannels;
inline constexpr int kPayloadSize = 1 + kShPerVertex;  // sigma + 27 SH

// Uniform vertex lattice; resolution counts vertices per axis, cells are
// res - 1 per axis. World mapping: g = (p - origin) / voxel_size.
struct GridGeometry {
  Eigen::Vector3i res{0, 0, 0};
  Eigen::Vector3d origin{0.0, 0.0, 0.0};
  double voxel_size = 0.0;

  void validate() const {
    if (res.minCoeff() < 2) throw std::invalid_argument("grid: resolution must be >= 2 per axis");
    if (!(voxel_size > 0.0)) throw std::invalid_argument("grid: voxel_size must be > 0");
  }

  std::int64_t num_vertices() const {
    return std::int64_t(res.x()) * res.y() * res.z();
  }
  std::int64_t num_cells() const {
    return std::int64_t(res.x() - 1) * (res.y() - 1) * (res.z() - 1);
  }

  Eigen::Vector3d to_grid(const Eigen::Vector3d& p) const {
    return (p - origin) / voxel_size;
  }
  Eigen::Vector3d to_world(const Eigen::Vector3d& g) const {
    return origin + g * voxel_size;
  }
  Eigen::Vector3d world_min() const { return origin; }
  Eigen::Vector3d world_max() const {
    return origin + (res.cast<double>() - Eigen::Vector3d::Ones()) * voxel_size;
  }
  double diagonal() const { return (world_max() - world_min()).norm(); }

  bool contains(const Eigen::Vector3d& p) const {
    const Eigen::Vector3d g = to_grid(p);
    for (int a = 0; a < 3; ++a)
      if (!(g[a] >= 0.0 && g[a] <= res[a] - 1.0)) return false;
    return true;
  }

  // x-fastest storage order.
  std::uint32_t vertex_index(int ix, int iy, int iz) const {
    return std::uint32_t(ix + res.x() * (iy + std::int64_t(res.y()) * iz));
  }
  std::uint32_t cell_index(int cx, int cy, int cz) const {
    return std::uint32_t(cx + (res.x() - 1) * (cy + std::int64_t(res.y() - 1) * cz));
  }
};

// One cell lookup shared by interpolation, its spatial derivative and the
// adjoint scatter. Points lying exactly on a cell face resolve to the
// lower-index cell. Corner order: bit 0 = +x, bit 1 = +y, bit 2 = +z.
struct CellLocator {
  Eigen::Vector3i cell;
  Eigen::Vector3d frac;  // in [0,1]^3
  std::array<std::uint32_t, 8> corner;
  std::array<double, 8> weight;  // non-negative, sums to 1
};

using ShBasis = std::array<double, kShCoeffCount>;

// Real spherical-harmonics basis, degrees 0-2. Requires |dir| = 1 within 1e-9.
ShBasis sh_eval(const Eigen::Vector3d& dir);

// Per-channel clamp(dot(sh, basis) + 0.5, 0, 1).
Eigen::Vector3d sh_color(const double* sh27, const ShBasis& basis);

// Trilinear polynomial over the unit cell:
//   v(x,y,z) = a0 + a1 x + a2 y + a3 z + a4 xy + a5 xz + a6 yz + a7 xyz
struct InterpCoeffs {
  std::array<double, 8> a{};

  // Corners in CellLocator order (bit 0 = +x, bit 1 = +y, bit 2 = +z).
  static InterpCoeffs from_corners(const std::array<double, 8>& v);

  double eval(double x, double y, double z) const {
    return a[0] + a[1] * x + a[2] * y + a[3] * z + a[4] * x * y + a[5] * x * z +
           a[6] * y * z + a[7] * x * y * z;
  }
  Eigen::Vector3d grad(double x, double y, double z) const {
    return {a[1] + a[4] * y + a[5] * z + a[7] * y * z,
            a[2] + a[4] * x + a[6] * z + a[7] * x * z,
            a[3] + a[5] * x + a[6] * y + a[7] * x * y};
  }
};

struct GridSample {
  double sigma_raw = 0.0;                    // before the max(.,0) activation
  std::array<double, kShPerVertex> sh{};     // channel-major: r0..r8 g0..g8 b0..b8
};

struct GridSampleGrad {
  Eigen::Vector3d d_sigma;                      // per meter
  std::array<Eigen::Vector3d, kShPerVertex> d_sh;
};

class VoxelGrid {
 public:
  VoxelGrid() = default;
  explicit VoxelGrid(const GridGeometry& geom, double sigma_init = 0.0);

  const GridGeometry& geometry() const { return geom_; }

  double* vertex(std::uint32_t index) { return data_.data() + std::size_t(index) * kPayloadSize; }
  const double* vertex(std::uint32_t index) const {
    return data_.data() + std::size_t(index) * kPayloadSize;
  }
  double& sigma(int ix, int iy, int iz) { return *vertex(geom_.vertex_index(ix, iy, iz)); }
  double sigma(int ix, int iy, int iz) const { return *vertex(geom_.vertex_index(ix, iy, iz)); }
  double& sh(int ix, int iy, int iz, int channel, int coeff) {
    return vertex(geom_.vertex_index(ix, iy, iz))[1 + channel * kShCoeffCount + coeff];
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool try_locate(const Eigen::Vector3d& p, CellLocator& out) const;
  CellLocator locate(const Eigen::Vector3d& p) const;  // throws std::out_of_range

  GridSample trilerp(const Eigen::Vector3d& p) const;
  void trilerp(const CellLocator& loc, GridSample& out) const;

  // World-units spatial derivative of every channel (Appendix-style
  // unit-cell gradient divided by voxel_size).
  GridSampleGrad trilerp_spatial_grad(const Eigen::Vector3d& p) const;
  void trilerp_spatial_grad(const CellLocator& loc, GridSampleGrad& out) const;

  // Occupancy: inactive cells produce no ray samples.
  bool cell_active(std::uint32_t cell_index) const { return active_[cell_index] != 0; }
  bool cell_active(int cx, int cy, int cz) const {
    return active_[geom_.cell_index(cx, cy, cz)] != 0;
  }
  void set_cell_active(int cx, int cy, int cz, bool on) {
    active_[geom_.cell_index(cx, cy, cz)] = on ? 1 : 0;
  }
  void set_all_active(bool on);
  std::size_t active_cell_count() const;
  const std::vector<std::uint8_t>& occupancy() const { return active_; }

  // Deactivates cells whose max effective density over the 8 corners is
  // below tau; returns how many were turned off.
  std::size_t prune(double tau);

  // Nested 2x refinement: resolution n -> 2n-1 per axis, halved voxel size,
  // identical world bounds. New payloads are trilinear samples of this grid,
  // so the refined interpolant reproduces the original exactly.
  VoxelGrid upsampled(int max_resolution = 1024) const;

  void save(const std::filesystem::path& path) const;
  static VoxelGrid load(const std::filesystem::path& path);

  // FNV-1a over payload and occupancy bytes; used for provenance and the
  // grid-immutability checks.
  std::uint64_t checksum() const;

 private:
  GridGeometry geom_;
  std::vector<double> data_;
  std::vector<std::uint8_t> active_;
};

}  // namespace voxrf
