#include "voxrf/voxel_grid.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace voxrf {

namespace {

constexpr double kC0 = 0.28209479177387814;  // 1 / (2 sqrt(pi))
constexpr double kC1 = 0.4886025119029199;
constexpr double kC2_xy = 1.0925484305920792;
constexpr double kC2_yz = -1.0925484305920792;
constexpr double kC2_zz = 0.31539156525252005;
constexpr double kC2_xz = -1.0925484305920792;
constexpr double kC2_xxyy = 0.5462742152960396;

constexpr char kMagic[4] = {'V', 'X', 'G', 'F'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void write_raw(std::ofstream& os, const T& value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void read_raw(std::ifstream& is, T& value) {
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
}

}  // namespace

ShBasis sh_eval(const Eigen::Vector3d& dir) {
  if (std::abs(dir.norm() - 1.0) > 1e-9)
    throw std::invalid_argument("sh_eval: direction must be unit length");
  const double x = dir.x(), y = dir.y(), z = dir.z();
  return {kC0,
          -kC1 * y,
          kC1 * z,
          -kC1 * x,
          kC2_xy * x * y,
          kC2_yz * y * z,
          kC2_zz * (2.0 * z * z - x * x - y * y),
          kC2_xz * x * z,
          kC2_xxyy * (x * x - y * y)};
}

Eigen::Vector3d sh_color(const double* sh27, const ShBasis& basis) {
  Eigen::Vector3d rgb;
  for (int ch = 0; ch < kColorChannels; ++ch) {
    double v = 0.5;
    const double* c = sh27 + ch * kShCoeffCount;
    for (int m = 0; m < kShCoeffCount; ++m) v += c[m] * basis[m];
    rgb[ch] = std::clamp(v, 0.0, 1.0);
  }
  return rgb;
}

InterpCoeffs InterpCoeffs::from_corners(const std::array<double, 8>& v) {
  // Closed-form solve of the 8x8 unit-cell system (lower corner at 0).
  InterpCoeffs c;
  c.a[0] = v[0];
  c.a[1] = v[1] - v[0];
  c.a[2] = v[2] - v[0];
  c.a[3] = v[4] - v[0];
  c.a[4] = v[3] - v[1] - v[2] + v[0];
  c.a[5] = v[5] - v[1] - v[4] + v[0];
  c.a[6] = v[6] - v[2] - v[4] + v[0];
  c.a[7] = v[7] - v[3] - v[5] - v[6] + v[1] + v[2] + v[4] - v[0];
  return c;
}

VoxelGrid::VoxelGrid(const GridGeometry& geom, double sigma_init) : geom_(geom) {
  geom_.validate();
  data_.assign(std::size_t(geom_.num_vertices()) * kPayloadSize, 0.0);
  if (sigma_init != 0.0)
    for (std::int64_t i = 0; i < geom_.num_vertices(); ++i)
      data_[std::size_t(i) * kPayloadSize] = sigma_init;
  active_.assign(std::size_t(geom_.num_cells()), 1);
}

bool VoxelGrid::try_locate(const Eigen::Vector3d& p, CellLocator& out) const {
  const Eigen::Vector3d g = geom_.to_grid(p);
  for (int a = 0; a < 3; ++a)
    if (!(g[a] >= 0.0 && g[a] <= geom_.res[a] - 1.0)) return false;
  for (int a = 0; a < 3; ++a) {
    // Exact lattice coordinates resolve to the lower-index cell.
    int c = static_cast<int>(std::ceil(g[a])) - 1;
    c = std::clamp(c, 0, geom_.res[a] - 2);
    out.cell[a] = c;
    out.frac[a] = g[a] - c;
  }
  const double fx = out.frac.x(), fy = out.frac.y(), fz = out.frac.z();
  const double wx[2] = {1.0 - fx, fx};
  const double wy[2] = {1.0 - fy, fy};
  const double wz[2] = {1.0 - fz, fz};
  for (int k = 0; k < 8; ++k) {
    const int dx = k & 1, dy = (k >> 1) & 1, dz = (k >> 2) & 1;
    out.corner[k] =
        geom_.vertex_index(out.cell.x() + dx, out.cell.y() + dy, out.cell.z() + dz);
    out.weight[k] = wx[dx] * wy[dy] * wz[dz];
  }
  return true;
}

CellLocator VoxelGrid::locate(const Eigen::Vector3d& p) const {
  CellLocator loc;
  if (!try_locate(p, loc)) throw std::out_of_range("voxel grid: point outside grid");
  return loc;
}

void VoxelGrid::trilerp(const CellLocator& loc, GridSample& out) const {
  out.sigma_raw = 0.0;
  out.sh.fill(0.0);
  for (int k = 0; k < 8; ++k) {
    const double w = loc.weight[k];
    const double* v = vertex(loc.corner[k]);
    out.sigma_raw += w * v[0];
    for (int m = 0; m < kShPerVertex; ++m) out.sh[m] += w * v[1 + m];
  }
}

GridSample VoxelGrid::trilerp(const Eigen::Vector3d& p) const {
  GridSample s;
  trilerp(locate(p), s);
  return s;
}

void VoxelGrid::trilerp_spatial_grad(const CellLocator& loc, GridSampleGrad& out) const {
  const double fx = loc.frac.x(), fy = loc.frac.y(), fz = loc.frac.z();
  const double wx[2] = {1.0 - fx, fx};
  const double wy[2] = {1.0 - fy, fy};
  const double wz[2] = {1.0 - fz, fz};
  const double sgn[2] = {-1.0, 1.0};
  const double inv_h = 1.0 / geom_.voxel_size;

  out.d_sigma.setZero();
  for (auto& g : out.d_sh) g.setZero();
  for (int k = 0; k < 8; ++k) {
    const int dx = k & 1, dy = (k >> 1) & 1, dz = (k >> 2) & 1;
    // Weight derivative w.r.t. the unit-cell coordinates; equivalent to the
    // a1..a7 polynomial gradient assembled corner-wise.
    const Eigen::Vector3d dw(sgn[dx] * wy[dy] * wz[dz] * inv_h,
                             wx[dx] * sgn[dy] * wz[dz] * inv_h,
                             wx[dx] * wy[dy] * sgn[dz] * inv_h);
    const double* v = vertex(loc.corner[k]);
    out.d_sigma += dw * v[0];
    for (int m = 0; m < kShPerVertex; ++m) out.d_sh[m] += dw * v[1 + m];
  }
}

GridSampleGrad VoxelGrid::trilerp_spatial_grad(const Eigen::Vector3d& p) const {
  GridSampleGrad g;
  trilerp_spatial_grad(locate(p), g);
  return g;
}

void VoxelGrid::set_all_active(bool on) {
  std::fill(active_.begin(), active_.end(), on ? 1 : 0);
}

std::size_t VoxelGrid::active_cell_count() const {
  std::size_t n = 0;
  for (auto a : active_) n += a;
  return n;
}

std::size_t VoxelGrid::prune(double tau) {
  std::size_t deactivated = 0;
  for (int cz = 0; cz < geom_.res.z() - 1; ++cz)
    for (int cy = 0; cy < geom_.res.y() - 1; ++cy)
      for (int cx = 0; cx < geom_.res.x() - 1; ++cx) {
        const std::uint32_t ci = geom_.cell_index(cx, cy, cz);
        if (!active_[ci]) continue;
        double peak = 0.0;
        for (int k = 0; k < 8; ++k) {
          const double s =
              *vertex(geom_.vertex_index(cx + (k & 1), cy + ((k >> 1) & 1), cz + ((k >> 2) & 1)));
          peak = std::max(peak, std::max(s, 0.0));
        }
        if (peak < tau) {
          active_[ci] = 0;
          ++deactivated;
        }
      }
  return deactivated;
}

VoxelGrid VoxelGrid::upsampled(int max_resolution) const {
  GridGeometry g;
  g.res = 2 * geom_.res - Eigen::Vector3i::Ones();
  g.origin = geom_.origin;
  g.voxel_size = geom_.voxel_size * 0.5;
  if (g.res.maxCoeff() > max_resolution)
    throw std::runtime_error("upsample: resolution would exceed configured maximum");

  VoxelGrid out(g);
  GridSample s;
  for (int iz = 0; iz < g.res.z(); ++iz)
    for (int iy = 0; iy < g.res.y(); ++iy)
      for (int ix = 0; ix < g.res.x(); ++ix) {
        // New vertices sit at half-integer coordinates of this grid, always
        // inside its bounds.
        const Eigen::Vector3d p =
            geom_.to_world(Eigen::Vector3d(ix * 0.5, iy * 0.5, iz * 0.5));
        trilerp(locate(p), s);
        double* v = out.vertex(g.vertex_index(ix, iy, iz));
        v[0] = s.sigma_raw;
        for (int m = 0; m < kShPerVertex; ++m) v[1 + m] = s.sh[m];
      }

  // Each refined cell nests inside exactly one parent cell.
  for (int cz = 0; cz < g.res.z() - 1; ++cz)
    for (int cy = 0; cy < g.res.y() - 1; ++cy)
      for (int cx = 0; cx < g.res.x() - 1; ++cx)
        out.active_[g.cell_index(cx, cy, cz)] =
            active_[geom_.cell_index(cx / 2, cy / 2, cz / 2)];
  return out;
}

void VoxelGrid::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("grid save: cannot open " + path.string());
  os.write(kMagic, 4);
  write_raw(os, kFormatVersion);
  for (int a = 0; a < 3; ++a) write_raw(os, std::uint32_t(geom_.res[a]));
  for (int a = 0; a < 3; ++a) write_raw(os, double(geom_.origin[a]));
  write_raw(os, geom_.voxel_size);
  std::vector<float> payload(data_.size());
  for (std::size_t i = 0; i < data_.size(); ++i) payload[i] = static_cast<float>(data_[i]);
  os.write(reinterpret_cast<const char*>(payload.data()),
           std::streamsize(payload.size() * sizeof(float)));
  std::vector<std::uint8_t> bits((active_.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < active_.size(); ++i)
    if (active_[i]) bits[i >> 3] |= std::uint8_t(1u << (i & 7));
  os.write(reinterpret_cast<const char*>(bits.data()), std::streamsize(bits.size()));
  if (!os) throw std::runtime_error("grid save: write failed for " + path.string());
}

VoxelGrid VoxelGrid::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("grid load: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("grid load: bad magic in " + path.string());
  std::uint32_t version = 0;
  read_raw(is, version);
  if (version != kFormatVersion)
    throw std::runtime_error("grid load: unsupported version in " + path.string());
  GridGeometry g;
  for (int a = 0; a < 3; ++a) {
    std::uint32_t r = 0;
    read_raw(is, r);
    g.res[a] = int(r);
  }
  for (int a = 0; a < 3; ++a) read_raw(is, g.origin[a]);
  read_raw(is, g.voxel_size);
  if (!is) throw std::runtime_error("grid load: truncated header in " + path.string());
  g.validate();

  VoxelGrid grid(g);
  std::vector<float> payload(grid.data_.size());
  is.read(reinterpret_cast<char*>(payload.data()),
          std::streamsize(payload.size() * sizeof(float)));
  std::vector<std::uint8_t> bits((grid.active_.size() + 7) / 8);
  is.read(reinterpret_cast<char*>(bits.data()), std::streamsize(bits.size()));
  if (!is) throw std::runtime_error("grid load: truncated payload in " + path.string());
  for (std::size_t i = 0; i < payload.size(); ++i) {
    if (!std::isfinite(payload[i]))
      throw std::runtime_error("grid load: non-finite payload in " + path.string());
    grid.data_[i] = payload[i];
  }
  for (std::size_t i = 0; i < grid.active_.size(); ++i)
    grid.active_[i] = (bits[i >> 3] >> (i & 7)) & 1u;
  return grid;
}

std::uint64_t VoxelGrid::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  mix(data_.data(), data_.size() * sizeof(double));
  mix(active_.data(), active_.size());
  return h;
}

}  // namespace voxrf
