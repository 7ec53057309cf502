#include <doctest.h>

#include <fstream>

#include <Eigen/Dense>

#include "test_helpers.hpp"
#include "voxrf/gradients.hpp"
#include "voxrf/renderer.hpp"
#include "voxrf/voxel_grid.hpp"

using namespace voxrf;
using testing::random_grid;

TEST_SUITE_BEGIN("voxel_grid");

TEST_CASE("trilerp at a lattice point returns the vertex payload") {
  Rng rng(11);
  VoxelGrid grid = random_grid(rng, 4, 0.25);
  for (int trial = 0; trial < 20; ++trial) {
    const int ix = rng.uniform_int(0, 3), iy = rng.uniform_int(0, 3), iz = rng.uniform_int(0, 3);
    const Eigen::Vector3d p =
        grid.geometry().to_world(Eigen::Vector3d(ix, iy, iz));
    const GridSample s = grid.trilerp(p);
    const double* v = grid.vertex(grid.geometry().vertex_index(ix, iy, iz));
    CHECK(s.sigma_raw == doctest::Approx(v[0]).epsilon(1e-14));
    for (int m = 0; m < kShPerVertex; ++m)
      CHECK(s.sh[m] == doctest::Approx(v[1 + m]).epsilon(1e-14));
  }
}

TEST_CASE("trilerp at a cell center is the mean of the 8 corners") {
  Rng rng(12);
  VoxelGrid grid = random_grid(rng, 3, 0.5);
  const Eigen::Vector3d p = grid.geometry().to_world(Eigen::Vector3d(0.5, 1.5, 0.5));
  const GridSample s = grid.trilerp(p);
  double mean = 0.0;
  for (int k = 0; k < 8; ++k)
    mean += grid.sigma(0 + (k & 1), 1 + ((k >> 1) & 1), 0 + ((k >> 2) & 1));
  mean /= 8.0;
  CHECK(s.sigma_raw == doctest::Approx(mean).epsilon(1e-14));
}

TEST_CASE("trilerp matches the unit-cell polynomial solved from the 8x8 system") {
  // Oracle: solve the linear system for a0..a7 numerically from the corner
  // values, evaluate the polynomial at the fractional coordinate.
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    GridGeometry geom;
    geom.res = Eigen::Vector3i(2, 2, 2);
    geom.voxel_size = rng.uniform(0.1, 1.0);
    geom.origin = Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    VoxelGrid grid(geom);
    std::array<double, 8> corners{};
    for (int k = 0; k < 8; ++k) {
      corners[k] = rng.uniform(-2, 2);
      grid.sigma(k & 1, (k >> 1) & 1, (k >> 2) & 1) = corners[k];
    }

    Eigen::Matrix<double, 8, 8> A;
    Eigen::Matrix<double, 8, 1> b;
    for (int k = 0; k < 8; ++k) {
      const double x = k & 1, y = (k >> 1) & 1, z = (k >> 2) & 1;
      A.row(k) << 1, x, y, z, x * y, x * z, y * z, x * y * z;
      b[k] = corners[k];
    }
    const Eigen::Matrix<double, 8, 1> a = A.colPivHouseholderQr().solve(b);

    const Eigen::Vector3d f(rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99),
                            rng.uniform(0.01, 0.99));
    const double poly = a[0] + a[1] * f.x() + a[2] * f.y() + a[3] * f.z() +
                        a[4] * f.x() * f.y() + a[5] * f.x() * f.z() +
                        a[6] * f.y() * f.z() + a[7] * f.x() * f.y() * f.z();
    const GridSample s = grid.trilerp(geom.to_world(f));
    CHECK(s.sigma_raw == doctest::Approx(poly).epsilon(1e-11));

    // InterpCoeffs closed form reproduces the numeric solve and the corners.
    const InterpCoeffs coeffs = InterpCoeffs::from_corners(corners);
    for (int k = 0; k < 8; ++k)
      CHECK(coeffs.eval(k & 1, (k >> 1) & 1, (k >> 2) & 1) ==
            doctest::Approx(corners[k]).epsilon(1e-13));
    for (int i = 0; i < 8; ++i) CHECK(coeffs.a[i] == doctest::Approx(a[i]).epsilon(1e-10));
  }
}

TEST_CASE("interior weights are non-negative and sum to one") {
  Rng rng(14);
  VoxelGrid grid = random_grid(rng, 5, 0.2);
  const Eigen::Vector3d lo = grid.geometry().world_min();
  const Eigen::Vector3d hi = grid.geometry().world_max();
  for (int trial = 0; trial < 10000; ++trial) {
    Eigen::Vector3d p;
    for (int a = 0; a < 3; ++a) p[a] = rng.uniform(lo[a], hi[a]);
    const CellLocator loc = grid.locate(p);
    double sum = 0.0;
    for (int k = 0; k < 8; ++k) {
      CHECK(loc.weight[k] >= 0.0);
      sum += loc.weight[k];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("trilerp is linear in the vertex payloads") {
  Rng rng(15);
  VoxelGrid ga = random_grid(rng, 4, 0.25);
  VoxelGrid gb = random_grid(rng, 4, 0.25);
  const double alpha = 0.7, beta = -1.3;
  VoxelGrid gc = ga;
  for (std::size_t i = 0; i < gc.data().size(); ++i)
    gc.data()[i] = alpha * ga.data()[i] + beta * gb.data()[i];
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::Vector3d p;
    for (int a = 0; a < 3; ++a)
      p[a] = rng.uniform(ga.geometry().world_min()[a], ga.geometry().world_max()[a]);
    const GridSample sa = ga.trilerp(p), sb = gb.trilerp(p), sc = gc.trilerp(p);
    CHECK(sc.sigma_raw ==
          doctest::Approx(alpha * sa.sigma_raw + beta * sb.sigma_raw).epsilon(1e-11));
  }
}

TEST_CASE("trilerp outside bounds is an error") {
  Rng rng(16);
  VoxelGrid grid = random_grid(rng, 4, 0.25);
  CHECK_THROWS_AS(grid.trilerp(grid.geometry().world_max() + Eigen::Vector3d(1, 0, 0)),
                  std::out_of_range);
}

TEST_CASE("spatial gradient of a constant field is zero") {
  GridGeometry geom{Eigen::Vector3i(3, 3, 3), {0, 0, 0}, 0.5};
  VoxelGrid grid(geom, 1.7);
  const GridSampleGrad g = grid.trilerp_spatial_grad(Eigen::Vector3d(0.31, 0.62, 0.9));
  CHECK(g.d_sigma.norm() == doctest::Approx(0.0).epsilon(1e-13));
}

TEST_CASE("spatial gradient of a linear ramp is the slope") {
  GridGeometry geom{Eigen::Vector3i(3, 3, 3), {0, 0, 0}, 1.0};
  VoxelGrid grid(geom);
  for (int iz = 0; iz < 3; ++iz)
    for (int iy = 0; iy < 3; ++iy)
      for (int ix = 0; ix < 3; ++ix) grid.sigma(ix, iy, iz) = double(ix);
  const GridSampleGrad g = grid.trilerp_spatial_grad(Eigen::Vector3d(0.73, 1.21, 1.67));
  CHECK(g.d_sigma.x() == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(g.d_sigma.y() == doctest::Approx(0.0).epsilon(1e-13));
  CHECK(g.d_sigma.z() == doctest::Approx(0.0).epsilon(1e-13));
}

TEST_CASE("spatial gradient matches central differences") {
  Rng rng(17);
  VoxelGrid grid = random_grid(rng, 4, 0.2);
  const double h = 1e-5;
  int checked = 0;
  while (checked < 100) {
    Eigen::Vector3d p;
    for (int a = 0; a < 3; ++a)
      p[a] = rng.uniform(grid.geometry().world_min()[a] + 2 * h,
                         grid.geometry().world_max()[a] - 2 * h);
    // Keep the stencil inside one cell.
    const CellLocator loc = grid.locate(p);
    const double fmargin = h / grid.geometry().voxel_size * 4;
    bool interior = true;
    for (int a = 0; a < 3; ++a)
      interior = interior && loc.frac[a] > fmargin && loc.frac[a] < 1 - fmargin;
    if (!interior) continue;
    ++checked;
    const GridSampleGrad g = grid.trilerp_spatial_grad(p);
    for (int a = 0; a < 3; ++a) {
      Eigen::Vector3d pp = p, pm = p;
      pp[a] += h;
      pm[a] -= h;
      const double numeric = (grid.trilerp(pp).sigma_raw - grid.trilerp(pm).sigma_raw) / (2 * h);
      CHECK(std::abs(g.d_sigma[a] - numeric) <=
            1e-6 * std::max({std::abs(numeric), std::abs(g.d_sigma[a]), 1e-9}));
      const double num_sh = (grid.trilerp(pp).sh[5] - grid.trilerp(pm).sh[5]) / (2 * h);
      CHECK(std::abs(g.d_sh[5][a] - numeric * 0 - num_sh) <=
            1e-6 * std::max({std::abs(num_sh), std::abs(g.d_sh[5][a]), 1e-9}));
    }
  }
}

TEST_CASE("scatter lands the full upstream on a lattice vertex") {
  Rng rng(18);
  VoxelGrid grid = random_grid(rng, 4, 0.25);
  GradientBuffer buf(std::size_t(grid.geometry().num_vertices()));
  std::array<double, kPayloadSize> up{};
  up[0] = 2.5;
  up[5] = -1.0;
  const Eigen::Vector3d p = grid.geometry().to_world(Eigen::Vector3d(2, 1, 3));
  scatter_grad(buf, grid, p, up);
  const std::uint32_t v = grid.geometry().vertex_index(2, 1, 3);
  CHECK(buf.grad(v)[0] == doctest::Approx(2.5).epsilon(1e-14));
  CHECK(buf.grad(v)[5] == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(buf.touched_count() == 8);  // zero-weight corners still touched
  double total = 0.0;
  for (const auto idx : buf.sorted_touched()) total += buf.grad(idx)[0];
  CHECK(total == doctest::Approx(2.5).epsilon(1e-14));
}

TEST_CASE("scatter splits evenly at a cell center and counts out-of-bounds") {
  Rng rng(19);
  VoxelGrid grid = random_grid(rng, 4, 0.25);
  GradientBuffer buf(std::size_t(grid.geometry().num_vertices()));
  std::array<double, kPayloadSize> up{};
  up[0] = 8.0;
  scatter_grad(buf, grid, grid.geometry().to_world(Eigen::Vector3d(1.5, 1.5, 1.5)), up);
  for (const auto idx : buf.sorted_touched())
    CHECK(buf.grad(idx)[0] == doctest::Approx(1.0).epsilon(1e-13));

  scatter_grad(buf, grid, grid.geometry().world_max() + Eigen::Vector3d(0.1, 0, 0), up);
  CHECK(buf.out_of_bounds_count() == 1);
}

TEST_CASE("scatter is the exact adjoint of trilerp") {
  Rng rng(20);
  VoxelGrid grid = random_grid(rng, 4, 0.25);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::Vector3d p;
    for (int a = 0; a < 3; ++a)
      p[a] = rng.uniform(grid.geometry().world_min()[a], grid.geometry().world_max()[a]);
    const CellLocator loc = grid.locate(p);

    // <u, J e> where J = d trilerp / d corners, e a random corner perturbation.
    std::array<double, kPayloadSize> u{};
    for (auto& x : u) x = rng.uniform(-1, 1);
    std::array<std::array<double, kPayloadSize>, 8> e{};
    double lhs = 0.0;
    for (int k = 0; k < 8; ++k)
      for (int c = 0; c < kPayloadSize; ++c) {
        e[k][c] = rng.uniform(-1, 1);
        lhs += u[c] * loc.weight[k] * e[k][c];
      }

    GradientBuffer buf(std::size_t(grid.geometry().num_vertices()));
    scatter_grad(buf, grid, p, u);
    double rhs = 0.0;
    for (int k = 0; k < 8; ++k)
      for (int c = 0; c < kPayloadSize; ++c) rhs += buf.grad(loc.corner[k])[c] * e[k][c];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("first-order response of trilerp to a corner perturbation is the scattered weight") {
  Rng rng(21);
  VoxelGrid grid = random_grid(rng, 4, 0.25);
  Eigen::Vector3d p(0.31, 0.44, 0.57);
  const CellLocator loc = grid.locate(p);
  const int k = 5;
  const double eps = 1e-6;
  const double before = grid.trilerp(p).sigma_raw;
  grid.data()[std::size_t(loc.corner[k]) * kPayloadSize] += eps;
  const double after = grid.trilerp(p).sigma_raw;
  CHECK((after - before) / eps == doctest::Approx(loc.weight[k]).epsilon(1e-6));
}

TEST_CASE("sh basis constants") {
  const ShBasis b = sh_eval(Eigen::Vector3d(0, 0, 1));
  CHECK(b[0] == doctest::Approx(0.28209479177).epsilon(1e-9));
  CHECK(b[1] == doctest::Approx(0.0));
  CHECK(b[2] == doctest::Approx(0.48860251190).epsilon(1e-9));
  CHECK(b[3] == doctest::Approx(0.0));
  CHECK_THROWS_AS(sh_eval(Eigen::Vector3d(0, 0, 1.1)), std::invalid_argument);
}

TEST_CASE("sh basis is orthonormal under Monte-Carlo integration") {
  Rng rng(22);
  Eigen::Matrix<double, 9, 9> gram = Eigen::Matrix<double, 9, 9>::Zero();
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const ShBasis b = sh_eval(rng.unit_vector());
    for (int j = 0; j < 9; ++j)
      for (int k = j; k < 9; ++k) gram(j, k) += b[j] * b[k];
  }
  gram *= 4.0 * M_PI / n;  // uniform sphere measure
  for (int j = 0; j < 9; ++j)
    for (int k = j; k < 9; ++k) {
      const double expected = (j == k) ? 1.0 : 0.0;
      CHECK(std::abs(gram(j, k) - expected) <= 1e-2);
    }
}

TEST_CASE("sh_color offset, clamp and direct evaluation") {
  std::array<double, kShPerVertex> sh{};
  ShBasis basis = sh_eval(Eigen::Vector3d(0, 1, 0));
  Eigen::Vector3d rgb = sh_color(sh.data(), basis);
  CHECK(rgb == Eigen::Vector3d(0.5, 0.5, 0.5));

  sh[0] = 1.0 / 0.28209479177387814;  // pushes channel 0 to 1.5 before the clamp
  rgb = sh_color(sh.data(), basis);
  CHECK(rgb[0] == 1.0);

  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    for (auto& v : sh) v = rng.uniform(-0.5, 0.5);
    const Eigen::Vector3d dir = rng.unit_vector();
    basis = sh_eval(dir);
    rgb = sh_color(sh.data(), basis);
    for (int ch = 0; ch < 3; ++ch) {
      double dot = 0.5;
      for (int m = 0; m < 9; ++m) dot += sh[ch * 9 + m] * basis[m];
      CHECK(rgb[ch] == doctest::Approx(std::clamp(dot, 0.0, 1.0)).epsilon(1e-13));
    }
  }
}

TEST_CASE("sh_color with zero coefficients is mid-gray for every direction") {
  Rng rng(24);
  std::array<double, kShPerVertex> sh{};
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Vector3d rgb = sh_color(sh.data(), sh_eval(rng.unit_vector()));
    CHECK(rgb == Eigen::Vector3d(0.5, 0.5, 0.5));
  }
}

TEST_CASE("upsample keeps constants and averages a linear ramp") {
  GridGeometry geom{Eigen::Vector3i(2, 2, 2), {0, 0, 0}, 1.0};
  VoxelGrid grid(geom, 0.0);
  for (int k = 0; k < 8; ++k)
    grid.sigma(k & 1, (k >> 1) & 1, (k >> 2) & 1) = double(k & 1);  // ramp along x

  const VoxelGrid up = grid.upsampled();
  CHECK(up.geometry().res == Eigen::Vector3i(3, 3, 3));
  CHECK(up.geometry().voxel_size == doctest::Approx(0.5));
  CHECK(up.sigma(1, 0, 0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(up.sigma(1, 1, 1) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(up.sigma(2, 2, 2) == doctest::Approx(1.0).epsilon(1e-14));

  VoxelGrid constant(geom, 0.7);
  const VoxelGrid upc = constant.upsampled();
  for (int iz = 0; iz < 3; ++iz)
    for (int iy = 0; iy < 3; ++iy)
      for (int ix = 0; ix < 3; ++ix)
        CHECK(upc.sigma(ix, iy, iz) == doctest::Approx(0.7).epsilon(1e-14));

  CHECK_THROWS(grid.upsampled(2));  // resolution ceiling
}

TEST_CASE("upsampled grid renders identically on matching sample points") {
  Rng rng(25);
  VoxelGrid grid = random_grid(rng, 4, 0.25, {0, 0, 0}, 0.0, 4.0);
  const VoxelGrid up = grid.upsampled();
  RenderParams params;
  params.step = 0.05;  // shared by both resolutions
  params.t_near = 0.01;
  RayWorkspace wa, wb;
  for (int trial = 0; trial < 100; ++trial) {
    Ray ray;
    ray.d = rng.unit_vector();
    ray.o = 0.5 * (grid.geometry().world_min() + grid.geometry().world_max()) +
            Eigen::Vector3d(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2),
                            rng.uniform(-0.2, 0.2));
    render_ray(grid, ray, params, wa);
    render_ray(up, ray, params, wb);
    REQUIRE(wa.count == wb.count);
    CHECK((wa.color_out - wb.color_out).norm() <= 1e-10);
    CHECK(std::abs(wa.depth_out - wb.depth_out) <= 1e-10);
  }
}

TEST_CASE("pruned cells are skipped and counted") {
  GridGeometry geom{Eigen::Vector3i(3, 3, 3), {0, 0, 0}, 0.5};
  VoxelGrid grid(geom, 0.0);
  grid.sigma(2, 2, 2) = 1.0;  // only cells touching this vertex stay active
  const std::size_t off = grid.prune(1e-3);
  CHECK(off == 7);
  CHECK(grid.active_cell_count() == 1);
  CHECK(grid.cell_active(1, 1, 1));
}

TEST_CASE("grid file round-trips and rejects corrupt headers") {
  Rng rng(26);
  const auto dir = testing::test_tmp_dir("voxel_grid");
  VoxelGrid grid = random_grid(rng, 4, 0.25, {0.5, -0.25, 1.0});
  grid.set_cell_active(1, 2, 0, false);
  // Values must be float-exact for a lossless round trip through the file.
  for (auto& v : grid.data()) v = double(float(v));

  const auto path = dir / "grid.vxgf";
  grid.save(path);
  const VoxelGrid loaded = VoxelGrid::load(path);
  CHECK(loaded.geometry().res == grid.geometry().res);
  CHECK(loaded.geometry().voxel_size == grid.geometry().voxel_size);
  CHECK(loaded.data() == grid.data());
  CHECK(loaded.occupancy() == grid.occupancy());
  CHECK(loaded.checksum() == grid.checksum());

  // Wrong magic.
  {
    std::ofstream bad(dir / "bad.vxgf", std::ios::binary);
    bad << "NOPE" << std::string(64, '\0');
  }
  CHECK_THROWS(VoxelGrid::load(dir / "bad.vxgf"));

  // Wrong version: patch byte 4.
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    bytes[4] = 99;
    std::ofstream out(dir / "vers.vxgf", std::ios::binary);
    out << bytes;
  }
  CHECK_THROWS(VoxelGrid::load(dir / "vers.vxgf"));
}

TEST_SUITE_END();
