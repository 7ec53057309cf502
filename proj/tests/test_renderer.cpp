#include <doctest.h>

#include <cmath>

#include "test_helpers.hpp"
#include "voxrf/renderer.hpp"

using namespace voxrf;
using testing::random_grid;

namespace {

// Grid with a single constant color via the degree-0 SH coefficient.
void set_constant_color(VoxelGrid& grid, const Eigen::Vector3d& rgb) {
  constexpr double kY0 = 0.28209479177387814;
  for (std::int64_t v = 0; v < grid.geometry().num_vertices(); ++v)
    for (int ch = 0; ch < 3; ++ch)
      grid.vertex(std::uint32_t(v))[1 + ch * kShCoeffCount] = (rgb[ch] - 0.5) / kY0;
}

void set_constant_sigma(VoxelGrid& grid, double sigma) {
  for (std::int64_t v = 0; v < grid.geometry().num_vertices(); ++v)
    grid.vertex(std::uint32_t(v))[0] = sigma;
}

}  // namespace

TEST_SUITE_BEGIN("renderer");

TEST_CASE("generate_ray principal point and one-focal-length offset") {
  CameraIntrinsics intr{100, 100, 320, 240, 640, 480};
  Pose identity;
  const Ray center = generate_ray(intr, identity, intr.cx, intr.cy);
  CHECK((center.d - Eigen::Vector3d(0, 0, 1)).norm() < 1e-15);
  CHECK(center.o.norm() == 0.0);

  const Ray offset = generate_ray(intr, identity, intr.cx + 100, intr.cy);
  CHECK((offset.d - Eigen::Vector3d(1, 0, 1).normalized()).norm() < 1e-15);

  CHECK_THROWS_AS(generate_ray(intr, identity, -1, 0), std::out_of_range);
  CHECK_THROWS_AS(generate_ray(intr, identity, 0, 480), std::out_of_range);
}

TEST_CASE("generate_ray round-trips through the rotation") {
  Rng rng(31);
  CameraIntrinsics intr{310.5, 311.2, 160.1, 120.7, 320, 240};
  for (int trial = 0; trial < 30; ++trial) {
    Pose pose{exp_so3(rng.unit_vector() * rng.uniform(0, 3.0)),
              Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal())};
    const double u = rng.uniform(0, 320), v = rng.uniform(0, 240);
    const Ray ray = generate_ray(intr, pose, u, v);
    CHECK(std::abs(ray.d.norm() - 1.0) < 1e-12);
    CHECK((ray.o - pose.t).norm() == 0.0);
    const Eigen::Vector3d cam = pose.q.conjugate() * ray.d;
    CHECK((cam - pixel_direction_cam(intr, u, v)).norm() < 1e-12);
  }
}

TEST_CASE("sample_ray uniform schedule arithmetic") {
  GridGeometry geom{Eigen::Vector3i(9, 9, 9), {-1, -1, -1}, 0.25};
  VoxelGrid grid(geom, 1.0);
  Ray ray{{-0.9, 0, 0}, {1, 0, 0}};
  RenderParams params;
  params.step = 0.25;
  params.t_near = 0.1;
  params.t_far = 1.1;
  SampleSchedule sched;
  sample_ray(grid, ray, params, sched);
  REQUIRE(sched.size() == 4);
  const double expected_t[4] = {0.225, 0.475, 0.725, 0.975};
  for (int i = 0; i < 4; ++i) {
    CHECK(sched.t[i] == doctest::Approx(expected_t[i]).epsilon(1e-12));
    CHECK(sched.delta[i] == doctest::Approx(0.25).epsilon(1e-12));
  }
}

TEST_CASE("sample_ray with every cell inactive is empty") {
  GridGeometry geom{Eigen::Vector3i(4, 4, 4), {0, 0, 0}, 0.25};
  VoxelGrid grid(geom, 1.0);
  grid.set_all_active(false);
  SampleSchedule sched;
  sample_ray(grid, Ray{{-1, 0.4, 0.4}, {1, 0, 0}}, RenderParams{}, sched);
  CHECK(sched.empty());
}

TEST_CASE("sample_ray skips exactly the samples in pruned cells") {
  Rng rng(32);
  VoxelGrid grid = random_grid(rng, 5, 0.2);
  VoxelGrid pruned = grid;
  for (int cz = 0; cz < 4; ++cz)
    for (int cy = 0; cy < 4; ++cy)
      for (int cx = 0; cx < 4; ++cx)
        if (rng.uniform() < 0.5) pruned.set_cell_active(cx, cy, cz, false);

  RenderParams params;
  params.t_near = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    Ray ray;
    ray.d = rng.unit_vector();
    ray.o = Eigen::Vector3d(0.4, 0.4, 0.4) +
            Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    SampleSchedule dense, sparse;
    sample_ray(grid, ray, params, dense);
    sample_ray(pruned, ray, params, sparse);

    // Brute-force filter of the dense schedule by cell activity.
    SampleSchedule expected;
    CellLocator loc;
    for (std::size_t i = 0; i < dense.size(); ++i) {
      const Eigen::Vector3d p = ray.o + dense.t[i] * ray.d;
      if (!pruned.try_locate(p, loc)) continue;
      if (!pruned.cell_active(loc.cell.x(), loc.cell.y(), loc.cell.z())) continue;
      expected.t.push_back(dense.t[i]);
      expected.delta.push_back(dense.delta[i]);
    }
    CHECK(sparse.t == expected.t);
    CHECK(sparse.delta == expected.delta);
  }
}

TEST_CASE("render_ray with zero density renders background with full transmittance") {
  GridGeometry geom{Eigen::Vector3i(4, 4, 4), {0, 0, 0}, 0.25};
  VoxelGrid grid(geom, 0.0);
  RayWorkspace ws;
  render_ray(grid, Ray{{-0.5, 0.4, 0.4}, {1, 0, 0}}, RenderParams{}, ws);
  REQUIRE(ws.hit);
  CHECK(ws.color_out.norm() == 0.0);
  CHECK(ws.depth_out == 0.0);
  CHECK(ws.transmittance_terminal == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("a saturated sample dominates the ray") {
  GridGeometry geom{Eigen::Vector3i(2, 2, 2), {0, 0, 0}, 1.0};
  VoxelGrid grid(geom, 500.0);
  set_constant_color(grid, {0.8, 0.3, 0.6});
  SampleSchedule sched;
  sched.t = {0.4};
  sched.delta = {0.1};  // sigma * delta = 50
  RayWorkspace ws;
  render_ray_scheduled(grid, Ray{{0.0, 0.5, 0.5}, {1, 0, 0}}, sched, RenderParams{}, ws);
  REQUIRE(ws.count == 1);
  CHECK(ws.weight[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ws.color_out.x() == doctest::Approx(0.8).epsilon(1e-9));
  CHECK(ws.color_out.y() == doctest::Approx(0.3).epsilon(1e-9));
  CHECK(ws.depth_out == doctest::Approx(0.4).epsilon(1e-9));
}

TEST_CASE("two samples with sigma*delta = ln 2 then 50 split the weight evenly") {
  GridGeometry geom{Eigen::Vector3i(2, 2, 2), {0, 0, 0}, 1.0};
  const double sigma = 3.0;
  VoxelGrid grid(geom, sigma);
  // Color ramps along x through the degree-0 coefficient.
  constexpr double kY0 = 0.28209479177387814;
  for (int k = 0; k < 8; ++k)
    grid.vertex(geom.vertex_index(k & 1, (k >> 1) & 1, (k >> 2) & 1))[1] =
        (k & 1) ? (0.9 - 0.5) / kY0 : (0.1 - 0.5) / kY0;

  SampleSchedule sched;
  sched.t = {0.25, 0.75};
  sched.delta = {std::log(2.0) / sigma, 50.0 / sigma};
  RayWorkspace ws;
  render_ray_scheduled(grid, Ray{{0.0, 0.5, 0.5}, {1, 0, 0}}, sched, RenderParams{}, ws);
  REQUIRE(ws.count == 2);
  CHECK(ws.weight[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(ws.weight[1] == doctest::Approx(0.5).epsilon(1e-12));
  const double c1 = ws.color[0].x(), c2 = ws.color[1].x();
  CHECK(ws.color_out.x() == doctest::Approx(0.5 * c1 + 0.5 * c2).epsilon(1e-9));
  CHECK(ws.depth_out == doctest::Approx(0.5 * 0.25 + 0.5 * 0.75).epsilon(1e-9));
}

TEST_CASE("transmittance telescopes and weights account for all light") {
  Rng rng(33);
  for (int trial = 0; trial < 30; ++trial) {
    VoxelGrid grid = random_grid(rng, 5, 0.2, {0, 0, 0}, 0.0, 3.0);
    Ray ray;
    ray.d = rng.unit_vector();
    ray.o = Eigen::Vector3d(0.4, 0.4, 0.4) + 0.3 * rng.unit_vector();
    RayWorkspace ws;
    render_ray(grid, ray, RenderParams{}, ws);
    if (!ws.hit) continue;
    double sum_w = 0.0;
    for (int i = 0; i < ws.count; ++i) {
      sum_w += ws.weight[i];
      const double next =
          (i + 1 < ws.count) ? ws.transmittance[i + 1] : ws.transmittance_terminal;
      CHECK(next == ws.transmittance[i] * std::exp(-ws.sigma[i] * ws.delta[i]));
      CHECK(ws.transmittance[i] <= 1.0);
      CHECK(ws.weight[i] >= 0.0);
      if (i) CHECK(ws.t[i] > ws.t[i - 1]);
    }
    if (!ws.terminated_early)
      CHECK(sum_w + ws.transmittance_terminal == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("opaque rays have expected depth inside the sample interval") {
  Rng rng(34);
  RenderParams params;
  params.termination_eps = 0.0;  // march to the end so sum(w) can reach 1
  int checked = 0;
  for (int trial = 0; trial < 500 && checked < 30; ++trial) {
    VoxelGrid grid = random_grid(rng, 5, 0.2, {0, 0, 0}, 5.0, 40.0);
    Ray ray;
    ray.d = rng.unit_vector();
    ray.o = Eigen::Vector3d(0.4, 0.4, 0.4) + 0.2 * rng.unit_vector();
    RayWorkspace ws;
    render_ray(grid, ray, params, ws);
    if (!ws.hit) continue;
    double sum_w = 0.0;
    for (int i = 0; i < ws.count; ++i) sum_w += ws.weight[i];
    if (sum_w < 1.0 - 1e-6) continue;
    ++checked;
    const double a = ws.t.front(), b = ws.t.back();
    CHECK(ws.depth_out >= a - 2e-6 * b);
    CHECK(ws.depth_out <= b + 1e-12);
  }
  CHECK(checked == 30);
}

TEST_CASE("halving the step at least halves the depth quadrature error") {
  GridGeometry geom{Eigen::Vector3i(2, 2, 2), {0, 0, 0}, 4.0};
  const double sigma = 2.0;
  VoxelGrid grid(geom, sigma);
  set_constant_color(grid, {0.7, 0.7, 0.7});

  const double a = 0.5, length = 1.0;
  const Ray ray{{0.0, 2.0, 2.0}, {1, 0, 0}};
  const double E = std::exp(-sigma * length);
  const double exact_depth = a * (1 - E) + (1 - E) / sigma - length * E;
  const double exact_color = 0.7 * (1 - E);

  auto render_with = [&](double step) {
    SampleSchedule sched;
    const int n = int(std::round(length / step));
    for (int i = 0; i < n; ++i) {
      sched.t.push_back(a + (i + 0.5) * step);
      sched.delta.push_back(step);
    }
    RayWorkspace ws;
    render_ray_scheduled(grid, ray, sched, RenderParams{}, ws);
    return std::pair<double, double>(ws.color_out.x(), ws.depth_out);
  };

  const auto [c_h, d_h] = render_with(0.125);
  const auto [c_h2, d_h2] = render_with(0.0625);
  // Piecewise-constant density makes the color accumulation exact at any step.
  CHECK(std::abs(c_h - exact_color) < 1e-12);
  CHECK(std::abs(c_h2 - exact_color) < 1e-12);
  CHECK(std::abs(d_h2 - exact_depth) <= 0.5 * std::abs(d_h - exact_depth));
}

TEST_CASE("rendering is reproducible bit for bit") {
  Rng rng(35);
  VoxelGrid grid = random_grid(rng, 4, 0.25);
  const Ray ray{{-0.4, 0.37, 0.41}, Eigen::Vector3d(1, 0.11, -0.07).normalized()};
  RayWorkspace w1, w2;
  render_ray(grid, ray, RenderParams{}, w1);
  render_ray(grid, ray, RenderParams{}, w2);
  CHECK(w1.color_out == w2.color_out);
  CHECK(w1.depth_out == w2.depth_out);
  CHECK(w1.t == w2.t);
  CHECK(w1.weight == w2.weight);
}

TEST_CASE("render_image: empty grid, stride consistency and per-ray agreement") {
  Rng rng(36);
  CameraIntrinsics intr{60, 60, 16, 12, 32, 24};
  const Pose pose = look_at({0.4, -1.2, 0.4}, {0.4, 0.4, 0.4});

  GridGeometry geom{Eigen::Vector3i(4, 4, 4), {0, 0, 0}, 0.25};
  VoxelGrid empty(geom, 0.0);
  empty.set_all_active(false);
  const Frame bg = render_image(empty, intr, pose, RenderParams{});
  for (int y = 0; y < bg.color.height; ++y)
    for (int x = 0; x < bg.color.width; ++x) {
      CHECK(bg.color.at(x, y, 0) == 0.f);
      CHECK(bg.depth.at(x, y) == 0.f);
    }

  VoxelGrid grid = random_grid(rng, 4, 0.25, {0, 0, 0}, 1.0, 8.0);
  const Frame full = render_image(grid, intr, pose, RenderParams{});
  const Frame half = render_image(grid, intr, pose, RenderParams{}, 2);
  CHECK(half.color.width == 16);
  for (int y = 0; y < half.color.height; ++y)
    for (int x = 0; x < half.color.width; ++x) {
      CHECK(half.color.at(x, y, 0) == full.color.at(2 * x, 2 * y, 0));
      CHECK(half.depth.at(x, y) == full.depth.at(2 * x, 2 * y));
    }

  RayWorkspace ws;
  for (int trial = 0; trial < 10; ++trial) {
    const int px = rng.uniform_int(0, intr.width - 1);
    const int py = rng.uniform_int(0, intr.height - 1);
    render_ray(grid, generate_ray(intr, pose, px, py), RenderParams{}, ws);
    CHECK(full.color.at(px, py, 0) == float(ws.color_out.x()));
    CHECK(full.depth.at(px, py) == (ws.hit ? float(ws.depth_out) : 0.f));
  }
}

TEST_SUITE_END();
