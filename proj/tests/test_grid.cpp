#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <bit>
#include <cstring>
#include <random>

#include "dw/errors.hpp"
#include "dw/grid.hpp"
#include "test_util.hpp"

using namespace dw;
using testutil::TempDir;

namespace {

GridHeader header(int nx, int ny, int nz, float h = 0.5f, Eigen::Vector3f origin = {1.0f, -2.0f, 0.25f}) {
  GridHeader g;
  g.dims = {nx, ny, nz};
  g.origin = origin;
  g.voxel_size = h;
  return g;
}

}  // namespace

TEST_CASE("world_to_grid examples") {
  const GridHeader h = header(4, 4, 4);
  const Vec3 o = h.origin.cast<double>();
  const double vs = h.voxel_size;
  CHECK(world_to_grid(o, h).isZero());
  CHECK(world_to_grid(o + Vec3(vs, 0, 0), h).isApprox(Vec3(1, 0, 0)));
  const Vec3 g = world_to_grid(o + Vec3(2.5 * vs, 0.5 * vs, 0), h);
  CHECK(g.x() == doctest::Approx(2.5));
  CHECK(g.y() == doctest::Approx(0.5));
  CHECK(g.z() == doctest::Approx(0.0));
}

TEST_CASE("world_to_grid inverts grid_to_world") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> coord(-1e6, 1e6);
  const GridHeader h = header(8, 8, 8, 0.013f, {-3.5f, 2.0f, 11.0f});
  for (int i = 0; i < 1000; ++i) {
    const Vec3 g(coord(rng), coord(rng), coord(rng));
    const Vec3 back = world_to_grid(grid_to_world(g, h), h);
    for (int a = 0; a < 3; ++a) CHECK(std::abs(back[a] - g[a]) <= 1e-6 * std::max(1.0, std::abs(g[a])));
  }
}

TEST_CASE("sample_trilinear examples") {
  GridHeader h = header(2, 2, 2);
  ScalarGrid3 ramp(h);
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y) ramp(1, y, z) = 1.0f;
  CHECK(sample_trilinear(ramp, Vec3(0.25, 0, 0)) == 0.25);

  ScalarGrid3 constant(header(5, 4, 3), 3.25f);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2, 7);
  for (int i = 0; i < 100; ++i) CHECK(sample_trilinear(constant, Vec3(u(rng), u(rng), u(rng))) == doctest::Approx(3.25));

  ScalarGrid3 random(header(5, 4, 3));
  for (float& v : random.values()) v = static_cast<float>(u(rng));
  for (int z = 0; z < 3; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 5; ++x) CHECK(sample_trilinear(random, Vec3(x, y, z)) == random(x, y, z));
}

TEST_CASE("sample_trilinear clamps outside the lattice") {
  ScalarGrid3 g(header(3, 3, 3));
  for (std::size_t i = 0; i < g.voxel_count(); ++i) g.at(i) = static_cast<float>(i);
  CHECK(sample_trilinear(g, Vec3(-5, -1, -0.5)) == g(0, 0, 0));
  CHECK(sample_trilinear(g, Vec3(9, 2, 40)) == g(2, 2, 2));
}

TEST_CASE("trilinear stencil weights sum to one") {
  const GridHeader h = header(6, 5, 4);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1, 7);
  for (int i = 0; i < 200; ++i) {
    const auto s = trilinear_stencil(h, Vec3(u(rng), u(rng), u(rng)));
    double sum = 0;
    for (double w : s.weight) {
      CHECK(w >= 0.0);
      sum += w;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("affine fields: trilinear exact, central gradient exact") {
  const GridHeader h = header(7, 6, 5, 0.25f, {0, 0, 0});
  const Vec3 a(0.75, -1.5, 2.0);
  const double b = 0.5;
  const ScalarGrid3 g = testutil::sample_field(h, [&](const Vec3& p) { return a.dot(p) + b; });
  std::mt19937_64 rng(5);
  for (int i = 0; i < 300; ++i) {
    const Vec3 q(std::uniform_real_distribution<double>(0, 6)(rng), std::uniform_real_distribution<double>(0, 5)(rng),
                 std::uniform_real_distribution<double>(0, 4)(rng));
    CHECK(sample_trilinear(g, q) == doctest::Approx(a.dot(grid_to_world(q, h)) + b).epsilon(1e-6));
  }
  for (int z = 1; z < 4; ++z)
    for (int y = 1; y < 5; ++y)
      for (int x = 1; x < 6; ++x) {
        const Vec3 gr = gradient_central(g, x, y, z);
        for (int k = 0; k < 3; ++k) CHECK(gr[k] == doctest::Approx(a[k]).epsilon(1e-5));
      }
}

TEST_CASE("gradient_central examples") {
  const GridHeader h = header(6, 6, 6, 0.1f);
  ScalarGrid3 ramp(h);
  for (int z = 0; z < 6; ++z)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) ramp(x, y, z) = h.voxel_size * x;
  const Vec3 g = gradient_central(ramp, 2, 3, 3);
  CHECK(g.x() == doctest::Approx(1.0));
  CHECK(g.y() == 0.0);
  CHECK(g.z() == 0.0);
  // One-sided at both boundaries.
  CHECK(gradient_central(ramp, 0, 0, 0).x() == doctest::Approx(1.0));
  CHECK(gradient_central(ramp, 5, 5, 5).x() == doctest::Approx(1.0));

  ScalarGrid3 constant(h, 2.0f);
  CHECK(gradient_central(constant, 0, 3, 5).isZero());
  CHECK(gradient_central(constant, 2, 2, 2).isZero());
}

TEST_CASE("gradient_central on an analytic sphere") {
  const double r = 1.0;
  const GridHeader h = testutil::lattice(49, -1.5, 1.5);
  CHECK(h.voxel_size <= r / 16);
  const Vec3 c(0.05, -0.02, 0.01);
  const ScalarGrid3 g = testutil::sphere_grid(h, c, r);
  const double vs = h.voxel_size;
  // Direction error of the central difference on |p - c| falls like (h/d)^2:
  // a few hundredths at d = 2h, below 0.01 from d = 4h on.
  double near = 0.0, far = 0.0, surface = 0.0;
  for (int z = 1; z < 48; ++z)
    for (int y = 1; y < 48; ++y)
      for (int x = 1; x < 48; ++x) {
        const Vec3 p = h.voxel_center(x, y, z);
        const double d = (p - c).norm();
        if (d < 2 * vs) continue;
        const Vec3 n = gradient_central(g, x, y, z).normalized();
        const double err = (n - (p - c) / d).norm();
        double& worst = d < 4 * vs ? near : far;
        worst = std::max(worst, err);
        if (std::abs(d - r) <= 1.5 * vs) surface = std::max(surface, err);
      }
  CHECK(far < 0.01);
  CHECK(near < 0.03);
  CHECK(surface < 0.002);
}

TEST_CASE("gradient_trilinear matches central gradient at voxel centers") {
  const GridHeader h = header(5, 5, 5);
  ScalarGrid3 g(h);
  std::mt19937_64 rng(9);
  for (float& v : g.values()) v = std::uniform_real_distribution<float>(-1, 1)(rng);
  for (int z = 0; z < 5; ++z)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) CHECK((gradient_trilinear(g, Vec3(x, y, z)) - gradient_central(g, x, y, z)).norm() < 1e-12);
}

TEST_CASE("DWGRID01 round trip is bit exact, including negative zero") {
  TempDir dir("grid");
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    std::uniform_int_distribution<int> d(2, 9);
    const GridHeader h = header(d(rng), d(rng), d(rng), 0.37f + trial, {-1.25f * trial, 0.5f, 3.0f});
    ColorGrid3 g(h);
    for (float& v : g.values()) v = std::uniform_real_distribution<float>(-10, 10)(rng);
    g.at(0, 0) = -0.0f;
    g.at(1, 2) = std::numeric_limits<float>::denorm_min();
    write_grid(g, dir / "g.grid");
    const auto back = read_grid<ColorGrid3>(dir / "g.grid");
    CHECK(back.header() == g.header());
    REQUIRE(back.values().size() == g.values().size());
    CHECK(std::memcmp(back.values().data(), g.values().data(), g.values().size() * sizeof(float)) == 0);
    CHECK(std::signbit(back.at(0, 0)));
  }
}

TEST_CASE("DWGRID01 byte layout") {
  TempDir dir("grid");
  ScalarGrid3 zeros(header(2, 2, 2, 0.5f, {1, 2, 3}));
  write_grid(zeros, dir / "z.grid");
  const auto bytes = testutil::read_bytes(dir / "z.grid");
  CHECK(bytes.size() == 72u);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "DWGRID01");
  CHECK(bytes[8] == 2);
  CHECK(bytes[20] == 1);  // channels
  float origin_y;
  std::memcpy(&origin_y, bytes.data() + 28, 4);
  CHECK(origin_y == 2.0f);
  float vs;
  std::memcpy(&vs, bytes.data() + 36, 4);
  CHECK(vs == 0.5f);
}

TEST_CASE("DWGRID01 rejects malformed files") {
  TempDir dir("grid");
  ScalarGrid3 g(header(3, 3, 3), 1.0f);
  write_grid(g, dir / "ok.grid");
  const auto good = testutil::read_bytes(dir / "ok.grid");

  auto bad = good;
  bad[0] = 'X';
  bad[1] = 'X';
  testutil::write_bytes(dir / "magic.grid", bad);
  CHECK_THROWS_AS(read_grid_raw(dir / "magic.grid"), FormatError);

  bad = good;
  bad.resize(bad.size() - 3);
  testutil::write_bytes(dir / "trunc.grid", bad);
  CHECK_THROWS_AS(read_grid_raw(dir / "trunc.grid"), FormatError);

  bad = good;
  bad.resize(20);
  testutil::write_bytes(dir / "header.grid", bad);
  CHECK_THROWS_AS(read_grid_raw(dir / "header.grid"), FormatError);

  bad = good;
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bad.data() + 24, &nan, 4);
  testutil::write_bytes(dir / "nan.grid", bad);
  CHECK_THROWS_AS(read_grid_raw(dir / "nan.grid"), FormatError);

  bad = good;
  bad.push_back(0);
  testutil::write_bytes(dir / "trailing.grid", bad);
  CHECK_THROWS_AS(read_grid_raw(dir / "trailing.grid"), FormatError);

  CHECK_THROWS_AS(read_grid<VectorGrid3>(dir / "ok.grid"), FormatError);
  CHECK_THROWS_AS(read_grid_raw(dir / "missing.grid"), IoError);
}

TEST_CASE("GridHeader validation") {
  CHECK_THROWS(ScalarGrid3(header(1, 4, 4)));
  CHECK_THROWS(ScalarGrid3(header(4, 4, 4, 0.0f)));
  CHECK_THROWS(ScalarGrid3(header(4, 4, 4, -1.0f)));
  const GridHeader h = header(3, 4, 5);
  CHECK(h.index(2, 3, 4) == 2 + 3 * (3 + 4 * 4));
  const auto c = h.coords(h.index(1, 2, 3));
  CHECK(c == std::array<int, 3>{1, 2, 3});
}
