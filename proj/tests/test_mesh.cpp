#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>
#include <sstream>

#include "dw/errors.hpp"
#include "dw/mesh.hpp"
#include "dw/parallel.hpp"
#include "dw/pipeline.hpp"
#include "test_util.hpp"

using namespace dw;
using testutil::TempDir;

namespace {

TriMesh translated(TriMesh m, const Eigen::Vector3f& d) {
  for (auto& v : m.vertices) v += d;
  return m;
}

TriMesh merged(const TriMesh& a, const TriMesh& b) {
  TriMesh out = a;
  const auto off = static_cast<std::uint32_t>(a.vertices.size());
  out.vertices.insert(out.vertices.end(), b.vertices.begin(), b.vertices.end());
  for (auto t : b.triangles) out.triangles.push_back({t[0] + off, t[1] + off, t[2] + off});
  return out;
}

}  // namespace

TEST_CASE("OBJ quad is fan triangulated") {
  std::istringstream in(
      "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nvt 0 0\nf 1/1/1 2/1/1 3/1/1 4/1/1\n");
  const TriMesh m = parse_obj(in);
  CHECK(m.vertices.size() == 4);
  REQUIRE(m.triangles.size() == 2);
  CHECK(m.triangles[0] == std::array<std::uint32_t, 3>{0, 1, 2});
  CHECK(m.triangles[1] == std::array<std::uint32_t, 3>{0, 2, 3});
}

TEST_CASE("OBJ negative indices are relative") {
  std::istringstream in("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n");
  const TriMesh m = parse_obj(in);
  REQUIRE(m.triangles.size() == 1);
  CHECK(m.triangles[0] == std::array<std::uint32_t, 3>{0, 1, 2});
}

TEST_CASE("OBJ out of range face names the line") {
  std::ostringstream text;
  for (int i = 0; i < 8; ++i) text << "v " << i << " 0 " << (i % 2) << "\n";
  text << "f 1 2 9\n";
  std::istringstream in(text.str());
  try {
    parse_obj(in);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 9") != std::string::npos);
  }
}

TEST_CASE("OBJ malformed vertex is a parse error") {
  std::istringstream in("v 0 zero 0\n");
  CHECK_THROWS_AS(parse_obj(in), ParseError);
}

TEST_CASE("degenerate triangles are dropped on load") {
  TempDir dir("mesh");
  {
    std::ofstream out(dir / "d.obj");
    out << "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 2 0 0\nf 1 2 3\nf 1 1 2\nf 1 2 4\n";
  }
  const TriMesh m = load_mesh(dir / "d.obj");
  CHECK(m.triangles.size() == 1);
}

TEST_CASE("mesh save/load round trip in every format") {
  TempDir dir("mesh");
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(-5, 5);
  TriMesh m;
  for (int i = 0; i < 60; ++i) m.vertices.emplace_back(u(rng), u(rng), u(rng));
  std::uniform_int_distribution<std::uint32_t> idx(0, 59);
  while (m.triangles.size() < 80) {
    std::array<std::uint32_t, 3> t{idx(rng), idx(rng), idx(rng)};
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) continue;
    m.triangles.push_back(t);
  }
  // Awkward values for a text format.
  m.vertices[0] = {1e-30f, -0.1f, 3.4028235e38f};
  m.vertices[1] = {std::nextafter(1.0f, 2.0f), -0.0f, 123456.789f};

  for (const char* name : {"r.obj", "r.ply"}) {
    save_mesh(m, dir / name);
    const TriMesh back = load_mesh(dir / name);
    CHECK(back.triangles == m.triangles);
    REQUIRE(back.vertices.size() == m.vertices.size());
    for (std::size_t i = 0; i < m.vertices.size(); ++i) CHECK(back.vertices[i] == m.vertices[i]);
  }
  save_mesh(m, dir / "a.ply", PlyEncoding::Ascii);
  const TriMesh ascii = load_mesh(dir / "a.ply");
  CHECK(ascii.triangles == m.triangles);
  for (std::size_t i = 0; i < m.vertices.size(); ++i) CHECK(ascii.vertices[i] == m.vertices[i]);

  TriMesh colored = m;
  colored.colors.assign(m.vertices.size(), Eigen::Vector3f(0.2f, 0.4f, 1.0f));
  save_mesh(colored, dir / "c.ply");
  const TriMesh cback = load_mesh(dir / "c.ply");
  REQUIRE(cback.colors.size() == m.vertices.size());
  CHECK((cback.colors[5] - Eigen::Vector3f(0.2f, 0.4f, 1.0f)).norm() < 1.0f / 255.0f);
}

TEST_CASE("unsupported and truncated mesh files") {
  TempDir dir("mesh");
  TriMesh m = make_icosphere(1.0, 0);
  CHECK_THROWS_AS(save_mesh(m, dir / "x.stl"), IoError);
  testutil::write_bytes(dir / "x.stl", {1, 2, 3});
  CHECK_THROWS_AS(load_mesh(dir / "x.stl"), IoError);
  save_mesh(m, dir / "t.ply");
  auto bytes = testutil::read_bytes(dir / "t.ply");
  bytes.resize(bytes.size() - 7);
  testutil::write_bytes(dir / "t.ply", bytes);
  CHECK_THROWS_AS(load_mesh(dir / "t.ply"), ParseError);
  CHECK_THROWS_AS(load_mesh(dir / "missing.obj"), IoError);
}

TEST_CASE("closest point on triangle agrees with the brute-force oracle") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 a(u(rng), u(rng), u(rng)), b(u(rng), u(rng), u(rng)), c(u(rng), u(rng), u(rng));
    const Vec3 p(u(rng), u(rng), u(rng));
    const double d = (closest_point_on_triangle(p, a, b, c) - p).norm();
    CHECK(d == doctest::Approx(testutil::triangle_distance(p, a, b, c)).epsilon(1e-9));
  }
}

TEST_CASE("mesh_to_sdf on an icosphere") {
  const TriMesh sphere = make_icosphere(1.0, 3);
  const ScalarGrid3 sdf = mesh_to_sdf(sphere, MeshToSdfOptions{64, 0.1});
  const GridHeader& h = sdf.header();
  CHECK(h.dims == std::array<int, 3>{64, 64, 64});
  const double vs = h.voxel_size;
  // Lattice centered on the box, 10% padding of the longest extent per side.
  CHECK(vs == doctest::Approx(2.0 * 1.2 / 63).epsilon(1e-5));
  const Vec3 center = (h.bounds().lo + h.bounds().hi) / 2;
  CHECK(center.norm() < 1e-5);

  // Voxel nearest the center.
  const Vec3 g = world_to_grid(Vec3::Zero(), h);
  const int cx = static_cast<int>(std::lround(g.x()));
  CHECK(sdf(cx, cx, cx) == doctest::Approx(-1.0).epsilon(2 * vs));
  CHECK(sdf(cx, cx, cx) < 0.0f);
  CHECK(sdf(0, 0, 0) > 0.0f);
  CHECK(sdf(63, 0, 63) > 0.0f);

  // Magnitudes against the brute-force oracle on a sample of voxels.
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> d(0, 63);
  for (int i = 0; i < 200; ++i) {
    const int x = d(rng), y = d(rng), z = d(rng);
    const double oracle = testutil::mesh_distance(sphere, h.voxel_center(x, y, z));
    CHECK(std::abs(sdf(x, y, z)) == doctest::Approx(oracle).epsilon(1e-5));
    const double analytic = h.voxel_center(x, y, z).norm() - 1.0;
    if (std::abs(analytic) > 0.05) CHECK((sdf(x, y, z) < 0) == (analytic < 0));
  }
}

TEST_CASE("mesh_to_sdf is translation and scale equivariant") {
  const TriMesh sphere = make_icosphere(0.8, 2);
  const ScalarGrid3 a = mesh_to_sdf(sphere, MeshToSdfOptions{32, 0.15});
  const ScalarGrid3 b = mesh_to_sdf(translated(sphere, {0.5f, -1.25f, 2.0f}), MeshToSdfOptions{32, 0.15});
  double worst = 0;
  for (std::size_t i = 0; i < a.voxel_count(); ++i) worst = std::max(worst, double(std::abs(a.at(i) - b.at(i))));
  CHECK(worst < 1e-5);

  TriMesh scaled = sphere;
  for (auto& v : scaled.vertices) v *= 2.0f;
  const ScalarGrid3 c = mesh_to_sdf(scaled, MeshToSdfOptions{32, 0.15});
  CHECK(c.header().voxel_size == doctest::Approx(2 * a.header().voxel_size).epsilon(1e-6));
  worst = 0;
  for (std::size_t i = 0; i < a.voxel_count(); ++i) worst = std::max(worst, double(std::abs(c.at(i) - 2 * a.at(i))));
  CHECK(worst < 1e-5);
}

TEST_CASE("mesh_to_sdf of two disjoint spheres") {
  const TriMesh s1 = make_icosphere(0.5, 3, Vec3(-0.8, 0, 0));
  const TriMesh s2 = make_icosphere(0.5, 3, Vec3(0.8, 0, 0));
  const ScalarGrid3 sdf = mesh_to_sdf(merged(s1, s2), MeshToSdfOptions{48, 0.1});
  const GridHeader& h = sdf.header();
  const double vs = h.voxel_size;
  int checked = 0;
  for (int z = 0; z < 48; ++z)
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 48; ++x) {
        const Vec3 p = h.voxel_center(x, y, z);
        const double analytic = std::min((p - Vec3(-0.8, 0, 0)).norm(), (p - Vec3(0.8, 0, 0)).norm()) - 0.5;
        if (std::abs(analytic) > 2 * vs) {
          CHECK((sdf(x, y, z) < 0) == (analytic < 0));
        } else {
          CHECK(std::abs(sdf(x, y, z) - analytic) < 2 * vs);
        }
        ++checked;
      }
  CHECK(checked == 48 * 48 * 48);
  const Vec3 gap = world_to_grid(Vec3(0, 0, 0), h);
  CHECK(sample_trilinear(sdf, gap) > 0.0);
}

TEST_CASE("mesh_to_sdf is negative nowhere outside the mesh box") {
  const TriMesh sphere = make_icosphere(1.0, 2);
  const ScalarGrid3 sdf = mesh_to_sdf(sphere, MeshToSdfOptions{32, 0.15});
  const Aabb box = sphere.bounds();
  const GridHeader& h = sdf.header();
  for (int z = 0; z < 32; ++z)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const Vec3 p = h.voxel_center(x, y, z);
        const Vec3 out = (p - box.hi).cwiseMax(box.lo - p).cwiseMax(0.0);
        if (out.norm() > 0) {
          CHECK(sdf(x, y, z) > 0.0f);
          CHECK(sdf(x, y, z) >= out.norm() - 1e-5);
        }
      }
}

TEST_CASE("mesh_to_sdf rejects empty or flat meshes") {
  CHECK_THROWS_AS(mesh_to_sdf(TriMesh{}, MeshToSdfOptions{32, 0.1}), Error);
  TriMesh flat;
  flat.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  flat.triangles = {{0, 1, 2}};
  CHECK_NOTHROW(mesh_to_sdf(flat, MeshToSdfOptions{16, 0.1}));
  TriMesh point;
  point.vertices = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
  point.triangles = {{0, 1, 2}};
  CHECK_THROWS_AS(mesh_to_sdf(point, MeshToSdfOptions{16, 0.1}), Error);
  CHECK_THROWS_AS(mesh_to_sdf(make_icosphere(1, 1), MeshToSdfOptions{8, 0.1}), Error);
}

TEST_CASE("marching cubes on an analytic sphere") {
  const GridHeader h = cube_lattice(64, -1.0, 1.0);
  const double r = 0.5;
  const ScalarGrid3 sdf = analytic_sphere_sdf(h, Vec3::Zero(), r);
  const TriMesh m = marching_cubes(sdf);
  REQUIRE(!m.empty());
  double worst = 0;
  for (const auto& v : m.vertices) {
    CHECK(v.allFinite());
    worst = std::max(worst, std::abs(v.cast<double>().norm() - r));
  }
  CHECK(worst < h.voxel_size / 2);
  // Outward winding.
  const double vol = testutil::signed_volume(m);
  CHECK(vol == doctest::Approx(4.0 / 3.0 * M_PI * r * r * r).epsilon(0.02));

  // Closed surface: every edge is shared by exactly two triangles.
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> edges;
  for (const auto& t : m.triangles)
    for (int k = 0; k < 3; ++k) {
      auto a = t[k], b = t[(k + 1) % 3];
      ++edges[{std::min(a, b), std::max(a, b)}];
    }
  for (const auto& [e, n] : edges) CHECK(n == 2);

  // Vertices lie on cell edges: at least two coordinates on the lattice.
  for (const auto& v : m.vertices) {
    const Vec3 g = world_to_grid(v.cast<double>(), h);
    int on = 0;
    for (int a = 0; a < 3; ++a) on += std::abs(g[a] - std::round(g[a])) < 1e-4;
    CHECK(on >= 2);
  }
}

TEST_CASE("marching cubes without a crossing is empty") {
  ScalarGrid3 g(cube_lattice(8, 0, 1), 1.0f);
  CHECK(marching_cubes(g).empty());
  ScalarGrid3 n(cube_lattice(8, 0, 1), -1.0f);
  CHECK(marching_cubes(n).empty());
}

TEST_CASE("mesh -> sdf -> marching cubes round trip Hausdorff") {
  const TriMesh input = make_icosphere(0.5, 3);
  const ScalarGrid3 sdf = mesh_to_sdf(input, MeshToSdfOptions{64, 0.15});
  const double h = sdf.header().voxel_size;
  const TriMesh out = marching_cubes(sdf);
  REQUIRE(!out.empty());
  double forward = 0, backward = 0;
  for (const auto& v : out.vertices) forward = std::max(forward, testutil::mesh_distance(input, v.cast<double>()));
  for (const auto& v : input.vertices) backward = std::max(backward, testutil::mesh_distance(out, v.cast<double>()));
  CHECK(forward < 2 * h);
  CHECK(backward < 2 * h);
}

TEST_CASE("mesh_to_sdf and marching cubes do not depend on the thread count") {
  const TriMesh sphere = make_icosphere(0.7, 2);
  set_thread_count(1);
  const ScalarGrid3 a = mesh_to_sdf(sphere, MeshToSdfOptions{24, 0.15});
  const TriMesh ma = marching_cubes(a);
  set_thread_count(4);
  const ScalarGrid3 b = mesh_to_sdf(sphere, MeshToSdfOptions{24, 0.15});
  const TriMesh mb = marching_cubes(b);
  set_thread_count(0);
  CHECK(a == b);
  CHECK(ma.vertices == mb.vertices);
  CHECK(ma.triangles == mb.triangles);
}
