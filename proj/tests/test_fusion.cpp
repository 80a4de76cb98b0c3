#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <numeric>
#include <random>

#include "dw/errors.hpp"
#include "dw/normal_fusion.hpp"
#include "dw/parallel.hpp"
#include "dw/pipeline.hpp"
#include "test_util.hpp"

using namespace dw;

namespace {

struct Scene {
  GridHeader lattice = cube_lattice(48, -1, 1);
  ScalarGrid3 sdf = analytic_sphere_sdf(lattice, Vec3::Zero(), 0.5);
  Camera cam = orbit_camera(20, 0, 2.5, Vec3::Zero(), 32, 32);
  ViewRender render = sphere_trace(sdf, cam);
  std::vector<RayEmission> emissions =
      visible_emissions(ray_march_accumulate(sdf, cam, 256), render, lattice.voxel_size);
};

VectorGrid3 empty_field(const GridHeader& h) {
  GridHeader g = h;
  g.channels = 4;
  return VectorGrid3(g);
}

void set_voxel(VectorGrid3& f, std::size_t i, const Vec3& v, float w) {
  for (int c = 0; c < 3; ++c) f.at(i, c) = static_cast<float>(v[c]);
  f.at(i, 3) = w;
}

}  // namespace

TEST_CASE("one view: weights equal the ray counts") {
  Scene s;
  NormalAccumulator acc(s.lattice);
  acc.add_view(s.render, s.cam, s.emissions);
  const VectorGrid3 f = acc.field();
  const auto counts = voxel_counts(s.emissions);
  REQUIRE(!counts.empty());
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < f.voxel_count(); ++i) nonzero += f.at(i, 3) > 0;
  CHECK(nonzero == counts.size());
  for (const auto& c : counts) CHECK(f.at(c.voxel, 3) == static_cast<float>(c.count));
}

TEST_CASE("the same view twice doubles v and w exactly") {
  Scene s;
  NormalAccumulator once(s.lattice), twice(s.lattice);
  once.add_view(s.render, s.cam, s.emissions);
  twice.add_view(s.render, s.cam, s.emissions);
  twice.add_view(s.render, s.cam, s.emissions);
  const VectorGrid3 a = once.field(), b = twice.field();
  for (std::size_t i = 0; i < a.values().size(); ++i) CHECK(b.values()[i] == 2.0f * a.values()[i]);
}

TEST_CASE("single-view fusion stores the view's world normals") {
  Scene s;
  // Keep one emission per voxel so every voxel sees a single pixel.
  std::vector<RayEmission> unique;
  std::vector<char> seen(s.lattice.voxel_count(), 0);
  for (const auto& e : s.emissions) {
    if (seen[e.voxel]) continue;
    seen[e.voxel] = 1;
    unique.push_back(e);
  }
  NormalAccumulator acc(s.lattice);
  acc.add_view(s.render, s.cam, unique);
  const VectorGrid3 f = finalize_fusion(acc.field()).field;
  for (const auto& e : unique) {
    const Vec3 nc(s.render.normal_cam.pixel(e.pixel, 0), s.render.normal_cam.pixel(e.pixel, 1),
                  s.render.normal_cam.pixel(e.pixel, 2));
    const Vec3 nw = s.cam.to_world(nc).normalized();
    const Vec3 v(f.at(e.voxel, 0), f.at(e.voxel, 1), f.at(e.voxel, 2));
    CHECK((v - nw).norm() < 1e-6);
  }
}

TEST_CASE("mirrored views of a wall add up") {
  // Hand-built renders: two 1x1 views whose pixels both see world normal +x.
  GridHeader h = cube_lattice(8, -1, 1);
  const Camera a = orbit_camera(45, 0, 3, Vec3::Zero(), 1, 1);
  const Camera b = orbit_camera(135, 0, 3, Vec3::Zero(), 1, 1);
  auto render_for = [](const Camera& cam) {
    ViewRender r{Image(1, 1, 3), Image(1, 1, 1, 1.0f), Image(1, 1, 1, 1.0f), Image(1, 1, 3)};
    const Vec3 nc = cam.to_camera(Vec3(1, 0, 0));
    for (int c = 0; c < 3; ++c) r.normal_cam.at(0, 0, c) = static_cast<float>(nc[c]);
    return r;
  };
  const std::uint32_t voxel = static_cast<std::uint32_t>(h.index(6, 4, 4));
  const int k = 3;
  std::vector<RayEmission> em(k, RayEmission{voxel, 0, 1.0f});
  NormalAccumulator acc(h);
  acc.add_view(render_for(a), a, em);
  acc.add_view(render_for(b), b, em);
  const VectorGrid3 f = acc.field();
  const Vec3 v(f.at(voxel, 0), f.at(voxel, 1), f.at(voxel, 2));
  CHECK(v.norm() == doctest::Approx(2.0 * k).epsilon(1e-6));
  CHECK(f.at(voxel, 3) == 2.0f * k);

  CHECK_THROWS_AS(acc.add_view(render_for(a), orbit_camera(0, 0, 3, Vec3::Zero(), 2, 2), em), DimensionError);
}

TEST_CASE("finalize_fusion examples") {
  VectorGrid3 f = empty_field(cube_lattice(4, 0, 1));
  set_voxel(f, 0, Vec3(0, 0, 3), 3);
  set_voxel(f, 1, Vec3(0, 0, 0), 2);  // +k and -k summed
  set_voxel(f, 2, Vec3(2, 1, 0), 3);  // (1,0,0)*2 + (0,1,0)*1
  set_voxel(f, 3, Vec3(5, 5, 5), 0);  // no weight: untouched
  const FusionResult r = finalize_fusion(f);
  CHECK(r.degenerate == 1);
  CHECK(r.field.at(0, 2) == 1.0f);
  CHECK(r.field.at(0, 3) == 3.0f);
  CHECK(r.field.at(1, 3) == 0.0f);
  CHECK(r.field.at(2, 0) == doctest::Approx(2 / std::sqrt(5.0)));
  CHECK(r.field.at(2, 1) == doctest::Approx(1 / std::sqrt(5.0)));
  CHECK(r.field.at(3, 0) == 5.0f);
}

TEST_CASE("finalized normals are unit length") {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> n(0, 2);
  VectorGrid3 f = empty_field(cube_lattice(10, 0, 1));
  for (std::size_t i = 0; i < f.voxel_count(); ++i) set_voxel(f, i, Vec3(n(rng), n(rng), n(rng)), i % 3 ? 1.5f : 0.0f);
  const VectorGrid3 out = finalize_fusion(f).field;
  for (std::size_t i = 0; i < out.voxel_count(); ++i) {
    CHECK(out.at(i, 3) >= 0.0f);
    if (out.at(i, 3) > 0) CHECK(std::abs(Vec3(out.at(i, 0), out.at(i, 1), out.at(i, 2)).norm() - 1) < 1e-4);
  }
}

TEST_CASE("fill_normal_holes examples") {
  const GridHeader h = cube_lattice(5, 0, 1);
  const ScalarGrid3 surface(h, 0.0f);  // everything is "surface"
  const std::size_t mid = h.index(2, 2, 2);

  SUBCASE("fully covered field is a fixpoint") {
    VectorGrid3 f = empty_field(h);
    for (std::size_t i = 0; i < f.voxel_count(); ++i) set_voxel(f, i, Vec3(0, 1, 0), 2);
    CHECK(fill_normal_holes(f, surface) == f);
  }
  SUBCASE("hole among six identical normals") {
    VectorGrid3 f = empty_field(h);
    const Vec3 n = Vec3(1, 2, 2).normalized();
    for (auto d : {std::array{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}})
      set_voxel(f, h.index(2 + d[0], 2 + d[1], 2 + d[2]), n, 4);
    const VectorGrid3 out = fill_normal_holes(f, surface, 0, 1);
    for (int c = 0; c < 3; ++c) CHECK(out.at(mid, c) == doctest::Approx(n[c]).epsilon(1e-6));
    CHECK(out.at(mid, 3) == 4.0f);
  }
  SUBCASE("two orthogonal neighbours") {
    VectorGrid3 f = empty_field(h);
    set_voxel(f, h.index(1, 2, 2), Vec3(1, 0, 0), 1);
    set_voxel(f, h.index(3, 2, 2), Vec3(0, 1, 0), 1);
    const VectorGrid3 out = fill_normal_holes(f, surface, 0, 1);
    CHECK(out.at(mid, 0) == doctest::Approx(1 / std::sqrt(2.0)));
    CHECK(out.at(mid, 1) == doctest::Approx(1 / std::sqrt(2.0)));
    CHECK(out.at(mid, 2) == 0.0f);
  }
  SUBCASE("voxels off the surface band stay empty") {
    ScalarGrid3 far(h, 1.0f);
    VectorGrid3 f = empty_field(h);
    set_voxel(f, h.index(1, 2, 2), Vec3(1, 0, 0), 1);
    CHECK(fill_normal_holes(f, far) == f);
  }
  SUBCASE("Jacobi: one ring per round") {
    VectorGrid3 f = empty_field(h);
    set_voxel(f, h.index(0, 0, 0), Vec3(0, 0, 1), 1);
    const VectorGrid3 one = fill_normal_holes(f, surface, 0, 1);
    CHECK(one.at(h.index(1, 0, 0), 3) == 1.0f);
    CHECK(one.at(h.index(2, 0, 0), 3) == 0.0f);
    CHECK(one.at(h.index(1, 1, 0), 3) == 0.0f);
  }
}

TEST_CASE("fusion of a sphere: accuracy and view-order independence") {
  const GridHeader h = cube_lattice(64, -1, 1);
  const ScalarGrid3 sdf = analytic_sphere_sdf(h, Vec3::Zero(), 0.5);
  const auto cams = ring_cameras(h, 8, 45, 0, 2.5, 40, 64, 64);
  FusionSettings settings;
  settings.fill_iterations = 0;
  const FusedNormals fused = fuse_normal_views(sdf, cams, settings);

  double sum = 0;
  std::size_t n = 0;
  for (int z = 0; z < 64; ++z)
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const std::size_t i = h.index(x, y, z);
        if (!(fused.field.at(i, 3) > 0) || std::abs(sdf.at(i)) > h.voxel_size) continue;
        const Vec3 v(fused.field.at(i, 0), fused.field.at(i, 1), fused.field.at(i, 2));
        CHECK(std::abs(v.norm() - 1) < 1e-4);
        sum += testutil::angle_deg(v, h.voxel_center(x, y, z));
        ++n;
      }
  REQUIRE(n > 1000);
  CHECK(sum / n < 5.0);

  std::vector<Camera> reversed(cams.rbegin(), cams.rend());
  std::vector<Camera> shuffled = cams;
  std::mt19937 rng(3);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(fuse_normal_views(sdf, reversed, settings).field == fused.field);
  CHECK(fuse_normal_views(sdf, shuffled, settings).field == fused.field);

  set_thread_count(1);
  const FusedNormals single = fuse_normal_views(sdf, cams, settings);
  set_thread_count(0);
  CHECK(single.field == fused.field);
}

TEST_CASE("normal map hook sees every view and cannot resize") {
  const GridHeader h = cube_lattice(32, -1, 1);
  const ScalarGrid3 sdf = analytic_sphere_sdf(h, Vec3::Zero(), 0.5);
  const auto cams = ring_cameras(h, 4, 90, 0, 2.5, 40, 24, 24);
  std::vector<std::size_t> seen;
  fuse_normal_views(sdf, cams, {}, [&](const Image& n, std::size_t view) {
    seen.push_back(view);
    return n;
  });
  CHECK(seen == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK_THROWS_AS(fuse_normal_views(sdf, cams, {}, [](const Image&, std::size_t) { return Image(2, 2, 3); }),
                  DimensionError);
}
