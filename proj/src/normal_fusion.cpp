#include "dw/normal_fusion.hpp"

#include <cmath>

#include "dw/parallel.hpp"

namespace dw {

namespace {

constexpr double kFixedScale = 4294967296.0;  // 2^32

std::int64_t to_fixed(double v) { return static_cast<std::int64_t>(std::llround(v * kFixedScale)); }

constexpr std::array<std::array<int, 3>, 6> kNeighbours{
    {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};

}  // namespace

NormalAccumulator::NormalAccumulator(const GridHeader& lattice) : lattice_(lattice) {
  lattice_.channels = 4;
  lattice_.validate();
}

void NormalAccumulator::add_view(const ViewRender& render, const Camera& camera,
                                 const std::vector<RayEmission>& emissions, double multiplier) {
  if (render.normal_cam.width() != camera.width || render.normal_cam.height() != camera.height) {
    throw DimensionError("render size does not match camera image size");
  }
  const std::size_t voxels = lattice_.voxel_count();
  const std::size_t pixels = render.normal_cam.pixel_count();
  const std::int64_t weight = to_fixed(multiplier);
  for (const auto& e : emissions) {
    if (e.voxel >= voxels || e.pixel >= pixels) throw DimensionError("emission outside the field or image");
    if (!render.hit(e.pixel)) continue;
    const Vec3 nc(render.normal_cam.pixel(e.pixel, 0), render.normal_cam.pixel(e.pixel, 1),
                  render.normal_cam.pixel(e.pixel, 2));
    const Vec3 nw = camera.to_world(nc);
    auto& s = sums_[e.voxel];
    for (int c = 0; c < 3; ++c) s[c] += to_fixed(multiplier * nw[c]);
    s[3] += weight;
  }
}

VectorGrid3 NormalAccumulator::field() const {
  VectorGrid3 out(lattice_);
  for (const auto& [voxel, s] : sums_) {
    for (int c = 0; c < 4; ++c) out.at(voxel, c) = static_cast<float>(static_cast<double>(s[c]) / kFixedScale);
  }
  return out;
}

FusionResult finalize_fusion(const VectorGrid3& accumulated, double degenerate_eps) {
  FusionResult r{accumulated, 0};
  VectorGrid3& f = r.field;
  for (std::size_t i = 0; i < f.voxel_count(); ++i) {
    if (!(f.at(i, 3) > 0.0f)) continue;
    const Vec3 v(f.at(i, 0), f.at(i, 1), f.at(i, 2));
    const double n = v.norm();
    if (n <= degenerate_eps) {
      for (int c = 0; c < 4; ++c) f.at(i, c) = 0.0f;
      ++r.degenerate;
      continue;
    }
    for (int c = 0; c < 3; ++c) f.at(i, c) = static_cast<float>(v[c] / n);
  }
  return r;
}

VectorGrid3 fill_normal_holes(const VectorGrid3& field, const ScalarGrid3& sdf, double band, int iterations) {
  const GridHeader& h = field.header();
  if (!h.same_lattice(sdf.header())) throw DimensionError("normal field and SDF lattices differ");
  if (band <= 0.0) band = 1.5 * h.voxel_size;
  VectorGrid3 cur = field;
  for (int it = 0; it < iterations; ++it) {
    VectorGrid3 next = cur;
    bool changed = false;
    std::vector<char> slab_changed(static_cast<std::size_t>(h.dims[2]), 0);
    parallel_for(0, h.dims[2], [&](std::int64_t zi) {
      const int z = static_cast<int>(zi);
      for (int y = 0; y < h.dims[1]; ++y) {
        for (int x = 0; x < h.dims[0]; ++x) {
          const std::size_t i = h.index(x, y, z);
          if (cur.at(i, 3) > 0.0f || std::abs(sdf.at(i)) > band) continue;
          Vec3 sum = Vec3::Zero();
          double wsum = 0.0;
          int n = 0;
          for (const auto& d : kNeighbours) {
            const int nx = x + d[0], ny = y + d[1], nz = z + d[2];
            if (!h.contains(nx, ny, nz)) continue;
            const std::size_t j = h.index(nx, ny, nz);
            if (!(cur.at(j, 3) > 0.0f)) continue;
            sum += Vec3(cur.at(j, 0), cur.at(j, 1), cur.at(j, 2));
            wsum += cur.at(j, 3);
            ++n;
          }
          if (n == 0 || sum.norm() <= 1e-6) continue;
          const Vec3 v = sum.normalized();
          for (int c = 0; c < 3; ++c) next.at(i, c) = static_cast<float>(v[c]);
          next.at(i, 3) = static_cast<float>(wsum / n);
          slab_changed[static_cast<std::size_t>(z)] = 1;
        }
      }
    });
    for (char c : slab_changed) changed = changed || c;
    cur = std::move(next);
    if (!changed) break;
  }
  return cur;
}

FusedNormals fuse_normal_views(const ScalarGrid3& sdf, std::span<const Camera> cameras,
                               const FusionSettings& settings, const NormalMapHook& hook) {
  const double h = sdf.header().voxel_size;
  NormalAccumulator acc(sdf.header());
  FusedNormals out;
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    ViewRender render = sphere_trace(sdf, cameras[i], settings.trace);
    if (hook) {
      Image enhanced = hook(render.normal_cam, i);
      if (!enhanced.same_shape(render.normal_cam)) throw DimensionError("normal map hook changed the image size");
      // Misses stay misses whatever the hook returns.
      for (std::size_t p = 0; p < enhanced.pixel_count(); ++p) {
        if (!render.hit(p)) {
          for (int c = 0; c < 3; ++c) enhanced.pixel(p, c) = 0.0f;
        }
      }
      render.normal_cam = std::move(enhanced);
    }
    const auto emissions =
        ray_march_accumulate(sdf, cameras[i], settings.samples_per_ray, settings.band_voxels * h);
    acc.add_view(render, cameras[i], visible_emissions(emissions, render, h, 2.0 * settings.band_voxels * h));
    out.renders.push_back(std::move(render));
  }
  FusionResult fin = finalize_fusion(acc.field());
  out.degenerate = fin.degenerate;
  out.field = fill_normal_holes(fin.field, sdf, settings.band_voxels * h, settings.fill_iterations);
  return out;
}

}  // namespace dw
