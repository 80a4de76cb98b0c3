#include "dw/texture_weaver.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "dw/errors.hpp"
#include "dw/parallel.hpp"

namespace dw {

void ProjectionParams::validate() const {
  if (radius < 0) throw ConfigError("projection radius must be >= 0");
  if (!(confidence_threshold >= 0.0) || !std::isfinite(confidence_threshold)) {
    throw ConfigError("confidence threshold must be a finite value >= 0");
  }
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("view priority beta must be finite and >= 0");
}

namespace {

double circular_distance(double a, double b) {
  double d = std::fmod(std::abs(a - b), 360.0);
  return d > 180.0 ? 360.0 - d : d;
}

constexpr std::array<std::array<int, 3>, 6> kNeighbours{
    {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}}};

}  // namespace

std::vector<std::size_t> spiral_order(std::span<const double> az, double reference_deg) {
  const std::size_t n = az.size();
  std::vector<std::size_t> order;
  if (n == 0) return order;
  std::vector<char> used(n, 0);
  // Smaller azimuth wins ties, then the lower index.
  auto better = [&](std::size_t i, double score, std::size_t best, double best_score, bool maximize) {
    if (score != best_score) return maximize ? score > best_score : score < best_score;
    if (az[i] != az[best]) return az[i] < az[best];
    return i < best;
  };
  std::size_t first = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (better(i, circular_distance(az[i], reference_deg), first, circular_distance(az[first], reference_deg), false)) {
      first = i;
    }
  }
  order.push_back(first);
  used[first] = 1;
  std::vector<double> min_dist(n);
  for (std::size_t i = 0; i < n; ++i) min_dist[i] = circular_distance(az[i], az[first]);
  while (order.size() < n) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      if (best == n || better(i, min_dist[i], best, min_dist[best], true)) best = i;
    }
    order.push_back(best);
    used[best] = 1;
    for (std::size_t i = 0; i < n; ++i) min_dist[i] = std::min(min_dist[i], circular_distance(az[i], az[best]));
  }
  return order;
}

double blend_weight(int depth_offset, int radial_offset, int radius) {
  const double r1 = radius + 1.0;
  return (1.0 - std::abs(depth_offset) / r1) * (1.0 - radial_offset / r1);
}

double confidence_weight(const Vec3& normal, const Vec3& view_dir, double beta, double distance) {
  return std::abs(normal.dot(view_dir)) * beta / (1.0 + distance);
}

double camera_azimuth(const Camera& camera) {
  const Vec3 back = -camera.forward();
  double deg = std::atan2(back.x(), back.z()) * 180.0 / std::numbers::pi;
  // Rounded to 1e-6 degrees so that rings built from exact angles tie exactly.
  deg = std::round(deg * 1e6) / 1e6;
  if (deg < 0.0) deg += 360.0;
  // Also maps -0 to +0.
  return deg >= 360.0 || deg == 0.0 ? 0.0 : deg;
}

PartialTexture render_partial_texture(const ColorGrid3& color, const ScalarGrid3& sdf, const Camera& camera,
                                      const ProjectionParams& params, const TraceSettings& trace,
                                      const Image* silhouette) {
  if (!color.header().same_lattice(sdf.header())) throw DimensionError("color field and SDF lattices differ");
  if (silhouette && (silhouette->width() != camera.width || silhouette->height() != camera.height)) {
    throw DimensionError("silhouette size does not match the camera");
  }
  PartialTexture out;
  out.render = sphere_trace(sdf, camera, trace);
  out.rgb = Image(camera.width, camera.height, 3);
  out.mask = Image(camera.width, camera.height, 1);
  const GridHeader& h = color.header();
  parallel_for(0, camera.height, [&](std::int64_t row) {
    for (int x = 0; x < camera.width; ++x) {
      const std::size_t p = static_cast<std::size_t>(row) * static_cast<std::size_t>(camera.width) +
                            static_cast<std::size_t>(x);
      bool incomplete = false;
      if (out.render.hit(p)) {
        const Vec3 hit(out.render.hits.pixel(p, 0), out.render.hits.pixel(p, 1), out.render.hits.pixel(p, 2));
        const TrilinearStencil s = trilinear_stencil(h, world_to_grid(hit, h));
        double conf = 0.0;
        double rgb[3] = {0, 0, 0};
        double wsum = 0.0;
        for (int k = 0; k < 8; ++k) {
          const double c = color.at(s.voxel[k], 3);
          conf += s.weight[k] * c;
          const double wk = s.weight[k] * c;
          wsum += wk;
          for (int ch = 0; ch < 3; ++ch) rgb[ch] += wk * color.at(s.voxel[k], ch);
        }
        incomplete = conf < params.confidence_threshold || !(wsum > 0.0);
        if (!incomplete) {
          for (int ch = 0; ch < 3; ++ch) out.rgb.pixel(p, ch) = static_cast<float>(rgb[ch] / wsum);
        }
      } else if (silhouette && silhouette->pixel(p, 0) > 0.5f) {
        incomplete = true;
      }
      if (incomplete) {
        out.mask.pixel(p, 0) = 1.0f;
        for (int ch = 0; ch < 3; ++ch) out.rgb.pixel(p, ch) = 0.5f;
      }
    }
  });
  for (std::size_t p = 0; p < out.mask.pixel_count(); ++p) {
    out.incomplete += out.mask.pixel(p, 0) > 0.5f;
    out.hits += out.render.hit(p);
  }
  return out;
}

namespace {

struct Deposit {
  std::uint32_t voxel;
  float weight;
  std::array<float, 3> rgb;
};

}  // namespace

ColorGrid3 project_view(const ColorGrid3& color, const ScalarGrid3& sdf, const Camera& camera,
                        const ViewRender& render, const Image& rgb, const Image& fill_mask,
                        const ProjectionParams& params, ProjectionStats* stats) {
  params.validate();
  const GridHeader& h = color.header();
  if (!h.same_lattice(sdf.header())) throw DimensionError("color field and SDF lattices differ");
  const int w = camera.width;
  const int ht = camera.height;
  if (rgb.width() != w || rgb.height() != ht || rgb.channels() != 3) {
    throw DimensionError("projected image must be " + std::to_string(w) + "x" + std::to_string(ht) + " rgb");
  }
  if (fill_mask.width() != w || fill_mask.height() != ht) throw DimensionError("fill mask size does not match");
  if (render.mask.width() != w || render.mask.height() != ht) throw DimensionError("render size does not match");

  const int r = params.radius;
  const double vs = h.voxel_size;
  std::vector<std::vector<Deposit>> rows(static_cast<std::size_t>(ht));
  parallel_for(0, ht, [&](std::int64_t row) {
    auto& out = rows[static_cast<std::size_t>(row)];
    std::vector<std::pair<std::uint32_t, double>> tube;
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(row) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x);
      if (!render.hit(p) || !(fill_mask.pixel(p, 0) > 0.5f)) continue;
      const Vec3 v = camera.ray_direction(x, static_cast<int>(row));
      const Vec3 hit(render.hits.pixel(p, 0), render.hits.pixel(p, 1), render.hits.pixel(p, 2));
      const Vec3 u1 = (std::abs(v.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY()).cross(v).normalized();
      const Vec3 u2 = v.cross(u1);
      const std::array<Vec3, 4> ring{u1, -u1, u2, -u2};
      tube.clear();
      auto visit = [&](const Vec3& q, double wb) {
        const Vec3 g = world_to_grid(q, h);
        std::array<int, 3> c{};
        for (int a = 0; a < 3; ++a) c[a] = static_cast<int>(std::lround(g[a]));
        if (!h.contains(c[0], c[1], c[2])) return;
        const auto idx = static_cast<std::uint32_t>(h.index(c[0], c[1], c[2]));
        for (auto& e : tube) {
          if (e.first == idx) {
            e.second = std::max(e.second, wb);
            return;
          }
        }
        tube.emplace_back(idx, wb);
      };
      for (int dd = -r; dd <= r; ++dd) {
        const Vec3 axis = hit + dd * vs * v;
        visit(axis, blend_weight(dd, 0, r));
        for (int dr = 1; dr <= r; ++dr) {
          for (const Vec3& u : ring) visit(axis + dr * vs * u, blend_weight(dd, dr, r));
        }
      }
      const std::array<float, 3> c{rgb.pixel(p, 0), rgb.pixel(p, 1), rgb.pixel(p, 2)};
      for (const auto& [idx, wb] : tube) {
        const auto cc = h.coords(idx);
        const Vec3 n = gradient_central(sdf, cc[0], cc[1], cc[2]);
        if (!(n.norm() > 1e-12)) continue;
        const Vec3 xw = h.voxel_center(cc[0], cc[1], cc[2]);
        const double wc = confidence_weight(n.normalized(), v, params.beta, (xw - camera.position).norm());
        const double wt = wb * wc;
        if (!(wt > 0.0)) continue;
        out.push_back({idx, static_cast<float>(wt), c});
      }
    }
  });

  std::vector<Deposit> all;
  for (auto& row : rows) all.insert(all.end(), row.begin(), row.end());
  std::stable_sort(all.begin(), all.end(), [](const Deposit& a, const Deposit& b) { return a.voxel < b.voxel; });

  ColorGrid3 out = color;
  ProjectionStats st;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    const std::uint32_t vox = all[i].voxel;
    double wsum = 0.0;
    double csum[3] = {0, 0, 0};
    for (; j < all.size() && all[j].voxel == vox; ++j) {
      wsum += all[j].weight;
      for (int ch = 0; ch < 3; ++ch) csum[ch] += static_cast<double>(all[j].weight) * all[j].rgb[ch];
    }
    i = j;
    const double w_old = color.at(vox, 3);
    if (!(w_old < params.confidence_threshold)) {
      ++st.protected_voxels;
      continue;
    }
    const double w_new = w_old + wsum;
    for (int ch = 0; ch < 3; ++ch) {
      out.at(vox, ch) = static_cast<float>((color.at(vox, ch) * w_old + csum[ch]) / w_new);
    }
    // Never let float rounding lower the stored confidence.
    out.at(vox, 3) = std::max(static_cast<float>(w_new), color.at(vox, 3));
    ++st.updated_voxels;
  }
  if (stats) *stats = st;
  return out;
}

ColorGrid3 project_view(const ColorGrid3& color, const ScalarGrid3& sdf, const Camera& camera, const Image& rgb,
                        const Image& fill_mask, const ProjectionParams& params, ProjectionStats* stats) {
  const ViewRender render = sphere_trace(sdf, camera, TraceSettings{0.5, 0.25, 512});
  return project_view(color, sdf, camera, render, rgb, fill_mask, params, stats);
}

ColorGrid3 fill_color_gaps(const ColorGrid3& color, const ScalarGrid3& sdf, double band, int iterations) {
  const GridHeader& h = color.header();
  if (!h.same_lattice(sdf.header())) throw DimensionError("color field and SDF lattices differ");
  if (band <= 0.0) band = 1.5 * h.voxel_size;
  ColorGrid3 cur = color;
  for (int it = 0; it < iterations; ++it) {
    ColorGrid3 next = cur;
    std::vector<char> slab_changed(static_cast<std::size_t>(h.dims[2]), 0);
    parallel_for(0, h.dims[2], [&](std::int64_t zi) {
      const int z = static_cast<int>(zi);
      for (int y = 0; y < h.dims[1]; ++y) {
        for (int x = 0; x < h.dims[0]; ++x) {
          const std::size_t i = h.index(x, y, z);
          if (cur.at(i, 3) > 0.0f || std::abs(sdf.at(i)) > band) continue;
          double sum[3] = {0, 0, 0};
          double wsum = 0.0;
          int n = 0;
          for (const auto& d : kNeighbours) {
            const int nx = x + d[0], ny = y + d[1], nz = z + d[2];
            if (!h.contains(nx, ny, nz)) continue;
            const std::size_t j = h.index(nx, ny, nz);
            const double wj = cur.at(j, 3);
            if (!(wj > 0.0)) continue;
            for (int c = 0; c < 3; ++c) sum[c] += wj * cur.at(j, c);
            wsum += wj;
            ++n;
          }
          if (n == 0) continue;
          for (int c = 0; c < 3; ++c) next.at(i, c) = static_cast<float>(sum[c] / wsum);
          next.at(i, 3) = static_cast<float>(wsum / n);
          slab_changed[static_cast<std::size_t>(z)] = 1;
        }
      }
    });
    cur = std::move(next);
    if (std::none_of(slab_changed.begin(), slab_changed.end(), [](char c) { return c != 0; })) break;
  }
  return cur;
}

WeaveResult weave_texture(const ScalarGrid3& sdf, std::span<const Camera> cameras, std::size_t reference_view,
                          const Image& reference_image, EnhancerBackend& gateway, const WeaveSettings& settings,
                          EnhancerBackend* fallback, const WeaveViewHook& hook) {
  if (cameras.empty()) throw ConfigError("no views configured");
  if (reference_view >= cameras.size()) throw ConfigError("reference view index out of range");
  settings.params.validate();
  const Camera& ref_cam = cameras[reference_view];
  if (reference_image.width() != ref_cam.width || reference_image.height() != ref_cam.height) {
    throw DimensionError("reference image is " + std::to_string(reference_image.width()) + "x" +
                         std::to_string(reference_image.height()) + " but its camera is " +
                         std::to_string(ref_cam.width) + "x" + std::to_string(ref_cam.height));
  }
  Image ref_rgb(reference_image.width(), reference_image.height(), 3);
  for (std::size_t p = 0; p < ref_rgb.pixel_count(); ++p) {
    for (int c = 0; c < 3; ++c) ref_rgb.pixel(p, c) = reference_image.pixel(p, reference_image.channels() == 1 ? 0 : c);
  }

  WeaveResult result;
  if (settings.initial_color) {
    if (!settings.initial_color->header().same_lattice(sdf.header())) {
      throw DimensionError("initial color field and SDF lattices differ");
    }
    result.color = *settings.initial_color;
  } else {
    result.color = ColorGrid3(sdf.header());
  }
  std::vector<double> az(cameras.size());
  for (std::size_t i = 0; i < cameras.size(); ++i) az[i] = camera_azimuth(cameras[i]);
  result.order = spiral_order(az, az[reference_view]);
  // The reference view is seeded first even if another view shares its azimuth.
  std::erase(result.order, reference_view);
  result.order.insert(result.order.begin(), reference_view);

  {
    ProjectionParams p = settings.params;
    p.beta = settings.reference_beta;
    const ViewRender render = sphere_trace(sdf, ref_cam, settings.trace);
    ProjectionStats st;
    result.color = project_view(result.color, sdf, ref_cam, render, ref_rgb, render.mask, p, &st);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < render.mask.pixel_count(); ++i) hits += render.hit(i);
    result.diagnostics.push_back({reference_view, az[reference_view], hits ? 100.0 : 0.0, st.updated_voxels, false});
    if (hook) hook(WeaveStep{0, reference_view, nullptr, &ref_rgb, &result.color});
  }

  for (std::size_t k = 1; k < result.order.size(); ++k) {
    const std::size_t view = result.order[k];
    const Camera& cam = cameras[view];
    PartialTexture partial = render_partial_texture(result.color, sdf, cam, settings.params, settings.trace);
    ViewDiagnostics diag{view, az[view], 0.0, 0, false};
    diag.mask_coverage = partial.hits ? 100.0 * static_cast<double>(partial.incomplete) / partial.hits : 0.0;
    Image completed = partial.rgb;
    if (partial.incomplete > 0) {
      EnhanceRequest req;
      req.kind = EnhanceKind::TextureInpaint;
      req.normals = partial.render.normal_cam;
      req.partial_rgb = partial.rgb;
      req.mask = partial.mask;
      req.reference = ref_rgb;
      req.prompt = settings.prompt;
      req.seed = settings.seed + view;
      req.timeout = settings.timeout;
      try {
        completed = enhance(req, gateway);
      } catch (const GatewayError&) {
        if (!fallback) throw;
        completed = enhance(req, *fallback);
        diag.fallback = true;
      }
      ProjectionParams p = settings.params;
      p.beta = settings.view_beta;
      ProjectionStats st;
      result.color = project_view(result.color, sdf, cam, partial.render, completed, partial.mask, p, &st);
      diag.projected_voxels = st.updated_voxels;
    }
    if (hook) hook(WeaveStep{k, view, &partial, &completed, &result.color});
    result.diagnostics.push_back(diag);
  }

  result.color = fill_color_gaps(result.color, sdf, settings.fill_band_voxels * sdf.header().voxel_size,
                                 settings.fill_iterations);
  return result;
}

std::string diagnostics_csv(std::span<const ViewDiagnostics> diagnostics) {
  std::ostringstream os;
  os.precision(6);
  os << "step,view,azimuth_deg,mask_coverage_pct,projected_voxels,fallback\n";
  for (std::size_t i = 0; i < diagnostics.size(); ++i) {
    const auto& d = diagnostics[i];
    os << i << ',' << d.view << ',' << d.azimuth << ',' << d.mask_coverage << ',' << d.projected_voxels << ','
       << (d.fallback ? 1 : 0) << '\n';
  }
  return os.str();
}

}  // namespace dw
