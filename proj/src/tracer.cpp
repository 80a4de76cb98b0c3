#include "dw/tracer.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "dw/parallel.hpp"

namespace dw {

Vec3 Camera::ray_direction(int px, int py) const {
  const Vec3 d((px + 0.5 - principal_point.x()) / focal_px, -(py + 0.5 - principal_point.y()) / focal_px, -1.0);
  return to_world(d.normalized());
}

void Camera::validate() const {
  if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6) {
    throw std::invalid_argument("camera rotation is not orthonormal");
  }
  if (!(focal_px > 0.0)) throw std::invalid_argument("camera focal length must be positive");
  if (width < 1 || height < 1) throw std::invalid_argument("camera image size must be positive");
}

Camera orbit_camera(double azimuth_deg, double elevation_deg, double radius, const Vec3& target, int width,
                    int height, double fov_deg) {
  if (!(radius > 0.0)) throw std::invalid_argument("orbit radius must be positive");
  if (!(fov_deg > 0.0 && fov_deg < 180.0)) throw std::invalid_argument("fov must lie in (0, 180) degrees");
  const double az = azimuth_deg * std::numbers::pi / 180.0;
  const double el = elevation_deg * std::numbers::pi / 180.0;
  const Vec3 offset(std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az));

  Camera cam;
  cam.position = target + radius * offset;
  const Vec3 to_target = target - cam.position;
  if (to_target.norm() <= 1e-12 * std::max(1.0, target.norm())) {
    throw std::invalid_argument("camera position coincides with its target");
  }
  const Vec3 forward = to_target.normalized();
  Vec3 up(0.0, 1.0, 0.0);
  if (std::abs(forward.dot(up)) > 1.0 - 1e-9) up = Vec3(0.0, 0.0, forward.y() > 0.0 ? 1.0 : -1.0);
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 true_up = right.cross(forward);
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = true_up.transpose();
  cam.rotation.row(2) = (-forward).transpose();
  cam.width = width;
  cam.height = height;
  cam.focal_px = (0.5 * width) / std::tan(0.5 * fov_deg * std::numbers::pi / 180.0);
  cam.principal_point = Eigen::Vector2d(0.5 * width, 0.5 * height);
  cam.validate();
  return cam;
}

std::optional<std::array<double, 2>> intersect_box(const Vec3& origin, const Vec3& dir, const Aabb& box) {
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (origin[a] < box.lo[a] || origin[a] > box.hi[a]) return std::nullopt;
      continue;
    }
    double ta = (box.lo[a] - origin[a]) / dir[a];
    double tb = (box.hi[a] - origin[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  return std::array<double, 2>{t0, t1};
}

namespace {

// A ray that skims the surface enters the eps_hit shell well before it
// crosses zero. Walks on in small steps to the first sign change and bisects
// it; if there is none within a short window the shell entry is kept.
double refine_hit(const ScalarGrid3& grid, const Vec3& origin, const Vec3& dir, double t, double phi,
                  double step, double t_max) {
  if (phi <= 0.0) return t;
  const GridHeader& h = grid.header();
  const auto eval = [&](double s) { return sample_trilinear(grid, world_to_grid(origin + s * dir, h)); };
  constexpr int kWindowSteps = 64;
  double lo = t;
  for (int i = 0; i < kWindowSteps; ++i) {
    const double hi = std::min(lo + step, t_max);
    if (hi <= lo) break;
    if (eval(hi) <= 0.0) {
      double a = lo, b = hi;
      for (int k = 0; k < 24; ++k) {
        const double m = 0.5 * (a + b);
        (eval(m) > 0.0 ? a : b) = m;
      }
      return 0.5 * (a + b);
    }
    lo = hi;
  }
  return t;
}

}  // namespace

std::optional<RayHit> trace_ray(const ScalarGrid3& grid, const Vec3& origin, const Vec3& dir,
                                const TraceSettings& settings) {
  const GridHeader& h = grid.header();
  const auto span = intersect_box(origin, dir, h.bounds());
  if (!span) return std::nullopt;
  const double eps_hit = settings.hit_epsilon_voxels * h.voxel_size;
  const double min_step = settings.min_step_voxels * h.voxel_size;
  double t = (*span)[0];
  for (int i = 0; i < settings.max_iterations; ++i) {
    const Vec3 p = origin + t * dir;
    const double phi = sample_trilinear(grid, world_to_grid(p, h));
    if (phi < eps_hit) {
      const double th = refine_hit(grid, origin, dir, t, phi, min_step, (*span)[1]);
      return RayHit{th, origin + th * dir};
    }
    t += std::max(phi, min_step);
    if (t > (*span)[1]) break;
  }
  return std::nullopt;
}

ViewRender sphere_trace(const ScalarGrid3& grid, const Camera& camera, const TraceSettings& settings) {
  camera.validate();
  const int w = camera.width;
  const int hgt = camera.height;
  ViewRender r{Image(w, hgt, 3), Image(w, hgt, 1, std::numeric_limits<float>::infinity()), Image(w, hgt, 1),
               Image(w, hgt, 3)};
  parallel_for(0, hgt, [&](std::int64_t row) {
    const int py = static_cast<int>(row);
    for (int px = 0; px < w; ++px) {
      const Vec3 dir = camera.ray_direction(px, py);
      const auto hit = trace_ray(grid, camera.position, dir, settings);
      if (!hit) continue;
      Vec3 n = gradient_trilinear(grid, world_to_grid(hit->point, grid.header()));
      n = n.norm() > 1e-12 ? n.normalized() : Vec3(-dir);
      const Vec3 nc = camera.to_camera(n);
      for (int c = 0; c < 3; ++c) {
        r.normal_cam.at(px, py, c) = static_cast<float>(nc[c]);
        r.hits.at(px, py, c) = static_cast<float>(hit->point[c]);
      }
      r.depth.at(px, py) = static_cast<float>(hit->t);
      r.mask.at(px, py) = 1.0f;
    }
  });
  return r;
}

void march_ray(const ScalarGrid3& grid, const Vec3& origin, const Vec3& dir, int samples, double band,
               std::uint32_t pixel, std::vector<RayEmission>& out) {
  if (samples < 2) throw std::invalid_argument("samples_per_ray must be >= 2");
  const GridHeader& h = grid.header();
  const auto span = intersect_box(origin, dir, h.bounds());
  if (!span) return;
  const double t0 = (*span)[0];
  const double dt = ((*span)[1] - t0) / (samples - 1);
  for (int k = 0; k < samples; ++k) {
    const double t = t0 + k * dt;
    const Vec3 g = world_to_grid(origin + t * dir, h);
    if (std::abs(sample_trilinear(grid, g)) > band) continue;
    std::array<int, 3> v{};
    for (int a = 0; a < 3; ++a) v[a] = std::clamp(static_cast<int>(std::lround(g[a])), 0, h.dims[a] - 1);
    out.push_back({static_cast<std::uint32_t>(h.index(v[0], v[1], v[2])), pixel, static_cast<float>(t)});
  }
}

std::vector<RayEmission> ray_march_accumulate(const ScalarGrid3& grid, const Camera& camera, int samples_per_ray,
                                              double band) {
  camera.validate();
  if (samples_per_ray < 2) throw std::invalid_argument("samples_per_ray must be >= 2");
  if (band <= 0.0) band = 1.5 * grid.header().voxel_size;
  std::vector<std::vector<RayEmission>> rows(static_cast<std::size_t>(camera.height));
  parallel_for(0, camera.height, [&](std::int64_t row) {
    const int py = static_cast<int>(row);
    for (int px = 0; px < camera.width; ++px) {
      const auto pixel = static_cast<std::uint32_t>(py * camera.width + px);
      march_ray(grid, camera.position, camera.ray_direction(px, py), samples_per_ray, band, pixel,
                rows[static_cast<std::size_t>(py)]);
    }
  });
  std::vector<RayEmission> out;
  for (auto& r : rows) out.insert(out.end(), r.begin(), r.end());
  return out;
}

std::vector<RayEmission> visible_emissions(const std::vector<RayEmission>& emissions, const ViewRender& render,
                                           double voxel_size, double window) {
  if (window <= 0.0) window = 3.0 * voxel_size;
  std::vector<RayEmission> out;
  out.reserve(emissions.size());
  for (const auto& e : emissions) {
    if (!render.hit(e.pixel)) continue;
    if (static_cast<double>(e.t) > static_cast<double>(render.depth.pixel(e.pixel, 0)) + window) continue;
    out.push_back(e);
  }
  return out;
}

std::vector<VoxelCount> voxel_counts(const std::vector<RayEmission>& emissions) {
  std::vector<std::uint32_t> voxels;
  voxels.reserve(emissions.size());
  for (const auto& e : emissions) voxels.push_back(e.voxel);
  std::sort(voxels.begin(), voxels.end());
  std::vector<VoxelCount> out;
  for (auto v : voxels) {
    if (!out.empty() && out.back().voxel == v) {
      ++out.back().count;
    } else {
      out.push_back({v, 1});
    }
  }
  return out;
}

}  // namespace dw
