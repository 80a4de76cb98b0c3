#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "dw/grid.hpp"
#include "dw/image.hpp"

namespace dw {

// Pinhole camera. Right-handed world; in camera space the camera looks down
// -z with +y up, while image rows grow downwards.
struct Camera {
  Mat3 rotation = Mat3::Identity();  // world -> camera directions
  Vec3 position = Vec3::Zero();
  double focal_px = 1.0;
  Eigen::Vector2d principal_point = Eigen::Vector2d::Zero();
  int width = 1;
  int height = 1;

  // Unit world-space direction through the center of pixel (px, py).
  Vec3 ray_direction(int px, int py) const;
  Vec3 forward() const { return -rotation.row(2).transpose(); }
  Vec3 to_camera(const Vec3& world_dir) const { return rotation * world_dir; }
  Vec3 to_world(const Vec3& camera_dir) const { return rotation.transpose() * camera_dir; }

  // Throws std::invalid_argument on a non-orthonormal rotation, focal <= 0 or
  // empty image.
  void validate() const;
};

// Camera on a sphere around `target`, looking at it with world +y up.
// Azimuth 0 / elevation 0 puts the camera on +z; azimuth rotates towards +x.
Camera orbit_camera(double azimuth_deg, double elevation_deg, double radius, const Vec3& target, int width,
                    int height, double fov_deg = 40.0);

// Ray parameter interval [t0, t1] inside the box, if any, with t0 >= 0.
std::optional<std::array<double, 2>> intersect_box(const Vec3& origin, const Vec3& dir, const Aabb& box);

struct TraceSettings {
  double hit_epsilon_voxels = 0.5;
  double min_step_voxels = 0.25;
  int max_iterations = 256;
};

struct ViewRender {
  Image normal_cam;  // 3 channels, zero on misses
  Image depth;       // 1 channel, +inf on misses
  Image mask;        // 1 channel, 1 on hits
  Image hits;        // 3 channels, world-space hit points (zero on misses)

  bool hit(std::size_t pixel) const { return mask.pixel(pixel, 0) > 0.5f; }
};

// Sphere traces every pixel against the grid's trilinear field, starting at
// the grid box entry point. A pixel hits once phi < eps_hit; its depth is then
// refined to the zero crossing when one follows within 16 voxels.
ViewRender sphere_trace(const ScalarGrid3& grid, const Camera& camera, const TraceSettings& settings = {});

struct RayHit {
  double t = 0.0;
  Vec3 point = Vec3::Zero();
};
std::optional<RayHit> trace_ray(const ScalarGrid3& grid, const Vec3& origin, const Vec3& dir,
                                const TraceSettings& settings = {});

// One near-surface sample of a marched ray.
struct RayEmission {
  std::uint32_t voxel;
  std::uint32_t pixel;
  float t;
};

// Marches `samples` equidistant points over the ray's span inside the grid
// box and emits the nearest voxel of every sample with |phi| <= band.
void march_ray(const ScalarGrid3& grid, const Vec3& origin, const Vec3& dir, int samples, double band,
               std::uint32_t pixel, std::vector<RayEmission>& out);

// All pixel rays of a camera, emissions ordered by pixel then sample.
// band <= 0 selects 1.5 voxels.
std::vector<RayEmission> ray_march_accumulate(const ScalarGrid3& grid, const Camera& camera, int samples_per_ray = 256,
                                              double band = 0.0);

// Keeps only emissions of hit pixels whose sample lies no further than
// `window` behind the pixel's traced depth: the first surface the pixel
// actually sees. window <= 0 selects twice the default band.
std::vector<RayEmission> visible_emissions(const std::vector<RayEmission>& emissions, const ViewRender& render,
                                           double voxel_size, double window = 0.0);

struct VoxelCount {
  std::uint32_t voxel;
  std::uint32_t count;
};
// Per-voxel ray counts, sorted by voxel.
std::vector<VoxelCount> voxel_counts(const std::vector<RayEmission>& emissions);

}  // namespace dw
