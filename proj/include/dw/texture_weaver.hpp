#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dw/enhancer.hpp"
#include "dw/grid.hpp"
#include "dw/image.hpp"
#include "dw/tracer.hpp"

namespace dw {

struct ProjectionParams {
  int radius = 1;                       // tube radius in voxels
  double confidence_threshold = 0.03;  // voxels at or above this are never overwritten
  double beta = 1.0;                    // per-view priority multiplier

  // Throws ConfigError.
  void validate() const;
};

// Greedy farthest-point order over view azimuths (degrees). The first pick is
// the view nearest `reference_deg`; each next pick maximizes the minimum
// circular distance to the picks so far, ties going to the smaller azimuth.
std::vector<std::size_t> spiral_order(std::span<const double> azimuths_deg, double reference_deg = 0.0);

// Tube falloff: (1 - |dd|/(r+1)) * (1 - dr/(r+1)).
double blend_weight(int depth_offset, int radial_offset, int radius);
// |n . v| * beta / (1 + distance to the camera).
double confidence_weight(const Vec3& normal, const Vec3& view_dir, double beta, double distance);

// Camera azimuth in degrees, [0, 360), measured like orbit_camera and
// rounded to 1e-6 degrees.
double camera_azimuth(const Camera& camera);

struct PartialTexture {
  Image rgb;   // 3 channels; incomplete pixels 0.5 gray, background 0
  Image mask;  // 1 channel, 1 = incomplete
  ViewRender render;
  std::size_t incomplete = 0;
  std::size_t hits = 0;
};

// Sphere traces the view and samples the color field at each hit with
// confidence-weighted trilinear interpolation. A hit is incomplete when its
// interpolated confidence is below the threshold. With a silhouette (1
// channel, > 0.5 inside), missed pixels inside it are incomplete as well.
PartialTexture render_partial_texture(const ColorGrid3& color, const ScalarGrid3& sdf, const Camera& camera,
                                      const ProjectionParams& params, const TraceSettings& trace = {},
                                      const Image* silhouette = nullptr);

struct ProjectionStats {
  std::size_t updated_voxels = 0;
  std::size_t protected_voxels = 0;  // touched but at or above the threshold
};

// Projects `rgb` through the camera onto the color field for every hit pixel
// with fill_mask > 0.5, using the trace in `render`. Each pixel deposits into
// a tube of depth offsets -r..r along its ray and radial offsets 0..r along
// four perpendicular directions; a voxel reached by several samples of one
// pixel keeps the largest blend weight. Voxels whose confidence before the
// view is below the threshold take the weighted average of their color and
// all deposits; others are left untouched.
ColorGrid3 project_view(const ColorGrid3& color, const ScalarGrid3& sdf, const Camera& camera,
                        const ViewRender& render, const Image& rgb, const Image& fill_mask,
                        const ProjectionParams& params, ProjectionStats* stats = nullptr);

// Traces the view itself.
ColorGrid3 project_view(const ColorGrid3& color, const ScalarGrid3& sdf, const Camera& camera, const Image& rgb,
                        const Image& fill_mask, const ProjectionParams& params, ProjectionStats* stats = nullptr);

// Jacobi rounds: every voxel with |phi| <= band and zero confidence that has
// colored 6-neighbours takes their confidence-weighted mean color and mean
// confidence. band <= 0 selects 1.5 voxels.
ColorGrid3 fill_color_gaps(const ColorGrid3& color, const ScalarGrid3& sdf, double band = 0.0, int iterations = 5);

struct WeaveSettings {
  ProjectionParams params{};
  double reference_beta = 2.0;
  double view_beta = 1.0;
  int fill_iterations = 5;
  double fill_band_voxels = 1.5;
  std::string prompt;
  std::uint64_t seed = 0;
  std::chrono::milliseconds timeout{60000};
  TraceSettings trace{0.5, 0.25, 512};
  // Start from this field instead of an empty one (same lattice as the SDF).
  const ColorGrid3* initial_color = nullptr;
};

struct ViewDiagnostics {
  std::size_t view = 0;
  double azimuth = 0.0;
  double mask_coverage = 0.0;  // incomplete / hit pixels, percent
  std::size_t projected_voxels = 0;
  bool fallback = false;
};

struct WeaveResult {
  ColorGrid3 color;
  std::vector<std::size_t> order;
  std::vector<ViewDiagnostics> diagnostics;
};

// One projection step of weave_texture. Step 0 is the reference seed, which
// has no partial render; `completed` is then the reference image.
struct WeaveStep {
  std::size_t step = 0;
  std::size_t view = 0;
  const PartialTexture* partial = nullptr;
  const Image* completed = nullptr;
  const ColorGrid3* color = nullptr;  // field after this step
};

using WeaveViewHook = std::function<void(const WeaveStep&)>;

// Seeds the field by projecting `reference_image` through
// cameras[reference_view] with the reference priority, then walks the other
// views in spiral order: render, inpaint through the gateway, project. Ends
// with gap filling. If the gateway throws and `fallback` is set, that view is
// inpainted by the fallback instead.
WeaveResult weave_texture(const ScalarGrid3& sdf, std::span<const Camera> cameras, std::size_t reference_view,
                          const Image& reference_image, EnhancerBackend& gateway, const WeaveSettings& settings = {},
                          EnhancerBackend* fallback = nullptr, const WeaveViewHook& hook = {});

std::string diagnostics_csv(std::span<const ViewDiagnostics> diagnostics);

}  // namespace dw
