#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "dw/config.hpp"
#include "dw/enhancer.hpp"
#include "dw/grid.hpp"
#include "dw/image.hpp"
#include "dw/mesh.hpp"
#include "dw/tracer.hpp"

namespace dw {

// Cameras on a horizontal ring around the grid center at
// azimuths start + k*step. The radius is `distance` times the half extent of
// the grid box. width/height <= 0 take `config.image_size`.
std::vector<Camera> ring_cameras(const GridHeader& lattice, int views, double step_deg, double elevation_deg,
                                 double distance, double fov_deg, int width, int height, double start_deg = 0.0);

// The fuse/render ring described by a config.
std::vector<Camera> config_cameras(const GridHeader& lattice, const RunConfig& config);

// Subdivided icosahedron projected onto a sphere (outward winding).
TriMesh make_icosphere(double radius, int subdivisions, const Vec3& center = Vec3::Zero());

// Exact sphere distance sampled on the lattice.
ScalarGrid3 analytic_sphere_sdf(const GridHeader& lattice, const Vec3& center, double radius);

// Cubic lattice with `res` voxels per side spanning [lo, hi]^3.
GridHeader cube_lattice(int res, double lo, double hi);

// Confidence-weighted color at a world point; gray where nothing is colored.
Vec3 sample_color(const ColorGrid3& color, const Vec3& world);

// Sets per-vertex colors from the color field.
void color_mesh_vertices(TriMesh& mesh, const ColorGrid3& color);

// Diffuse-shaded render of the colored surface, white background.
Image render_colored(const ScalarGrid3& sdf, const ColorGrid3& color, const Camera& camera);

// Backends built from the gateway section.
std::unique_ptr<EnhancerBackend> config_backend(const RunConfig& config);
std::unique_ptr<EnhancerBackend> config_fallback(const RunConfig& config);

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct PipelineRun {
  std::filesystem::path mesh;
  std::filesystem::path reference;
  std::filesystem::path out_dir;
  RunConfig config;
  // Name of the stage being executed; left at the failing stage on error.
  std::string current_stage;
  std::vector<StageTiming> timings;
  std::vector<std::string> artifacts;  // relative to out_dir
};

// Runs mesh2sdf, fuse, optimize, texture, extract and turntable renders,
// writing every artifact into run.out_dir and finally manifest.json.
void run_pipeline(PipelineRun& run);

std::string manifest_json(const PipelineRun& run);

// Inputs and config recorded in a manifest.
PipelineRun read_manifest(const std::filesystem::path& path);

// The synthetic sphere fixture: sphere.obj and reference.png.
void write_sphere_fixture(const std::filesystem::path& dir);

}  // namespace dw
