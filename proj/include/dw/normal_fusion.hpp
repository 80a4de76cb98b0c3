#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <map>
#include <vector>

#include "dw/grid.hpp"
#include "dw/tracer.hpp"

namespace dw {

// Running sum of ray-weighted world normals per voxel.
//
// Sums are kept in 64-bit fixed point so that adding views is exactly
// commutative: any permutation of the same views yields a bitwise-equal
// field.
class NormalAccumulator {
 public:
  explicit NormalAccumulator(const GridHeader& lattice);

  // For every emission (voxel, pixel) of a hit pixel, adds
  // multiplier * R^T * normal_cam(pixel) to the voxel's vector sum and
  // `multiplier` to its weight. Emissions of missed pixels are skipped.
  // Throws DimensionError if the render does not match the camera.
  void add_view(const ViewRender& render, const Camera& camera, const std::vector<RayEmission>& emissions,
                double multiplier = 1.0);

  // Unnormalized sums: channels (sum w*n, sum w).
  VectorGrid3 field() const;

  std::size_t touched_voxels() const { return sums_.size(); }

 private:
  GridHeader lattice_;
  std::map<std::uint32_t, std::array<std::int64_t, 4>> sums_;
};

struct FusionResult {
  VectorGrid3 field;
  // Voxels whose summed normal canceled out and were demoted to w = 0.
  std::size_t degenerate = 0;
};

// Normalizes every voxel with w > 0. Sums with norm <= degenerate_eps are
// zeroed (vector and weight).
FusionResult finalize_fusion(const VectorGrid3& accumulated, double degenerate_eps = 1e-6);

// Jacobi rounds of 6-neighbour averaging over near-surface holes: every voxel
// with |phi| <= band and w = 0 that has a covered neighbour takes the
// normalized mean of the covered neighbours' normals and their mean weight.
// band <= 0 selects 1.5 voxels.
VectorGrid3 fill_normal_holes(const VectorGrid3& field, const ScalarGrid3& sdf, double band = 0.0,
                              int iterations = 5);

struct FusionSettings {
  int samples_per_ray = 256;
  double band_voxels = 1.5;
  int fill_iterations = 5;
  TraceSettings trace{};
};

// Optional per-view rewrite of the camera-space normal map (e.g. an
// enhancement service). Must preserve the image size.
using NormalMapHook = std::function<Image(const Image& normal_cam, std::size_t view)>;

struct FusedNormals {
  VectorGrid3 field;
  std::size_t degenerate = 0;
  std::vector<ViewRender> renders;
};

// Render, (optionally) rewrite, march, accumulate, finalize and hole-fill
// over all cameras.
FusedNormals fuse_normal_views(const ScalarGrid3& sdf, std::span<const Camera> cameras,
                               const FusionSettings& settings = {}, const NormalMapHook& hook = {});

}  // namespace dw
