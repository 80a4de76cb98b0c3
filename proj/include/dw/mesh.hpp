#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "dw/grid.hpp"

namespace dw {

struct TriMesh {
  std::vector<Eigen::Vector3f> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
  // Optional per-vertex rgb in [0,1]; empty or one entry per vertex.
  std::vector<Eigen::Vector3f> colors;

  bool empty() const { return triangles.empty(); }
  Aabb bounds() const;
  // Throws ParseError if any index is out of range.
  void validate() const;
};

enum class PlyEncoding { Ascii, BinaryLittleEndian };

// Format is chosen by extension: .obj or .ply. OBJ polygons are
// fan-triangulated; normals and texture coordinates are ignored. Triangles
// with repeated indices or area <= 1e-12 are dropped after loading.
TriMesh load_mesh(const std::filesystem::path& path);
void save_mesh(const TriMesh& mesh, const std::filesystem::path& path,
               PlyEncoding ply_encoding = PlyEncoding::BinaryLittleEndian);

TriMesh parse_obj(std::istream& in);
void write_obj(const TriMesh& mesh, std::ostream& out);
TriMesh parse_ply(std::istream& in);
void write_ply(const TriMesh& mesh, std::ostream& out, PlyEncoding encoding);

// Returns the number of triangles removed.
std::size_t remove_degenerate_triangles(TriMesh& mesh, double area_tolerance = 1e-12);

// Exact closest point on triangle abc to p.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

struct MeshToSdfOptions {
  int resolution = 256;
  double padding_fraction = 0.15;
};

// Samples the signed distance to `mesh` on a cubic resolution^3 lattice
// covering the mesh bounding box, centered on it and grown by
// padding_fraction of the longest extent on every side. Magnitudes are exact
// point-to-triangle distances; the sign (negative inside) is the majority
// vote of ray parity along +x, +y and +z.
ScalarGrid3 mesh_to_sdf(const TriMesh& mesh, const MeshToSdfOptions& options = {});

// Same, on a caller-supplied lattice.
ScalarGrid3 mesh_to_sdf(const TriMesh& mesh, const GridHeader& lattice);

// Marching cubes on the iso level. Corners with value < iso are inside.
// Vertices are shared between neighbouring cells; triangles wind
// counter-clockwise seen from outside. Ambiguous saddle configurations use
// the plain lookup table, so the output can be non-manifold there.
TriMesh marching_cubes(const ScalarGrid3& grid, float iso = 0.0f);

}  // namespace dw
