#include <unordered_map>

#include "dw/mesh.hpp"
#include "dw/parallel.hpp"
#include "mc_tables.hpp"

namespace dw {

namespace {

// A lattice edge is identified by its lower voxel and its axis.
std::uint64_t edge_key(std::size_t voxel, int axis) { return static_cast<std::uint64_t>(voxel) * 3u + axis; }

}  // namespace

TriMesh marching_cubes(const ScalarGrid3& grid, float iso) {
  const GridHeader& h = grid.header();
  const int nz = h.dims[2] - 1;

  // Per-slab triangle lists of edge keys; merged in slab order below so the
  // vertex numbering is independent of scheduling.
  std::vector<std::vector<std::uint64_t>> slab_tris(static_cast<std::size_t>(nz));
  parallel_for(0, nz, [&](std::int64_t zi) {
    const int z = static_cast<int>(zi);
    auto& out = slab_tris[static_cast<std::size_t>(z)];
    for (int y = 0; y + 1 < h.dims[1]; ++y) {
      for (int x = 0; x + 1 < h.dims[0]; ++x) {
        int cube = 0;
        for (int k = 0; k < 8; ++k) {
          const auto* o = mc::kCornerOffset[k];
          if (grid(x + o[0], y + o[1], z + o[2]) < iso) cube |= 1 << k;
        }
        if (cube == 0 || cube == 255) continue;
        const auto* row = mc::kTriTable[cube];
        for (int t = 0; row[t] >= 0; t += 3) {
          // Table triangles are clockwise seen from outside; emit reversed.
          for (int j : {0, 2, 1}) {
            const int e = row[t + j];
            const auto* a = mc::kCornerOffset[mc::kEdgeCorners[e][0]];
            const auto* b = mc::kCornerOffset[mc::kEdgeCorners[e][1]];
            int axis = 0;
            while (a[axis] == b[axis]) ++axis;
            const int lx = x + std::min(a[0], b[0]);
            const int ly = y + std::min(a[1], b[1]);
            const int lz = z + std::min(a[2], b[2]);
            out.push_back(edge_key(h.index(lx, ly, lz), axis));
          }
        }
      }
    }
  });

  TriMesh mesh;
  std::unordered_map<std::uint64_t, std::uint32_t> ids;
  auto vertex_of = [&](std::uint64_t key) {
    auto [it, fresh] = ids.try_emplace(key, static_cast<std::uint32_t>(mesh.vertices.size()));
    if (fresh) {
      const std::size_t v0 = static_cast<std::size_t>(key / 3);
      const int axis = static_cast<int>(key % 3);
      auto c = h.coords(v0);
      const double f0 = grid.at(v0);
      c[axis] += 1;
      const double f1 = grid(c[0], c[1], c[2]);
      const double t = (static_cast<double>(iso) - f0) / (f1 - f0);
      c[axis] -= 1;
      Vec3 g(c[0], c[1], c[2]);
      g[axis] += t;
      mesh.vertices.push_back(grid_to_world(g, h).cast<float>());
    }
    return it->second;
  };
  for (const auto& slab : slab_tris) {
    for (std::size_t i = 0; i < slab.size(); i += 3) {
      mesh.triangles.push_back({vertex_of(slab[i]), vertex_of(slab[i + 1]), vertex_of(slab[i + 2])});
    }
  }
  return mesh;
}

}  // namespace dw
