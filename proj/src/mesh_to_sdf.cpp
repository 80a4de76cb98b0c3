#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dw/mesh.hpp"
#include "dw/parallel.hpp"

namespace dw {

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Voronoi-region walk (Ericson, Real-Time Collision Detection 5.1.5).
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  }
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

namespace {

struct Tri {
  Vec3 a, b, c;
};

double box_dist2(const Vec3& p, const Aabb& box) {
  const Vec3 d = (box.lo - p).cwiseMax(p - box.hi).cwiseMax(0.0);
  return d.squaredNorm();
}

// Binary BVH over triangles, median split on the longest centroid axis.
class TriangleBvh {
 public:
  explicit TriangleBvh(std::vector<Tri> tris) : tris_(std::move(tris)) {
    order_.resize(tris_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    nodes_.reserve(2 * tris_.size() / kLeafSize + 2);
    build(0, static_cast<std::uint32_t>(order_.size()));
  }

  // Squared distance from p to the nearest triangle, searching only below
  // `bound2` (returns bound2 if nothing closer exists).
  double nearest2(const Vec3& p, double bound2) const {
    double best = bound2;
    std::uint32_t stack[64];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& n = nodes_[stack[--top]];
      if (box_dist2(p, n.box) >= best) continue;
      if (n.count > 0) {
        for (std::uint32_t i = n.first; i < n.first + n.count; ++i) {
          const Tri& t = tris_[order_[i]];
          const double d2 = (closest_point_on_triangle(p, t.a, t.b, t.c) - p).squaredNorm();
          best = std::min(best, d2);
        }
        continue;
      }
      const double dl = box_dist2(p, nodes_[n.left].box);
      const double dr = box_dist2(p, nodes_[n.right].box);
      // Push the farther child first so the nearer one is visited first.
      if (dl < dr) {
        if (dr < best) stack[top++] = n.right;
        if (dl < best) stack[top++] = n.left;
      } else {
        if (dl < best) stack[top++] = n.left;
        if (dr < best) stack[top++] = n.right;
      }
    }
    return best;
  }

 private:
  static constexpr std::uint32_t kLeafSize = 4;

  struct Node {
    Aabb box;
    std::uint32_t left = 0, right = 0;
    std::uint32_t first = 0, count = 0;
  };

  std::uint32_t build(std::uint32_t first, std::uint32_t last) {
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.emplace_back();
    Aabb box{Vec3::Constant(std::numeric_limits<double>::infinity()),
             Vec3::Constant(-std::numeric_limits<double>::infinity())};
    Aabb cbox = box;
    for (std::uint32_t i = first; i < last; ++i) {
      const Tri& t = tris_[order_[i]];
      box.lo = box.lo.cwiseMin(t.a).cwiseMin(t.b).cwiseMin(t.c);
      box.hi = box.hi.cwiseMax(t.a).cwiseMax(t.b).cwiseMax(t.c);
      const Vec3 ctr = (t.a + t.b + t.c) / 3.0;
      cbox.lo = cbox.lo.cwiseMin(ctr);
      cbox.hi = cbox.hi.cwiseMax(ctr);
    }
    nodes_[id].box = box;
    if (last - first <= kLeafSize) {
      nodes_[id].first = first;
      nodes_[id].count = last - first;
      return id;
    }
    int axis = 0;
    (cbox.hi - cbox.lo).maxCoeff(&axis);
    const std::uint32_t mid = first + (last - first) / 2;
    std::nth_element(order_.begin() + first, order_.begin() + mid, order_.begin() + last,
                     [&](std::uint32_t l, std::uint32_t r) {
                       const Tri& tl = tris_[l];
                       const Tri& tr = tris_[r];
                       const double cl = tl.a[axis] + tl.b[axis] + tl.c[axis];
                       const double cr = tr.a[axis] + tr.b[axis] + tr.c[axis];
                       return cl < cr || (cl == cr && l < r);
                     });
    const std::uint32_t left = build(first, mid);
    const std::uint32_t right = build(mid, last);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  std::vector<Tri> tris_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

// For each lattice line parallel to `axis`, the sorted grid coordinates
// (along `axis`) where the line crosses the mesh. Edge and vertex hits use
// a half-open rule so a ray through a shared edge of two front-facing
// triangles counts once.
std::vector<std::vector<double>> axis_crossings(const std::vector<Tri>& tris, const GridHeader& h, int axis) {
  const int b = (axis + 1) % 3;
  const int c = (axis + 2) % 3;
  const int nb = h.dims[b];
  const int nc = h.dims[c];
  std::vector<std::vector<double>> lines(static_cast<std::size_t>(nb) * static_cast<std::size_t>(nc));

  auto owns_edge = [](double ex, double ey) {
    // Top-left style tie rule for a zero edge function.
    return ey > 0.0 || (ey == 0.0 && ex < 0.0);
  };

  for (const Tri& t : tris) {
    Vec3 g[3] = {world_to_grid(t.a, h), world_to_grid(t.b, h), world_to_grid(t.c, h)};
    double area = (g[1][b] - g[0][b]) * (g[2][c] - g[0][c]) - (g[1][c] - g[0][c]) * (g[2][b] - g[0][b]);
    if (area == 0.0) continue;
    if (area < 0.0) {
      std::swap(g[1], g[2]);
      area = -area;
    }
    const double lo_b = std::min({g[0][b], g[1][b], g[2][b]});
    const double hi_b = std::max({g[0][b], g[1][b], g[2][b]});
    const double lo_c = std::min({g[0][c], g[1][c], g[2][c]});
    const double hi_c = std::max({g[0][c], g[1][c], g[2][c]});
    const int jb0 = std::max(0, static_cast<int>(std::ceil(lo_b)));
    const int jb1 = std::min(nb - 1, static_cast<int>(std::floor(hi_b)));
    const int jc0 = std::max(0, static_cast<int>(std::ceil(lo_c)));
    const int jc1 = std::min(nc - 1, static_cast<int>(std::floor(hi_c)));
    for (int jc = jc0; jc <= jc1; ++jc) {
      for (int jb = jb0; jb <= jb1; ++jb) {
        double w[3];
        bool inside = true;
        for (int e = 0; e < 3 && inside; ++e) {
          const Vec3& p0 = g[(e + 1) % 3];
          const Vec3& p1 = g[(e + 2) % 3];
          const double ex = p1[b] - p0[b];
          const double ey = p1[c] - p0[c];
          w[e] = ex * (jc - p0[c]) - ey * (jb - p0[b]);
          if (w[e] < 0.0 || (w[e] == 0.0 && !owns_edge(ex, ey))) inside = false;
        }
        if (!inside) continue;
        const double s = w[0] + w[1] + w[2];
        const double at = (w[0] * g[0][axis] + w[1] * g[1][axis] + w[2] * g[2][axis]) / s;
        lines[static_cast<std::size_t>(jb) + static_cast<std::size_t>(nb) * static_cast<std::size_t>(jc)].push_back(at);
      }
    }
  }
  for (auto& l : lines) std::sort(l.begin(), l.end());
  return lines;
}

}  // namespace

ScalarGrid3 mesh_to_sdf(const TriMesh& mesh, const MeshToSdfOptions& options) {
  if (mesh.empty()) throw Error("mesh_to_sdf: mesh has no triangles");
  if (options.resolution < 16) throw Error("mesh_to_sdf: resolution must be >= 16");
  if (!(options.padding_fraction >= 0.0)) throw Error("mesh_to_sdf: padding_fraction must be >= 0");
  const Aabb box = mesh.bounds();
  const double extent = (box.hi - box.lo).maxCoeff();
  if (!(extent > 0.0) || !std::isfinite(extent)) throw Error("mesh_to_sdf: degenerate mesh bounding box");

  const double side = extent * (1.0 + 2.0 * options.padding_fraction);
  const Vec3 center = 0.5 * (box.lo + box.hi);
  GridHeader h;
  h.dims = {options.resolution, options.resolution, options.resolution};
  h.voxel_size = static_cast<float>(side / (options.resolution - 1));
  h.origin = (center - Vec3::Constant(0.5 * side)).cast<float>();
  return mesh_to_sdf(mesh, h);
}

ScalarGrid3 mesh_to_sdf(const TriMesh& mesh, const GridHeader& lattice) {
  if (mesh.empty()) throw Error("mesh_to_sdf: mesh has no triangles");
  mesh.validate();
  ScalarGrid3 grid(lattice);
  const GridHeader& h = grid.header();

  std::vector<Tri> tris;
  tris.reserve(mesh.triangles.size());
  for (const auto& t : mesh.triangles) {
    tris.push_back({mesh.vertices[t[0]].cast<double>(), mesh.vertices[t[1]].cast<double>(),
                    mesh.vertices[t[2]].cast<double>()});
  }
  const TriangleBvh bvh(tris);
  const Aabb mbox = mesh.bounds();

  std::array<std::vector<std::vector<double>>, 3> crossings;
  for (int a = 0; a < 3; ++a) crossings[a] = axis_crossings(tris, h, a);

  auto inside_along = [&](int axis, const std::array<int, 3>& v) {
    const int b = (axis + 1) % 3;
    const int c = (axis + 2) % 3;
    const auto& line = crossings[axis][static_cast<std::size_t>(v[b]) +
                                       static_cast<std::size_t>(h.dims[b]) * static_cast<std::size_t>(v[c])];
    const auto above = line.end() - std::upper_bound(line.begin(), line.end(), static_cast<double>(v[axis]));
    return (above % 2) == 1;
  };

  const double step = h.voxel_size;
  parallel_for(0, static_cast<std::int64_t>(h.dims[2]) * h.dims[1], [&](std::int64_t row) {
    const int y = static_cast<int>(row % h.dims[1]);
    const int z = static_cast<int>(row / h.dims[1]);
    double prev = -1.0;
    for (int x = 0; x < h.dims[0]; ++x) {
      const Vec3 p = h.voxel_center(x, y, z);
      // The previous voxel's distance plus one step bounds this one.
      const double bound = prev >= 0.0 ? (prev + step) * (prev + step) * (1.0 + 1e-9) + 1e-30
                                       : std::numeric_limits<double>::infinity();
      const double d = std::sqrt(bvh.nearest2(p, bound));
      prev = d;
      bool inside = false;
      const bool in_box = (p.array() >= mbox.lo.array()).all() && (p.array() <= mbox.hi.array()).all();
      if (in_box) {
        const std::array<int, 3> v{x, y, z};
        const int votes = int(inside_along(0, v)) + int(inside_along(1, v)) + int(inside_along(2, v));
        inside = votes >= 2;
      }
      grid(x, y, z) = static_cast<float>(inside ? -d : d);
    }
  });
  return grid;
}

}  // namespace dw
