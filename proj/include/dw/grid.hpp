#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dw/errors.hpp"

namespace dw {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Aabb {
  Vec3 lo;
  Vec3 hi;
};

// Lattice description shared by every dense grid. Voxel (0,0,0) is centered
// at `origin`; voxel centers are spaced `voxel_size` apart along each axis.
struct GridHeader {
  std::array<int, 3> dims{2, 2, 2};
  Eigen::Vector3f origin = Eigen::Vector3f::Zero();
  float voxel_size = 1.0f;
  int channels = 1;

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }

  // x-fastest linear order.
  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(z));
  }

  std::array<int, 3> coords(std::size_t idx) const {
    const auto nx = static_cast<std::size_t>(dims[0]);
    const auto ny = static_cast<std::size_t>(dims[1]);
    return {static_cast<int>(idx % nx), static_cast<int>((idx / nx) % ny), static_cast<int>(idx / (nx * ny))};
  }

  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] && z < dims[2];
  }

  Vec3 voxel_center(int x, int y, int z) const;

  // Box spanned by the voxel centers.
  Aabb bounds() const;

  // Same dims, origin and spacing (channel count may differ).
  bool same_lattice(const GridHeader& other) const;

  // Throws std::invalid_argument when dims < 2, voxel_size <= 0, channels < 1
  // or any field is non-finite.
  void validate() const;

  friend bool operator==(const GridHeader& a, const GridHeader& b) {
    return a.dims == b.dims && a.origin == b.origin && a.voxel_size == b.voxel_size && a.channels == b.channels;
  }
};

Vec3 world_to_grid(const Vec3& p, const GridHeader& header);
Vec3 grid_to_world(const Vec3& g, const GridHeader& header);

struct ScalarTag {};
struct NormalTag {};
struct ColorTag {};

// Dense voxel grid with `C` interleaved channels per voxel.
template <typename T, int C, typename Tag>
class Grid {
 public:
  using value_type = T;
  static constexpr int kChannels = C;

  Grid() = default;

  explicit Grid(GridHeader header, T fill = T{}) : header_(header) {
    header_.channels = C;
    header_.validate();
    data_.assign(header_.voxel_count() * C, fill);
  }

  const GridHeader& header() const { return header_; }
  std::size_t voxel_count() const { return header_.voxel_count(); }
  bool empty() const { return data_.empty(); }

  T& at(std::size_t voxel, int channel = 0) { return data_[voxel * C + static_cast<std::size_t>(channel)]; }
  T at(std::size_t voxel, int channel = 0) const { return data_[voxel * C + static_cast<std::size_t>(channel)]; }

  T& operator()(int x, int y, int z, int channel = 0) { return at(header_.index(x, y, z), channel); }
  T operator()(int x, int y, int z, int channel = 0) const { return at(header_.index(x, y, z), channel); }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  template <typename U>
  Grid<U, C, Tag> cast() const {
    Grid<U, C, Tag> out(header_);
    auto dst = out.values();
    for (std::size_t i = 0; i < data_.size(); ++i) dst[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  GridHeader header_{};
  std::vector<T> data_;
};

using ScalarGrid3 = Grid<float, 1, ScalarTag>;
// Double-precision working copy used by the optimizer and gradient checks.
using ScalarGrid3d = Grid<double, 1, ScalarTag>;
// Channels: vx, vy, vz, w.
using VectorGrid3 = Grid<float, 4, NormalTag>;
// Channels: r, g, b, confidence.
using ColorGrid3 = Grid<float, 4, ColorTag>;

// The 8 corner voxels and blend weights of a trilinear lookup. Coordinates are
// clamped to [0, dim-1] first.
struct TrilinearStencil {
  std::array<std::size_t, 8> voxel{};
  std::array<double, 8> weight{};
};

TrilinearStencil trilinear_stencil(const GridHeader& header, const Vec3& g);

template <typename G>
double sample_trilinear(const G& grid, const Vec3& g, int channel = 0) {
  const TrilinearStencil s = trilinear_stencil(grid.header(), g);
  double v = 0.0;
  for (int k = 0; k < 8; ++k) v += s.weight[k] * static_cast<double>(grid.at(s.voxel[k], channel));
  return v;
}

// d/d(axis) at a voxel is (value[plus] - value[minus]) * inv_span. Interior
// voxels get central differences; boundary voxels one-sided ones.
struct AxisStencil {
  std::size_t plus;
  std::size_t minus;
  double inv_span;
};

std::array<AxisStencil, 3> gradient_stencil(const GridHeader& header, int x, int y, int z);

template <typename G>
Vec3 gradient_central(const G& grid, int x, int y, int z) {
  const auto st = gradient_stencil(grid.header(), x, y, z);
  Vec3 g;
  for (int a = 0; a < 3; ++a) {
    g[a] = (static_cast<double>(grid.at(st[a].plus)) - static_cast<double>(grid.at(st[a].minus))) * st[a].inv_span;
  }
  return g;
}

// Trilinear blend of the corner voxels' central-difference gradients.
template <typename G>
Vec3 gradient_trilinear(const G& grid, const Vec3& g) {
  const TrilinearStencil s = trilinear_stencil(grid.header(), g);
  Vec3 out = Vec3::Zero();
  for (int k = 0; k < 8; ++k) {
    if (s.weight[k] == 0.0) continue;
    const auto c = grid.header().coords(s.voxel[k]);
    out += s.weight[k] * gradient_central(grid, c[0], c[1], c[2]);
  }
  return out;
}

// Binary "DWGRID01" format, little-endian.
void write_grid_raw(const GridHeader& header, std::span<const float> values, const std::filesystem::path& path);

struct RawGrid {
  GridHeader header;
  std::vector<float> values;
};
RawGrid read_grid_raw(const std::filesystem::path& path);

template <int C, typename Tag>
void write_grid(const Grid<float, C, Tag>& grid, const std::filesystem::path& path) {
  write_grid_raw(grid.header(), grid.values(), path);
}

template <typename G>
G read_grid(const std::filesystem::path& path) {
  RawGrid raw = read_grid_raw(path);
  if (raw.header.channels != G::kChannels) {
    throw FormatError(path.string() + ": expected " + std::to_string(G::kChannels) + " channels, file has " +
                      std::to_string(raw.header.channels));
  }
  G grid(raw.header);
  std::copy(raw.values.begin(), raw.values.end(), grid.values().begin());
  return grid;
}

}  // namespace dw
