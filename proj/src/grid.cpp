#include "dw/grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace dw {

namespace {

constexpr char kMagic[8] = {'D', 'W', 'G', 'R', 'I', 'D', '0', '1'};
constexpr std::size_t kHeaderBytes = 8 + 4 * 4 + 4 * 4;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::vector<unsigned char>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

}  // namespace

Vec3 GridHeader::voxel_center(int x, int y, int z) const {
  return grid_to_world(Vec3(x, y, z), *this);
}

Aabb GridHeader::bounds() const {
  const Vec3 lo = origin.cast<double>();
  const double h = voxel_size;
  return {lo, lo + Vec3((dims[0] - 1) * h, (dims[1] - 1) * h, (dims[2] - 1) * h)};
}

bool GridHeader::same_lattice(const GridHeader& other) const {
  return dims == other.dims && origin == other.origin && voxel_size == other.voxel_size;
}

void GridHeader::validate() const {
  for (int d : dims) {
    if (d < 2) throw std::invalid_argument("grid dims must be >= 2 on every axis");
  }
  if (!std::isfinite(voxel_size) || voxel_size <= 0.0f) throw std::invalid_argument("voxel_size must be positive");
  if (!origin.allFinite()) throw std::invalid_argument("grid origin must be finite");
  if (channels < 1) throw std::invalid_argument("channels must be >= 1");
}

Vec3 world_to_grid(const Vec3& p, const GridHeader& header) {
  return (p - header.origin.cast<double>()) / static_cast<double>(header.voxel_size);
}

Vec3 grid_to_world(const Vec3& g, const GridHeader& header) {
  return header.origin.cast<double>() + g * static_cast<double>(header.voxel_size);
}

TrilinearStencil trilinear_stencil(const GridHeader& header, const Vec3& g) {
  TrilinearStencil s;
  std::array<int, 3> i0{};
  std::array<double, 3> t{};
  for (int a = 0; a < 3; ++a) {
    const double hi = header.dims[a] - 1;
    const double c = std::clamp(std::isnan(g[a]) ? 0.0 : g[a], 0.0, hi);
    int base = static_cast<int>(c);  // c >= 0
    base = std::min(base, header.dims[a] - 2);
    i0[a] = base;
    t[a] = c - base;
  }
  int k = 0;
  for (int dz = 0; dz < 2; ++dz) {
    const double wz = dz ? t[2] : 1.0 - t[2];
    for (int dy = 0; dy < 2; ++dy) {
      const double wy = dy ? t[1] : 1.0 - t[1];
      for (int dx = 0; dx < 2; ++dx) {
        const double wx = dx ? t[0] : 1.0 - t[0];
        s.voxel[k] = header.index(i0[0] + dx, i0[1] + dy, i0[2] + dz);
        s.weight[k] = wx * wy * wz;
        ++k;
      }
    }
  }
  return s;
}

std::array<AxisStencil, 3> gradient_stencil(const GridHeader& header, int x, int y, int z) {
  std::array<AxisStencil, 3> st{};
  const std::array<int, 3> p{x, y, z};
  const double h = header.voxel_size;
  for (int a = 0; a < 3; ++a) {
    std::array<int, 3> lo = p;
    std::array<int, 3> hi = p;
    double span = 2.0 * h;
    if (p[a] == 0) {
      hi[a] = 1;
      span = h;
    } else if (p[a] == header.dims[a] - 1) {
      lo[a] = p[a] - 1;
      span = h;
    } else {
      lo[a] = p[a] - 1;
      hi[a] = p[a] + 1;
    }
    st[a] = {header.index(hi[0], hi[1], hi[2]), header.index(lo[0], lo[1], lo[2]), 1.0 / span};
  }
  return st;
}

void write_grid_raw(const GridHeader& header, std::span<const float> values, const std::filesystem::path& path) {
  header.validate();
  if (values.size() != header.voxel_count() * static_cast<std::size_t>(header.channels)) {
    throw DimensionError("grid payload size does not match header");
  }
  std::vector<unsigned char> bytes;
  bytes.reserve(kHeaderBytes + values.size() * 4);
  bytes.insert(bytes.end(), std::begin(kMagic), std::end(kMagic));
  for (int d : header.dims) put_u32(bytes, static_cast<std::uint32_t>(d));
  put_u32(bytes, static_cast<std::uint32_t>(header.channels));
  for (int a = 0; a < 3; ++a) put_f32(bytes, header.origin[a]);
  put_f32(bytes, header.voxel_size);
  for (float v : values) put_f32(bytes, v);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

RawGrid read_grid_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  if (bytes.size() < kHeaderBytes) throw FormatError(where + "truncated header");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw FormatError(where + "bad magic, expected DWGRID01");

  RawGrid raw;
  const unsigned char* p = bytes.data() + 8;
  std::uint64_t count = 1;
  for (int a = 0; a < 3; ++a) {
    const std::uint32_t d = get_u32(p + 4 * a);
    if (d < 2 || d > (1u << 16)) throw FormatError(where + "invalid dimension " + std::to_string(d));
    raw.header.dims[a] = static_cast<int>(d);
    count *= d;
  }
  const std::uint32_t channels = get_u32(p + 12);
  if (channels < 1 || channels > 64) throw FormatError(where + "invalid channel count " + std::to_string(channels));
  raw.header.channels = static_cast<int>(channels);
  for (int a = 0; a < 3; ++a) raw.header.origin[a] = get_f32(p + 16 + 4 * a);
  raw.header.voxel_size = get_f32(p + 28);
  if (!raw.header.origin.allFinite() || !std::isfinite(raw.header.voxel_size)) {
    throw FormatError(where + "non-finite header field");
  }
  if (raw.header.voxel_size <= 0.0f) throw FormatError(where + "voxel_size must be positive");

  const std::uint64_t expected = kHeaderBytes + count * channels * 4;
  if (bytes.size() < expected) throw FormatError(where + "truncated payload");
  if (bytes.size() > expected) throw FormatError(where + "trailing bytes after payload");

  raw.values.resize(static_cast<std::size_t>(count * channels));
  const unsigned char* v = bytes.data() + kHeaderBytes;
  for (std::size_t i = 0; i < raw.values.size(); ++i) raw.values[i] = get_f32(v + 4 * i);
  return raw;
}

}  // namespace dw
