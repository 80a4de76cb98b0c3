#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>

#include "dw/mesh.hpp"

namespace dw {

Aabb TriMesh::bounds() const {
  Aabb box{Vec3::Constant(std::numeric_limits<double>::infinity()),
           Vec3::Constant(-std::numeric_limits<double>::infinity())};
  for (const auto& v : vertices) {
    box.lo = box.lo.cwiseMin(v.cast<double>());
    box.hi = box.hi.cwiseMax(v.cast<double>());
  }
  return box;
}

void TriMesh::validate() const {
  for (std::size_t t = 0; t < triangles.size(); ++t) {
    for (auto i : triangles[t]) {
      if (i >= vertices.size()) {
        throw ParseError("triangle " + std::to_string(t) + " references vertex " + std::to_string(i) + " of " +
                         std::to_string(vertices.size()));
      }
    }
  }
  if (!colors.empty() && colors.size() != vertices.size()) throw ParseError("vertex color count mismatch");
}

std::size_t remove_degenerate_triangles(TriMesh& mesh, double area_tolerance) {
  const auto before = mesh.triangles.size();
  std::erase_if(mesh.triangles, [&](const std::array<std::uint32_t, 3>& t) {
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) return true;
    const Vec3 a = mesh.vertices[t[0]].cast<double>();
    const Vec3 b = mesh.vertices[t[1]].cast<double>();
    const Vec3 c = mesh.vertices[t[2]].cast<double>();
    return 0.5 * (b - a).cross(c - a).norm() <= area_tolerance;
  });
  return before - mesh.triangles.size();
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t j = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > j) out.push_back(s.substr(j, i - j));
  }
  return out;
}

float parse_float(std::string_view tok, const std::string& where) {
  // std::from_chars for floating point is not available in libstdc++ 11.
  std::string buf(tok);
  char* end = nullptr;
  const float v = std::strtof(buf.c_str(), &end);
  if (end != buf.c_str() + buf.size() || !std::isfinite(v)) throw ParseError(where + ": bad number '" + buf + "'");
  return v;
}

long long parse_int(std::string_view tok, const std::string& where) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError(where + ": bad integer '" + std::string(tok) + "'");
  }
  return v;
}

bool has_extension(const std::filesystem::path& path, const char* ext) {
  std::string e = path.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e == ext;
}

}  // namespace

TriMesh parse_obj(std::istream& in) {
  TriMesh mesh;
  // Faces are resolved after all vertices are known so that forward
  // references work; we remember the source line for error messages.
  struct PendingFace {
    std::vector<long long> idx;
    std::size_t line;
  };
  std::vector<PendingFace> faces;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = "line " + std::to_string(lineno);
    std::string_view s = trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto tok = split_ws(s);
    if (tok[0] == "v") {
      if (tok.size() < 4) throw ParseError(where + ": vertex needs 3 coordinates");
      mesh.vertices.emplace_back(parse_float(tok[1], where), parse_float(tok[2], where), parse_float(tok[3], where));
    } else if (tok[0] == "f") {
      if (tok.size() < 4) throw ParseError(where + ": face needs at least 3 vertices");
      PendingFace f{{}, lineno};
      for (std::size_t i = 1; i < tok.size(); ++i) {
        const auto slash = tok[i].find('/');
        f.idx.push_back(parse_int(tok[i].substr(0, slash), where));
      }
      // Negative indices are relative to the vertices read so far.
      for (auto& v : f.idx) {
        if (v < 0) v = static_cast<long long>(mesh.vertices.size()) + v + 1;
      }
      faces.push_back(std::move(f));
    }
  }
  for (const auto& f : faces) {
    for (long long v : f.idx) {
      if (v < 1 || v > static_cast<long long>(mesh.vertices.size())) {
        throw ParseError("line " + std::to_string(f.line) + ": face references vertex " + std::to_string(v) + " of " +
                         std::to_string(mesh.vertices.size()));
      }
    }
    for (std::size_t i = 1; i + 1 < f.idx.size(); ++i) {
      mesh.triangles.push_back({static_cast<std::uint32_t>(f.idx[0] - 1), static_cast<std::uint32_t>(f.idx[i] - 1),
                                static_cast<std::uint32_t>(f.idx[i + 1] - 1)});
    }
  }
  return mesh;
}

void write_obj(const TriMesh& mesh, std::ostream& out) {
  out << std::setprecision(std::numeric_limits<float>::max_digits10);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

namespace {

enum class PlyType { I8, U8, I16, U16, I32, U32, F32, F64 };

PlyType ply_type(std::string_view name, const std::string& where) {
  if (name == "char" || name == "int8") return PlyType::I8;
  if (name == "uchar" || name == "uint8") return PlyType::U8;
  if (name == "short" || name == "int16") return PlyType::I16;
  if (name == "ushort" || name == "uint16") return PlyType::U16;
  if (name == "int" || name == "int32") return PlyType::I32;
  if (name == "uint" || name == "uint32") return PlyType::U32;
  if (name == "float" || name == "float32") return PlyType::F32;
  if (name == "double" || name == "float64") return PlyType::F64;
  throw ParseError(where + ": unknown PLY type '" + std::string(name) + "'");
}

std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::I8:
    case PlyType::U8:
      return 1;
    case PlyType::I16:
    case PlyType::U16:
      return 2;
    case PlyType::I32:
    case PlyType::U32:
    case PlyType::F32:
      return 4;
    case PlyType::F64:
      return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::F32;
  bool is_list = false;
  PlyType count_type = PlyType::U8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

// Reads one binary little-endian scalar from the stream as double.
double read_binary(std::istream& in, PlyType t, std::size_t& offset) {
  unsigned char b[8] = {};
  const std::size_t n = ply_size(t);
  in.read(reinterpret_cast<char*>(b), static_cast<std::streamsize>(n));
  if (!in) throw ParseError("byte " + std::to_string(offset) + ": unexpected end of binary PLY payload");
  offset += n;
  std::uint64_t u = 0;
  for (std::size_t i = 0; i < n; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  switch (t) {
    case PlyType::I8:
      return static_cast<std::int8_t>(u);
    case PlyType::U8:
      return static_cast<std::uint8_t>(u);
    case PlyType::I16:
      return static_cast<std::int16_t>(u);
    case PlyType::U16:
      return static_cast<std::uint16_t>(u);
    case PlyType::I32:
      return static_cast<std::int32_t>(u);
    case PlyType::U32:
      return static_cast<std::uint32_t>(u);
    case PlyType::F32:
      return std::bit_cast<float>(static_cast<std::uint32_t>(u));
    case PlyType::F64:
      return std::bit_cast<double>(u);
  }
  return 0.0;
}

}  // namespace

TriMesh parse_ply(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  std::size_t offset = 0;
  auto next_line = [&]() -> std::string_view {
    if (!std::getline(in, line)) throw ParseError("line " + std::to_string(lineno + 1) + ": unexpected end of PLY header");
    ++lineno;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return trim(line);
  };

  if (next_line() != "ply") throw ParseError("line 1: missing 'ply' magic");
  bool binary = false;
  std::vector<PlyElement> elements;
  for (;;) {
    const std::string where = "line " + std::to_string(lineno + 1);
    const auto tok = split_ws(next_line());
    if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "format") {
      if (tok.size() < 2) throw ParseError(where + ": bad format line");
      if (tok[1] == "ascii") {
        binary = false;
      } else if (tok[1] == "binary_little_endian") {
        binary = true;
      } else {
        throw ParseError(where + ": unsupported PLY format '" + std::string(tok[1]) + "'");
      }
    } else if (tok[0] == "element") {
      if (tok.size() < 3) throw ParseError(where + ": bad element line");
      elements.push_back({std::string(tok[1]), static_cast<std::size_t>(parse_int(tok[2], where)), {}});
    } else if (tok[0] == "property") {
      if (elements.empty()) throw ParseError(where + ": property before element");
      PlyProperty p;
      if (tok.size() >= 5 && tok[1] == "list") {
        p.is_list = true;
        p.count_type = ply_type(tok[2], where);
        p.type = ply_type(tok[3], where);
        p.name = tok[4];
      } else if (tok.size() >= 3) {
        p.type = ply_type(tok[1], where);
        p.name = tok[2];
      } else {
        throw ParseError(where + ": bad property line");
      }
      elements.back().props.push_back(p);
    } else {
      throw ParseError(where + ": unexpected header keyword '" + std::string(tok[0]) + "'");
    }
  }

  TriMesh mesh;
  for (const auto& el : elements) {
    const bool is_vertex = el.name == "vertex";
    const bool is_face = el.name == "face";
    int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1, iface = -1;
    for (int k = 0; k < static_cast<int>(el.props.size()); ++k) {
      const auto& n = el.props[static_cast<std::size_t>(k)].name;
      if (n == "x") ix = k;
      if (n == "y") iy = k;
      if (n == "z") iz = k;
      if (n == "red") ir = k;
      if (n == "green") ig = k;
      if (n == "blue") ib = k;
      if (n == "vertex_indices" || n == "vertex_index") iface = k;
    }
    if (is_vertex && (ix < 0 || iy < 0 || iz < 0)) throw ParseError("PLY vertex element lacks x/y/z");
    if (is_face && iface < 0) throw ParseError("PLY face element lacks vertex_indices");
    const bool colored = is_vertex && ir >= 0 && ig >= 0 && ib >= 0;

    for (std::size_t e = 0; e < el.count; ++e) {
      std::vector<double> scalars(el.props.size(), 0.0);
      std::vector<long long> list;
      std::vector<std::string_view> tok;
      std::size_t cursor = 0;
      std::string where;
      if (!binary) {
        where = "line " + std::to_string(lineno + 1);
        tok = split_ws(next_line());
      } else {
        where = "byte " + std::to_string(offset);
      }
      auto ascii_next = [&]() -> std::string_view {
        if (cursor >= tok.size()) throw ParseError(where + ": too few values in " + el.name + " record");
        return tok[cursor++];
      };
      for (std::size_t k = 0; k < el.props.size(); ++k) {
        const auto& p = el.props[k];
        if (p.is_list) {
          const auto n = static_cast<long long>(binary ? read_binary(in, p.count_type, offset)
                                                       : static_cast<double>(parse_int(ascii_next(), where)));
          if (n < 0) throw ParseError(where + ": negative list length");
          for (long long i = 0; i < n; ++i) {
            const double v = binary ? read_binary(in, p.type, offset) : static_cast<double>(parse_int(ascii_next(), where));
            if (static_cast<int>(k) == iface) list.push_back(static_cast<long long>(v));
          }
        } else {
          scalars[k] = binary ? read_binary(in, p.type, offset) : static_cast<double>(parse_float(ascii_next(), where));
        }
      }
      if (is_vertex) {
        mesh.vertices.emplace_back(static_cast<float>(scalars[static_cast<std::size_t>(ix)]),
                                   static_cast<float>(scalars[static_cast<std::size_t>(iy)]),
                                   static_cast<float>(scalars[static_cast<std::size_t>(iz)]));
        if (colored) {
          const auto& pr = el.props[static_cast<std::size_t>(ir)];
          const double scale = (pr.type == PlyType::F32 || pr.type == PlyType::F64) ? 1.0 : 1.0 / 255.0;
          mesh.colors.emplace_back(static_cast<float>(scalars[static_cast<std::size_t>(ir)] * scale),
                                   static_cast<float>(scalars[static_cast<std::size_t>(ig)] * scale),
                                   static_cast<float>(scalars[static_cast<std::size_t>(ib)] * scale));
        }
      } else if (is_face) {
        if (list.size() < 3) throw ParseError(where + ": face with fewer than 3 vertices");
        for (long long v : list) {
          if (v < 0 || v > static_cast<long long>(std::numeric_limits<std::uint32_t>::max())) {
            throw ParseError(where + ": bad vertex index " + std::to_string(v));
          }
        }
        for (std::size_t i = 1; i + 1 < list.size(); ++i) {
          mesh.triangles.push_back({static_cast<std::uint32_t>(list[0]), static_cast<std::uint32_t>(list[i]),
                                    static_cast<std::uint32_t>(list[i + 1])});
        }
      }
    }
  }
  mesh.validate();
  return mesh;
}

void write_ply(const TriMesh& mesh, std::ostream& out, PlyEncoding encoding) {
  const bool colored = !mesh.colors.empty();
  out << "ply\nformat " << (encoding == PlyEncoding::Ascii ? "ascii" : "binary_little_endian") << " 1.0\n";
  out << "element vertex " << mesh.vertices.size() << "\nproperty float x\nproperty float y\nproperty float z\n";
  if (colored) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "element face " << mesh.triangles.size() << "\nproperty list uchar int vertex_indices\nend_header\n";

  auto byte_of = [](float c) {
    return static_cast<unsigned>(std::lround(255.0f * std::clamp(std::isnan(c) ? 0.0f : c, 0.0f, 1.0f)));
  };
  if (encoding == PlyEncoding::Ascii) {
    out << std::setprecision(std::numeric_limits<float>::max_digits10);
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
      const auto& v = mesh.vertices[i];
      out << v.x() << ' ' << v.y() << ' ' << v.z();
      if (colored) {
        out << ' ' << byte_of(mesh.colors[i].x()) << ' ' << byte_of(mesh.colors[i].y()) << ' '
            << byte_of(mesh.colors[i].z());
      }
      out << '\n';
    }
    for (const auto& t : mesh.triangles) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    return;
  }
  auto put = [&out](std::uint32_t u) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xffu);
    out.write(b, 4);
  };
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    for (int a = 0; a < 3; ++a) put(std::bit_cast<std::uint32_t>(mesh.vertices[i][a]));
    if (colored) {
      for (int a = 0; a < 3; ++a) out.put(static_cast<char>(byte_of(mesh.colors[i][a])));
    }
  }
  for (const auto& t : mesh.triangles) {
    out.put(3);
    for (auto i : t) put(i);
  }
}

TriMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  TriMesh mesh;
  try {
    if (has_extension(path, ".obj")) {
      mesh = parse_obj(in);
    } else if (has_extension(path, ".ply")) {
      mesh = parse_ply(in);
    } else {
      throw FormatError(path.string() + ": unsupported mesh format (expected .obj or .ply)");
    }
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  remove_degenerate_triangles(mesh);
  return mesh;
}

void save_mesh(const TriMesh& mesh, const std::filesystem::path& path, PlyEncoding ply_encoding) {
  mesh.validate();
  const bool obj = has_extension(path, ".obj");
  if (!obj && !has_extension(path, ".ply")) {
    throw FormatError(path.string() + ": unsupported mesh format (expected .obj or .ply)");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  if (obj) {
    write_obj(mesh, out);
  } else {
    write_ply(mesh, out, ply_encoding);
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace dw
