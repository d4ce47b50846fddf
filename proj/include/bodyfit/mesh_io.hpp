#pragma once

#include "bodyfit/mesh.hpp"

#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace bodyfit {

static_assert(std::endian::native == std::endian::little, "binary PLY I/O assumes a little-endian host");

namespace detail {

inline std::string lowercase_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) tokens.push_back(line.substr(i, j - i));
    i = j;
  }
  return tokens;
}

inline double parse_double(std::string_view token, std::size_t line_no) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw IoError("line " + std::to_string(line_no) + ": bad number '" + std::string(token) + "'");
  }
  return value;
}

inline long parse_long(std::string_view token, std::size_t line_no) {
  long value = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw IoError("line " + std::to_string(line_no) + ": bad integer '" + std::string(token) + "'");
  }
  return value;
}

// Appends a polygon as a triangle fan; triangles that repeat an index are
// dropped and counted.
inline void push_polygon(TriMesh& mesh, const std::vector<int>& poly, std::size_t& dropped) {
  for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
    Face f{poly[0], poly[k], poly[k + 1]};
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) {
      ++dropped;
      continue;
    }
    mesh.faces.push_back(f);
  }
}

inline void check_indices(const TriMesh& mesh) {
  const auto n = static_cast<int>(mesh.vertices.size());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    for (int v : mesh.faces[f]) {
      if (v < 0 || v >= n) {
        throw IoError("face " + std::to_string(f) + ": vertex index " + std::to_string(v) +
                      " out of range (" + std::to_string(n) + " vertices)");
      }
    }
  }
}

inline TriMesh load_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  TriMesh mesh;
  std::vector<Vec3> colors;
  std::size_t dropped = 0;
  std::size_t line_no = 0;
  std::string line;
  std::vector<int> poly;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    std::string_view view(line.data(), hash == std::string::npos ? line.size() : hash);
    const auto tok = split_ws(view);
    if (tok.empty()) continue;
    if (tok[0] == "v") {
      if (tok.size() != 4 && tok.size() != 7) {
        throw IoError(path.string() + ":" + std::to_string(line_no) + ": malformed vertex line");
      }
      mesh.vertices.emplace_back(parse_double(tok[1], line_no), parse_double(tok[2], line_no),
                                 parse_double(tok[3], line_no));
      if (tok.size() == 7) {
        colors.emplace_back(parse_double(tok[4], line_no), parse_double(tok[5], line_no),
                            parse_double(tok[6], line_no));
      }
    } else if (tok[0] == "f") {
      if (tok.size() < 4) {
        throw IoError(path.string() + ":" + std::to_string(line_no) + ": face with fewer than 3 vertices");
      }
      poly.clear();
      for (std::size_t k = 1; k < tok.size(); ++k) {
        const auto slash = tok[k].find('/');
        long idx = parse_long(tok[k].substr(0, slash), line_no);
        if (idx == 0) throw IoError(path.string() + ":" + std::to_string(line_no) + ": zero face index");
        // Negative indices count back from the most recent vertex.
        idx = idx > 0 ? idx - 1 : static_cast<long>(mesh.vertices.size()) + idx;
        poly.push_back(static_cast<int>(idx));
      }
      push_polygon(mesh, poly, dropped);
    }
    // vt, vn, usemtl, mtllib, o, g, s, l are ignored.
  }
  check_indices(mesh);
  if (!colors.empty()) {
    if (colors.size() != mesh.vertices.size()) {
      throw IoError(path.string() + ": vertex colors present on only some vertices");
    }
    double max_c = 0.0;
    for (const auto& c : colors) max_c = std::max(max_c, c.maxCoeff());
    // Colors above 1 are taken as 0-255 encoded.
    if (max_c > 1.0)
      for (auto& c : colors) c /= 255.0;
    for (auto& c : colors) c = c.cwiseMax(0.0).cwiseMin(1.0);
    mesh.canonical_coords = std::move(colors);
  }
  if (dropped > 0) log_warn(path.string() + ": dropped " + std::to_string(dropped) + " degenerate faces");
  return mesh;
}

enum class PlyType { i8, u8, i16, u16, i32, u32, f32, f64 };

inline PlyType ply_type(std::string_view name) {
  if (name == "char" || name == "int8") return PlyType::i8;
  if (name == "uchar" || name == "uint8") return PlyType::u8;
  if (name == "short" || name == "int16") return PlyType::i16;
  if (name == "ushort" || name == "uint16") return PlyType::u16;
  if (name == "int" || name == "int32") return PlyType::i32;
  if (name == "uint" || name == "uint32") return PlyType::u32;
  if (name == "float" || name == "float32") return PlyType::f32;
  if (name == "double" || name == "float64") return PlyType::f64;
  throw IoError("unknown PLY type '" + std::string(name) + "'");
}

inline std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::i8:
    case PlyType::u8: return 1;
    case PlyType::i16:
    case PlyType::u16: return 2;
    case PlyType::i32:
    case PlyType::u32:
    case PlyType::f32: return 4;
    case PlyType::f64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::f32;
  bool is_list = false;
  PlyType count_type = PlyType::u8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

// Reads one scalar from a binary little-endian buffer and advances `pos`.
inline double read_binary(const std::vector<char>& buf, std::size_t& pos, PlyType t) {
  const std::size_t n = ply_size(t);
  if (pos + n > buf.size()) throw IoError("PLY body truncated");
  const char* p = buf.data() + pos;
  pos += n;
  switch (t) {
    case PlyType::i8: { std::int8_t v; std::memcpy(&v, p, 1); return v; }
    case PlyType::u8: { std::uint8_t v; std::memcpy(&v, p, 1); return v; }
    case PlyType::i16: { std::int16_t v; std::memcpy(&v, p, 2); return v; }
    case PlyType::u16: { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
    case PlyType::i32: { std::int32_t v; std::memcpy(&v, p, 4); return v; }
    case PlyType::u32: { std::uint32_t v; std::memcpy(&v, p, 4); return v; }
    case PlyType::f32: { float v; std::memcpy(&v, p, 4); return v; }
    case PlyType::f64: { double v; std::memcpy(&v, p, 8); return v; }
  }
  return 0.0;
}

inline TriMesh load_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("ply", 0) != 0) throw IoError(path.string() + ": missing 'ply' magic");
  bool binary = false;
  std::vector<PlyElement> elements;
  std::size_t line_no = 1;
  while (true) {
    if (!std::getline(in, line)) throw IoError(path.string() + ": unterminated PLY header");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tok = split_ws(line);
    if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "format") {
      if (tok.size() < 2) throw IoError(path.string() + ": bad format line");
      if (tok[1] == "ascii") binary = false;
      else if (tok[1] == "binary_little_endian") binary = true;
      else throw IoError(path.string() + ": unsupported PLY format '" + std::string(tok[1]) + "'");
    } else if (tok[0] == "element") {
      if (tok.size() != 3) throw IoError(path.string() + ": bad element line");
      elements.push_back({std::string(tok[1]), static_cast<std::size_t>(parse_long(tok[2], line_no)), {}});
    } else if (tok[0] == "property") {
      if (elements.empty()) throw IoError(path.string() + ": property before element");
      PlyProperty prop;
      if (tok.size() == 5 && tok[1] == "list") {
        prop.is_list = true;
        prop.count_type = ply_type(tok[2]);
        prop.type = ply_type(tok[3]);
        prop.name = tok[4];
      } else if (tok.size() == 3) {
        prop.type = ply_type(tok[1]);
        prop.name = tok[2];
      } else {
        throw IoError(path.string() + ": bad property line");
      }
      elements.back().props.push_back(prop);
    }
  }

  std::vector<char> body;
  if (binary) body.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  std::size_t pos = 0;

  TriMesh mesh;
  std::vector<Vec3> colors;
  bool colors_are_bytes = true;
  std::size_t dropped = 0;
  std::vector<double> values;
  std::vector<int> poly;

  for (const auto& el : elements) {
    int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1, iface = -1;
    for (std::size_t k = 0; k < el.props.size(); ++k) {
      const auto& p = el.props[k];
      const int kk = static_cast<int>(k);
      if (p.name == "x") ix = kk;
      else if (p.name == "y") iy = kk;
      else if (p.name == "z") iz = kk;
      else if (p.name == "red" || p.name == "r") ir = kk;
      else if (p.name == "green" || p.name == "g") ig = kk;
      else if (p.name == "blue" || p.name == "b") ib = kk;
      else if (p.is_list && (p.name == "vertex_indices" || p.name == "vertex_index")) iface = kk;
    }
    const bool is_vertex = el.name == "vertex";
    const bool is_face = el.name == "face";
    if (is_vertex && (ix < 0 || iy < 0 || iz < 0)) throw IoError(path.string() + ": vertex element lacks x/y/z");
    const bool has_color = is_vertex && ir >= 0 && ig >= 0 && ib >= 0;
    if (has_color) colors_are_bytes = el.props[ir].type == PlyType::u8;

    for (std::size_t row = 0; row < el.count; ++row) {
      values.assign(el.props.size(), 0.0);
      poly.clear();
      if (binary) {
        for (std::size_t k = 0; k < el.props.size(); ++k) {
          const auto& p = el.props[k];
          if (p.is_list) {
            const auto count = static_cast<std::size_t>(read_binary(body, pos, p.count_type));
            for (std::size_t c = 0; c < count; ++c) {
              const double v = read_binary(body, pos, p.type);
              if (static_cast<int>(k) == iface) poly.push_back(static_cast<int>(v));
            }
          } else {
            values[k] = read_binary(body, pos, p.type);
          }
        }
      } else {
        if (!std::getline(in, line)) throw IoError(path.string() + ": PLY body truncated");
        ++line_no;
        const auto tok = split_ws(line);
        std::size_t t = 0;
        for (std::size_t k = 0; k < el.props.size(); ++k) {
          const auto& p = el.props[k];
          if (t >= tok.size()) throw IoError(path.string() + ":" + std::to_string(line_no) + ": short row");
          if (p.is_list) {
            const auto count = static_cast<std::size_t>(parse_long(tok[t++], line_no));
            if (t + count > tok.size()) throw IoError(path.string() + ":" + std::to_string(line_no) + ": short list");
            for (std::size_t c = 0; c < count; ++c) {
              const double v = parse_double(tok[t++], line_no);
              if (static_cast<int>(k) == iface) poly.push_back(static_cast<int>(v));
            }
          } else {
            values[k] = parse_double(tok[t++], line_no);
          }
        }
      }
      if (is_vertex) {
        mesh.vertices.emplace_back(values[ix], values[iy], values[iz]);
        if (has_color) colors.emplace_back(values[ir], values[ig], values[ib]);
      } else if (is_face) {
        if (iface < 0) throw IoError(path.string() + ": face element lacks vertex_indices");
        if (poly.size() < 3) throw IoError(path.string() + ": face with fewer than 3 vertices");
        push_polygon(mesh, poly, dropped);
      }
    }
  }
  check_indices(mesh);
  if (!colors.empty()) {
    if (colors_are_bytes)
      for (auto& c : colors) c /= 255.0;
    for (auto& c : colors) c = c.cwiseMax(0.0).cwiseMin(1.0);
    mesh.canonical_coords = std::move(colors);
  }
  if (dropped > 0) log_warn(path.string() + ": dropped " + std::to_string(dropped) + " degenerate faces");
  return mesh;
}

}  // namespace detail

// Loads a Wavefront OBJ or PLY (ASCII / binary little-endian) mesh.
// Unreferenced vertices are kept. Per-vertex colors become canonical_coords.
inline TriMesh load_mesh(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  const auto ext = detail::lowercase_extension(path);
  TriMesh mesh;
  if (ext == ".obj") mesh = detail::load_obj(path);
  else if (ext == ".ply") mesh = detail::load_ply(path);
  else throw IoError("unsupported mesh extension '" + ext + "'");
  try {
    validate_mesh(mesh);
  } catch (const ValidationError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return mesh;
}

// Writes OBJ (full double precision) or binary little-endian PLY with double
// coordinates. Canonical coordinates are written as OBJ vertex colors in [0,1]
// or as 8-bit PLY red/green/blue.
inline void save_mesh(const TriMesh& mesh, const std::filesystem::path& path) {
  const auto ext = detail::lowercase_extension(path);
  if (ext != ".obj" && ext != ".ply") throw IoError("unsupported mesh extension '" + ext + "'");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const bool colored = mesh.canonical_coords && mesh.canonical_coords->size() == mesh.vertices.size();

  if (ext == ".obj") {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
      const auto& p = mesh.vertices[v];
      os << "v " << p.x() << ' ' << p.y() << ' ' << p.z();
      if (colored) {
        const auto& c = (*mesh.canonical_coords)[v];
        os << ' ' << c.x() << ' ' << c.y() << ' ' << c.z();
      }
      os << '\n';
    }
    for (const auto& f : mesh.faces) os << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    out << os.str();
  } else {
    std::ostringstream hdr;
    hdr << "ply\nformat binary_little_endian 1.0\n"
        << "element vertex " << mesh.vertices.size() << "\n"
        << "property double x\nproperty double y\nproperty double z\n";
    if (colored) hdr << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    hdr << "element face " << mesh.faces.size() << "\n"
        << "property list uchar int vertex_indices\nend_header\n";
    out << hdr.str();
    std::vector<char> buf;
    buf.reserve(mesh.vertices.size() * 27 + mesh.faces.size() * 13);
    auto put = [&buf](const auto& value) {
      const char* p = reinterpret_cast<const char*>(&value);
      buf.insert(buf.end(), p, p + sizeof(value));
    };
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
      const auto& p = mesh.vertices[v];
      put(p.x());
      put(p.y());
      put(p.z());
      if (colored) {
        const auto& c = (*mesh.canonical_coords)[v];
        for (int k = 0; k < 3; ++k)
          put(static_cast<std::uint8_t>(std::lround(std::clamp(c[k], 0.0, 1.0) * 255.0)));
      }
    }
    for (const auto& f : mesh.faces) {
      put(std::uint8_t{3});
      for (int k = 0; k < 3; ++k) put(static_cast<std::int32_t>(f[k]));
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace bodyfit
