#pragma once

#include "bodyfit/common.hpp"

#include <algorithm>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace bodyfit {

// Indexed triangle mesh. Body meshes may carry a canonical-coordinate
// attribute (one point of [0,1]^3 per vertex) used as the rendered XYZ value.
struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::optional<std::vector<Vec3>> canonical_coords;

  std::size_t num_vertices() const { return vertices.size(); }
  std::size_t num_faces() const { return faces.size(); }
  bool empty() const { return vertices.empty(); }
};

struct Aabb {
  Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

  bool valid() const { return (min.array() <= max.array()).all(); }
  Vec3 center() const { return 0.5 * (min + max); }
  Vec3 extent() const { return max - min; }
  double diagonal() const { return extent().norm(); }

  void expand(const Vec3& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

// Throws ValidationError when any TriMesh invariant is broken.
inline void validate_mesh(const TriMesh& mesh) {
  const auto n = static_cast<int>(mesh.vertices.size());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& t = mesh.faces[f];
    for (int k = 0; k < 3; ++k) {
      if (t[k] < 0 || t[k] >= n) {
        throw ValidationError("face " + std::to_string(f) + " references vertex " +
                              std::to_string(t[k]) + " of " + std::to_string(n));
      }
    }
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) {
      throw ValidationError("face " + std::to_string(f) + " repeats a vertex index");
    }
  }
  for (const auto& v : mesh.vertices) {
    if (!v.allFinite()) throw ValidationError("non-finite vertex position");
  }
  if (mesh.canonical_coords) {
    if (mesh.canonical_coords->size() != mesh.vertices.size()) {
      throw ValidationError("canonical_coords length differs from vertex count");
    }
    for (const auto& c : *mesh.canonical_coords) {
      if (!((c.array() >= 0.0).all() && (c.array() <= 1.0).all())) {
        throw ValidationError("canonical coordinate outside [0,1]");
      }
    }
  }
}

inline Aabb aabb(std::span<const Vec3> points) {
  if (points.empty()) throw ValidationError("aabb of an empty point set");
  Aabb box;
  for (const auto& p : points) box.expand(p);
  return box;
}

inline Aabb aabb(const TriMesh& mesh) { return aabb(std::span<const Vec3>(mesh.vertices)); }

// Unnormalized face normal; its length is twice the triangle area.
inline Vec3 face_cross(const TriMesh& mesh, std::size_t f) {
  const auto& t = mesh.faces[f];
  const Vec3& a = mesh.vertices[t[0]];
  return (mesh.vertices[t[1]] - a).cross(mesh.vertices[t[2]] - a);
}

inline double face_area(const TriMesh& mesh, std::size_t f) { return 0.5 * face_cross(mesh, f).norm(); }

inline double surface_area(const TriMesh& mesh) {
  double area = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) area += face_area(mesh, f);
  return area;
}

inline const Vec3& fallback_normal() {
  static const Vec3 n(0.0, 0.0, 1.0);
  return n;
}

// Area-weighted vertex normals. Vertices without any incident area get
// fallback_normal().
inline std::vector<Vec3> vertex_normals(const TriMesh& mesh) {
  std::vector<Vec3> normals(mesh.vertices.size(), Vec3::Zero());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const Vec3 n = face_cross(mesh, f);
    for (int v : mesh.faces[f]) normals[v] += n;
  }
  std::size_t degenerate = 0;
  for (auto& n : normals) {
    const double len = n.norm();
    if (len > 1e-300 && std::isfinite(len)) {
      n /= len;
    } else {
      n = fallback_normal();
      ++degenerate;
    }
  }
  if (degenerate > 0) {
    log_warn("vertex_normals: " + std::to_string(degenerate) +
             " vertices without incident area, using fallback normal");
  }
  return normals;
}

// Sorted undirected edge list (i < j), each edge once.
inline std::vector<std::pair<int, int>> unique_edges(const TriMesh& mesh) {
  std::vector<std::pair<int, int>> edges;
  edges.reserve(mesh.faces.size() * 3);
  for (const auto& t : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      int a = t[k], b = t[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      edges.emplace_back(a, b);
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

// Vertex adjacency lists (sorted, no duplicates).
inline std::vector<std::vector<int>> vertex_neighbors(const TriMesh& mesh) {
  std::vector<std::vector<int>> adj(mesh.vertices.size());
  for (const auto& [a, b] : unique_edges(mesh)) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  for (auto& list : adj) std::sort(list.begin(), list.end());
  return adj;
}

inline double mean_edge_length(const TriMesh& mesh) {
  const auto edges = unique_edges(mesh);
  if (edges.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [a, b] : edges) sum += (mesh.vertices[a] - mesh.vertices[b]).norm();
  return sum / static_cast<double>(edges.size());
}

// Drops vertices not referenced by any face, remapping indices.
inline TriMesh prune_unreferenced(const TriMesh& mesh) {
  std::vector<int> remap(mesh.vertices.size(), -1);
  for (const auto& t : mesh.faces)
    for (int v : t) remap[v] = 0;
  TriMesh out;
  int next = 0;
  for (std::size_t v = 0; v < remap.size(); ++v) {
    if (remap[v] < 0) continue;
    remap[v] = next++;
    out.vertices.push_back(mesh.vertices[v]);
  }
  if (mesh.canonical_coords) {
    out.canonical_coords.emplace();
    for (std::size_t v = 0; v < remap.size(); ++v)
      if (remap[v] >= 0) out.canonical_coords->push_back((*mesh.canonical_coords)[v]);
  }
  out.faces.reserve(mesh.faces.size());
  for (const auto& t : mesh.faces) out.faces.push_back({remap[t[0]], remap[t[1]], remap[t[2]]});
  return out;
}

// Concatenates meshes, offsetting face indices. Canonical coordinates are kept
// only if every part has them.
inline TriMesh merge_meshes(std::span<const TriMesh> parts) {
  TriMesh out;
  bool all_canonical = !parts.empty();
  for (const auto& p : parts) all_canonical = all_canonical && p.canonical_coords.has_value();
  if (all_canonical) out.canonical_coords.emplace();
  for (const auto& p : parts) {
    const int offset = static_cast<int>(out.vertices.size());
    out.vertices.insert(out.vertices.end(), p.vertices.begin(), p.vertices.end());
    for (const auto& t : p.faces) out.faces.push_back({t[0] + offset, t[1] + offset, t[2] + offset});
    if (all_canonical)
      out.canonical_coords->insert(out.canonical_coords->end(), p.canonical_coords->begin(),
                                   p.canonical_coords->end());
  }
  return out;
}

}  // namespace bodyfit
