#pragma once

#include "bodyfit/mesh.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <vector>

namespace bodyfit {

namespace detail {

inline std::vector<std::vector<int>> vertex_faces(const TriMesh& mesh) {
  std::vector<std::vector<int>> vf(mesh.vertices.size());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f)
    for (int v : mesh.faces[f]) vf[v].push_back(static_cast<int>(f));
  return vf;
}

inline int find_root(std::vector<int>& parent, int x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

// Groups the faces around `v` into edge-connected fan components.
// Returns a component label per entry of `faces`, labels ordered by first
// appearance.
inline std::vector<int> fan_components(const TriMesh& mesh, int v, const std::vector<int>& faces) {
  const int n = static_cast<int>(faces.size());
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto other = [&](int f, int k) {
    const auto& t = mesh.faces[f];
    int a = -1, b = -1;
    for (int i : t) {
      if (i == v) continue;
      if (a < 0) a = i;
      else b = i;
    }
    return k == 0 ? a : b;
  };
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const int ai = other(faces[i], 0), bi = other(faces[i], 1);
      const int aj = other(faces[j], 0), bj = other(faces[j], 1);
      if (ai == aj || ai == bj || bi == aj || bi == bj) {
        parent[find_root(parent, i)] = find_root(parent, j);
      }
    }
  }
  std::vector<int> label(n, -1);
  std::map<int, int> root_label;
  for (int i = 0; i < n; ++i) {
    const int r = find_root(parent, i);
    auto it = root_label.find(r);
    if (it == root_label.end()) it = root_label.emplace(r, static_cast<int>(root_label.size())).first;
    label[i] = it->second;
  }
  return label;
}

inline std::uint64_t edge_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

}  // namespace detail

// True iff every edge borders at most two faces and every vertex's incident
// faces form a single edge-connected fan.
inline bool is_manifold(const TriMesh& mesh) {
  std::map<std::uint64_t, int> edge_count;
  for (const auto& t : mesh.faces)
    for (int k = 0; k < 3; ++k)
      if (++edge_count[detail::edge_key(t[k], t[(k + 1) % 3])] > 2) return false;
  const auto vf = detail::vertex_faces(mesh);
  for (std::size_t v = 0; v < vf.size(); ++v) {
    if (vf[v].size() < 2) continue;
    const auto label = detail::fan_components(mesh, static_cast<int>(v), vf[v]);
    if (*std::max_element(label.begin(), label.end()) > 0) return false;
  }
  return true;
}

// Iteratively removes faces on edges shared by more than two faces (later
// faces go first) and splits vertices whose fan has several components, one
// copy per extra component. Repeats to a fixed point, then prunes
// unreferenced vertices.
inline TriMesh remove_nonmanifold(const TriMesh& input) {
  TriMesh mesh = input;
  for (int round = 0; round < 64; ++round) {
    bool changed = false;

    // Duplicate faces (same vertex set, either orientation).
    {
      std::map<std::array<int, 3>, int> seen;
      std::vector<Face> kept;
      kept.reserve(mesh.faces.size());
      for (const auto& f : mesh.faces) {
        auto key = f;
        std::sort(key.begin(), key.end());
        if (seen.emplace(key, 1).second) kept.push_back(f);
      }
      changed |= kept.size() != mesh.faces.size();
      mesh.faces = std::move(kept);
    }

    // Non-manifold edges.
    {
      std::map<std::uint64_t, int> count;
      std::vector<Face> kept;
      kept.reserve(mesh.faces.size());
      for (const auto& f : mesh.faces) {
        bool ok = true;
        for (int k = 0; k < 3; ++k) ok = ok && count[detail::edge_key(f[k], f[(k + 1) % 3])] < 2;
        if (!ok) continue;
        for (int k = 0; k < 3; ++k) ++count[detail::edge_key(f[k], f[(k + 1) % 3])];
        kept.push_back(f);
      }
      changed |= kept.size() != mesh.faces.size();
      mesh.faces = std::move(kept);
    }

    // Non-manifold vertices: split per fan component.
    {
      const auto vf = detail::vertex_faces(mesh);
      const std::size_t nv = mesh.vertices.size();
      for (std::size_t v = 0; v < nv; ++v) {
        if (vf[v].size() < 2) continue;
        const auto label = detail::fan_components(mesh, static_cast<int>(v), vf[v]);
        const int ncomp = *std::max_element(label.begin(), label.end()) + 1;
        if (ncomp == 1) continue;
        changed = true;
        std::vector<int> copy_of(ncomp, static_cast<int>(v));
        for (int c = 1; c < ncomp; ++c) {
          copy_of[c] = static_cast<int>(mesh.vertices.size());
          mesh.vertices.push_back(mesh.vertices[v]);
          if (mesh.canonical_coords) mesh.canonical_coords->push_back((*mesh.canonical_coords)[v]);
        }
        for (std::size_t i = 0; i < vf[v].size(); ++i) {
          if (label[i] == 0) continue;
          for (int& idx : mesh.faces[vf[v][i]])
            if (idx == static_cast<int>(v)) idx = copy_of[label[i]];
        }
      }
    }

    if (!changed) break;
  }
  return prune_unreferenced(mesh);
}

}  // namespace bodyfit
