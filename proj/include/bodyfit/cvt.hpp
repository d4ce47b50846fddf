#pragma once

#include "bodyfit/mesh.hpp"
#include "bodyfit/mesh_repair.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <queue>
#include <random>
#include <string>
#include <vector>

namespace bodyfit {

struct CvtOptions {
  int max_passes = 200;
  std::uint64_t seed = 0;
};

struct CvtResult {
  TriMesh mesh;
  std::vector<int> labels;           // cluster per input vertex (-1 for isolated vertices)
  std::vector<double> energy_trace;  // energy after initialization and after each swap pass
  int clusters = 0;
  int passes = 0;
};

namespace detail {

struct ClusterStats {
  Vec3 sum = Vec3::Zero();  // area-weighted position sum
  double mass = 0.0;
  int count = 0;

  double score() const { return mass > 0.0 ? sum.squaredNorm() / mass : 0.0; }
};

// Lumped vertex areas: one third of each incident face.
inline std::vector<double> vertex_areas(const TriMesh& mesh) {
  std::vector<double> area(mesh.vertices.size(), 0.0);
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const double a = face_area(mesh, f) / 3.0;
    for (int v : mesh.faces[f]) area[v] += a;
  }
  return area;
}

// Connected components of the vertex graph, isolated vertices labelled -1.
inline std::vector<int> vertex_components(const std::vector<std::vector<int>>& adj, int& count) {
  std::vector<int> comp(adj.size(), -1);
  count = 0;
  std::vector<int> stack;
  for (std::size_t s = 0; s < adj.size(); ++s) {
    if (comp[s] >= 0 || adj[s].empty()) continue;
    comp[s] = count;
    stack.assign(1, static_cast<int>(s));
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      for (int w : adj[v])
        if (comp[w] < 0) {
          comp[w] = count;
          stack.push_back(w);
        }
    }
    ++count;
  }
  return comp;
}

// Multi-source Dijkstra over edge lengths; each vertex joins its nearest seed.
inline std::vector<int> grow_clusters(const TriMesh& mesh, const std::vector<std::vector<int>>& adj,
                                      const std::vector<int>& seeds) {
  std::vector<int> label(mesh.vertices.size(), -1);
  std::vector<double> dist(mesh.vertices.size(), std::numeric_limits<double>::infinity());
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  for (std::size_t c = 0; c < seeds.size(); ++c) {
    dist[seeds[c]] = 0.0;
    label[seeds[c]] = static_cast<int>(c);
    queue.emplace(0.0, seeds[c]);
  }
  while (!queue.empty()) {
    const auto [d, v] = queue.top();
    queue.pop();
    if (d > dist[v]) continue;
    for (int w : adj[v]) {
      const double nd = d + (mesh.vertices[v] - mesh.vertices[w]).norm();
      if (nd < dist[w] || (nd == dist[w] && label[v] < label[w])) {
        dist[w] = nd;
        label[w] = label[v];
        queue.emplace(nd, w);
      }
    }
  }
  return label;
}

// True if removing v from cluster `c` keeps c's vertices around v connected
// through v's one-ring, which preserves the cluster's connectivity.
inline bool can_leave(int v, int c, const std::vector<int>& label, const std::vector<std::vector<int>>& adj) {
  thread_local std::vector<int> ring, stack;
  ring.clear();
  for (int w : adj[v])
    if (label[w] == c) ring.push_back(w);
  if (ring.empty()) return true;
  if (ring.size() == 1) return true;
  // Flood fill inside the ring using mesh edges between ring members.
  std::vector<char> seen(ring.size(), 0);
  seen[0] = 1;
  stack.assign(1, 0);
  std::size_t reached = 1;
  while (!stack.empty()) {
    const int r = stack.back();
    stack.pop_back();
    const auto& nb = adj[ring[r]];
    for (std::size_t q = 0; q < ring.size(); ++q)
      if (!seen[q] && std::binary_search(nb.begin(), nb.end(), ring[q])) {
        seen[q] = 1;
        ++reached;
        stack.push_back(static_cast<int>(q));
      }
  }
  return reached == ring.size();
}

}  // namespace detail

// Area-weighted centroidal Voronoi clustering of mesh vertices followed by
// dual extraction: one output vertex per cluster at its weighted centroid and
// one triangle per input triangle whose corners lie in three clusters.
inline CvtResult cvt_simplify(const TriMesh& mesh, int target_clusters, const CvtOptions& options = {}) {
  validate_mesh(mesh);
  const int n = static_cast<int>(mesh.vertices.size());
  if (target_clusters < 4) throw ValidationError("cvt_simplify: target_clusters must be >= 4");
  if (target_clusters > n) throw ValidationError("cvt_simplify: target_clusters exceeds the vertex count");

  const auto adj = vertex_neighbors(mesh);
  const auto area = detail::vertex_areas(mesh);
  int n_comp = 0;
  const auto comp = detail::vertex_components(adj, n_comp);
  if (n_comp == 0) throw ValidationError("cvt_simplify: mesh has no edges");

  // Seeds: stratified sampling of the cumulative vertex area, with clusters
  // allotted to components in proportion to their area.
  std::vector<std::vector<int>> comp_vertices(n_comp);
  std::vector<double> comp_area(n_comp, 0.0);
  for (int v = 0; v < n; ++v)
    if (comp[v] >= 0) {
      comp_vertices[comp[v]].push_back(v);
      comp_area[comp[v]] += area[v];
    }
  const double total_area = std::accumulate(comp_area.begin(), comp_area.end(), 0.0);
  if (!(total_area > 0.0)) throw ValidationError("cvt_simplify: mesh has zero area");

  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<int> seeds;
  std::vector<char> is_seed(n, 0);
  int allotted = 0;
  for (int c = 0; c < n_comp; ++c) {
    const auto& verts = comp_vertices[c];
    int k = c + 1 == n_comp ? target_clusters - allotted
                            : static_cast<int>(std::lround(target_clusters * comp_area[c] / total_area));
    k = std::clamp(k, 1, static_cast<int>(verts.size()));
    allotted += k;
    if (k == static_cast<int>(verts.size())) {
      for (int v : verts) {
        seeds.push_back(v);
        is_seed[v] = 1;
      }
      continue;
    }
    std::vector<double> cum(verts.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < verts.size(); ++i) cum[i] = acc += area[verts[i]];
    for (int s = 0; s < k; ++s) {
      const double target = acc * (s + unit(rng)) / k;
      std::size_t i = std::lower_bound(cum.begin(), cum.end(), target) - cum.begin();
      i = std::min(i, verts.size() - 1);
      // Step to the next unused vertex on collisions.
      for (std::size_t probe = 0; probe < verts.size() && is_seed[verts[i]]; ++probe) i = (i + 1) % verts.size();
      seeds.push_back(verts[i]);
      is_seed[verts[i]] = 1;
    }
  }

  CvtResult result;
  result.labels = detail::grow_clusters(mesh, adj, seeds);
  auto& label = result.labels;
  const int k = static_cast<int>(seeds.size());
  std::vector<detail::ClusterStats> stats(k);
  for (int v = 0; v < n; ++v) {
    if (label[v] < 0) continue;
    auto& s = stats[label[v]];
    s.sum += area[v] * mesh.vertices[v];
    s.mass += area[v];
    ++s.count;
  }
  // Energy = sum rho |x|^2 - sum_C |S_C|^2 / m_C; only the second term varies.
  double constant = 0.0;
  for (int v = 0; v < n; ++v)
    if (label[v] >= 0) constant += area[v] * mesh.vertices[v].squaredNorm();
  auto energy = [&] {
    double e = constant;
    for (const auto& s : stats) e -= s.score();
    return std::max(0.0, e);
  };
  result.energy_trace.push_back(energy());

  const auto edges = unique_edges(mesh);
  auto try_move = [&](int v, int to) {
    const int from = label[v];
    auto& A = stats[from];
    auto& B = stats[to];
    if (A.count <= 1 || !detail::can_leave(v, from, label, adj)) return false;
    const Vec3 px = area[v] * mesh.vertices[v];
    const double before = A.score() + B.score();
    const double ma = A.mass - area[v], mb = B.mass + area[v];
    const double after = (ma > 0.0 ? (A.sum - px).squaredNorm() / ma : 0.0) + (B.sum + px).squaredNorm() / mb;
    // Strict improvement beyond rounding so the passes terminate.
    if (after <= before + 1e-14 * std::max(1.0, before)) return false;
    A.sum -= px;
    A.mass = ma;
    --A.count;
    B.sum += px;
    B.mass = mb;
    ++B.count;
    label[v] = to;
    return true;
  };
  for (int pass = 0; pass < options.max_passes; ++pass) {
    int moves = 0;
    for (const auto& [a, b] : edges) {
      if (label[a] == label[b] || label[a] < 0 || label[b] < 0) continue;
      if (try_move(a, label[b]) || try_move(b, label[a])) ++moves;
    }
    result.passes = pass + 1;
    result.energy_trace.push_back(energy());
    if (moves == 0) break;
  }

  // Zero-area clusters join the neighbor cluster they share most edges with.
  for (int round = 0; round < 8; ++round) {
    bool merged = false;
    for (int c = 0; c < k; ++c) {
      if (stats[c].count == 0 || stats[c].mass > 0.0) continue;
      std::vector<int> shared(k, 0);
      for (const auto& [a, b] : edges) {
        if (label[a] == c && label[b] != c && label[b] >= 0) ++shared[label[b]];
        if (label[b] == c && label[a] != c && label[a] >= 0) ++shared[label[a]];
      }
      const int best = static_cast<int>(std::max_element(shared.begin(), shared.end()) - shared.begin());
      if (shared[best] == 0) continue;
      for (int v = 0; v < n; ++v)
        if (label[v] == c) label[v] = best;
      stats[best].count += stats[c].count;
      stats[c] = {};
      merged = true;
    }
    if (!merged) break;
  }

  // Dual extraction.
  std::vector<int> out_index(k, -1);
  TriMesh dual;
  for (int c = 0; c < k; ++c) {
    if (stats[c].count == 0 || !(stats[c].mass > 0.0)) continue;
    out_index[c] = static_cast<int>(dual.vertices.size());
    dual.vertices.push_back(stats[c].sum / stats[c].mass);
  }
  for (const auto& t : mesh.faces) {
    const int a = label[t[0]], b = label[t[1]], c = label[t[2]];
    if (a == b || b == c || a == c) continue;
    if (out_index[a] < 0 || out_index[b] < 0 || out_index[c] < 0) continue;
    dual.faces.push_back({out_index[a], out_index[b], out_index[c]});
  }
  if (dual.faces.empty()) throw ValidationError("cvt_simplify: clustering produced no triangles (target too small)");
  result.mesh = remove_nonmanifold(dual);
  if (result.mesh.faces.empty()) throw ValidationError("cvt_simplify: no manifold triangles remain");
  result.clusters = static_cast<int>(dual.vertices.size());
  return result;
}

}  // namespace bodyfit
