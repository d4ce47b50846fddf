#pragma once

#include "bodyfit/cvt.hpp"
#include "bodyfit/mesh_io.hpp"
#include "bodyfit/mesh_repair.hpp"
#include "bodyfit/raster.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace bodyfit {

// Orthographic cameras on a sphere around the body, all looking at its
// center. Directions point from the center towards each camera.
struct CullCameraRig {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;       // camera distance from center
  double half_extent = 1.0;  // half width of each view
  int resolution = 1024;
  std::vector<Vec3> directions;

  int count() const { return static_cast<int>(directions.size()); }
  std::vector<Vec3> positions() const {
    std::vector<Vec3> out;
    for (const Vec3& d : directions) out.push_back(center + radius * d);
    return out;
  }

  void validate() const {
    if (count() < 6) throw ValidationError("CullCameraRig: at least 6 views are required");
    if (resolution < 16) throw ValidationError("CullCameraRig: resolution must be >= 16");
    if (!(radius > 0.0) || !(half_extent > 0.0)) throw ValidationError("CullCameraRig: radius and extent must be positive");
  }

  OrthoCamera camera(int k) const {
    const Vec3& d = directions[k];
    OrthoCamera cam;
    cam.azimuth_deg = std::atan2(d.x(), d.z()) * 180.0 / std::numbers::pi;
    cam.elevation_deg = std::asin(std::clamp(d.y(), -1.0, 1.0)) * 180.0 / std::numbers::pi;
    cam.half_extent = half_extent;
    cam.image_size = resolution;
    // Depth is measured from the plane through the center, so the eye sits
    // at -radius and nothing behind it is rendered.
    cam.near = -radius;
    cam.far = radius;
    cam.center = center;
    return cam;
  }
};

// Unit directions of a cube's 6 face centers, then its 8 corners, then its
// 12 edge midpoints. Rigs of 6, 14 and 26 views are nested prefixes.
inline std::vector<Vec3> cube_directions() {
  std::vector<Vec3> dirs;
  for (int a = 0; a < 3; ++a)
    for (int s : {1, -1}) {
      Vec3 d = Vec3::Zero();
      d[a] = s;
      dirs.push_back(d);
    }
  for (int x : {1, -1})
    for (int y : {1, -1})
      for (int z : {1, -1}) dirs.push_back(Vec3(x, y, z).normalized());
  for (int a = 0; a < 3; ++a)
    for (int s : {1, -1})
      for (int t : {1, -1}) {
        Vec3 d = Vec3::Zero();
        d[(a + 1) % 3] = s;
        d[(a + 2) % 3] = t;
        dirs.push_back(d.normalized());
      }
  return dirs;
}

// Default rig around `body`: camera radius twice the AABB half-diagonal and
// a view wide enough to cover the sphere of that half-diagonal with 10%
// headroom. Counts other than 6, 14 or 26 use a Fibonacci sphere.
inline CullCameraRig make_cull_rig(const TriMesh& body, int count = 26, int resolution = 1024) {
  if (body.vertices.empty()) throw ValidationError("make_cull_rig: body mesh is empty");
  if (count < 6) throw ValidationError("make_cull_rig: at least 6 views are required");
  const Aabb box = aabb(body);
  const double half_diag = std::max(0.5 * box.diagonal(), 1e-9);
  CullCameraRig rig;
  rig.center = box.center();
  rig.radius = 2.0 * half_diag;
  rig.half_extent = 1.1 * half_diag;
  rig.resolution = resolution;
  if (count == 6 || count == 14 || count == 26) {
    auto dirs = cube_directions();
    dirs.resize(count);
    rig.directions = std::move(dirs);
  } else {
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int k = 0; k < count; ++k) {
      const double y = 1.0 - 2.0 * (k + 0.5) / count;
      const double r = std::sqrt(1.0 - y * y);
      rig.directions.emplace_back(r * std::cos(golden * k), y, r * std::sin(golden * k));
    }
  }
  rig.validate();
  return rig;
}

// Per-face flag: true if the face wins the depth test at some pixel of some view.
inline std::vector<char> visible_faces(const TriMesh& asset, const CullCameraRig& rig) {
  validate_mesh(asset);
  rig.validate();
  std::vector<char> seen(asset.faces.size(), 0);
  for (int k = 0; k < rig.count(); ++k) {
    const FaceBuffer buf = rasterize_faces(asset, rig.camera(k));
    for (int f : buf.face)
      if (f >= 0) seen[f] = 1;
  }
  return seen;
}

// Drops every face that no rig view sees, keeping the outer layer.
inline TriMesh visibility_cull(const TriMesh& asset, const CullCameraRig& rig) {
  const auto seen = visible_faces(asset, rig);
  TriMesh kept;
  kept.vertices = asset.vertices;
  kept.canonical_coords = asset.canonical_coords;
  for (std::size_t f = 0; f < asset.faces.size(); ++f)
    if (seen[f]) kept.faces.push_back(asset.faces[f]);
  if (kept.faces.empty()) throw ValidationError("visibility_cull: no face is visible from the rig");
  return prune_unreferenced(kept);
}

struct ProxySkin {
  TriMesh proxy;
  std::vector<Vec3> rest_proxy_vertices;
  // Per visual vertex: (proxy vertex, weight) pairs.
  std::vector<std::vector<std::pair<int, double>>> weights;

  void validate() const {
    if (rest_proxy_vertices.size() != proxy.vertices.size())
      throw ValidationError("ProxySkin: rest snapshot size does not match the proxy");
    const int m = static_cast<int>(proxy.vertices.size());
    for (std::size_t v = 0; v < weights.size(); ++v) {
      double sum = 0.0;
      for (const auto& [j, w] : weights[v]) {
        if (j < 0 || j >= m) throw ValidationError("ProxySkin: weight references a missing proxy vertex");
        if (!(w >= 0.0)) throw ValidationError("ProxySkin: negative weight");
        sum += w;
      }
      if (std::abs(sum - 1.0) > 1e-6) throw ValidationError("ProxySkin: weights of vertex " + std::to_string(v) + " do not sum to 1");
    }
    if (!is_manifold(proxy)) throw ValidationError("ProxySkin: proxy is not manifold");
  }
};

// Normalized inverse-distance weights over the k nearest rest proxy
// vertices. A visual vertex that coincides with a proxy vertex binds to it
// alone.
inline std::vector<std::vector<std::pair<int, double>>> inverse_distance_weights(std::span<const Vec3> visual,
                                                                                 std::span<const Vec3> proxy,
                                                                                 int k = 4) {
  if (proxy.empty()) throw ValidationError("inverse_distance_weights: proxy has no vertices");
  k = std::min<int>(k, static_cast<int>(proxy.size()));
  std::vector<std::vector<std::pair<int, double>>> out(visual.size());
  std::vector<std::pair<double, int>> best;
  for (std::size_t v = 0; v < visual.size(); ++v) {
    best.clear();
    for (std::size_t j = 0; j < proxy.size(); ++j) {
      const double d2 = (visual[v] - proxy[j]).squaredNorm();
      if (static_cast<int>(best.size()) == k && d2 >= best.back().first) continue;
      const auto item = std::make_pair(d2, static_cast<int>(j));
      best.insert(std::upper_bound(best.begin(), best.end(), item), item);
      if (static_cast<int>(best.size()) > k) best.pop_back();
    }
    auto& w = out[v];
    if (best.front().first == 0.0) {
      w.emplace_back(best.front().second, 1.0);
      continue;
    }
    double sum = 0.0;
    for (const auto& [d2, j] : best) sum += 1.0 / std::sqrt(d2);
    for (const auto& [d2, j] : best) w.emplace_back(j, (1.0 / std::sqrt(d2)) / sum);
  }
  return out;
}

inline int default_target_clusters(const TriMesh& asset) {
  return std::min(4000, static_cast<int>((asset.faces.size() + 3) / 4));
}

struct ProxyOptions {
  int target_clusters = 0;  // 0 selects default_target_clusters(asset)
  int nearest = 4;
  std::uint64_t seed = 0;
};

// Culls hidden layers, simplifies the remaining surface by CVT, and binds
// every asset vertex to the proxy. The body is only used for the rig.
inline ProxySkin build_proxy(const TriMesh& asset, const CullCameraRig& rig, const ProxyOptions& options = {}) {
  const TriMesh outer = visibility_cull(asset, rig);
  int target = options.target_clusters > 0 ? options.target_clusters : default_target_clusters(asset);
  if (target > static_cast<int>(outer.vertices.size())) {
    log_warn("build_proxy: target of " + std::to_string(target) + " clusters exceeds the " +
             std::to_string(outer.vertices.size()) + " visible vertices; using all of them");
    target = static_cast<int>(outer.vertices.size());
  }
  ProxySkin skin;
  skin.proxy = cvt_simplify(outer, target, {200, options.seed}).mesh;
  skin.proxy.canonical_coords.reset();
  skin.rest_proxy_vertices = skin.proxy.vertices;
  skin.weights = inverse_distance_weights(asset.vertices, skin.rest_proxy_vertices, options.nearest);
  return skin;
}

inline ProxySkin build_proxy(const TriMesh& asset, const TriMesh& body, int target_clusters = 0, int rig_views = 26,
                             int rig_resolution = 1024, std::uint64_t seed = 0) {
  return build_proxy(asset, make_cull_rig(body, rig_views, rig_resolution), {target_clusters, 4, seed});
}

// Moves each visual vertex by the weighted displacement of its proxy vertices.
inline TriMesh propagate_deformation(const ProxySkin& skin, std::span<const Vec3> deformed_proxy, const TriMesh& visual) {
  if (deformed_proxy.size() != skin.rest_proxy_vertices.size())
    throw ValidationError("propagate_deformation: deformed vertex count does not match the proxy");
  if (visual.vertices.size() != skin.weights.size())
    throw ValidationError("propagate_deformation: visual vertex count does not match the skin weights");
  TriMesh out = visual;
  for (std::size_t v = 0; v < visual.vertices.size(); ++v) {
    Vec3 shift = Vec3::Zero();
    for (const auto& [j, w] : skin.weights[v]) shift += w * (deformed_proxy[j] - skin.rest_proxy_vertices[j]);
    out.vertices[v] += shift;
  }
  return out;
}

// Sidecar JSON with the weights; the proxy itself goes to a PLY file.
inline void save_proxy_skin(const ProxySkin& skin, const std::filesystem::path& ply_path,
                            const std::filesystem::path& weights_path) {
  save_mesh(skin.proxy, ply_path);
  nlohmann::json j;
  j["proxy_vertex_count"] = skin.proxy.vertices.size();
  j["visual_vertex_count"] = skin.weights.size();
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : skin.weights) {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& [idx, w] : row) r.push_back({idx, w});
    rows.push_back(std::move(r));
  }
  j["weights"] = std::move(rows);
  std::ofstream out(weights_path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + weights_path.string());
  out << j.dump() << '\n';
  if (!out) throw IoError("failed writing " + weights_path.string());
}

inline ProxySkin load_proxy_skin(const std::filesystem::path& ply_path, const std::filesystem::path& weights_path) {
  ProxySkin skin;
  skin.proxy = load_mesh(ply_path);
  skin.proxy.canonical_coords.reset();
  skin.rest_proxy_vertices = skin.proxy.vertices;
  std::ifstream in(weights_path, std::ios::binary);
  if (!in) throw IoError("cannot read " + weights_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    if (j.at("proxy_vertex_count").get<std::size_t>() != skin.proxy.vertices.size())
      throw IoError(weights_path.string() + ": proxy vertex count does not match " + ply_path.string());
    for (const auto& row : j.at("weights")) {
      auto& w = skin.weights.emplace_back();
      for (const auto& pair : row) w.emplace_back(pair.at(0).get<int>(), pair.at(1).get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(weights_path.string() + ": " + e.what());
  }
  skin.validate();
  return skin;
}

}  // namespace bodyfit
