#pragma once

#include "bodyfit/mesh.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <utility>

// Procedural meshes used as fixtures and as stand-ins for body/asset inputs.
// All closed shapes are outward oriented (counterclockwise seen from outside).
namespace bodyfit::shapes {

// Subdivided icosahedron projected onto a sphere. Level L has
// 10 * 4^L + 2 vertices and 20 * 4^L faces.
inline TriMesh icosphere(int level, double radius = 1.0, const Vec3& center = Vec3::Zero()) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<Face> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                         {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                         {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const int idx = static_cast<int>(v.size()) - 1;
      mid.emplace(key, idx);
      return idx;
    };
    std::vector<Face> next;
    next.reserve(f.size() * 4);
    for (const auto& tri : f) {
      const int a = midpoint(tri[0], tri[1]);
      const int b = midpoint(tri[1], tri[2]);
      const int c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  TriMesh mesh;
  mesh.vertices.reserve(v.size());
  for (const auto& p : v) mesh.vertices.push_back(center + radius * p);
  mesh.faces = std::move(f);
  return mesh;
}

// Torus around the +Y axis: `nu` segments around the ring, `nv` around the tube.
inline TriMesh torus(double major, double minor, int nu, int nv, const Vec3& center = Vec3::Zero()) {
  TriMesh mesh;
  for (int i = 0; i < nu; ++i) {
    const double u = 2.0 * std::numbers::pi * i / nu;
    for (int j = 0; j < nv; ++j) {
      const double w = 2.0 * std::numbers::pi * j / nv;
      const double r = major + minor * std::cos(w);
      mesh.vertices.push_back(center + Vec3(r * std::cos(u), minor * std::sin(w), r * std::sin(u)));
    }
  }
  auto id = [&](int i, int j) { return ((i + nu) % nu) * nv + (j + nv) % nv; };
  for (int i = 0; i < nu; ++i)
    for (int j = 0; j < nv; ++j) {
      const int a = id(i, j), b = id(i + 1, j), c = id(i + 1, j + 1), d = id(i, j + 1);
      mesh.faces.push_back({a, c, b});
      mesh.faces.push_back({a, d, c});
    }
  return mesh;
}

// Axis-aligned box with 8 vertices and 12 triangles.
inline TriMesh box(const Vec3& lo, const Vec3& hi) {
  TriMesh mesh;
  for (int k = 0; k < 8; ++k)
    mesh.vertices.emplace_back(k & 1 ? hi.x() : lo.x(), k & 2 ? hi.y() : lo.y(), k & 4 ? hi.z() : lo.z());
  mesh.faces = {{0, 2, 3}, {0, 3, 1}, {4, 5, 7}, {4, 7, 6}, {0, 1, 5}, {0, 5, 4},
                {2, 6, 7}, {2, 7, 3}, {0, 4, 6}, {0, 6, 2}, {1, 3, 7}, {1, 7, 5}};
  return mesh;
}

// Box with every face split into an n x n grid (welded), for fixtures that
// need more than 8 vertices.
inline TriMesh subdivided_box(const Vec3& lo, const Vec3& hi, int n) {
  TriMesh mesh;
  std::map<std::array<long, 3>, int> index;
  auto vertex = [&](int i, int j, int k) {
    const std::array<long, 3> key{i, j, k};
    auto it = index.find(key);
    if (it != index.end()) return it->second;
    const Vec3 p(lo.x() + (hi.x() - lo.x()) * i / n, lo.y() + (hi.y() - lo.y()) * j / n,
                 lo.z() + (hi.z() - lo.z()) * k / n);
    mesh.vertices.push_back(p);
    const int id = static_cast<int>(mesh.vertices.size()) - 1;
    index.emplace(key, id);
    return id;
  };
  // Each side: fixed axis a at value (0 or n), spanning axes b, c ordered so
  // that b x c points outward.
  struct Side {
    int axis, b, c, value;
  };
  const Side sides[6] = {{0, 1, 2, n}, {0, 2, 1, 0}, {1, 2, 0, n}, {1, 0, 2, 0}, {2, 0, 1, n}, {2, 1, 0, 0}};
  for (const auto& s : sides) {
    for (int u = 0; u < n; ++u)
      for (int w = 0; w < n; ++w) {
        auto at = [&](int uu, int ww) {
          int c[3];
          c[s.axis] = s.value;
          c[s.b] = uu;
          c[s.c] = ww;
          return vertex(c[0], c[1], c[2]);
        };
        const int a = at(u, w), b = at(u + 1, w), c = at(u + 1, w + 1), d = at(u, w + 1);
        mesh.faces.push_back({a, b, c});
        mesh.faces.push_back({a, c, d});
      }
  }
  return mesh;
}

// Cylinder along +Y with `segments` around and `rings` rows of quads. With
// caps, the ends are closed by fans around center vertices.
inline TriMesh cylinder(double radius, double y0, double y1, int segments, int rings, bool caps) {
  TriMesh mesh;
  for (int r = 0; r <= rings; ++r) {
    const double y = y0 + (y1 - y0) * r / rings;
    for (int s = 0; s < segments; ++s) {
      const double a = 2.0 * std::numbers::pi * s / segments;
      mesh.vertices.emplace_back(radius * std::cos(a), y, radius * std::sin(a));
    }
  }
  auto id = [&](int r, int s) { return r * segments + (s % segments); };
  for (int r = 0; r < rings; ++r)
    for (int s = 0; s < segments; ++s) {
      const int a = id(r, s), b = id(r, s + 1), c = id(r + 1, s + 1), d = id(r + 1, s);
      mesh.faces.push_back({a, c, b});
      mesh.faces.push_back({a, d, c});
    }
  if (caps) {
    const int bottom = static_cast<int>(mesh.vertices.size());
    mesh.vertices.emplace_back(0.0, y0, 0.0);
    const int top = bottom + 1;
    mesh.vertices.emplace_back(0.0, y1, 0.0);
    for (int s = 0; s < segments; ++s) {
      mesh.faces.push_back({bottom, id(0, s), id(0, s + 1)});
      mesh.faces.push_back({top, id(rings, s + 1), id(rings, s)});
    }
  }
  return mesh;
}

// Flat (nx+1) x (ny+1) vertex grid in the z = 0 plane spanning [0,sx]x[0,sy],
// normals along +Z.
inline TriMesh grid(int nx, int ny, double sx, double sy) {
  TriMesh mesh;
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) mesh.vertices.emplace_back(sx * i / nx, sy * j / ny, 0.0);
  auto id = [&](int i, int j) { return j * (nx + 1) + i; };
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      mesh.faces.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      mesh.faces.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  return mesh;
}

// Sets canonical coordinates to the positions normalized into [0,1]^3 by the
// mesh bounding box (uniform scale, longest side maps to [0,1]).
inline void assign_normalized_canonical(TriMesh& mesh) {
  const Aabb box = aabb(mesh);
  const double side = box.extent().maxCoeff();
  const Vec3 offset = box.center() - Vec3::Constant(0.5 * side);
  std::vector<Vec3> c;
  c.reserve(mesh.vertices.size());
  for (const auto& p : mesh.vertices) c.push_back(((p - offset) / side).cwiseMax(0.0).cwiseMin(1.0));
  mesh.canonical_coords = std::move(c);
}

// Simple humanoid stand-in: capped cylinders for torso, legs and arms plus an
// icosphere head, standing on y = 0 and facing +Z. Height about 1.7.
inline TriMesh mannequin(int detail = 24) {
  std::vector<TriMesh> parts;
  auto limb = [&](double radius, double y0, double y1, const Vec3& offset) {
    TriMesh c = cylinder(radius, y0, y1, detail, std::max(2, detail / 3), true);
    for (auto& p : c.vertices) p += offset;
    parts.push_back(std::move(c));
  };
  limb(0.16, 0.85, 1.42, Vec3(0, 0, 0));       // torso
  limb(0.065, 0.0, 0.86, Vec3(-0.085, 0, 0));  // right leg
  limb(0.065, 0.0, 0.86, Vec3(0.085, 0, 0));   // left leg
  limb(0.045, 0.9, 1.4, Vec3(-0.23, 0, 0));    // right arm
  limb(0.045, 0.9, 1.4, Vec3(0.23, 0, 0));     // left arm
  parts.push_back(icosphere(2, 0.11, Vec3(0, 1.55, 0)));
  TriMesh body = merge_meshes(parts);
  assign_normalized_canonical(body);
  return body;
}

}  // namespace bodyfit::shapes
