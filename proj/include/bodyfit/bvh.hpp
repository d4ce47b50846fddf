#pragma once

#include "bodyfit/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

namespace bodyfit {

// Closest point on triangle (a, b, c) to p, by Voronoi-region classification.
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  const double denom = va + vb + vc;
  if (!(std::abs(denom) > 0)) {
    // Degenerate triangle: fall back to the nearest of its edges.
    auto seg = [&](const Vec3& u, const Vec3& v) {
      const Vec3 d = v - u;
      const double len2 = d.squaredNorm();
      const double t = len2 > 0 ? std::clamp((p - u).dot(d) / len2, 0.0, 1.0) : 0.0;
      return Vec3(u + t * d);
    };
    Vec3 best = seg(a, b);
    for (const Vec3& q : {seg(b, c), seg(c, a)})
      if ((q - p).squaredNorm() < (best - p).squaredNorm()) best = q;
    return best;
  }
  const double v = vb / denom, w = vc / denom;
  return a + ab * v + ac * w;
}

// Signed solid angle of triangle (a, b, c) seen from p, divided by 4 pi.
inline double triangle_winding(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 x = a - p, y = b - p, z = c - p;
  const double lx = x.norm(), ly = y.norm(), lz = z.norm();
  const double det = x.dot(y.cross(z));
  const double div = lx * ly * lz + x.dot(y) * lz + y.dot(z) * lx + z.dot(x) * ly;
  return std::atan2(det, div) / (2.0 * std::numbers::pi);
}

struct ClosestHit {
  double distance = std::numeric_limits<double>::infinity();
  int face = -1;
  Vec3 point = Vec3::Zero();
};

// Bounding volume hierarchy over the faces of a triangle mesh. Supports
// nearest-point queries and a far-field dipole approximation of the
// generalized winding number.
class TriangleBvh {
 public:
  explicit TriangleBvh(const TriMesh& mesh, double far_field_beta = 2.0)
      : vertices_(mesh.vertices), faces_(mesh.faces), beta_(far_field_beta) {
    if (faces_.empty()) throw ValidationError("TriangleBvh: mesh has no faces");
    order_.resize(faces_.size());
    centroids_.resize(faces_.size());
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      order_[f] = static_cast<int>(f);
      centroids_[f] = (vertices_[faces_[f][0]] + vertices_[faces_[f][1]] + vertices_[faces_[f][2]]) / 3.0;
    }
    nodes_.reserve(2 * faces_.size());
    build(0, static_cast<int>(faces_.size()));
  }

  ClosestHit closest(const Vec3& p) const {
    ClosestHit hit;
    double best2 = std::numeric_limits<double>::infinity();
    int stack[128];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& node = nodes_[stack[--top]];
      if (box_dist2(node.box, p) >= best2) continue;
      if (node.leaf()) {
        for (int i = node.begin; i < node.end; ++i) {
          const int f = order_[i];
          const auto& t = faces_[f];
          const Vec3 q = closest_point_on_triangle(p, vertices_[t[0]], vertices_[t[1]], vertices_[t[2]]);
          const double d2 = (q - p).squaredNorm();
          if (d2 < best2 || (d2 == best2 && f < hit.face)) {
            best2 = d2;
            hit.face = f;
            hit.point = q;
          }
        }
        continue;
      }
      // Visit the nearer child first.
      const double dl = box_dist2(nodes_[node.left].box, p);
      const double dr = box_dist2(nodes_[node.right].box, p);
      if (dl < dr) {
        stack[top++] = node.right;
        stack[top++] = node.left;
      } else {
        stack[top++] = node.left;
        stack[top++] = node.right;
      }
    }
    hit.distance = std::sqrt(best2);
    return hit;
  }

  double winding_number(const Vec3& p) const {
    double w = 0.0;
    int stack[128];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& node = nodes_[stack[--top]];
      const Vec3 d = node.dipole_center - p;
      const double r = d.norm();
      if (!node.leaf() && r > beta_ * node.radius) {
        w += d.dot(node.area_normal) / (4.0 * std::numbers::pi * r * r * r);
        continue;
      }
      if (node.leaf()) {
        for (int i = node.begin; i < node.end; ++i) {
          const auto& t = faces_[order_[i]];
          w += triangle_winding(p, vertices_[t[0]], vertices_[t[1]], vertices_[t[2]]);
        }
        continue;
      }
      stack[top++] = node.left;
      stack[top++] = node.right;
    }
    return w;
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Aabb box;
    int left = -1, right = -1;
    int begin = 0, end = 0;
    Vec3 dipole_center = Vec3::Zero();  // area-weighted centroid
    Vec3 area_normal = Vec3::Zero();    // sum of area-weighted normals
    double radius = 0.0;                // max distance from dipole_center to the box
    bool leaf() const { return left < 0; }
  };

  static constexpr int kLeafSize = 4;

  static double box_dist2(const Aabb& b, const Vec3& p) {
    const Vec3 d = (b.min - p).cwiseMax(p - b.max).cwiseMax(0.0);
    return d.squaredNorm();
  }

  int build(int begin, int end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Node node;
    node.begin = begin;
    node.end = end;
    Aabb centroid_box;
    double area_sum = 0.0;
    Vec3 weighted = Vec3::Zero();
    for (int i = begin; i < end; ++i) {
      const auto& t = faces_[order_[i]];
      for (int k = 0; k < 3; ++k) node.box.expand(vertices_[t[k]]);
      centroid_box.expand(centroids_[order_[i]]);
      const Vec3 cross = (vertices_[t[1]] - vertices_[t[0]]).cross(vertices_[t[2]] - vertices_[t[0]]);
      const double area = 0.5 * cross.norm();
      area_sum += area;
      weighted += area * centroids_[order_[i]];
      node.area_normal += 0.5 * cross;
    }
    node.dipole_center = area_sum > 0 ? Vec3(weighted / area_sum) : node.box.center();
    for (int k = 0; k < 8; ++k) {
      const Vec3 corner(k & 1 ? node.box.max.x() : node.box.min.x(), k & 2 ? node.box.max.y() : node.box.min.y(),
                        k & 4 ? node.box.max.z() : node.box.min.z());
      node.radius = std::max(node.radius, (corner - node.dipole_center).norm());
    }
    if (end - begin > kLeafSize) {
      int axis = 0;
      centroid_box.extent().maxCoeff(&axis);
      const int mid = (begin + end) / 2;
      std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
        const double ca = centroids_[a][axis], cb = centroids_[b][axis];
        return ca < cb || (ca == cb && a < b);
      });
      node.left = build(begin, mid);
      node.right = build(mid, end);
    }
    nodes_[id] = node;
    return id;
  }

  std::vector<Vec3> vertices_;
  std::vector<Face> faces_;
  std::vector<int> order_;
  std::vector<Vec3> centroids_;
  std::vector<Node> nodes_;
  double beta_;
};

}  // namespace bodyfit
