#pragma once

#include "bodyfit/camera.hpp"
#include "bodyfit/image.hpp"
#include "bodyfit/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <tuple>
#include <vector>

namespace bodyfit {

// Z-buffer result: nearest face id per pixel (-1 where uncovered), its depth
// and the barycentric weights of the pixel center inside that face.
struct FaceBuffer {
  int size = 0;
  std::vector<double> depth;
  std::vector<int> face;
  std::vector<Vec3> bary;

  bool covered(int x, int y) const { return face[static_cast<std::size_t>(y) * size + x] >= 0; }
};

namespace detail {

struct ScreenTri {
  double x[3];
  double y[3];
  double z[3];
};

inline double edge_fn(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

// Edge a -> b of a screen triangle with its endpoints in lexicographic order.
// Two triangles sharing an edge then evaluate the same product and see exact
// negatives of each other, so no pixel center on the edge is dropped by both.
struct OrientedEdge {
  double ax, ay, bx, by, sign;

  OrientedEdge(const ScreenTri& t, int a, int b) {
    const bool swap = std::tie(t.x[b], t.y[b]) < std::tie(t.x[a], t.y[a]);
    const int lo = swap ? b : a, hi = swap ? a : b;
    ax = t.x[lo];
    ay = t.y[lo];
    bx = t.x[hi];
    by = t.y[hi];
    sign = swap ? -1.0 : 1.0;
  }
  double operator()(double px, double py) const { return sign * edge_fn(ax, ay, bx, by, px, py); }
};

// Visits every pixel whose center lies inside or on the triangle (both
// windings), passing barycentric weights of the pixel center.
template <class Visit>
void scan_triangle(const ScreenTri& t, int size, Visit&& visit) {
  double area = edge_fn(t.x[0], t.y[0], t.x[1], t.y[1], t.x[2], t.y[2]);
  if (!(std::abs(area) > 1e-12)) return;
  int i0 = 0, i1 = 1, i2 = 2;
  if (area < 0) {
    std::swap(i1, i2);
    area = -area;
  }
  const double xmin = std::min({t.x[0], t.x[1], t.x[2]});
  const double xmax = std::max({t.x[0], t.x[1], t.x[2]});
  const double ymin = std::min({t.y[0], t.y[1], t.y[2]});
  const double ymax = std::max({t.y[0], t.y[1], t.y[2]});
  // Pixel i covers center i + 0.5.
  const int px0 = std::max(0, static_cast<int>(std::ceil(xmin - 0.5)));
  const int px1 = std::min(size - 1, static_cast<int>(std::floor(xmax - 0.5)));
  const int py0 = std::max(0, static_cast<int>(std::ceil(ymin - 0.5)));
  const int py1 = std::min(size - 1, static_cast<int>(std::floor(ymax - 0.5)));
  if (px0 > px1 || py0 > py1) return;
  const double inv_area = 1.0 / area;
  const OrientedEdge e0(t, i1, i2), e1(t, i2, i0), e2(t, i0, i1);
  for (int py = py0; py <= py1; ++py) {
    const double cy = py + 0.5;
    for (int px = px0; px <= px1; ++px) {
      const double cx = px + 0.5;
      const double w0 = e0(cx, cy);
      const double w1 = e1(cx, cy);
      const double w2 = e2(cx, cy);
      if (w0 < 0 || w1 < 0 || w2 < 0) continue;
      Vec3 b;
      b[i0] = w0 * inv_area;
      b[i1] = w1 * inv_area;
      b[i2] = w2 * inv_area;
      visit(px, py, b);
    }
  }
}

inline std::vector<ScreenTri> project_faces(std::span<const Vec3> vertices, std::span<const Face> faces,
                                            const Projector& proj) {
  std::vector<Projected> pv(vertices.size());
  for (std::size_t v = 0; v < vertices.size(); ++v) pv[v] = proj(vertices[v]);
  std::vector<ScreenTri> tris(faces.size());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const auto& p = pv[faces[f][k]];
      tris[f].x[k] = p.x;
      tris[f].y[k] = p.y;
      tris[f].z[k] = p.depth;
    }
  }
  return tris;
}

inline double point_segment_dist2(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = ax + t * dx - px, ey = ay + t * dy - py;
  return ex * ex + ey * ey;
}

inline double point_triangle_dist_2d(const ScreenTri& t, double px, double py) {
  const double area = edge_fn(t.x[0], t.y[0], t.x[1], t.y[1], t.x[2], t.y[2]);
  if (std::abs(area) > 1e-12) {
    const double s = area > 0 ? 1.0 : -1.0;
    const double w0 = s * edge_fn(t.x[1], t.y[1], t.x[2], t.y[2], px, py);
    const double w1 = s * edge_fn(t.x[2], t.y[2], t.x[0], t.y[0], px, py);
    const double w2 = s * edge_fn(t.x[0], t.y[0], t.x[1], t.y[1], px, py);
    if (w0 >= 0 && w1 >= 0 && w2 >= 0) return 0.0;
  }
  double d2 = point_segment_dist2(px, py, t.x[0], t.y[0], t.x[1], t.y[1]);
  d2 = std::min(d2, point_segment_dist2(px, py, t.x[1], t.y[1], t.x[2], t.y[2]));
  d2 = std::min(d2, point_segment_dist2(px, py, t.x[2], t.y[2], t.x[0], t.y[0]));
  return std::sqrt(d2);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

// Undirected edges with their incident faces. Edges used by more than two
// faces keep the first two and are flagged so they always count as contour.
struct EdgeAdjacency {
  struct Edge {
    int a, b;
    int f0, f1;  // f1 == -1 for boundary edges
    bool nonmanifold;
  };
  std::vector<Edge> edges;
};

inline EdgeAdjacency build_edge_adjacency(std::span<const Face> faces) {
  struct Half {
    int a, b, face;
  };
  std::vector<Half> halves;
  halves.reserve(faces.size() * 3);
  for (std::size_t f = 0; f < faces.size(); ++f)
    for (int k = 0; k < 3; ++k) {
      const auto [a, b] = std::minmax(faces[f][k], faces[f][(k + 1) % 3]);
      halves.push_back({a, b, static_cast<int>(f)});
    }
  std::sort(halves.begin(), halves.end(),
            [](const Half& x, const Half& y) { return std::tie(x.a, x.b, x.face) < std::tie(y.a, y.b, y.face); });
  EdgeAdjacency adj;
  for (std::size_t i = 0; i < halves.size();) {
    std::size_t j = i;
    while (j < halves.size() && halves[j].a == halves[i].a && halves[j].b == halves[i].b) ++j;
    const int count = static_cast<int>(j - i);
    adj.edges.push_back({halves[i].a, halves[i].b, halves[i].face, count > 1 ? halves[i + 1].face : -1, count > 2});
    i = j;
  }
  return adj;
}

// Depth-tested face-id rasterization. Fragments outside [near, far] are
// discarded; ties keep the lower face index.
inline FaceBuffer rasterize_faces(std::span<const Vec3> vertices, std::span<const Face> faces,
                                  const OrthoCamera& cam, bool with_bary = false) {
  cam.validate();
  const Projector proj(cam);
  const int n = cam.image_size;
  FaceBuffer buf;
  buf.size = n;
  buf.depth.assign(static_cast<std::size_t>(n) * n, std::numeric_limits<double>::infinity());
  buf.face.assign(static_cast<std::size_t>(n) * n, -1);
  if (with_bary) buf.bary.assign(static_cast<std::size_t>(n) * n, Vec3::Zero());
  const auto tris = detail::project_faces(vertices, faces, proj);
  for (std::size_t f = 0; f < tris.size(); ++f) {
    const auto& t = tris[f];
    detail::scan_triangle(t, n, [&](int px, int py, const Vec3& b) {
      const double z = b[0] * t.z[0] + b[1] * t.z[1] + b[2] * t.z[2];
      if (z < cam.near || z > cam.far) return;
      const std::size_t idx = static_cast<std::size_t>(py) * n + px;
      if (z < buf.depth[idx]) {
        buf.depth[idx] = z;
        buf.face[idx] = static_cast<int>(f);
        if (with_bary) buf.bary[idx] = b;
      }
    });
  }
  return buf;
}

inline FaceBuffer rasterize_faces(const TriMesh& mesh, const OrthoCamera& cam, bool with_bary = false) {
  return rasterize_faces(mesh.vertices, mesh.faces, cam, with_bary);
}

// Barycentric interpolation of a per-vertex attribute from the nearest face.
inline XyzMap rasterize_attribute(const TriMesh& mesh, const OrthoCamera& cam, std::span<const Vec3> attribute) {
  if (attribute.size() != mesh.vertices.size())
    throw ValidationError("rasterize_attribute: attribute length differs from vertex count");
  if (mesh.empty()) throw ValidationError("rasterize_attribute: empty mesh");
  const auto buf = rasterize_faces(mesh, cam, true);
  const int n = cam.image_size;
  XyzMap out{Image<Vec3>(n, n, Vec3::Zero()), Image<std::uint8_t>(n, n, 0)};
  for (std::size_t i = 0; i < buf.face.size(); ++i) {
    const int f = buf.face[i];
    if (f < 0) continue;
    const auto& t = mesh.faces[f];
    const Vec3& b = buf.bary[i];
    const Vec3 value = b[0] * attribute[t[0]] + b[1] * attribute[t[1]] + b[2] * attribute[t[2]];
    out.rgb.data[i] = value.cwiseMax(0.0).cwiseMin(1.0);
    out.mask.data[i] = 1;
  }
  return out;
}

inline XyzMap rasterize_canonical(const TriMesh& mesh, const OrthoCamera& cam) {
  if (!mesh.canonical_coords) throw ValidationError("mesh has no canonical coordinates");
  return rasterize_attribute(mesh, cam, *mesh.canonical_coords);
}

// Hard coverage of pixel centers.
inline SilhouetteImage rasterize_silhouette(std::span<const Vec3> vertices, std::span<const Face> faces,
                                            const OrthoCamera& cam) {
  cam.validate();
  const Projector proj(cam);
  const int n = cam.image_size;
  SilhouetteImage out(n, n, 0.0);
  for (const auto& t : detail::project_faces(vertices, faces, proj)) {
    detail::scan_triangle(t, n, [&](int px, int py, const Vec3& b) {
      const double z = b[0] * t.z[0] + b[1] * t.z[1] + b[2] * t.z[2];
      if (z < cam.near || z > cam.far) return;
      out.at(px, py) = 1.0;
    });
  }
  return out;
}

inline SilhouetteImage rasterize_silhouette(const TriMesh& mesh, const OrthoCamera& cam) {
  return rasterize_silhouette(mesh.vertices, mesh.faces, cam);
}

// Band (in pixels) beyond which the soft silhouette is saturated to 0 / 1.
inline int soft_band_pixels(double sharpness) {
  return std::max(2, static_cast<int>(std::ceil(9.0 / sharpness)));
}

// Soft silhouette alpha = sigmoid(sharpness * signed distance) in pixel units,
// positive inside. Outside the coverage the distance from a pixel center to
// the nearest projected triangle is exact. Inside, the distance to the
// boundary is taken as min over outside pixels q adjacent to coverage of
// |p - q| - dist(q), an upper bound that is tight along the boundary normal.
// Pixels farther than soft_band_pixels() from the boundary saturate.
inline SilhouetteImage rasterize_soft_silhouette(std::span<const Vec3> vertices, std::span<const Face> faces,
                                                 const EdgeAdjacency& adjacency, const OrthoCamera& cam,
                                                 double sharpness) {
  if (!(sharpness > 0.0)) throw ValidationError("soft silhouette sharpness must be positive");
  cam.validate();
  const Projector proj(cam);
  const int n = cam.image_size;
  const auto tris = detail::project_faces(vertices, faces, proj);

  Image<std::uint8_t> mask(n, n, 0);
  for (const auto& t : tris) {
    detail::scan_triangle(t, n, [&](int px, int py, const Vec3& b) {
      const double z = b[0] * t.z[0] + b[1] * t.z[1] + b[2] * t.z[2];
      if (z < cam.near || z > cam.far) return;
      mask.at(px, py) = 1;
    });
  }

  const int band = soft_band_pixels(sharpness);
  const double inf = std::numeric_limits<double>::infinity();
  Image<double> dist_out(n, n, inf);
  // The union boundary lies on contour edges, so outside distances only need
  // those: boundary or non-manifold edges, edges next to a degenerate or
  // depth-culled face, and folds where both faces project to the same side.
  std::vector<char> active(tris.size());
  for (std::size_t f = 0; f < tris.size(); ++f) {
    const auto& t = tris[f];
    const double zmin = std::min({t.z[0], t.z[1], t.z[2]});
    const double zmax = std::max({t.z[0], t.z[1], t.z[2]});
    const double area = detail::edge_fn(t.x[0], t.y[0], t.x[1], t.y[1], t.x[2], t.y[2]);
    active[f] = zmax >= cam.near && zmin <= cam.far && std::abs(area) > 1e-12;
  }
  auto opposite_side = [&](int f, int a, int b, double ax, double ay, double bx, double by) {
    const auto& face = faces[f];
    const int c = face[0] != a && face[0] != b ? 0 : face[1] != a && face[1] != b ? 1 : 2;
    return detail::edge_fn(ax, ay, bx, by, tris[f].x[c], tris[f].y[c]);
  };
  for (const auto& e : adjacency.edges) {
    const bool a0 = active[e.f0], a1 = e.f1 >= 0 && active[e.f1];
    if (!a0 && !a1) continue;
    // Screen positions of the edge endpoints, read from an incident face.
    const int f = a0 ? e.f0 : e.f1;
    const auto& face = faces[f];
    const int ka = face[0] == e.a ? 0 : face[1] == e.a ? 1 : 2;
    const int kb = face[0] == e.b ? 0 : face[1] == e.b ? 1 : 2;
    const double ax = tris[f].x[ka], ay = tris[f].y[ka], bx = tris[f].x[kb], by = tris[f].y[kb];
    if (!e.nonmanifold && a0 && a1) {
      const double s0 = opposite_side(e.f0, e.a, e.b, ax, ay, bx, by);
      const double s1 = opposite_side(e.f1, e.a, e.b, ax, ay, bx, by);
      if ((s0 > 0 && s1 < 0) || (s0 < 0 && s1 > 0)) continue;
    }
    const int px0 = std::max(0, static_cast<int>(std::ceil(std::min(ax, bx) - band - 0.5)));
    const int px1 = std::min(n - 1, static_cast<int>(std::floor(std::max(ax, bx) + band - 0.5)));
    const int py0 = std::max(0, static_cast<int>(std::ceil(std::min(ay, by) - band - 0.5)));
    const int py1 = std::min(n - 1, static_cast<int>(std::floor(std::max(ay, by) + band - 0.5)));
    for (int py = py0; py <= py1; ++py) {
      for (int px = px0; px <= px1; ++px) {
        if (mask.at(px, py)) continue;
        double& d = dist_out.at(px, py);
        d = std::min(d, detail::point_segment_dist2(px + 0.5, py + 0.5, ax, ay, bx, by));
      }
    }
  }
  for (auto& d : dist_out.data) d = std::sqrt(d);

  // Outside pixels with a covered 8-neighbor, found by a separable 3x3 dilation.
  Image<std::uint8_t> grown_rows(n, n, 0), grown(n, n, 0);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      grown_rows.at(x, y) = mask.at(x, y) | (x > 0 && mask.at(x - 1, y)) | (x + 1 < n && mask.at(x + 1, y));
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      grown.at(x, y) =
          grown_rows.at(x, y) | (y > 0 && grown_rows.at(x, y - 1)) | (y + 1 < n && grown_rows.at(x, y + 1));

  const int span = 2 * band + 1;
  std::vector<double> radius(static_cast<std::size_t>(span) * span);
  for (int dy = -band; dy <= band; ++dy)
    for (int dx = -band; dx <= band; ++dx)
      radius[static_cast<std::size_t>(dy + band) * span + dx + band] = std::sqrt(static_cast<double>(dx * dx + dy * dy));

  Image<double> dist_in(n, n, inf);
  for (int qy = 0; qy < n; ++qy) {
    for (int qx = 0; qx < n; ++qx) {
      if (mask.at(qx, qy) || !grown.at(qx, qy)) continue;
      const double dq = std::min(dist_out.at(qx, qy), 1.5);
      for (int y = std::max(0, qy - band); y <= std::min(n - 1, qy + band); ++y) {
        const double* row = &radius[static_cast<std::size_t>(y - qy + band) * span + band - qx];
        for (int x = std::max(0, qx - band); x <= std::min(n - 1, qx + band); ++x) {
          if (!mask.at(x, y)) continue;
          double& d = dist_in.at(x, y);
          d = std::min(d, std::max(0.0, row[x] - dq));
        }
      }
    }
  }

  SilhouetteImage out(n, n, 0.0);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      if (mask.at(x, y)) {
        const double d = dist_in.at(x, y);
        out.at(x, y) = d > band ? 1.0 : detail::sigmoid(sharpness * d);
      } else {
        const double d = dist_out.at(x, y);
        out.at(x, y) = d > band ? 0.0 : detail::sigmoid(-sharpness * d);
      }
    }
  }
  return out;
}

inline SilhouetteImage rasterize_soft_silhouette(std::span<const Vec3> vertices, std::span<const Face> faces,
                                                 const OrthoCamera& cam, double sharpness) {
  return rasterize_soft_silhouette(vertices, faces, build_edge_adjacency(faces), cam, sharpness);
}

inline SilhouetteImage rasterize_soft_silhouette(const TriMesh& mesh, const OrthoCamera& cam, double sharpness) {
  return rasterize_soft_silhouette(mesh.vertices, mesh.faces, cam, sharpness);
}

}  // namespace bodyfit
