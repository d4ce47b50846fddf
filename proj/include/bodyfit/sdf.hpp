#pragma once

#include "bodyfit/bvh.hpp"
#include "bodyfit/mesh.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <vector>

namespace bodyfit {

struct SdfSample {
  double value = 0.0;
  Vec3 gradient = Vec3::Zero();
};

// Regular grid of signed distances, negative inside the body. Node (i,j,k)
// sits at origin + cell_size * (i,j,k); values are stored x-fastest.
struct SdfGrid {
  Vec3 origin = Vec3::Zero();
  double cell_size = 1.0;
  std::array<int, 3> dims{0, 0, 0};
  std::vector<double> values;

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i;
  }
  double at(int i, int j, int k) const { return values[index(i, j, k)]; }
  Vec3 node(int i, int j, int k) const { return origin + cell_size * Vec3(i, j, k); }
  std::size_t node_count() const { return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]; }

  Aabb bounds() const {
    Aabb b;
    b.min = origin;
    b.max = origin + cell_size * Vec3(dims[0] - 1, dims[1] - 1, dims[2] - 1);
    return b;
  }

  void validate() const {
    if (dims[0] < 2 || dims[1] < 2 || dims[2] < 2) throw ValidationError("SdfGrid dims must be >= 2");
    if (!(cell_size > 0.0) || !std::isfinite(cell_size)) throw ValidationError("SdfGrid cell_size must be positive");
    if (values.size() != node_count()) throw ValidationError("SdfGrid value count does not match dims");
    for (double v : values)
      if (!std::isfinite(v)) throw ValidationError("SdfGrid has non-finite values");
  }

  // Trilinear interpolation. Points outside the grid are clamped onto it and
  // the distance to the grid box is added, so far points read as outside.
  double value(const Vec3& p) const {
    const Aabb b = bounds();
    const Vec3 q = p.cwiseMax(b.min).cwiseMin(b.max);
    const double outside = (p - q).norm();
    Vec3 g = (q - origin) / cell_size;
    int base[3];
    double frac[3];
    for (int a = 0; a < 3; ++a) {
      // Snap coordinates that are a rounding error away from a node so that
      // sampling a node returns its stored value exactly.
      const double r = std::round(g[a]);
      if (std::abs(g[a] - r) < 1e-9) g[a] = r;
      base[a] = std::clamp(static_cast<int>(std::floor(g[a])), 0, dims[a] - 2);
      frac[a] = std::clamp(g[a] - base[a], 0.0, 1.0);
    }
    double v = 0.0;
    for (int corner = 0; corner < 8; ++corner) {
      const int di = corner & 1, dj = (corner >> 1) & 1, dk = (corner >> 2) & 1;
      const double w = (di ? frac[0] : 1.0 - frac[0]) * (dj ? frac[1] : 1.0 - frac[1]) * (dk ? frac[2] : 1.0 - frac[2]);
      if (w != 0.0) v += w * at(base[0] + di, base[1] + dj, base[2] + dk);
    }
    return v + outside;
  }

  // Value plus central-difference gradient with half-cell offsets. The
  // gradient is not normalized.
  SdfSample sample(const Vec3& p) const {
    SdfSample s;
    s.value = value(p);
    const double h = 0.5 * cell_size;
    for (int a = 0; a < 3; ++a) {
      Vec3 lo = p, hi = p;
      lo[a] -= h;
      hi[a] += h;
      s.gradient[a] = (value(hi) - value(lo)) / cell_size;
    }
    return s;
  }

  // Nearest grid node (Euclidean) whose value is at least `level`, searched
  // within `max_cells` of p's cell.
  std::optional<Vec3> nearest_node_at_least(const Vec3& p, double level, int max_cells = 8) const {
    const Vec3 g = (p - origin) / cell_size;
    int c[3];
    for (int a = 0; a < 3; ++a) c[a] = std::clamp(static_cast<int>(std::lround(g[a])), 0, dims[a] - 1);
    std::optional<Vec3> best;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (int k = std::max(0, c[2] - max_cells); k <= std::min(dims[2] - 1, c[2] + max_cells); ++k)
      for (int j = std::max(0, c[1] - max_cells); j <= std::min(dims[1] - 1, c[1] + max_cells); ++j)
        for (int i = std::max(0, c[0] - max_cells); i <= std::min(dims[0] - 1, c[0] + max_cells); ++i) {
          if (at(i, j, k) < level) continue;
          const Vec3 q = node(i, j, k);
          const double d2 = (q - p).squaredNorm();
          if (d2 < best_d2) {
            best_d2 = d2;
            best = q;
          }
        }
    return best;
  }
};

struct SdfOptions {
  int resolution = 128;   // cells along the longest body axis
  int padding = 4;        // cells added on every side
  int band = 5;           // exact-distance band half-width, cells
  double winding_threshold = 0.5;
};

// Signed distance field of a body mesh. Nodes near any triangle get the exact
// unsigned distance from a BVH query and a sign from the generalized winding
// number. The rest are filled by sweeping closest surface points outward from
// the band in all eight axis orders, and each connected region of swept nodes
// takes the majority sign of the band nodes that border it.
inline SdfGrid build_sdf(const TriMesh& body, const SdfOptions& options = {}) {
  if (body.faces.empty()) throw ValidationError("build_sdf: body mesh has no faces");
  if (options.resolution < 16) throw ValidationError("build_sdf: resolution must be >= 16");
  if (options.padding < 3) throw ValidationError("build_sdf: padding must be >= 3 cells");
  if (options.band < 1) throw ValidationError("build_sdf: band must be >= 1 cell");
  validate_mesh(body);

  const Aabb box = aabb(body);
  const double longest = box.extent().maxCoeff();
  if (!(longest > 0.0)) throw ValidationError("build_sdf: body has zero extent");

  SdfGrid grid;
  grid.cell_size = longest / options.resolution;
  grid.origin = box.min - Vec3::Constant(options.padding * grid.cell_size);
  for (int a = 0; a < 3; ++a)
    grid.dims[a] = static_cast<int>(std::ceil(box.extent()[a] / grid.cell_size)) + 2 * options.padding + 1;
  const double inf = std::numeric_limits<double>::infinity();
  grid.values.assign(grid.node_count(), inf);
  const double h = grid.cell_size;

  // Mark band candidates from each triangle's dilated bounding box.
  std::vector<std::uint8_t> in_band(grid.node_count(), 0);
  for (const auto& f : body.faces) {
    Aabb tb;
    for (int k = 0; k < 3; ++k) tb.expand(body.vertices[f[k]]);
    int lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::max(0, static_cast<int>(std::floor((tb.min[a] - grid.origin[a]) / h)) - options.band);
      hi[a] = std::min(grid.dims[a] - 1, static_cast<int>(std::ceil((tb.max[a] - grid.origin[a]) / h)) + options.band);
    }
    for (int k = lo[2]; k <= hi[2]; ++k)
      for (int j = lo[1]; j <= hi[1]; ++j)
        for (int i = lo[0]; i <= hi[0]; ++i) in_band[grid.index(i, j, k)] = 1;
  }

  const TriangleBvh bvh(body);
  std::vector<std::int8_t> sign(grid.node_count(), 0);
  std::vector<Vec3> closest(grid.node_count(), Vec3::Constant(inf));
  for (int k = 0; k < grid.dims[2]; ++k)
    for (int j = 0; j < grid.dims[1]; ++j)
      for (int i = 0; i < grid.dims[0]; ++i) {
        const std::size_t id = grid.index(i, j, k);
        if (!in_band[id]) continue;
        const Vec3 p = grid.node(i, j, k);
        const ClosestHit hit = bvh.closest(p);
        grid.values[id] = hit.distance;
        closest[id] = hit.point;
        sign[id] = bvh.winding_number(p) > options.winding_threshold ? -1 : 1;
      }

  const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
  const std::ptrdiff_t stride[3] = {1, nx, static_cast<std::ptrdiff_t>(nx) * ny};
  for (int pass = 0; pass < 2; ++pass) {
    for (int dir = 0; dir < 8; ++dir) {
      const int si = dir & 1 ? -1 : 1, sj = dir & 2 ? -1 : 1, sk = dir & 4 ? -1 : 1;
      for (int kk = 0; kk < nz; ++kk) {
        const int k = sk > 0 ? kk : nz - 1 - kk;
        for (int jj = 0; jj < ny; ++jj) {
          const int j = sj > 0 ? jj : ny - 1 - jj;
          for (int ii = 0; ii < nx; ++ii) {
            const int i = si > 0 ? ii : nx - 1 - ii;
            const std::size_t id = grid.index(i, j, k);
            if (in_band[id]) continue;
            const Vec3 p = grid.node(i, j, k);
            const int c[3] = {i, j, k};
            double best = grid.values[id];
            for (int axis = 0; axis < 3; ++axis)
              for (int d : {-1, 1}) {
                const int n = c[axis] + d;
                if (n < 0 || n >= grid.dims[axis]) continue;
                const Vec3& q = closest[id + d * stride[axis]];
                if (!std::isfinite(q.x())) continue;
                const double dist = (q - p).norm();
                if (dist < best) {
                  best = dist;
                  closest[id] = q;
                }
              }
            grid.values[id] = best;
          }
        }
      }
    }
  }

  // Sign of swept regions: 6-connected components of non-band nodes vote with
  // the signs of the band nodes they touch.
  std::vector<int> component(grid.node_count(), -1);
  std::vector<std::size_t> queue;
  int next_component = 0;
  for (std::size_t seed = 0; seed < grid.node_count(); ++seed) {
    if (in_band[seed] || component[seed] >= 0) continue;
    queue.clear();
    queue.push_back(seed);
    component[seed] = next_component;
    long vote = 0;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const std::size_t id = queue[head];
      const int i = static_cast<int>(id % nx);
      const int j = static_cast<int>((id / nx) % ny);
      const int k = static_cast<int>(id / (static_cast<std::size_t>(nx) * ny));
      const int nb[6][3] = {{i - 1, j, k}, {i + 1, j, k}, {i, j - 1, k}, {i, j + 1, k}, {i, j, k - 1}, {i, j, k + 1}};
      for (const auto& n : nb) {
        if (n[0] < 0 || n[1] < 0 || n[2] < 0 || n[0] >= nx || n[1] >= ny || n[2] >= nz) continue;
        const std::size_t nid = grid.index(n[0], n[1], n[2]);
        if (in_band[nid]) {
          vote += sign[nid];
        } else if (component[nid] < 0) {
          component[nid] = next_component;
          queue.push_back(nid);
        }
      }
    }
    const std::int8_t s = vote < 0 ? -1 : 1;
    for (std::size_t id : queue) sign[id] = s;
    ++next_component;
  }

  for (std::size_t id = 0; id < grid.node_count(); ++id) {
    if (std::isinf(grid.values[id])) throw NumericalError("build_sdf: unreached grid node");
    grid.values[id] *= sign[id];
  }
  return grid;
}

inline SdfGrid build_sdf(const TriMesh& body, int resolution) {
  SdfOptions options;
  options.resolution = resolution;
  return build_sdf(body, options);
}

// Binary layout: "SDF1", origin (3 x f32), cell_size (f32), dims (3 x u32),
// then dims[0]*dims[1]*dims[2] f32 values, x fastest, all little-endian.
inline void save_sdf(const SdfGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  auto put_f32 = [&](double v) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), sizeof f);
  };
  out.write("SDF1", 4);
  for (int a = 0; a < 3; ++a) put_f32(grid.origin[a]);
  put_f32(grid.cell_size);
  for (int a = 0; a < 3; ++a) {
    const auto d = static_cast<std::uint32_t>(grid.dims[a]);
    out.write(reinterpret_cast<const char*>(&d), sizeof d);
  }
  for (double v : grid.values) put_f32(v);
  if (!out) throw IoError("failed writing " + path.string());
}

inline SdfGrid load_sdf(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "SDF1", 4) != 0) throw IoError(path.string() + ": not an SDF1 file");
  auto get_f32 = [&] {
    float f;
    in.read(reinterpret_cast<char*>(&f), sizeof f);
    return static_cast<double>(f);
  };
  SdfGrid grid;
  for (int a = 0; a < 3; ++a) grid.origin[a] = get_f32();
  grid.cell_size = get_f32();
  for (int a = 0; a < 3; ++a) {
    std::uint32_t d;
    in.read(reinterpret_cast<char*>(&d), sizeof d);
    if (d < 2 || d > 4096) throw IoError(path.string() + ": bad SDF dims");
    grid.dims[a] = static_cast<int>(d);
  }
  if (!in) throw IoError(path.string() + ": truncated SDF header");
  grid.values.resize(grid.node_count());
  for (auto& v : grid.values) v = get_f32();
  if (!in) throw IoError(path.string() + ": truncated SDF values");
  try {
    grid.validate();
  } catch (const ValidationError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return grid;
}

}  // namespace bodyfit
