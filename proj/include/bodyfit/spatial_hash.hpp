#pragma once

#include "bodyfit/common.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace bodyfit {

// Uniform-grid spatial hash over a point set. Cells are addressed by their
// integer coordinates floor(p / cell_size), hashed into a fixed-size bucket
// table stored in compressed (CSR) form. Hash collisions only add candidates;
// queries filter by exact distance, so results are exact.
class SpatialHash {
 public:
  SpatialHash() = default;

  SpatialHash(std::span<const Vec3> points, double cell_size) : cell_size_(cell_size) {
    if (!(cell_size > 0.0) || !std::isfinite(cell_size)) throw ValidationError("SpatialHash: cell_size must be positive");
    points_.assign(points.begin(), points.end());
    table_size_ = std::max<std::size_t>(1, 2 * points_.size());
    start_.assign(table_size_ + 1, 0);
    std::vector<std::size_t> bucket(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) {
      bucket[i] = bucket_of(cell_of(points_[i]));
      ++start_[bucket[i] + 1];
    }
    for (std::size_t b = 0; b < table_size_; ++b) start_[b + 1] += start_[b];
    entries_.resize(points_.size());
    std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
    // Ascending insertion keeps each bucket sorted by point index.
    for (std::size_t i = 0; i < points_.size(); ++i) entries_[fill[bucket[i]]++] = static_cast<int>(i);
  }

  using Cell = std::array<std::int64_t, 3>;

  Cell cell_of(const Vec3& p) const {
    return {static_cast<std::int64_t>(std::floor(p.x() / cell_size_)),
            static_cast<std::int64_t>(std::floor(p.y() / cell_size_)),
            static_cast<std::int64_t>(std::floor(p.z() / cell_size_))};
  }

  // Indices of the points sharing p's bucket (its cell plus any colliding cells).
  std::span<const int> bucket(const Vec3& p) const {
    if (points_.empty()) return {};
    const std::size_t b = bucket_of(cell_of(p));
    return {entries_.data() + start_[b], entries_.data() + start_[b + 1]};
  }

  // Sorted indices i with |points[i] - p| <= radius. Requires radius at most
  // twice the cell size so the 5x5x5 block around p's cell suffices; the
  // common case radius <= cell_size scans only the 27-cell neighborhood.
  std::vector<int> query(const Vec3& p, double radius) const {
    std::vector<int> out;
    query(p, radius, out);
    return out;
  }

  void query(const Vec3& p, double radius, std::vector<int>& out) const {
    out.clear();
    if (points_.empty()) return;
    if (radius > 2.0 * cell_size_) throw ValidationError("SpatialHash::query: radius exceeds twice the cell size");
    const int reach = radius <= cell_size_ ? 1 : 2;
    const Cell c = cell_of(p);
    const double r2 = radius * radius;
    std::array<std::size_t, 125> visited;
    std::size_t n_visited = 0;
    for (std::int64_t dz = -reach; dz <= reach; ++dz)
      for (std::int64_t dy = -reach; dy <= reach; ++dy)
        for (std::int64_t dx = -reach; dx <= reach; ++dx) {
          const std::size_t b = bucket_of({c[0] + dx, c[1] + dy, c[2] + dz});
          // Distinct cells can share a bucket; scan each bucket once.
          if (std::find(visited.begin(), visited.begin() + n_visited, b) != visited.begin() + n_visited) continue;
          visited[n_visited++] = b;
          for (std::size_t e = start_[b]; e < start_[b + 1]; ++e) {
            const int i = entries_[e];
            if ((points_[i] - p).squaredNorm() <= r2) out.push_back(i);
          }
        }
    std::sort(out.begin(), out.end());
  }

  double cell_size() const { return cell_size_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

 private:
  std::size_t bucket_of(const Cell& c) const {
    const std::uint64_t h = static_cast<std::uint64_t>(c[0]) * 73856093ULL ^ static_cast<std::uint64_t>(c[1]) * 19349663ULL ^
                            static_cast<std::uint64_t>(c[2]) * 83492791ULL;
    return static_cast<std::size_t>(h % table_size_);
  }

  double cell_size_ = 1.0;
  std::vector<Vec3> points_;
  std::size_t table_size_ = 1;
  std::vector<std::size_t> start_;
  std::vector<int> entries_;
};

// O(n) reference scan with the same closed-ball convention as SpatialHash::query.
inline std::vector<int> brute_force_neighbors(std::span<const Vec3> points, const Vec3& p, double radius) {
  std::vector<int> out;
  const double r2 = radius * radius;
  for (std::size_t i = 0; i < points.size(); ++i)
    if ((points[i] - p).squaredNorm() <= r2) out.push_back(static_cast<int>(i));
  return out;
}

}  // namespace bodyfit
