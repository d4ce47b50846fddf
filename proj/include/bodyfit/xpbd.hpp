#pragma once

#include "bodyfit/mesh.hpp"
#include "bodyfit/sdf.hpp"
#include "bodyfit/spatial_hash.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace bodyfit {

struct StretchConstraint {
  int i = 0, j = 0;
  double rest_length = 0.0;
  double compliance = 0.0;
};

// Dihedral-angle constraint on the two triangles sharing edge (v[2], v[3]);
// v[0] and v[1] are the opposite vertices.
struct BendingConstraint {
  std::array<int, 4> v{};
  double rest_angle = 0.0;
  double compliance = 0.0;
};

struct SolverState {
  std::vector<Vec3> positions;
  std::vector<Vec3> prev_positions;
  std::vector<Vec3> velocities;
  std::vector<double> inv_mass;

  explicit SolverState(std::vector<Vec3> x, std::vector<double> w = {})
      : positions(std::move(x)), prev_positions(positions), velocities(positions.size(), Vec3::Zero()),
        inv_mass(std::move(w)) {
    if (inv_mass.empty()) inv_mass.assign(positions.size(), 1.0);
    if (inv_mass.size() != positions.size()) throw ValidationError("SolverState: inv_mass size does not match vertex count");
    for (double m : inv_mass)
      if (!(m >= 0.0) || !std::isfinite(m)) throw ValidationError("SolverState: inv_mass must be finite and >= 0");
  }
};

enum class NeighborSearch { spatial_hash, brute_force };

struct SolverParams {
  int substeps = 4;
  int iterations = 8;
  double dt = 1.0 / 60.0;
  double collision_margin = 1e-3;
  double friction_mu = 0.4;
  double self_collision_radius = 0.01;
  int max_outer_loops = 200;
  double penetration_tol = 1e-3;
  double stretch_compliance = 0.0;
  double damping = 0.98;  // velocity factor applied once per substep
  bool self_collision = true;
  // Alternative reading of the hand-off: adopt the current edge lengths as
  // rest lengths after every outer loop.
  bool rewrite_rest_lengths = false;
  // Apply body-collision corrections to the previous positions as well, so
  // pushing a vertex out of the body does not turn into outward velocity.
  bool stabilize_contacts = true;
  bool bending = false;
  double bending_compliance = 0.0;
  NeighborSearch neighbor_search = NeighborSearch::spatial_hash;

  void validate() const {
    if (substeps < 1 || iterations < 1 || max_outer_loops < 1)
      throw ValidationError("SolverParams: substeps, iterations and max_outer_loops must be >= 1");
    auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
    if (!positive(dt)) throw ValidationError("SolverParams.dt must be positive");
    if (!(collision_margin >= 0.0) || !std::isfinite(collision_margin))
      throw ValidationError("SolverParams.collision_margin must be >= 0");
    if (!positive(penetration_tol)) throw ValidationError("SolverParams.penetration_tol must be positive");
    if (!(friction_mu >= 0.0) || !std::isfinite(friction_mu)) throw ValidationError("SolverParams.friction_mu must be >= 0");
    if (self_collision && !positive(self_collision_radius))
      throw ValidationError("SolverParams.self_collision_radius must be positive");
    if (!(stretch_compliance >= 0.0) || !(bending_compliance >= 0.0))
      throw ValidationError("SolverParams: compliances must be >= 0");
    if (!(damping > 0.0 && damping <= 1.0)) throw ValidationError("SolverParams.damping must be in (0, 1]");
  }

  // Scale-dependent defaults: margin and tolerance at 1e-3 of the body
  // diagonal, self-collision radius at half the mean proxy edge length.
  static SolverParams defaults_for(const TriMesh& body, const TriMesh& proxy) {
    SolverParams p;
    const double diag = aabb(body).diagonal();
    p.collision_margin = 1e-3 * diag;
    p.penetration_tol = 1e-3 * diag;
    const double edge = mean_edge_length(proxy);
    p.self_collision_radius = edge > 0.0 ? 0.5 * edge : 1e-3 * diag;
    return p;
  }
};

struct Contact {
  int vertex = -1;
  Vec3 normal = Vec3::Zero();  // unit outward normal at the contact
  double correction = 0.0;     // length of the collision projection
  bool fallback = false;       // zero gradient: moved to the nearest outside node
};

// One XPBD step on a distance constraint. Returns false (and does nothing)
// for coincident endpoints.
inline bool project_stretch(SolverState& s, const StretchConstraint& c, double& lambda, double dt) {
  Vec3 d = s.positions[c.i] - s.positions[c.j];
  const double len = d.norm();
  if (len < 1e-12) return false;
  const double wsum = s.inv_mass[c.i] + s.inv_mass[c.j];
  const double alpha = c.compliance / (dt * dt);
  if (wsum + alpha == 0.0) return true;
  const double C = len - c.rest_length;
  const double dlambda = (-C - alpha * lambda) / (wsum + alpha);
  lambda += dlambda;
  d /= len;
  s.positions[c.i] += s.inv_mass[c.i] * dlambda * d;
  s.positions[c.j] -= s.inv_mass[c.j] * dlambda * d;
  return true;
}

// Pushes vertex v out to the margin level set when it is closer than
// `margin` to (or inside) the body.
inline std::optional<Contact> project_body_collision(SolverState& s, int v, const SdfGrid& sdf, double margin) {
  if (s.inv_mass[v] == 0.0) return std::nullopt;
  Vec3& x = s.positions[v];
  const SdfSample q = sdf.sample(x);
  if (q.value >= margin) return std::nullopt;
  Contact c;
  c.vertex = v;
  const double g2 = q.gradient.squaredNorm();
  if (g2 > 1e-24) {
    const Vec3 dx = (margin - q.value) * q.gradient / g2;
    c.correction = dx.norm();
    c.normal = q.gradient / std::sqrt(g2);
    x += dx;
    return c;
  }
  c.fallback = true;
  if (auto target = sdf.nearest_node_at_least(x, margin)) {
    const Vec3 dx = *target - x;
    c.correction = dx.norm();
    if (c.correction > 0.0) c.normal = dx / c.correction;
    x = *target;
  }
  return c;
}

// Position-level Coulomb friction on the tangential part of this substep's
// displacement: cancelled when within mu times the normal correction,
// otherwise shortened by that amount.
inline void project_friction(SolverState& s, const Contact& c, double mu) {
  if (mu <= 0.0 || c.correction <= 0.0 || c.normal.isZero()) return;
  Vec3& x = s.positions[c.vertex];
  const Vec3 dx = x - s.prev_positions[c.vertex];
  const Vec3 tangential = dx - dx.dot(c.normal) * c.normal;
  const double slide = tangential.norm();
  if (slide == 0.0) return;
  const double limit = mu * c.correction;
  x -= slide <= limit ? tangential : Vec3(tangential * (limit / slide));
}

// Enforces |x_i - x_j| >= radius on each listed pair. Returns the number of
// pairs that were closer than the radius.
inline int project_self_collision(SolverState& s, std::span<const std::pair<int, int>> pairs, double radius) {
  int active = 0;
  for (const auto& [i, j] : pairs) {
    const double wsum = s.inv_mass[i] + s.inv_mass[j];
    if (wsum == 0.0) continue;
    Vec3 d = s.positions[j] - s.positions[i];
    const double len = d.norm();
    if (len >= radius) continue;
    ++active;
    d = len < 1e-12 ? Vec3::UnitX() : Vec3(d / len);
    const double err = radius - len;
    s.positions[i] -= (s.inv_mass[i] / wsum) * err * d;
    s.positions[j] += (s.inv_mass[j] / wsum) * err * d;
  }
  return active;
}

// Sorted (i < j) vertex pairs within `reach` of each other that do not share
// a mesh edge. `adjacency` must hold sorted neighbor lists.
inline std::vector<std::pair<int, int>> self_collision_candidates(std::span<const Vec3> x,
                                                                 const std::vector<std::vector<int>>& adjacency,
                                                                 double cell_size, double reach, NeighborSearch mode) {
  std::vector<std::pair<int, int>> pairs;
  std::vector<int> found;
  SpatialHash hash;
  if (mode == NeighborSearch::spatial_hash) hash = SpatialHash(x, cell_size);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (mode == NeighborSearch::spatial_hash)
      hash.query(x[i], reach, found);
    else
      found = brute_force_neighbors(x, x[i], reach);
    const auto& adj = adjacency[i];
    for (int j : found) {
      if (j <= static_cast<int>(i)) continue;
      if (std::binary_search(adj.begin(), adj.end(), j)) continue;
      pairs.emplace_back(static_cast<int>(i), j);
    }
  }
  return pairs;
}

namespace detail {

inline double signed_dihedral(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3) {
  const Vec3 e = p3 - p2;
  const Vec3 n1 = (p0 - p2).cross(p0 - p3);
  const Vec3 n2 = (p1 - p3).cross(p1 - p2);
  return std::atan2(n1.cross(n2).dot(e.normalized()), n1.dot(n2));
}

inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a + std::numbers::pi, two_pi);
  if (a < 0) a += two_pi;
  return a - std::numbers::pi;
}

}  // namespace detail

// Gradient of detail::signed_dihedral with respect to the four vertices.
// Returns false for degenerate triangles.
inline bool dihedral_gradient(const std::array<Vec3, 4>& p, std::array<Vec3, 4>& grad) {
  const Vec3 e = p[3] - p[2];
  const double elen = e.norm();
  const Vec3 n1 = (p[0] - p[2]).cross(p[0] - p[3]);
  const Vec3 n2 = (p[1] - p[3]).cross(p[1] - p[2]);
  const double a1 = n1.squaredNorm(), a2 = n2.squaredNorm();
  if (elen < 1e-12 || a1 < 1e-24 || a2 < 1e-24) return false;
  const Vec3 u1 = n1 / a1, u2 = n2 / a2;
  grad[0] = -elen * u1;
  grad[1] = -elen * u2;
  grad[2] = -((p[0] - p[3]).dot(e) / elen * u1 + (p[1] - p[3]).dot(e) / elen * u2);
  grad[3] = (p[0] - p[2]).dot(e) / elen * u1 + (p[1] - p[2]).dot(e) / elen * u2;
  return true;
}

inline bool project_bending(SolverState& s, const BendingConstraint& c, double& lambda, double dt) {
  std::array<Vec3, 4> p, g;
  for (int k = 0; k < 4; ++k) p[k] = s.positions[c.v[k]];
  if (!dihedral_gradient(p, g)) return false;
  const double C = detail::wrap_angle(detail::signed_dihedral(p[0], p[1], p[2], p[3]) - c.rest_angle);
  const double alpha = c.compliance / (dt * dt);
  double denom = alpha;
  for (int k = 0; k < 4; ++k) denom += s.inv_mass[c.v[k]] * g[k].squaredNorm();
  if (denom < 1e-24) return false;
  const double dlambda = (-C - alpha * lambda) / denom;
  lambda += dlambda;
  for (int k = 0; k < 4; ++k) s.positions[c.v[k]] += s.inv_mass[c.v[k]] * dlambda * g[k];
  return true;
}

inline std::vector<StretchConstraint> make_stretch_constraints(const TriMesh& mesh, double compliance) {
  std::vector<StretchConstraint> out;
  for (const auto& [a, b] : unique_edges(mesh))
    out.push_back({a, b, (mesh.vertices[a] - mesh.vertices[b]).norm(), compliance});
  return out;
}

// One constraint per interior edge shared by exactly two faces.
inline std::vector<BendingConstraint> make_bending_constraints(const TriMesh& mesh, double compliance) {
  struct HalfEdge {
    int a, b, opposite;
  };
  std::vector<HalfEdge> half;
  for (const auto& t : mesh.faces)
    for (int k = 0; k < 3; ++k) {
      const int a = t[k], b = t[(k + 1) % 3];
      half.push_back({std::min(a, b), std::max(a, b), t[(k + 2) % 3]});
    }
  std::sort(half.begin(), half.end(), [](const HalfEdge& x, const HalfEdge& y) {
    return std::tie(x.a, x.b, x.opposite) < std::tie(y.a, y.b, y.opposite);
  });
  std::vector<BendingConstraint> out;
  for (std::size_t i = 0; i < half.size();) {
    std::size_t j = i;
    while (j < half.size() && half[j].a == half[i].a && half[j].b == half[i].b) ++j;
    if (j - i == 2) {
      BendingConstraint c;
      c.v = {half[i].opposite, half[i + 1].opposite, half[i].a, half[i].b};
      c.rest_angle = detail::signed_dihedral(mesh.vertices[c.v[0]], mesh.vertices[c.v[1]], mesh.vertices[c.v[2]],
                                             mesh.vertices[c.v[3]]);
      c.compliance = compliance;
      out.push_back(c);
    }
    i = j;
  }
  return out;
}

struct LoopDiagnostics {
  int loop = 0;
  double max_pen = 0.0;
  double rms_strain = 0.0;
  int active_contacts = 0;
};

struct ResolveResult {
  std::vector<Vec3> positions;
  std::vector<LoopDiagnostics> diagnostics;
  bool converged = false;
  int loops = 0;
  double max_penetration = 0.0;
  double rms_strain = 0.0;
  int gradient_fallbacks = 0;
  int skipped_constraints = 0;
};

class SolverDivergedError : public NumericalError {
 public:
  SolverDivergedError(const std::string& what, std::vector<LoopDiagnostics> diagnostics)
      : NumericalError(what), diagnostics_(std::move(diagnostics)) {}
  const std::vector<LoopDiagnostics>& diagnostics() const { return diagnostics_; }

 private:
  std::vector<LoopDiagnostics> diagnostics_;
};

// Largest depth below the zero level over all points (0 when none is inside).
inline double max_penetration(std::span<const Vec3> x, const SdfGrid& sdf) {
  double worst = 0.0;
  for (const Vec3& p : x) worst = std::max(worst, -sdf.value(p));
  return worst;
}

inline double rms_strain(std::span<const Vec3> x, std::span<const StretchConstraint> constraints) {
  if (constraints.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& c : constraints) {
    const double e = ((x[c.i] - x[c.j]).norm() - c.rest_length) / c.rest_length;
    sum += e * e;
  }
  return std::sqrt(sum / static_cast<double>(constraints.size()));
}

// Quasi-static XPBD relaxation of `proxy` out of the body described by `sdf`.
// Outer loops of `substeps` substeps repeat until the deepest vertex is
// within penetration_tol or max_outer_loops is reached. Strain is measured
// against the proxy's own edge lengths.
inline ResolveResult resolve_penetration(const TriMesh& proxy, const SdfGrid& sdf, const SolverParams& params,
                                         std::vector<double> inv_mass = {}) {
  validate_mesh(proxy);
  params.validate();
  sdf.validate();
  SolverState state(proxy.vertices, std::move(inv_mass));
  const std::size_t n = state.positions.size();

  std::vector<StretchConstraint> stretch = make_stretch_constraints(proxy, params.stretch_compliance);
  for (const auto& c : stretch)
    if (!(c.rest_length > 0.0)) throw ValidationError("resolve_penetration: proxy has a zero-length edge");
  const std::vector<StretchConstraint> reference = stretch;
  std::vector<BendingConstraint> bending;
  if (params.bending) bending = make_bending_constraints(proxy, params.bending_compliance);
  const auto adjacency = vertex_neighbors(proxy);

  std::vector<double> stretch_lambda(stretch.size()), bend_lambda(bending.size());
  std::vector<Contact> contacts;
  std::vector<std::pair<int, int>> pairs;
  ResolveResult result;
  result.positions = state.positions;
  double best_pen = std::numeric_limits<double>::infinity();

  for (int loop = 1; loop <= params.max_outer_loops; ++loop) {
    int active_contacts = 0;
    for (int sub = 0; sub < params.substeps; ++sub) {
      state.prev_positions = state.positions;
      for (std::size_t v = 0; v < n; ++v)
        if (state.inv_mass[v] > 0.0) state.positions[v] += params.dt * state.velocities[v];
      std::fill(stretch_lambda.begin(), stretch_lambda.end(), 0.0);
      std::fill(bend_lambda.begin(), bend_lambda.end(), 0.0);
      if (params.self_collision) {
        // Candidates within 1.5 radii at the start of the substep, so pairs
        // that close in during the iterations are still seen.
        pairs = self_collision_candidates(state.positions, adjacency, params.self_collision_radius,
                                          1.5 * params.self_collision_radius, params.neighbor_search);
      }
      for (int it = 0; it < params.iterations; ++it) {
        for (std::size_t k = 0; k < stretch.size(); ++k)
          if (!project_stretch(state, stretch[k], stretch_lambda[k], params.dt)) ++result.skipped_constraints;
        for (std::size_t k = 0; k < bending.size(); ++k)
          if (!project_bending(state, bending[k], bend_lambda[k], params.dt)) ++result.skipped_constraints;
        contacts.clear();
        for (std::size_t v = 0; v < n; ++v)
          if (auto c = project_body_collision(state, static_cast<int>(v), sdf, params.collision_margin)) {
            if (c->fallback) ++result.gradient_fallbacks;
            if (params.stabilize_contacts) state.prev_positions[v] += c->correction * c->normal;
            contacts.push_back(*c);
          }
        for (const Contact& c : contacts) project_friction(state, c, params.friction_mu);
        if (params.self_collision) project_self_collision(state, pairs, params.self_collision_radius);
      }
      active_contacts = static_cast<int>(contacts.size());
      for (std::size_t v = 0; v < n; ++v) {
        if (!state.positions[v].allFinite()) {
          throw SolverDivergedError("resolve_penetration: non-finite position at vertex " + std::to_string(v) +
                                        " in loop " + std::to_string(loop),
                                    result.diagnostics);
        }
        state.velocities[v] = params.damping * (state.positions[v] - state.prev_positions[v]) / params.dt;
      }
    }
    LoopDiagnostics d;
    d.loop = loop;
    d.max_pen = max_penetration(state.positions, sdf);
    d.rms_strain = rms_strain(state.positions, reference);
    d.active_contacts = active_contacts;
    result.diagnostics.push_back(d);
    result.loops = loop;
    if (d.max_pen < best_pen) {
      best_pen = d.max_pen;
      result.positions = state.positions;
      result.max_penetration = d.max_pen;
      result.rms_strain = d.rms_strain;
    }
    if (d.max_pen <= params.penetration_tol) {
      result.converged = true;
      result.positions = state.positions;
      result.max_penetration = d.max_pen;
      result.rms_strain = d.rms_strain;
      break;
    }
    if (params.rewrite_rest_lengths)
      for (auto& c : stretch) c.rest_length = (state.positions[c.i] - state.positions[c.j]).norm();
  }
  if (result.skipped_constraints > 0)
    log_warn("resolve_penetration: skipped " + std::to_string(result.skipped_constraints) +
             " projections on degenerate geometry");
  if (!result.converged)
    log_warn("resolve_penetration: not converged after " + std::to_string(result.loops) +
             " loops; returning the least-penetrating iterate (max_pen " + std::to_string(result.max_penetration) + ")");
  return result;
}

}  // namespace bodyfit
