#include "bodyfit/shapes.hpp"
#include "bodyfit/xpbd.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <random>
#include <set>

using namespace bodyfit;
using namespace bodyfit::oracles;
using bodyfit::fixtures::random_points;
using bodyfit::fixtures::sheet;

namespace {

const SdfGrid& sphere_grid() {
  static const SdfGrid grid = build_sdf(shapes::icosphere(4, 0.5), 64);
  return grid;
}

}  // namespace

TEST(SpatialHash, SameCellSameBucket) {
  const std::vector<Vec3> pts{{0.11, 0.12, 0.13}, {0.14, 0.19, 0.11}, {5.0, 5.0, 5.0}};
  const SpatialHash hash(pts, 0.1);
  EXPECT_EQ(hash.cell_of(pts[0]), hash.cell_of(pts[1]));
  const auto b = hash.bucket(pts[0]);
  EXPECT_NE(std::find(b.begin(), b.end(), 0), b.end());
  EXPECT_NE(std::find(b.begin(), b.end(), 1), b.end());
}

TEST(SpatialHash, EveryPointStoredInItsOwnCell) {
  std::mt19937_64 rng(3);
  const auto pts = random_points(rng, 500, 2.0);
  const SpatialHash hash(pts, 0.17);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto b = hash.bucket(pts[i]);
    EXPECT_EQ(std::count(b.begin(), b.end(), static_cast<int>(i)), 1);
  }
}

TEST(SpatialHash, MatchesBruteForce) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const double cell = 0.05 + 0.01 * trial;
    const auto pts = random_points(rng, 1000, 1.0);
    const SpatialHash hash(pts, cell);
    for (double radius : {cell, 1.5 * cell, 2.0 * cell})
      for (int q = 0; q < 50; ++q) {
        const Vec3 p = q % 2 ? pts[q] : random_points(rng, 1, 1.2)[0];
        ASSERT_EQ(hash.query(p, radius), brute_force_neighbors(pts, p, radius));
      }
  }
}

TEST(SpatialHash, NegativeCoordinatesAndEmptyInput) {
  const std::vector<Vec3> pts{{-0.01, -0.01, -0.01}, {0.01, 0.01, 0.01}};
  const SpatialHash hash(pts, 0.1);
  EXPECT_EQ(hash.query(Vec3::Zero(), 0.05), (std::vector<int>{0, 1}));
  const SpatialHash empty(std::vector<Vec3>{}, 0.1);
  EXPECT_TRUE(empty.query(Vec3::Zero(), 0.1).empty());
  EXPECT_TRUE(empty.bucket(Vec3::Zero()).empty());
}

TEST(SpatialHash, ClosedBallAndRadiusLimit) {
  const std::vector<Vec3> pts{{0.5, 0.0, 0.0}, {0.0, 0.25, 0.0}};
  const SpatialHash hash(pts, 0.5);
  EXPECT_EQ(hash.query(Vec3::Zero(), 0.5), (std::vector<int>{0, 1}));
  EXPECT_EQ(hash.query(Vec3::Zero(), 0.25), (std::vector<int>{1}));
  EXPECT_THROW(hash.query(Vec3::Zero(), 1.01), ValidationError);
  EXPECT_THROW(SpatialHash(pts, 0.0), ValidationError);
}

TEST(Stretch, AtRestLengthNoCorrection) {
  SolverState s({Vec3(0, 0, 0), Vec3(1, 0, 0)});
  double lambda = 0;
  EXPECT_TRUE(project_stretch(s, {0, 1, 1.0, 0.0}, lambda, 1.0 / 60));
  EXPECT_EQ(s.positions[0], Vec3(0, 0, 0));
  EXPECT_EQ(s.positions[1], Vec3(1, 0, 0));
  EXPECT_EQ(lambda, 0.0);
}

TEST(Stretch, RigidLimitRestoresLengthSymmetrically) {
  SolverState s({Vec3(0, 0, 0), Vec3(1.4, 0, 0)});
  double lambda = 0;
  project_stretch(s, {0, 1, 1.0, 0.0}, lambda, 1.0 / 60);
  EXPECT_NEAR((s.positions[1] - s.positions[0]).norm(), 1.0, 1e-15);
  EXPECT_NEAR(s.positions[0].x(), 0.2, 1e-15);
  EXPECT_NEAR(s.positions[1].x(), 1.2, 1e-15);
}

TEST(Stretch, CompliantEquilibriumMatchesClosedForm) {
  // Vertex 1 pinned; for one free particle the stationary point solves
  // C = -alpha~ lambda with C = C0 + w lambda, so C = alpha~ C0 / (w + alpha~).
  const double dt = 1.0 / 60, compliance = 1e-4, rest = 1.0, stretched = 1.3;
  const double alpha = compliance / (dt * dt);
  SolverState s({Vec3(stretched, 0, 0), Vec3(0, 0, 0)}, {1.0, 0.0});
  double lambda = 0;
  const StretchConstraint c{0, 1, rest, compliance};
  for (int it = 0; it < 20; ++it) project_stretch(s, c, lambda, dt);
  const double C = s.positions[0].norm() - rest;
  EXPECT_NEAR(C, alpha * (stretched - rest) / (1.0 + alpha), 1e-12);
  EXPECT_NEAR(C + alpha * lambda, 0.0, 1e-8);
  EXPECT_EQ(s.positions[1], Vec3::Zero());
}

TEST(Stretch, CoincidentEndpointsSkipped) {
  SolverState s({Vec3(1, 1, 1), Vec3(1, 1, 1)});
  double lambda = 0;
  EXPECT_FALSE(project_stretch(s, {0, 1, 0.5, 0.0}, lambda, 1.0 / 60));
  EXPECT_EQ(s.positions[0], s.positions[1]);
}

TEST(BodyCollision, InactiveAndBoundaryCases) {
  const SdfGrid& sdf = sphere_grid();
  SolverState s({Vec3(0.6, 0, 0), Vec3(0, 0.55, 0)});
  EXPECT_FALSE(project_body_collision(s, 0, sdf, 0.002));
  EXPECT_EQ(s.positions[0], Vec3(0.6, 0, 0));
  const double level = sdf.value(s.positions[1]);
  EXPECT_FALSE(project_body_collision(s, 1, sdf, level));
  EXPECT_EQ(s.positions[1], Vec3(0, 0.55, 0));
}

TEST(BodyCollision, ProjectsInsideVertexToSurface) {
  const SdfGrid& sdf = sphere_grid();
  for (const Vec3& dir : {Vec3(1, 0, 0), Vec3(0, -1, 0), Vec3(1, 1, 1).normalized(), Vec3(-0.3, 0.2, 0.9).normalized()}) {
    SolverState s({0.4 * dir});
    const auto c = project_body_collision(s, 0, sdf, 0.0);
    ASSERT_TRUE(c);
    EXPECT_FALSE(c->fallback);
    EXPECT_NEAR(s.positions[0].norm(), 0.5, 1.5 * sdf.cell_size);
    EXPECT_GT(c->normal.dot(dir), std::cos(5.0 * std::numbers::pi / 180));
    EXPECT_NEAR(c->correction, (s.positions[0] - 0.4 * dir).norm(), 1e-12);
  }
}

TEST(BodyCollision, PinnedVertexIgnored) {
  SolverState s({Vec3(0.1, 0, 0)}, {0.0});
  EXPECT_FALSE(project_body_collision(s, 0, sphere_grid(), 0.0));
}

TEST(BodyCollision, ZeroGradientFallsBackToNearestOutsideNode) {
  SdfGrid g;
  g.dims = {12, 12, 12};
  g.cell_size = 0.1;
  g.values.assign(g.node_count(), -1.0);
  for (int k = 0; k < 12; ++k)
    for (int j = 0; j < 12; ++j) g.values[g.index(11, j, k)] = 1.0;
  SolverState s({Vec3(0.53, 0.52, 0.51)});
  ASSERT_TRUE(g.sample(s.positions[0]).gradient.isZero());
  const auto c = project_body_collision(s, 0, g, 0.0);
  ASSERT_TRUE(c);
  EXPECT_TRUE(c->fallback);
  EXPECT_GE(g.value(s.positions[0]), 0.0);
  EXPECT_NEAR(s.positions[0].x(), 1.1, 1e-12);
}

TEST(Friction, ZeroMuLeavesTangentialMotion) {
  SolverState s({Vec3(0.3, 0, 1)});
  s.prev_positions[0] = Vec3(0, 0, 0.9);
  Contact c{0, Vec3::UnitZ(), 0.05, false};
  project_friction(s, c, 0.0);
  EXPECT_EQ(s.positions[0], Vec3(0.3, 0, 1));
}

TEST(Friction, StaticRegimeCancelsSlide) {
  SolverState s({Vec3(0.01, 0.02, 1)});
  s.prev_positions[0] = Vec3(0, 0, 0.9);
  Contact c{0, Vec3::UnitZ(), 0.05, false};
  project_friction(s, c, 10.0);
  EXPECT_NEAR((s.positions[0] - Vec3(0, 0, 1)).norm(), 0.0, 1e-15);
}

TEST(Friction, KineticRegimeRemovesMuTimesCorrection) {
  const double corr = 0.01, mu = 0.3;
  const Vec3 slide = Vec3(0.6, 0.8, 0) * (10 * corr);
  SolverState s({Vec3(0, 0, 0.02) + slide});
  s.prev_positions[0] = Vec3::Zero();
  Contact c{0, Vec3::UnitZ(), corr, false};
  project_friction(s, c, mu);
  const Vec3 d = s.positions[0];
  EXPECT_NEAR(d.z(), 0.02, 1e-15);
  const Vec3 t(d.x(), d.y(), 0);
  EXPECT_NEAR(slide.norm() - t.norm(), mu * corr, 1e-9);
  EXPECT_NEAR(t.normalized().dot(slide.normalized()), 1.0, 1e-12);
}

TEST(SelfCollision, SinglePairClosedForm) {
  const double r = 0.1;
  SolverState s({Vec3(0, 0, 0), Vec3(0.05, 0, 0), Vec3(1, 0, 0), Vec3(1.2, 0, 0)});
  const std::vector<std::pair<int, int>> pairs{{0, 1}, {2, 3}};
  EXPECT_EQ(project_self_collision(s, pairs, r), 1);
  EXPECT_NEAR((s.positions[1] - s.positions[0]).norm(), r, 1e-15);
  EXPECT_NEAR(s.positions[0].x(), -0.025, 1e-15);
  EXPECT_EQ(s.positions[2], Vec3(1, 0, 0));
  EXPECT_EQ(s.positions[3], Vec3(1.2, 0, 0));
}

TEST(SelfCollision, CoincidentPairSeparatesAlongX) {
  SolverState s({Vec3(0.3, 0.3, 0.3), Vec3(0.3, 0.3, 0.3)});
  const std::vector<std::pair<int, int>> pairs{{0, 1}};
  project_self_collision(s, pairs, 0.2);
  EXPECT_NEAR(s.positions[0].x(), 0.2, 1e-15);
  EXPECT_NEAR(s.positions[1].x(), 0.4, 1e-15);
  EXPECT_EQ(s.positions[0].y(), 0.3);
}

TEST(SelfCollision, ThreeMutualOverlapsSettle) {
  const double r = 0.1;
  SolverState s({Vec3(0, 0, 0), Vec3(0.02, 0.01, 0), Vec3(0.01, 0.03, 0.005)});
  const std::vector<std::pair<int, int>> pairs{{0, 1}, {0, 2}, {1, 2}};
  for (int it = 0; it < 10; ++it) project_self_collision(s, pairs, r);
  for (const auto& [i, j] : pairs) EXPECT_GE((s.positions[i] - s.positions[j]).norm(), 0.95 * r);
}

TEST(SelfCollision, CandidatesSkipEdgeNeighboursAndAgreeAcrossSearchModes) {
  const TriMesh m = shapes::grid(12, 12, 1.0, 1.0);
  const auto adj = vertex_neighbors(m);
  const double h = 1.0 / 12;
  const auto hashed = self_collision_candidates(m.vertices, adj, h, 1.5 * h, NeighborSearch::spatial_hash);
  const auto brute = self_collision_candidates(m.vertices, adj, h, 1.5 * h, NeighborSearch::brute_force);
  EXPECT_EQ(hashed, brute);
  ASSERT_FALSE(hashed.empty());
  for (const auto& [i, j] : hashed) {
    EXPECT_LT(i, j);
    EXPECT_FALSE(std::binary_search(adj[i].begin(), adj[i].end(), j));
    EXPECT_LE((m.vertices[i] - m.vertices[j]).norm(), 1.5 * h);
  }
  // Each interior unit square contributes the one diagonal not in the mesh.
  EXPECT_EQ(hashed.size(), 12u * 12u);
}

TEST(Bending, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 20; ++t) {
    auto pts = random_points(rng, 4, 1.0);
    std::array<Vec3, 4> p{pts[0], pts[1], pts[2], pts[3]}, g;
    ASSERT_TRUE(dihedral_gradient(p, g));
    for (int k = 0; k < 4; ++k)
      for (int a = 0; a < 3; ++a) {
        auto hi = p, lo = p;
        hi[k][a] += 1e-6;
        lo[k][a] -= 1e-6;
        const double fd = (detail::signed_dihedral(hi[0], hi[1], hi[2], hi[3]) -
                           detail::signed_dihedral(lo[0], lo[1], lo[2], lo[3])) / 2e-6;
        EXPECT_NEAR(g[k][a], fd, 1e-6 * (1 + std::abs(fd)));
      }
  }
}

TEST(Bending, RestoresRestAngle) {
  TriMesh m;
  m.vertices = {Vec3(0, 1, 0), Vec3(0, -1, 0), Vec3(0, 0, 0), Vec3(1, 0, 0)};
  m.faces = {{0, 2, 3}, {1, 3, 2}};
  const auto constraints = make_bending_constraints(m, 0.0);
  ASSERT_EQ(constraints.size(), 1u);
  SolverState s(m.vertices);
  s.positions[0].z() += 0.3;
  double lambda = 0;
  for (int it = 0; it < 30; ++it) project_bending(s, constraints[0], lambda, 1.0 / 60);
  const auto& v = constraints[0].v;
  const double angle = detail::signed_dihedral(s.positions[v[0]], s.positions[v[1]], s.positions[v[2]], s.positions[v[3]]);
  EXPECT_NEAR(detail::wrap_angle(angle - constraints[0].rest_angle), 0.0, 1e-6);
}

TEST(SolverParamsTest, Validation) {
  SolverParams p;
  EXPECT_NO_THROW(p.validate());
  for (auto mutate : std::vector<std::function<void(SolverParams&)>>{
           [](SolverParams& q) { q.substeps = 0; }, [](SolverParams& q) { q.iterations = 0; },
           [](SolverParams& q) { q.dt = 0; }, [](SolverParams& q) { q.penetration_tol = -1; },
           [](SolverParams& q) { q.friction_mu = -0.1; }, [](SolverParams& q) { q.self_collision_radius = 0; },
           [](SolverParams& q) { q.damping = 1.5; }, [](SolverParams& q) { q.max_outer_loops = 0; }}) {
    SolverParams q;
    mutate(q);
    EXPECT_THROW(q.validate(), ValidationError);
  }
  SolverParams no_self;
  no_self.self_collision = false;
  no_self.self_collision_radius = 0;
  EXPECT_NO_THROW(no_self.validate());
}

TEST(Resolve, ProxyOutsideBodyIsUntouched) {
  const TriMesh body = shapes::icosphere(4, 0.5);
  const TriMesh proxy = sheet(20, 1.0, 0.7);
  const auto p = SolverParams::defaults_for(body, proxy);
  const auto r = resolve_penetration(proxy, sphere_grid(), p);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.loops, 1);
  EXPECT_EQ(r.positions, proxy.vertices);
  ASSERT_EQ(r.diagnostics.size(), 1u);
  EXPECT_EQ(r.diagnostics[0].active_contacts, 0);
}

TEST(Resolve, SheetOnSphere) {
  const TriMesh body = shapes::icosphere(4, 0.5);
  const SdfGrid sdf = build_sdf(body, 128);
  for (double depth : {0.02, 0.05}) {
    const TriMesh proxy = sheet(40, 1.2, 0.5 * (1 - depth));
    const auto p = SolverParams::defaults_for(body, proxy);
    ASSERT_GT(max_penetration(proxy.vertices, sdf), 0.8 * depth * 0.5);
    const auto r = resolve_penetration(proxy, sdf, p);
    EXPECT_TRUE(r.converged);
    EXPECT_LE(r.max_penetration, p.penetration_tol);
    EXPECT_LE(max_penetration(r.positions, sdf), p.penetration_tol);
    // Analytic sphere check, allowing for the icosphere's facet sagitta.
    for (const Vec3& x : r.positions) EXPECT_GE(x.norm(), 0.5 - p.penetration_tol - 5e-4);
    EXPECT_LE(rms_edge_strain(r.positions, proxy), 0.05);
    EXPECT_NEAR(rms_edge_strain(r.positions, proxy), r.rms_strain, 1e-12);
  }
}

TEST(Resolve, TubeOnCylinderStaysSimple) {
  const TriMesh body = shapes::cylinder(0.3, -0.5, 0.5, 96, 32, true);
  const SdfGrid sdf = build_sdf(body, 128);
  for (double interference : {0.02, 0.05}) {
    const TriMesh proxy = shapes::cylinder(0.3 * (1 - interference), -0.3, 0.3, 64, 24, false);
    const auto p = SolverParams::defaults_for(body, proxy);
    const auto r = resolve_penetration(proxy, sdf, p);
    EXPECT_TRUE(r.converged);
    EXPECT_LE(max_penetration(r.positions, sdf), p.penetration_tol);
    for (const Vec3& x : r.positions) EXPECT_GE(std::hypot(x.x(), x.z()), 0.3 - p.penetration_tol - 2e-4);
    EXPECT_LE(rms_edge_strain(r.positions, proxy), 0.05);
    const auto before = face_normals(proxy.vertices, proxy), after = face_normals(r.positions, proxy);
    for (std::size_t f = 0; f < before.size(); ++f) ASSERT_GT(before[f].dot(after[f]), 0.0) << "face " << f;
  }
}

TEST(Resolve, PenetrationNonIncreasingAcrossLoops) {
  // A sheet cutting 40% into the sphere with a single projection per loop
  // leaves residual penetration after the first loop.
  const TriMesh body = shapes::icosphere(4, 0.5);
  const TriMesh proxy = sheet(30, 1.2, 0.3);
  auto p = SolverParams::defaults_for(body, proxy);
  p.substeps = 1;
  p.iterations = 1;
  const auto r = resolve_penetration(proxy, sphere_grid(), p);
  EXPECT_TRUE(r.converged);
  EXPECT_GT(r.loops, 1);
  EXPECT_EQ(static_cast<int>(r.diagnostics.size()), r.loops);
  for (std::size_t k = 1; k < r.diagnostics.size(); ++k)
    EXPECT_LE(r.diagnostics[k].max_pen, r.diagnostics[k - 1].max_pen + p.penetration_tol / 10);
}

TEST(Resolve, DeterministicAndSearchModeInvariant) {
  // 45 x 45 = 2025 vertices with a self-collision radius large enough that
  // cross diagonals are active pairs.
  const TriMesh body = shapes::icosphere(4, 0.5);
  const TriMesh proxy = sheet(44, 1.2, 0.47);
  auto p = SolverParams::defaults_for(body, proxy);
  p.self_collision_radius = 1.5 * mean_edge_length(proxy);
  const auto a = resolve_penetration(proxy, sphere_grid(), p);
  const auto b = resolve_penetration(proxy, sphere_grid(), p);
  p.neighbor_search = NeighborSearch::brute_force;
  const auto c = resolve_penetration(proxy, sphere_grid(), p);
  EXPECT_EQ(a.positions, b.positions);
  EXPECT_EQ(a.positions, c.positions);
  ASSERT_EQ(a.diagnostics.size(), c.diagnostics.size());
  for (std::size_t k = 0; k < a.diagnostics.size(); ++k) {
    EXPECT_EQ(a.diagnostics[k].max_pen, c.diagnostics[k].max_pen);
    EXPECT_EQ(a.diagnostics[k].rms_strain, c.diagnostics[k].rms_strain);
  }
}

TEST(Resolve, NonConvergenceReturnsBestIterate) {
  // The pinned center vertex sits inside the sphere and can never leave.
  const TriMesh body = shapes::icosphere(4, 0.5);
  const TriMesh proxy = sheet(30, 1.2, 0.45);
  std::vector<double> w(proxy.vertices.size(), 1.0);
  const int center = 15 * 31 + 15;
  w[center] = 0.0;
  auto p = SolverParams::defaults_for(body, proxy);
  p.max_outer_loops = 3;
  const auto r = resolve_penetration(proxy, sphere_grid(), p, w);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.loops, 3);
  EXPECT_EQ(r.positions[center], proxy.vertices[center]);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& d : r.diagnostics) best = std::min(best, d.max_pen);
  EXPECT_EQ(r.max_penetration, best);
  EXPECT_NEAR(r.max_penetration, -sphere_grid().value(proxy.vertices[center]), 1e-12);
}

TEST(Resolve, PinnedVerticesStayPut) {
  const TriMesh body = shapes::icosphere(4, 0.5);
  const TriMesh proxy = sheet(20, 1.2, 0.48);
  std::vector<double> w(proxy.vertices.size(), 1.0);
  w[0] = w[20] = 0.0;
  const auto r = resolve_penetration(proxy, sphere_grid(), SolverParams::defaults_for(body, proxy), w);
  EXPECT_EQ(r.positions[0], proxy.vertices[0]);
  EXPECT_EQ(r.positions[20], proxy.vertices[20]);
}

TEST(Resolve, AlternativeRestStateAndBendingOptions) {
  const TriMesh body = shapes::icosphere(4, 0.5);
  const TriMesh proxy = sheet(24, 1.2, 0.475);
  auto p = SolverParams::defaults_for(body, proxy);
  p.substeps = 1;
  p.iterations = 2;
  p.rewrite_rest_lengths = true;
  p.bending = true;
  p.bending_compliance = 1e-6;
  const auto r = resolve_penetration(proxy, sphere_grid(), p);
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.max_penetration, p.penetration_tol);
}

TEST(Resolve, RejectsBadInputs) {
  const TriMesh body = shapes::icosphere(2, 0.5);
  TriMesh proxy = sheet(4, 1.0, 0.7);
  auto p = SolverParams::defaults_for(body, proxy);
  EXPECT_THROW(resolve_penetration(proxy, sphere_grid(), p, std::vector<double>(3, 1.0)), ValidationError);
  EXPECT_THROW(resolve_penetration(proxy, sphere_grid(), p, std::vector<double>(proxy.vertices.size(), -1.0)),
               ValidationError);
  p.dt = 0;
  EXPECT_THROW(resolve_penetration(proxy, sphere_grid(), p), ValidationError);
}
