// Acceptance gate: prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.
//
//   bodyfit_acceptance [criterion numbers...]
//   bodyfit_acceptance --write-golden <path>

#include "bodyfit/image_io.hpp"
#include "bodyfit/pipeline.hpp"
#include "bodyfit/spatial_hash.hpp"
#include "oracles.hpp"
#include "pipeline_fixture.hpp"
#include "test_util.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>

using namespace bodyfit;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------- 1

Outcome rotation_math() {
  std::mt19937_64 rng(1);
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 w = fixtures::random_axis_angle(rng, std::numbers::pi);
    worst = std::max(worst, (exp_so3(w) - oracles::exp_series(w)).cwiseAbs().maxCoeff());
  }
  const double elapsed = seconds_since(t0);
  const bool identity = exp_so3(Vec3::Zero()) == Mat3::Identity();
  return {worst < 1e-10 && identity && elapsed < 1.0,
          fmt("max |exp - series| = %.2e (< 1e-10), exp(0) == I: %s, %.3f s (< 1 s)", worst, identity ? "yes" : "no",
              elapsed)};
}

// ---------------------------------------------------------------- 2, 3

struct Trial {
  Sim3Params truth;
  FitResult fit;
  double scale_err = 0, rot_err_deg = 0, trans_err = 0;  // translation as a fraction of D
  double truth_hard_loss = 0;
  double seconds = 0;
};

const std::vector<Trial>& recovery_trials() {
  static const std::vector<Trial> trials = [] {
    std::vector<Trial> out;
    std::mt19937_64 rng(2024);
    const TriMesh asset = fixtures::asymmetric_fixture();
    const double asset_diag = aabb(asset).diagonal();
    for (int t = 0; t < 20; ++t) {
      Trial trial;
      std::uniform_real_distribution<double> scale(0.7, 1.3);
      trial.truth = {scale(rng), fixtures::random_axis_angle(rng, 20.0 * std::numbers::pi / 180.0), Vec3::Zero()};
      const Vec3 dir = fixtures::random_vec(rng, -1, 1).normalized();
      trial.truth.t = dir * std::uniform_real_distribution<double>(0, 0.2 * asset_diag)(rng);

      const TriMesh target = apply_sim3(trial.truth, asset);
      const auto cams = body_view_cameras(target, 256);
      std::vector<SilhouetteImage> sils;
      for (const auto& c : cams) sils.push_back(rasterize_silhouette(target, c));
      FitConfig cfg;
      cfg.length_scale = aabb(target).diagonal();

      const auto t0 = Clock::now();
      trial.fit = fit_sim3(asset, sils, cams, cfg);
      trial.seconds = seconds_since(t0);
      trial.scale_err = std::abs(trial.fit.params.s / trial.truth.s - 1.0);
      trial.rot_err_deg = rotation_angle_between(trial.fit.params.rotation(), trial.truth.rotation()) * 180.0 /
                          std::numbers::pi;
      trial.trans_err = (trial.fit.params.t - trial.truth.t).norm() / cfg.length_scale;
      SilhouetteRenderer renderer(asset.vertices, asset.faces, cams);
      trial.truth_hard_loss = silhouette_loss(renderer.render_hard(trial.truth), sils);
      out.push_back(std::move(trial));
    }
    return out;
  }();
  return trials;
}

Outcome sim3_recovery() {
  int recovered = 0;
  double slowest = 0, worst_s = 0, worst_r = 0, worst_t = 0;
  for (const Trial& t : recovery_trials()) {
    recovered += t.scale_err < 0.02 && t.rot_err_deg < 2.0 && t.trans_err < 0.02;
    slowest = std::max(slowest, t.seconds);
    worst_s = std::max(worst_s, t.scale_err);
    worst_r = std::max(worst_r, t.rot_err_deg);
    worst_t = std::max(worst_t, t.trans_err);
  }
  return {recovered >= 18 && slowest < 60.0,
          fmt("%d/20 recovered (>= 18); worst scale %.2f%%, rotation %.2f deg, translation %.2f%% D; slowest trial "
              "%.1f s (< 60 s)",
              recovered, 100 * worst_s, worst_r, 100 * worst_t, slowest)};
}

Outcome silhouette_loss_at_truth() {
  double worst_truth = 0, worst_fit = 0;
  bool monotone = true;
  for (const Trial& t : recovery_trials()) {
    worst_truth = std::max(worst_truth, t.truth_hard_loss);
    worst_fit = std::max(worst_fit, t.fit.final_loss_hard);
    double running = std::numeric_limits<double>::infinity();
    for (double l : t.fit.loss_history) {
      const double next = std::min(running, l);
      monotone &= std::isfinite(l) && next <= running;
      running = next;
    }
    monotone &= !t.fit.loss_history.empty();
  }
  return {worst_truth < 1e-3 && worst_fit < 1e-3 && monotone,
          fmt("hard loss of true transform max %.2e, of fitted optimum max %.2e (< 1e-3); running minimum monotone: "
              "%s",
              worst_truth, worst_fit, monotone ? "yes" : "no")};
}

// ---------------------------------------------------------------- 4

Outcome sdf_accuracy() {
  const TriMesh sphere = shapes::icosphere(5, 0.5);
  const SdfGrid g = build_sdf(sphere, 128);
  const double h = g.cell_size;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> band(-3 * h, 3 * h);
  double worst = 0;
  int sign_agree = 0, sign_total = 0;
  for (int i = 0; i < 10000; ++i) {
    const Vec3 dir = Vec3(normal(rng), normal(rng), normal(rng)).normalized();
    const Vec3 p = dir * (0.5 + band(rng));
    worst = std::max(worst, std::abs(g.value(p) - (p.norm() - 0.5)));
    // Sign against the mesh itself; points closer than the facet sagitta
    // are too close for the analytic sphere to decide.
    if (i % 4 == 0) {
      sign_agree += (g.value(p) < 0) == oracles::inside_by_parity(sphere, p);
      ++sign_total;
    }
  }
  const Aabb b = g.bounds();
  for (int i = 0; i < 2500; ++i) {
    Vec3 p;
    for (int a = 0; a < 3; ++a) p[a] = std::uniform_real_distribution<double>(b.min[a], b.max[a])(rng);
    sign_agree += (g.value(p) < 0) == oracles::inside_by_parity(sphere, p);
    ++sign_total;
  }
  const double agreement = static_cast<double>(sign_agree) / sign_total;
  return {worst <= h && agreement >= 0.999,
          fmt("max |sdf - analytic| = %.2e vs cell %.2e over 10000 band probes; sign agreement %.4f%% of %d (>= 99.9%%)",
              worst, h, 100 * agreement, sign_total)};
}

// ---------------------------------------------------------------- 5

Outcome penetration_resolution() {
  struct Case {
    std::string name;
    TriMesh body, proxy;
  };
  std::vector<Case> cases;
  for (double d : {0.02, 0.05}) {
    cases.push_back({fmt("sheet/sphere %.0f%%", 100 * d), shapes::icosphere(4, 0.5), fixtures::sheet(40, 1.2, 0.5 * (1 - d))});
    cases.push_back({fmt("tube/cylinder %.0f%%", 100 * d), shapes::cylinder(0.3, -0.5, 0.5, 96, 32, true),
                     shapes::cylinder(0.3 * (1 - d), -0.3, 0.3, 64, 24, false)});
  }
  bool pass = true;
  std::string detail;
  for (const auto& c : cases) {
    const auto t0 = Clock::now();
    const SdfGrid sdf = build_sdf(c.body, 128);
    const auto params = SolverParams::defaults_for(c.body, c.proxy);
    const auto r = resolve_penetration(c.proxy, sdf, params);
    const double elapsed = seconds_since(t0);
    const double pen = max_penetration(r.positions, sdf);
    const double strain = oracles::rms_edge_strain(r.positions, c.proxy);
    const bool ok = pen <= params.penetration_tol && strain <= 0.05 && r.loops <= 200 && elapsed < 30.0;
    pass &= ok;
    detail += fmt("%s%s: pen %.1e (tol %.1e), strain %.2f%%, %d loops, %.1f s", detail.empty() ? "" : "; ",
                  c.name.c_str(), pen, params.penetration_tol, 100 * strain, r.loops, elapsed);
  }
  return {pass, detail};
}

// ---------------------------------------------------------------- 6

Outcome spatial_hash_exactness() {
  std::mt19937_64 rng(6);
  int exact = 0;
  for (int config = 0; config < 100; ++config) {
    const auto pts = fixtures::random_points(rng, 1000, 0.5);
    const double cell = std::uniform_real_distribution<double>(0.03, 0.2)(rng);
    const double radius = std::uniform_real_distribution<double>(0.25, 2.0)(rng) * cell;
    const SpatialHash hash(pts, cell);
    bool same = true;
    for (int q = 0; q < 50 && same; ++q) {
      const Vec3 p = q % 2 ? pts[(q * 37) % pts.size()] : fixtures::random_vec(rng, -0.6, 0.6);
      std::vector<int> brute;
      for (std::size_t i = 0; i < pts.size(); ++i)
        if ((pts[i] - p).squaredNorm() <= radius * radius) brute.push_back(static_cast<int>(i));
      same = hash.query(p, radius) == brute;
    }
    exact += same;
  }

  const TriMesh body = shapes::icosphere(4, 0.5);
  const TriMesh proxy = fixtures::sheet(44, 1.2, 0.47);
  auto params = SolverParams::defaults_for(body, proxy);
  params.self_collision_radius = 1.5 * mean_edge_length(proxy);
  const SdfGrid sdf = build_sdf(body, 64);
  const auto with_hash = resolve_penetration(proxy, sdf, params);
  params.neighbor_search = NeighborSearch::brute_force;
  const auto with_brute = resolve_penetration(proxy, sdf, params);
  const bool bitwise = with_hash.positions == with_brute.positions;
  return {exact == 100 && bitwise,
          fmt("%d/100 configurations exact; solver on %zu vertices bitwise identical: %s", exact,
              proxy.vertices.size(), bitwise ? "yes" : "no")};
}

// ---------------------------------------------------------------- 7

Outcome proxy_pipeline() {
  const TriMesh outer = shapes::icosphere(4, 0.5), inner = shapes::icosphere(3, 0.3);
  const std::vector<TriMesh> parts{outer, inner};
  const TriMesh spheres = merge_meshes(parts);
  const auto seen = visible_faces(spheres, make_cull_rig(spheres, 26, 1024));
  int inner_seen = 0;
  for (std::size_t f = outer.faces.size(); f < spheres.faces.size(); ++f) inner_seen += seen[f];

  const TriMesh sphere = shapes::icosphere(5, 1.0);
  const auto t0 = Clock::now();
  const auto r = cvt_simplify(sphere, 400);
  const double elapsed = seconds_since(t0);
  double sum = 0;
  for (const Vec3& v : r.mesh.vertices) sum += std::pow(v.norm() - 1.0, 2);
  const double rms = std::sqrt(sum / r.mesh.vertices.size());
  const auto n = r.mesh.vertices.size();
  const bool manifold = is_manifold(r.mesh);
  return {inner_seen == 0 && n >= 380 && n <= 420 && manifold && rms < 0.02 && elapsed < 20.0,
          fmt("inner sphere faces visible: %d; CVT of %zu-vertex sphere: %zu vertices, manifold %s, RMS deviation "
              "%.2f%% of radius, %.2f s",
              inner_seen, sphere.vertices.size(), n, manifold ? "yes" : "no", 100 * rms, elapsed)};
}

// ---------------------------------------------------------------- 8

Outcome deformation_transfer() {
  const TriMesh asset = fixtures::asymmetric_fixture();
  const ProxySkin skin = build_proxy(asset, asset, 150, 26, 256);
  const Vec3 d(0.0731, -0.0219, 0.1544);
  std::vector<Vec3> moved = skin.rest_proxy_vertices;
  for (auto& p : moved) p += d;
  const TriMesh out = propagate_deformation(skin, moved, asset);
  double worst = 0;
  for (std::size_t v = 0; v < asset.vertices.size(); ++v)
    worst = std::max(worst, (out.vertices[v] - asset.vertices[v] - d).norm());
  return {worst <= 1e-9, fmt("max deviation from uniform translation %.2e over %zu vertices (<= 1e-9)", worst,
                             asset.vertices.size())};
}

// ---------------------------------------------------------------- 9

const int kGoldenTile = 128;

fs::path golden_path() { return fs::path(BODYFIT_TEST_DATA_DIR) / "golden_body_xyz.png"; }

XyzMap golden_fixture_frame() {
  const TriMesh body = shapes::mannequin(24);
  return render_body_frames(body, body_view_cameras(body, kGoldenTile)).xyz;
}

Outcome rendering_conventions() {
  fixtures::TempDir dir("golden");
  save_xyz_map(golden_fixture_frame(), dir / "frame.png");
  const auto rendered = detail::read_png(dir / "frame.png");
  const auto golden = detail::read_png(golden_path());
  const bool same_shape = rendered.width == golden.width && rendered.height == golden.height &&
                          rendered.channels == golden.channels && rendered.bit_depth == 16 && golden.bit_depth == 16;
  std::size_t differing = 0;
  if (same_shape)
    for (std::size_t i = 0; i < golden.samples.size(); ++i) differing += rendered.samples[i] != golden.samples[i];

  const TriMesh fixture = fixtures::asymmetric_fixture();
  const auto cams = four_view_cameras(0.8, 256);
  const auto front = rasterize_silhouette(fixture, cams[0]);
  const auto back = mirror_horizontal(rasterize_silhouette(fixture, cams[2]));
  const int n = cams[0].image_size;
  int mismatches = 0, outside_band = 0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      if (front.at(x, y) == back.at(x, y)) continue;
      ++mismatches;
      bool near_boundary = false;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = std::clamp(x + dx, 0, n - 1), yy = std::clamp(y + dy, 0, n - 1);
          near_boundary |= front.at(xx, yy) != front.at(x, y);
        }
      outside_band += !near_boundary;
    }
  return {same_shape && differing == 0 && outside_band == 0,
          fmt("%dx%d 16-bit frame vs golden: %zu differing samples; back/front mirror mismatches %d, %d outside the "
              "1-pixel band",
              rendered.width, rendered.height, same_shape ? differing : golden.samples.size(), mismatches,
              outside_band)};
}

// ---------------------------------------------------------------- 10

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(BODYFIT_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
  fixtures::TempDir dir("determinism");
  const auto fx = fixtures::write_pipeline_fixture(dir.path());
  std::vector<nlohmann::json> manifests;
  for (const char* out : {"run1", "run2"}) {
    const int code = run_cli("pipeline -q --config " + fx.config.string() + " --out " + (dir / out).string(),
                             dir / "log.txt");
    if (code != 0) return {false, fmt("pipeline run exited with %d", code)};
    std::ifstream in(dir / out / "manifest.json");
    manifests.push_back(nlohmann::json::parse(in));
  }
  int files = 0, equal = 0;
  const auto& a = manifests[0]["stages"];
  const auto& b = manifests[1]["stages"];
  for (std::size_t s = 0; s < a.size() && s < b.size(); ++s)
    for (const auto& [name, hash] : a[s]["outputs"].items()) {
      ++files;
      equal += b[s]["outputs"].contains(name) && b[s]["outputs"][name] == hash;
    }
  return {a.size() == 4 && b.size() == 4 && files > 0 && equal == files,
          fmt("%zu stages; %d/%d output hashes identical across two runs", a.size(), equal, files)};
}

}  // namespace

int main(int argc, char** argv) {
  log_level() = LogLevel::warn;
  if (argc == 3 && std::string(argv[1]) == "--write-golden") {
    save_xyz_map(golden_fixture_frame(), argv[2]);
    std::cout << "wrote " << argv[2] << '\n';
    return 0;
  }

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"rotation math", rotation_math},
      {"Sim(3) recovery", sim3_recovery},
      {"silhouette loss at ground truth", silhouette_loss_at_truth},
      {"SDF accuracy", sdf_accuracy},
      {"penetration resolution", penetration_resolution},
      {"spatial-hash exactness", spatial_hash_exactness},
      {"proxy pipeline", proxy_pipeline},
      {"deformation transfer", deformation_transfer},
      {"rendering conventions", rendering_conventions},
      {"determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!selected.empty() && !selected.contains(id)) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[k].first << "): " << o.detail
              << fmt(" [%.1f s]", seconds_since(t0)) << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
