#include "bodyfit/pipeline.hpp"

#include "bodyfit/image_io.hpp"
#include "bodyfit/mesh_io.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <fstream>
#include <iomanip>
#include <memory>
#include <set>
#include <sstream>

namespace bodyfit {

NLOHMANN_JSON_SERIALIZE_ENUM(NeighborSearch, {{NeighborSearch::spatial_hash, "spatial_hash"},
                                              {NeighborSearch::brute_force, "brute_force"}})

}  // namespace bodyfit

namespace bodyfit::pipeline {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!allowed.contains(key)) throw ValidationError("unknown key '" + key + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

template <class T>
void read(const json& j, const char* key, std::optional<T>& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

fs::path resolve_path(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void require_file(const fs::path& path, const std::string& what) {
  if (path.empty()) throw ValidationError(what + " is not set");
  if (!fs::is_regular_file(path)) throw ValidationError(what + " not found: " + path.string());
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

// Reads the configured silhouettes as four tiles in view order.
std::vector<SilhouetteImage> load_input_silhouettes(const RunConfig& config) {
  std::vector<SilhouetteImage> tiles;
  if (config.input_silhouettes.size() == 1) {
    const SilhouetteImage frame = load_silhouette(config.input_silhouettes[0]);
    if (frame.width % 2 || frame.height % 2)
      throw ValidationError("tiled silhouette frame dimensions must be divisible by 2");
    const auto split = untile_2x2(frame);
    tiles.assign(split.begin(), split.end());
  } else {
    for (const auto& p : config.input_silhouettes) tiles.push_back(load_silhouette(p));
  }
  for (const auto& t : tiles) {
    if (t.width != t.height) throw ValidationError("silhouette tiles must be square");
    if (!t.same_shape(tiles[0])) throw ValidationError("silhouette tiles differ in size");
  }
  if (tiles[0].width != config.camera.image_size)
    throw ValidationError("silhouette tiles are " + std::to_string(tiles[0].width) + " px but camera.image_size is " +
                          std::to_string(config.camera.image_size));
  return tiles;
}

fs::path fitted_asset_path(const RunConfig& c) { return c.fitted_asset.value_or(stage_files(c).fitted_asset); }
fs::path proxy_mesh_path(const RunConfig& c) { return c.proxy_mesh.value_or(stage_files(c).proxy_mesh); }
fs::path proxy_weights_path(const RunConfig& c) { return c.proxy_weights.value_or(stage_files(c).proxy_weights); }

class StageTimer {
 public:
  explicit StageTimer(StageRecord& record) : record_(record), start_(std::chrono::steady_clock::now()) {}
  ~StageTimer() {
    record_.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  StageRecord& record_;
  std::chrono::steady_clock::time_point start_;
};

void ensure_output_dir(const RunConfig& config) {
  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  if (ec) throw IoError("cannot create output directory " + config.output_dir.string() + ": " + ec.message());
}

}  // namespace

std::string stage_name(Stage stage) {
  switch (stage) {
    case Stage::render_body: return "render-body";
    case Stage::fit_sim3: return "fit-sim3";
    case Stage::make_proxy: return "make-proxy";
    case Stage::resolve: return "resolve";
  }
  return "unknown";
}

SolverParams SolverSettings::resolve_for(const TriMesh& body, const TriMesh& proxy) const {
  SolverParams p = params;
  const SolverParams scaled = SolverParams::defaults_for(body, proxy);
  p.collision_margin = collision_margin.value_or(scaled.collision_margin);
  p.penetration_tol = penetration_tol.value_or(scaled.penetration_tol);
  p.self_collision_radius = self_collision_radius.value_or(scaled.self_collision_radius);
  p.validate();
  return p;
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  RunConfig c;
  try {
    check_keys(j,
               {"body_mesh", "asset_mesh", "input_silhouettes", "output_dir", "seed", "camera", "fit", "proxy", "sdf",
                "solver", "fitted_asset", "proxy_mesh", "proxy_weights"},
               "config");
    std::string s;
    if (read(j, "body_mesh", s), !s.empty()) c.body_mesh = resolve_path(base_dir, s);
    s.clear();
    if (read(j, "asset_mesh", s), !s.empty()) c.asset_mesh = resolve_path(base_dir, s);
    s.clear();
    if (read(j, "output_dir", s), !s.empty()) c.output_dir = resolve_path(base_dir, s);
    if (auto it = j.find("input_silhouettes"); it != j.end() && !it->is_null()) {
      const auto list = it->is_string() ? std::vector<std::string>{it->get<std::string>()}
                                        : it->get<std::vector<std::string>>();
      for (const auto& p : list) c.input_silhouettes.push_back(resolve_path(base_dir, p));
    }
    for (auto [key, target] : {std::pair{"fitted_asset", &c.fitted_asset}, std::pair{"proxy_mesh", &c.proxy_mesh},
                               std::pair{"proxy_weights", &c.proxy_weights}}) {
      std::optional<std::string> p;
      read(j, key, p);
      if (p) *target = resolve_path(base_dir, *p);
    }
    read(j, "seed", c.seed);

    if (auto it = j.find("camera"); it != j.end()) {
      check_keys(*it, {"image_size", "margin"}, "camera");
      read(*it, "image_size", c.camera.image_size);
      read(*it, "margin", c.camera.margin);
    }
    if (auto it = j.find("fit"); it != j.end()) {
      const json& f = *it;
      check_keys(f,
                 {"learning_rate", "translation_learning_rate", "adam_beta1", "adam_beta2", "adam_epsilon", "max_iters",
                  "fd_step_scale", "fd_step_rotation", "fd_step_translation", "sharpness_coarse", "sharpness_fine",
                  "fine_lr_scale", "plateau_factor", "plateau_decays", "convergence_tol", "convergence_window",
                  "length_scale", "centroid_init"},
                 "fit");
      FitConfig& fc = c.fit;
      read(f, "learning_rate", fc.learning_rate);
      read(f, "translation_learning_rate", fc.translation_learning_rate);
      read(f, "adam_beta1", fc.adam_beta1);
      read(f, "adam_beta2", fc.adam_beta2);
      read(f, "adam_epsilon", fc.adam_epsilon);
      read(f, "max_iters", fc.max_iters);
      read(f, "fd_step_scale", fc.fd_step_scale);
      read(f, "fd_step_rotation", fc.fd_step_rotation);
      read(f, "fd_step_translation", fc.fd_step_translation);
      read(f, "sharpness_coarse", fc.sharpness_coarse);
      read(f, "sharpness_fine", fc.sharpness_fine);
      read(f, "fine_lr_scale", fc.fine_lr_scale);
      read(f, "plateau_factor", fc.plateau_factor);
      read(f, "plateau_decays", fc.plateau_decays);
      read(f, "convergence_tol", fc.convergence_tol);
      read(f, "convergence_window", fc.convergence_window);
      read(f, "length_scale", fc.length_scale);
      read(f, "centroid_init", fc.centroid_init);
    }
    if (auto it = j.find("proxy"); it != j.end()) {
      check_keys(*it, {"target_clusters", "rig_views", "rig_resolution", "nearest"}, "proxy");
      read(*it, "target_clusters", c.proxy.target_clusters);
      read(*it, "rig_views", c.proxy.rig_views);
      read(*it, "rig_resolution", c.proxy.rig_resolution);
      read(*it, "nearest", c.proxy.nearest);
    }
    if (auto it = j.find("sdf"); it != j.end()) {
      check_keys(*it, {"resolution", "padding", "band", "winding_threshold"}, "sdf");
      read(*it, "resolution", c.sdf.resolution);
      read(*it, "padding", c.sdf.padding);
      read(*it, "band", c.sdf.band);
      read(*it, "winding_threshold", c.sdf.winding_threshold);
    }
    if (auto it = j.find("solver"); it != j.end()) {
      const json& sj = *it;
      check_keys(sj,
                 {"substeps", "iterations", "dt", "collision_margin", "friction_mu", "self_collision_radius",
                  "max_outer_loops", "penetration_tol", "stretch_compliance", "damping", "self_collision",
                  "rewrite_rest_lengths", "stabilize_contacts", "bending", "bending_compliance", "neighbor_search"},
                 "solver");
      SolverParams& sp = c.solver.params;
      read(sj, "substeps", sp.substeps);
      read(sj, "iterations", sp.iterations);
      read(sj, "dt", sp.dt);
      read(sj, "friction_mu", sp.friction_mu);
      read(sj, "max_outer_loops", sp.max_outer_loops);
      read(sj, "stretch_compliance", sp.stretch_compliance);
      read(sj, "damping", sp.damping);
      read(sj, "self_collision", sp.self_collision);
      read(sj, "rewrite_rest_lengths", sp.rewrite_rest_lengths);
      read(sj, "stabilize_contacts", sp.stabilize_contacts);
      read(sj, "bending", sp.bending);
      read(sj, "bending_compliance", sp.bending_compliance);
      if (auto ns = sj.find("neighbor_search"); ns != sj.end()) {
        const auto name = ns->get<std::string>();
        if (name != "spatial_hash" && name != "brute_force")
          throw ValidationError("solver.neighbor_search must be 'spatial_hash' or 'brute_force'");
        sp.neighbor_search = ns->get<NeighborSearch>();
      }
      read(sj, "collision_margin", c.solver.collision_margin);
      read(sj, "penetration_tol", c.solver.penetration_tol);
      read(sj, "self_collision_radius", c.solver.self_collision_radius);
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

json RunConfig::to_json() const {
  json j;
  j["body_mesh"] = body_mesh.string();
  j["asset_mesh"] = asset_mesh.string();
  j["input_silhouettes"] = json::array();
  for (const auto& p : input_silhouettes) j["input_silhouettes"].push_back(p.string());
  j["output_dir"] = output_dir.string();
  j["seed"] = seed;
  j["camera"] = {{"image_size", camera.image_size}, {"margin", camera.margin}};
  j["fit"] = {{"learning_rate", fit.learning_rate},
              {"translation_learning_rate", fit.translation_learning_rate},
              {"adam_beta1", fit.adam_beta1},
              {"adam_beta2", fit.adam_beta2},
              {"adam_epsilon", fit.adam_epsilon},
              {"max_iters", fit.max_iters},
              {"fd_step_scale", fit.fd_step_scale},
              {"fd_step_rotation", fit.fd_step_rotation},
              {"fd_step_translation", fit.fd_step_translation},
              {"sharpness_coarse", fit.sharpness_coarse},
              {"sharpness_fine", fit.sharpness_fine},
              {"fine_lr_scale", fit.fine_lr_scale},
              {"plateau_factor", fit.plateau_factor},
              {"plateau_decays", fit.plateau_decays},
              {"convergence_tol", fit.convergence_tol},
              {"convergence_window", fit.convergence_window},
              {"length_scale", fit.length_scale},
              {"centroid_init", fit.centroid_init}};
  j["proxy"] = {{"target_clusters", proxy.target_clusters},
                {"rig_views", proxy.rig_views},
                {"rig_resolution", proxy.rig_resolution},
                {"nearest", proxy.nearest}};
  j["sdf"] = {{"resolution", sdf.resolution},
              {"padding", sdf.padding},
              {"band", sdf.band},
              {"winding_threshold", sdf.winding_threshold}};
  const SolverParams& sp = solver.params;
  json sj = {{"substeps", sp.substeps},
             {"iterations", sp.iterations},
             {"dt", sp.dt},
             {"friction_mu", sp.friction_mu},
             {"max_outer_loops", sp.max_outer_loops},
             {"stretch_compliance", sp.stretch_compliance},
             {"damping", sp.damping},
             {"self_collision", sp.self_collision},
             {"rewrite_rest_lengths", sp.rewrite_rest_lengths},
             {"stabilize_contacts", sp.stabilize_contacts},
             {"bending", sp.bending},
             {"bending_compliance", sp.bending_compliance},
             {"neighbor_search", sp.neighbor_search}};
  sj["collision_margin"] = solver.collision_margin ? json(*solver.collision_margin) : json(nullptr);
  sj["penetration_tol"] = solver.penetration_tol ? json(*solver.penetration_tol) : json(nullptr);
  sj["self_collision_radius"] = solver.self_collision_radius ? json(*solver.self_collision_radius) : json(nullptr);
  j["solver"] = sj;
  if (fitted_asset) j["fitted_asset"] = fitted_asset->string();
  if (proxy_mesh) j["proxy_mesh"] = proxy_mesh->string();
  if (proxy_weights) j["proxy_weights"] = proxy_weights->string();
  return j;
}

StageFiles stage_files(const RunConfig& config) {
  const fs::path& d = config.output_dir;
  StageFiles f;
  f.body_xyz = d / "body_xyz.png";
  f.body_silhouette = d / "body_silhouette.png";
  f.fit_result = d / "fit_result.json";
  f.fitted_asset = d / "fitted_asset.ply";
  f.proxy_mesh = d / "proxy.ply";
  f.proxy_weights = d / "proxy_weights.json";
  f.sdf = d / "body_sdf.bin";
  f.resolved_proxy = d / "resolved_proxy.ply";
  f.final_asset = d / "final_asset.ply";
  f.diagnostics = d / "resolve_diagnostics.jsonl";
  f.report = d / "resolve_report.json";
  f.manifest = d / "manifest.json";
  return f;
}

void validate(const RunConfig& config, Stage stage, bool chained) {
  if (config.output_dir.empty()) throw ValidationError("output directory is not set (use --out or output_dir)");
  if (fs::exists(config.output_dir) && !fs::is_directory(config.output_dir))
    throw ValidationError("output path exists and is not a directory: " + config.output_dir.string());
  require_file(config.body_mesh, "body mesh");

  switch (stage) {
    case Stage::render_body:
      if (config.camera.image_size < 8 || config.camera.image_size > 8192)
        throw ValidationError("camera.image_size must be in [8, 8192]");
      if (!(config.camera.margin > 0.0)) throw ValidationError("camera.margin must be positive");
      break;

    case Stage::fit_sim3: {
      require_file(config.asset_mesh, "asset mesh");
      const auto n = config.input_silhouettes.size();
      if (n != 1 && n != 4)
        throw ValidationError("input_silhouettes needs 4 view images or one 2x2 tiled frame, got " + std::to_string(n));
      for (const auto& p : config.input_silhouettes) require_file(p, "input silhouette");
      if (!(config.camera.margin > 0.0)) throw ValidationError("camera.margin must be positive");
      FitConfig fc = config.fit;
      if (fc.length_scale == 0.0) fc.length_scale = 1.0;  // filled in from the body at run time
      fc.validate();
      load_input_silhouettes(config);
      break;
    }

    case Stage::make_proxy:
      if (!chained) require_file(fitted_asset_path(config), "fitted asset");
      if (config.proxy.target_clusters != 0 && config.proxy.target_clusters < 4)
        throw ValidationError("proxy.target_clusters must be 0 (automatic) or >= 4");
      if (config.proxy.rig_views < 6) throw ValidationError("proxy.rig_views must be >= 6");
      if (config.proxy.rig_resolution < 16) throw ValidationError("proxy.rig_resolution must be >= 16");
      if (config.proxy.nearest < 1) throw ValidationError("proxy.nearest must be >= 1");
      break;

    case Stage::resolve: {
      if (!chained) require_file(fitted_asset_path(config), "fitted asset");
      if (config.proxy_mesh.has_value() != config.proxy_weights.has_value())
        throw ValidationError("proxy_mesh and proxy_weights must be given together");
      if (config.proxy_mesh) {
        require_file(*config.proxy_mesh, "proxy mesh");
        require_file(*config.proxy_weights, "proxy weights");
      } else {
        validate(config, Stage::make_proxy, true);
      }
      if (config.sdf.resolution < 16) throw ValidationError("sdf.resolution must be >= 16");
      if (config.sdf.padding < 3) throw ValidationError("sdf.padding must be >= 3");
      if (config.sdf.band < 1) throw ValidationError("sdf.band must be >= 1");
      SolverParams sp = config.solver.params;
      sp.collision_margin = config.solver.collision_margin.value_or(1.0);
      sp.penetration_tol = config.solver.penetration_tol.value_or(1.0);
      sp.self_collision_radius = config.solver.self_collision_radius.value_or(1.0);
      sp.validate();
      break;
    }
  }
}

StageRecord run_render_body(const RunConfig& config) {
  validate(config, Stage::render_body);
  StageRecord rec{stage_name(Stage::render_body), {config.body_mesh}, {}, 0.0};
  StageTimer timer(rec);
  const TriMesh body = load_mesh(config.body_mesh);
  const auto cams = body_view_cameras(body, config.camera.image_size, config.camera.margin);
  const BodyFrames frames = render_body_frames(body, cams);

  ensure_output_dir(config);
  const StageFiles files = stage_files(config);
  save_xyz_map(frames.xyz, files.body_xyz);
  SilhouetteImage sil(frames.silhouette.width, frames.silhouette.height);
  for (std::size_t i = 0; i < sil.size(); ++i) sil.data[i] = frames.silhouette.data[i];
  save_silhouette(sil, files.body_silhouette);
  rec.outputs = {files.body_xyz, files.body_silhouette};
  log_info("render-body: " + std::to_string(frames.xyz.width()) + "x" + std::to_string(frames.xyz.height()) +
           " frame written");
  return rec;
}

StageRecord run_fit_sim3(const RunConfig& config) {
  validate(config, Stage::fit_sim3);
  StageRecord rec{stage_name(Stage::fit_sim3), {config.asset_mesh, config.body_mesh}, {}, 0.0};
  rec.inputs.insert(rec.inputs.end(), config.input_silhouettes.begin(), config.input_silhouettes.end());
  StageTimer timer(rec);
  const TriMesh asset = load_mesh(config.asset_mesh);
  const TriMesh body = load_mesh(config.body_mesh);
  const auto sils = load_input_silhouettes(config);
  const auto cams = body_view_cameras(body, config.camera.image_size, config.camera.margin);

  FitConfig fc = config.fit;
  if (fc.length_scale == 0.0) fc.length_scale = aabb(body).diagonal();
  const FitResult fit = fit_sim3(asset, sils, cams, fc);
  if (!std::isfinite(fit.final_loss_hard) || !std::isfinite(fit.final_loss_soft))
    throw NumericalError("fit-sim3: non-finite silhouette loss");

  ensure_output_dir(config);
  const StageFiles files = stage_files(config);
  const Mat3 r = fit.params.rotation();
  json result = {{"scale", fit.params.s},
                 {"omega", vec_json(fit.params.omega)},
                 {"translation", vec_json(fit.params.t)},
                 {"rotation", json::array({vec_json(r.row(0)), vec_json(r.row(1)), vec_json(r.row(2))})},
                 {"final_loss_soft", fit.final_loss_soft},
                 {"final_loss_hard", fit.final_loss_hard},
                 {"iterations", fit.iters},
                 {"length_scale", fc.length_scale},
                 {"loss_history", fit.loss_history}};
  write_json(result, files.fit_result);
  save_mesh(apply_sim3(fit.params, asset), files.fitted_asset);
  rec.outputs = {files.fit_result, files.fitted_asset};
  std::ostringstream msg;
  msg << "fit-sim3: scale " << fit.params.s << ", hard loss " << fit.final_loss_hard << " after " << fit.iters
      << " iterations";
  log_info(msg.str());
  return rec;
}

StageRecord run_make_proxy(const RunConfig& config) {
  validate(config, Stage::make_proxy);
  const fs::path asset_path = fitted_asset_path(config);
  StageRecord rec{stage_name(Stage::make_proxy), {asset_path, config.body_mesh}, {}, 0.0};
  StageTimer timer(rec);
  const TriMesh asset = load_mesh(asset_path);
  const TriMesh body = load_mesh(config.body_mesh);
  if (config.proxy.target_clusters > static_cast<int>(asset.vertices.size()))
    throw ValidationError("proxy.target_clusters (" + std::to_string(config.proxy.target_clusters) +
                          ") exceeds the asset vertex count (" + std::to_string(asset.vertices.size()) + ")");
  const auto rig = make_cull_rig(body, config.proxy.rig_views, config.proxy.rig_resolution);
  const ProxySkin skin = build_proxy(asset, rig, {config.proxy.target_clusters, config.proxy.nearest, config.seed});

  ensure_output_dir(config);
  const StageFiles files = stage_files(config);
  save_proxy_skin(skin, files.proxy_mesh, files.proxy_weights);
  rec.outputs = {files.proxy_mesh, files.proxy_weights};
  log_info("make-proxy: proxy has " + std::to_string(skin.proxy.vertices.size()) + " vertices and " +
           std::to_string(skin.proxy.faces.size()) + " faces");
  return rec;
}

StageRecord run_resolve(const RunConfig& config) {
  validate(config, Stage::resolve);
  const StageFiles files = stage_files(config);
  const fs::path asset_path = fitted_asset_path(config);
  const fs::path proxy_path = proxy_mesh_path(config), weights_path = proxy_weights_path(config);
  const bool have_proxy = fs::is_regular_file(proxy_path) && fs::is_regular_file(weights_path);

  StageRecord rec{stage_name(Stage::resolve), {config.body_mesh, asset_path}, {}, 0.0};
  if (have_proxy) rec.inputs.insert(rec.inputs.end(), {proxy_path, weights_path});
  StageTimer timer(rec);
  const TriMesh body = load_mesh(config.body_mesh);
  const TriMesh visual = load_mesh(asset_path);
  ProxySkin skin;
  if (have_proxy) {
    skin = load_proxy_skin(proxy_path, weights_path);
  } else {
    log_info("resolve: no proxy on disk, building one");
    const auto rig = make_cull_rig(body, config.proxy.rig_views, config.proxy.rig_resolution);
    skin = build_proxy(visual, rig, {config.proxy.target_clusters, config.proxy.nearest, config.seed});
  }
  if (skin.weights.size() != visual.vertices.size())
    throw ValidationError("resolve: proxy weights cover " + std::to_string(skin.weights.size()) +
                          " vertices but the asset has " + std::to_string(visual.vertices.size()));
  const SolverParams params = config.solver.resolve_for(body, skin.proxy);
  const SdfGrid sdf = build_sdf(body, config.sdf);

  ensure_output_dir(config);
  save_sdf(sdf, files.sdf);
  rec.outputs.push_back(files.sdf);
  if (!have_proxy) {
    save_proxy_skin(skin, files.proxy_mesh, files.proxy_weights);
    rec.outputs.insert(rec.outputs.end(), {files.proxy_mesh, files.proxy_weights});
  }

  auto write_diagnostics = [&](const std::vector<LoopDiagnostics>& diags) {
    std::ofstream out(files.diagnostics, std::ios::trunc);
    if (!out) throw IoError("cannot write " + files.diagnostics.string());
    for (const auto& d : diags)
      out << json{{"loop", d.loop},
                  {"max_penetration", d.max_pen},
                  {"rms_strain", d.rms_strain},
                  {"active_contacts", d.active_contacts}}
                 .dump()
          << '\n';
  };

  ResolveResult result;
  try {
    result = resolve_penetration(skin, sdf, params);
  } catch (const SolverDivergedError& e) {
    write_diagnostics(e.diagnostics());
    throw;
  }
  write_diagnostics(result.diagnostics);

  TriMesh resolved_proxy = skin.proxy;
  resolved_proxy.vertices = result.positions;
  const TriMesh final_asset = propagate_deformation(skin, result.positions, visual);
  const double visual_pen = max_penetration(final_asset.vertices, sdf);
  save_mesh(resolved_proxy, files.resolved_proxy);
  save_mesh(final_asset, files.final_asset);
  json report = {{"converged", result.converged},
                 {"loops", result.loops},
                 {"proxy_max_penetration", result.max_penetration},
                 {"visual_max_penetration", visual_pen},
                 {"rms_strain", result.rms_strain},
                 {"penetration_tol", params.penetration_tol},
                 {"collision_margin", params.collision_margin},
                 {"self_collision_radius", params.self_collision_radius},
                 {"gradient_fallbacks", result.gradient_fallbacks},
                 {"skipped_constraints", result.skipped_constraints},
                 {"proxy_vertices", skin.proxy.vertices.size()},
                 {"visual_vertices", visual.vertices.size()}};
  write_json(report, files.report);
  rec.outputs.insert(rec.outputs.end(), {files.diagnostics, files.resolved_proxy, files.final_asset, files.report});
  std::ostringstream msg;
  msg << "resolve: " << (result.converged ? "converged" : "not converged") << " after " << result.loops
      << " loops; max penetration proxy " << result.max_penetration << ", visual " << visual_pen;
  log_info(msg.str());
  return rec;
}

StageRecord run_stage(const RunConfig& config, Stage stage) {
  switch (stage) {
    case Stage::render_body: return run_render_body(config);
    case Stage::fit_sim3: return run_fit_sim3(config);
    case Stage::make_proxy: return run_make_proxy(config);
    case Stage::resolve: return run_resolve(config);
  }
  throw ValidationError("unknown stage");
}

std::vector<StageRecord> run_pipeline(const RunConfig& config) {
  constexpr std::array stages{Stage::render_body, Stage::fit_sim3, Stage::make_proxy, Stage::resolve};
  // Later stages read what earlier ones write, so only the first stage that
  // consumes an intermediate needs it to be an external file.
  for (Stage s : stages) validate(config, s, true);
  if (config.fitted_asset || config.proxy_mesh || config.proxy_weights)
    throw ValidationError("pipeline: fitted_asset, proxy_mesh and proxy_weights are produced by the run itself");

  std::vector<StageRecord> records;
  json manifest = {{"stages", json::array()}};
  const fs::path manifest_path = stage_files(config).manifest;
  auto add_record = [&](const StageRecord& r) {
    json inputs = json::object(), outputs = json::object();
    for (const auto& p : r.inputs) inputs[p.string()] = sha256_file(p);
    for (const auto& p : r.outputs) outputs[p.filename().string()] = sha256_file(p);
    manifest["stages"].push_back(
        {{"stage", r.stage}, {"inputs", inputs}, {"outputs", outputs}, {"wall_time_s", r.wall_time_s}});
  };

  for (Stage s : stages) {
    try {
      records.push_back(run_stage(config, s));
      add_record(records.back());
    } catch (const Error& e) {
      if (fs::is_directory(config.output_dir)) {
        manifest["failed_stage"] = stage_name(s);
        manifest["error"] = e.what();
        write_json(manifest, manifest_path);
      }
      log(LogLevel::error, "pipeline aborted in stage " + stage_name(s));
      throw;
    }
  }
  write_json(manifest, manifest_path);
  return records;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for hashing");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw IoError("SHA-256 unavailable");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

}  // namespace bodyfit::pipeline
