#pragma once

#include "bodyfit/camera.hpp"
#include "bodyfit/image.hpp"
#include "bodyfit/proxy.hpp"
#include "bodyfit/sdf.hpp"
#include "bodyfit/sim3_fit.hpp"
#include "bodyfit/xpbd.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bodyfit {

// Runs the solver on the proxy of a skin, starting from its rest positions.
inline ResolveResult resolve_penetration(const ProxySkin& skin, const SdfGrid& sdf, const SolverParams& params) {
  TriMesh start = skin.proxy;
  start.vertices = skin.rest_proxy_vertices;
  return resolve_penetration(start, sdf, params);
}

// Canonical-coordinate maps of the body in the four fixed views, tiled 2x2,
// plus the matching tiled hard silhouette.
struct BodyFrames {
  XyzMap xyz;
  Image<std::uint8_t> silhouette;
};

inline BodyFrames render_body_frames(const TriMesh& body, std::span<const OrthoCamera, 4> cameras) {
  if (!body.canonical_coords || body.canonical_coords->size() != body.vertices.size())
    throw ValidationError("render-body: body mesh has no per-vertex canonical coordinates");
  std::array<XyzMap, 4> tiles;
  for (int k = 0; k < 4; ++k) tiles[k] = rasterize_canonical(body, cameras[k]);
  BodyFrames frames;
  frames.xyz = tile_2x2(tiles);
  frames.silhouette = frames.xyz.mask;
  return frames;
}

}  // namespace bodyfit

namespace bodyfit::pipeline {

namespace fs = std::filesystem;

enum class Stage { render_body, fit_sim3, make_proxy, resolve };

std::string stage_name(Stage stage);

struct CameraSettings {
  int image_size = 256;
  double margin = 0.55;  // half-extent as a fraction of the largest body side
};

struct ProxySettings {
  int target_clusters = 0;  // 0 picks the default from the asset face count
  int rig_views = 26;
  int rig_resolution = 1024;
  int nearest = 4;
};

// Solver parameters whose scale-dependent fields can be left unset and are
// then derived from the body and proxy.
struct SolverSettings {
  SolverParams params;
  std::optional<double> collision_margin;
  std::optional<double> penetration_tol;
  std::optional<double> self_collision_radius;

  SolverParams resolve_for(const TriMesh& body, const TriMesh& proxy) const;
};

struct RunConfig {
  fs::path body_mesh;
  fs::path asset_mesh;
  std::vector<fs::path> input_silhouettes;  // four views or one 2x2 tiled frame
  fs::path output_dir;
  std::uint64_t seed = 0;
  CameraSettings camera;
  FitConfig fit;
  ProxySettings proxy;
  SdfOptions sdf;
  SolverSettings solver;
  // Stage inputs that default to the previous stage's outputs.
  std::optional<fs::path> fitted_asset;
  std::optional<fs::path> proxy_mesh;
  std::optional<fs::path> proxy_weights;

  // Relative paths are taken relative to `base_dir`. Unknown keys are errors.
  static RunConfig from_json(const nlohmann::json& j, const fs::path& base_dir);
  static RunConfig load(const fs::path& path);
  nlohmann::json to_json() const;
};

// File layout of a run under output_dir.
struct StageFiles {
  fs::path body_xyz, body_silhouette;
  fs::path fit_result, fitted_asset;
  fs::path proxy_mesh, proxy_weights;
  fs::path sdf, resolved_proxy, final_asset, diagnostics, report;
  fs::path manifest;
};

StageFiles stage_files(const RunConfig& config);

// Checks everything a stage needs before it computes or writes anything.
// With `chained`, inputs produced by earlier stages of the same run are not
// required to exist yet.
void validate(const RunConfig& config, Stage stage, bool chained = false);

struct StageRecord {
  std::string stage;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  double wall_time_s = 0.0;
};

StageRecord run_render_body(const RunConfig& config);
StageRecord run_fit_sim3(const RunConfig& config);
StageRecord run_make_proxy(const RunConfig& config);
StageRecord run_resolve(const RunConfig& config);
StageRecord run_stage(const RunConfig& config, Stage stage);

// All four stages in order, followed by manifest.json with input and output
// hashes of every stage.
std::vector<StageRecord> run_pipeline(const RunConfig& config);

std::string sha256_file(const fs::path& path);

}  // namespace bodyfit::pipeline
