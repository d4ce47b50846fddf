#include "bodyfit/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using bodyfit::pipeline::RunConfig;
using bodyfit::pipeline::Stage;

enum ExitCode { ok = 0, validation = 2, numerical = 3, io = 4 };

struct CommonOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string body;
  std::string asset;
  std::vector<std::string> silhouettes;
  bool quiet = false;
  bool verbose = false;
};

void add_common(CLI::App& cmd, CommonOptions& opts) {
  cmd.add_option("--config", opts.config, "JSON run configuration");
  cmd.add_option("--out", opts.out, "Output directory (overrides output_dir)");
  cmd.add_option("--seed", opts.seed, "Seed for stochastic tie-breaks (overrides seed)");
  cmd.add_option("--body", opts.body, "Body mesh (overrides body_mesh)");
  cmd.add_option("--asset", opts.asset, "Asset mesh (overrides asset_mesh)");
  cmd.add_option("--silhouettes", opts.silhouettes, "Four view silhouettes or one 2x2 tiled frame");
  cmd.add_flag("-q,--quiet", opts.quiet, "Only log warnings and errors");
  cmd.add_flag("-v,--verbose", opts.verbose, "Log debug messages");
}

// Config file first, then flags on top of it.
RunConfig build_config(const CommonOptions& opts) {
  RunConfig config = opts.config.empty() ? RunConfig{} : RunConfig::load(opts.config);
  if (!opts.out.empty()) config.output_dir = opts.out;
  if (opts.seed) config.seed = *opts.seed;
  if (!opts.body.empty()) config.body_mesh = opts.body;
  if (!opts.asset.empty()) config.asset_mesh = opts.asset;
  if (!opts.silhouettes.empty()) config.input_silhouettes.assign(opts.silhouettes.begin(), opts.silhouettes.end());
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fit 3D assets onto human body meshes"};
  app.require_subcommand(1);
  CommonOptions opts;

  struct Command {
    const char* name;
    const char* help;
    std::optional<Stage> stage;
  };
  const Command commands[] = {
      {"render-body", "Render the tiled canonical XYZ and silhouette frames of the body", Stage::render_body},
      {"fit-sim3", "Fit a similarity transform of the asset to the input silhouettes", Stage::fit_sim3},
      {"make-proxy", "Build the simulation proxy and skinning weights of the fitted asset", Stage::make_proxy},
      {"resolve", "Resolve asset-body penetration and transfer it to the asset", Stage::resolve},
      {"pipeline", "Run all stages in order and write a manifest", std::nullopt},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subcommands;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(*sub, opts);
    subcommands.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return validation;
  }

  if (opts.quiet) bodyfit::log_level() = bodyfit::LogLevel::warn;
  if (opts.verbose) bodyfit::log_level() = bodyfit::LogLevel::debug;

  try {
    const RunConfig config = build_config(opts);
    for (const auto& [sub, cmd] : subcommands) {
      if (!sub->parsed()) continue;
      if (cmd->stage) {
        bodyfit::pipeline::run_stage(config, *cmd->stage);
      } else {
        bodyfit::pipeline::run_pipeline(config);
      }
    }
  } catch (const bodyfit::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return validation;
  } catch (const bodyfit::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return numerical;
  } catch (const bodyfit::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return io;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return io;
  }
  return ok;
}
