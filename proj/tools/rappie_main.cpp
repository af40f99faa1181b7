#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rappie/errors.hpp"
#include "rappie/pipeline.hpp"

namespace {

// Collected before the config is materialized; precedence is
// defaults < --config file < dedicated flags < --set overrides.
struct CliArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> backend;
  std::optional<std::size_t> k;
  std::optional<int> rounds;
  bool resume = false;
  bool freeze_upstream = false;
  std::vector<std::string> overrides;
  std::string report_dir;
};

rappie::PipelineConfig resolve_config(const CliArgs& args) {
  rappie::PipelineConfig cfg;
  if (!args.config_path.empty()) cfg = rappie::PipelineConfig::from_file(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (args.out_dir) cfg.out_dir = *args.out_dir;
  if (args.backend) cfg.chat_backend = *args.backend;
  if (args.k) cfg.k = *args.k;
  if (args.rounds) cfg.rounds = *args.rounds;
  if (args.resume) cfg.resume = true;
  if (args.freeze_upstream) cfg.freeze_upstream = true;
  for (const std::string& pair : args.overrides) {
    auto eq = pair.find('=');
    if (eq == std::string::npos || eq == 0)
      throw rappie::UsageError("--set expects key=value, got '" + pair + "'");
    cfg.apply_override(pair.substr(0, eq), pair.substr(eq + 1));
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reader-feedback emotion analysis pipeline"};
  app.require_subcommand(1);

  CliArgs args;
  app.add_option("--config", args.config_path, "JSON config file (flat keys)")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", args.seed, "master seed");
  app.add_option("--out", args.out_dir, "output directory for artifacts");
  app.add_option("--backend", args.backend, "chat backend: mock or http");
  app.add_option("--k", args.k, "top-k posts broadcast to each reader agent");
  app.add_option("--rounds", args.rounds, "propagation rounds per view");
  app.add_flag("--resume", args.resume, "resume from checkpoints when present");
  app.add_flag("--freeze-upstream", args.freeze_upstream,
               "train only the fusion head over fixed reader features");
  app.add_option("--set", args.overrides, "override any config key (key=value, repeatable)");

  auto* sim = app.add_subcommand("simulate", "run reader agents, write the feedback ledger");
  auto* build = app.add_subcommand("build-graph", "build the user network and train the views");
  auto* train = app.add_subcommand("train", "train the emotion classifier");
  auto* eval = app.add_subcommand("evaluate", "score the trained classifier on held-out splits");
  auto* ablate = app.add_subcommand("ablate", "re-score every ablation row on the same splits");
  auto* report = app.add_subcommand("report", "summarize every run under a directory");
  report->add_option("dir", args.report_dir, "directory holding run outputs");
  for (auto* sub : {sim, build, train, eval, ablate, report}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (report->parsed()) {
      std::string dir = args.report_dir.empty() ? resolve_config(args).out_dir : args.report_dir;
      std::cout << rappie::cmd_report(dir);
      return 0;
    }
    rappie::PipelineConfig cfg = resolve_config(args);
    if (sim->parsed()) rappie::cmd_simulate(cfg);
    if (build->parsed()) rappie::cmd_build_graph(cfg);
    if (train->parsed()) rappie::cmd_train(cfg);
    if (eval->parsed()) rappie::cmd_evaluate(cfg);
    if (ablate->parsed()) rappie::cmd_ablate(cfg);
    return 0;
  } catch (const rappie::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const rappie::BackendError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  }
}
