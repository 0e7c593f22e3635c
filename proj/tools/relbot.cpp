// relbot command-line tool: run, report, validate, gen-stimuli.
//
// Exit codes: 0 success, 1 usage or unexpected failure, 2 config validation,
// 3 training divergence, 4 I/O or artifact integrity failure.

#include <CLI11.hpp>

#include <iostream>

#include "relbot/config.hpp"
#include "relbot/harness.hpp"

namespace {

using namespace relbot;

int report_error(const std::exception& e) {
  if (const auto* ce = dynamic_cast<const config::ConfigError*>(&e)) {
    for (const auto& issue : ce->issues()) std::cerr << "error: " << config::format_issue(issue) << "\n";
  } else {
    std::cerr << "error: " << e.what() << "\n";
  }
  return harness::exit_code_for(e);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relational bottleneck experiments: train, analyse and report"};
  app.set_version_flag("--version", std::string(harness::tool_version()));
  app.require_subcommand(1);

  std::string config_path, manifest_path, out_dir;
  std::uint64_t seed_override = 0;
  bool force = false;

  auto add_run_flags = [&](CLI::App* cmd) {
    cmd->add_option("--out", out_dir, "Output directory (default: config output_dir, then $RELBOT_OUTPUT_ROOT/<name>)");
    cmd->add_option("--seed-override", seed_override, "Replace the config's master_seed");
  };

  CLI::App* run = app.add_subcommand("run", "Train every arm and write metrics, checkpoints and a manifest");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  add_run_flags(run);
  run->add_flag("--force", force, "Recompute even if a complete run exists");

  CLI::App* report = app.add_subcommand("report", "Verify a run's checksums and print its summary");
  report->add_option("manifest", manifest_path, "manifest.json of a completed run")->required();

  CLI::App* validate = app.add_subcommand("validate", "Check a config and list every violation");
  validate->add_option("config", config_path, "Experiment config (JSON)")->required();

  CLI::App* gen = app.add_subcommand("gen-stimuli", "Write the config's stimuli as PGM images and CSV indexes");
  gen->add_option("config", config_path, "Experiment config (JSON)")->required();
  add_run_flags(gen);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? harness::kExitOk : harness::kExitUsage;
  }

  harness::RunOptions options;
  options.force = force;
  options.log = &std::cerr;
  if (!out_dir.empty()) options.output_dir = out_dir;
  if (run->count("--seed-override") || gen->count("--seed-override")) options.seed_override = seed_override;

  try {
    if (*validate) {
      const auto issues = config::validate(config::load_json_file(config_path));
      if (issues.empty()) {
        std::cout << "ok\n";
        return harness::kExitOk;
      }
      for (const auto& issue : issues) std::cerr << "error: " << config::format_issue(issue) << "\n";
      return harness::kExitValidation;
    }
    if (*run) {
      const auto result = harness::run_experiment(config::load_json_file(config_path), options);
      std::cout << result.manifest_path.string() << "\n";
      return harness::kExitOk;
    }
    if (*report) {
      const auto r = harness::write_report(manifest_path);
      std::cout << r.text;
      return harness::kExitOk;
    }
    if (*gen) {
      harness::generate_stimuli(config::load_json_file(config_path), options);
      return harness::kExitOk;
    }
  } catch (const std::exception& e) {
    return report_error(e);
  }
  return harness::kExitUsage;
}
