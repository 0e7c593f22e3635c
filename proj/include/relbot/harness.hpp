#pragma once
// Run orchestration: executes a validated experiment config, persists
// checkpoints and metric files with checksums in a manifest, and renders
// reports from a manifest alone.
//
// Run directory layout:
//   manifest.json        written last; its presence marks a complete run
//   config.json          resolved config
//   summary.json         headline numbers per arm
//   <arm>/trace.csv      per-step loss and evaluation metrics
//   <arm>/pca.csv        embedding PCA scatter
//   <arm>/*.ckpt         checkpoints
//   oddball runs add <arm>/regularity.csv and <arm>/decoding_*.csv
//   report/              written by report(), never listed in the manifest

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>

#include "relbot/analysis.hpp"
#include "relbot/canonical_json.hpp"
#include "relbot/config.hpp"
#include "relbot/training.hpp"

namespace relbot::harness {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitValidation = 2,
  kExitDivergence = 3,
  kExitIo = 4,
};

std::string_view tool_version();

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootVariable = "RELBOT_OUTPUT_ROOT";

struct RunOptions {
  std::optional<std::filesystem::path> output_dir;  // overrides the config and the environment
  std::optional<std::uint64_t> seed_override;
  bool force = false;
  std::ostream* log = nullptr;  // progress lines; silent when null
};

/// --out, else the config's output_dir, else $RELBOT_OUTPUT_ROOT/<name>, else runs/<name>.
std::filesystem::path resolve_output_dir(const config::ExperimentConfig& config, const RunOptions& options);

/// Applies the seed override and resolves the config (throws config::ConfigError).
config::ExperimentConfig prepare_config(const Json& raw, const RunOptions& options);

struct RunResult {
  std::filesystem::path manifest_path;
  bool reused = false;  // a complete run of the same config was already present
  Json manifest;
};

/// Runs every arm and the experiment's analysis battery. A directory holding a
/// complete run of the same resolved config is left untouched unless
/// options.force; one holding a different config is a ValidationError.
RunResult run_experiment(const Json& raw_config, const RunOptions& options);

/// Manifest key holding wall-clock data; everything else is deterministic.
inline constexpr const char* kTimestampsKey = "timestamps";

/// Manifest with the timestamps entry removed, for reproducibility comparisons.
Json deterministic_view(const Json& manifest);

/// Recomputes every listed checksum; throws IoError naming the first missing or
/// mismatched file.
void verify_manifest(const std::filesystem::path& manifest_path);

struct Report {
  std::string text;
  std::vector<std::pair<std::string, std::string>> csv_files;  // file name, contents
};

/// Builds the report from the manifest's files only; the result depends on
/// nothing but their bytes.
Report build_report(const std::filesystem::path& manifest_path);

/// build_report, then writes report/summary.txt and the CSVs next to the manifest.
Report write_report(const std::filesystem::path& manifest_path);

/// Rendered oddball test images, trial-major (row 6t + p is position p of trial
/// t), with each image's regularity score and category index.
struct OddballProbe {
  Tensor images;
  std::vector<double> regularity;
  std::vector<std::size_t> labels;
};

OddballProbe render_oddball_probe(const training::OddballData& data, std::size_t canvas_size);

struct OddballDecoding {
  analysis::DecodingReport regularity;
  analysis::DecodingReport category;
};

/// Cross-validated regularity-score and category decoding from probe embeddings,
/// seeded from the arm's analysis stream.
OddballDecoding decode_oddball(const config::ExperimentConfig& config, const config::ArmConfig& arm,
                               const Tensor& embeddings, const OddballProbe& probe);

/// Writes the config's stimuli (PGM images and index CSVs) under out_dir/stimuli.
/// Returns the number of files written.
std::size_t generate_stimuli(const Json& raw_config, const RunOptions& options);

/// Maps an exception from the functions above to its exit code.
int exit_code_for(const std::exception& error);

}  // namespace relbot::harness
