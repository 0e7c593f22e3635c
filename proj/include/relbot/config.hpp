#pragma once
// Experiment configuration: strict schema validation, default materialization
// and seed fan-out.
//
// A config is a JSON object. Every object in it is closed: unknown keys are
// errors. Validation collects every violation with the JSON pointer of the
// offending field instead of stopping at the first.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "relbot/analysis.hpp"
#include "relbot/canonical_json.hpp"
#include "relbot/errors.hpp"
#include "relbot/models.hpp"
#include "relbot/training.hpp"

namespace relbot::config {

enum class ExperimentKind { kParametric, kOddball, kCategorical };

std::string_view experiment_name(ExperimentKind kind);  // "parametric-similarity", "oddball", "categorical"

struct Issue {
  std::string path;  // JSON pointer, "" for the document root
  std::string message;
};

std::string format_issue(const Issue& issue);

/// Carries every violation found; what() lists them one per line.
class ConfigError : public ValidationError {
 public:
  explicit ConfigError(std::vector<Issue> issues);
  const std::vector<Issue>& issues() const noexcept { return issues_; }

 private:
  std::vector<Issue> issues_;
};

struct TrainSettings {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  std::size_t eval_interval = 50;
  models::AdamOptions adam;
  // Oddball only.
  double temperature = 0.5;
  double scale_jitter = 0.3;
  double rotation_jitter = 3.141592653589793;
  std::vector<double> checkpoint_fractions{0.25, 0.5, 0.75, 1.0};
};

struct ArmConfig {
  std::string name;
  models::ModelKind kind = models::ModelKind::kRelational;
  TrainSettings train;
};

struct ModelSettings {
  std::vector<std::size_t> hidden_dims{256, 64};
  std::size_t embedding_dim = 32;
  std::vector<std::size_t> head_hidden_dims{64};
  std::size_t projection_dim = 32;
  models::SimilarityMetric metric = models::SimilarityMetric::kEuclidean;
};

struct ParametricSettings {
  std::size_t canvas_size = 32;
  std::size_t grid = 12;
  double ood_band = 0.3;
  stimuli::SimilarityDatasetOptions pairs;
  double train_threshold = 0.01;
  double ood_threshold = 0.05;
};

/// Trial budget the desk-scale oddball runs are measured against.
inline constexpr std::size_t kReferenceTrialBudget = 60000;

struct OddballSettings {
  stimuli::TrialOptions trial;
  std::size_t n_train_trials = 6000;
  std::size_t n_test_trials = 600;
  analysis::DecodingOptions decoding;  // seed is filled per arm
};

struct CategoricalSettings {
  std::size_t n_values = 30;
  std::size_t n_train = 30;
  double decision_threshold = 0.75;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kParametric;
  std::string name;
  std::uint64_t master_seed = 0;
  std::optional<std::string> output_dir;
  ModelSettings model;
  std::vector<ArmConfig> arms;
  ParametricSettings parametric;
  OddballSettings oddball;
  CategoricalSettings categorical;

  /// Every field with defaults materialized; output_dir is omitted because it
  /// names where a run lives, not what it computes.
  Json resolved;

  /// Encoder input width implied by the stimuli.
  std::size_t input_dim() const;
  models::ModelSpec model_spec(const ArmConfig& arm) const;
  std::size_t total_steps(const ArmConfig& arm) const;
};

/// All violations of the schema and cross-field rules; empty when valid.
std::vector<Issue> validate(const Json& raw);

/// Validates and materializes defaults; throws ConfigError listing every violation.
ExperimentConfig resolve(const Json& raw);

/// Parses a config file. Unreadable files raise IoError; malformed JSON raises
/// ConfigError with path "".
Json load_json_file(const std::filesystem::path& path);

// --- Seed fan-out -------------------------------------------------------------
// Every stream is derive_seed(master_seed, label) with a fixed label, so adding
// or removing an arm never changes the streams of the others.

std::uint64_t data_seed(const ExperimentConfig& config);                          // "data"
std::uint64_t init_seed(const ExperimentConfig& config, const ArmConfig& arm);      // "arm/<name>/init"
std::uint64_t schedule_seed(const ExperimentConfig& config, const ArmConfig& arm);  // "arm/<name>/schedule"
std::uint64_t analysis_seed(const ExperimentConfig& config, const ArmConfig& arm);  // "arm/<name>/analysis"

training::Schedule make_schedule(const ExperimentConfig& config, const ArmConfig& arm);

}  // namespace relbot::config
