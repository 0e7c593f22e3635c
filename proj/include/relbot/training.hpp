#pragma once
// Training loops for the three experiments: parametric similarity with OOD
// tracking, oddball-phase encoder training, and categorical same/different.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "relbot/models.hpp"
#include "relbot/stimuli.hpp"

namespace relbot::training {

struct Schedule {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::size_t eval_interval = 50;
  std::uint64_t seed = 0;
  models::AdamOptions adam;

  /// eval_interval must not exceed total_steps; every count positive.
  void validate(std::size_t total_steps) const;
};

/// Number of optimizer steps for `items` examples per epoch (last batch may be short).
std::size_t total_steps(const Schedule& schedule, std::size_t items);

/// Metrics at one evaluation point; NaN where a metric does not apply.
struct EvalRecord {
  std::size_t step = 0;
  double train_metric = 0.0;
  double id_metric = 0.0;
  double ood_metric = 0.0;
};

struct SavedCheckpoint {
  std::size_t step = 0;
  double fraction = 0.0;
  models::ModelState state;
};

struct TrainingTrace {
  std::vector<double> step_loss;  // entry s holds the loss of step s + 1
  std::vector<EvalRecord> evals;  // strictly increasing steps
  std::vector<double> epoch_seconds;
  std::vector<SavedCheckpoint> checkpoints;
  models::ModelState final_state;
  std::size_t heldout_touches = 0;  // gradient passes that read a non-training record
};

/// CSV with header step,train_loss,train_metric,id_metric,ood_metric; one row per
/// step, metric columns empty except at evaluation steps.
std::string trace_csv(const TrainingTrace& trace);

enum class Metric { kTrain, kInDistribution, kOod };

double metric_value(const EvalRecord& record, Metric metric);

/// First evaluation step whose metric is strictly below the threshold.
std::optional<std::size_t> steps_to_threshold(const TrainingTrace& trace, Metric metric, double threshold);

/// First evaluation step from which the metric stays strictly below the threshold
/// through the last evaluation, so an early dip that training later undoes does
/// not count.
std::optional<std::size_t> steps_to_sustained_threshold(const TrainingTrace& trace, Metric metric, double threshold);

/// Metric at the evaluation point with exactly this step; throws ValidationError if absent.
double metric_at(const TrainingTrace& trace, std::size_t step, Metric metric);

/// Encodes a batch of unique images once, then reads pair embeddings through
/// one-hot selection matrices so shared images cost one forward pass.
struct PairBatch {
  Tensor inputs;  // [u, input_dim]
  std::vector<std::size_t> left;
  std::vector<std::size_t> right;
  std::vector<double> targets;
};

/// One MSE gradient step on a pair batch; returns the batch loss before the update.
double pair_training_step(models::ModelState& state, models::OptimizerState& optimizer, const PairBatch& batch);

/// Mean squared error of predicted similarity over (a, b, target) triples, given
/// precomputed embeddings indexed by stimulus id.
double pair_mse(const models::ModelState& state, const Tensor& embeddings,
                std::span<const stimuli::SimilarityPair> pairs);

// --- Parametric similarity ----------------------------------------------------

struct ParametricConfig {
  models::ModelSpec model;
  std::size_t grid = 6;
  double ood_band = 0.5;
  std::size_t canvas_size = 32;
  stimuli::SimilarityDatasetOptions pairs;
  Schedule schedule;
  std::uint64_t init_seed = 0;
};

struct ParametricData {
  stimuli::SimilarityDataset dataset;
  Tensor images;  // row i renders stimulus id i
};

ParametricData build_parametric_data(std::size_t grid, double ood_band, std::size_t canvas_size, std::uint64_t seed,
                                     const stimuli::SimilarityDatasetOptions& options = {});

/// MSE on similarity over seeded mini-batches of training pairs; evaluation
/// reports full train, in-distribution test and OOD MSE.
TrainingTrace train_similarity(const ParametricConfig& config, const ParametricData& data);

// --- Oddball encoders ---------------------------------------------------------

struct OddballTrainConfig {
  models::ModelSpec model;  // relational or contrastive
  stimuli::TrialOptions trial;
  Schedule schedule;
  std::uint64_t init_seed = 0;
  double temperature = 0.5;
  // Contrastive positives: the stored variant and the same shape redrawn with
  // its scale multiplied by U(1 - scale_jitter, 1 + scale_jitter) and its
  // rotation offset by U(-rotation_jitter, rotation_jitter).
  double scale_jitter = 0.3;
  double rotation_jitter = 3.141592653589793;
  std::vector<double> checkpoint_fractions{0.25, 0.5, 0.75, 1.0};
};

struct OddballData {
  std::vector<stimuli::QuadrilateralCategory> catalog;
  std::vector<stimuli::TrialLayout> train_trials;
  std::vector<stimuli::TrialLayout> test_trials;
};

/// Training and test layouts from disjoint seed streams of the master seed.
OddballData build_oddball_data(std::size_t n_train_trials, std::size_t n_test_trials, std::uint64_t seed,
                               const stimuli::TrialOptions& options = {});

/// Returns (id_metric, ood_metric) for a model snapshot.
using Evaluator = std::function<std::pair<double, double>(const models::ModelState&)>;

/// Trains on the variant images of the training trials only. Relational models
/// see pairs with target 1 for same-category and 0 for different-category
/// partners; contrastive models minimize NT-Xent over jittered views. train_metric
/// is the mean step loss since the previous evaluation.
TrainingTrace train_oddball_encoders(const OddballTrainConfig& config, const OddballData& data,
                                     const Evaluator& evaluator = {});

// --- Categorical same/different -----------------------------------------------

struct CategoricalConfig {
  models::ModelSpec model;  // input_dim must equal 2 * n_values
  std::size_t n_values = 30;
  std::size_t n_train = 30;
  Schedule schedule;
  std::uint64_t init_seed = 0;
  double decision_threshold = 0.75;
};

/// Fraction of pairs whose binarized prediction (strictly above threshold means
/// "same") matches the binarized target (target >= 0.75 means "same").
double same_different_accuracy(const models::ModelState& state, const stimuli::CategoricalDataset& data,
                               std::span<const stimuli::SimilarityPair> pairs, double threshold);

/// MSE training on every ordered training pair; train_metric and id_metric are
/// train and holdout accuracy.
TrainingTrace train_categorical(const CategoricalConfig& config, const stimuli::CategoricalDataset& data);

}  // namespace relbot::training
