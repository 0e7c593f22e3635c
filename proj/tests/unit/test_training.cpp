#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "relbot/errors.hpp"
#include "relbot/training.hpp"

using namespace relbot;
using namespace relbot::training;
using models::ModelKind;

namespace {

models::ModelSpec tiny_encoder(ModelKind kind, std::size_t input_dim) {
  models::ModelSpec spec;
  spec.kind = kind;
  spec.encoder.input_dim = input_dim;
  spec.encoder.hidden_dims = {16};
  spec.encoder.embedding_dim = 4;
  spec.head_hidden_dims = {8};
  spec.projection_dim = 4;
  return spec;
}

ParametricConfig tiny_parametric(ModelKind kind, std::size_t epochs = 2) {
  ParametricConfig config;
  config.model = tiny_encoder(kind, 16 * 16);
  config.grid = 4;
  config.ood_band = 0.3;
  config.canvas_size = 16;
  config.pairs.test_pairs = 50;
  config.pairs.ood_pairs = 50;
  config.schedule.epochs = epochs;
  config.schedule.batch_size = 16;
  config.schedule.eval_interval = 2;
  config.schedule.seed = 7;
  config.init_seed = 3;
  return config;
}

ParametricData tiny_data(const ParametricConfig& config) {
  return build_parametric_data(config.grid, config.ood_band, config.canvas_size, 1, config.pairs);
}

bool same_bits(double a, double b) {
  return (std::isnan(a) && std::isnan(b)) || a == b;
}

}  // namespace

// --- Schedule ---------------------------------------------------------------

TEST(Schedule, StepCountsAndValidation) {
  Schedule s;
  s.epochs = 3;
  s.batch_size = 10;
  EXPECT_EQ(total_steps(s, 25), 9u);
  EXPECT_EQ(total_steps(s, 30), 9u);
  s.eval_interval = 10;
  EXPECT_THROW(s.validate(9), ValidationError);
  s.eval_interval = 9;
  EXPECT_NO_THROW(s.validate(9));
  s.adam.learning_rate = 0.0;
  EXPECT_THROW(s.validate(9), ValidationError);
  s.batch_size = 0;
  EXPECT_THROW(total_steps(s, 5), ValidationError);
}

// --- Threshold bookkeeping --------------------------------------------------

TEST(Thresholds, FirstStrictlyBelow) {
  TrainingTrace t;
  t.evals = {{5, 0.3, 0.2, 0.9}, {10, 0.01, 0.1, 0.05}, {15, 0.009, 0.04, 0.04}};
  EXPECT_EQ(steps_to_threshold(t, Metric::kTrain, 0.01), 15u);  // 0.01 itself does not count
  EXPECT_EQ(steps_to_threshold(t, Metric::kOod, 0.05), 15u);
  EXPECT_EQ(steps_to_threshold(t, Metric::kInDistribution, 0.5), 5u);
  EXPECT_FALSE(steps_to_threshold(t, Metric::kTrain, 0.001).has_value());
  EXPECT_EQ(metric_at(t, 10, Metric::kOod), 0.05);
  EXPECT_THROW(metric_at(t, 11, Metric::kOod), ValidationError);
}

TEST(Thresholds, SustainedIgnoresEarlyDips) {
  TrainingTrace t;
  t.evals = {{5, 0.3, 0.0, 0.03}, {10, 0.2, 0.0, 0.07}, {15, 0.1, 0.0, 0.04}, {20, 0.05, 0.0, 0.03}};
  EXPECT_EQ(steps_to_threshold(t, Metric::kOod, 0.05), 5u);
  EXPECT_EQ(steps_to_sustained_threshold(t, Metric::kOod, 0.05), 15u);
  EXPECT_EQ(steps_to_sustained_threshold(t, Metric::kTrain, 0.5), 5u);
  EXPECT_FALSE(steps_to_sustained_threshold(t, Metric::kTrain, 0.05).has_value());  // last value equals it
  t.evals.push_back({25, 0.01, 0.0, 0.2});
  EXPECT_FALSE(steps_to_sustained_threshold(t, Metric::kOod, 0.05).has_value());
}

TEST(TraceCsv, OneRowPerStepMetricsOnlyAtEvaluations) {
  TrainingTrace t;
  t.step_loss = {0.5, 0.25, 0.125};
  t.evals = {{2, 0.1, 0.2, std::numeric_limits<double>::quiet_NaN()}};
  EXPECT_EQ(trace_csv(t),
            "step,train_loss,train_metric,id_metric,ood_metric\n"
            "1,0.5,,,\n"
            "2,0.25,0.10000000000000001,0.20000000000000001,\n"
            "3,0.125,,,\n");
}

// --- Parametric similarity --------------------------------------------------

TEST(Similarity, DeterministicTraces) {
  const ParametricConfig config = tiny_parametric(ModelKind::kFeedforward);
  const ParametricData data = tiny_data(config);
  const TrainingTrace a = train_similarity(config, data), b = train_similarity(config, data);
  EXPECT_EQ(trace_csv(a), trace_csv(b));
  EXPECT_EQ(models::checkpoint_bytes(a.final_state), models::checkpoint_bytes(b.final_state));
}

TEST(Similarity, EvaluationStepsStrictlyIncreasingAndFinalStepEvaluated) {
  ParametricConfig config = tiny_parametric(ModelKind::kRelational);
  config.schedule.eval_interval = 3;
  const TrainingTrace t = train_similarity(config, tiny_data(config));
  ASSERT_FALSE(t.evals.empty());
  for (std::size_t i = 1; i < t.evals.size(); ++i) EXPECT_LT(t.evals[i - 1].step, t.evals[i].step);
  EXPECT_EQ(t.evals.back().step, t.step_loss.size());
  for (double loss : t.step_loss) EXPECT_TRUE(std::isfinite(loss));
  EXPECT_EQ(t.heldout_touches, 0u);
  EXPECT_EQ(t.epoch_seconds.size(), 2u);
}

TEST(Similarity, PrefixPropertyUnderLongerSchedule) {
  // Doubling the epochs replays the shorter run exactly on the shared steps.
  const ParametricConfig short_config = tiny_parametric(ModelKind::kRelational, 2);
  ParametricConfig long_config = short_config;
  long_config.schedule.epochs = 4;
  const ParametricData data = tiny_data(short_config);
  const TrainingTrace s = train_similarity(short_config, data);
  const TrainingTrace l = train_similarity(long_config, data);
  ASSERT_LT(s.step_loss.size(), l.step_loss.size());
  for (std::size_t i = 0; i < s.step_loss.size(); ++i) EXPECT_EQ(s.step_loss[i], l.step_loss[i]);
  for (const EvalRecord& e : s.evals) {
    EXPECT_TRUE(same_bits(e.train_metric, metric_at(l, e.step, Metric::kTrain)));
    EXPECT_TRUE(same_bits(e.id_metric, metric_at(l, e.step, Metric::kInDistribution)));
    EXPECT_TRUE(same_bits(e.ood_metric, metric_at(l, e.step, Metric::kOod)));
  }
}

TEST(Similarity, IdenticalPairTargetsAreLearnedQuickly) {
  ParametricConfig config = tiny_parametric(ModelKind::kRelational, 1);
  ParametricData data = tiny_data(config);
  for (auto& p : data.dataset.train) p.target = 1.0;
  config.schedule.batch_size = data.dataset.train.size();
  config.schedule.epochs = 200;
  config.schedule.eval_interval = 200;
  const TrainingTrace t = train_similarity(config, data);
  EXPECT_LT(t.evals.back().train_metric, 1e-3);
}

TEST(Similarity, HeldOutPairsNeverReachGradients) {
  const ParametricConfig config = tiny_parametric(ModelKind::kRelational);
  ParametricData data = tiny_data(config);
  data.dataset.train.push_back(data.dataset.test.front());
  EXPECT_THROW(train_similarity(config, data), ValidationError);
  data = tiny_data(config);
  data.dataset.train.front().b = data.dataset.ood.front().a;  // tagged train, reads an OOD stimulus
  EXPECT_THROW(train_similarity(config, data), ValidationError);
}

TEST(Similarity, NonFiniteLossReportsLastFiniteStep) {
  ParametricConfig config = tiny_parametric(ModelKind::kFeedforward, 1);
  ParametricData data = tiny_data(config);
  data.dataset.train[17].target = std::numeric_limits<double>::quiet_NaN();
  try {
    train_similarity(config, data);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_GE(e.last_finite_step(), 0);
    EXPECT_NE(std::string(e.what()).find("last finite step " + std::to_string(e.last_finite_step())),
              std::string::npos);
  }
}

TEST(Similarity, RejectsWrongModelOrInputSize) {
  ParametricConfig config = tiny_parametric(ModelKind::kContrastive);
  EXPECT_THROW(train_similarity(config, tiny_data(config)), ValidationError);
  config = tiny_parametric(ModelKind::kRelational);
  config.model.encoder.input_dim = 100;
  EXPECT_THROW(train_similarity(config, tiny_data(tiny_parametric(ModelKind::kRelational))), ValidationError);
}

// --- Oddball encoders -------------------------------------------------------

class OddballTraining : public ::testing::Test {
 protected:
  OddballTrainConfig config(ModelKind kind) const {
    OddballTrainConfig c;
    c.model = tiny_encoder(kind, 16 * 16);
    c.trial.canvas_size = 16;
    c.schedule.epochs = 1;
    c.schedule.batch_size = 8;
    c.schedule.eval_interval = 5;
    c.schedule.seed = 4;
    c.init_seed = 9;
    c.checkpoint_fractions = {0.5, 1.0};
    return c;
  }
  OddballData data = build_oddball_data(20, 10, 3, [] {
    stimuli::TrialOptions o;
    o.canvas_size = 16;
    return o;
  }());
};

TEST_F(OddballTraining, TrainAndTestLayoutsComeFromDisjointStreams) {
  ASSERT_EQ(data.train_trials.size(), 20u);
  ASSERT_EQ(data.test_trials.size(), 10u);
  EXPECT_NE(data.train_trials.front().seed, data.test_trials.front().seed);
}

TEST_F(OddballTraining, CheckpointCountMatchesFractions) {
  for (auto kind : {ModelKind::kRelational, ModelKind::kContrastive}) {
    const TrainingTrace t = train_oddball_encoders(config(kind), data);
    ASSERT_EQ(t.checkpoints.size(), 2u);
    EXPECT_EQ(t.checkpoints[0].fraction, 0.5);
    EXPECT_EQ(t.checkpoints[1].step, t.step_loss.size());
    EXPECT_EQ(models::checkpoint_bytes(t.checkpoints[1].state), models::checkpoint_bytes(t.final_state));
  }
}

TEST_F(OddballTraining, DeterministicAndEvaluatorCalledAtEvalPoints) {
  std::size_t calls = 0;
  const Evaluator eval = [&](const models::ModelState&) {
    ++calls;
    return std::pair{0.25, 0.5};
  };
  const auto c = config(ModelKind::kContrastive);
  const TrainingTrace a = train_oddball_encoders(c, data, eval);
  EXPECT_EQ(calls, a.evals.size());
  EXPECT_EQ(a.evals.front().id_metric, 0.25);
  const TrainingTrace b = train_oddball_encoders(c, data, eval);
  EXPECT_EQ(trace_csv(a), trace_csv(b));
}

TEST_F(OddballTraining, RejectsFeedforwardAndBadTemperature) {
  EXPECT_THROW(train_oddball_encoders(config(ModelKind::kFeedforward), data), ValidationError);
  auto c = config(ModelKind::kContrastive);
  c.temperature = 0.0;
  EXPECT_THROW(train_oddball_encoders(c, data), ValidationError);
}

// --- Categorical ------------------------------------------------------------

TEST(Categorical, TieAtThresholdCountsAsDifferent) {
  const auto ds = stimuli::build_onehot_dataset(4, 4, 2);
  models::ModelSpec spec = tiny_encoder(ModelKind::kFeedforward, 8);
  models::ModelState state = models::init_parameters(spec, 1);
  for (auto& l : state.head) {
    for (double& v : l.weight.data()) v = 0.0;
    for (double& v : l.bias.data()) v = 0.0;
  }
  // Every prediction is exactly 0.5: "same" pairs are misclassified, the rest are right.
  std::size_t same = 0;
  for (const auto& p : ds.train_pairs) same += p.target >= 0.75 ? 1 : 0;
  const double expected = 1.0 - static_cast<double>(same) / static_cast<double>(ds.train_pairs.size());
  EXPECT_DOUBLE_EQ(same_different_accuracy(state, ds, ds.train_pairs, 0.5), expected);
}

TEST(Categorical, TrainsAndReportsBothAccuracies) {
  CategoricalConfig config;
  config.n_values = 6;
  config.n_train = 6;
  config.model = tiny_encoder(ModelKind::kRelational, 12);
  config.schedule.epochs = 5;
  config.schedule.batch_size = 36;
  config.schedule.eval_interval = 5;
  const auto ds = stimuli::build_onehot_dataset(6, 6, 1);
  const TrainingTrace t = train_categorical(config, ds);
  ASSERT_EQ(t.evals.size(), 1u);
  EXPECT_GE(t.evals[0].train_metric, 0.0);
  EXPECT_LE(t.evals[0].id_metric, 1.0);
  EXPECT_TRUE(std::isnan(t.evals[0].ood_metric));
  EXPECT_EQ(t.heldout_touches, 0u);
  config.model.encoder.input_dim = 10;
  EXPECT_THROW(train_categorical(config, ds), ValidationError);
}
