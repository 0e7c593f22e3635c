#include "relbot/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "relbot/canonical_json.hpp"
#include "relbot/errors.hpp"
#include "relbot/rng.hpp"

namespace relbot::training {
namespace {

using models::ModelKind;
using models::ModelState;
using models::OptimizerState;
using stimuli::Split;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Steps at which checkpoints are due, one per configured fraction.
std::vector<std::pair<std::size_t, double>> checkpoint_steps(const std::vector<double>& fractions, std::size_t total) {
  std::vector<std::pair<std::size_t, double>> out;
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ValidationError("checkpoint fractions must lie in (0, 1]");
    const auto step = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(f * static_cast<double>(total))));
    out.emplace_back(step, f);
  }
  return out;
}

struct LoopHooks {
  // Loss of one step over the given item indices; `rng` is private to the step.
  std::function<double(std::span<const std::size_t> items, Rng& rng)> step;
  // Evaluation at `step`, given the mean loss since the previous evaluation.
  std::function<EvalRecord(const ModelState& state, std::size_t step, double recent_loss)> evaluate;
};

/// Shared epoch/batch loop. Batch order in epoch e depends only on (seed, e), and
/// each step's private stream only on (seed, step), so a longer run replays a
/// shorter one exactly on their shared prefix.
TrainingTrace run_loop(const Schedule& schedule, std::size_t items, ModelState& state,
                       const std::vector<double>& fractions, const LoopHooks& hooks) {
  const std::size_t total = total_steps(schedule, items);
  schedule.validate(total);
  const auto due = checkpoint_steps(fractions, total);
  const std::uint64_t order_seed = derive_seed(schedule.seed, "batch-order");
  const std::uint64_t step_seed = derive_seed(schedule.seed, "step-stream");

  TrainingTrace trace;
  trace.step_loss.reserve(total);
  std::vector<std::size_t> order(items);
  std::size_t step = 0;
  double recent_sum = 0.0;
  std::size_t recent_count = 0;
  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < items; ++i) order[i] = i;
    Rng order_rng(derive_seed(order_seed, epoch));
    order_rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t begin = 0; begin < items; begin += schedule.batch_size) {
      const std::size_t end = std::min(items, begin + schedule.batch_size);
      ++step;
      Rng step_rng(derive_seed(step_seed, step));
      const double loss = hooks.step(std::span<const std::size_t>(order.data() + begin, end - begin), step_rng);
      if (!std::isfinite(loss)) {
        throw DivergenceError("training diverged: non-finite loss at step " + std::to_string(step) +
                                  " (last finite step " + std::to_string(step - 1) + ")",
                              static_cast<long long>(step) - 1);
      }
      trace.step_loss.push_back(loss);
      recent_sum += loss;
      ++recent_count;
      if (step % schedule.eval_interval == 0 || step == total) {
        trace.evals.push_back(hooks.evaluate(state, step, recent_sum / static_cast<double>(recent_count)));
        recent_sum = 0.0;
        recent_count = 0;
      }
      for (const auto& [at, fraction] : due)
        if (at == step) trace.checkpoints.push_back({step, fraction, state});
    }
    trace.epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
  }
  trace.final_state = state;
  return trace;
}

Tensor gather_rows(const Tensor& source, std::span<const std::size_t> rows) {
  const std::size_t width = source.cols();
  Tensor out({rows.size(), width});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double* src = source.raw() + rows[r] * width;
    std::copy(src, src + width, out.raw() + r * width);
  }
  return out;
}

/// Builds a pair batch over stimulus ids, deduplicating shared stimuli.
template <class RowFn>
PairBatch make_pair_batch(std::span<const std::size_t> a, std::span<const std::size_t> b,
                          std::vector<double> targets, std::size_t input_dim, RowFn&& write_row) {
  std::map<std::size_t, std::size_t> slot;
  for (std::size_t id : a) slot.emplace(id, 0);
  for (std::size_t id : b) slot.emplace(id, 0);
  PairBatch batch;
  batch.inputs = Tensor({slot.size(), input_dim});
  std::size_t next = 0;
  for (auto& [id, s] : slot) {
    s = next;
    write_row(id, batch.inputs.raw() + next * input_dim);
    ++next;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    batch.left.push_back(slot.at(a[i]));
    batch.right.push_back(slot.at(b[i]));
  }
  batch.targets = std::move(targets);
  return batch;
}

Tensor selection_matrix(const std::vector<std::size_t>& rows, std::size_t columns) {
  Tensor sel({rows.size(), columns});
  for (std::size_t r = 0; r < rows.size(); ++r) sel.at(r, rows[r]) = 1.0;
  return sel;
}

void check_split(Split split, std::size_t& touches, const char* what) {
  if (split == Split::kTrain) return;
  ++touches;
  throw ValidationError(std::string("leakage: gradient pass read a ") + stimuli::split_name(split) + " " + what);
}

void check_kind(const models::ModelSpec& spec, std::initializer_list<ModelKind> allowed, const char* op) {
  for (ModelKind k : allowed)
    if (spec.kind == k) return;
  throw ValidationError(std::string(op) + ": unsupported model kind '" +
                        std::string(models::model_kind_name(spec.kind)) + "'");
}

std::string csv_number(double v) { return std::isnan(v) ? std::string() : format_double(v); }

}  // namespace

void Schedule::validate(std::size_t total) const {
  if (epochs == 0) throw ValidationError("epochs must be >= 1");
  if (batch_size == 0) throw ValidationError("batch_size must be >= 1");
  if (eval_interval == 0) throw ValidationError("eval_interval must be >= 1");
  if (eval_interval > total)
    throw ValidationError("eval_interval (" + std::to_string(eval_interval) + ") exceeds total steps (" +
                          std::to_string(total) + ")");
  if (!(adam.learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
}

std::size_t total_steps(const Schedule& schedule, std::size_t items) {
  if (schedule.batch_size == 0) throw ValidationError("batch_size must be >= 1");
  if (items == 0) throw ValidationError("training set is empty");
  return schedule.epochs * ((items + schedule.batch_size - 1) / schedule.batch_size);
}

std::string trace_csv(const TrainingTrace& trace) {
  std::ostringstream out;
  out << "step,train_loss,train_metric,id_metric,ood_metric\n";
  std::size_t next_eval = 0;
  for (std::size_t s = 0; s < trace.step_loss.size(); ++s) {
    const std::size_t step = s + 1;
    out << step << ',' << format_double(trace.step_loss[s]);
    if (next_eval < trace.evals.size() && trace.evals[next_eval].step == step) {
      const EvalRecord& e = trace.evals[next_eval++];
      out << ',' << csv_number(e.train_metric) << ',' << csv_number(e.id_metric) << ',' << csv_number(e.ood_metric);
    } else {
      out << ",,,";
    }
    out << '\n';
  }
  return out.str();
}

double metric_value(const EvalRecord& record, Metric metric) {
  switch (metric) {
    case Metric::kTrain: return record.train_metric;
    case Metric::kInDistribution: return record.id_metric;
    case Metric::kOod: return record.ood_metric;
  }
  return kNaN;
}

std::optional<std::size_t> steps_to_threshold(const TrainingTrace& trace, Metric metric, double threshold) {
  for (const EvalRecord& e : trace.evals)
    if (metric_value(e, metric) < threshold) return e.step;
  return std::nullopt;
}

std::optional<std::size_t> steps_to_sustained_threshold(const TrainingTrace& trace, Metric metric, double threshold) {
  std::optional<std::size_t> since;
  for (const EvalRecord& e : trace.evals) {
    if (metric_value(e, metric) < threshold) {
      if (!since) since = e.step;
    } else {
      since.reset();
    }
  }
  return since;
}

double metric_at(const TrainingTrace& trace, std::size_t step, Metric metric) {
  for (const EvalRecord& e : trace.evals)
    if (e.step == step) return metric_value(e, metric);
  throw ValidationError("no evaluation at step " + std::to_string(step));
}

double pair_training_step(ModelState& state, OptimizerState& optimizer, const PairBatch& batch) {
  const std::size_t n = batch.targets.size();
  if (batch.left.size() != n || batch.right.size() != n || n == 0)
    throw ShapeError("pair batch: left, right and targets must have the same positive length");
  ad::Graph graph;
  const models::BoundModel model = models::bind(graph, state);
  const ad::Var emb = models::encode(model, graph.leaf(batch.inputs, false));
  const std::size_t u = batch.inputs.rows();
  const ad::Var ea = ad::matmul(graph.leaf(selection_matrix(batch.left, u), false), emb);
  const ad::Var eb = ad::matmul(graph.leaf(selection_matrix(batch.right, u), false), emb);
  const ad::Var pred = models::embedding_similarity(model, ea, eb);
  const ad::Var target = graph.leaf(Tensor::matrix(n, 1, batch.targets), false);
  const ad::Var loss = ad::mean(ad::square(ad::sub(pred, target)));
  const double value = loss.value().item();
  if (!std::isfinite(value)) return value;
  models::optimizer_step(optimizer, state, graph.backward(loss), model);
  return value;
}

double pair_mse(const ModelState& state, const Tensor& embeddings, std::span<const stimuli::SimilarityPair> pairs) {
  if (pairs.empty()) return kNaN;
  std::vector<std::size_t> a, b;
  for (const auto& p : pairs) {
    a.push_back(p.a);
    b.push_back(p.b);
  }
  const Tensor pred = models::similarity_from_embeddings(state, gather_rows(embeddings, a), gather_rows(embeddings, b));
  double sse = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double d = pred[i] - pairs[i].target;
    sse += d * d;
  }
  return sse / static_cast<double>(pairs.size());
}

// --- Parametric similarity ----------------------------------------------------

ParametricData build_parametric_data(std::size_t grid, double ood_band, std::size_t canvas_size, std::uint64_t seed,
                                     const stimuli::SimilarityDatasetOptions& options) {
  ParametricData data;
  data.dataset = stimuli::build_similarity_pairs(grid, ood_band, seed, options);
  std::vector<stimuli::GrayscaleImage> images;
  images.reserve(data.dataset.stimuli.size());
  for (const auto& s : data.dataset.stimuli) images.push_back(stimuli::render_parametric_shape(s.latents, canvas_size));
  data.images = stimuli::stack_images(images);
  return data;
}

TrainingTrace train_similarity(const ParametricConfig& config, const ParametricData& data) {
  check_kind(config.model, {ModelKind::kRelational, ModelKind::kFeedforward}, "train_similarity");
  const auto& ds = data.dataset;
  if (data.images.cols() != config.model.encoder.input_dim)
    throw ValidationError("train_similarity: image size " + std::to_string(data.images.cols()) +
                          " does not match encoder input_dim " + std::to_string(config.model.encoder.input_dim));
  ModelState state = models::init_parameters(config.model, config.init_seed);
  OptimizerState optimizer = models::make_optimizer(state, config.schedule.adam);
  std::size_t touches = 0;

  LoopHooks hooks;
  hooks.step = [&](std::span<const std::size_t> items, Rng&) {
    std::vector<std::size_t> a, b;
    std::vector<double> targets;
    for (std::size_t i : items) {
      const auto& pair = ds.train[i];
      check_split(pair.split, touches, "pair");
      check_split(ds.stimuli[pair.a].split, touches, "stimulus");
      check_split(ds.stimuli[pair.b].split, touches, "stimulus");
      a.push_back(pair.a);
      b.push_back(pair.b);
      targets.push_back(pair.target);
    }
    const std::size_t dim = data.images.cols();
    const PairBatch batch = make_pair_batch(a, b, std::move(targets), dim, [&](std::size_t id, double* row) {
      const double* src = data.images.raw() + id * dim;
      std::copy(src, src + dim, row);
    });
    return pair_training_step(state, optimizer, batch);
  };
  hooks.evaluate = [&](const ModelState& s, std::size_t step, double) {
    const Tensor emb = models::encode(s, data.images);
    return EvalRecord{step, pair_mse(s, emb, ds.train), pair_mse(s, emb, ds.test), pair_mse(s, emb, ds.ood)};
  };
  TrainingTrace trace = run_loop(config.schedule, ds.train.size(), state, {1.0}, hooks);
  trace.heldout_touches = touches;
  return trace;
}

// --- Oddball encoders ---------------------------------------------------------

OddballData build_oddball_data(std::size_t n_train_trials, std::size_t n_test_trials, std::uint64_t seed,
                               const stimuli::TrialOptions& options) {
  OddballData data;
  data.catalog = stimuli::build_quadrilateral_catalog();
  data.train_trials = stimuli::plan_oddball_trials(data.catalog, n_train_trials, derive_seed(seed, "train-trials"), options);
  data.test_trials = stimuli::plan_oddball_trials(data.catalog, n_test_trials, derive_seed(seed, "test-trials"), options);
  return data;
}

TrainingTrace train_oddball_encoders(const OddballTrainConfig& config, const OddballData& data,
                                     const Evaluator& evaluator) {
  check_kind(config.model, {ModelKind::kRelational, ModelKind::kContrastive}, "train_oddball_encoders");
  const std::size_t canvas = config.trial.canvas_size;
  if (canvas * canvas != config.model.encoder.input_dim)
    throw ValidationError("train_oddball_encoders: canvas " + std::to_string(canvas) +
                          " does not match encoder input_dim " + std::to_string(config.model.encoder.input_dim));
  if (data.train_trials.empty()) throw ValidationError("train_oddball_encoders: no training trials");
  if (!(config.temperature > 0.0)) throw ValidationError("temperature must be positive");
  if (!(config.scale_jitter >= 0.0 && config.scale_jitter < 1.0) || !(config.rotation_jitter >= 0.0))
    throw ValidationError("augmentation jitter out of range");

  constexpr std::size_t kVariants = stimuli::kTrialSize - 1;
  const std::size_t n_categories = data.catalog.size();
  std::vector<std::vector<std::size_t>> trials_of(n_categories);
  for (std::size_t t = 0; t < data.train_trials.size(); ++t) trials_of.at(data.train_trials[t].category_index).push_back(t);
  std::size_t populated = 0;
  for (const auto& list : trials_of) populated += list.empty() ? 0 : 1;

  // Variant item k is variant k % 5 of training trial k / 5. Oddball images are
  // never rendered here.
  const std::size_t dim = canvas * canvas;
  auto render_item = [&](std::size_t item, const stimuli::Placement* override_placement, double* row) {
    const auto& layout = data.train_trials[item / kVariants];
    const auto& category = data.catalog[layout.category_index];
    const stimuli::Placement& placement =
        override_placement ? *override_placement : layout.variant_transforms[item % kVariants];
    const auto image = stimuli::render_quadrilateral(category, category.canonical_vertices, placement, canvas);
    std::copy(image.pixels.begin(), image.pixels.end(), row);
  };

  ModelState state = models::init_parameters(config.model, config.init_seed);
  OptimizerState optimizer = models::make_optimizer(state, config.schedule.adam);

  LoopHooks hooks;
  if (config.model.kind == ModelKind::kRelational) {
    if (populated < 2) throw ValidationError("relational oddball training needs at least two categories");
    hooks.step = [&](std::span<const std::size_t> items, Rng& rng) {
      std::vector<std::size_t> a, b;
      std::vector<double> targets;
      for (std::size_t j = 0; j < items.size(); ++j) {
        const std::size_t anchor = items[j];
        const std::size_t category = data.train_trials[anchor / kVariants].category_index;
        const bool same = j % 2 == 0;
        std::size_t partner_category = category;
        if (!same) {
          do {
            partner_category = (category + 1 + rng.below(n_categories - 1)) % n_categories;
          } while (trials_of[partner_category].empty());
        }
        const auto& pool = trials_of[partner_category];
        const std::size_t partner = pool[rng.below(pool.size())] * kVariants + rng.below(kVariants);
        a.push_back(anchor);
        b.push_back(partner);
        targets.push_back(same ? 1.0 : 0.0);
      }
      const PairBatch batch = make_pair_batch(a, b, std::move(targets), dim,
                                              [&](std::size_t item, double* row) { render_item(item, nullptr, row); });
      return pair_training_step(state, optimizer, batch);
    };
  } else {
    hooks.step = [&](std::span<const std::size_t> items, Rng& rng) {
      const std::size_t n = items.size();
      if (n < 2) return 0.0;  // a lone trailing item has no negatives; skip the update
      Tensor views({2 * n, dim});
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t item = items[j];
        render_item(item, nullptr, views.raw() + j * dim);
        stimuli::Placement jittered = data.train_trials[item / kVariants].variant_transforms[item % kVariants];
        jittered.size_scale *= rng.uniform(1.0 - config.scale_jitter, 1.0 + config.scale_jitter);
        jittered.rotation += rng.uniform(-config.rotation_jitter, config.rotation_jitter);
        render_item(item, &jittered, views.raw() + (n + j) * dim);
      }
      ad::Graph graph;
      const models::BoundModel model = models::bind(graph, state);
      const ad::Var z = models::project(model, models::encode(model, graph.leaf(std::move(views), false)));
      const ad::Var loss = models::contrastive_loss(z, config.temperature);
      const double value = loss.value().item();
      if (!std::isfinite(value)) return value;
      models::optimizer_step(optimizer, state, graph.backward(loss), model);
      return value;
    };
  }
  hooks.evaluate = [&](const ModelState& s, std::size_t step, double recent_loss) {
    EvalRecord record{step, recent_loss, kNaN, kNaN};
    if (evaluator) std::tie(record.id_metric, record.ood_metric) = evaluator(s);
    return record;
  };
  return run_loop(config.schedule, data.train_trials.size() * kVariants, state, config.checkpoint_fractions, hooks);
}

// --- Categorical same/different -----------------------------------------------

double same_different_accuracy(const ModelState& state, const stimuli::CategoricalDataset& data,
                               std::span<const stimuli::SimilarityPair> pairs, double threshold) {
  if (pairs.empty()) throw ValidationError("same_different_accuracy: no pairs");
  std::vector<std::size_t> all(data.stimuli.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const Tensor emb = models::encode(state, data.encode(all));
  std::vector<std::size_t> a, b;
  for (const auto& p : pairs) {
    a.push_back(p.a);
    b.push_back(p.b);
  }
  const Tensor pred = models::similarity_from_embeddings(state, gather_rows(emb, a), gather_rows(emb, b));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const bool said_same = pred[i] > threshold;
    const bool is_same = pairs[i].target >= 0.75;
    correct += said_same == is_same ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

TrainingTrace train_categorical(const CategoricalConfig& config, const stimuli::CategoricalDataset& data) {
  check_kind(config.model, {ModelKind::kRelational, ModelKind::kFeedforward}, "train_categorical");
  if (config.model.encoder.input_dim != 2 * data.n_values)
    throw ValidationError("train_categorical: encoder input_dim must be 2 * n_values = " +
                          std::to_string(2 * data.n_values));
  if (!(config.decision_threshold > 0.0 && config.decision_threshold < 1.0))
    throw ValidationError("decision_threshold must lie in (0, 1)");
  ModelState state = models::init_parameters(config.model, config.init_seed);
  OptimizerState optimizer = models::make_optimizer(state, config.schedule.adam);
  std::size_t touches = 0;
  const std::size_t dim = 2 * data.n_values;

  LoopHooks hooks;
  hooks.step = [&](std::span<const std::size_t> items, Rng&) {
    std::vector<std::size_t> a, b;
    std::vector<double> targets;
    for (std::size_t i : items) {
      const auto& pair = data.train_pairs[i];
      check_split(pair.split, touches, "pair");
      check_split(data.stimuli[pair.a].split, touches, "stimulus");
      check_split(data.stimuli[pair.b].split, touches, "stimulus");
      a.push_back(pair.a);
      b.push_back(pair.b);
      targets.push_back(pair.target);
    }
    const PairBatch batch = make_pair_batch(a, b, std::move(targets), dim, [&](std::size_t id, double* row) {
      const auto code = data.encoding(id);
      std::copy(code.begin(), code.end(), row);
    });
    return pair_training_step(state, optimizer, batch);
  };
  hooks.evaluate = [&](const ModelState& s, std::size_t step, double) {
    return EvalRecord{step, same_different_accuracy(s, data, data.train_pairs, config.decision_threshold),
                      same_different_accuracy(s, data, data.holdout_pairs, config.decision_threshold), kNaN};
  };
  TrainingTrace trace = run_loop(config.schedule, data.train_pairs.size(), state, {1.0}, hooks);
  trace.heldout_touches = touches;
  return trace;
}

}  // namespace relbot::training
