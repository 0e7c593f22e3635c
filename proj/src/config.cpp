#include "relbot/config.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <sstream>

#include "relbot/digest.hpp"
#include "relbot/rng.hpp"

namespace relbot::config {

using models::ModelKind;

std::string_view experiment_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kParametric: return "parametric-similarity";
    case ExperimentKind::kOddball: return "oddball";
    case ExperimentKind::kCategorical: return "categorical";
  }
  return "unknown";
}

std::string format_issue(const Issue& issue) {
  return (issue.path.empty() ? std::string("/") : issue.path) + ": " + issue.message;
}

namespace {

std::string join_issues(const std::vector<Issue>& issues) {
  std::string out;
  for (const Issue& issue : issues) {
    if (!out.empty()) out += '\n';
    out += format_issue(issue);
  }
  return out;
}

std::string show(const Json& value) { return canonical_dump(value); }

std::string show(double value) { return format_double(value); }

// Parsed JSON stores non-negative integers as unsigned, built values may be signed.
bool is_count(const Json& j) {
  return j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0);
}

// Walks one closed JSON object: each accessor consumes a key, checks it and
// records the effective value in `out`; finish() reports keys nobody consumed.
class Section {
 public:
  Section(const Json* object, std::string path, std::vector<Issue>& issues)
      : object_(object), path_(std::move(path)), issues_(issues) {
    if (object_ && !object_->is_object()) {
      fail("", "expected an object");
      object_ = nullptr;
    }
  }

  Json out = Json::object();

  std::size_t uint(const std::string& key, std::size_t fallback, std::size_t min) {
    std::size_t value = fallback;
    if (const Json* j = take(key)) {
      if (!is_count(*j)) {
        fail(key, "expected a non-negative integer, got " + show(*j));
      } else {
        value = j->get<std::size_t>();
        if (value < min) fail(key, key + " ≥ " + std::to_string(min) + " (got " + std::to_string(value) + ")");
      }
    }
    out[key] = value;
    return value;
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
    std::uint64_t value = fallback;
    if (const Json* j = take(key)) {
      if (!is_count(*j))
        fail(key, "expected an unsigned 64-bit integer, got " + show(*j));
      else
        value = j->get<std::uint64_t>();
    }
    out[key] = value;
    return value;
  }

  // `rule` returns an empty string when the value is acceptable, else the rule text.
  double real(const std::string& key, double fallback, const std::function<std::string(double)>& rule) {
    double value = fallback;
    if (const Json* j = take(key)) {
      if (!j->is_number()) {
        fail(key, "expected a number, got " + show(*j));
      } else {
        value = j->get<double>();
        if (const std::string r = rule(value); !r.empty()) fail(key, r + " (got " + show(value) + ")");
      }
    }
    out[key] = value;
    return value;
  }

  std::string text(const std::string& key, const std::string& fallback) {
    std::string value = fallback;
    if (const Json* j = take(key)) {
      if (!j->is_string())
        fail(key, "expected a string, got " + show(*j));
      else
        value = j->get<std::string>();
    }
    out[key] = value;
    return value;
  }

  std::vector<std::size_t> uint_list(const std::string& key, std::vector<std::size_t> fallback, std::size_t min,
                                     bool allow_empty) {
    std::vector<std::size_t> value = std::move(fallback);
    if (const Json* j = take(key)) {
      if (!j->is_array()) {
        fail(key, "expected an array of integers, got " + show(*j));
      } else if (j->empty() && !allow_empty) {
        fail(key, key + " must not be empty");
      } else {
        std::vector<std::size_t> parsed;
        bool ok = true;
        for (std::size_t i = 0; i < j->size(); ++i) {
          const Json& e = (*j)[i];
          const std::string at = key + "/" + std::to_string(i);
          if (!is_count(e)) {
            fail(at, "expected a non-negative integer, got " + show(e));
            ok = false;
          } else if (e.get<std::size_t>() < min) {
            fail(at, key + " entries ≥ " + std::to_string(min) + " (got " + show(e) + ")");
            ok = false;
          } else {
            parsed.push_back(e.get<std::size_t>());
          }
        }
        if (ok) value = std::move(parsed);
      }
    }
    out[key] = value;
    return value;
  }

  std::vector<double> real_list(const std::string& key, std::vector<double> fallback) {
    std::vector<double> value = std::move(fallback);
    if (const Json* j = take(key)) {
      if (!j->is_array()) {
        fail(key, "expected an array of numbers, got " + show(*j));
      } else {
        std::vector<double> parsed;
        bool ok = true;
        for (std::size_t i = 0; i < j->size(); ++i) {
          if (!(*j)[i].is_number()) {
            fail(key + "/" + std::to_string(i), "expected a number, got " + show((*j)[i]));
            ok = false;
          } else {
            parsed.push_back((*j)[i].get<double>());
          }
        }
        if (ok) value = std::move(parsed);
      }
    }
    out[key] = Json::array();
    for (double v : value) out[key].push_back(v);
    return value;
  }

  /// Raw access for nested structures; the caller validates.
  const Json* child(const std::string& key) { return take(key); }

  void fail(const std::string& key, std::string message) {
    issues_.push_back({key.empty() ? path_ : path_ + "/" + key, std::move(message)});
  }

  const std::string& path() const { return path_; }

  void finish() {
    if (!object_) return;
    for (const auto& [key, value] : object_->items())
      if (!consumed_.count(key)) fail(key, "unknown key \"" + key + "\"");
  }

 private:
  const Json* take(const std::string& key) {
    consumed_.insert(key);
    if (!object_) return nullptr;
    const auto it = object_->find(key);
    return it == object_->end() ? nullptr : &*it;
  }

  const Json* object_;
  std::string path_;
  std::vector<Issue>& issues_;
  std::set<std::string> consumed_;
};

std::function<std::string(double)> positive(const std::string& key) {
  return [key](double v) { return v > 0.0 && std::isfinite(v) ? std::string() : key + " > 0"; };
}

std::function<std::string(double)> open_unit(const std::string& key) {
  return [key](double v) { return v > 0.0 && v < 1.0 ? std::string() : key + " in (0, 1)"; };
}

std::function<std::string(double)> half_open_unit(const std::string& key) {
  return [key](double v) { return v >= 0.0 && v < 1.0 ? std::string() : key + " in [0, 1)"; };
}

std::function<std::string(double)> non_negative(const std::string& key) {
  return [key](double v) { return v >= 0.0 && std::isfinite(v) ? std::string() : key + " ≥ 0"; };
}

TrainSettings read_train(Section& s, const TrainSettings& d, ExperimentKind kind) {
  TrainSettings t;
  t.epochs = s.uint("epochs", d.epochs, 1);
  t.batch_size = s.uint("batch_size", d.batch_size, 1);
  t.eval_interval = s.uint("eval_interval", d.eval_interval, 1);
  t.adam.learning_rate = s.real("learning_rate", d.adam.learning_rate, positive("learning_rate"));
  t.adam.beta1 = s.real("beta1", d.adam.beta1, half_open_unit("beta1"));
  t.adam.beta2 = s.real("beta2", d.adam.beta2, half_open_unit("beta2"));
  t.adam.epsilon = s.real("epsilon", d.adam.epsilon, positive("epsilon"));
  if (kind == ExperimentKind::kOddball) {
    t.temperature = s.real("temperature", d.temperature, positive("temperature"));
    t.scale_jitter = s.real("scale_jitter", d.scale_jitter, half_open_unit("scale_jitter"));
    t.rotation_jitter = s.real("rotation_jitter", d.rotation_jitter, non_negative("rotation_jitter"));
    t.checkpoint_fractions = s.real_list("checkpoint_fractions", d.checkpoint_fractions);
    const auto& f = t.checkpoint_fractions;
    bool ok = !f.empty();
    for (std::size_t i = 0; i < f.size(); ++i)
      ok = ok && f[i] > 0.0 && f[i] <= 1.0 && (i == 0 || f[i] > f[i - 1]);
    if (!ok) s.fail("checkpoint_fractions", "checkpoint_fractions must be strictly increasing within (0, 1]");
  }
  return t;
}

std::vector<ModelKind> allowed_kinds(ExperimentKind kind) {
  if (kind == ExperimentKind::kOddball) return {ModelKind::kRelational, ModelKind::kContrastive};
  return {ModelKind::kRelational, ModelKind::kFeedforward};
}

std::optional<ExperimentKind> parse_experiment(const std::string& name) {
  for (ExperimentKind k : {ExperimentKind::kParametric, ExperimentKind::kOddball, ExperimentKind::kCategorical})
    if (experiment_name(k) == name) return k;
  return std::nullopt;
}

std::size_t items_per_epoch(const ExperimentConfig& c) {
  switch (c.kind) {
    case ExperimentKind::kParametric: {
      const std::size_t n = c.parametric.grid * c.parametric.grid;
      return n * (n + 1) / 2;
    }
    case ExperimentKind::kOddball: return c.oddball.n_train_trials * (stimuli::kTrialSize - 1);
    case ExperimentKind::kCategorical: return c.categorical.n_train * c.categorical.n_train;
  }
  return 0;
}

// Parses everything, recording issues; the result is meaningful only when no
// issues were added.
ExperimentConfig parse(const Json& raw, std::vector<Issue>& issues) {
  ExperimentConfig c;
  Section top(&raw, "", issues);
  if (!raw.is_object()) return c;

  const Json* experiment = top.child("experiment");
  std::optional<ExperimentKind> kind;
  if (!experiment) {
    top.fail("experiment", "required key \"experiment\" is missing");
  } else if (!experiment->is_string() || !(kind = parse_experiment(experiment->get<std::string>()))) {
    top.fail("experiment", "experiment must be one of parametric-similarity, oddball, categorical, got " + show(*experiment));
  }
  if (!kind) {
    // Without a kind the sections cannot be checked; report top-level unknowns only.
    for (const char* key : {"name", "master_seed", "output_dir", "arms", "model", "stimuli", "train", "analysis"})
      top.child(key);
    top.finish();
    return c;
  }
  c.kind = *kind;
  top.out["experiment"] = std::string(experiment_name(c.kind));
  c.name = top.text("name", std::string(experiment_name(c.kind)));
  if (c.name.empty() || c.name.find_first_of("/\\") != std::string::npos) top.fail("name", "name must be a non-empty plain file name");
  c.master_seed = top.u64("master_seed", 0);
  if (const Json* out = top.child("output_dir")) {
    if (!out->is_string() || out->get<std::string>().empty())
      top.fail("output_dir", "expected a non-empty string, got " + show(*out));
    else
      c.output_dir = out->get<std::string>();
  }

  // model
  Section model(top.child("model"), "/model", issues);
  c.model.hidden_dims = model.uint_list("hidden_dims", c.model.hidden_dims, 1, true);
  c.model.embedding_dim = model.uint("embedding_dim", c.model.embedding_dim, 2);
  c.model.head_hidden_dims = model.uint_list("head_hidden_dims", c.model.head_hidden_dims, 1, true);
  c.model.projection_dim = model.uint("projection_dim", c.model.projection_dim, 1);
  const std::string metric = model.text("metric", "euclidean");
  if (metric == "euclidean" || metric == "cosine")
    c.model.metric = models::parse_metric(metric);
  else
    model.fail("metric", "metric must be euclidean or cosine, got \"" + metric + "\"");
  model.finish();

  // stimuli and analysis
  Section stim(top.child("stimuli"), "/stimuli", issues);
  Section an(top.child("analysis"), "/analysis", issues);
  switch (c.kind) {
    case ExperimentKind::kParametric: {
      auto& p = c.parametric;
      p.canvas_size = stim.uint("canvas_size", p.canvas_size, stimuli::kMinCanvas);
      p.grid = stim.uint("grid", p.grid, 4);
      p.ood_band = stim.real("ood_band", p.ood_band, [](double v) {
        return v > 0.0 && v <= stimuli::kLatentCap - 1.0 ? std::string() : "ood_band in (0, 0.5]";
      });
      p.pairs.test_pairs = stim.uint("test_pairs", p.pairs.test_pairs, 1);
      p.pairs.ood_pairs = stim.uint("ood_pairs", p.pairs.ood_pairs, 1);
      p.pairs.ood_levels = stim.uint("ood_levels", p.pairs.ood_levels, 1);
      p.train_threshold = an.real("train_threshold", p.train_threshold, positive("train_threshold"));
      p.ood_threshold = an.real("ood_threshold", p.ood_threshold, positive("ood_threshold"));
      break;
    }
    case ExperimentKind::kOddball: {
      auto& o = c.oddball;
      o.trial.canvas_size = stim.uint("canvas_size", o.trial.canvas_size, stimuli::kMinCanvas);
      o.n_train_trials = stim.uint("n_train_trials", o.n_train_trials, 1);
      const std::size_t catalog_size = stimuli::build_quadrilateral_catalog().size();
      const std::size_t min_test = 20 * catalog_size;
      o.n_test_trials = stim.uint("n_test_trials", o.n_test_trials, min_test);
      o.trial.magnitude = stim.real("magnitude", o.trial.magnitude, open_unit("magnitude"));
      o.trial.min_scale = stim.real("min_scale", o.trial.min_scale, positive("min_scale"));
      o.trial.max_scale = stim.real("max_scale", o.trial.max_scale, positive("max_scale"));
      if (o.trial.min_scale > o.trial.max_scale) stim.fail("max_scale", "max_scale ≥ min_scale");
      o.decoding.n_folds = an.uint("decoding_folds", o.decoding.n_folds, 2);
      o.decoding.max_components = an.uint("max_components", o.decoding.max_components, 1);
      o.decoding.steps = an.uint("decoding_steps", o.decoding.steps, 1);
      o.decoding.learning_rate = an.real("decoding_learning_rate", o.decoding.learning_rate, positive("decoding_learning_rate"));
      break;
    }
    case ExperimentKind::kCategorical: {
      auto& k = c.categorical;
      k.n_values = stim.uint("n_values", k.n_values, 2);
      k.n_train = stim.uint("n_train", k.n_train, 1);
      if (k.n_train > k.n_values * k.n_values)
        stim.fail("n_train", "n_train ≤ n_values² (" + std::to_string(k.n_values * k.n_values) + ")");
      k.decision_threshold = an.real("decision_threshold", k.decision_threshold, open_unit("decision_threshold"));
      break;
    }
  }
  stim.finish();
  an.finish();

  // train defaults, then arms
  Section train(top.child("train"), "/train", issues);
  const TrainSettings section_train = read_train(train, TrainSettings{}, c.kind);
  train.finish();

  Json arms_out = Json::array();
  const Json* arms = top.child("arms");
  std::vector<Json> arm_specs;
  if (!arms) {
    for (ModelKind k : allowed_kinds(c.kind)) arm_specs.push_back(Json{{"model", std::string(models::model_kind_name(k))}});
  } else if (!arms->is_array() || arms->empty()) {
    top.fail("arms", "arms must be a non-empty array");
  } else {
    arm_specs.assign(arms->begin(), arms->end());
  }
  std::set<std::string> names;
  const auto kinds = allowed_kinds(c.kind);
  for (std::size_t i = 0; i < arm_specs.size(); ++i) {
    Section arm(&arm_specs[i], "/arms/" + std::to_string(i), issues);
    ArmConfig a;
    const Json* model_name = arm.child("model");
    if (!model_name) {
      arm.fail("model", "required key \"model\" is missing");
    } else if (!model_name->is_string()) {
      arm.fail("model", "expected a string, got " + show(*model_name));
    } else {
      const std::string n = model_name->get<std::string>();
      bool found = false;
      for (ModelKind k : kinds)
        if (models::model_kind_name(k) == n) {
          a.kind = k;
          found = true;
        }
      if (!found) {
        arm.fail("model", std::string(experiment_name(c.kind)) + " arms must be " +
                              std::string(models::model_kind_name(kinds[0])) + " or " +
                              std::string(models::model_kind_name(kinds[1])) + ", got \"" + n + "\"");
      }
      arm.out["model"] = n;
      a.name = arm.text("name", n);
      if (a.name.empty() || a.name.find_first_of("/\\.") != std::string::npos)
        arm.fail("name", "arm name must be a non-empty plain directory name");
      if (!names.insert(a.name).second) arm.fail("name", "duplicate arm name \"" + a.name + "\"");
    }
    Section arm_train(arm.child("train"), arm.path() + "/train", issues);
    a.train = read_train(arm_train, section_train, c.kind);
    arm_train.finish();
    arm.out["train"] = arm_train.out;
    arm.finish();
    arms_out.push_back(arm.out);
    c.arms.push_back(std::move(a));
  }
  top.finish();

  // Cross-field rules that need the parsed values.
  if (issues.empty()) {
    for (std::size_t i = 0; i < c.arms.size(); ++i) {
      const ArmConfig& a = c.arms[i];
      const std::string path = "/arms/" + std::to_string(i) + "/train";
      const std::size_t steps = c.total_steps(a);
      if (a.train.eval_interval > steps)
        issues.push_back({path + "/eval_interval", "eval_interval ≤ total steps (" + std::to_string(steps) + ")"});
      if (a.kind == ModelKind::kContrastive && a.train.batch_size < 2)
        issues.push_back({path + "/batch_size", "contrastive batch_size ≥ 2"});
    }
    if (c.kind == ExperimentKind::kOddball && c.oddball.decoding.n_folds > c.oddball.n_test_trials * stimuli::kTrialSize)
      issues.push_back({"/analysis/decoding_folds", "decoding_folds ≤ number of test images"});
  }

  Json resolved = top.out;
  resolved.erase("output_dir");
  resolved["model"] = model.out;
  resolved["stimuli"] = stim.out;
  resolved["analysis"] = an.out;
  resolved["train"] = train.out;
  resolved["arms"] = arms_out;
  c.resolved = std::move(resolved);
  return c;
}

}  // namespace

ConfigError::ConfigError(std::vector<Issue> issues)
    : ValidationError(join_issues(issues)), issues_(std::move(issues)) {}

std::size_t ExperimentConfig::input_dim() const {
  switch (kind) {
    case ExperimentKind::kParametric: return parametric.canvas_size * parametric.canvas_size;
    case ExperimentKind::kOddball: return oddball.trial.canvas_size * oddball.trial.canvas_size;
    case ExperimentKind::kCategorical: return 2 * categorical.n_values;
  }
  return 0;
}

models::ModelSpec ExperimentConfig::model_spec(const ArmConfig& arm) const {
  models::ModelSpec spec;
  spec.kind = arm.kind;
  spec.encoder.input_dim = input_dim();
  spec.encoder.hidden_dims = model.hidden_dims;
  spec.encoder.embedding_dim = model.embedding_dim;
  spec.head_hidden_dims = model.head_hidden_dims;
  spec.projection_dim = model.projection_dim;
  spec.metric = model.metric;
  return spec;
}

std::size_t ExperimentConfig::total_steps(const ArmConfig& arm) const {
  return training::total_steps(make_schedule(*this, arm), items_per_epoch(*this));
}

std::vector<Issue> validate(const Json& raw) {
  std::vector<Issue> issues;
  parse(raw, issues);
  return issues;
}

ExperimentConfig resolve(const Json& raw) {
  std::vector<Issue> issues;
  ExperimentConfig c = parse(raw, issues);
  if (!issues.empty()) throw ConfigError(std::move(issues));
  return c;
}

Json load_json_file(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError({{"", std::string("invalid JSON: ") + e.what()}});
  }
}

std::uint64_t data_seed(const ExperimentConfig& config) { return derive_seed(config.master_seed, "data"); }

std::uint64_t init_seed(const ExperimentConfig& config, const ArmConfig& arm) {
  return derive_seed(config.master_seed, "arm/" + arm.name + "/init");
}

std::uint64_t schedule_seed(const ExperimentConfig& config, const ArmConfig& arm) {
  return derive_seed(config.master_seed, "arm/" + arm.name + "/schedule");
}

std::uint64_t analysis_seed(const ExperimentConfig& config, const ArmConfig& arm) {
  return derive_seed(config.master_seed, "arm/" + arm.name + "/analysis");
}

training::Schedule make_schedule(const ExperimentConfig& config, const ArmConfig& arm) {
  training::Schedule s;
  s.epochs = arm.train.epochs;
  s.batch_size = arm.train.batch_size;
  s.eval_interval = arm.train.eval_interval;
  s.seed = schedule_seed(config, arm);
  s.adam = arm.train.adam;
  return s;
}

}  // namespace relbot::config
