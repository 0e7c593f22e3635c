#include "relbot/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <map>
#include <sstream>

#include "relbot/analysis.hpp"
#include "relbot/digest.hpp"
#include "relbot/errors.hpp"
#include "relbot/rng.hpp"
#include "relbot/training.hpp"

#ifndef RELBOT_VERSION
#define RELBOT_VERSION "0.0.0"
#endif

namespace relbot::harness {

namespace fs = std::filesystem;
using config::ArmConfig;
using config::ExperimentConfig;
using config::ExperimentKind;
using models::ModelKind;

std::string_view tool_version() { return RELBOT_VERSION; }

namespace {

constexpr const char* kManifestName = "manifest.json";
constexpr const char* kSummaryName = "summary.json";

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json step_or_null(const std::optional<std::size_t>& s) { return s ? Json(*s) : Json(nullptr); }

void log_line(const RunOptions& options, const std::string& line) {
  if (options.log) *options.log << line << std::endl;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Writes artifacts under the run directory and remembers their checksums.
class Artifacts {
 public:
  explicit Artifacts(fs::path root) : root_(std::move(root)) {}

  std::string write(const std::string& relative, std::string_view bytes) {
    write_file(root_ / relative, bytes);
    files_[relative] = {sha256_hex(bytes), bytes.size()};
    return relative;
  }

  Json listing() const {
    Json out = Json::array();
    for (const auto& [path, entry] : files_)
      out.push_back(Json{{"path", path}, {"sha256", entry.first}, {"bytes", entry.second}});
    return out;
  }

 private:
  fs::path root_;
  std::map<std::string, std::pair<std::string, std::size_t>> files_;
};

struct ArmRecord {
  Json manifest = Json::object();  // name, model, checkpoints, metrics
  Json summary = Json::object();
  double seconds = 0.0;
  std::vector<double> epoch_seconds;
};

Json arm_header(const ArmConfig& arm) {
  return Json{{"name", arm.name}, {"model", std::string(models::model_kind_name(arm.kind))},
              {"checkpoints", Json::array()}, {"metrics", Json::array()}};
}

template <typename Fn>
auto train_arm(const ArmConfig& arm, Fn&& fn) {
  try {
    return fn();
  } catch (const DivergenceError& e) {
    throw DivergenceError("arm " + arm.name + ": " + e.what(), e.last_finite_step());
  }
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  Tensor out({rows.size(), x.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(x.raw() + rows[i] * x.cols(), x.raw() + (rows[i] + 1) * x.cols(), out.raw() + i * x.cols());
  return out;
}

// PCA fitted on `fit_rows` (all rows when empty), applied to every row.
// Returns pc1, pc2 per row; missing components are 0.
std::vector<std::pair<double, double>> pca_scores(const Tensor& emb, std::span<const std::size_t> fit_rows) {
  const Tensor fit_data = fit_rows.empty() ? emb : gather_rows(emb, fit_rows);
  const analysis::PcaResult fit =
      analysis::pca(fit_data, std::min<std::size_t>({2, fit_data.cols(), fit_data.rows()}));
  std::vector<std::pair<double, double>> out(emb.rows(), {0.0, 0.0});
  if (fit.count() == 0) return out;
  const Tensor scores = fit.project(emb);
  for (std::size_t i = 0; i < emb.rows(); ++i)
    out[i] = {scores.at(i, 0), fit.count() > 1 ? scores.at(i, 1) : 0.0};
  return out;
}

void add_checkpoint(ArmRecord& rec, Artifacts& files, const std::string& arm, const std::string& file,
                    const models::ModelState& state, std::size_t step) {
  const std::string path = files.write(arm + "/" + file, models::checkpoint_bytes(state));
  rec.manifest["checkpoints"].push_back(Json{{"path", path}, {"step", step}});
}

void add_metric(ArmRecord& rec, Artifacts& files, const std::string& relative, const std::string& bytes) {
  rec.manifest["metrics"].push_back(files.write(relative, bytes));
}

// --- Parametric similarity ----------------------------------------------------

std::vector<ArmRecord> run_parametric(const ExperimentConfig& c, Artifacts& files, Json& comparison,
                                      const RunOptions& options) {
  const auto& p = c.parametric;
  log_line(options, "building parametric stimuli (grid " + std::to_string(p.grid) + ")");
  const training::ParametricData data =
      training::build_parametric_data(p.grid, p.ood_band, p.canvas_size, config::data_seed(c), p.pairs);
  const auto& stim = data.dataset.stimuli;
  std::vector<std::size_t> in_distribution = data.dataset.ids_with(stimuli::Split::kTrain);
  for (std::size_t id : data.dataset.ids_with(stimuli::Split::kTest)) in_distribution.push_back(id);
  Tensor latents({in_distribution.size(), 2});
  for (std::size_t i = 0; i < in_distribution.size(); ++i) {
    latents.at(i, 0) = stim[in_distribution[i]].latents.size;
    latents.at(i, 1) = stim[in_distribution[i]].latents.luminosity;
  }

  std::vector<ArmRecord> records;
  std::map<std::string, training::TrainingTrace> traces;
  for (const ArmConfig& arm : c.arms) {
    ArmRecord rec;
    rec.manifest = arm_header(arm);
    training::ParametricConfig pc;
    pc.model = c.model_spec(arm);
    pc.grid = p.grid;
    pc.ood_band = p.ood_band;
    pc.canvas_size = p.canvas_size;
    pc.pairs = p.pairs;
    pc.schedule = config::make_schedule(c, arm);
    pc.init_seed = config::init_seed(c, arm);
    log_line(options, "[" + arm.name + "] training " + std::to_string(c.total_steps(arm)) + " steps");
    const auto start = std::chrono::steady_clock::now();
    training::TrainingTrace trace = train_arm(arm, [&] { return training::train_similarity(pc, data); });
    rec.seconds = seconds_since(start);
    rec.epoch_seconds = trace.epoch_seconds;

    add_checkpoint(rec, files, arm.name, "final.ckpt", trace.final_state, trace.final_state.step_count);
    add_metric(rec, files, arm.name + "/trace.csv", training::trace_csv(trace));

    const Tensor emb = models::encode(trace.final_state, data.images);
    const analysis::AxesResult axes = analysis::dimension_axes(gather_rows(emb, in_distribution), latents);
    const auto scores = pca_scores(emb, in_distribution);
    std::ostringstream pca;
    pca << "id,split,size,luminosity,pc1,pc2\n";
    for (const auto& s : stim)
      pca << s.id << ',' << stimuli::split_name(s.split) << ',' << format_double(s.latents.size) << ','
          << format_double(s.latents.luminosity) << ',' << format_double(scores[s.id].first) << ','
          << format_double(scores[s.id].second) << '\n';
    add_metric(rec, files, arm.name + "/pca.csv", pca.str());

    const auto to_train = training::steps_to_sustained_threshold(trace, training::Metric::kTrain, p.train_threshold);
    const auto to_ood = training::steps_to_sustained_threshold(trace, training::Metric::kOod, p.ood_threshold);
    std::optional<std::size_t> converged;
    if (to_train && to_ood) converged = std::max(*to_train, *to_ood);
    const training::EvalRecord& last = trace.evals.back();
    rec.summary = Json{{"model", std::string(models::model_kind_name(arm.kind))},
                       {"total_steps", trace.step_loss.size()},
                       {"steps_to_train_threshold", step_or_null(to_train)},
                       {"steps_to_ood_threshold", step_or_null(to_ood)},
                       {"convergence_step", step_or_null(converged)},
                       {"final_train_mse", number_or_null(last.train_metric)},
                       {"final_id_mse", number_or_null(last.id_metric)},
                       {"final_ood_mse", number_or_null(last.ood_metric)},
                       {"angle_degrees", axes.angle_degrees},
                       {"axis_components", axes.n_components}};
    log_line(options, "[" + arm.name + "] angle " + format_double(axes.angle_degrees));
    traces.emplace(arm.name, std::move(trace));
    records.push_back(std::move(rec));
  }

  // Feedforward OOD error at the step where the relational arm converged.
  const ArmConfig* rel = nullptr;
  const ArmConfig* ff = nullptr;
  for (const ArmConfig& arm : c.arms) {
    if (arm.kind == ModelKind::kRelational && !rel) rel = &arm;
    if (arm.kind == ModelKind::kFeedforward && !ff) ff = &arm;
  }
  if (rel && ff) {
    const auto& rt = traces.at(rel->name);
    const auto& ft = traces.at(ff->name);
    const auto a = training::steps_to_sustained_threshold(rt, training::Metric::kTrain, p.train_threshold);
    const auto b = training::steps_to_sustained_threshold(rt, training::Metric::kOod, p.ood_threshold);
    comparison = Json{{"relational_arm", rel->name}, {"feedforward_arm", ff->name}};
    if (a && b) {
      const std::size_t step = std::max(*a, *b);
      comparison["relational_convergence_step"] = step;
      const double r = training::metric_at(rt, step, training::Metric::kOod);
      // The feedforward arm may have a shorter schedule; compare only at a shared eval step.
      bool shared = false;
      for (const auto& e : ft.evals) shared = shared || e.step == step;
      if (shared) {
        const double f = training::metric_at(ft, step, training::Metric::kOod);
        comparison["relational_ood_mse"] = r;
        comparison["feedforward_ood_mse"] = f;
        comparison["ood_ratio"] = number_or_null(f / r);
      } else {
        comparison["relational_ood_mse"] = r;
        comparison["feedforward_ood_mse"] = nullptr;
        comparison["ood_ratio"] = nullptr;
      }
    } else {
      comparison["relational_convergence_step"] = nullptr;
      comparison["ood_ratio"] = nullptr;
    }
  }
  return records;
}

// --- Oddball ------------------------------------------------------------------

std::vector<ArmRecord> run_oddball(const ExperimentConfig& c, Artifacts& files, const RunOptions& options) {
  const auto& o = c.oddball;
  const std::size_t canvas = o.trial.canvas_size;
  log_line(options, "planning " + std::to_string(o.n_train_trials) + " training and " +
                        std::to_string(o.n_test_trials) + " test trials");
  const training::OddballData data =
      training::build_oddball_data(o.n_train_trials, o.n_test_trials, config::data_seed(c), o.trial);

  // Test images are rendered once.
  const OddballProbe probe = render_oddball_probe(data, canvas);
  const Tensor& test_images = probe.images;
  const std::size_t n_images = test_images.rows();
  const training::Evaluator evaluator = [&](const models::ModelState& state) {
    const auto picks = analysis::pick_all(models::encode(state, test_images));
    std::size_t wrong = 0;
    for (std::size_t t = 0; t < picks.size(); ++t) wrong += picks[t] != data.test_trials[t].oddball_index ? 1 : 0;
    return std::pair<double, double>{static_cast<double>(wrong) / static_cast<double>(picks.size()),
                                     std::nan("")};
  };

  std::vector<ArmRecord> records;
  for (const ArmConfig& arm : c.arms) {
    ArmRecord rec;
    rec.manifest = arm_header(arm);
    training::OddballTrainConfig oc;
    oc.model = c.model_spec(arm);
    oc.trial = o.trial;
    oc.schedule = config::make_schedule(c, arm);
    oc.init_seed = config::init_seed(c, arm);
    oc.temperature = arm.train.temperature;
    oc.scale_jitter = arm.train.scale_jitter;
    oc.rotation_jitter = arm.train.rotation_jitter;
    oc.checkpoint_fractions = arm.train.checkpoint_fractions;
    log_line(options, "[" + arm.name + "] training " + std::to_string(c.total_steps(arm)) + " steps");
    const auto start = std::chrono::steady_clock::now();
    training::TrainingTrace trace =
        train_arm(arm, [&] { return training::train_oddball_encoders(oc, data, evaluator); });
    rec.epoch_seconds = trace.epoch_seconds;
    add_metric(rec, files, arm.name + "/trace.csv", training::trace_csv(trace));

    std::ostringstream curve_csv;
    curve_csv << "step,fraction,category,regularity_score,error_rate,trial_count\n";
    Json checkpoints = Json::array();
    Tensor last_embeddings;
    Json final_table = Json::array();
    for (const auto& ck : trace.checkpoints) {
      add_checkpoint(rec, files, arm.name, "step_" + std::to_string(ck.step) + ".ckpt", ck.state, ck.step);
      last_embeddings = models::encode(ck.state, test_images);
      const auto picks = analysis::pick_all(last_embeddings);
      const auto curve = analysis::error_rates_by_category(data.test_trials, data.catalog, picks);
      double mean_error = 0.0;
      final_table = Json::array();
      for (const auto& e : curve.categories) {
        curve_csv << ck.step << ',' << format_double(ck.fraction) << ',' << e.name << ',' << e.regularity_score
                  << ',' << format_double(e.error_rate) << ',' << e.trial_count << '\n';
        mean_error += e.error_rate / static_cast<double>(curve.categories.size());
        final_table.push_back(Json{{"category", e.name}, {"regularity_score", e.regularity_score},
                                   {"error_rate", e.error_rate}, {"trial_count", e.trial_count}});
      }
      checkpoints.push_back(Json{{"step", ck.step},
                                 {"fraction", ck.fraction},
                                 {"slope", number_or_null(curve.slope)},
                                 {"spearman", number_or_null(curve.spearman)},
                                 {"mean_error", mean_error}});
    }
    if (trace.checkpoints.empty() || trace.checkpoints.back().fraction < 1.0)
      add_checkpoint(rec, files, arm.name, "final.ckpt", trace.final_state, trace.final_state.step_count);
    add_metric(rec, files, arm.name + "/regularity.csv", curve_csv.str());

    // Decoding and the scatter use the last checkpoint.
    const OddballDecoding decoded = decode_oddball(c, arm, last_embeddings, probe);
    const analysis::DecodingReport& reg = decoded.regularity;
    const analysis::DecodingReport& cat = decoded.category;
    add_metric(rec, files, arm.name + "/decoding_regularity.csv", analysis::decoding_folds_csv(reg));
    add_metric(rec, files, arm.name + "/decoding_category.csv", analysis::decoding_folds_csv(cat));

    const auto scores = pca_scores(last_embeddings, {});
    std::ostringstream pca;
    pca << "trial,position,category,regularity_score,oddball,pc1,pc2\n";
    for (std::size_t row = 0; row < n_images; ++row) {
      const std::size_t t = row / stimuli::kTrialSize, p = row % stimuli::kTrialSize;
      const auto& layout = data.test_trials[t];
      pca << t << ',' << p << ',' << data.catalog[layout.category_index].name << ',' << probe.regularity[row] << ','
          << (p == layout.oddball_index ? 1 : 0) << ',' << format_double(scores[row].first) << ','
          << format_double(scores[row].second) << '\n';
    }
    add_metric(rec, files, arm.name + "/pca.csv", pca.str());
    rec.seconds = seconds_since(start);

    const Json& last = checkpoints.back();
    rec.summary = Json{{"model", std::string(models::model_kind_name(arm.kind))},
                       {"total_steps", trace.step_loss.size()},
                       {"checkpoints", checkpoints},
                       {"final_step", last["step"]},
                       {"final_slope", last["slope"]},
                       {"final_spearman", last["spearman"]},
                       {"final_error_table", final_table},
                       {"regularity_decoding", reg.to_json()},
                       {"category_decoding", cat.to_json()}};
    log_line(options, "[" + arm.name + "] slope " + canonical_dump(last["slope"]) + ", spearman " +
                          canonical_dump(last["spearman"]) + ", regularity R2 " + format_double(reg.mean_score) +
                          ", category accuracy " + format_double(cat.mean_score));
    records.push_back(std::move(rec));
  }
  return records;
}

// --- Categorical ---------------------------------------------------------------

std::vector<ArmRecord> run_categorical(const ExperimentConfig& c, Artifacts& files, const RunOptions& options) {
  const auto& k = c.categorical;
  const stimuli::CategoricalDataset data = stimuli::build_onehot_dataset(k.n_values, k.n_train, config::data_seed(c));
  std::vector<std::size_t> all(data.stimuli.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const Tensor inputs = data.encode(all);

  std::vector<ArmRecord> records;
  for (const ArmConfig& arm : c.arms) {
    ArmRecord rec;
    rec.manifest = arm_header(arm);
    training::CategoricalConfig cc;
    cc.model = c.model_spec(arm);
    cc.n_values = k.n_values;
    cc.n_train = k.n_train;
    cc.schedule = config::make_schedule(c, arm);
    cc.init_seed = config::init_seed(c, arm);
    cc.decision_threshold = k.decision_threshold;
    log_line(options, "[" + arm.name + "] training " + std::to_string(c.total_steps(arm)) + " steps");
    const auto start = std::chrono::steady_clock::now();
    training::TrainingTrace trace = train_arm(arm, [&] { return training::train_categorical(cc, data); });
    rec.seconds = seconds_since(start);
    rec.epoch_seconds = trace.epoch_seconds;
    add_checkpoint(rec, files, arm.name, "final.ckpt", trace.final_state, trace.final_state.step_count);
    add_metric(rec, files, arm.name + "/trace.csv", training::trace_csv(trace));

    const Tensor emb = models::encode(trace.final_state, inputs);
    const auto scores = pca_scores(emb, {});
    std::ostringstream pca;
    pca << "id,feature_a,feature_b,split,pc1,pc2\n";
    for (const auto& s : data.stimuli)
      pca << s.id << ',' << s.feature_a << ',' << s.feature_b << ',' << stimuli::split_name(s.split) << ','
          << format_double(scores[s.id].first) << ',' << format_double(scores[s.id].second) << '\n';
    add_metric(rec, files, arm.name + "/pca.csv", pca.str());

    std::optional<std::size_t> perfect;
    for (const auto& e : trace.evals)
      if (!perfect && e.train_metric == 1.0) perfect = e.step;
    const auto& last = trace.evals.back();
    rec.summary = Json{{"model", std::string(models::model_kind_name(arm.kind))},
                       {"total_steps", trace.step_loss.size()},
                       {"train_accuracy", last.train_metric},
                       {"holdout_accuracy", last.id_metric},
                       {"steps_to_perfect_train", step_or_null(perfect)}};
    log_line(options, "[" + arm.name + "] train accuracy " + format_double(last.train_metric) +
                          ", holdout accuracy " + format_double(last.id_metric));
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace

OddballProbe render_oddball_probe(const training::OddballData& data, std::size_t canvas) {
  OddballProbe probe;
  const std::size_t n_images = data.test_trials.size() * stimuli::kTrialSize;
  probe.images = Tensor({n_images, canvas * canvas});
  probe.regularity.resize(n_images);
  probe.labels.resize(n_images);
  for (std::size_t t = 0; t < data.test_trials.size(); ++t) {
    const auto& layout = data.test_trials[t];
    const auto& category = data.catalog[layout.category_index];
    for (std::size_t p = 0; p < stimuli::kTrialSize; ++p) {
      const std::size_t row = t * stimuli::kTrialSize + p;
      const auto image = stimuli::render_trial_image(layout, category, p, canvas);
      std::copy(image.pixels.begin(), image.pixels.end(), probe.images.raw() + row * canvas * canvas);
      probe.labels[row] = layout.category_index;
      probe.regularity[row] = p == layout.oddball_index ? stimuli::measure_properties(layout.oddball_vertices).score()
                                                        : category.regularity_score;
    }
  }
  return probe;
}

OddballDecoding decode_oddball(const ExperimentConfig& c, const ArmConfig& arm, const Tensor& embeddings,
                               const OddballProbe& probe) {
  analysis::DecodingOptions options = c.oddball.decoding;
  options.seed = config::analysis_seed(c, arm);
  OddballDecoding out{analysis::regularity_decoding(embeddings, probe.regularity, options),
                      analysis::category_decoding(embeddings, probe.labels, options)};
  out.regularity.target = "regularity_score";
  out.category.target = "category";
  return out;
}

namespace {

Json experiment_notes(const ExperimentConfig& c) {
  Json notes = Json::object();
  notes["similarity_loss"] = "mean squared error between predicted and target similarity";
  if (c.kind == ExperimentKind::kOddball) {
    notes["contrastive_encoder"] =
        "contrastive arm uses the same MLP encoder as the relational arm plus a projection head, not a ResNet";
    notes["relational_targets"] = "1 for same-category image pairs, 0 for pairs from different categories";
    notes["trial_budget"] = Json{{"train_trials", c.oddball.n_train_trials},
                                 {"reference_trials", config::kReferenceTrialBudget},
                                 {"scale", static_cast<double>(c.oddball.n_train_trials) /
                                               static_cast<double>(config::kReferenceTrialBudget)}};
  }
  if (c.kind == ExperimentKind::kCategorical)
    notes["decision_rule"] = "prediction strictly above decision_threshold means same; target >= 0.75 means same";
  return notes;
}

void remove_previous_run(const fs::path& dir, const Json& manifest) {
  if (manifest.contains("files"))
    for (const Json& f : manifest["files"]) fs::remove(dir / f.at("path").get<std::string>());
  fs::remove_all(dir / "report");
  fs::remove(dir / kManifestName);
}

}  // namespace

fs::path resolve_output_dir(const ExperimentConfig& config, const RunOptions& options) {
  if (options.output_dir) return *options.output_dir;
  if (config.output_dir) return *config.output_dir;
  if (const char* root = std::getenv(kOutputRootVariable); root && *root) return fs::path(root) / config.name;
  return fs::path("runs") / config.name;
}

ExperimentConfig prepare_config(const Json& raw, const RunOptions& options) {
  Json effective = raw;
  if (options.seed_override && effective.is_object()) effective["master_seed"] = *options.seed_override;
  return config::resolve(effective);
}

Json deterministic_view(const Json& manifest) {
  Json out = manifest;
  out.erase(kTimestampsKey);
  return out;
}

RunResult run_experiment(const Json& raw_config, const RunOptions& options) {
  const ExperimentConfig c = prepare_config(raw_config, options);
  const fs::path dir = resolve_output_dir(c, options);
  const std::string config_digest = sha256_hex(canonical_dump(c.resolved));
  const fs::path manifest_path = dir / kManifestName;

  if (fs::exists(manifest_path)) {
    Json previous;
    try {
      previous = Json::parse(read_file(manifest_path));
    } catch (const Json::parse_error& e) {
      throw IoError("unreadable manifest " + manifest_path.string() + ": " + e.what());
    }
    if (!options.force) {
      if (previous.value("config_sha256", std::string()) != config_digest)
        throw ValidationError(dir.string() + " holds a run of a different configuration; pass --force to replace it");
      log_line(options, "complete run found at " + dir.string() + "; nothing to do");
      return {manifest_path, true, previous};
    }
    remove_previous_run(dir, previous);
  }

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());

  const std::string started = utc_now();
  const auto start = std::chrono::steady_clock::now();
  Artifacts files(dir);
  files.write("config.json", canonical_document(c.resolved));

  Json comparison = Json::object();
  std::vector<ArmRecord> records;
  switch (c.kind) {
    case ExperimentKind::kParametric: records = run_parametric(c, files, comparison, options); break;
    case ExperimentKind::kOddball: records = run_oddball(c, files, options); break;
    case ExperimentKind::kCategorical: records = run_categorical(c, files, options); break;
  }

  Json summary = Json{{"experiment", std::string(config::experiment_name(c.kind))},
                      {"name", c.name},
                      {"master_seed", c.master_seed},
                      {"arms", Json::object()}};
  if (!comparison.empty()) summary["comparison"] = comparison;
  Json arms = Json::array();
  Json arm_seconds = Json::object(), epoch_seconds = Json::object();
  for (std::size_t i = 0; i < records.size(); ++i) {
    summary["arms"][c.arms[i].name] = records[i].summary;
    arms.push_back(records[i].manifest);
    arm_seconds[c.arms[i].name] = records[i].seconds;
    epoch_seconds[c.arms[i].name] = records[i].epoch_seconds;
  }
  files.write(kSummaryName, canonical_document(summary));

  Json manifest = Json{{"tool", Json{{"name", "relbot"}, {"version", std::string(tool_version())}}},
                       {"experiment", std::string(config::experiment_name(c.kind))},
                       {"name", c.name},
                       {"config", c.resolved},
                       {"config_sha256", config_digest},
                       {"config_path", "config.json"},
                       {"summary_path", kSummaryName},
                       {"arms", arms},
                       {"notes", experiment_notes(c)},
                       {"files", files.listing()},
                       {"status", "complete"}};
  manifest[kTimestampsKey] = Json{{"started", started},
                                  {"finished", utc_now()},
                                  {"total_seconds", seconds_since(start)},
                                  {"arm_seconds", arm_seconds},
                                  {"epoch_seconds", epoch_seconds}};
  write_file(manifest_path, canonical_document(manifest));
  log_line(options, "wrote " + manifest_path.string());
  return {manifest_path, false, manifest};
}

// --- Verification and reports ---------------------------------------------------

namespace {

Json load_manifest(const fs::path& manifest_path) {
  if (!fs::exists(manifest_path)) throw IoError("manifest not found: " + manifest_path.string());
  try {
    Json m = Json::parse(read_file(manifest_path));
    if (!m.is_object() || !m.contains("files") || !m.contains("summary_path") || !m.contains("arms"))
      throw IoError("manifest " + manifest_path.string() + " is incomplete");
    return m;
  } catch (const Json::exception& e) {
    throw IoError("corrupt manifest " + manifest_path.string() + ": " + e.what());
  }
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  if (std::getline(in, line)) t.header = split_line(line);
  while (std::getline(in, line))
    if (!line.empty()) t.rows.push_back(split_line(line));
  return t;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::string fixed(const Json& v, int digits) {
  if (!v.is_number()) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v.get<double>());
  return buf;
}

std::string short_number(const Json& v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v.get<double>());
  return buf;
}

std::string step_text(const Json& v) { return v.is_number() ? std::to_string(v.get<std::size_t>()) : "never"; }

std::string sign_text(const Json& v) {
  if (!v.is_number()) return "undefined";
  const double s = v.get<double>();
  return s > 0 ? "positive" : s < 0 ? "negative" : "zero";
}

// Eval rows (metric columns filled) of a trace CSV, prefixed with the arm name:
// step and the first `metrics` metric columns.
void append_eval_rows(std::ostringstream& out, const std::string& arm, const std::string& trace, std::size_t metrics) {
  const CsvTable t = parse_csv(trace);
  for (const auto& row : t.rows) {
    if (row.size() != 5 || row[2].empty()) continue;
    out << arm << ',' << row[0];
    for (std::size_t k = 0; k < metrics; ++k) out << ',' << row[2 + k];
    out << '\n';
  }
}

}  // namespace

void verify_manifest(const fs::path& manifest_path) {
  const Json m = load_manifest(manifest_path);
  const fs::path dir = manifest_path.parent_path();
  for (const Json& f : m["files"]) {
    const std::string rel = f.at("path").get<std::string>();
    const fs::path path = dir / rel;
    if (!fs::exists(path)) throw IoError("missing artifact " + rel);
    const std::string actual = file_sha256_hex(path);
    const std::string expected = f.at("sha256").get<std::string>();
    if (actual != expected)
      throw IoError("checksum mismatch for " + rel + ": manifest records " + expected + ", file has " + actual);
  }
}

Report build_report(const fs::path& manifest_path) {
  verify_manifest(manifest_path);
  const Json m = load_manifest(manifest_path);
  const fs::path dir = manifest_path.parent_path();
  Json summary;
  try {
    summary = Json::parse(read_file(dir / m["summary_path"].get<std::string>()));
  } catch (const Json::exception& e) {
    throw IoError(std::string("corrupt summary: ") + e.what());
  }
  const std::string experiment = m.at("experiment").get<std::string>();
  const Json& arms = summary.at("arms");

  Report report;
  std::ostringstream text;
  text << "experiment: " << experiment << " (" << m.at("name").get<std::string>() << ")\n";
  text << "master seed: " << m.at("config").at("master_seed").get<std::uint64_t>() << "\n";
  text << "tool: relbot " << m.at("tool").at("version").get<std::string>() << "\n\n";

  auto metric_path = [&](const Json& arm, const std::string& suffix) -> std::string {
    for (const Json& p : arm.at("metrics"))
      if (p.get<std::string>().size() >= suffix.size() &&
          p.get<std::string>().compare(p.get<std::string>().size() - suffix.size(), suffix.size(), suffix) == 0)
        return p.get<std::string>();
    throw IoError("manifest lists no " + suffix + " for arm " + arm.at("name").get<std::string>());
  };

  if (experiment == "parametric-similarity") {
    const Json& analysis = m.at("config").at("analysis");
    text << "learning speed (first eval step after which train MSE stays below "
         << short_number(analysis.at("train_threshold")) << " and OOD MSE stays below "
         << short_number(analysis.at("ood_threshold")) << ")\n";
    text << pad("arm", 14) << pad("steps_train", 13) << pad("steps_ood", 11) << pad("final_train", 13)
         << pad("final_ood", 11) << "angle_deg\n";
    std::ostringstream curves;
    curves << "arm,step,train_mse,id_mse,ood_mse\n";
    for (const Json& arm : m.at("arms")) {
      const std::string name = arm.at("name").get<std::string>();
      const Json& s = arms.at(name);
      text << pad(name, 14) << pad(step_text(s["steps_to_train_threshold"]), 13)
           << pad(step_text(s["steps_to_ood_threshold"]), 11) << pad(fixed(s["final_train_mse"], 5), 13)
           << pad(fixed(s["final_ood_mse"], 5), 11) << fixed(s["angle_degrees"], 1) << "\n";
      append_eval_rows(curves, name, read_file(dir / metric_path(arm, "/trace.csv")), 3);
    }
    if (summary.contains("comparison")) {
      const Json& cmp = summary["comparison"];
      if (cmp["relational_convergence_step"].is_number()) {
        text << "\nat relational convergence (step " << step_text(cmp["relational_convergence_step"])
             << "): relational OOD MSE " << fixed(cmp["relational_ood_mse"], 5) << ", feedforward OOD MSE "
             << fixed(cmp.value("feedforward_ood_mse", Json()), 5) << ", ratio "
             << fixed(cmp.value("ood_ratio", Json()), 2) << "\n";
      } else {
        text << "\nrelational arm did not reach both thresholds\n";
      }
    }
    report.csv_files.emplace_back("learning_curves.csv", curves.str());
  } else if (experiment == "oddball") {
    std::vector<std::string> names;
    for (const Json& arm : m.at("arms")) names.push_back(arm.at("name").get<std::string>());
    text << "error rate by category at the last checkpoint\n";
    text << pad("category", 22) << pad("score", 7);
    for (const auto& n : names) text << pad(n, 14);
    text << "\n";
    std::ostringstream table_csv;
    table_csv << "category,regularity_score";
    for (const auto& n : names) table_csv << ',' << n;
    table_csv << '\n';
    const Json& first_table = arms.at(names.front()).at("final_error_table");
    for (std::size_t i = 0; i < first_table.size(); ++i) {
      const std::string cat = first_table[i].at("category").get<std::string>();
      const int score = first_table[i].at("regularity_score").get<int>();
      text << pad(cat, 22) << pad(std::to_string(score), 7);
      table_csv << cat << ',' << score;
      for (const auto& n : names) {
        Json rate;
        for (const Json& row : arms.at(n).at("final_error_table"))
          if (row.at("category") == cat) rate = row.at("error_rate");
        text << pad(fixed(rate, 3), 14);
        table_csv << ',' << (rate.is_number() ? format_double(rate.get<double>()) : std::string());
      }
      text << "\n";
      table_csv << '\n';
    }
    text << "\n" << pad("arm", 14) << pad("step", 8) << pad("slope", 10) << pad("sign", 11) << pad("spearman", 10)
         << pad("regularity_r2", 15) << "category_acc\n";
    std::ostringstream curves;
    curves << "arm,step,fraction,category,regularity_score,error_rate,trial_count\n";
    for (const Json& arm : m.at("arms")) {
      const std::string name = arm.at("name").get<std::string>();
      const Json& s = arms.at(name);
      text << pad(name, 14) << pad(step_text(s["final_step"]), 8) << pad(fixed(s["final_slope"], 4), 10)
           << pad(sign_text(s["final_slope"]), 11) << pad(fixed(s["final_spearman"], 3), 10)
           << pad(fixed(s["regularity_decoding"]["mean_score"], 3), 15)
           << fixed(s["category_decoding"]["mean_score"], 3) << "\n";
      const CsvTable t = parse_csv(read_file(dir / metric_path(arm, "/regularity.csv")));
      for (const auto& row : t.rows) {
        curves << name;
        for (const auto& cell : row) curves << ',' << cell;
        curves << '\n';
      }
    }
    text << "\nslope and spearman relate error rate to 4 - regularity score\n";
    report.csv_files.emplace_back("error_table.csv", table_csv.str());
    report.csv_files.emplace_back("regularity_curves.csv", curves.str());
  } else if (experiment == "categorical") {
    text << pad("arm", 14) << pad("train_acc", 11) << pad("holdout_acc", 13) << "steps_to_perfect_train\n";
    std::ostringstream curves;
    curves << "arm,step,train_accuracy,holdout_accuracy\n";
    for (const Json& arm : m.at("arms")) {
      const std::string name = arm.at("name").get<std::string>();
      const Json& s = arms.at(name);
      text << pad(name, 14) << pad(fixed(s["train_accuracy"], 4), 11) << pad(fixed(s["holdout_accuracy"], 4), 13)
           << step_text(s["steps_to_perfect_train"]) << "\n";
      append_eval_rows(curves, name, read_file(dir / metric_path(arm, "/trace.csv")), 2);
    }
    report.csv_files.emplace_back("accuracy_curves.csv", curves.str());
  } else {
    throw IoError("manifest names unknown experiment " + experiment);
  }

  text << "\nscatter files:";
  for (const Json& arm : m.at("arms")) text << " " << metric_path(arm, "/pca.csv");
  text << "\n";
  report.text = text.str();
  return report;
}

Report write_report(const fs::path& manifest_path) {
  Report report = build_report(manifest_path);
  const fs::path out = manifest_path.parent_path() / "report";
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  write_file(out / "summary.txt", report.text);
  for (const auto& [name, bytes] : report.csv_files) write_file(out / name, bytes);
  return report;
}

// --- Stimulus export -------------------------------------------------------------

std::size_t generate_stimuli(const Json& raw_config, const RunOptions& options) {
  const ExperimentConfig c = prepare_config(raw_config, options);
  const fs::path out = resolve_output_dir(c, options) / "stimuli";
  std::size_t written = 0;
  auto put = [&](const std::string& relative, std::string_view bytes) {
    write_file(out / relative, bytes);
    ++written;
  };
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());

  switch (c.kind) {
    case ExperimentKind::kParametric: {
      const auto& p = c.parametric;
      const auto ds = stimuli::build_similarity_pairs(p.grid, p.ood_band, config::data_seed(c), p.pairs);
      fs::create_directories(out / "images");
      std::ostringstream index;
      index << "id,split,size,luminosity,file\n";
      for (const auto& s : ds.stimuli) {
        const std::string file = "images/stimulus_" + std::to_string(s.id) + ".pgm";
        put(file, stimuli::pgm_bytes(stimuli::render_parametric_shape(s.latents, p.canvas_size)));
        index << s.id << ',' << stimuli::split_name(s.split) << ',' << format_double(s.latents.size) << ','
              << format_double(s.latents.luminosity) << ',' << file << '\n';
      }
      put("stimuli.csv", index.str());
      std::ostringstream pairs;
      pairs << "split,a,b,target\n";
      for (const auto* list : {&ds.train, &ds.test, &ds.ood})
        for (const auto& pr : *list)
          pairs << stimuli::split_name(pr.split) << ',' << pr.a << ',' << pr.b << ',' << format_double(pr.target) << '\n';
      put("pairs.csv", pairs.str());
      break;
    }
    case ExperimentKind::kOddball: {
      const auto& o = c.oddball;
      const auto data = training::build_oddball_data(o.n_train_trials, o.n_test_trials, config::data_seed(c), o.trial);
      fs::create_directories(out / "catalog");
      fs::create_directories(out / "trials");
      std::ostringstream catalog;
      catalog << "category,regularity_score,right_angles,parallel_sides,equal_sides,symmetry_axis,file\n";
      for (const auto& cat : data.catalog) {
        const std::string file = "catalog/" + cat.name + ".pgm";
        put(file, stimuli::pgm_bytes(stimuli::render_quadrilateral(cat, cat.canonical_vertices, {}, o.trial.canvas_size)));
        const auto& f = cat.properties;
        catalog << cat.name << ',' << cat.regularity_score << ',' << f.has_right_angles << ',' << f.has_parallel_sides
                << ',' << f.has_equal_sides << ',' << f.has_symmetry_axis << ',' << file << '\n';
      }
      put("catalog.csv", catalog.str());
      // Images for one test trial per category; the full trial list is in trials.csv.
      const std::size_t preview = std::min(data.test_trials.size(), data.catalog.size());
      for (std::size_t t = 0; t < preview; ++t) {
        const auto& layout = data.test_trials[t];
        for (std::size_t p = 0; p < stimuli::kTrialSize; ++p)
          put("trials/test_" + std::to_string(t) + "_" + std::to_string(p) + ".pgm",
              stimuli::pgm_bytes(stimuli::render_trial_image(layout, data.catalog[layout.category_index], p,
                                                             o.trial.canvas_size)));
      }
      std::ostringstream trials;
      trials << "split,trial,category,oddball_index,oddball_regularity_score\n";
      auto emit = [&](const char* split, const std::vector<stimuli::TrialLayout>& list) {
        for (std::size_t t = 0; t < list.size(); ++t)
          trials << split << ',' << t << ',' << data.catalog[list[t].category_index].name << ','
                 << list[t].oddball_index << ',' << stimuli::measure_properties(list[t].oddball_vertices).score()
                 << '\n';
      };
      emit("train", data.train_trials);
      emit("test", data.test_trials);
      put("trials.csv", trials.str());
      break;
    }
    case ExperimentKind::kCategorical: {
      const auto& k = c.categorical;
      const auto data = stimuli::build_onehot_dataset(k.n_values, k.n_train, config::data_seed(c));
      std::ostringstream index;
      index << "id,feature_a,feature_b,split\n";
      for (const auto& s : data.stimuli)
        index << s.id << ',' << s.feature_a << ',' << s.feature_b << ',' << stimuli::split_name(s.split) << '\n';
      put("stimuli.csv", index.str());
      std::ostringstream pairs;
      pairs << "split,a,b,target\n";
      for (const auto* list : {&data.train_pairs, &data.holdout_pairs})
        for (const auto& pr : *list)
          pairs << stimuli::split_name(pr.split) << ',' << pr.a << ',' << pr.b << ',' << format_double(pr.target) << '\n';
      put("pairs.csv", pairs.str());
      break;
    }
  }
  log_line(options, "wrote " + std::to_string(written) + " files under " + out.string());
  return written;
}

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const DivergenceError*>(&error)) return kExitDivergence;
  if (dynamic_cast<const ValidationError*>(&error)) return kExitValidation;
  if (dynamic_cast<const IoError*>(&error) || dynamic_cast<const fs::filesystem_error*>(&error)) return kExitIo;
  return kExitUsage;
}

}  // namespace relbot::harness
