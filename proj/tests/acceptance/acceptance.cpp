// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.
//
// usage: relbot_acceptance <config-dir> <scratch-dir>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "relbot/analysis.hpp"
#include "relbot/config.hpp"
#include "relbot/digest.hpp"
#include "relbot/harness.hpp"
#include "relbot/models.hpp"
#include "relbot/rng.hpp"
#include "relbot/training.hpp"

namespace fs = std::filesystem;
using namespace relbot;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::string num(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

Json read_json(const fs::path& p) { return Json::parse(read_file(p)); }

harness::RunResult run_config(const fs::path& config, const fs::path& out, std::optional<std::uint64_t> seed = {}) {
  fs::remove_all(out);
  harness::RunOptions o;
  o.output_dir = out;
  o.seed_override = seed;
  return harness::run_experiment(config::load_json_file(config), o);
}

Json summary_of(const harness::RunResult& r) {
  return read_json(r.manifest_path.parent_path() / r.manifest.at("summary_path").get<std::string>());
}

// Summary value of the first arm with the given model kind.
const Json& arm_summary(const Json& summary, const std::string& model) {
  for (const auto& [name, arm] : summary.at("arms").items())
    if (arm.at("model") == model) return arm;
  throw std::runtime_error("no " + model + " arm in summary");
}

double steps_or_inf(const Json& v) {
  return v.is_number() ? v.get<double>() : std::numeric_limits<double>::infinity();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string steps_text(double v) { return std::isinf(v) ? "never" : num(v, 0); }

// --- 1: gradient correctness ------------------------------------------------------

Outcome gradient_correctness() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::size_t configs = 0;
  Rng rng(20240601);
  for (models::ModelKind kind : {models::ModelKind::kRelational, models::ModelKind::kFeedforward,
                                 models::ModelKind::kContrastive}) {
    for (int trial = 0; trial < 3; ++trial) {
      models::ModelSpec spec;
      spec.kind = kind;
      spec.encoder.input_dim = 3 + rng.below(6);
      spec.encoder.hidden_dims.clear();
      for (std::uint64_t l = 0, n = 1 + rng.below(2); l < n; ++l) spec.encoder.hidden_dims.push_back(3 + rng.below(5));
      spec.encoder.embedding_dim = 2 + rng.below(4);
      spec.head_hidden_dims = {3 + static_cast<std::size_t>(rng.below(4))};
      spec.projection_dim = 2 + rng.below(3);
      models::ModelState base = models::init_parameters(spec, rng.next());
      // Random biases keep units off the ReLU kink, where central differences are undefined.
      for (auto* layers : {&base.encoder, &base.head})
        for (auto& layer : *layers)
          for (double& b : layer.bias.data()) b = rng.uniform(-0.5, 0.5);
      const std::size_t rows = 3 + rng.below(3);
      Tensor xa({rows, spec.encoder.input_dim}), xb({rows, spec.encoder.input_dim}), targets({rows, 1});
      for (double& v : xa.data()) v = rng.uniform(-1.0, 1.0);
      for (double& v : xb.data()) v = rng.uniform(-1.0, 1.0);
      for (double& v : targets.data()) v = rng.uniform();
      std::vector<Tensor> params;
      for (const Tensor* p : base.parameters()) params.push_back(*p);
      const auto fn = [&](ad::Graph& g, std::span<const ad::Var> p) {
        models::BoundModel m{&base, std::vector<ad::Var>(p.begin(), p.end())};
        if (kind == models::ModelKind::kContrastive)
          return models::contrastive_loss(
              models::project(m, models::encode(m, ad::concat(g.leaf(xa), g.leaf(xb), 0))), 0.5);
        const ad::Var pred = models::pair_similarity(m, g.leaf(xa), g.leaf(xb));
        return ad::mean(ad::square(ad::sub(pred, g.leaf(targets))));
      };
      worst = std::max(worst, ad::finite_difference_check(fn, params, 1e-5));
      ++configs;
    }
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-4 && secs < 10.0, "max relative error " + sci(worst) + " over " + std::to_string(configs) +
                                            " configs (limit 1e-04), " + num(secs, 1) + " s (limit 10 s)"};
}

// --- 2 and 3: parametric trend and factorization ---------------------------------

struct ParametricRuns {
  std::vector<Json> summaries;
  harness::RunResult first;
  double seconds = 0.0;
};

ParametricRuns parametric_runs(const fs::path& config_path, const fs::path& scratch) {
  ParametricRuns runs;
  const std::uint64_t base = config::resolve(config::load_json_file(config_path)).master_seed;
  const auto start = std::chrono::steady_clock::now();
  for (std::uint64_t k = 0; k < 5; ++k) {
    auto r = run_config(config_path, scratch / ("parametric_seed" + std::to_string(base + k)), base + k);
    runs.summaries.push_back(summary_of(r));
    if (k == 0) runs.first = r;
  }
  runs.seconds = seconds_since(start);
  return runs;
}

Outcome parametric_trend(const ParametricRuns& runs) {
  std::vector<double> rel_train, ff_train, rel_ood, ff_ood;
  bool ratios_ok = true;
  std::string ratios;
  for (const Json& s : runs.summaries) {
    const Json& rel = arm_summary(s, "relational");
    const Json& ff = arm_summary(s, "feedforward");
    rel_train.push_back(steps_or_inf(rel["steps_to_train_threshold"]));
    ff_train.push_back(steps_or_inf(ff["steps_to_train_threshold"]));
    rel_ood.push_back(steps_or_inf(rel["steps_to_ood_threshold"]));
    ff_ood.push_back(steps_or_inf(ff["steps_to_ood_threshold"]));
    const Json& ratio = s.at("comparison").value("ood_ratio", Json());
    ratios_ok = ratios_ok && ratio.is_number() && ratio.get<double>() >= 1.5;
    ratios += (ratios.empty() ? "" : " ") + (ratio.is_number() ? num(ratio.get<double>(), 2) : std::string("n/a"));
  }
  const double mrt = median(rel_train), mft = median(ff_train), mro = median(rel_ood), mfo = median(ff_ood);
  const bool pass = mrt < mft && mro < mfo && ratios_ok && runs.seconds < 180.0;
  return {pass, "median steps train " + steps_text(mrt) + " vs " + steps_text(mft) + ", OOD " + steps_text(mro) +
                    " vs " + steps_text(mfo) + " (relational vs feedforward); OOD ratio per seed [" + ratios +
                    "] (limit 1.5); " + num(runs.seconds, 1) + " s (limit 180 s)"};
}

Outcome factorization(const ParametricRuns& runs) {
  bool pass = true;
  std::string detail;
  for (std::size_t k = 0; k < runs.summaries.size(); ++k) {
    const double rel = arm_summary(runs.summaries[k], "relational").at("angle_degrees").get<double>();
    const double ff = arm_summary(runs.summaries[k], "feedforward").at("angle_degrees").get<double>();
    const bool ok = rel >= 75.0 && rel - ff >= 10.0;
    pass = pass && ok;
    detail += (detail.empty() ? "" : ", ") + std::string("seed ") + std::to_string(runs.summaries[k]["master_seed"].get<std::uint64_t>()) +
              " " + num(rel, 1) + "/" + num(ff, 1) + (ok ? "" : " (fail)");
  }
  return {pass, "angles relational/feedforward in degrees: " + detail + " (need relational >= 75, gap >= 10)"};
}

// --- 4 and 5: oddball regularity trend and decoding ----------------------------------

Outcome regularity_trend(const harness::RunResult& run, double seconds) {
  const Json s = summary_of(run);
  const Json& rel = arm_summary(s, "relational");
  const Json& con = arm_summary(s, "contrastive");
  // The contrastive checkpoint at the same fraction of training as the relational one.
  const double fraction = rel.at("checkpoints").back().at("fraction").get<double>();
  Json con_spearman;
  for (const Json& ck : con.at("checkpoints"))
    if (ck.at("fraction").get<double>() == fraction) con_spearman = ck.at("spearman");
  const Json& slope = rel.at("final_slope");
  const Json& rho = rel.at("final_spearman");
  const bool pass = slope.is_number() && slope.get<double>() > 0.0 && rho.is_number() && rho.get<double>() >= 0.6 &&
                    con_spearman.is_number() && std::abs(con_spearman.get<double>()) <= 0.4 && seconds < 300.0;
  auto show = [](const Json& v) { return v.is_number() ? num(v.get<double>(), 3) : std::string("undefined"); };
  return {pass, "relational slope " + show(slope) + " (need > 0), spearman " + show(rho) +
                    " (need >= 0.6); contrastive spearman " + show(con_spearman) + " (need |.| <= 0.4); " +
                    num(seconds, 1) + " s for 6000-trial run (limit 300 s)"};
}

Outcome decoding_ordering(const harness::RunResult& run) {
  // Recompute both decodings from the saved final checkpoints and check they
  // reproduce the summary before applying the ordering.
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir = run.manifest_path.parent_path();
  const config::ExperimentConfig c = config::resolve(run.manifest.at("config"));
  const auto data = training::build_oddball_data(c.oddball.n_train_trials, c.oddball.n_test_trials,
                                                 config::data_seed(c), c.oddball.trial);
  const harness::OddballProbe probe = harness::render_oddball_probe(data, c.oddball.trial.canvas_size);
  const Json s = summary_of(run);
  double r2[2] = {0, 0}, acc[2] = {0, 0};
  bool reproduced = true;
  for (const config::ArmConfig& arm : c.arms) {
    const int k = arm.kind == models::ModelKind::kRelational ? 0 : 1;
    Json manifest_arm;
    for (const Json& a : run.manifest.at("arms"))
      if (a.at("name") == arm.name) manifest_arm = a;
    const auto state =
        models::load_checkpoint(dir / manifest_arm.at("checkpoints").back().at("path").get<std::string>());
    const auto decoded = harness::decode_oddball(c, arm, models::encode(state, probe.images), probe);
    r2[k] = decoded.regularity.mean_score;
    acc[k] = decoded.category.mean_score;
    const Json& stored = s.at("arms").at(arm.name);
    reproduced = reproduced && stored.at("regularity_decoding").at("mean_score").get<double>() == r2[k] &&
                 stored.at("category_decoding").at("mean_score").get<double>() == acc[k];
  }
  const double secs = seconds_since(start);
  const bool pass = reproduced && r2[0] - r2[1] >= 0.10 && acc[1] >= acc[0] && secs < 120.0;
  return {pass, "regularity R2 relational " + num(r2[0]) + " vs contrastive " + num(r2[1]) +
                    " (need gap >= 0.10); category accuracy contrastive " + num(acc[1]) + " vs relational " +
                    num(acc[0]) + " (need >=); " + (reproduced ? "summary reproduced" : "summary NOT reproduced") +
                    "; " + num(secs, 1) + " s (limit 120 s)"};
}

// --- 6: categorical ------------------------------------------------------------------

Outcome categorical(const harness::RunResult& run, double seconds) {
  const Json s = summary_of(run);
  const Json& rel = arm_summary(s, "relational");
  const Json& ff = arm_summary(s, "feedforward");
  const double rt = rel.at("train_accuracy").get<double>(), ft = ff.at("train_accuracy").get<double>();
  const double rh = rel.at("holdout_accuracy").get<double>(), fh = ff.at("holdout_accuracy").get<double>();
  const Json& stim = run.manifest.at("config").at("stimuli");
  const bool sized = stim.at("n_values") == 30 && stim.at("n_train") == 30;
  const bool pass = sized && rt == 1.0 && ft == 1.0 && rh >= 0.95 && rh - fh >= 0.10 && seconds < 120.0;
  return {pass, "train accuracy " + num(rt, 4) + "/" + num(ft, 4) + " (need 1), holdout relational " + num(rh, 4) +
                    " (need >= 0.95), feedforward " + num(fh, 4) + " (need <= relational - 0.10); " +
                    num(seconds, 1) + " s (limit 120 s)"};
}

// --- 7: oracle equivalences -------------------------------------------------------------

Outcome oracles() {
  Rng rng(7);
  // Brute-force centroid rule.
  std::size_t mismatches = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t d = 1 + rng.below(8);
    Tensor six({6, d});
    for (double& v : six.data()) v = rng.uniform(-1.0, 1.0);
    std::vector<double> centroid(d, 0.0);
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t c = 0; c < d; ++c) centroid[c] += six.at(r, c) / 6.0;
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t r = 0; r < 6; ++r) {
      double sq = 0.0;
      for (std::size_t c = 0; c < d; ++c) sq += (six.at(r, c) - centroid[c]) * (six.at(r, c) - centroid[c]);
      if (sq > best_d) {
        best_d = sq;
        best = r;
      }
    }
    mismatches += analysis::oddball_pick(six) != best ? 1 : 0;
  }

  // PCA: off-diagonal projected covariance and its diagonal against the variances.
  Tensor x({400, 6});
  for (double& v : x.data()) v = rng.uniform(-1.0, 1.0);
  for (std::size_t i = 0; i < 400; ++i) x.at(i, 2) += 1.5 * x.at(i, 0) - 0.7 * x.at(i, 5);
  const analysis::PcaResult p = analysis::pca(x, 6);
  const Tensor z = p.project(x);
  double worst_cov = 0.0;
  for (std::size_t a = 0; a < z.cols(); ++a)
    for (std::size_t b = 0; b < z.cols(); ++b) {
      double cov = 0.0;
      for (std::size_t i = 0; i < z.rows(); ++i) cov += z.at(i, a) * z.at(i, b);
      cov /= static_cast<double>(z.rows() - 1);
      worst_cov = std::max(worst_cov, std::abs(cov - (a == b ? p.explained_variance[a] : 0.0)));
    }

  // Noiseless linear target.
  Tensor emb({300, 10});
  for (double& v : emb.data()) v = rng.uniform(-1.0, 1.0);
  std::vector<double> y(300);
  for (std::size_t i = 0; i < 300; ++i) {
    y[i] = 0.3;
    for (std::size_t j = 0; j < 10; ++j) y[i] += (static_cast<double>(j) - 4.5) * emb.at(i, j);
  }
  const double r2 = analysis::regularity_decoding(emb, y).mean_score;

  const bool pass = mismatches == 0 && worst_cov <= 1e-8 && r2 >= 1.0 - 1e-9;
  return {pass, "centroid rule mismatches " + std::to_string(mismatches) + "/1000, projected covariance error " +
                    sci(worst_cov) + " (limit 1e-08), noiseless R2 1 - " + sci(1.0 - r2) + " (limit 1e-09)"};
}

// --- 8: determinism ------------------------------------------------------------------------

std::string compare_runs(const harness::RunResult& a, const harness::RunResult& b) {
  if (harness::deterministic_view(a.manifest) != harness::deterministic_view(b.manifest)) return "manifests differ";
  for (const Json& f : a.manifest.at("files")) {
    const std::string rel = f.at("path").get<std::string>();
    if (read_file(a.manifest_path.parent_path() / rel) != read_file(b.manifest_path.parent_path() / rel))
      return rel + " differs";
  }
  return "";
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: relbot_acceptance <config-dir> <scratch-dir>\n";
    return 1;
  }
  const fs::path configs = argv[1];
  const fs::path scratch = argv[2];
  fs::create_directories(scratch);

  std::vector<std::pair<std::string, Outcome>> results(8);
  auto guarded = [](const std::function<Outcome()>& fn) {
    try {
      return fn();
    } catch (const std::exception& e) {
      return Outcome{false, std::string("error: ") + e.what()};
    }
  };

  results[0] = {"gradient correctness", guarded(gradient_correctness)};
  results[6] = {"oracle equivalences", guarded(oracles)};
  std::cerr << "criteria 1 and 7 done\n";

  std::vector<std::string> determinism;
  bool determinism_ok = true;
  auto record_repeat = [&](const std::string& name, const harness::RunResult& a, const fs::path& config_path) {
    const auto b = run_config(config_path, scratch / (name + "_repeat"));
    const std::string diff = compare_runs(a, b);
    determinism_ok = determinism_ok && diff.empty();
    determinism.push_back(name + (diff.empty() ? " identical" : ": " + diff));
  };

  results[5].first = "categorical same/different";
  results[5].second = guarded([&] {
    const auto start = std::chrono::steady_clock::now();
    const auto run = run_config(configs / "categorical.json", scratch / "categorical");
    const Outcome o = categorical(run, seconds_since(start));
    record_repeat("categorical", run, configs / "categorical.json");
    return o;
  });
  std::cerr << "criterion 6 done\n";

  results[1].first = "parametric learning speed";
  results[2].first = "parametric factorization";
  try {
    const ParametricRuns runs = parametric_runs(configs / "parametric.json", scratch);
    results[1].second = guarded([&] { return parametric_trend(runs); });
    results[2].second = guarded([&] { return factorization(runs); });
    record_repeat("parametric", runs.first, configs / "parametric.json");
  } catch (const std::exception& e) {
    results[1].second = results[2].second = {false, std::string("error: ") + e.what()};
  }
  std::cerr << "criteria 2 and 3 done\n";

  results[3].first = "oddball regularity trend";
  results[4].first = "oddball decoding ordering";
  try {
    const auto start = std::chrono::steady_clock::now();
    const auto run = run_config(configs / "oddball.json", scratch / "oddball");
    const double secs = seconds_since(start);
    results[3].second = guarded([&] { return regularity_trend(run, secs); });
    results[4].second = guarded([&] { return decoding_ordering(run); });
    record_repeat("oddball", run, configs / "oddball.json");
  } catch (const std::exception& e) {
    results[3].second = results[4].second = {false, std::string("error: ") + e.what()};
  }
  std::cerr << "criteria 4 and 5 done\n";

  std::string det;
  for (const auto& d : determinism) det += (det.empty() ? "" : "; ") + d;
  results[7] = {"determinism", {determinism_ok && determinism.size() == 3, det}};

  int failed = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    std::cout << "criterion " << i + 1 << " " << (results[i].second.pass ? "PASS" : "FAIL") << " "
              << results[i].first << ": " << results[i].second.detail << "\n";
    failed += results[i].second.pass ? 0 : 1;
  }
  std::cout << (8 - failed) << "/8 criteria passed\n";
  return failed == 0 ? 0 : 1;
}
