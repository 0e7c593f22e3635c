#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "relbot/config.hpp"
#include "relbot/digest.hpp"
#include "relbot/errors.hpp"
#include "relbot/harness.hpp"
#include "relbot/stimuli.hpp"

namespace fs = std::filesystem;
using namespace relbot;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "relbot_harness_tests" / name;
  fs::remove_all(p);
  return p;
}

Json tiny_parametric() {
  return Json::parse(R"({
    "experiment": "parametric-similarity",
    "name": "tiny",
    "master_seed": 3,
    "stimuli": {"canvas_size": 16, "grid": 4, "ood_band": 0.3, "test_pairs": 40, "ood_pairs": 40},
    "model": {"hidden_dims": [8], "embedding_dim": 4, "head_hidden_dims": [4]},
    "train": {"epochs": 1, "batch_size": 16, "eval_interval": 2, "learning_rate": 0.01},
    "arms": [{"model": "relational"}, {"model": "feedforward"}]
  })");
}

Json tiny_oddball() {
  return Json::parse(R"({
    "experiment": "oddball",
    "name": "tiny-oddball",
    "master_seed": 5,
    "stimuli": {"canvas_size": 16, "n_train_trials": 64, "n_test_trials": 220},
    "model": {"hidden_dims": [8], "embedding_dim": 4, "head_hidden_dims": [4], "projection_dim": 4},
    "train": {"epochs": 1, "batch_size": 16, "eval_interval": 2, "checkpoint_fractions": [0.5, 1.0]},
    "analysis": {"decoding_steps": 20, "decoding_folds": 3},
    "arms": [{"model": "relational"}, {"model": "contrastive"}]
  })");
}

Json tiny_categorical() {
  return Json::parse(R"({
    "experiment": "categorical",
    "name": "tiny-categorical",
    "master_seed": 2,
    "stimuli": {"n_values": 6, "n_train": 6},
    "model": {"hidden_dims": [8], "embedding_dim": 4, "head_hidden_dims": [4]},
    "train": {"epochs": 5, "batch_size": 8, "eval_interval": 1}
  })");
}

harness::RunOptions at(const fs::path& dir) {
  harness::RunOptions o;
  o.output_dir = dir;
  return o;
}

std::vector<std::string> issue_paths(const Json& raw) {
  std::vector<std::string> out;
  for (const auto& i : config::validate(raw)) out.push_back(i.path);
  return out;
}

std::size_t count_suffix(const Json& manifest, const std::string& suffix) {
  std::size_t n = 0;
  for (const Json& f : manifest.at("files")) {
    const std::string p = f.at("path").get<std::string>();
    if (p.size() >= suffix.size() && p.compare(p.size() - suffix.size(), suffix.size(), suffix) == 0) ++n;
  }
  return n;
}

}  // namespace

// --- validation ---------------------------------------------------------------------

TEST(Validate, ShippedConfigsAreValid) {
  for (const char* name : {"parametric.json", "oddball.json", "categorical.json"}) {
    const Json raw = config::load_json_file(fs::path(RELBOT_CONFIG_DIR) / name);
    EXPECT_TRUE(config::validate(raw).empty()) << name;
  }
}

TEST(Validate, ReportsEveryViolationWithPath) {
  Json raw = tiny_parametric();
  raw["stimuli"]["grid"] = 2;
  raw["train"]["learning_rte"] = 0.1;
  const auto issues = config::validate(raw);
  ASSERT_EQ(issues.size(), 2u);
  std::vector<std::string> lines;
  for (const auto& i : issues) lines.push_back(config::format_issue(i));
  EXPECT_NE(std::find(lines.begin(), lines.end(), std::string("/stimuli/grid: grid ≥ 4 (got 2)")), lines.end());
  bool unknown = false;
  for (const auto& l : lines) unknown = unknown || l.find("learning_rte") != std::string::npos;
  EXPECT_TRUE(unknown);
}

TEST(Validate, WrongTypesAreReported) {
  Json raw = tiny_parametric();
  raw["train"]["epochs"] = "many";
  raw["model"]["hidden_dims"] = 5;
  const auto paths = issue_paths(raw);
  EXPECT_NE(std::find(paths.begin(), paths.end(), "/train/epochs"), paths.end());
  EXPECT_NE(std::find(paths.begin(), paths.end(), "/model/hidden_dims"), paths.end());
}

TEST(Validate, ArmKindMustSuitExperiment) {
  Json raw = tiny_parametric();
  raw["arms"][1]["model"] = "transformer";
  EXPECT_FALSE(config::validate(raw).empty());
}

TEST(Validate, EvalIntervalBoundedByTotalSteps) {
  Json raw = tiny_parametric();
  raw["train"]["eval_interval"] = 100000;
  const auto paths = issue_paths(raw);
  ASSERT_FALSE(paths.empty());
  EXPECT_EQ(paths.front(), "/arms/0/train/eval_interval");
}

TEST(Validate, UnknownExperimentAndNonObjectRoot) {
  EXPECT_FALSE(config::validate(Json::parse(R"({"experiment": "telepathy"})")).empty());
  EXPECT_FALSE(config::validate(Json::array()).empty());
}

TEST(Validate, ResolveThrowsConfigError) {
  Json raw = tiny_parametric();
  raw["stimuli"]["grid"] = 1;
  try {
    config::resolve(raw);
    FAIL() << "expected ConfigError";
  } catch (const config::ConfigError& e) {
    EXPECT_EQ(e.issues().size(), 1u);
    EXPECT_EQ(harness::exit_code_for(e), harness::kExitValidation);
  }
}

TEST(Validate, UnreadableAndMalformedFiles) {
  EXPECT_THROW(config::load_json_file("/nonexistent/relbot.json"), IoError);
  const fs::path dir = scratch("malformed");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(config::load_json_file(dir / "bad.json"), config::ConfigError);
}

// --- exit codes ---------------------------------------------------------------------

TEST(ExitCodes, MapExceptionTypes) {
  EXPECT_EQ(harness::exit_code_for(ValidationError("x")), harness::kExitValidation);
  EXPECT_EQ(harness::exit_code_for(DivergenceError("x", 3)), harness::kExitDivergence);
  EXPECT_EQ(harness::exit_code_for(IoError("x")), harness::kExitIo);
  EXPECT_EQ(harness::exit_code_for(std::runtime_error("x")), harness::kExitUsage);
}

// --- parametric run -----------------------------------------------------------------

class ParametricRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(scratch("parametric"));
    result_ = new harness::RunResult(harness::run_experiment(tiny_parametric(), at(*dir_)));
  }
  static void TearDownTestSuite() {
    delete result_;
    delete dir_;
  }
  static fs::path* dir_;
  static harness::RunResult* result_;
};

fs::path* ParametricRun::dir_ = nullptr;
harness::RunResult* ParametricRun::result_ = nullptr;

TEST_F(ParametricRun, WritesExpectedArtifacts) {
  const Json& m = result_->manifest;
  EXPECT_FALSE(result_->reused);
  EXPECT_EQ(m.at("status"), "complete");
  EXPECT_EQ(m.at("arms").size(), 2u);
  EXPECT_EQ(count_suffix(m, ".ckpt"), 2u);
  EXPECT_EQ(count_suffix(m, "trace.csv"), 2u);
  EXPECT_EQ(count_suffix(m, "pca.csv"), 2u);
  for (const Json& arm : m.at("arms")) EXPECT_EQ(arm.at("checkpoints").size(), 1u);
  EXPECT_NO_THROW(harness::verify_manifest(result_->manifest_path));
}

TEST_F(ParametricRun, SummaryHasComparisonAndAngles) {
  const Json s = Json::parse(read_file(*dir_ / "summary.json"));
  EXPECT_TRUE(s.contains("comparison"));
  for (const auto& [name, arm] : s.at("arms").items()) {
    EXPECT_TRUE(arm.at("angle_degrees").is_number()) << name;
    EXPECT_GE(arm.at("angle_degrees").get<double>(), 0.0);
    EXPECT_LE(arm.at("angle_degrees").get<double>(), 90.0);
  }
}

TEST_F(ParametricRun, SameConfigIsReused) {
  const auto again = harness::run_experiment(tiny_parametric(), at(*dir_));
  EXPECT_TRUE(again.reused);
  EXPECT_EQ(harness::deterministic_view(again.manifest), harness::deterministic_view(result_->manifest));
}

TEST_F(ParametricRun, DifferentConfigInSameDirectoryIsRejected) {
  Json other = tiny_parametric();
  other["master_seed"] = 4;
  EXPECT_THROW(harness::run_experiment(other, at(*dir_)), ValidationError);
}

TEST_F(ParametricRun, ReportIsPureAndRepeatable) {
  const std::string manifest_before = read_file(result_->manifest_path);
  const auto a = harness::write_report(result_->manifest_path);
  const auto b = harness::write_report(result_->manifest_path);
  EXPECT_EQ(a.text, b.text);
  EXPECT_EQ(a.csv_files, b.csv_files);
  EXPECT_EQ(read_file(result_->manifest_path), manifest_before);
  EXPECT_EQ(read_file(*dir_ / "report" / "summary.txt"), a.text);
  EXPECT_NE(a.text.find("relational"), std::string::npos);
  EXPECT_NO_THROW(harness::verify_manifest(result_->manifest_path));
}

TEST_F(ParametricRun, DeterministicAcrossDirectories) {
  const fs::path other = scratch("parametric_copy");
  const auto b = harness::run_experiment(tiny_parametric(), at(other));
  EXPECT_EQ(harness::deterministic_view(b.manifest), harness::deterministic_view(result_->manifest));
  for (const Json& f : result_->manifest.at("files")) {
    const std::string rel = f.at("path").get<std::string>();
    EXPECT_EQ(read_file(*dir_ / rel), read_file(other / rel)) << rel;
  }
}

TEST_F(ParametricRun, SeedOverrideChangesOutputs) {
  harness::RunOptions o = at(scratch("parametric_seed"));
  o.seed_override = 11;
  const auto b = harness::run_experiment(tiny_parametric(), o);
  EXPECT_EQ(b.manifest.at("config").at("master_seed"), 11);
  EXPECT_NE(b.manifest.at("config_sha256"), result_->manifest.at("config_sha256"));
}

TEST(ParametricIntegrity, ChecksumMismatchNamesFile) {
  const fs::path dir = scratch("tamper");
  const auto r = harness::run_experiment(tiny_parametric(), at(dir));
  const std::string victim = r.manifest.at("files").at(0).at("path").get<std::string>();
  std::ofstream(dir / victim, std::ios::app) << "x";
  try {
    harness::verify_manifest(r.manifest_path);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(victim), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("checksum mismatch"), std::string::npos);
  }
  EXPECT_THROW(harness::build_report(r.manifest_path), IoError);

  fs::remove(dir / victim);
  EXPECT_THROW(harness::verify_manifest(r.manifest_path), IoError);

  harness::RunOptions o = at(dir);
  o.force = true;
  const auto redo = harness::run_experiment(tiny_parametric(), o);
  EXPECT_FALSE(redo.reused);
  EXPECT_NO_THROW(harness::verify_manifest(redo.manifest_path));
}

TEST(OutputDir, PrecedenceOfSources) {
  Json raw = tiny_parametric();
  raw["output_dir"] = "from_config";
  const auto c = config::resolve(raw);
  EXPECT_EQ(harness::resolve_output_dir(c, at("from_flag")), fs::path("from_flag"));
  EXPECT_EQ(harness::resolve_output_dir(c, {}), fs::path("from_config"));
  EXPECT_FALSE(c.resolved.contains("output_dir"));
}

TEST(GenStimuli, WritesImagesAndIndex) {
  const fs::path dir = scratch("stimuli");
  const std::size_t n = harness::generate_stimuli(tiny_parametric(), at(dir));
  EXPECT_GT(n, 2u);
  EXPECT_TRUE(fs::exists(dir / "stimuli" / "stimuli.csv"));
  std::size_t pgm = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "stimuli")) pgm += e.path().extension() == ".pgm";
  EXPECT_GT(pgm, 0u);
}

// --- oddball and categorical runs ---------------------------------------------------

TEST(OddballRun, CheckpointsDecodingAndReport) {
  const fs::path dir = scratch("oddball");
  const auto r = harness::run_experiment(tiny_oddball(), at(dir));
  EXPECT_EQ(count_suffix(r.manifest, ".ckpt"), 4u);
  EXPECT_EQ(count_suffix(r.manifest, "/regularity.csv"), 2u);
  EXPECT_EQ(count_suffix(r.manifest, "decoding_category.csv"), 2u);
  const Json s = Json::parse(read_file(dir / "summary.json"));
  for (const auto& [name, arm] : s.at("arms").items()) {
    EXPECT_EQ(arm.at("checkpoints").size(), 2u) << name;
    EXPECT_TRUE(arm.at("regularity_decoding").contains("mean_score"));
    EXPECT_EQ(arm.at("final_error_table").size(), stimuli::build_quadrilateral_catalog().size());
  }
  const auto report = harness::write_report(r.manifest_path);
  EXPECT_NE(report.text.find("slope"), std::string::npos);
  EXPECT_NE(report.text.find("square"), std::string::npos);
  bool table = false;
  for (const auto& [file, body] : report.csv_files) table = table || file == "error_table.csv";
  EXPECT_TRUE(table);
}

TEST(CategoricalRun, AccuraciesAreRecorded) {
  const fs::path dir = scratch("categorical");
  const auto r = harness::run_experiment(tiny_categorical(), at(dir));
  const Json s = Json::parse(read_file(dir / "summary.json"));
  for (const auto& [name, arm] : s.at("arms").items()) {
    const double train = arm.at("train_accuracy").get<double>();
    const double holdout = arm.at("holdout_accuracy").get<double>();
    EXPECT_GE(train, 0.0);
    EXPECT_LE(train, 1.0);
    EXPECT_GE(holdout, 0.0);
    EXPECT_LE(holdout, 1.0);
  }
  EXPECT_NO_THROW(harness::write_report(r.manifest_path));
}
