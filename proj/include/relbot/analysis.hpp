#pragma once
// Post-hoc measurements on embeddings: PCA, latent-axis orthogonality, oddball
// picking and regularity error curves, cross-validated decoding, and
// correlation against external error profiles.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "relbot/canonical_json.hpp"
#include "relbot/models.hpp"
#include "relbot/stimuli.hpp"
#include "relbot/tensor.hpp"

namespace relbot::analysis {

// --- PCA ----------------------------------------------------------------------

struct PcaResult {
  Tensor components;                        // [k, d], orthonormal rows
  std::vector<double> explained_variance;   // per returned component, non-increasing
  std::vector<double> spectrum;             // all d covariance eigenvalues, non-increasing, clamped at 0
  std::vector<double> mean;                 // length d
  std::size_t rank = 0;
  bool rank_deficient = false;              // fewer than the requested k components returned

  std::size_t count() const { return explained_variance.size(); }
  /// Centers rows with the fitted mean and projects onto the components: [n, k].
  Tensor project(const Tensor& x) const;
};

/// Sample-covariance (divisor n - 1) eigendecomposition. Each component's entry of
/// largest magnitude is made positive. Eigenvalues at or below
/// 1e-12 * max(1, largest) count as zero for the rank.
PcaResult pca(const Tensor& x, std::size_t k);

// --- Latent axes --------------------------------------------------------------

struct AxesResult {
  std::vector<std::vector<double>> axes;  // unit directions in embedding space, one per latent
  double angle_degrees = 0.0;             // in [0, 90]
  std::size_t n_components = 0;
};

/// OLS (with intercept) from the first min(10, rank) principal components to each
/// latent column; the coefficient vector mapped back through the components and
/// normalized is the latent's axis. latents is [n, 2].
AxesResult dimension_axes(const Tensor& embeddings, const Tensor& latents);

// --- Oddball picking ----------------------------------------------------------

/// argmax_i ||e_i - mean(e)||, lowest index on ties. `six` is [6, d].
std::size_t oddball_pick(const Tensor& six);

struct CategoryErrorRate {
  std::string name;
  int regularity_score = 0;
  double error_rate = 0.0;
  std::size_t trial_count = 0;
};

struct RegularityCurve {
  std::vector<CategoryErrorRate> categories;  // catalog order, empty categories excluded
  double slope = 0.0;     // least squares of error rate on (4 - regularity_score)
  double spearman = 0.0;  // Spearman(error rate, 4 - regularity_score); NaN if undefined
  std::vector<std::string> warnings;
};

/// Embeddings of every image of every trial, trial-major: row 6t + p is position p of trial t.
Tensor trial_embeddings(const models::ModelState& state, std::span<const stimuli::QuadrilateralCategory> catalog,
                        std::span<const stimuli::TrialLayout> trials, std::size_t canvas_size);

/// Picks per trial from trial-major embeddings.
std::vector<std::size_t> pick_all(const Tensor& trial_embeddings);

/// Error rate per category from picks; categories with no trials are excluded with
/// a warning, categories with 1..min_trials-1 trials are a ValidationError.
RegularityCurve error_rates_by_category(std::span<const stimuli::TrialLayout> trials,
                                        std::span<const stimuli::QuadrilateralCategory> catalog,
                                        std::span<const std::size_t> picks, std::size_t min_trials = 20);

/// Renders, embeds and picks every trial with the model.
RegularityCurve error_rates_by_category(std::span<const stimuli::TrialLayout> trials,
                                        std::span<const stimuli::QuadrilateralCategory> catalog,
                                        const models::ModelState& state, std::size_t canvas_size,
                                        std::size_t min_trials = 20);

// --- Decoding -----------------------------------------------------------------

struct DecodingReport {
  std::string target;
  std::string score_name;  // "r2" or "accuracy"
  std::size_t n_components_used = 0;
  std::size_t n_folds = 0;
  std::vector<double> fold_scores;
  double mean_score = 0.0;

  Json to_json() const;
};

struct DecodingOptions {
  std::size_t max_components = 50;
  std::size_t n_folds = 20;
  std::uint64_t seed = 0;
  // Logistic regression (category decoding only).
  std::size_t steps = 500;
  double learning_rate = 0.1;
};

/// Seeded permutation split into n_folds contiguous blocks; the first n % n_folds
/// folds get one extra row. Returns the fold of each row.
std::vector<std::size_t> assign_folds(std::size_t n, std::size_t n_folds, std::uint64_t seed);

/// Cross-validated OLS R^2 on the first min(max_components, rank) PCs (fit on all
/// rows). A held-out fold with constant targets scores 1 if predicted exactly, else 0.
DecodingReport regularity_decoding(const Tensor& embeddings, std::span<const double> scores,
                                   const DecodingOptions& options = {});

/// Cross-validated multinomial logistic regression on whitened PCs, trained by
/// full-batch gradient descent from zero weights.
DecodingReport category_decoding(const Tensor& embeddings, std::span<const std::size_t> labels,
                                 const DecodingOptions& options = {});

// --- Correlation --------------------------------------------------------------

double pearson(std::span<const double> x, std::span<const double> y);
/// Pearson correlation of average ranks.
double spearman(std::span<const double> x, std::span<const double> y);
std::vector<double> average_ranks(std::span<const double> values);

struct CorrelationReport {
  std::vector<std::string> shared;
  std::vector<std::string> missing_external;  // in the model curve, absent from the table
  std::vector<std::string> missing_model;     // in the table, absent from the model curve
  double pearson = 0.0;
  double spearman = 0.0;
};

using ErrorTable = std::map<std::string, double>;

/// CSV with header "category,error_rate".
ErrorTable parse_error_table(std::string_view csv);

CorrelationReport correlate_error_profiles(const RegularityCurve& curve, const ErrorTable& external);

// --- Export -------------------------------------------------------------------

std::string regularity_curve_csv(const RegularityCurve& curve);
Json regularity_curve_json(const RegularityCurve& curve);
std::string decoding_folds_csv(const DecodingReport& report);

/// Rows of (pc1, pc2, label) for plotting.
std::string pca_scatter_csv(const Tensor& embeddings, std::span<const std::string> labels);

}  // namespace relbot::analysis
