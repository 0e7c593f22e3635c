#include "relbot/analysis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "relbot/autodiff.hpp"
#include "relbot/errors.hpp"
#include "relbot/rng.hpp"

namespace relbot::analysis {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kPi = 3.141592653589793;

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Matrix to_eigen(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("expected a matrix, got " + shape_string(t.shape()));
  Matrix m(t.rows(), t.cols());
  std::copy(t.raw(), t.raw() + t.size(), m.data());
  return m;
}

/// OLS with intercept; returns [intercept, coefficients...].
Eigen::VectorXd ols(const Matrix& x, const Eigen::VectorXd& y) {
  Matrix design(x.rows(), x.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(x.cols()) = x;
  return design.colPivHouseholderQr().solve(y);
}

double predict(const Eigen::VectorXd& beta, const Matrix& x, Eigen::Index row) {
  double v = beta[0];
  for (Eigen::Index j = 0; j < x.cols(); ++j) v += beta[j + 1] * x(row, j);
  return v;
}

Matrix select_rows(const Matrix& x, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

// --- PCA ----------------------------------------------------------------------

Tensor PcaResult::project(const Tensor& x) const {
  const std::size_t d = mean.size();
  if (x.rank() != 2 || x.cols() != d)
    throw ShapeError("pca projection: expected [n, " + std::to_string(d) + "], got " + shape_string(x.shape()));
  const std::size_t n = x.rows(), k = count();
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += (x.at(i, j) - mean[j]) * components.at(c, j);
      out.at(i, c) = s;
    }
  return out;
}

PcaResult pca(const Tensor& x, std::size_t k) {
  if (x.rank() != 2) throw ShapeError("pca: expected a matrix, got " + shape_string(x.shape()));
  const std::size_t n = x.rows(), d = x.cols();
  if (k < 1 || k > d || k > n)
    throw ValidationError("pca: need 1 <= k <= min(rows, dims); got k=" + std::to_string(k) + " for " +
                          shape_string(x.shape()));
  if (n < 2) throw ValidationError("pca: need at least two rows");
  PcaResult result;
  result.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) result.mean[j] += x.at(i, j);
  for (double& m : result.mean) m /= static_cast<double>(n);

  Matrix cov = Matrix::Zero(d, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a) {
      const double ca = x.at(i, a) - result.mean[a];
      for (std::size_t b = a; b < d; ++b) cov(a, b) += ca * (x.at(i, b) - result.mean[b]);
    }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) {
      cov(a, b) /= static_cast<double>(n - 1);
      cov(b, a) = cov(a, b);
    }

  const Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
  if (solver.info() != Eigen::Success) throw ValidationError("pca: eigendecomposition failed");
  const Eigen::VectorXd& values = solver.eigenvalues();  // ascending
  const double largest = std::max(0.0, values[static_cast<Eigen::Index>(d) - 1]);
  const double cutoff = 1e-12 * std::max(1.0, largest);
  for (std::size_t i = 0; i < d; ++i) {
    const double v = values[static_cast<Eigen::Index>(d - 1 - i)];
    result.spectrum.push_back(v > cutoff ? v : 0.0);
    if (v > cutoff) ++result.rank;
  }
  const std::size_t kept = std::min(k, result.rank);
  result.rank_deficient = kept < k;
  result.components = Tensor({std::max<std::size_t>(kept, 1), d});
  if (kept == 0) {
    result.components = Tensor::zeros({1, d});
    result.components.at(0, 0) = 1.0;
    result.explained_variance.push_back(0.0);
    return result;
  }
  for (std::size_t c = 0; c < kept; ++c) {
    const Eigen::Index col = static_cast<Eigen::Index>(d - 1 - c);
    std::size_t big = 0;
    for (std::size_t j = 1; j < d; ++j)
      if (std::abs(solver.eigenvectors()(j, col)) > std::abs(solver.eigenvectors()(big, col))) big = j;
    const double sign = solver.eigenvectors()(big, col) < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < d; ++j) result.components.at(c, j) = sign * solver.eigenvectors()(j, col);
    result.explained_variance.push_back(result.spectrum[c]);
  }
  return result;
}

// --- Latent axes --------------------------------------------------------------

AxesResult dimension_axes(const Tensor& embeddings, const Tensor& latents) {
  if (embeddings.rank() != 2 || latents.rank() != 2 || latents.cols() != 2 || latents.rows() != embeddings.rows())
    throw ShapeError("dimension_axes: expected embeddings [n, d] and latents [n, 2], got " +
                     shape_string(embeddings.shape()) + " and " + shape_string(latents.shape()));
  const std::size_t n = embeddings.rows();
  if (n < 10) throw ValidationError("dimension_axes: need at least 10 rows");
  for (std::size_t j = 0; j < 2; ++j) {
    bool constant = true;
    for (std::size_t i = 1; i < n && constant; ++i) constant = latents.at(i, j) == latents.at(0, j);
    if (constant) throw ValidationError("dimension_axes: latent column " + std::to_string(j) + " is constant");
  }
  const PcaResult fit = pca(embeddings, std::min<std::size_t>({10, embeddings.cols(), n}));
  const Matrix scores = to_eigen(fit.project(embeddings));
  const Matrix comps = to_eigen(fit.components);
  AxesResult result;
  result.n_components = fit.count();
  for (std::size_t j = 0; j < 2; ++j) {
    Eigen::VectorXd y(n);
    for (std::size_t i = 0; i < n; ++i) y[static_cast<Eigen::Index>(i)] = latents.at(i, j);
    const Eigen::VectorXd beta = ols(scores, y);
    const Eigen::VectorXd axis = comps.transpose() * beta.tail(beta.size() - 1);
    const double norm = axis.norm();
    if (!(norm > 0.0)) throw ValidationError("dimension_axes: latent " + std::to_string(j) + " has no linear axis");
    result.axes.emplace_back(axis.data(), axis.data() + axis.size());
    for (double& v : result.axes.back()) v /= norm;
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < result.axes[0].size(); ++i) dot += result.axes[0][i] * result.axes[1][i];
  result.angle_degrees = std::acos(std::min(1.0, std::abs(dot))) * 180.0 / kPi;
  return result;
}

// --- Oddball picking ----------------------------------------------------------

std::size_t oddball_pick(const Tensor& six) {
  if (six.rank() != 2 || six.rows() != stimuli::kTrialSize)
    throw ShapeError("oddball_pick: expected [6, d], got " + shape_string(six.shape()));
  const std::size_t d = six.cols();
  std::vector<double> centroid(d, 0.0);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < d; ++j) centroid[j] += six.at(i, j);
  for (double& c : centroid) c /= 6.0;
  std::size_t best = 0;
  double best_distance = -1.0;
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = six.at(i, j) - centroid[j];
      s += diff * diff;
    }
    const double distance = std::sqrt(s);
    if (distance > best_distance) {
      best_distance = distance;
      best = i;
    }
  }
  return best;
}

Tensor trial_embeddings(const models::ModelState& state, std::span<const stimuli::QuadrilateralCategory> catalog,
                        std::span<const stimuli::TrialLayout> trials, std::size_t canvas_size) {
  constexpr std::size_t kChunk = 100;  // trials per forward pass
  const std::size_t dim = canvas_size * canvas_size;
  const std::size_t emb_dim = state.spec.encoder.embedding_dim;
  Tensor out({std::max<std::size_t>(1, trials.size() * stimuli::kTrialSize), emb_dim});
  for (std::size_t begin = 0; begin < trials.size(); begin += kChunk) {
    const std::size_t end = std::min(trials.size(), begin + kChunk);
    Tensor images({(end - begin) * stimuli::kTrialSize, dim});
    for (std::size_t t = begin; t < end; ++t) {
      const auto& category = catalog[trials[t].category_index];
      for (std::size_t p = 0; p < stimuli::kTrialSize; ++p) {
        const auto image = stimuli::render_trial_image(trials[t], category, p, canvas_size);
        std::copy(image.pixels.begin(), image.pixels.end(), images.raw() + ((t - begin) * stimuli::kTrialSize + p) * dim);
      }
    }
    const Tensor emb = models::encode(state, images);
    std::copy(emb.raw(), emb.raw() + emb.size(), out.raw() + begin * stimuli::kTrialSize * emb_dim);
  }
  return out;
}

std::vector<std::size_t> pick_all(const Tensor& embeddings) {
  if (embeddings.rank() != 2 || embeddings.rows() % stimuli::kTrialSize != 0)
    throw ShapeError("pick_all: rows must be a multiple of 6");
  const std::size_t d = embeddings.cols();
  std::vector<std::size_t> picks;
  for (std::size_t t = 0; t < embeddings.rows() / stimuli::kTrialSize; ++t) {
    Tensor six({stimuli::kTrialSize, d});
    std::copy(embeddings.raw() + t * stimuli::kTrialSize * d, embeddings.raw() + (t + 1) * stimuli::kTrialSize * d,
              six.raw());
    picks.push_back(oddball_pick(six));
  }
  return picks;
}

RegularityCurve error_rates_by_category(std::span<const stimuli::TrialLayout> trials,
                                        std::span<const stimuli::QuadrilateralCategory> catalog,
                                        std::span<const std::size_t> picks, std::size_t min_trials) {
  if (picks.size() != trials.size()) throw ShapeError("error_rates_by_category: one pick per trial required");
  std::vector<std::size_t> counts(catalog.size(), 0), errors(catalog.size(), 0);
  for (std::size_t t = 0; t < trials.size(); ++t) {
    const std::size_t c = trials[t].category_index;
    if (c >= catalog.size()) throw ValidationError("trial category index out of range");
    ++counts[c];
    errors[c] += picks[t] != trials[t].oddball_index ? 1 : 0;
  }
  RegularityCurve curve;
  for (std::size_t c = 0; c < catalog.size(); ++c) {
    if (counts[c] == 0) {
      curve.warnings.push_back("category '" + catalog[c].name + "' has no trials; excluded");
      continue;
    }
    if (counts[c] < min_trials)
      throw ValidationError("category '" + catalog[c].name + "' has " + std::to_string(counts[c]) +
                            " trials; at least " + std::to_string(min_trials) + " required");
    curve.categories.push_back({catalog[c].name, catalog[c].regularity_score,
                                static_cast<double>(errors[c]) / static_cast<double>(counts[c]), counts[c]});
  }
  std::vector<double> x, y;
  for (const auto& e : curve.categories) {
    x.push_back(4.0 - e.regularity_score);
    y.push_back(e.error_rate);
  }
  curve.slope = 0.0;
  curve.spearman = kNaN;
  if (x.size() >= 2) {
    const double mx = mean_of(x), my = mean_of(y);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      sxy += (x[i] - mx) * (y[i] - my);
      sxx += (x[i] - mx) * (x[i] - mx);
    }
    if (sxx > 0.0) curve.slope = sxy / sxx;
    curve.spearman = spearman(y, x);
  }
  return curve;
}

RegularityCurve error_rates_by_category(std::span<const stimuli::TrialLayout> trials,
                                        std::span<const stimuli::QuadrilateralCategory> catalog,
                                        const models::ModelState& state, std::size_t canvas_size,
                                        std::size_t min_trials) {
  const std::vector<std::size_t> picks = pick_all(trial_embeddings(state, catalog, trials, canvas_size));
  return error_rates_by_category(trials, catalog, picks, min_trials);
}

// --- Decoding -----------------------------------------------------------------

Json DecodingReport::to_json() const {
  Json j;
  j["target"] = target;
  j["score"] = score_name;
  j["n_components_used"] = n_components_used;
  j["n_folds"] = n_folds;
  j["fold_scores"] = fold_scores;
  j["mean_score"] = mean_score;
  return j;
}

std::vector<std::size_t> assign_folds(std::size_t n, std::size_t n_folds, std::uint64_t seed) {
  if (n_folds < 2 || n < n_folds)
    throw ValidationError("cross validation needs 2 <= n_folds <= rows; got " + std::to_string(n_folds) + " folds for " +
                          std::to_string(n) + " rows");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "folds"));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::size_t> fold(n);
  const std::size_t base = n / n_folds, extra = n % n_folds;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < n_folds; ++f) {
    const std::size_t size = base + (f < extra ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) fold[order[pos++]] = f;
  }
  return fold;
}

namespace {

struct FoldSplit {
  std::vector<std::size_t> train, test;
};

std::vector<FoldSplit> split_folds(const std::vector<std::size_t>& fold, std::size_t n_folds) {
  std::vector<FoldSplit> out(n_folds);
  for (std::size_t i = 0; i < fold.size(); ++i)
    for (std::size_t f = 0; f < n_folds; ++f) (f == fold[i] ? out[f].test : out[f].train).push_back(i);
  return out;
}

PcaResult decoding_basis(const Tensor& embeddings, std::size_t max_components) {
  const std::size_t k = std::min({max_components, embeddings.cols(), embeddings.rows()});
  return pca(embeddings, k);
}

}  // namespace

DecodingReport regularity_decoding(const Tensor& embeddings, std::span<const double> scores,
                                   const DecodingOptions& options) {
  const std::size_t n = embeddings.rows();
  if (embeddings.rank() != 2 || scores.size() != n)
    throw ShapeError("regularity_decoding: one score per embedding row required");
  if (std::all_of(scores.begin(), scores.end(), [&](double s) { return s == scores[0]; }))
    throw ValidationError("regularity_decoding: target is constant");
  const PcaResult basis = decoding_basis(embeddings, options.max_components);
  const Matrix x = to_eigen(basis.project(embeddings));
  const auto folds = split_folds(assign_folds(n, options.n_folds, options.seed), options.n_folds);

  DecodingReport report;
  report.target = "regularity_score";
  report.score_name = "r2";
  report.n_components_used = basis.count();
  report.n_folds = options.n_folds;
  for (const FoldSplit& f : folds) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(f.train.size()));
    for (std::size_t i = 0; i < f.train.size(); ++i) y[static_cast<Eigen::Index>(i)] = scores[f.train[i]];
    const Eigen::VectorXd beta = ols(select_rows(x, f.train), y);
    double mean_test = 0.0;
    for (std::size_t i : f.test) mean_test += scores[i];
    mean_test /= static_cast<double>(f.test.size());
    double sse = 0.0, sst = 0.0;
    for (std::size_t i : f.test) {
      const double r = scores[i] - predict(beta, x, static_cast<Eigen::Index>(i));
      sse += r * r;
      sst += (scores[i] - mean_test) * (scores[i] - mean_test);
    }
    report.fold_scores.push_back(sst > 0.0 ? 1.0 - sse / sst : (sse == 0.0 ? 1.0 : 0.0));
  }
  report.mean_score = mean_of(report.fold_scores);
  return report;
}

DecodingReport category_decoding(const Tensor& embeddings, std::span<const std::size_t> labels,
                                 const DecodingOptions& options) {
  const std::size_t n = embeddings.rows();
  if (embeddings.rank() != 2 || labels.size() != n)
    throw ShapeError("category_decoding: one label per embedding row required");
  std::map<std::size_t, std::size_t> class_of;
  for (std::size_t l : labels) ++class_of[l];
  if (class_of.size() < 2) throw ValidationError("category_decoding: need at least two classes");
  for (const auto& [label, count] : class_of)
    if (count < 10)
      throw ValidationError("category_decoding: class " + std::to_string(label) + " has fewer than 10 rows");
  std::size_t next = 0;
  for (auto& [label, index] : class_of) index = next++;
  const std::size_t n_classes = class_of.size();

  const PcaResult basis = decoding_basis(embeddings, options.max_components);
  Tensor features = basis.project(embeddings);
  const std::size_t k = basis.count();
  for (std::size_t c = 0; c < k; ++c) {
    const double sd = std::sqrt(basis.explained_variance[c]);
    if (sd > 0.0)
      for (std::size_t i = 0; i < n; ++i) features.at(i, c) /= sd;
  }
  const auto folds = split_folds(assign_folds(n, options.n_folds, options.seed), options.n_folds);

  DecodingReport report;
  report.target = "category";
  report.score_name = "accuracy";
  report.n_components_used = k;
  report.n_folds = options.n_folds;
  for (const FoldSplit& f : folds) {
    Tensor xs({f.train.size(), k}), ys({f.train.size(), n_classes});
    for (std::size_t r = 0; r < f.train.size(); ++r) {
      for (std::size_t c = 0; c < k; ++c) xs.at(r, c) = features.at(f.train[r], c);
      ys.at(r, class_of.at(labels[f.train[r]])) = 1.0;
    }
    Tensor w({k, n_classes}), b({1, n_classes});
    for (std::size_t step = 0; step < options.steps; ++step) {
      ad::Graph g;
      const ad::Var wv = g.leaf(w, true), bv = g.leaf(b, true);
      const ad::Var probs = ad::softmax_row(ad::add(ad::matmul(g.leaf(xs, false), wv), bv));
      const ad::Var picked = ad::sum(ad::multiply(probs, g.leaf(ys, false)), 1);
      const ad::Var loss = ad::scale(ad::mean(ad::log(picked)), -1.0);
      const ad::GradientMap grads = g.backward(loss);
      const Tensor& gw = grads.at(wv);
      const Tensor& gb = grads.at(bv);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= options.learning_rate * gw[i];
      for (std::size_t i = 0; i < b.size(); ++i) b[i] -= options.learning_rate * gb[i];
    }
    std::size_t correct = 0;
    for (std::size_t i : f.test) {
      std::size_t best = 0;
      double best_logit = -std::numeric_limits<double>::infinity();
      for (std::size_t cls = 0; cls < n_classes; ++cls) {
        double logit = b[cls];
        for (std::size_t c = 0; c < k; ++c) logit += features.at(i, c) * w.at(c, cls);
        if (logit > best_logit) {
          best_logit = logit;
          best = cls;
        }
      }
      correct += best == class_of.at(labels[i]) ? 1 : 0;
    }
    report.fold_scores.push_back(static_cast<double>(correct) / static_cast<double>(f.test.size()));
  }
  report.mean_score = mean_of(report.fold_scores);
  return report;
}

// --- Correlation --------------------------------------------------------------

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("pearson: need two equal-length series of >= 2");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return kNaN;
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  const std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
  return pearson(rx, ry);
}

ErrorTable parse_error_table(std::string_view csv) {
  ErrorTable table;
  std::istringstream in{std::string(csv)};
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != "category,error_rate")
        throw ValidationError("error table: expected header 'category,error_rate', got '" + line + "'");
      header_seen = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
      throw ValidationError("error table line " + std::to_string(line_no) + ": expected two fields");
    const std::string name = line.substr(0, comma);
    const std::string value = line.substr(comma + 1);
    double rate = 0.0;
    try {
      std::size_t used = 0;
      rate = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw ValidationError("error table line " + std::to_string(line_no) + ": bad error_rate '" + value + "'");
    }
    if (!(rate >= 0.0 && rate <= 1.0))
      throw ValidationError("error table line " + std::to_string(line_no) + ": error_rate outside [0, 1]");
    if (!table.emplace(name, rate).second)
      throw ValidationError("error table line " + std::to_string(line_no) + ": duplicate category '" + name + "'");
  }
  if (!header_seen) throw ValidationError("error table is empty");
  return table;
}

CorrelationReport correlate_error_profiles(const RegularityCurve& curve, const ErrorTable& external) {
  CorrelationReport report;
  std::vector<double> model_rates, external_rates;
  std::set<std::string> in_curve;
  for (const auto& e : curve.categories) {
    in_curve.insert(e.name);
    const auto it = external.find(e.name);
    if (it == external.end()) {
      report.missing_external.push_back(e.name);
      continue;
    }
    report.shared.push_back(e.name);
    model_rates.push_back(e.error_rate);
    external_rates.push_back(it->second);
  }
  for (const auto& [name, rate] : external)
    if (!in_curve.count(name)) report.missing_model.push_back(name);
  if (report.shared.size() < 3)
    throw ValidationError("correlate_error_profiles: need at least 3 shared categories, found " +
                          std::to_string(report.shared.size()));
  report.pearson = pearson(model_rates, external_rates);
  report.spearman = spearman(model_rates, external_rates);
  return report;
}

// --- Export -------------------------------------------------------------------

std::string regularity_curve_csv(const RegularityCurve& curve) {
  std::ostringstream out;
  out << "category,regularity_score,error_rate,trial_count\n";
  for (const auto& e : curve.categories)
    out << e.name << ',' << e.regularity_score << ',' << format_double(e.error_rate) << ',' << e.trial_count << '\n';
  return out.str();
}

Json regularity_curve_json(const RegularityCurve& curve) {
  Json j;
  Json rows = Json::array();
  for (const auto& e : curve.categories)
    rows.push_back({{"category", e.name},
                    {"regularity_score", e.regularity_score},
                    {"error_rate", e.error_rate},
                    {"trial_count", e.trial_count}});
  j["categories"] = rows;
  j["slope"] = curve.slope;
  j["spearman"] = std::isnan(curve.spearman) ? Json(nullptr) : Json(curve.spearman);
  j["warnings"] = curve.warnings;
  return j;
}

std::string decoding_folds_csv(const DecodingReport& report) {
  std::ostringstream out;
  out << "fold," << report.score_name << '\n';
  for (std::size_t f = 0; f < report.fold_scores.size(); ++f)
    out << f << ',' << format_double(report.fold_scores[f]) << '\n';
  return out.str();
}

std::string pca_scatter_csv(const Tensor& embeddings, std::span<const std::string> labels) {
  if (labels.size() != embeddings.rows()) throw ShapeError("pca_scatter_csv: one label per row required");
  const PcaResult fit = pca(embeddings, std::min<std::size_t>({2, embeddings.cols(), embeddings.rows()}));
  const Tensor scores = fit.project(embeddings);
  std::ostringstream out;
  out << "pc1,pc2,label\n";
  for (std::size_t i = 0; i < embeddings.rows(); ++i) {
    const double pc1 = scores.at(i, 0);
    const double pc2 = fit.count() > 1 ? scores.at(i, 1) : 0.0;
    out << format_double(pc1) << ',' << format_double(pc2) << ',' << labels[i] << '\n';
  }
  return out.str();
}

}  // namespace relbot::analysis
