#pragma once
// Procedural stimuli: parametric discs, quadrilateral oddball trials and
// one-hot categorical stimuli. Every generator is a pure function of its
// parameters and seed.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "relbot/tensor.hpp"

namespace relbot::stimuli {

struct GrayscaleImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;  // row-major, each in [0, 1]

  friend bool operator==(const GrayscaleImage&, const GrayscaleImage&) = default;
};

/// Dataset split tag carried by every record so leakage can be checked mechanically.
enum class Split : std::uint8_t { kTrain, kTest, kOod, kHoldout };

const char* split_name(Split split);

/// Stacks flattened images into an [n, width*height] matrix.
Tensor stack_images(std::span<const GrayscaleImage> images);
Tensor stack_images(std::span<const GrayscaleImage* const> images);

// --- Parametric discs ---------------------------------------------------------

struct LatentFeatures {
  double size = 0.0;
  double luminosity = 0.0;

  friend bool operator==(const LatentFeatures&, const LatentFeatures&) = default;
};

inline constexpr double kLatentCap = 1.5;
inline constexpr std::size_t kMinCanvas = 16;

/// Centered anti-aliased disc of radius 0.1c + size*0.3c and interior intensity
/// 0.2 + 0.8*luminosity, saturating at 1 for luminosity above 1.
GrayscaleImage render_parametric_shape(const LatentFeatures& latents, std::size_t canvas_size);

struct ParametricStimulus {
  std::size_t id = 0;
  LatentFeatures latents;
  Split split = Split::kTrain;
};

struct SimilarityPair {
  std::size_t a = 0;
  std::size_t b = 0;
  double target = 0.0;
  Split split = Split::kTrain;
};

inline constexpr double kInDistributionNormalizer = 1.4142135623730951;

/// 1 - ||a - b|| / normalizer.
double similarity_target(const LatentFeatures& a, const LatentFeatures& b, double normalizer);

struct SimilarityDatasetOptions {
  std::size_t test_pairs = 1000;
  std::size_t ood_pairs = 1000;
  std::size_t ood_levels = 3;
};

struct SimilarityDataset {
  std::size_t grid = 0;
  double ood_band = 0.0;
  double normalizer = kInDistributionNormalizer;
  std::vector<ParametricStimulus> stimuli;  // indexed by id
  std::vector<SimilarityPair> train;
  std::vector<SimilarityPair> test;
  std::vector<SimilarityPair> ood;

  std::vector<std::size_t> ids_with(Split split) const;
};

/// Training latents on the grid over [0,1]^2, in-distribution test latents at the
/// grid cell centres, OOD latents with size in (1, 1 + ood_band] and luminosity on
/// the grid. Train pairs are every unordered pair of training stimuli (including
/// a stimulus with itself); test and OOD pairs are seeded samples.
SimilarityDataset build_similarity_pairs(std::size_t grid, double ood_band, std::uint64_t seed,
                                         const SimilarityDatasetOptions& options = {});

// --- Quadrilaterals -----------------------------------------------------------

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

using Quad = std::array<Point, 4>;

struct QuadProperties {
  bool has_right_angles = false;    // every interior angle is right
  bool has_parallel_sides = false;  // at least one pair of opposite sides parallel
  bool has_equal_sides = false;     // all four sides of equal length
  bool has_symmetry_axis = false;   // some reflection maps the polygon onto itself

  int score() const;
  friend bool operator==(const QuadProperties&, const QuadProperties&) = default;
};

inline constexpr double kAngleTolerance = 1e-6;
inline constexpr double kLengthTolerance = 1e-6;

QuadProperties measure_properties(const Quad& vertices, double angle_tolerance = kAngleTolerance,
                                  double length_tolerance = kLengthTolerance);

/// Non-degenerate and free of edge crossings.
bool is_simple(const Quad& vertices);
double signed_area(const Quad& vertices);

/// Vertex with maximal x - y (first on ties).
std::size_t bottom_right_index(const Quad& vertices);

struct QuadrilateralCategory {
  std::string name;
  Quad canonical_vertices;
  QuadProperties properties;
  int regularity_score = 0;
};

/// Validates vertices (simple, counterclockwise) and that the declared flags match
/// the measured ones; throws ValidationError otherwise.
QuadrilateralCategory make_category(std::string name, const Quad& vertices,
                                    const QuadProperties& declared);

/// Ten categories spanning regularity scores 4 down to 0.
std::vector<QuadrilateralCategory> build_quadrilateral_catalog();

inline constexpr double kDefaultOddballMagnitude = 0.15;

/// Canonical vertices with the bottom-right vertex displaced by magnitude times the
/// bounding-box diagonal in a seeded direction; retries up to 100 directions to
/// keep the quadrilateral simple, then throws GenerationError.
Quad make_oddball(const QuadrilateralCategory& category, double magnitude, std::uint64_t seed);

struct Placement {
  double size_scale = 1.0;
  double rotation = 0.0;  // radians
  friend bool operator==(const Placement&, const Placement&) = default;
};

/// Renders vertices normalized by the category's canonical frame (centroid and
/// radius of the canonical shape), so an oddball keeps its deviation visible.
GrayscaleImage render_quadrilateral(const QuadrilateralCategory& category, const Quad& vertices,
                                    const Placement& placement, std::size_t canvas_size);

struct TrialOptions {
  std::size_t canvas_size = 32;
  double magnitude = kDefaultOddballMagnitude;
  double min_scale = 0.7;
  double max_scale = 1.3;
};

inline constexpr std::size_t kTrialSize = 6;

/// Geometry of a trial without its images.
struct TrialLayout {
  std::size_t category_index = 0;
  std::size_t oddball_index = 0;
  std::array<Placement, kTrialSize - 1> variant_transforms;  // in image order, oddball skipped
  Placement oddball_transform;
  Quad oddball_vertices;
  double perturbation_magnitude = 0.0;
  std::uint64_t seed = 0;
};

struct OddballTrial {
  TrialLayout layout;
  QuadrilateralCategory category;
  std::vector<GrayscaleImage> images;  // kTrialSize entries

  std::size_t oddball_index() const { return layout.oddball_index; }
};

TrialLayout plan_oddball_trial(const QuadrilateralCategory& category, std::size_t category_index,
                               std::uint64_t seed, const TrialOptions& options = {});

/// Image at a trial position (oddball or variant).
GrayscaleImage render_trial_image(const TrialLayout& layout, const QuadrilateralCategory& category,
                                  std::size_t position, std::size_t canvas_size);

OddballTrial build_oddball_trial(const QuadrilateralCategory& category, std::uint64_t seed,
                                 const TrialOptions& options = {}, std::size_t category_index = 0);

/// Trial t uses category t mod |catalog| and seed derive_seed(master_seed, t).
std::vector<TrialLayout> plan_oddball_trials(std::span<const QuadrilateralCategory> catalog,
                                             std::size_t n_trials, std::uint64_t master_seed,
                                             const TrialOptions& options = {});
std::vector<OddballTrial> build_oddball_trials(std::span<const QuadrilateralCategory> catalog,
                                               std::size_t n_trials, std::uint64_t master_seed,
                                               const TrialOptions& options = {});

// --- One-hot categorical stimuli ----------------------------------------------

struct CategoricalStimulus {
  std::size_t id = 0;  // feature_a * n_values + feature_b
  std::size_t feature_a = 0;
  std::size_t feature_b = 0;
  Split split = Split::kHoldout;
};

/// 1 if both features match, 0.5 if exactly one does, 0 otherwise.
double categorical_target(const CategoricalStimulus& x, const CategoricalStimulus& y);

struct CategoricalDataset {
  std::size_t n_values = 0;
  std::vector<CategoricalStimulus> stimuli;  // all n_values^2, indexed by id
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> holdout_ids;
  std::vector<SimilarityPair> train_pairs;    // every ordered pair of training stimuli
  std::vector<SimilarityPair> holdout_pairs;  // per holdout stimulus: identical, one shared, none shared

  /// Concatenated one-hot codes, length 2 * n_values; ones at a and n_values + b.
  std::vector<double> encoding(std::size_t id) const;
  Tensor encode(std::span<const std::size_t> ids) const;
};

CategoricalDataset build_onehot_dataset(std::size_t n_values, std::size_t n_train, std::uint64_t seed);

// --- Export -------------------------------------------------------------------

/// Binary PGM (P5, maxval 255, value = round(pixel * 255)).
std::string pgm_bytes(const GrayscaleImage& image);
void write_pgm(const std::filesystem::path& path, const GrayscaleImage& image);

}  // namespace relbot::stimuli
