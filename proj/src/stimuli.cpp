#include "relbot/stimuli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "relbot/errors.hpp"
#include "relbot/rng.hpp"

namespace relbot::stimuli {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Subsample offsets for 2x2 supersampling inside a unit pixel.
constexpr double kSubsamples[2] = {0.25, 0.75};
// Normalized quadrilateral radius as a fraction of the canvas.
constexpr double kQuadExtent = 0.28;

Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
double norm(Point a) { return std::hypot(a.x, a.y); }

GrayscaleImage blank(std::size_t canvas) {
  GrayscaleImage img;
  img.width = img.height = canvas;
  img.pixels.assign(canvas * canvas, 0.0);
  return img;
}

template <typename Inside>
GrayscaleImage rasterize(std::size_t canvas, double intensity, Inside inside) {
  GrayscaleImage img = blank(canvas);
  for (std::size_t row = 0; row < canvas; ++row) {
    for (std::size_t col = 0; col < canvas; ++col) {
      int hits = 0;
      for (double sy : kSubsamples)
        for (double sx : kSubsamples)
          if (inside(static_cast<double>(col) + sx, static_cast<double>(row) + sy)) ++hits;
      img.pixels[row * canvas + col] = intensity * static_cast<double>(hits) / 4.0;
    }
  }
  return img;
}

bool segments_intersect(Point p1, Point p2, Point q1, Point q2) {
  auto orient = [](Point a, Point b, Point c) { return cross(b - a, c - a); };
  auto on_segment = [](Point a, Point b, Point c) {
    return std::min(a.x, b.x) <= c.x && c.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= c.y &&
           c.y <= std::max(a.y, b.y);
  };
  const double d1 = orient(q1, q2, p1), d2 = orient(q1, q2, p2);
  const double d3 = orient(p1, p2, q1), d4 = orient(p1, p2, q2);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
    return true;
  if (d1 == 0 && on_segment(q1, q2, p1)) return true;
  if (d2 == 0 && on_segment(q1, q2, p2)) return true;
  if (d3 == 0 && on_segment(p1, p2, q1)) return true;
  if (d4 == 0 && on_segment(p1, p2, q2)) return true;
  return false;
}

Point reflect(Point p, Point a, Point b) {
  const Point d = b - a;
  const double t = dot(p - a, d) / dot(d, d);
  const Point foot = a + t * d;
  return foot + (foot - p);
}

// A reflection across line (a, b) maps the polygon onto itself: vertices map onto
// vertices and the induced permutation preserves the boundary cycle.
bool reflects_onto_itself(const Quad& v, Point a, Point b, double tol) {
  if (norm(b - a) <= tol) return false;
  std::array<int, 4> image{};
  for (std::size_t i = 0; i < 4; ++i) {
    const Point r = reflect(v[i], a, b);
    int match = -1;
    for (std::size_t j = 0; j < 4; ++j)
      if (norm(r - v[j]) <= tol) match = static_cast<int>(j);
    if (match < 0) return false;
    image[i] = match;
  }
  for (std::size_t i = 0; i < 4; ++i) {
    const int step = (image[(i + 1) % 4] - image[i] + 4) % 4;
    if (step != 1 && step != 3) return false;
  }
  return true;
}

struct Frame {
  Point centroid;
  double radius;
};

Frame canonical_frame(const Quad& v) {
  Point c{0.0, 0.0};
  for (const Point& p : v) c = c + 0.25 * p;
  double r = 0.0;
  for (const Point& p : v) r = std::max(r, norm(p - c));
  return {c, r};
}

bool point_in_polygon(const std::array<Point, 4>& poly, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = 3; i < 4; j = i++) {
    const Point& pi = poly[i];
    const Point& pj = poly[j];
    if ((pi.y > y) != (pj.y > y)) {
      const double x_cross = (pj.x - pi.x) * (y - pi.y) / (pj.y - pi.y) + pi.x;
      if (x < x_cross) inside = !inside;
    }
  }
  return inside;
}

Placement draw_placement(Rng& rng, const TrialOptions& options) {
  Placement p;
  p.size_scale = rng.uniform(options.min_scale, options.max_scale);
  p.rotation = rng.uniform(0.0, kTwoPi);
  return p;
}

}  // namespace

const char* split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
    case Split::kOod: return "ood";
    case Split::kHoldout: return "holdout";
  }
  return "unknown";
}

Tensor stack_images(std::span<const GrayscaleImage> images) {
  std::vector<const GrayscaleImage*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& img : images) ptrs.push_back(&img);
  return stack_images(std::span<const GrayscaleImage* const>(ptrs));
}

Tensor stack_images(std::span<const GrayscaleImage* const> images) {
  if (images.empty()) throw ShapeError("stack_images: no images");
  const std::size_t dim = images[0]->pixels.size();
  Tensor out({images.size(), dim});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->pixels.size() != dim) throw ShapeError("stack_images: image sizes differ");
    std::copy(images[i]->pixels.begin(), images[i]->pixels.end(), out.raw() + i * dim);
  }
  return out;
}

// --- Parametric discs ---------------------------------------------------------

GrayscaleImage render_parametric_shape(const LatentFeatures& latents, std::size_t canvas_size) {
  if (canvas_size < kMinCanvas)
    throw ValidationError("canvas_size must be >= 16, got " + std::to_string(canvas_size));
  auto in_range = [](double v) { return v >= 0.0 && v <= kLatentCap; };
  if (!in_range(latents.size) || !in_range(latents.luminosity))
    throw ValidationError("latent features must lie in [0, 1.5]");
  const double c = static_cast<double>(canvas_size);
  const double radius = 0.1 * c + latents.size * (0.4 * c - 0.1 * c);
  const double intensity = std::min(1.0, 0.2 + 0.8 * latents.luminosity);
  const double centre = c / 2.0;
  const double r2 = radius * radius;
  return rasterize(canvas_size, intensity, [&](double x, double y) {
    const double dx = x - centre, dy = y - centre;
    return dx * dx + dy * dy <= r2;
  });
}

double similarity_target(const LatentFeatures& a, const LatentFeatures& b, double normalizer) {
  const double ds = a.size - b.size, dl = a.luminosity - b.luminosity;
  return 1.0 - std::sqrt(ds * ds + dl * dl) / normalizer;
}

std::vector<std::size_t> SimilarityDataset::ids_with(Split split) const {
  std::vector<std::size_t> ids;
  for (const auto& s : stimuli)
    if (s.split == split) ids.push_back(s.id);
  return ids;
}

SimilarityDataset build_similarity_pairs(std::size_t grid, double ood_band, std::uint64_t seed,
                                         const SimilarityDatasetOptions& options) {
  if (grid < 4) throw ValidationError("grid must be >= 4, got " + std::to_string(grid));
  if (!(ood_band > 0.0 && ood_band <= 0.5))
    throw ValidationError("ood_band must lie in (0, 0.5]");
  if (options.ood_levels == 0) throw ValidationError("ood_levels must be positive");

  SimilarityDataset ds;
  ds.grid = grid;
  ds.ood_band = ood_band;
  ds.normalizer = kInDistributionNormalizer * (1.0 + ood_band);
  const double step = 1.0 / static_cast<double>(grid - 1);
  auto push = [&](double size, double lum, Split split) {
    ds.stimuli.push_back({ds.stimuli.size(), {size, lum}, split});
  };
  for (std::size_t i = 0; i < grid; ++i)
    for (std::size_t j = 0; j < grid; ++j)
      push(static_cast<double>(i) * step, static_cast<double>(j) * step, Split::kTrain);
  for (std::size_t i = 0; i + 1 < grid; ++i)
    for (std::size_t j = 0; j + 1 < grid; ++j)
      push((static_cast<double>(i) + 0.5) * step, (static_cast<double>(j) + 0.5) * step, Split::kTest);
  // luminosity saturates above 1, so extrapolation runs along size only
  for (std::size_t l = 1; l <= options.ood_levels; ++l)
    for (std::size_t j = 0; j < grid; ++j)
      push(1.0 + ood_band * static_cast<double>(l) / static_cast<double>(options.ood_levels),
           static_cast<double>(j) * step, Split::kOod);

  auto pair = [&](std::size_t a, std::size_t b, Split split) {
    return SimilarityPair{a, b, similarity_target(ds.stimuli[a].latents, ds.stimuli[b].latents, ds.normalizer),
                          split};
  };
  const auto train_ids = ds.ids_with(Split::kTrain);
  for (std::size_t i = 0; i < train_ids.size(); ++i)
    for (std::size_t j = i; j < train_ids.size(); ++j)
      ds.train.push_back(pair(train_ids[i], train_ids[j], Split::kTrain));

  Rng rng(derive_seed(seed, "similarity-pairs"));
  const auto test_ids = ds.ids_with(Split::kTest);
  const auto ood_ids = ds.ids_with(Split::kOod);
  for (std::size_t n = 0; n < options.test_pairs; ++n)
    ds.test.push_back(pair(test_ids[rng.below(test_ids.size())], test_ids[rng.below(test_ids.size())],
                           Split::kTest));
  // OOD pairs anchor an OOD stimulus against an OOD or in-distribution test stimulus
  std::vector<std::size_t> partners = ood_ids;
  partners.insert(partners.end(), test_ids.begin(), test_ids.end());
  for (std::size_t n = 0; n < options.ood_pairs; ++n)
    ds.ood.push_back(pair(ood_ids[rng.below(ood_ids.size())], partners[rng.below(partners.size())],
                          Split::kOod));
  return ds;
}

// --- Quadrilaterals -----------------------------------------------------------

int QuadProperties::score() const {
  return static_cast<int>(has_right_angles) + static_cast<int>(has_parallel_sides) +
         static_cast<int>(has_equal_sides) + static_cast<int>(has_symmetry_axis);
}

QuadProperties measure_properties(const Quad& v, double angle_tolerance, double length_tolerance) {
  QuadProperties props;
  props.has_right_angles = true;
  for (std::size_t i = 0; i < 4; ++i) {
    const Point a = v[(i + 3) % 4] - v[i];
    const Point b = v[(i + 1) % 4] - v[i];
    const double angle = std::atan2(std::abs(cross(a, b)), dot(a, b));
    if (std::abs(angle - std::numbers::pi / 2.0) > angle_tolerance) props.has_right_angles = false;
  }
  std::array<Point, 4> edges;
  std::array<double, 4> lengths;
  for (std::size_t i = 0; i < 4; ++i) {
    edges[i] = v[(i + 1) % 4] - v[i];
    lengths[i] = norm(edges[i]);
  }
  for (std::size_t i = 0; i < 2; ++i) {
    const double between = std::atan2(std::abs(cross(edges[i], edges[i + 2])), std::abs(dot(edges[i], edges[i + 2])));
    if (between <= angle_tolerance) props.has_parallel_sides = true;
  }
  const auto [lo, hi] = std::minmax_element(lengths.begin(), lengths.end());
  props.has_equal_sides = *hi - *lo <= length_tolerance;

  auto mid = [&](std::size_t i) { return 0.5 * (v[i] + v[(i + 1) % 4]); };
  props.has_symmetry_axis = reflects_onto_itself(v, v[0], v[2], length_tolerance) ||
                            reflects_onto_itself(v, v[1], v[3], length_tolerance) ||
                            reflects_onto_itself(v, mid(0), mid(2), length_tolerance) ||
                            reflects_onto_itself(v, mid(1), mid(3), length_tolerance);
  return props;
}

double signed_area(const Quad& v) {
  double twice = 0.0;
  for (std::size_t i = 0; i < 4; ++i) twice += cross(v[i], v[(i + 1) % 4]);
  return twice / 2.0;
}

bool is_simple(const Quad& v) {
  for (std::size_t i = 0; i < 4; ++i)
    if (norm(v[(i + 1) % 4] - v[i]) <= kLengthTolerance) return false;
  if (std::abs(signed_area(v)) <= kLengthTolerance) return false;
  return !segments_intersect(v[0], v[1], v[2], v[3]) && !segments_intersect(v[1], v[2], v[3], v[0]);
}

std::size_t bottom_right_index(const Quad& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < 4; ++i)
    if (v[i].x - v[i].y > v[best].x - v[best].y) best = i;
  return best;
}

QuadrilateralCategory make_category(std::string name, const Quad& vertices,
                                    const QuadProperties& declared) {
  if (!is_simple(vertices)) throw ValidationError("category '" + name + "' is not a simple quadrilateral");
  if (signed_area(vertices) <= 0.0)
    throw ValidationError("category '" + name + "' vertices are not counterclockwise");
  const QuadProperties measured = measure_properties(vertices);
  if (!(measured == declared))
    throw ValidationError("category '" + name + "' declared properties do not match its vertices");
  return QuadrilateralCategory{std::move(name), vertices, declared, declared.score()};
}

std::vector<QuadrilateralCategory> build_quadrilateral_catalog() {
  const double h = std::sqrt(3.0) / 2.0;
  auto on_circle = [](double degrees) {
    const double r = degrees * std::numbers::pi / 180.0;
    return Point{std::cos(r), std::sin(r)};
  };
  //                                  right  parallel equal  symmetric
  std::vector<QuadrilateralCategory> catalog;
  catalog.push_back(make_category("square", {{{0, 0}, {1, 0}, {1, 1}, {0, 1}}}, {true, true, true, true}));
  catalog.push_back(make_category("rectangle", {{{0, 0}, {1.6, 0}, {1.6, 1}, {0, 1}}}, {true, true, false, true}));
  catalog.push_back(make_category("isosceles_trapezoid", {{{0, 0}, {1.6, 0}, {1.2, 1}, {0.4, 1}}},
                                  {false, true, false, true}));
  catalog.push_back(make_category("parallelogram", {{{0, 0}, {1.2, 0}, {1.6, 1}, {0.4, 1}}},
                                  {false, true, false, false}));
  catalog.push_back(make_category("kite", {{{0, -1}, {0.6, 0}, {0, 0.8}, {-0.6, 0}}}, {false, false, false, true}));
  catalog.push_back(make_category("right_trapezoid", {{{0, 0}, {1.6, 0}, {1.0, 1}, {0, 1}}},
                                  {false, true, false, false}));
  catalog.push_back(make_category("rhombus", {{{0, 0}, {1, 0}, {1.5, h}, {0.5, h}}}, {false, true, true, true}));
  catalog.push_back(make_category("trapezoid", {{{0, 0}, {1.6, 0}, {1.1, 1}, {0.2, 1}}},
                                  {false, true, false, false}));
  catalog.push_back(make_category("cyclic_irregular",
                                  {{on_circle(-75), on_circle(15), on_circle(95), on_circle(160)}},
                                  {false, false, false, false}));
  catalog.push_back(make_category("irregular", {{{0, 0}, {1.4, -0.2}, {1.2, 1.1}, {0.3, 0.8}}},
                                  {false, false, false, false}));
  return catalog;
}

Quad make_oddball(const QuadrilateralCategory& category, double magnitude, std::uint64_t seed) {
  if (!(magnitude > 0.0)) throw ValidationError("oddball magnitude must be positive");
  const Quad& base = category.canonical_vertices;
  double min_x = base[0].x, max_x = base[0].x, min_y = base[0].y, max_y = base[0].y;
  for (const Point& p : base) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  const double displacement = magnitude * std::hypot(max_x - min_x, max_y - min_y);
  const std::size_t target = bottom_right_index(base);
  Rng rng(seed);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double theta = rng.uniform(0.0, kTwoPi);
    Quad out = base;
    out[target] = base[target] + Point{displacement * std::cos(theta), displacement * std::sin(theta)};
    if (is_simple(out)) return out;
  }
  throw GenerationError("could not perturb '" + category.name + "' into a simple quadrilateral");
}

GrayscaleImage render_quadrilateral(const QuadrilateralCategory& category, const Quad& vertices,
                                    const Placement& placement, std::size_t canvas_size) {
  if (canvas_size < kMinCanvas)
    throw ValidationError("canvas_size must be >= 16, got " + std::to_string(canvas_size));
  const Frame frame = canonical_frame(category.canonical_vertices);
  const double c = static_cast<double>(canvas_size);
  const double scale = placement.size_scale * kQuadExtent * c / frame.radius;
  const double cs = std::cos(placement.rotation), sn = std::sin(placement.rotation);
  std::array<Point, 4> poly;
  for (std::size_t i = 0; i < 4; ++i) {
    const Point q = vertices[i] - frame.centroid;
    const double rx = cs * q.x - sn * q.y;
    const double ry = sn * q.x + cs * q.y;
    // image rows grow downwards
    poly[i] = {c / 2.0 + scale * rx, c / 2.0 - scale * ry};
  }
  return rasterize(canvas_size, 1.0, [&](double x, double y) { return point_in_polygon(poly, x, y); });
}

TrialLayout plan_oddball_trial(const QuadrilateralCategory& category, std::size_t category_index,
                               std::uint64_t seed, const TrialOptions& options) {
  if (!(options.min_scale > 0.0 && options.min_scale <= options.max_scale))
    throw ValidationError("trial scale range must satisfy 0 < min_scale <= max_scale");
  Rng rng(seed);
  TrialLayout layout;
  layout.category_index = category_index;
  layout.seed = seed;
  layout.perturbation_magnitude = options.magnitude;
  layout.oddball_index = static_cast<std::size_t>(rng.below(kTrialSize));
  for (auto& t : layout.variant_transforms) t = draw_placement(rng, options);
  layout.oddball_transform = draw_placement(rng, options);
  layout.oddball_vertices = make_oddball(category, options.magnitude, rng.next());
  return layout;
}

GrayscaleImage render_trial_image(const TrialLayout& layout, const QuadrilateralCategory& category,
                                  std::size_t position, std::size_t canvas_size) {
  if (position >= kTrialSize) throw ValidationError("trial position out of range");
  if (position == layout.oddball_index)
    return render_quadrilateral(category, layout.oddball_vertices, layout.oddball_transform, canvas_size);
  const std::size_t variant = position < layout.oddball_index ? position : position - 1;
  return render_quadrilateral(category, category.canonical_vertices, layout.variant_transforms[variant],
                              canvas_size);
}

OddballTrial build_oddball_trial(const QuadrilateralCategory& category, std::uint64_t seed,
                                 const TrialOptions& options, std::size_t category_index) {
  OddballTrial trial;
  trial.layout = plan_oddball_trial(category, category_index, seed, options);
  trial.category = category;
  trial.images.reserve(kTrialSize);
  for (std::size_t p = 0; p < kTrialSize; ++p)
    trial.images.push_back(render_trial_image(trial.layout, category, p, options.canvas_size));
  return trial;
}

std::vector<TrialLayout> plan_oddball_trials(std::span<const QuadrilateralCategory> catalog,
                                             std::size_t n_trials, std::uint64_t master_seed,
                                             const TrialOptions& options) {
  if (catalog.empty()) throw ValidationError("empty quadrilateral catalog");
  std::vector<TrialLayout> layouts;
  layouts.reserve(n_trials);
  for (std::size_t t = 0; t < n_trials; ++t) {
    const std::size_t c = t % catalog.size();
    layouts.push_back(plan_oddball_trial(catalog[c], c, derive_seed(master_seed, t), options));
  }
  return layouts;
}

std::vector<OddballTrial> build_oddball_trials(std::span<const QuadrilateralCategory> catalog,
                                               std::size_t n_trials, std::uint64_t master_seed,
                                               const TrialOptions& options) {
  std::vector<OddballTrial> trials;
  trials.reserve(n_trials);
  for (const TrialLayout& layout : plan_oddball_trials(catalog, n_trials, master_seed, options)) {
    OddballTrial trial;
    trial.layout = layout;
    trial.category = catalog[layout.category_index];
    for (std::size_t p = 0; p < kTrialSize; ++p)
      trial.images.push_back(render_trial_image(layout, trial.category, p, options.canvas_size));
    trials.push_back(std::move(trial));
  }
  return trials;
}

// --- One-hot categorical stimuli ----------------------------------------------

double categorical_target(const CategoricalStimulus& x, const CategoricalStimulus& y) {
  const int shared = static_cast<int>(x.feature_a == y.feature_a) + static_cast<int>(x.feature_b == y.feature_b);
  return shared == 2 ? 1.0 : shared == 1 ? 0.5 : 0.0;
}

std::vector<double> CategoricalDataset::encoding(std::size_t id) const {
  const CategoricalStimulus& s = stimuli.at(id);
  std::vector<double> code(2 * n_values, 0.0);
  code[s.feature_a] = 1.0;
  code[n_values + s.feature_b] = 1.0;
  return code;
}

Tensor CategoricalDataset::encode(std::span<const std::size_t> ids) const {
  Tensor out({ids.size(), 2 * n_values});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const CategoricalStimulus& s = stimuli.at(ids[r]);
    out.at(r, s.feature_a) = 1.0;
    out.at(r, n_values + s.feature_b) = 1.0;
  }
  return out;
}

CategoricalDataset build_onehot_dataset(std::size_t n_values, std::size_t n_train, std::uint64_t seed) {
  if (n_values < 2) throw ValidationError("n_values must be >= 2");
  if (n_train == 0 || n_train > n_values * n_values)
    throw ValidationError("n_train must lie in [1, n_values^2], got " + std::to_string(n_train));
  CategoricalDataset ds;
  ds.n_values = n_values;
  for (std::size_t a = 0; a < n_values; ++a)
    for (std::size_t b = 0; b < n_values; ++b) ds.stimuli.push_back({a * n_values + b, a, b, Split::kHoldout});

  Rng rng(derive_seed(seed, "onehot-train"));
  std::vector<std::size_t> order(ds.stimuli.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  ds.train_ids.assign(order.begin(), order.begin() + static_cast<long>(n_train));
  std::sort(ds.train_ids.begin(), ds.train_ids.end());
  for (std::size_t id : ds.train_ids) ds.stimuli[id].split = Split::kTrain;
  for (const auto& s : ds.stimuli)
    if (s.split == Split::kHoldout) ds.holdout_ids.push_back(s.id);

  for (std::size_t a : ds.train_ids)
    for (std::size_t b : ds.train_ids)
      ds.train_pairs.push_back({a, b, categorical_target(ds.stimuli[a], ds.stimuli[b]), Split::kTrain});

  // Balanced probes per holdout stimulus; partners come from the holdout set.
  Rng probe(derive_seed(seed, "onehot-holdout"));
  std::vector<std::size_t> one_shared, none_shared;
  for (std::size_t x : ds.holdout_ids) {
    const CategoricalStimulus& sx = ds.stimuli[x];
    ds.holdout_pairs.push_back({x, x, 1.0, Split::kHoldout});
    one_shared.clear();
    none_shared.clear();
    for (std::size_t y : ds.holdout_ids) {
      const double t = categorical_target(sx, ds.stimuli[y]);
      if (t == 0.5) one_shared.push_back(y);
      if (t == 0.0) none_shared.push_back(y);
    }
    if (!one_shared.empty()) {
      const std::size_t y = one_shared[probe.below(one_shared.size())];
      ds.holdout_pairs.push_back({x, y, 0.5, Split::kHoldout});
    }
    if (!none_shared.empty()) {
      const std::size_t y = none_shared[probe.below(none_shared.size())];
      ds.holdout_pairs.push_back({x, y, 0.0, Split::kHoldout});
    }
  }
  return ds;
}

// --- Export -------------------------------------------------------------------

std::string pgm_bytes(const GrayscaleImage& image) {
  std::ostringstream out;
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  std::string body(image.pixels.size(), '\0');
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    const double v = std::clamp(image.pixels[i], 0.0, 1.0);
    body[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  return out.str() + body;
}

void write_pgm(const std::filesystem::path& path, const GrayscaleImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const std::string bytes = pgm_bytes(image);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace relbot::stimuli
