#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "relbot/autodiff.hpp"
#include "relbot/errors.hpp"
#include "relbot/rng.hpp"

using namespace relbot;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

}  // namespace

// --- Forward values ---------------------------------------------------------

TEST(Forward, IdentityMatmulReturnsVector) {
  ad::Graph g;
  const ad::Var y = ad::matmul(g.leaf(Tensor::identity(3)), g.leaf(vec({1, 2, 3})));
  EXPECT_EQ(y.value(), vec({1, 2, 3}));
}

TEST(Forward, ReluClampsNegatives) {
  ad::Graph g;
  EXPECT_EQ(ad::relu(g.leaf(vec({-1, 0, 2}))).value(), vec({0, 0, 2}));
}

TEST(Forward, SumOfSquares) {
  ad::Graph g;
  EXPECT_EQ(ad::sum(ad::square(g.leaf(vec({3, 4})))).value().item(), 25.0);
}

TEST(Forward, ReductionsAlongAxes) {
  ad::Graph g;
  const ad::Var x = g.leaf(Tensor::matrix({{1, 2, 3}, {4, 5, 6}}));
  EXPECT_EQ(ad::sum(x, 0).value(), Tensor::matrix({{5, 7, 9}}));
  EXPECT_EQ(ad::sum(x, 1).value(), Tensor::matrix({{6}, {15}}));
  EXPECT_EQ(ad::mean(x).value().item(), 3.5);
}

TEST(Forward, BroadcastRowAndColumn) {
  ad::Graph g;
  const ad::Var x = g.leaf(Tensor::matrix({{1, 2}, {3, 4}}));
  EXPECT_EQ(ad::add(x, g.leaf(Tensor::matrix({{10, 20}}))).value(), Tensor::matrix({{11, 22}, {13, 24}}));
  EXPECT_EQ(ad::sub(x, g.leaf(Tensor::matrix({{1}, {3}}))).value(), Tensor::matrix({{0, 1}, {0, 1}}));
  EXPECT_EQ(ad::multiply(x, g.leaf(Tensor::scalar(2.0))).value(), Tensor::matrix({{2, 4}, {6, 8}}));
}

TEST(Forward, SoftmaxRowsSumToOne) {
  ad::Graph g;
  const Tensor p = ad::softmax_row(g.leaf(Tensor::matrix({{1000, 1000, 1000}, {0, std::log(3.0), 0}}))).value();
  for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(p.at(0, c), 1.0 / 3.0);
  EXPECT_NEAR(p.at(1, 1), 0.6, 1e-15);
}

TEST(Forward, ConcatJoinsColumnsAndRows) {
  ad::Graph g;
  const ad::Var a = g.leaf(Tensor::matrix({{1}, {2}})), b = g.leaf(Tensor::matrix({{3, 4}, {5, 6}}));
  EXPECT_EQ(ad::concat(a, b, 1).value(), Tensor::matrix({{1, 3, 4}, {2, 5, 6}}));
  EXPECT_EQ(ad::concat(b, b, 0).value().shape(), (Shape{4, 2}));
}

TEST(Forward, TransposedMatmul) {
  ad::Graph g;
  const ad::Var a = g.leaf(Tensor::matrix({{1, 2}, {3, 4}}));
  EXPECT_EQ(ad::matmul(a, a, true).value(), Tensor::matrix({{5, 11}, {11, 25}}));
}

// --- Errors -----------------------------------------------------------------

TEST(Errors, ShapeMismatchNamesOperation) {
  ad::Graph g;
  const ad::Var a = g.leaf(Tensor({2, 3})), b = g.leaf(Tensor({2, 2}));
  try {
    ad::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("matmul"), std::string::npos) << what;
    EXPECT_NE(what.find("[2,3]"), std::string::npos) << what;
  }
  EXPECT_THROW(ad::add(a, b), ShapeError);
  EXPECT_THROW(ad::add(g.leaf(Tensor({1, 3})), a), ShapeError);  // only the rhs broadcasts
}

TEST(Errors, DomainViolations) {
  ad::Graph g;
  EXPECT_THROW(ad::sqrt(g.leaf(vec({1, -1}))), DomainError);
  EXPECT_THROW(ad::log(g.leaf(vec({0}))), DomainError);
  EXPECT_THROW(ad::log(g.leaf(vec({-2}))), DomainError);
}

TEST(Errors, NonScalarLossRejected) {
  ad::Graph g;
  const ad::Var x = g.leaf(vec({1, 2}), true);
  EXPECT_THROW(g.backward(ad::square(x)), ShapeError);
}

TEST(Errors, ForeignVarRejected) {
  ad::Graph g1, g2;
  const ad::Var a = g1.leaf(vec({1})), b = g2.leaf(vec({1}));
  EXPECT_THROW(ad::add(a, b), ShapeError);
}

// --- Gradients --------------------------------------------------------------

TEST(Backward, SquareGradientIsTwoX) {
  ad::Graph g;
  const ad::Var x = g.leaf(vec({3, 4}), true);
  const auto grads = g.backward(ad::sum(ad::square(x)));
  EXPECT_EQ(grads.at(x), vec({6, 8}));
}

TEST(Backward, EuclideanDistanceGradientIsUnitDirection) {
  ad::Graph g;
  const ad::Var x = g.leaf(Tensor::matrix({{3, 4}}), true);
  const ad::Var y = g.leaf(Tensor::matrix({{0, 0}}));
  const ad::Var d = ad::euclidean_distance(x, y);
  EXPECT_DOUBLE_EQ(d.value().item(), 5.0);
  const auto grads = g.backward(ad::sum(d));
  EXPECT_NEAR(grads.at(x)[0], 0.6, 1e-15);
  EXPECT_NEAR(grads.at(x)[1], 0.8, 1e-15);
  EXPECT_FALSE(grads.contains(y));
}

TEST(Backward, MultipleConsumersAccumulate) {
  ad::Graph g;
  const ad::Var x = g.leaf(vec({2}), true);
  const auto grads = g.backward(ad::sum(ad::add(ad::multiply(x, x), ad::scale(x, 3.0))));
  EXPECT_EQ(grads.at(x)[0], 7.0);
}

TEST(Backward, SqrtAtZeroHasZeroSubgradient) {
  ad::Graph g;
  const ad::Var a = g.leaf(Tensor::matrix({{1, 1}}), true);
  const auto grads = g.backward(ad::sum(ad::euclidean_distance(a, a)));
  for (double v : grads.at(a).data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Backward, LossWithoutParametersYieldsEmptyMap) {
  ad::Graph g;
  const ad::Var x = g.leaf(vec({1, 2}));
  const auto grads = g.backward(ad::sum(x));
  EXPECT_FALSE(grads.contains(x));
}

// --- Finite-difference oracle ----------------------------------------------

TEST(FiniteDifference, LinearSumIsExact) {
  Rng rng(7);
  const std::vector<Tensor> params{random_tensor({4, 3}, rng)};
  const double err = ad::finite_difference_check(
      [](ad::Graph&, std::span<const ad::Var> p) { return ad::sum(p[0]); }, params, 1e-5);
  EXPECT_LE(err, 1e-9);
}

TEST(FiniteDifference, QuadraticWithinRounding) {
  const std::vector<Tensor> params{vec({1, 2})};
  const double err = ad::finite_difference_check(
      [](ad::Graph&, std::span<const ad::Var> p) { return ad::sum(ad::square(p[0])); }, params, 1e-5);
  EXPECT_LE(err, 1e-6);
}

TEST(FiniteDifference, DetectsWrongGradient) {
  // relu's kink sits inside the difference stencil, so analytic and numeric disagree.
  const std::vector<Tensor> params{vec({0.0})};
  const double err = ad::finite_difference_check(
      [](ad::Graph&, std::span<const ad::Var> p) { return ad::sum(ad::relu(p[0])); }, params, 1e-5);
  EXPECT_GT(err, 0.1);
}

TEST(FiniteDifference, RandomTwoLayerNetworkTenParameters) {
  // 2 inputs -> 2 hidden (6 parameters) -> 1 output (3 parameters) plus a 1-element input scale.
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const std::vector<Tensor> params{random_tensor({2, 2}, rng), random_tensor({1, 2}, rng),
                                     random_tensor({2, 1}, rng), random_tensor({1, 1}, rng)};
    const Tensor x = random_tensor({5, 2}, rng);
    const Tensor y = random_tensor({5, 1}, rng, 0.0, 1.0);
    std::size_t count = 0;
    for (const Tensor& p : params) count += p.size();
    ASSERT_EQ(count, 9u);
    const auto fn = [&](ad::Graph& g, std::span<const ad::Var> p) {
      const ad::Var h = ad::sigmoid(ad::add(ad::matmul(g.leaf(x), p[0]), p[1]));
      const ad::Var out = ad::sigmoid(ad::add(ad::matmul(h, p[2]), p[3]));
      return ad::mean(ad::square(ad::sub(out, g.leaf(y))));
    };
    EXPECT_LE(ad::finite_difference_check(fn, params, 1e-5), 1e-4) << "seed " << seed;
  }
}

TEST(FiniteDifference, EveryPrimitiveAwayFromKinks) {
  Rng rng(11);
  const std::vector<Tensor> params{random_tensor({3, 4}, rng, 0.5, 1.5), random_tensor({4, 3}, rng),
                                   random_tensor({1, 3}, rng)};
  const auto fn = [](ad::Graph&, std::span<const ad::Var> p) {
    const ad::Var a = ad::sqrt(p[0]);
    const ad::Var b = ad::log(ad::exp(ad::scale(p[0], 0.5)));
    const ad::Var c = ad::concat(a, b, 1);                      // [3, 8]
    const ad::Var m = ad::matmul(ad::concat(p[1], p[1], 0), p[2], true);  // [8, 1]
    const ad::Var s = ad::softmax_row(ad::add(ad::matmul(ad::relu(ad::matmul(c, m, false)), p[2]), p[2]));
    const ad::Var t = ad::multiply(ad::sub(s, ad::mean(s, 0)), ad::sum(s, 1));
    return ad::add(ad::mean(ad::square(t)), ad::sum(ad::euclidean_distance(p[0], ad::square(p[0]))));
  };
  EXPECT_LE(ad::finite_difference_check(fn, params, 1e-6), 1e-4);
}

TEST(Gradients, UnreachableParameterGetsZeros) {
  const std::vector<Tensor> params{vec({1, 2}), vec({5})};
  const auto grads = ad::gradients(
      [](ad::Graph&, std::span<const ad::Var> p) { return ad::sum(ad::square(p[0])); }, params);
  ASSERT_EQ(grads.size(), 2u);
  EXPECT_EQ(grads[0], vec({2, 4}));
  EXPECT_EQ(grads[1], vec({0}));
}

// --- Determinism ------------------------------------------------------------

TEST(Determinism, RepeatedBackwardIsBitIdentical) {
  Rng rng(3);
  const std::vector<Tensor> params{random_tensor({16, 8}, rng), random_tensor({8, 4}, rng)};
  const Tensor x = random_tensor({32, 16}, rng);
  const auto fn = [&](ad::Graph& g, std::span<const ad::Var> p) {
    return ad::mean(ad::square(ad::matmul(ad::relu(ad::matmul(g.leaf(x), p[0])), p[1])));
  };
  EXPECT_EQ(ad::gradients(fn, params), ad::gradients(fn, params));
}
