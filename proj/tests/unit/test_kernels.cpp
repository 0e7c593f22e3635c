#include <gtest/gtest.h>

#include <cstring>
#include <vector>

#include "relbot/errors.hpp"
#include "relbot/kernels.hpp"
#include "relbot/rng.hpp"

using namespace relbot;
using kernels::Isa;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-2.0, 2.0);
  return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Naive triple loop in the documented order: k innermost per output element.
void reference_gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
}

}  // namespace

TEST(ScalarKernels, GemmMatchesNaiveLoopBitForBit) {
  for (auto [m, k, n] : {std::tuple{1, 1, 1}, {3, 5, 7}, {17, 33, 9}, {64, 128, 31}}) {
    const auto a = random_vector(m * k, 1), b = random_vector(k * n, 2);
    std::vector<double> got(m * n), want(m * n);
    kernels::scalar_table().gemm(a.data(), b.data(), got.data(), m, k, n);
    reference_gemm(a.data(), b.data(), want.data(), m, k, n);
    EXPECT_TRUE(bit_equal(got, want)) << m << "x" << k << "x" << n;
  }
}

TEST(ScalarKernels, ElementwiseDefinitions) {
  const std::vector<double> x{-1.0, 0.0, 2.0}, y{3.0, -4.0, 0.5};
  std::vector<double> out(3);
  const auto& t = kernels::scalar_table();
  t.relu(x.data(), out.data(), 3);
  EXPECT_EQ(out, (std::vector<double>{0.0, 0.0, 2.0}));
  t.add(x.data(), y.data(), out.data(), 3);
  EXPECT_EQ(out, (std::vector<double>{2.0, -4.0, 2.5}));
  t.sub(x.data(), y.data(), out.data(), 3);
  EXPECT_EQ(out, (std::vector<double>{-4.0, 4.0, 1.5}));
  t.mul(x.data(), y.data(), out.data(), 3);
  EXPECT_EQ(out, (std::vector<double>{-3.0, -0.0, 1.0}));
  t.scale(2.0, x.data(), out.data(), 3);
  EXPECT_EQ(out, (std::vector<double>{-2.0, 0.0, 4.0}));
  t.relu_backward(x.data(), y.data(), out.data(), 3);
  EXPECT_EQ(out, (std::vector<double>{0.0, 0.0, 0.5}));
  std::vector<double> acc{1.0, 1.0, 1.0};
  t.accumulate(x.data(), acc.data(), 3);
  EXPECT_EQ(acc, (std::vector<double>{0.0, 1.0, 3.0}));
}

TEST(Transpose, RoundTripsAcrossBlockBoundaries) {
  const std::size_t m = 45, n = 70;
  const auto in = random_vector(m * n, 3);
  std::vector<double> t(m * n), back(m * n);
  kernels::transpose(in.data(), t.data(), m, n);
  EXPECT_EQ(t[5 * m + 3], in[3 * n + 5]);
  kernels::transpose(t.data(), back.data(), n, m);
  EXPECT_TRUE(bit_equal(in, back));
}

TEST(Dispatch, ScalarAlwaysSupportedAndSelectable) {
  EXPECT_TRUE(kernels::isa_supported(Isa::kScalar));
  EXPECT_EQ(kernels::table_for(Isa::kScalar).isa, Isa::kScalar);
  EXPECT_EQ(kernels::isa_name(Isa::kScalar), "scalar");
  const Isa before = kernels::active().isa;
  kernels::set_active(Isa::kScalar);
  EXPECT_EQ(kernels::active().isa, Isa::kScalar);
  kernels::set_active(before);
}

#if defined(RELBOT_HAVE_AVX2)

class Avx2Equivalence : public ::testing::Test {
 protected:
  void SetUp() override {
    if (!kernels::isa_supported(Isa::kAvx2)) GTEST_SKIP() << "CPU lacks AVX2";
  }
  const kernels::KernelTable& scalar = kernels::scalar_table();
  const kernels::KernelTable& simd = kernels::avx2_table();
};

TEST_F(Avx2Equivalence, GemmBitIdenticalOverAwkwardShapes) {
  // Row counts around the 6/2/1 micro-kernel split, column counts around the 8-wide panel.
  for (std::size_t m : {1, 2, 5, 6, 7, 13, 64})
    for (std::size_t k : {1, 3, 32, 100})
      for (std::size_t n : {1, 4, 7, 8, 9, 15, 16, 17, 33}) {
        const auto a = random_vector(m * k, m * 1000 + k), b = random_vector(k * n, n * 7 + 11);
        std::vector<double> c1(m * n, 99.0), c2(m * n, -99.0);
        scalar.gemm(a.data(), b.data(), c1.data(), m, k, n);
        simd.gemm(a.data(), b.data(), c2.data(), m, k, n);
        ASSERT_TRUE(bit_equal(c1, c2)) << m << "x" << k << "x" << n;
      }
}

TEST_F(Avx2Equivalence, ElementwiseBitIdenticalIncludingTails) {
  for (std::size_t n : {0, 1, 3, 4, 5, 8, 31, 1000}) {
    const auto x = random_vector(n, 5 + n), y = random_vector(n, 6 + n);
    std::vector<double> a(n), b(n);
    scalar.add(x.data(), y.data(), a.data(), n);
    simd.add(x.data(), y.data(), b.data(), n);
    EXPECT_TRUE(bit_equal(a, b));
    scalar.sub(x.data(), y.data(), a.data(), n);
    simd.sub(x.data(), y.data(), b.data(), n);
    EXPECT_TRUE(bit_equal(a, b));
    scalar.mul(x.data(), y.data(), a.data(), n);
    simd.mul(x.data(), y.data(), b.data(), n);
    EXPECT_TRUE(bit_equal(a, b));
    scalar.scale(-0.37, x.data(), a.data(), n);
    simd.scale(-0.37, x.data(), b.data(), n);
    EXPECT_TRUE(bit_equal(a, b));
    scalar.relu(x.data(), a.data(), n);
    simd.relu(x.data(), b.data(), n);
    EXPECT_TRUE(bit_equal(a, b));
    scalar.relu_backward(x.data(), y.data(), a.data(), n);
    simd.relu_backward(x.data(), y.data(), b.data(), n);
    EXPECT_TRUE(bit_equal(a, b));
    a = y;
    b = y;
    scalar.accumulate(x.data(), a.data(), n);
    simd.accumulate(x.data(), b.data(), n);
    EXPECT_TRUE(bit_equal(a, b));
  }
}

#endif
