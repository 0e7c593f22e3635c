// Compiled with -mavx2 only (no -mfma): mul and add stay separate so every lane
// rounds exactly like the scalar reference.
#include <immintrin.h>

#include "relbot/kernels.hpp"

namespace relbot::kernels {
namespace {

// Row tail: one row of a against columns [j0, n).
inline void gemm_row(const double* arow, const double* b, double* crow, std::size_t k,
                     std::size_t n, std::size_t j0) {
  std::size_t j = j0;
  for (; j + 8 <= n; j += 8) {
    __m256d c0 = _mm256_setzero_pd();
    __m256d c1 = _mm256_setzero_pd();
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d av = _mm256_broadcast_sd(arow + p);
      const double* brow = b + p * n + j;
      c0 = _mm256_add_pd(c0, _mm256_mul_pd(av, _mm256_loadu_pd(brow)));
      c1 = _mm256_add_pd(c1, _mm256_mul_pd(av, _mm256_loadu_pd(brow + 4)));
    }
    _mm256_storeu_pd(crow + j, c0);
    _mm256_storeu_pd(crow + j + 4, c1);
  }
  for (; j + 4 <= n; j += 4) {
    __m256d c0 = _mm256_setzero_pd();
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d av = _mm256_broadcast_sd(arow + p);
      c0 = _mm256_add_pd(c0, _mm256_mul_pd(av, _mm256_loadu_pd(b + p * n + j)));
    }
    _mm256_storeu_pd(crow + j, c0);
  }
  for (; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc = acc + arow[p] * b[p * n + j];
    crow[j] = acc;
  }
}

template <std::size_t Rows>
inline void micro_kernel(const double* a, std::size_t lda, const double* panel, double* c,
                         std::size_t ldc, std::size_t k) {
  __m256d acc[Rows][2];
  for (std::size_t r = 0; r < Rows; ++r) acc[r][0] = acc[r][1] = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_load_pd(panel + p * 8);
    const __m256d b1 = _mm256_load_pd(panel + p * 8 + 4);
    for (std::size_t r = 0; r < Rows; ++r) {
      const __m256d av = _mm256_broadcast_sd(a + r * lda + p);
      acc[r][0] = _mm256_add_pd(acc[r][0], _mm256_mul_pd(av, b0));
      acc[r][1] = _mm256_add_pd(acc[r][1], _mm256_mul_pd(av, b1));
    }
  }
  for (std::size_t r = 0; r < Rows; ++r) {
    _mm256_storeu_pd(c + r * ldc, acc[r][0]);
    _mm256_storeu_pd(c + r * ldc + 4, acc[r][1]);
  }
}

// B is packed one 8-column panel at a time (k x 8, contiguous) so the inner
// loop streams it linearly. Packing moves data only; summation order per
// output element is unchanged.
void gemm_avx2(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n) {
  constexpr std::size_t kRows = 6;
  const std::size_t full_cols = n - n % 8;
  if (full_cols > 0) {
    auto* panel = static_cast<double*>(_mm_malloc(k * 8 * sizeof(double), 32));
    for (std::size_t j = 0; j < full_cols; j += 8) {
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t q = 0; q < 8; ++q) panel[p * 8 + q] = b[p * n + j + q];
      std::size_t i = 0;
      for (; i + kRows <= m; i += kRows) micro_kernel<kRows>(a + i * k, k, panel, c + i * n + j, n, k);
      for (; i + 2 <= m; i += 2) micro_kernel<2>(a + i * k, k, panel, c + i * n + j, n, k);
      for (; i < m; ++i) micro_kernel<1>(a + i * k, k, panel, c + i * n + j, n, k);
    }
    _mm_free(panel);
  }
  if (full_cols < n)
    for (std::size_t i = 0; i < m; ++i) gemm_row(a + i * k, b, c + i * n, k, n, full_cols);
}

template <typename VecOp, typename ScalarOp>
inline void binary(const double* x, const double* y, double* out, std::size_t n, VecOp vop,
                   ScalarOp sop) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, vop(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = sop(x[i], y[i]);
}

void add_avx2(const double* x, const double* y, double* out, std::size_t n) {
  binary(
      x, y, out, n, [](__m256d a, __m256d b) { return _mm256_add_pd(a, b); },
      [](double a, double b) { return a + b; });
}

void sub_avx2(const double* x, const double* y, double* out, std::size_t n) {
  binary(
      x, y, out, n, [](__m256d a, __m256d b) { return _mm256_sub_pd(a, b); },
      [](double a, double b) { return a - b; });
}

void mul_avx2(const double* x, const double* y, double* out, std::size_t n) {
  binary(
      x, y, out, n, [](__m256d a, __m256d b) { return _mm256_mul_pd(a, b); },
      [](double a, double b) { return a * b; });
}

void scale_avx2(double alpha, const double* x, double* out, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

void accumulate_avx2(const double* x, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) y[i] = y[i] + x[i];
}

void relu_avx2(const double* x, double* out, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    // select v where v > 0; NaN compares false and maps to 0 like the scalar path
    const __m256d mask = _mm256_cmp_pd(v, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i, _mm256_and_pd(mask, v));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_avx2(const double* x, const double* grad, double* out, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i, _mm256_and_pd(mask, _mm256_loadu_pd(grad + i)));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? grad[i] : 0.0;
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{Isa::kAvx2,     gemm_avx2,       add_avx2,
                                 sub_avx2,       mul_avx2,        scale_avx2,
                                 accumulate_avx2, relu_avx2,      relu_backward_avx2};
  return table;
}

}  // namespace relbot::kernels
