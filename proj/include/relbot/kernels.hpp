#pragma once
// Dense float64 kernels with a scalar reference and SIMD variants.
//
// Every variant produces bit-identical results to the scalar reference:
// reductions keep the scalar left-to-right order per output element and no
// variant contracts multiply-add pairs into fused operations. Vectorization is
// therefore only ever across independent output elements.

#include <cstddef>
#include <string_view>

namespace relbot::kernels {

enum class Isa { kScalar, kAvx2 };

struct KernelTable {
  Isa isa;
  // c[m x n] = a[m x k] * b[k x n], all row-major. c is overwritten.
  void (*gemm)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n);
  void (*add)(const double* x, const double* y, double* out, std::size_t n);
  void (*sub)(const double* x, const double* y, double* out, std::size_t n);
  void (*mul)(const double* x, const double* y, double* out, std::size_t n);
  // out = alpha * x
  void (*scale)(double alpha, const double* x, double* out, std::size_t n);
  // y += x
  void (*accumulate)(const double* x, double* y, std::size_t n);
  void (*relu)(const double* x, double* out, std::size_t n);
  // out = grad where x > 0, else 0
  void (*relu_backward)(const double* x, const double* grad, double* out, std::size_t n);
};

const KernelTable& scalar_table();
#if defined(RELBOT_HAVE_AVX2)
const KernelTable& avx2_table();
#endif

bool isa_supported(Isa isa);
const KernelTable& table_for(Isa isa);

/// Kernel table chosen at first use: RELBOT_ISA=scalar|avx2 overrides, otherwise
/// the widest variant the CPU supports.
const KernelTable& active();

/// Replaces the active table for the remainder of the process (tests, benchmarks).
void set_active(Isa isa);

std::string_view isa_name(Isa isa);

/// out[n x m] = in[m x n]ᵀ
void transpose(const double* in, double* out, std::size_t m, std::size_t n);

}  // namespace relbot::kernels
