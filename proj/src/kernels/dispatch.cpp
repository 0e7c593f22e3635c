#include <atomic>
#include <cstdlib>
#include <string>

#include "relbot/errors.hpp"
#include "relbot/kernels.hpp"

namespace relbot::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(RELBOT_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

const KernelTable* choose_default() {
  if (const char* env = std::getenv("RELBOT_ISA")) {
    const std::string name(env);
    if (name == "scalar") return &scalar_table();
    if (name == "avx2" && isa_supported(Isa::kAvx2)) return &table_for(Isa::kAvx2);
  }
  return isa_supported(Isa::kAvx2) ? &table_for(Isa::kAvx2) : &scalar_table();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{choose_default()};
  return current;
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
      return cpu_has_avx2();
  }
  return false;
}

const KernelTable& table_for(Isa isa) {
  if (!isa_supported(isa))
    throw ValidationError("kernel variant '" + std::string(isa_name(isa)) +
                          "' is not supported on this CPU");
#if defined(RELBOT_HAVE_AVX2)
  if (isa == Isa::kAvx2) return avx2_table();
#endif
  return scalar_table();
}

const KernelTable& active() { return *slot().load(std::memory_order_relaxed); }

void set_active(Isa isa) { slot().store(&table_for(isa), std::memory_order_relaxed); }

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

}  // namespace relbot::kernels
