#include <cstdlib>
#include <cstring>

#include "fpq/kernels.hpp"

namespace fpq::kernels {

#if defined(FPQ_HAVE_AVX2)
const Ops& avx2_table();
#endif

const Ops* avx2() {
#if defined(FPQ_HAVE_AVX2)
  static const bool supported = [] {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") != 0;
  }();
  if (supported) return &avx2_table();
#endif
  return nullptr;
}

const Ops& active() {
  static const Ops& chosen = []() -> const Ops& {
    const char* force = std::getenv("FPQ_FORCE_SCALAR");
    if (force != nullptr && std::strcmp(force, "0") != 0 && *force != '\0') {
      return scalar();
    }
    if (const Ops* ops = avx2()) return *ops;
    return scalar();
  }();
  return chosen;
}

}  // namespace fpq::kernels
