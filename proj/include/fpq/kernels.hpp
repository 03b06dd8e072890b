#pragma once

// Data-parallel inner loops. Every kernel has a portable scalar reference
// and optional SIMD variants; the active table is chosen once at startup
// from CPU features. All variants follow the same operation order so their
// outputs are bitwise identical:
//   - reductions accumulate into 4 lanes (element i -> lane i % 4) and
//     combine as (l0 + l1) + (l2 + l3);
//   - GEMM accumulates each output sequentially over k in 64-bit;
//   - no fused multiply-add.

#include <cstddef>
#include <string_view>

namespace fpq::kernels {

/// Precomputed grid parameters for one minifloat format.
struct FpGrid {
  double unit = 1.0;      // 2^-bias, the only rounded quantity of the grid
  double unit_mant = 1.0; // unit = unit_mant * 2^unit_exp, unit_mant in [1, 2)
  int unit_exp = 0;
  double cmax = 0.0;      // largest representable magnitude
  int m_bits = 0;
};

struct Ops {
  std::string_view name;

  /// out[i] = nearest code of x[i] (clip, per-element scale, ties-to-even).
  void (*quantize_fp)(const float* x, float* out, std::size_t n,
                      const FpGrid& grid);

  /// Sum of (a[i] - b[i])^2 in 64-bit.
  double (*sq_err)(const float* a, const float* b, std::size_t n);

  /// c[i][j] = sum_k a[i][k] * b[k][j]; a is MxK, b is KxN, c is MxN,
  /// all row-major. 64-bit accumulation, 32-bit store.
  void (*gemm_f32)(const float* a, const float* b, float* c, std::size_t m,
                   std::size_t k, std::size_t n);

  /// Same contract as gemm_f32 in 64-bit throughout.
  void (*gemm_f64)(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n);
};

const Ops& scalar();

/// AVX2 table, or nullptr when not compiled in or unsupported by this CPU.
const Ops* avx2();

/// Best available table. FPQ_FORCE_SCALAR=1 in the environment pins the
/// scalar reference.
const Ops& active();

}  // namespace fpq::kernels
