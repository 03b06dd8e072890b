#include <algorithm>
#include <cmath>
#include <vector>

#include "fpq/kernels.hpp"
#include "grid_math.hpp"

namespace fpq::kernels {
namespace {

void quantize_fp_scalar(const float* x, float* out, std::size_t n,
                        const FpGrid& g) {
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<float>(detail::quantize_on_grid(x[i], g));
  }
}

double sq_err_scalar(const float* a, const float* b, std::size_t n) {
  double lane[4] = {0.0, 0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    lane[i & 3] += d * d;
  }
  return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

template <typename In, typename Out>
void gemm_scalar(const In* a, const In* b, Out* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const In* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const In* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        acc[j] += av * static_cast<double>(brow[j]);
      }
    }
    Out* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<Out>(acc[j]);
  }
}

void gemm_f32_scalar(const float* a, const float* b, float* c, std::size_t m,
                     std::size_t k, std::size_t n) {
  gemm_scalar(a, b, c, m, k, n);
}

void gemm_f64_scalar(const double* a, const double* b, double* c,
                     std::size_t m, std::size_t k, std::size_t n) {
  gemm_scalar(a, b, c, m, k, n);
}

}  // namespace

const Ops& scalar() {
  static const Ops ops{"scalar", quantize_fp_scalar, sq_err_scalar,
                       gemm_f32_scalar, gemm_f64_scalar};
  return ops;
}

}  // namespace fpq::kernels
