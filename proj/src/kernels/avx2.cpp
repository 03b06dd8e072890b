#include <immintrin.h>

#include <algorithm>
#include <cstdint>
#include <vector>

#include "fpq/kernels.hpp"

namespace fpq::kernels {
namespace {

struct GridConsts {
  __m256d sign_mask;
  __m256d cmax;
  __m256d unit;
  __m256d unit_mant;
  __m256i unit_exp;
  __m256i m_bits;
  __m256i mant_mask;
  __m256i one_bits;
  __m256i exp_bias;
  __m256i one;

  explicit GridConsts(const FpGrid& g)
      : sign_mask(_mm256_set1_pd(-0.0)),
        cmax(_mm256_set1_pd(g.cmax)),
        unit(_mm256_set1_pd(g.unit)),
        unit_mant(_mm256_set1_pd(g.unit_mant)),
        unit_exp(_mm256_set1_epi64x(g.unit_exp)),
        m_bits(_mm256_set1_epi64x(g.m_bits)),
        mant_mask(_mm256_set1_epi64x(0x000FFFFFFFFFFFFFLL)),
        one_bits(_mm256_set1_epi64x(0x3FF0000000000000LL)),
        exp_bias(_mm256_set1_epi64x(1023)),
        one(_mm256_set1_epi64x(1)) {}
};

inline __m256d quantize4(__m256d v, const GridConsts& k) {
  const __m256d sign = _mm256_and_pd(v, k.sign_mask);
  const __m256d ax = _mm256_min_pd(_mm256_andnot_pd(k.sign_mask, v), k.cmax);

  // Exact binade index against the 2^-bias grid: the unbiased exponent of
  // |x|, minus one when its mantissa falls below the grid unit's mantissa.
  // Inputs come from 32-bit floats, so |x| is never a 64-bit subnormal.
  const __m256i bits = _mm256_castpd_si256(ax);
  const __m256i expo = _mm256_sub_epi64(_mm256_srli_epi64(bits, 52), k.exp_bias);
  const __m256d mant = _mm256_castsi256_pd(
      _mm256_or_si256(_mm256_and_si256(bits, k.mant_mask), k.one_bits));
  const __m256i below =
      _mm256_castpd_si256(_mm256_cmp_pd(mant, k.unit_mant, _CMP_LT_OQ));
  __m256i binade = _mm256_add_epi64(_mm256_sub_epi64(expo, k.unit_exp), below);
  const __m256i normal = _mm256_cmpgt_epi64(binade, k.one);
  binade = _mm256_blendv_epi8(k.one, binade, normal);

  const __m256i shift = _mm256_sub_epi64(binade, k.m_bits);
  const __m256d pow2 = _mm256_castsi256_pd(
      _mm256_slli_epi64(_mm256_add_epi64(shift, k.exp_bias), 52));
  const __m256d scale = _mm256_mul_pd(k.unit, pow2);

  const __m256d idx = _mm256_round_pd(_mm256_div_pd(ax, scale),
                                      _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  const __m256d q = _mm256_min_pd(_mm256_mul_pd(idx, scale), k.cmax);
  return _mm256_or_pd(q, sign);
}

void quantize_fp_avx2(const float* x, float* out, std::size_t n,
                      const FpGrid& g) {
  const GridConsts k(g);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_cvtps_pd(_mm_loadu_ps(x + i));
    _mm_storeu_ps(out + i, _mm256_cvtpd_ps(quantize4(v, k)));
  }
  if (i < n) {
    alignas(16) float tail_in[4] = {0.0f, 0.0f, 0.0f, 0.0f};
    alignas(16) float tail_out[4];
    for (std::size_t j = i; j < n; ++j) tail_in[j - i] = x[j];
    const __m256d v = _mm256_cvtps_pd(_mm_load_ps(tail_in));
    _mm_store_ps(tail_out, _mm256_cvtpd_ps(quantize4(v, k)));
    for (std::size_t j = i; j < n; ++j) out[j] = tail_out[j - i];
  }
}

double sq_err_avx2(const float* a, const float* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_cvtps_pd(_mm_loadu_ps(a + i)),
                                    _mm256_cvtps_pd(_mm_loadu_ps(b + i)));
    acc = _mm256_add_pd(acc, _mm256_mul_pd(d, d));
  }
  alignas(32) double lane[4];
  _mm256_store_pd(lane, acc);
  for (; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    lane[i & 3] += d * d;
  }
  return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

inline __m256d load4(const float* p) { return _mm256_cvtps_pd(_mm_loadu_ps(p)); }
inline __m256d load4(const double* p) { return _mm256_loadu_pd(p); }

template <typename In, typename Out>
void gemm_avx2(const In* a, const In* b, Out* c, std::size_t m, std::size_t k,
               std::size_t n) {
  std::vector<double> acc(n);
  const std::size_t n4 = n & ~std::size_t{3};
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const In* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const __m256d avv = _mm256_set1_pd(av);
      const In* brow = b + p * n;
      std::size_t j = 0;
      for (; j < n4; j += 4) {
        const __m256d cur = _mm256_loadu_pd(acc.data() + j);
        _mm256_storeu_pd(acc.data() + j,
                         _mm256_add_pd(cur, _mm256_mul_pd(avv, load4(brow + j))));
      }
      for (; j < n; ++j) acc[j] += av * static_cast<double>(brow[j]);
    }
    Out* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<Out>(acc[j]);
  }
}

void gemm_f32_avx2(const float* a, const float* b, float* c, std::size_t m,
                   std::size_t k, std::size_t n) {
  gemm_avx2(a, b, c, m, k, n);
}

void gemm_f64_avx2(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n) {
  gemm_avx2(a, b, c, m, k, n);
}

}  // namespace

const Ops& avx2_table() {
  static const Ops ops{"avx2", quantize_fp_avx2, sq_err_avx2, gemm_f32_avx2,
                       gemm_f64_avx2};
  return ops;
}

}  // namespace fpq::kernels
