// AVX2 variants of the inner-loop kernels. This TU is compiled with -mavx2 and
// selected at runtime only when the CPU reports AVX2, so the rest of the
// library stays baseline-portable. No FMA: mul followed by add keeps rounding
// identical to the scalar reference.

#include "polymc/kernels.hpp"

#if defined(__AVX2__)
#include <immintrin.h>

#include <limits>

namespace polymc::kernels {
namespace {

void fill_avx2(double* x, double v, std::size_t n) {
  const __m256d vv = _mm256_set1_pd(v);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(x + i, vv);
  for (; i < n; ++i) x[i] = v;
}

void scale_avx2(double* x, double c, std::size_t n) {
  const __m256d vc = _mm256_set1_pd(c);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(x + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), vc));
  }
  for (; i < n; ++i) x[i] = x[i] * c;
}

void axpy_avx2(double* dst, const double* src, double a, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(src + i));
    _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(dst + i), prod));
  }
  for (; i < n; ++i) dst[i] = dst[i] + a * src[i];
}

void ar1_avx2(double* out, const double* prev, const double* noise, double a,
              double c, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  const __m256d vc = _mm256_set1_pd(c);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d p = _mm256_mul_pd(va, _mm256_loadu_pd(prev + i));
    const __m256d q = _mm256_mul_pd(vc, _mm256_loadu_pd(noise + i));
    _mm256_storeu_pd(out + i, _mm256_add_pd(p, q));
  }
  for (; i < n; ++i) out[i] = a * prev[i] + c * noise[i];
}

double max_avx2(const double* x, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  std::size_t i = 0;
  if (n >= 4) {
    __m256d vm = _mm256_loadu_pd(x);
    for (i = 4; i + 4 <= n; i += 4) vm = _mm256_max_pd(vm, _mm256_loadu_pd(x + i));
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, vm);
    for (double v : lanes) m = v > m ? v : m;
  }
  for (; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

double sum_avx2(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  const std::size_t n4 = n & ~static_cast<std::size_t>(3);
  for (std::size_t i = 0; i < n4; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  // Same combine order as the scalar reference: ((a0+a1)+(a2+a3)), then tail.
  double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (std::size_t i = n4; i < n; ++i) s = s + x[i];
  return s;
}

} // namespace

const Table avx2_table = {fill_avx2, scale_avx2, axpy_avx2, ar1_avx2,
                          max_avx2,  sum_avx2,   "avx2"};

} // namespace polymc::kernels

#else

namespace polymc::kernels {
const Table avx2_table = {nullptr, nullptr, nullptr, nullptr, nullptr, nullptr, nullptr};
} // namespace polymc::kernels

#endif
