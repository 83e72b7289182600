#include "levylab/kernels.hpp"

#if defined(__x86_64__) || defined(__i386__)

#include <immintrin.h>

#include <limits>

// Compiled with target("avx2") only.  FMA is deliberately not enabled: the
// scalar reference uses separate multiply and add roundings.
#define LEVYLAB_AVX2 __attribute__((target("avx2")))

namespace levylab::kernels {

namespace {

LEVYLAB_AVX2 inline double fold(__m256d lo, __m256d hi) {
  // lo holds lanes 0..3, hi lanes 4..7; s_k = acc_k + acc_{k+4}.
  const __m256d s = _mm256_add_pd(lo, hi);
  alignas(32) double v[4];
  _mm256_store_pd(v, s);
  return (v[0] + v[1]) + (v[2] + v[3]);
}

LEVYLAB_AVX2 double sum_avx2(const double* x, std::size_t n) {
  __m256d a0 = _mm256_setzero_pd();
  __m256d a1 = _mm256_setzero_pd();
  const std::size_t body = n & ~std::size_t{7};
  for (std::size_t i = 0; i < body; i += 8) {
    a0 = _mm256_add_pd(a0, _mm256_loadu_pd(x + i));
    a1 = _mm256_add_pd(a1, _mm256_loadu_pd(x + i + 4));
  }
  double r = fold(a0, a1);
  for (std::size_t i = body; i < n; ++i) r += x[i];
  return r;
}

LEVYLAB_AVX2 double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d a0 = _mm256_setzero_pd();
  __m256d a1 = _mm256_setzero_pd();
  const std::size_t body = n & ~std::size_t{7};
  for (std::size_t i = 0; i < body; i += 8) {
    const __m256d p0 = _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    const __m256d p1 = _mm256_mul_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4));
    a0 = _mm256_add_pd(a0, p0);
    a1 = _mm256_add_pd(a1, p1);
  }
  double r = fold(a0, a1);
  for (std::size_t i = body; i < n; ++i) {
    const double p = x[i] * y[i];
    r += p;
  }
  return r;
}

LEVYLAB_AVX2 double max_avx2(const double* x, std::size_t n) {
  // max is exact, so lane order does not matter; NaN handling mirrors the
  // scalar select (a NaN element never replaces the running max).
  double m = -std::numeric_limits<double>::infinity();
  std::size_t i = 0;
  if (n >= 4) {
    __m256d acc = _mm256_set1_pd(m);
    for (; i + 4 <= n; i += 4) {
      const __m256d v = _mm256_loadu_pd(x + i);
      const __m256d gt = _mm256_cmp_pd(v, acc, _CMP_GT_OQ);
      acc = _mm256_blendv_pd(acc, v, gt);
    }
    alignas(32) double v[4];
    _mm256_store_pd(v, acc);
    for (double e : v) m = e > m ? e : m;
  }
  for (; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

LEVYLAB_AVX2 void euler_affine_avx2(double* x, const double* dw, double a, double c, double s,
                                    double dt, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  const __m256d vc = _mm256_set1_pd(c);
  const __m256d vs = _mm256_set1_pd(s);
  const __m256d vdt = _mm256_set1_pd(dt);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d xv = _mm256_loadu_pd(x + i);
    const __m256d drift = _mm256_add_pd(_mm256_mul_pd(va, xv), vc);
    const __m256d step = _mm256_mul_pd(drift, vdt);
    const __m256d noise = _mm256_mul_pd(vs, _mm256_loadu_pd(dw + i));
    _mm256_storeu_pd(x + i, _mm256_add_pd(_mm256_add_pd(xv, step), noise));
  }
  for (; i < n; ++i) {
    const double drift = a * x[i] + c;
    const double step = drift * dt;
    const double noise = s * dw[i];
    x[i] = (x[i] + step) + noise;
  }
}

LEVYLAB_AVX2 void add_avx2(double* y, const double* x, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) y[i] = y[i] + x[i];
}

LEVYLAB_AVX2 void axpy_avx2(double* y, double alpha, const double* x, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d p = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), p));
  }
  for (; i < n; ++i) {
    const double p = alpha * x[i];
    y[i] = y[i] + p;
  }
}

constexpr KernelTable kAvx2{sum_avx2, dot_avx2, max_avx2, euler_affine_avx2, add_avx2, axpy_avx2};

}  // namespace

const KernelTable* avx2_table() { return &kAvx2; }

}  // namespace levylab::kernels

#else

namespace levylab::kernels {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace levylab::kernels

#endif
