#include "levylab/kernels.hpp"

#if defined(__aarch64__) && defined(__ARM_NEON)

#include <arm_neon.h>

#include <limits>

namespace levylab::kernels {

namespace {

// Four 2-lane registers: q0 = lanes 0,1  q1 = 2,3  q2 = 4,5  q3 = 6,7.
inline double fold(float64x2_t q0, float64x2_t q1, float64x2_t q2, float64x2_t q3) {
  const float64x2_t s01 = vaddq_f64(q0, q2);
  const float64x2_t s23 = vaddq_f64(q1, q3);
  const double s0 = vgetq_lane_f64(s01, 0), s1 = vgetq_lane_f64(s01, 1);
  const double s2 = vgetq_lane_f64(s23, 0), s3 = vgetq_lane_f64(s23, 1);
  return (s0 + s1) + (s2 + s3);
}

double sum_neon(const double* x, std::size_t n) {
  float64x2_t q0 = vdupq_n_f64(0), q1 = q0, q2 = q0, q3 = q0;
  const std::size_t body = n & ~std::size_t{7};
  for (std::size_t i = 0; i < body; i += 8) {
    q0 = vaddq_f64(q0, vld1q_f64(x + i));
    q1 = vaddq_f64(q1, vld1q_f64(x + i + 2));
    q2 = vaddq_f64(q2, vld1q_f64(x + i + 4));
    q3 = vaddq_f64(q3, vld1q_f64(x + i + 6));
  }
  double r = fold(q0, q1, q2, q3);
  for (std::size_t i = body; i < n; ++i) r += x[i];
  return r;
}

double dot_neon(const double* x, const double* y, std::size_t n) {
  float64x2_t q0 = vdupq_n_f64(0), q1 = q0, q2 = q0, q3 = q0;
  const std::size_t body = n & ~std::size_t{7};
  for (std::size_t i = 0; i < body; i += 8) {
    q0 = vaddq_f64(q0, vmulq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
    q1 = vaddq_f64(q1, vmulq_f64(vld1q_f64(x + i + 2), vld1q_f64(y + i + 2)));
    q2 = vaddq_f64(q2, vmulq_f64(vld1q_f64(x + i + 4), vld1q_f64(y + i + 4)));
    q3 = vaddq_f64(q3, vmulq_f64(vld1q_f64(x + i + 6), vld1q_f64(y + i + 6)));
  }
  double r = fold(q0, q1, q2, q3);
  for (std::size_t i = body; i < n; ++i) {
    const double p = x[i] * y[i];
    r += p;
  }
  return r;
}

double max_neon(const double* x, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

void euler_affine_neon(double* x, const double* dw, double a, double c, double s, double dt,
                       std::size_t n) {
  const float64x2_t va = vdupq_n_f64(a), vc = vdupq_n_f64(c);
  const float64x2_t vs = vdupq_n_f64(s), vdt = vdupq_n_f64(dt);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t xv = vld1q_f64(x + i);
    const float64x2_t drift = vaddq_f64(vmulq_f64(va, xv), vc);
    const float64x2_t step = vmulq_f64(drift, vdt);
    const float64x2_t noise = vmulq_f64(vs, vld1q_f64(dw + i));
    vst1q_f64(x + i, vaddq_f64(vaddq_f64(xv, step), noise));
  }
  for (; i < n; ++i) {
    const double drift = a * x[i] + c;
    const double step = drift * dt;
    const double noise = s * dw[i];
    x[i] = (x[i] + step) + noise;
  }
}

void add_neon(double* y, const double* x, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] = y[i] + x[i];
}

void axpy_neon(double* y, double alpha, const double* x, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(va, vld1q_f64(x + i))));
  }
  for (; i < n; ++i) {
    const double p = alpha * x[i];
    y[i] = y[i] + p;
  }
}

constexpr KernelTable kNeon{sum_neon, dot_neon, max_neon, euler_affine_neon, add_neon, axpy_neon};

}  // namespace

const KernelTable* neon_table() { return &kNeon; }

}  // namespace levylab::kernels

#else

namespace levylab::kernels {
const KernelTable* neon_table() { return nullptr; }
}  // namespace levylab::kernels

#endif
