#pragma once

// Vector kernels used by the ensemble engine and the statistics passes.
//
// Every reduction follows one canonical association order so that the scalar
// reference and each SIMD variant return bit-identical results:
//   - elements are accumulated into 8 lane sums, element i going to lane i % 8,
//     over the largest multiple of 8;
//   - lanes are folded as s_k = acc_k + acc_{k+4} (k = 0..3), then
//     (s_0 + s_1) + (s_2 + s_3);
//   - the remaining tail elements are added one by one, in index order.
// Elementwise kernels evaluate exactly the expression written next to them.

#include <cstddef>
#include <string_view>

namespace levylab::kernels {

enum class Isa { scalar, avx2, neon };

struct KernelTable {
  double (*sum)(const double* x, std::size_t n);
  double (*dot)(const double* x, const double* y, std::size_t n);
  double (*max)(const double* x, std::size_t n);
  // x[i] = (x[i] + (a*x[i] + c)*dt) + s*dw[i]
  void (*euler_affine)(double* x, const double* dw, double a, double c, double s, double dt,
                       std::size_t n);
  // y[i] = y[i] + x[i]
  void (*add)(double* y, const double* x, std::size_t n);
  // y[i] = y[i] + alpha*x[i]
  void (*axpy)(double* y, double alpha, const double* x, std::size_t n);
};

const KernelTable& scalar_table();
// Null when the variant was not compiled for this target.
const KernelTable* avx2_table();
const KernelTable* neon_table();

bool isa_available(Isa isa);
Isa active_isa();
// Forces a variant (tests, benchmarking).  Falls back to scalar if unavailable.
void set_isa(Isa isa);
std::string_view isa_name(Isa isa);

const KernelTable& active();

inline double sum(const double* x, std::size_t n) { return active().sum(x, n); }
inline double dot(const double* x, const double* y, std::size_t n) {
  return active().dot(x, y, n);
}
// Maximum element; -inf for n == 0.
inline double max(const double* x, std::size_t n) { return active().max(x, n); }
inline void euler_affine(double* x, const double* dw, double a, double c, double s, double dt,
                         std::size_t n) {
  active().euler_affine(x, dw, a, c, s, dt, n);
}
inline void add(double* y, const double* x, std::size_t n) { active().add(y, x, n); }
inline void axpy(double* y, double alpha, const double* x, std::size_t n) {
  active().axpy(y, alpha, x, n);
}

}  // namespace levylab::kernels
