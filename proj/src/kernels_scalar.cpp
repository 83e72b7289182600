#include <limits>

#include "levylab/kernels.hpp"

namespace levylab::kernels {

namespace {

inline double fold(const double acc[8]) {
  const double s0 = acc[0] + acc[4];
  const double s1 = acc[1] + acc[5];
  const double s2 = acc[2] + acc[6];
  const double s3 = acc[3] + acc[7];
  return (s0 + s1) + (s2 + s3);
}

double sum_scalar(const double* x, std::size_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  const std::size_t body = n & ~std::size_t{7};
  for (std::size_t i = 0; i < body; i += 8) {
    for (int k = 0; k < 8; ++k) acc[k] += x[i + k];
  }
  double r = fold(acc);
  for (std::size_t i = body; i < n; ++i) r += x[i];
  return r;
}

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  const std::size_t body = n & ~std::size_t{7};
  for (std::size_t i = 0; i < body; i += 8) {
    for (int k = 0; k < 8; ++k) {
      const double p = x[i + k] * y[i + k];
      acc[k] += p;
    }
  }
  double r = fold(acc);
  for (std::size_t i = body; i < n; ++i) {
    const double p = x[i] * y[i];
    r += p;
  }
  return r;
}

double max_scalar(const double* x, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

void euler_affine_scalar(double* x, const double* dw, double a, double c, double s, double dt,
                         std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double drift = a * x[i] + c;
    const double step = drift * dt;
    const double noise = s * dw[i];
    x[i] = (x[i] + step) + noise;
  }
}

void add_scalar(double* y, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + x[i];
}

void axpy_scalar(double* y, double alpha, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double p = alpha * x[i];
    y[i] = y[i] + p;
  }
}

constexpr KernelTable kScalar{sum_scalar, dot_scalar,  max_scalar,
                              euler_affine_scalar, add_scalar, axpy_scalar};

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

}  // namespace levylab::kernels
