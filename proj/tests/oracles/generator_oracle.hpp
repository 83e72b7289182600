#pragma once

// Brute-force generator sum for atomic jump measures.  Written directly from
// the operator's definition; shares nothing with GeneratorContext except the
// coefficient and test-function callbacks.

#include <cmath>
#include <vector>

#include "levylab/coefficients.hpp"
#include "levylab/levy_driver.hpp"
#include "levylab/test_functions.hpp"

namespace oracle {

struct GeneratorTerms {
  double value = 0.0;
  double scale = 0.0;  // sum of absolute contributions, used for relative errors
};

inline GeneratorTerms brute_force_generator(const levylab::CoefficientSet& c,
                                            const std::vector<levylab::Atom>& atoms, double l,
                                            const levylab::TestFunction& phi, double t,
                                            const std::vector<double>& x) {
  const int d = c.dim, m = c.noise_dim;
  std::vector<double> b(d), sig(d * m), g(d), H(d * d);
  c.drift(t, x.data(), b.data());
  c.diffusion(t, x.data(), sig.data());
  phi.gradient(x.data(), g.data());
  phi.hessian(x.data(), H.data());
  GeneratorTerms out;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      long double a = 0.0L;
      for (int k = 0; k < m; ++k) a += static_cast<long double>(sig[i * m + k]) * sig[j * m + k];
      const double term = static_cast<double>(0.5L * a * H[i * d + j]);
      out.value += term;
      out.scale += std::fabs(term);
    }
    const double term = b[i] * g[i];
    out.value += term;
    out.scale += std::fabs(term);
  }
  const double f = c.f(t, x.data());
  const double phi_x = phi(x.data());
  for (const auto& a : atoms) {
    std::vector<double> y(d);
    double u2 = 0.0, ug = 0.0;
    for (int i = 0; i < d; ++i) {
      const double u = f * a.mark[i];
      y[i] = x[i] + u;
      u2 += u * u;
      ug += u * g[i];
    }
    double inner = phi(y.data()) - phi_x;
    if (std::sqrt(u2) <= l) inner -= ug;
    out.value += a.mass * inner;
    out.scale += a.mass * (std::fabs(phi(y.data())) + std::fabs(phi_x) + std::fabs(ug));
  }
  return out;
}

}  // namespace oracle
