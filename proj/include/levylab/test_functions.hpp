#pragma once

// Twice-differentiable test functions with analytic derivatives.

#include <functional>
#include <string>
#include <vector>

#include "levylab/common.hpp"

namespace levylab {

enum class SupportClass { compact, log_growth };

struct TestFunction {
  std::string id;
  int dim = 1;
  SupportClass support = SupportClass::compact;
  std::function<double(const double* x)> value;
  std::function<void(const double* x, double* grad)> gradient;  // dim
  std::function<void(const double* x, double* hess)> hessian;   // dim x dim, row-major

  double operator()(const double* x) const { return value(x); }
};

// exp(1 - 1/(1 - |x-c|^2/w^2)) inside the ball of radius w, 0 outside.  Peak 1 at c.
TestFunction smooth_bump(std::string id, Vec center, double width);

// Smooth radial window: exactly 1 on |x-c| <= r_in, exactly 0 for |x-c| >= r_out.
// degree 0: the window itself; 1: (x_0 - c_0) * window; 2: |x - c|^2 * window.
TestFunction windowed_polynomial(std::string id, Vec center, int degree, double r_in,
                                 double r_out);

TestFunction constant_function(int dim, double c);

// log(1 + |x|^2), the identity-psi Lyapunov function.
TestFunction log_growth_identity(int dim);

// Six compactly supported functions at three centers {-s, 0, s}:
// bumps of width 1.5 s at each center, windowed linears at +-s/2, and a windowed
// quadratic at 0.
std::vector<TestFunction> standard_dictionary(int dim, double s);

struct DerivativeCheck {
  double max_grad_error = 0.0;
  double max_hess_error = 0.0;
  bool ok = true;
};

// Central differences against the analytic derivatives; errors are
// |analytic - fd| / max(1, |analytic|).
DerivativeCheck check_derivatives(const TestFunction& f, const std::vector<Vec>& probes,
                                  double tol = 1e-5);

// Probe points spanning [-r, r]^dim (a 1-d lattice in each direction plus diagonals).
std::vector<Vec> derivative_probes(int dim, double r, int per_axis = 41);

}  // namespace levylab
