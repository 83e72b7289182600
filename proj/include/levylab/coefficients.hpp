#pragma once

// Coefficient sets (b, sigma, f = gamma*g), the built-in registry, perturbed
// families, and initial laws.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "levylab/common.hpp"
#include "levylab/rng.hpp"

namespace levylab {

// b(t,x) = a x + c and sigma = s for d = m = 1.  The engine uses this to run
// the vector kernel; drift() of such a set must evaluate exactly a*x + c.
struct AffineForm {
  double a = 0.0;
  double c = 0.0;
  double s = 0.0;
};

struct CoefficientSet {
  std::string name;
  int dim = 1;
  int noise_dim = 1;
  // out[dim]
  std::function<void(double t, const double* x, double* out)> drift;
  // out[dim * noise_dim], row-major
  std::function<void(double t, const double* x, double* out)> diffusion;
  double gamma = 0.0;
  // Jump shape g; empty means g = 1.
  std::function<double(double t, const double* x)> g;
  std::string g_name = "one";
  std::optional<AffineForm> affine;
  nlohmann::json spec;

  double f(double t, const double* x) const { return g ? gamma * g(t, x) : gamma; }
  bool f_constant() const { return !g; }
};

// spec: {"name": ..., "params": {...}, "gamma": ..., "g": "one" | "bounded" | "linear_growth"}
//   zero                 dim
//   constant_drift       dim, b (scalar or vector), sigma
//   linear               A (d x d), c (d), S (d x m)
//   ou                   dim, theta, mu, sigma
//   rotation_degenerate  omega, kappa, sigma          (d = 2, m = 1)
//   tanh_drift           dim, k, sigma
CoefficientSet make_coefficients(const nlohmann::json& spec);

struct Perturbation {
  double drift_shift = 0.0;  // b + drift_shift / n
  double drift_sin = 0.0;    // b + drift_sin * sin(x) / n
  double sigma_scale = 0.0;  // sigma * (1 + sigma_scale / n)
  double gamma_shift = 0.0;  // gamma + gamma_shift / n

  bool is_zero() const {
    return drift_shift == 0.0 && drift_sin == 0.0 && sigma_scale == 0.0 && gamma_shift == 0.0;
  }
  nlohmann::json to_json() const;
  static Perturbation from_json(const nlohmann::json& j);
};

struct CoefficientFamily {
  CoefficientSet limit;
  Perturbation perturbation;

  // Member n >= 1.  With a zero perturbation this is an exact copy of the limit.
  CoefficientSet member(int n) const;
  // sup over n >= 1 of |gamma^n|.
  double gamma_sup() const;
};

CoefficientFamily make_family(const nlohmann::json& limit_spec, const Perturbation& p);

// Linear-growth probe: smallest C1 with |b| + ||sigma||_F <= C1 (1 + |x|) on the
// probe set, and whether the ratio keeps growing on the outer shells (which a
// finite grid can only take as evidence of superlinear growth).
struct GrowthReport {
  double c1 = 0.0;
  bool superlinear = false;
  double witness_t = 0.0;
  Vec witness_x;
};

struct ProbeGrid {
  std::vector<double> times;
  std::vector<Vec> points;
  // Radii 0 .. 1e3 along coordinate axes and diagonals, times {0, T/2, T}.
  static ProbeGrid standard(int dim, double T);
};

GrowthReport probe_linear_growth(const CoefficientSet& c, const ProbeGrid& probes);

struct InitialLaw {
  enum class Kind { dirac, normal, uniform };
  Kind kind = Kind::dirac;
  Vec a;  // point, mean, or lower corner
  Vec b;  // -, standard deviations, or upper corner
  std::optional<double> density_bound;  // declared, never verified

  int dim() const { return static_cast<int>(a.size()); }
  void sample(RngStream& rng, double* out) const;

  static InitialLaw dirac(Vec x);
  static InitialLaw normal(Vec mean, Vec sd);
  static InitialLaw uniform(Vec lo, Vec hi);
  nlohmann::json to_json() const;
  static InitialLaw from_json(const nlohmann::json& j);
};

}  // namespace levylab
