#pragma once

// Lévy measures, truncation, and Poisson event sampling.

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "levylab/common.hpp"
#include "levylab/rng.hpp"

namespace levylab {

inline constexpr double kInf = kInfinity;

// {z : r_lo < |z| <= r_hi}.  r_lo < 0 means the set contains the origin.
struct Annulus {
  double r_lo = -1.0;
  double r_hi = kInf;

  static Annulus everything() { return {-1.0, kInf}; }
  static Annulus ball(double r) { return {-1.0, r}; }
  static Annulus outside(double r) { return {r, kInf}; }

  bool contains(double r) const { return r > r_lo && r <= r_hi; }
  bool empty() const { return r_hi <= r_lo || r_hi < 0.0; }
  Annulus intersect(const Annulus& o) const {
    return {std::max(r_lo, o.r_lo), std::min(r_hi, o.r_hi)};
  }
  std::string describe() const;
};

struct JumpEvent {
  double time = 0.0;
  Vec mark;
};

struct Atom {
  Vec mark;
  double mass = 0.0;
};

// A measure given by a density in |z|.  Implementations report the radial
// density q(r) such that nu({a < |z| <= b}) = int_a^b q(r) dr.
class ParametricMeasure {
 public:
  virtual ~ParametricMeasure() = default;

  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual nlohmann::json params() const = 0;
  virtual bool one_sided() const { return false; }

  virtual double radial_density(double r) const = 0;
  // Lebesgue density dnu/dz at z.
  virtual double density(const Vec& z) const = 0;
  // int over the annulus of |z|^k nu(dz); +inf when divergent.
  virtual double moment(int k, const Annulus& a) const;
  // Draws |z| from nu restricted to the annulus (finite mass required).
  virtual double sample_radius(const Annulus& a, RngStream& rng) const = 0;
  virtual void validate() const {}
};

// Surface area of the unit sphere in R^d.
double sphere_area(int d);

// int_a^b g(r) dr by double-exponential quadrature; b may be +inf.
double radial_integral(const std::function<double(double)>& g, double a, double b);

// Registered parametric families:
//   "exponential":     c * exp(-|z|/s),                d >= 1 (one_sided: d = 1, z > 0)
//   "tempered_stable": c * |z|^{-d-alpha} exp(-beta|z|), beta >= 0, alpha in (0,3).
//                      alpha >= 2 is not a Levy measure; it exists to exercise the validators.
std::shared_ptr<const ParametricMeasure> make_parametric(const std::string& name, int dim,
                                                         const nlohmann::json& params);

class LevyMeasure {
 public:
  LevyMeasure() = default;

  static LevyMeasure zero(int dim);
  static LevyMeasure atomic(int dim, std::vector<Atom> atoms);
  static LevyMeasure parametric(std::shared_ptr<const ParametricMeasure> p);

  int dim() const { return dim_; }
  bool is_atomic() const { return !param_; }
  const std::vector<Atom>& atoms() const { return atoms_; }
  const ParametricMeasure* parametric_part() const { return param_.get(); }

  double mass(const Annulus& a) const { return moment(0, a); }
  double moment(int k, const Annulus& a) const;
  // int over the annulus of z nu(dz).  Throws InfiniteMassError if |z| is not integrable there.
  Vec first_moment(const Annulus& a) const;
  bool symmetric() const;

  Vec sample_mark(const Annulus& a, RngStream& rng) const;

  // Throws ConfigError for negative masses, zero marks, or bad parameters.
  void validate() const;

  nlohmann::json to_json() const;
  static LevyMeasure from_json(const nlohmann::json& j);

 private:
  int dim_ = 1;
  std::vector<Atom> atoms_;
  std::shared_ptr<const ParametricMeasure> param_;
};

struct TruncationConfig {
  enum class Mode { exact, discard_below_eps };

  double l = 1.0;
  Mode mode = Mode::exact;
  double eps = 0.0;

  // Throws ConfigError unless l > 0 and, in discard mode, 0 < eps <= l.
  void validate() const;
  // Jumps that are actually simulated.
  Annulus simulated_region() const;
  // Simulated jumps with |z| <= l (those carrying a compensator in the shape f = 1).
  Annulus compensated_region() const;

  nlohmann::json to_json() const;
  static TruncationConfig from_json(const nlohmann::json& j);
};

// Poisson(nu(region) T) events with uniform sorted times and marks from the
// normalized restriction of nu to the region.
std::vector<JumpEvent> sample_jump_events(const LevyMeasure& nu, const Annulus& region,
                                          double T, RngStream& rng);

// -dt * int_{eps < |z| <= l} z nu(dz)   (eps = 0 in exact mode).
Vec compensator_drift(const LevyMeasure& nu, const TruncationConfig& trunc, double dt);

// int_{simulated, |scale z| <= l} z nu(dz).  The engine subtracts scale times this
// from the drift, which is the compensator of u = scale*z with cutoff l.
Vec scaled_compensation(const LevyMeasure& nu, const TruncationConfig& trunc, double scale);

// Variance rate of the dropped jumps, int_{|z| <= eps} |z|^2 nu(dz); 0 in exact mode.
double discarded_variance(const LevyMeasure& nu, const TruncationConfig& trunc);

}  // namespace levylab
