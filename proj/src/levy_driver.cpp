#include "levylab/levy_driver.hpp"

#include <algorithm>
#include <cstdio>
#include <numbers>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace levylab {

using nlohmann::json;

std::string Annulus::describe() const {
  char buf[128];
  if (r_lo < 0.0) {
    std::snprintf(buf, sizeof buf, "{z : |z| <= %g}", r_hi);
  } else {
    std::snprintf(buf, sizeof buf, "{z : %g < |z| <= %g}", r_lo, r_hi);
  }
  return buf;
}

double sphere_area(int d) {
  const double h = 0.5 * d;
  return 2.0 * std::pow(std::numbers::pi, h) / std::tgamma(h);
}

double radial_integral(const std::function<double(double)>& g, double a, double b) {
  a = std::max(a, 0.0);
  if (!(b > a)) return 0.0;
  if (std::isinf(b)) {
    boost::math::quadrature::exp_sinh<double> integrator;
    return integrator.integrate(g, a, b);
  }
  boost::math::quadrature::tanh_sinh<double> integrator;
  return integrator.integrate(g, a, b);
}

double ParametricMeasure::moment(int k, const Annulus& a) const {
  return radial_integral([&](double r) { return std::pow(r, k) * radial_density(r); }, a.r_lo,
                         a.r_hi);
}

namespace {

double param(const json& p, const char* key, double fallback) {
  return p.contains(key) ? p.at(key).get<double>() : fallback;
}

// Difference of regularized incomplete gammas on [x0, x1], evaluated on the
// tail that keeps the subtraction well conditioned.
double gamma_window(double shape, double x0, double x1) {
  using boost::math::gamma_p;
  using boost::math::gamma_q;
  x0 = std::max(x0, 0.0);
  if (!(x1 > x0)) return 0.0;
  if (x0 > shape) return gamma_q(shape, x0) - (std::isinf(x1) ? 0.0 : gamma_q(shape, x1));
  return (std::isinf(x1) ? 1.0 : gamma_p(shape, x1)) - gamma_p(shape, x0);
}

class ExponentialMeasure final : public ParametricMeasure {
 public:
  ExponentialMeasure(int dim, double c, double s, bool one_sided)
      : dim_(dim), c_(c), s_(s), one_sided_(one_sided) {}

  std::string name() const override { return "exponential"; }
  int dim() const override { return dim_; }
  bool one_sided() const override { return one_sided_; }
  json params() const override { return {{"c", c_}, {"scale", s_}, {"one_sided", one_sided_}}; }

  void validate() const override {
    if (c_ < 0.0) throw ConfigError("exponential measure: negative mass (c < 0)");
    if (!(s_ > 0.0)) throw ConfigError("exponential measure: scale must be > 0");
    if (one_sided_ && dim_ != 1) throw ConfigError("exponential measure: one_sided needs dim 1");
  }

  double surface() const { return one_sided_ ? 1.0 : sphere_area(dim_); }

  double radial_density(double r) const override {
    if (r <= 0.0) return 0.0;
    return c_ * surface() * std::pow(r, dim_ - 1) * std::exp(-r / s_);
  }

  double density(const Vec& z) const override {
    if (one_sided_ && z[0] <= 0.0) return 0.0;
    return c_ * std::exp(-std::sqrt(norm2(z.data(), z.size())) / s_);
  }

  double moment(int k, const Annulus& a) const override {
    if (a.empty() || c_ == 0.0) return 0.0;
    const double shape = dim_ + k;
    return c_ * surface() * std::pow(s_, shape) * std::tgamma(shape) *
           gamma_window(shape, a.r_lo / s_, a.r_hi / s_);
  }

  double sample_radius(const Annulus& a, RngStream& rng) const override {
    const double shape = dim_;
    const double x0 = std::max(a.r_lo, 0.0) / s_;
    const double x1 = a.r_hi / s_;
    const double u = rng.uniform();
    double x;
    if (x0 > shape) {
      const double q0 = boost::math::gamma_q(shape, x0);
      const double q1 = std::isinf(x1) ? 0.0 : boost::math::gamma_q(shape, x1);
      x = boost::math::gamma_q_inv(shape, q1 + u * (q0 - q1));
    } else {
      const double p0 = boost::math::gamma_p(shape, x0);
      const double p1 = std::isinf(x1) ? 1.0 : boost::math::gamma_p(shape, x1);
      x = boost::math::gamma_p_inv(shape, p0 + u * (p1 - p0));
    }
    const double r = s_ * x;
    return std::clamp(r, std::nextafter(std::max(a.r_lo, 0.0), kInf), a.r_hi);
  }

 private:
  int dim_;
  double c_, s_;
  bool one_sided_;
};

class TemperedStableMeasure final : public ParametricMeasure {
 public:
  TemperedStableMeasure(int dim, double c, double alpha, double beta)
      : dim_(dim), c_(c), alpha_(alpha), beta_(beta) {}

  std::string name() const override { return "tempered_stable"; }
  int dim() const override { return dim_; }
  json params() const override { return {{"c", c_}, {"alpha", alpha_}, {"beta", beta_}}; }

  void validate() const override {
    if (c_ < 0.0) throw ConfigError("tempered_stable measure: negative mass (c < 0)");
    if (!(alpha_ > 0.0 && alpha_ < 3.0))
      throw ConfigError("tempered_stable measure: alpha must lie in (0, 3)");
    if (beta_ < 0.0) throw ConfigError("tempered_stable measure: beta must be >= 0");
  }

  double radial_density(double r) const override {
    if (r <= 0.0) return 0.0;
    return c_ * sphere_area(dim_) * std::pow(r, -1.0 - alpha_) * std::exp(-beta_ * r);
  }

  double density(const Vec& z) const override {
    const double r = std::sqrt(norm2(z.data(), z.size()));
    if (r == 0.0) return kInf;
    return c_ * std::pow(r, -dim_ - alpha_) * std::exp(-beta_ * r);
  }

  double moment(int k, const Annulus& a) const override {
    if (a.empty() || c_ == 0.0) return 0.0;
    const double p = k - alpha_;
    const double lo = std::max(a.r_lo, 0.0);
    const double hi = a.r_hi;
    const double cs = c_ * sphere_area(dim_);
    if (lo == 0.0 && p <= 0.0) return kInf;
    if (std::isinf(hi) && beta_ == 0.0 && p >= 0.0) return kInf;
    if (beta_ == 0.0) {
      if (p == 0.0) return cs * std::log(hi / lo);
      const double top = std::isinf(hi) ? 0.0 : std::pow(hi, p);
      const double bottom = lo == 0.0 ? 0.0 : std::pow(lo, p);
      return cs * (top - bottom) / p;
    }
    if (p > 0.0) {
      return cs * std::pow(beta_, -p) * std::tgamma(p) * gamma_window(p, beta_ * lo, beta_ * hi);
    }
    return cs * radial_integral(
                    [&](double r) { return std::pow(r, p - 1.0) * std::exp(-beta_ * r); }, lo, hi);
  }

  double sample_radius(const Annulus& a, RngStream& rng) const override {
    // Pareto(alpha) proposal on (a, b], accepted with exp(-beta (r - a)).
    const double lo = a.r_lo;
    const double top = std::pow(lo, -alpha_);
    const double bottom = std::isinf(a.r_hi) ? 0.0 : std::pow(a.r_hi, -alpha_);
    for (;;) {
      const double u = rng.uniform();
      double r = std::pow(top - u * (top - bottom), -1.0 / alpha_);
      r = std::clamp(r, std::nextafter(lo, kInf), a.r_hi);
      if (beta_ == 0.0 || rng.uniform() <= std::exp(-beta_ * (r - lo))) return r;
    }
  }

 private:
  int dim_;
  double c_, alpha_, beta_;
};

Vec random_direction(int d, RngStream& rng) {
  Vec v(d);
  if (d == 1) {
    v[0] = rng.uniform() < 0.5 ? -1.0 : 1.0;
    return v;
  }
  double n2 = 0.0;
  do {
    for (auto& e : v) e = rng.normal();
    n2 = norm2(v.data(), v.size());
  } while (n2 == 0.0);
  const double inv = 1.0 / std::sqrt(n2);
  for (auto& e : v) e *= inv;
  return v;
}

}  // namespace

std::shared_ptr<const ParametricMeasure> make_parametric(const std::string& name, int dim,
                                                         const json& params) {
  if (dim < 1) throw ConfigError("parametric measure: dim must be >= 1");
  std::shared_ptr<const ParametricMeasure> p;
  if (name == "exponential") {
    p = std::make_shared<ExponentialMeasure>(
        dim, param(params, "c", 1.0), param(params, "scale", 1.0),
        params.contains("one_sided") && params.at("one_sided").get<bool>());
  } else if (name == "tempered_stable") {
    p = std::make_shared<TemperedStableMeasure>(dim, param(params, "c", 1.0),
                                                param(params, "alpha", 1.0),
                                                param(params, "beta", 1.0));
  } else {
    throw ConfigError("unknown parametric measure '" + name + "'");
  }
  p->validate();
  return p;
}

LevyMeasure LevyMeasure::zero(int dim) {
  LevyMeasure m;
  m.dim_ = dim;
  return m;
}

LevyMeasure LevyMeasure::atomic(int dim, std::vector<Atom> atoms) {
  LevyMeasure m;
  m.dim_ = dim;
  m.atoms_ = std::move(atoms);
  m.validate();
  return m;
}

LevyMeasure LevyMeasure::parametric(std::shared_ptr<const ParametricMeasure> p) {
  LevyMeasure m;
  m.dim_ = p->dim();
  m.param_ = std::move(p);
  m.validate();
  return m;
}

void LevyMeasure::validate() const {
  if (dim_ < 1) throw ConfigError("Levy measure: dim must be >= 1");
  if (param_) {
    param_->validate();
    return;
  }
  for (std::size_t i = 0; i < atoms_.size(); ++i) {
    const Atom& a = atoms_[i];
    if (static_cast<int>(a.mark.size()) != dim_)
      throw ConfigError("Levy measure: atom " + std::to_string(i) + " has wrong dimension");
    if (a.mass < 0.0 || std::isnan(a.mass))
      throw ConfigError("Levy measure: atom " + std::to_string(i) + " has negative mass");
    if (std::isinf(a.mass))
      throw InfiniteMassError("Levy measure: atom " + std::to_string(i) + " has infinite mass");
    if (norm2(a.mark.data(), a.mark.size()) == 0.0)
      throw ConfigError("Levy measure: atom " + std::to_string(i) + " sits at the origin");
  }
}

double LevyMeasure::moment(int k, const Annulus& a) const {
  if (param_) return param_->moment(k, a);
  double s = 0.0;
  for (const Atom& atom : atoms_) {
    const double r = std::sqrt(norm2(atom.mark.data(), atom.mark.size()));
    if (a.contains(r)) s += atom.mass * (k == 0 ? 1.0 : std::pow(r, k));
  }
  return s;
}

Vec LevyMeasure::first_moment(const Annulus& a) const {
  Vec out(dim_, 0.0);
  if (param_) {
    const double m1 = param_->moment(1, a);
    if (!std::isfinite(m1))
      throw InfiniteMassError("|z| is not integrable against nu on " + a.describe());
    if (param_->one_sided()) out[0] = m1;
    return out;
  }
  for (const Atom& atom : atoms_) {
    const double r = std::sqrt(norm2(atom.mark.data(), atom.mark.size()));
    if (!a.contains(r)) continue;
    for (int i = 0; i < dim_; ++i) out[i] += atom.mass * atom.mark[i];
  }
  return out;
}

bool LevyMeasure::symmetric() const {
  if (param_) return !param_->one_sided();
  // Compare each atom's mass against the total mass sitting at its reflection.
  auto mass_at = [&](const Vec& z) {
    double m = 0.0;
    for (const Atom& a : atoms_)
      if (a.mark == z) m += a.mass;
    return m;
  };
  for (const Atom& a : atoms_) {
    Vec neg = a.mark;
    for (auto& e : neg) e = -e;
    if (mass_at(a.mark) != mass_at(neg)) return false;
  }
  return true;
}

Vec LevyMeasure::sample_mark(const Annulus& a, RngStream& rng) const {
  if (param_) {
    const double r = param_->sample_radius(a, rng);
    if (param_->one_sided()) return Vec{r};
    Vec dir = random_direction(dim_, rng);
    for (auto& e : dir) e *= r;
    return dir;
  }
  const double total = mass(a);
  const double target = rng.uniform() * total;
  double acc = 0.0;
  const Atom* last = nullptr;
  for (const Atom& atom : atoms_) {
    const double r = std::sqrt(norm2(atom.mark.data(), atom.mark.size()));
    if (!a.contains(r) || atom.mass == 0.0) continue;
    acc += atom.mass;
    last = &atom;
    if (target < acc) return atom.mark;
  }
  return last ? last->mark : Vec(dim_, 0.0);
}

json LevyMeasure::to_json() const {
  if (param_) {
    return {{"kind", "parametric"}, {"name", param_->name()}, {"dim", dim_},
            {"params", param_->params()}};
  }
  json atoms = json::array();
  for (const Atom& a : atoms_) atoms.push_back({{"mark", a.mark}, {"mass", a.mass}});
  return {{"kind", "atomic"}, {"dim", dim_}, {"atoms", atoms}};
}

LevyMeasure LevyMeasure::from_json(const json& j) {
  const std::string kind = j.value("kind", "atomic");
  const int dim = j.value("dim", 1);
  if (kind == "zero") return zero(dim);
  if (kind == "parametric")
    return parametric(make_parametric(j.at("name").get<std::string>(), dim,
                                      j.value("params", json::object())));
  if (kind != "atomic") throw ConfigError("Levy measure: unknown kind '" + kind + "'");
  std::vector<Atom> atoms;
  for (const auto& a : j.value("atoms", json::array())) {
    Atom atom;
    if (a.at("mark").is_number()) {
      atom.mark = {a.at("mark").get<double>()};
    } else {
      atom.mark = a.at("mark").get<Vec>();
    }
    atom.mass = a.at("mass").get<double>();
    atoms.push_back(std::move(atom));
  }
  return atomic(dim, std::move(atoms));
}

void TruncationConfig::validate() const {
  if (!(l > 0.0)) throw ConfigError("truncation level l must be > 0");
  if (mode == Mode::discard_below_eps && !(eps > 0.0 && eps <= l))
    throw ConfigError("discard_below_eps needs 0 < eps <= l");
}

Annulus TruncationConfig::simulated_region() const {
  return mode == Mode::exact ? Annulus::everything() : Annulus::outside(eps);
}

Annulus TruncationConfig::compensated_region() const {
  return mode == Mode::exact ? Annulus::ball(l) : Annulus{eps, l};
}

json TruncationConfig::to_json() const {
  json j{{"l", l}, {"mode", mode == Mode::exact ? "exact" : "discard_below_eps"}};
  if (mode == Mode::discard_below_eps) j["eps"] = eps;
  return j;
}

TruncationConfig TruncationConfig::from_json(const json& j) {
  TruncationConfig t;
  t.l = j.at("l").get<double>();
  const std::string mode = j.value("mode", "exact");
  if (mode == "exact") {
    t.mode = Mode::exact;
  } else if (mode == "discard_below_eps") {
    t.mode = Mode::discard_below_eps;
    t.eps = j.at("eps").get<double>();
  } else {
    throw ConfigError("unknown small-jump mode '" + mode + "'");
  }
  t.validate();
  return t;
}

std::vector<JumpEvent> sample_jump_events(const LevyMeasure& nu, const Annulus& region, double T,
                                          RngStream& rng) {
  if (!(T > 0.0)) throw ConfigError("sample_jump_events: empty horizon");
  const double m = nu.mass(region);
  if (m < 0.0 || std::isnan(m)) throw ConfigError("negative mass on " + region.describe());
  if (!std::isfinite(m)) throw InfiniteMassError("nu has infinite mass on " + region.describe());
  std::vector<JumpEvent> events;
  if (m == 0.0) return events;
  const std::uint64_t count = rng.poisson(m * T);
  events.resize(count);
  for (auto& e : events) e.time = T * rng.uniform();
  std::sort(events.begin(), events.end(),
            [](const JumpEvent& a, const JumpEvent& b) { return a.time < b.time; });
  for (auto& e : events) e.mark = nu.sample_mark(region, rng);
  return events;
}

Vec compensator_drift(const LevyMeasure& nu, const TruncationConfig& trunc, double dt) {
  trunc.validate();
  Vec v = nu.first_moment(trunc.compensated_region());
  for (auto& e : v) e *= -dt;
  return v;
}

Vec scaled_compensation(const LevyMeasure& nu, const TruncationConfig& trunc, double scale) {
  if (scale == 0.0) return Vec(nu.dim(), 0.0);
  const Annulus region = trunc.simulated_region().intersect(Annulus::ball(trunc.l / std::fabs(scale)));
  return nu.first_moment(region);
}

double discarded_variance(const LevyMeasure& nu, const TruncationConfig& trunc) {
  if (trunc.mode == TruncationConfig::Mode::exact) return 0.0;
  return nu.moment(2, Annulus::ball(trunc.eps));
}

}  // namespace levylab
