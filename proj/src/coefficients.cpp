#include "levylab/coefficients.hpp"

#include <algorithm>
#include <cmath>

namespace levylab {

using nlohmann::json;

namespace {

Vec vec_param(const json& p, const char* key, int dim, double fallback) {
  if (!p.contains(key)) return Vec(dim, fallback);
  const json& v = p.at(key);
  if (v.is_number()) return Vec(dim, v.get<double>());
  Vec out = v.get<Vec>();
  if (static_cast<int>(out.size()) != dim)
    throw ConfigError(std::string("coefficient parameter '") + key + "' has wrong length");
  return out;
}

double num_param(const json& p, const char* key, double fallback) {
  return p.contains(key) ? p.at(key).get<double>() : fallback;
}

void scaled_identity(double s, int d, double* out) {
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) out[i * d + j] = i == j ? s : 0.0;
}

void set_g(CoefficientSet& c, const std::string& g) {
  c.g_name = g;
  if (g == "one") {
    c.g = nullptr;
  } else if (g == "bounded") {
    c.g = [](double, const double* x) { return 1.0 + 0.5 * std::tanh(x[0]); };
  } else if (g == "linear_growth") {
    const int d = c.dim;
    c.g = [d](double, const double* x) { return 1.0 + std::sqrt(norm2(x, d)); };
  } else {
    throw ConfigError("unknown jump shape g '" + g + "'");
  }
}

}  // namespace

CoefficientSet make_coefficients(const json& spec) {
  const std::string name = spec.at("name").get<std::string>();
  const json p = spec.value("params", json::object());
  CoefficientSet c;
  c.name = name;
  c.spec = spec;
  c.gamma = spec.value("gamma", 0.0);

  if (name == "zero") {
    const int d = p.value("dim", 1);
    c.dim = c.noise_dim = d;
    c.drift = [d](double, const double*, double* out) { std::fill(out, out + d, 0.0); };
    c.diffusion = [d](double, const double*, double* out) { std::fill(out, out + d * d, 0.0); };
    if (d == 1) {
      c.affine = AffineForm{0.0, 0.0, 0.0};
      c.drift = [](double, const double* x, double* out) { out[0] = 0.0 * x[0] + 0.0; };
    }
  } else if (name == "constant_drift") {
    const int d = p.value("dim", 1);
    const Vec b = vec_param(p, "b", d, 0.0);
    const double s = num_param(p, "sigma", 0.0);
    c.dim = c.noise_dim = d;
    c.drift = [b](double, const double*, double* out) { std::copy(b.begin(), b.end(), out); };
    c.diffusion = [d, s](double, const double*, double* out) { scaled_identity(s, d, out); };
    if (d == 1) {
      const double b0 = b[0];
      c.affine = AffineForm{0.0, b0, s};
      c.drift = [b0](double, const double* x, double* out) { out[0] = 0.0 * x[0] + b0; };
    }
  } else if (name == "linear") {
    const auto A = p.at("A").get<std::vector<Vec>>();
    const int d = static_cast<int>(A.size());
    const Vec cv = vec_param(p, "c", d, 0.0);
    std::vector<Vec> S = p.contains("S") ? p.at("S").get<std::vector<Vec>>()
                                         : std::vector<Vec>(d, Vec(d, 0.0));
    if (static_cast<int>(S.size()) != d || d == 0)
      throw ConfigError("linear coefficients: S must have d rows");
    const int m = static_cast<int>(S[0].size());
    for (const auto& row : A)
      if (static_cast<int>(row.size()) != d) throw ConfigError("linear coefficients: A must be d x d");
    c.dim = d;
    c.noise_dim = m;
    c.drift = [A, cv, d](double, const double* x, double* out) {
      for (int k = 0; k < d; ++k) {
        double acc = A[k][0] * x[0];
        for (int j = 1; j < d; ++j) acc += A[k][j] * x[j];
        out[k] = acc + cv[k];
      }
    };
    c.diffusion = [S, d, m](double, const double*, double* out) {
      for (int k = 0; k < d; ++k)
        for (int j = 0; j < m; ++j) out[k * m + j] = S[k][j];
    };
    if (d == 1 && m == 1) c.affine = AffineForm{A[0][0], cv[0], S[0][0]};
  } else if (name == "ou") {
    const int d = p.value("dim", 1);
    const double theta = num_param(p, "theta", 1.0);
    const Vec mu = vec_param(p, "mu", d, 0.0);
    const double s = num_param(p, "sigma", 1.0);
    const double a = -theta;
    Vec cv(d);
    for (int k = 0; k < d; ++k) cv[k] = theta * mu[k];
    c.dim = c.noise_dim = d;
    c.drift = [a, cv, d](double, const double* x, double* out) {
      for (int k = 0; k < d; ++k) out[k] = a * x[k] + cv[k];
    };
    c.diffusion = [d, s](double, const double*, double* out) { scaled_identity(s, d, out); };
    if (d == 1) c.affine = AffineForm{a, cv[0], s};
  } else if (name == "rotation_degenerate") {
    const double omega = num_param(p, "omega", 1.0);
    const double kappa = num_param(p, "kappa", 0.5);
    const double s = num_param(p, "sigma", 1.0);
    c.dim = 2;
    c.noise_dim = 1;
    c.drift = [omega, kappa](double, const double* x, double* out) {
      out[0] = -kappa * x[0] - omega * x[1];
      out[1] = omega * x[0] - kappa * x[1];
    };
    c.diffusion = [s](double, const double*, double* out) {
      out[0] = s;
      out[1] = 0.0;
    };
  } else if (name == "tanh_drift") {
    const int d = p.value("dim", 1);
    const double k = num_param(p, "k", 1.0);
    const double s = num_param(p, "sigma", 1.0);
    c.dim = c.noise_dim = d;
    c.drift = [k, d](double, const double* x, double* out) {
      for (int i = 0; i < d; ++i) out[i] = -k * std::tanh(x[i]);
    };
    c.diffusion = [d, s](double, const double*, double* out) { scaled_identity(s, d, out); };
  } else {
    throw ConfigError("unknown coefficient set '" + name + "'");
  }
  set_g(c, spec.value("g", std::string("one")));
  return c;
}

json Perturbation::to_json() const {
  return {{"drift_shift", drift_shift},
          {"drift_sin", drift_sin},
          {"sigma_scale", sigma_scale},
          {"gamma_shift", gamma_shift}};
}

Perturbation Perturbation::from_json(const json& j) {
  Perturbation p;
  p.drift_shift = j.value("drift_shift", 0.0);
  p.drift_sin = j.value("drift_sin", 0.0);
  p.sigma_scale = j.value("sigma_scale", 0.0);
  p.gamma_shift = j.value("gamma_shift", 0.0);
  return p;
}

CoefficientSet CoefficientFamily::member(int n) const {
  if (n < 1) throw ConfigError("family member index must be >= 1");
  CoefficientSet c = limit;
  c.name = limit.name + "#" + std::to_string(n);
  const Perturbation& p = perturbation;
  if (p.is_zero()) return c;
  const double inv_n = 1.0 / n;
  const int d = c.dim;

  if (p.drift_shift != 0.0 || p.drift_sin != 0.0) {
    const double shift = p.drift_shift * inv_n;
    const double amp = p.drift_sin * inv_n;
    if (c.affine && p.drift_sin == 0.0) {
      c.affine->c = c.affine->c + shift;
      const double a = c.affine->a, cc = c.affine->c;
      c.drift = [a, cc](double, const double* x, double* out) { out[0] = a * x[0] + cc; };
    } else {
      c.affine.reset();
      auto base = limit.drift;
      c.drift = [base, shift, amp, d](double t, const double* x, double* out) {
        base(t, x, out);
        for (int k = 0; k < d; ++k) out[k] = (out[k] + shift) + amp * std::sin(x[k]);
      };
    }
  }
  if (p.sigma_scale != 0.0) {
    const double factor = 1.0 + p.sigma_scale * inv_n;
    const int m = c.noise_dim;
    auto base = limit.diffusion;
    c.diffusion = [base, factor, d, m](double t, const double* x, double* out) {
      base(t, x, out);
      for (int k = 0; k < d * m; ++k) out[k] *= factor;
    };
    if (c.affine) c.affine->s = c.affine->s * factor;
  }
  if (p.gamma_shift != 0.0) c.gamma = limit.gamma + p.gamma_shift * inv_n;
  return c;
}

double CoefficientFamily::gamma_sup() const {
  return std::max(std::fabs(limit.gamma), std::fabs(limit.gamma + perturbation.gamma_shift));
}

CoefficientFamily make_family(const json& limit_spec, const Perturbation& p) {
  return CoefficientFamily{make_coefficients(limit_spec), p};
}

ProbeGrid ProbeGrid::standard(int dim, double T) {
  ProbeGrid g;
  g.times = {0.0, 0.5 * T, T};
  const double radii[] = {0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0, 1000.0};
  std::vector<Vec> dirs;
  for (int i = 0; i < dim; ++i) {
    Vec e(dim, 0.0);
    e[i] = 1.0;
    dirs.push_back(e);
    e[i] = -1.0;
    dirs.push_back(e);
  }
  if (dim > 1) {
    dirs.push_back(Vec(dim, 1.0 / std::sqrt(double(dim))));
    dirs.push_back(Vec(dim, -1.0 / std::sqrt(double(dim))));
  }
  g.points.push_back(Vec(dim, 0.0));
  for (double r : radii) {
    if (r == 0.0) continue;
    for (const Vec& u : dirs) {
      Vec x(dim);
      for (int i = 0; i < dim; ++i) x[i] = r * u[i];
      g.points.push_back(x);
    }
  }
  return g;
}

GrowthReport probe_linear_growth(const CoefficientSet& c, const ProbeGrid& probes) {
  GrowthReport rep;
  const int d = c.dim, m = c.noise_dim;
  Vec b(d), s(d * m);
  double outer = 0.0, inner = 0.0;
  double outer_r = 0.0;
  for (const Vec& x : probes.points) outer_r = std::max(outer_r, std::sqrt(norm2(x.data(), d)));
  const double inner_r = outer_r / 10.0;
  Vec outer_x;
  double outer_t = 0.0;
  for (double t : probes.times) {
    for (const Vec& x : probes.points) {
      c.drift(t, x.data(), b.data());
      c.diffusion(t, x.data(), s.data());
      const double r = std::sqrt(norm2(x.data(), d));
      const double ratio = (std::sqrt(norm2(b.data(), d)) + std::sqrt(norm2(s.data(), d * m))) / (1.0 + r);
      if (!std::isfinite(ratio)) {
        rep.c1 = kInfinity;
        rep.superlinear = true;
        rep.witness_t = t;
        rep.witness_x = x;
        return rep;
      }
      if (ratio > rep.c1) rep.c1 = ratio;
      if (r == outer_r && ratio >= outer) {
        outer = ratio;
        outer_x = x;
        outer_t = t;
      }
      if (std::fabs(r - inner_r) <= 1e-9 * outer_r) inner = std::max(inner, ratio);
    }
  }
  if (outer_r > 0.0 && outer > 2.0 * inner + 1e-12) {
    rep.superlinear = true;
    rep.witness_t = outer_t;
    rep.witness_x = outer_x;
  }
  return rep;
}

void InitialLaw::sample(RngStream& rng, double* out) const {
  const std::size_t d = a.size();
  switch (kind) {
    case Kind::dirac:
      for (std::size_t i = 0; i < d; ++i) out[i] = a[i];
      break;
    case Kind::normal:
      for (std::size_t i = 0; i < d; ++i) out[i] = a[i] + b[i] * rng.normal();
      break;
    case Kind::uniform:
      for (std::size_t i = 0; i < d; ++i) out[i] = a[i] + (b[i] - a[i]) * rng.uniform();
      break;
  }
}

InitialLaw InitialLaw::dirac(Vec x) { return {Kind::dirac, std::move(x), {}, std::nullopt}; }
InitialLaw InitialLaw::normal(Vec mean, Vec sd) {
  return {Kind::normal, std::move(mean), std::move(sd), std::nullopt};
}
InitialLaw InitialLaw::uniform(Vec lo, Vec hi) {
  return {Kind::uniform, std::move(lo), std::move(hi), std::nullopt};
}

json InitialLaw::to_json() const {
  json j;
  switch (kind) {
    case Kind::dirac:
      j = {{"kind", "dirac"}, {"x", a}};
      break;
    case Kind::normal:
      j = {{"kind", "normal"}, {"mean", a}, {"sd", b}};
      break;
    case Kind::uniform:
      j = {{"kind", "uniform"}, {"lo", a}, {"hi", b}};
      break;
  }
  if (density_bound) j["density_bound"] = *density_bound;
  return j;
}

InitialLaw InitialLaw::from_json(const json& j) {
  auto vec = [&](const char* key) {
    const json& v = j.at(key);
    return v.is_number() ? Vec{v.get<double>()} : v.get<Vec>();
  };
  const std::string kind = j.value("kind", "dirac");
  InitialLaw law;
  if (kind == "dirac") {
    law = dirac(vec("x"));
  } else if (kind == "normal") {
    law = normal(vec("mean"), vec("sd"));
  } else if (kind == "uniform") {
    law = uniform(vec("lo"), vec("hi"));
  } else {
    throw ConfigError("unknown initial law '" + kind + "'");
  }
  if (law.kind != Kind::dirac && law.a.size() != law.b.size())
    throw ConfigError("initial law parameters have mismatched lengths");
  if (j.contains("density_bound")) law.density_bound = j.at("density_bound").get<double>();
  return law;
}

}  // namespace levylab
