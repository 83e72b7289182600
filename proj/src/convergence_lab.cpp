#include "levylab/convergence_lab.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

#include "levylab/kernels.hpp"
#include "levylab/parallel.hpp"

namespace levylab {

using nlohmann::json;

// ---------------------------------------------------------------- psi

PsiFunction::PsiFunction(std::vector<double> knots, std::vector<int> halvings) {
  if (knots.size() != halvings.size()) throw ConfigError("psi: knots and halvings differ in size");
  std::vector<std::size_t> order(knots.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return knots[a] < knots[b]; });
  for (std::size_t i : order) {
    if (!(knots[i] >= 0.0) || !std::isfinite(knots[i])) throw ConfigError("psi: knots must be >= 0");
    if (halvings[i] < 0) throw ConfigError("psi: halvings must be >= 0");
    if (halvings[i] == 0) continue;
    knots_.push_back(knots[i]);
    halvings_.push_back(halvings[i]);
  }
  build();
}

void PsiFunction::build() {
  // Merge any knot that starts inside the previous knot's blend.
  for (bool changed = true; changed;) {
    changed = false;
    double slope = 1.0;
    for (std::size_t j = 0; j + 1 < knots_.size(); ++j) {
      const double next = std::ldexp(slope, -halvings_[j]);
      const double w = std::max(1e-3, slope - next);
      if (knots_[j + 1] < knots_[j] + w) {
        halvings_[j] += halvings_[j + 1];
        knots_.erase(knots_.begin() + static_cast<std::ptrdiff_t>(j + 1));
        halvings_.erase(halvings_.begin() + static_cast<std::ptrdiff_t>(j + 1));
        changed = true;
        break;
      }
      slope = next;
    }
  }
  slopes_.clear();
  widths_.clear();
  base_.clear();
  double slope = 1.0;
  for (std::size_t j = 0; j < knots_.size(); ++j) {
    const double next = std::ldexp(slope, -halvings_[j]);
    slopes_.push_back(next);
    widths_.push_back(std::max(1e-3, slope - next));
    slope = next;
  }
  // Values at knots, computed with the closed form on each preceding piece.
  base_.assign(knots_.size(), 0.0);
  for (std::size_t j = 0; j < knots_.size(); ++j) {
    if (j == 0) {
      base_[0] = knots_[0];
      continue;
    }
    const std::size_t i = j - 1;
    const double s_prev = i == 0 ? 1.0 : slopes_[i - 1];
    const double delta = s_prev - slopes_[i];
    const double w = widths_[i];
    base_[j] = base_[i] + s_prev * w - 0.5 * delta * w + slopes_[i] * (knots_[j] - knots_[i] - w);
  }
}

std::size_t PsiFunction::segment(double r) const {
  return static_cast<std::size_t>(std::upper_bound(knots_.begin(), knots_.end(), r) -
                                  knots_.begin());
}

double PsiFunction::value(double r) const {
  const std::size_t j = segment(r);
  if (j == 0) return r;
  const std::size_t i = j - 1;
  const double s_prev = i == 0 ? 1.0 : slopes_[i - 1];
  const double delta = s_prev - slopes_[i];
  const double w = widths_[i];
  const double x = r - knots_[i];
  if (x < w) {
    const double u = x / w;
    return base_[i] + s_prev * x - delta * w * (u * u * u - 0.5 * u * u * u * u);
  }
  return base_[i] + s_prev * w - 0.5 * delta * w + slopes_[i] * (x - w);
}

double PsiFunction::d1(double r) const {
  const std::size_t j = segment(r);
  if (j == 0) return 1.0;
  const std::size_t i = j - 1;
  const double s_prev = i == 0 ? 1.0 : slopes_[i - 1];
  const double x = r - knots_[i];
  if (x < widths_[i]) {
    const double u = x / widths_[i];
    return s_prev - (s_prev - slopes_[i]) * (3.0 * u * u - 2.0 * u * u * u);
  }
  return slopes_[i];
}

double PsiFunction::d2(double r) const {
  const std::size_t j = segment(r);
  if (j == 0) return 0.0;
  const std::size_t i = j - 1;
  const double s_prev = i == 0 ? 1.0 : slopes_[i - 1];
  const double x = r - knots_[i];
  if (x < widths_[i]) {
    const double u = x / widths_[i];
    return -(s_prev - slopes_[i]) * 6.0 * u * (1.0 - u) / widths_[i];
  }
  return 0.0;
}

int PsiFunction::total_halvings() const {
  return std::accumulate(halvings_.begin(), halvings_.end(), 0);
}

double PsiFunction::big_psi(const double* x, int dim) const {
  return value(std::log1p(norm2(x, dim)));
}

TestFunction PsiFunction::as_test_function(int dim) const {
  TestFunction f;
  f.id = "Psi";
  f.dim = dim;
  f.support = SupportClass::log_growth;
  const PsiFunction psi = *this;
  f.value = [psi, dim](const double* x) { return psi.big_psi(x, dim); };
  f.gradient = [psi, dim](const double* x, double* g) {
    const double s = 1.0 + norm2(x, dim);
    const double p1 = psi.d1(std::log(s));
    for (int i = 0; i < dim; ++i) g[i] = p1 * 2.0 * x[i] / s;
  };
  f.hessian = [psi, dim](const double* x, double* h) {
    const double s = 1.0 + norm2(x, dim);
    const double r = std::log(s);
    const double p1 = psi.d1(r), p2 = psi.d2(r);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j) {
        const double xx = 4.0 * x[i] * x[j] / (s * s);
        h[i * dim + j] = xx * (p2 - p1) + (i == j ? 2.0 * p1 / s : 0.0);
      }
  };
  return f;
}

json PsiFunction::to_json() const {
  return {{"knots", knots_}, {"halvings", halvings_}, {"slopes", slopes_}, {"widths", widths_}};
}

PsiFunction PsiFunction::from_json(const json& j) {
  return PsiFunction(j.value("knots", std::vector<double>{}),
                     j.value("halvings", std::vector<int>{}));
}

PsiConstruction construct_psi_from_r(const std::vector<double>& r,
                                     const std::vector<double>& weights) {
  if (r.empty()) throw ConfigError("construct_psi: no samples");
  const std::size_t n = r.size();
  std::vector<double> w = weights.empty() ? std::vector<double>(n, 1.0) : weights;
  if (w.size() != n) throw ConfigError("construct_psi: weights and samples differ in size");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(r[i] >= 0.0) || !(w[i] >= 0.0)) throw ConfigError("construct_psi: bad sample or weight");
    total += w[i];
  }
  if (!(total > 0.0)) throw ConfigError("construct_psi: zero total weight");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return r[a] > r[b]; });

  // prefix_len[j]: number of atoms (largest r first) holding tail mass <= 2^{-j}.
  // Atoms with equal r enter together.
  std::vector<std::size_t> level_len;
  {
    std::vector<double> tail(n);
    double acc = 0.0;
    for (std::size_t k = 0; k < n;) {
      std::size_t e = k;
      double group = 0.0;
      while (e < n && r[order[e]] == r[order[k]]) group += w[order[e++]];
      acc += group;
      for (std::size_t q = k; q < e; ++q) tail[q] = acc / total;
      k = e;
    }
    for (int j = 0; j < 1100; ++j) {
      const double cap = std::ldexp(1.0, -j);
      const auto len = static_cast<std::size_t>(
          std::upper_bound(tail.begin(), tail.end(), cap * (1.0 + 1e-12)) - tail.begin());
      if (len < 4) break;
      if (!level_len.empty() && level_len.back() == len) continue;
      level_len.push_back(len);
    }
  }

  PsiConstruction out;
  out.levels = level_len.size();
  double id_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) id_sum += w[i] * r[i];
  out.identity_sum = id_sum / total;

  std::map<double, int> knots;
  auto make_psi = [&] {
    std::vector<double> k;
    std::vector<int> h;
    for (const auto& [key, val] : knots) {
      k.push_back(key);
      h.push_back(val);
    }
    return PsiFunction(k, h);
  };
  PsiFunction psi;
  int halvings = 0;
  for (;;) {
    std::vector<double> mean(level_len.size());
    for (std::size_t j = 0; j < level_len.size(); ++j) {
      double s = 0.0, ws = 0.0;
      for (std::size_t k = 0; k < level_len[j]; ++k) {
        s += w[order[k]] * psi.value(r[order[k]]);
        ws += w[order[k]];
      }
      mean[j] = ws > 0.0 ? s / ws : 0.0;
    }
    std::size_t bad = 0;
    for (std::size_t j = 2; j < level_len.size(); ++j) {
      if (mean[j] > 1.5 * mean[j - 1]) {
        bad = j;
        break;
      }
    }
    if (bad == 0 || halvings >= 1000) break;
    // Smallest positive r in the shallower level.
    double knot = -1.0;
    for (std::size_t k = level_len[bad - 1]; k-- > 0;) {
      if (r[order[k]] > 0.0) {
        knot = r[order[k]];
        break;
      }
    }
    if (knot < 0.0) break;
    knots[knot] += 1;
    ++halvings;
    ++out.iterations;
    psi = make_psi();
  }
  out.halving_engaged = halvings > 0;
  out.psi = psi;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += w[i] * psi.value(r[i]);
  out.weighted_sum = s / total;
  return out;
}

PsiConstruction construct_psi(const EnsembleLaw& mu0) {
  std::vector<double> r(mu0.size());
  for (std::size_t i = 0; i < mu0.size(); ++i) r[i] = std::log1p(norm2(mu0.point(i), mu0.dim));
  return construct_psi_from_r(r, mu0.weights);
}

// ---------------------------------------------------------------- path scans

namespace {

// Visits every value a path takes on its merged grid, plus jump left limits.
template <class F>
void visit_path_values(const Ensemble& e, std::size_t p, F&& f) {
  for (std::size_t i = 0; i <= e.grid.steps; ++i) f(e.state(i, p));
  if (e.jumps.empty()) return;
  for (const JumpRecord& r : e.jumps[p]) {
    f(r.pre.data());
    f(r.post.data());
  }
}

MomentEstimate mean_se(const std::vector<double>& v) {
  MomentEstimate m;
  const std::size_t n = v.size();
  if (n == 0) return m;
  m.mean = kernels::sum(v.data(), n) / static_cast<double>(n);
  if (n > 1) {
    std::vector<double> dev(n);
    for (std::size_t i = 0; i < n; ++i) dev[i] = v[i] - m.mean;
    m.se = std::sqrt(kernels::dot(dev.data(), dev.data(), n) / (n - 1.0) / static_cast<double>(n));
  }
  return m;
}

// Value at the largest merged-grid time <= t.
const double* value_at(const CadlagPath& path, double t) {
  const auto it = std::upper_bound(path.times.begin(), path.times.end(), t);
  const std::size_t k = it == path.times.begin() ? 0 : static_cast<std::size_t>(it - path.times.begin()) - 1;
  return path.at(k);
}

}  // namespace

MomentEstimate lyapunov_moment(const Ensemble& e, const PsiFunction& psi) {
  std::vector<double> sup(e.n, 0.0);
  parallel_for(e.n, 1024, [&](std::size_t b, std::size_t end) {
    for (std::size_t p = b; p < end; ++p) {
      double m = 0.0;
      visit_path_values(e, p, [&](const double* x) { m = std::max(m, psi.big_psi(x, e.dim)); });
      sup[p] = std::sqrt(m);
    }
  });
  return mean_se(sup);
}

TightnessReport tightness_diagnostics(const std::vector<const Ensemble*>& family,
                                      const PsiFunction& psi, const std::vector<double>& K_grid,
                                      const std::vector<double>& theta_grid, double N_threshold) {
  TightnessReport rep;
  rep.K_grid = K_grid;
  rep.theta_grid = theta_grid;
  rep.prob_sup_exceeds.assign(K_grid.size(), 0.0);
  rep.prob_increment.assign(theta_grid.size(), 0.0);
  const double radii[] = {1.0, 2.0, 4.0};
  for (const Ensemble* e : family) {
    rep.lyapunov.push_back(lyapunov_moment(*e, psi).mean);
    const double T = e->grid.T;
    const auto n = static_cast<double>(e->n);
    std::vector<double> sups(e->n, 0.0);
    for (std::size_t p = 0; p < e->n; ++p)
      visit_path_values(*e, p, [&](const double* x) {
        sups[p] = std::max(sups[p], std::sqrt(norm2(x, e->dim)));
      });
    for (std::size_t k = 0; k < K_grid.size(); ++k) {
      std::size_t c = 0;
      for (double s : sups) c += s > K_grid[k];
      rep.prob_sup_exceeds[k] = std::max(rep.prob_sup_exceeds[k], c / n);
    }
    for (std::size_t k = 0; k < theta_grid.size(); ++k) {
      const double theta = theta_grid[k];
      const double horizon = std::max(0.0, T - theta);
      // Rules 0..3: deterministic times; 4..6: ball exits.
      std::vector<std::size_t> hits(7, 0);
      for (std::size_t p = 0; p < e->n; ++p) {
        const CadlagPath path = e->path(p);
        auto test = [&](double tau, std::size_t rule) {
          tau = std::min(tau, horizon);
          const double* a = value_at(path, tau);
          const double* b = value_at(path, tau + theta);
          double d2 = 0.0;
          for (int i = 0; i < e->dim; ++i) d2 += (b[i] - a[i]) * (b[i] - a[i]);
          if (std::sqrt(d2) >= N_threshold) hits[rule]++;
        };
        for (std::size_t q = 0; q < 4; ++q) test(0.25 * q * T, q);
        for (std::size_t q = 0; q < 3; ++q) {
          double tau = horizon;
          for (std::size_t i = 0; i < path.size(); ++i) {
            if (std::sqrt(norm2(path.at(i), e->dim)) >= radii[q]) {
              tau = path.times[i];
              break;
            }
          }
          test(tau, 4 + q);
        }
      }
      for (std::size_t h : hits) rep.prob_increment[k] = std::max(rep.prob_increment[k], h / n);
    }
  }
  if (!K_grid.empty()) {
    for (std::size_t k = 1; k < K_grid.size(); ++k)
      if (rep.prob_sup_exceeds[k] > rep.prob_sup_exceeds[k - 1]) rep.decays_iii = false;
    const double first = rep.prob_sup_exceeds.front(), last = rep.prob_sup_exceeds.back();
    if (!(last == 0.0 || last <= 0.5 * first)) rep.decays_iii = false;
  }
  if (theta_grid.size() > 1) {
    const auto [lo, hi] = std::minmax_element(theta_grid.begin(), theta_grid.end());
    const double at_small = rep.prob_increment[static_cast<std::size_t>(lo - theta_grid.begin())];
    const double at_large = rep.prob_increment[static_cast<std::size_t>(hi - theta_grid.begin())];
    rep.decays_iv = at_small <= at_large;
  }
  return rep;
}

// ---------------------------------------------------------------- distances

EmpiricalDistanceConfig EmpiricalDistanceConfig::standard(int dim) {
  EmpiricalDistanceConfig cfg;
  char buf[64];
  for (int k = 0; k < dim; ++k) {
    for (int c2 = -6; c2 <= 6; ++c2) {
      const double c = 0.5 * c2;
      std::snprintf(buf, sizeof buf, "tent_%d_%+.1f", k, c);
      cfg.dictionary.push_back({buf, [k, c, dim](const double* x) {
                                  double d2 = 0.0;
                                  for (int i = 0; i < dim; ++i) {
                                    const double y = x[i] - (i == k ? c : 0.0);
                                    d2 += y * y;
                                  }
                                  return std::max(0.0, 1.0 - std::sqrt(d2));
                                }});
    }
    for (double s : {0.0, 0.5 * std::numbers::pi}) {
      std::snprintf(buf, sizeof buf, "sin_%d_%+.2f", k, s);
      cfg.dictionary.push_back({buf, [k, s](const double* x) { return std::sin(x[k] + s); }});
    }
    for (int c = -2; c <= 2; ++c) {
      std::snprintf(buf, sizeof buf, "tanh_%d_%+d", k, c);
      cfg.dictionary.push_back(
          {buf, [k, c](const double* x) { return std::tanh(x[k] - static_cast<double>(c)); }});
    }
  }
  return cfg;
}

void EmpiricalDistanceConfig::validate(int dim) const {
  RngStream rng(0xB1, 0, Purpose::generic);
  Vec x(dim), y(dim);
  for (int trial = 0; trial < 2000; ++trial) {
    for (int i = 0; i < dim; ++i) {
      x[i] = -5.0 + 10.0 * rng.uniform();
      y[i] = x[i] + (rng.uniform() - 0.5) * (trial % 2 ? 2.0 : 0.02);
    }
    double dxy = 0.0;
    for (int i = 0; i < dim; ++i) dxy += (x[i] - y[i]) * (x[i] - y[i]);
    dxy = std::sqrt(dxy);
    for (const BLFunction& f : dictionary) {
      const double fx = f.f(x.data()), fy = f.f(y.data());
      if (std::fabs(fx) > 1.0 + 1e-12)
        throw ConfigError("distance dictionary: '" + f.id + "' exceeds bound 1");
      if (std::fabs(fx - fy) > dxy * (1.0 + 1e-9) + 1e-15)
        throw ConfigError("distance dictionary: '" + f.id + "' exceeds Lipschitz constant 1");
    }
  }
}

namespace {

double wasserstein1(const EnsembleLaw& a, const EnsembleLaw& b) {
  if (a.dim != 1) throw ConfigError("wasserstein1 mode is implemented for dim 1 only");
  auto sorted = [](const EnsembleLaw& law) {
    std::vector<std::pair<double, double>> v(law.size());
    const double wsum = law.weights.empty()
                            ? static_cast<double>(law.size())
                            : std::accumulate(law.weights.begin(), law.weights.end(), 0.0);
    for (std::size_t i = 0; i < law.size(); ++i)
      v[i] = {law.points[i], (law.weights.empty() ? 1.0 : law.weights[i]) / wsum};
    std::sort(v.begin(), v.end());
    return v;
  };
  const auto va = sorted(a), vb = sorted(b);
  // int |F_a - F_b| dx over the merged support.
  std::size_t i = 0, j = 0;
  double Fa = 0.0, Fb = 0.0, x = std::min(va.front().first, vb.front().first), acc = 0.0;
  while (i < va.size() || j < vb.size()) {
    const double xa = i < va.size() ? va[i].first : kInfinity;
    const double xb = j < vb.size() ? vb[j].first : kInfinity;
    const double nx = std::min(xa, xb);
    acc += std::fabs(Fa - Fb) * (nx - x);
    x = nx;
    while (i < va.size() && va[i].first == nx) Fa += va[i++].second;
    while (j < vb.size() && vb[j].first == nx) Fb += vb[j++].second;
  }
  return acc;
}

}  // namespace

DistanceEstimate bl_distance(const EnsembleLaw& a, const EnsembleLaw& b,
                             const EmpiricalDistanceConfig& cfg, bool paired) {
  if (a.dim != b.dim) throw ConfigError("bl_distance: dimension mismatch");
  DistanceEstimate out;
  if (a.size() == 0 || b.size() == 0) throw ConfigError("bl_distance: empty law");
  if (cfg.mode == EmpiricalDistanceConfig::Mode::wasserstein1_marginal) {
    out.distance = wasserstein1(a, b);
    out.argmax = "W1";
    return out;
  }
  if (paired && (a.size() != b.size() || !a.weights.empty() || !b.weights.empty()))
    throw ConfigError("bl_distance: paired mode needs equal-size unweighted clouds");

  auto stats = [](const EnsembleLaw& law, const std::vector<double>& v, double& mean, double& var) {
    const std::size_t n = v.size();
    if (law.weights.empty()) {
      mean = kernels::sum(v.data(), n) / static_cast<double>(n);
      double ss = 0.0;
      for (double e : v) ss += (e - mean) * (e - mean);
      var = n > 1 ? ss / (n - 1.0) / static_cast<double>(n) : 0.0;
      return;
    }
    const double ws = kernels::sum(law.weights.data(), n);
    mean = kernels::dot(law.weights.data(), v.data(), n) / ws;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double wi = law.weights[i] / ws;
      ss += wi * wi * (v[i] - mean) * (v[i] - mean);
    }
    var = ss;
  };

  std::vector<double> fa(a.size()), fb(b.size()), diff;
  for (const BLFunction& f : cfg.dictionary) {
    for (std::size_t i = 0; i < a.size(); ++i) fa[i] = f.f(a.point(i));
    for (std::size_t i = 0; i < b.size(); ++i) fb[i] = f.f(b.point(i));
    double gap, se;
    if (paired) {
      diff.resize(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) diff[i] = fa[i] - fb[i];
      const MomentEstimate m = mean_se(diff);
      gap = std::fabs(m.mean);
      se = m.se;
    } else {
      double ma, va, mb, vb;
      stats(a, fa, ma, va);
      stats(b, fb, mb, vb);
      gap = std::fabs(ma - mb);
      se = std::sqrt(va + vb);
    }
    if (gap > out.distance || out.argmax.empty()) {
      out.distance = gap;
      out.se = se;
      out.argmax = f.id;
    }
  }
  return out;
}

double histogram_density_sup(const EnsembleLaw& law) {
  const std::size_t n = law.size();
  const int d = law.dim;
  if (n < 2) return kInfinity;
  Vec mean(d, 0.0), sd(d, 0.0), h(d);
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k) mean[k] += law.point(i)[k];
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k) sd[k] += std::pow(law.point(i)[k] - mean[k], 2);
  double vol = 1.0;
  for (int k = 0; k < d; ++k) {
    sd[k] = std::sqrt(sd[k] / (n - 1.0));
    if (sd[k] == 0.0) return kInfinity;
    h[k] = 3.49 * sd[k] * std::pow(static_cast<double>(n), -1.0 / (d + 2.0));
    vol *= h[k];
  }
  std::map<std::vector<long>, std::size_t> counts;
  std::vector<long> key(d);
  std::size_t best = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < d; ++k) key[k] = static_cast<long>(std::floor(law.point(i)[k] / h[k]));
    best = std::max(best, ++counts[key]);
  }
  return static_cast<double>(best) / (static_cast<double>(n) * vol);
}

// ---------------------------------------------------------------- Gronwall

GronwallResult gronwall_check(const GronwallPaths& g, double p, double q, std::size_t tau) {
  if (!(0.0 < q && q < p && p < 1.0)) throw ConfigError("gronwall_check needs 0 < q < p < 1");
  const std::size_t M = g.times.size();
  if (M == 0 || g.n_paths == 0) throw ConfigError("gronwall_check: no paths");
  if (tau >= M) throw ConfigError("gronwall_check: tau beyond the grid");
  for (const auto* v : {&g.xi, &g.eta, &g.A, &g.M})
    if (v->size() != g.n_paths * M) throw ConfigError("gronwall_check: inconsistent path arrays");

  auto reject = [&](std::size_t path, std::size_t i, const std::string& why) {
    throw HypothesisError("gronwall_check: " + why + " on path " + std::to_string(path) +
                          " at t = " + std::to_string(g.times[i]));
  };
  for (std::size_t path = 0; path < g.n_paths; ++path) {
    if (g.at(g.A, path, 0) != 0.0) reject(path, 0, "A_0 != 0");
    if (g.at(g.M, path, 0) != 0.0) reject(path, 0, "M_0 != 0");
    double upper = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
      const double xi = g.at(g.xi, path, i), eta = g.at(g.eta, path, i);
      if (!(xi >= 0.0) || !(eta >= 0.0)) reject(path, i, "xi or eta negative");
      if (i > 0) {
        const double dA = g.at(g.A, path, i) - g.at(g.A, path, i - 1);
        if (dA < 0.0) reject(path, i, "A decreasing");
        upper += std::max(g.at(g.xi, path, i - 1), xi) * dA;
      }
      const double mi = g.at(g.M, path, i);
      const double bound = eta + upper + mi;
      if (xi > bound + 1e-12 * (1.0 + eta + upper + std::fabs(mi)))
        reject(path, i, "xi > eta + int xi dA + M");
    }
  }

  const auto n = static_cast<double>(g.n_paths);
  std::vector<double> sxi(g.n_paths), eA(g.n_paths), seta(g.n_paths);
  for (std::size_t path = 0; path < g.n_paths; ++path) {
    double mx = 0.0, me = 0.0;
    for (std::size_t i = 0; i <= tau; ++i) {
      mx = std::max(mx, g.at(g.xi, path, i));
      me = std::max(me, g.at(g.eta, path, i));
    }
    sxi[path] = std::pow(mx, q);
    seta[path] = me;
    eA[path] = std::exp(p * g.at(g.A, path, tau) / (1.0 - p));
  }
  auto ms = [&](const std::vector<double>& v) {
    MomentEstimate m = mean_se(v);
    if (g.n_paths < 2) m.se = 0.0;
    (void)n;
    return m;
  };
  const MomentEstimate S = ms(sxi), E = ms(eA), H = ms(seta);
  GronwallResult r;
  r.lhs = std::pow(S.mean, 1.0 / q);
  r.lhs_se = S.mean > 0.0 ? (1.0 / q) * std::pow(S.mean, 1.0 / q - 1.0) * S.se : 0.0;
  const double e_pow = (1.0 - p) / p;
  r.rhs = std::pow(p / (p - q), 1.0 / q) * std::pow(E.mean, e_pow) * H.mean;
  double rel = 0.0;
  if (E.mean > 0.0) rel += std::pow(e_pow * E.se / E.mean, 2);
  if (H.mean > 0.0) rel += std::pow(H.se / H.mean, 2);
  r.rhs_se = r.rhs * std::sqrt(rel);
  r.pass = r.lhs <= r.rhs + 3.0 * std::sqrt(r.lhs_se * r.lhs_se + r.rhs_se * r.rhs_se);
  return r;
}

GronwallPaths random_gronwall_instance(std::uint64_t seed, std::size_t n_paths, std::size_t steps,
                                       double T) {
  GronwallPaths g;
  g.n_paths = n_paths;
  const std::size_t M = steps + 1;
  for (std::size_t i = 0; i < M; ++i) g.times.push_back(T * static_cast<double>(i) / steps);
  g.xi.resize(n_paths * M);
  g.eta.resize(n_paths * M);
  g.A.resize(n_paths * M);
  g.M.resize(n_paths * M);
  RngStream pick(seed, 0, Purpose::generic);
  const double c = 0.2 + 1.8 * pick.uniform();
  const double vol = 1.5 * pick.uniform();
  const double kappa = 2.0 * pick.uniform();
  const double dt = T / static_cast<double>(steps);
  for (std::size_t path = 0; path < n_paths; ++path) {
    RngStream rng(seed, path + 1, Purpose::generic);
    double E = 1.0, W = 0.0, A = 0.0, integral = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
      if (i > 0) {
        const double z = rng.normal();
        E *= std::exp(vol * std::sqrt(dt) * z - 0.5 * vol * vol * dt);
        W += std::sqrt(dt) * rng.normal();
        const double prev_xi = g.xi[path * M + i - 1];
        const double dA = kappa * std::fabs(rng.normal()) * dt;
        integral += prev_xi * dA;
        A += dA;
      }
      const double Mi = c * (E - 1.0);
      const double eta = c + std::fabs(W);
      const double u = rng.uniform();
      g.A[path * M + i] = A;
      g.M[path * M + i] = i == 0 ? 0.0 : Mi;
      g.eta[path * M + i] = eta;
      g.xi[path * M + i] = u * (eta + integral + (i == 0 ? 0.0 : Mi));
    }
  }
  return g;
}

// ---------------------------------------------------------------- limit experiment

LimitReport limit_experiment(const CoefficientFamily& family, const Driver& driver,
                             const InitialLaw& mu0, const std::vector<int>& schedule,
                             const TimeGrid& grid, std::size_t n, std::uint64_t seed,
                             const EmpiricalDistanceConfig& cfg, const LimitOptions& opts) {
  if (schedule.empty()) throw ConfigError("limit_experiment: empty schedule");
  LimitReport rep;
  rep.gamma_sup = family.gamma_sup();
  rep.l_bound = rep.gamma_sup > 0.0 ? 1.0 / (std::sqrt(2.0) * rep.gamma_sup) : kInfinity;
  if (driver.trunc.l > rep.l_bound)
    throw ConfigError("truncation level l = " + std::to_string(driver.trunc.l) +
                      " exceeds 1/(sqrt(2) Gamma) = " + std::to_string(rep.l_bound));
  cfg.validate(family.limit.dim);

  const FamilyEnsembles fam =
      simulate_coupled_family(family, driver, mu0, schedule, grid, n, seed, opts.engine);
  const PsiFunction psi = construct_psi(marginal_law(fam.limit, 0.0)).psi;
  const std::size_t K = grid.steps;
  const std::size_t C = std::max<std::size_t>(1, std::min(opts.checkpoints, K));
  std::vector<EnsembleLaw> limit_laws;
  for (std::size_t c = 1; c <= C; ++c) limit_laws.push_back(marginal_law(fam.limit, grid.time(c * K / C)));
  for (const auto& law : limit_laws)
    rep.limit_density_sup = std::max(rep.limit_density_sup, histogram_density_sup(law));

  for (std::size_t k = 0; k < schedule.size(); ++k) {
    LimitRow row;
    row.n = schedule[k];
    for (std::size_t c = 1; c <= C; ++c) {
      const EnsembleLaw law = marginal_law(fam.members[k], grid.time(c * K / C));
      row.density_sup = std::max(row.density_sup, histogram_density_sup(law));
      const DistanceEstimate d = bl_distance(law, limit_laws[c - 1], cfg, true);
      if (d.distance > row.distance || row.phi_at_max.empty()) {
        row.distance = d.distance;
        row.se = d.se;
        row.time_at_max = law.time;
        row.phi_at_max = d.argmax;
      }
    }
    row.lyapunov = lyapunov_moment(fam.members[k], psi).mean;
    rep.rows.push_back(row);
  }
  for (std::size_t k = 0; k + 1 < rep.rows.size(); ++k) {
    const LimitRow &a = rep.rows[k], &b = rep.rows[k + 1];
    if (b.distance > a.distance + 2.0 * std::sqrt(a.se * a.se + b.se * b.se)) rep.monotone = false;
  }
  rep.ratio_ok = rep.rows.back().distance <= rep.rows.front().distance / 4.0;
  rep.pass = rep.monotone && rep.ratio_ok;

  char buf[160];
  double sup_dens = rep.limit_density_sup;
  for (const auto& r : rep.rows) sup_dens = std::max(sup_dens, r.density_sup);
  std::snprintf(buf, sizeof buf,
                "marginal densities assumed uniformly bounded; histogram sup over n and "
                "checkpoints = %.6g",
                sup_dens);
  rep.assumptions.push_back(buf);
  if (mu0.density_bound) {
    std::snprintf(buf, sizeof buf, "declared initial density bound %.6g (not verified)",
                  *mu0.density_bound);
    rep.assumptions.push_back(buf);
  }
  rep.assumptions.push_back("uniqueness of the weak Fokker-Planck solution assumed, not verified");
  rep.assumptions.push_back(
      "convergence measured on finitely many marginals with a finite bounded-Lipschitz "
      "dictionary; this is a surrogate for weak convergence on path space");
  return rep;
}

}  // namespace levylab
