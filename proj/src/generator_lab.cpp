#include "levylab/generator_lab.hpp"

#include <algorithm>
#include <cmath>

#include "levylab/kernels.hpp"
#include "levylab/parallel.hpp"

namespace levylab {

namespace {

bool has_jumps(const LevyMeasure& nu) { return !(nu.is_atomic() && nu.atoms().empty()); }

// Scratch buffers reused by every generator evaluation on a thread.
struct Scratch {
  Vec grad, hess, a, sigma, b, y;
};

Scratch& scratch(int d, int m) {
  thread_local Scratch s;
  s.grad.resize(d);
  s.hess.resize(d * d);
  s.a.resize(d * d);
  s.sigma.resize(d * m);
  s.b.resize(d);
  s.y.resize(d);
  return s;
}

double z_score(double est, double se) {
  if (est == 0.0) return 0.0;
  return se > 0.0 ? std::fabs(est) / se : kInfinity;
}

}  // namespace

GeneratorContext::GeneratorContext(CoefficientSet coeffs, Driver driver,
                                   std::optional<JumpQuadrature> quadrature)
    : coeffs_(std::move(coeffs)), driver_(std::move(driver)) {
  driver_.trunc.validate();
  const LevyMeasure& nu = driver_.nu;
  if (quadrature) {
    quad_ = *quadrature;
  } else {
    quad_.kind = nu.is_atomic() ? JumpQuadrature::Kind::atomic_sum
                                : JumpQuadrature::Kind::monte_carlo;
  }
  if (!nu.is_atomic() && quad_.kind == JumpQuadrature::Kind::atomic_sum)
    throw ConfigError("atomic_sum quadrature needs an atomic driver");
  const int d = coeffs_.dim;
  discarded_q_.assign(d * d, 0.0);
  if (!has_jumps(nu)) return;
  if (nu.dim() != d) throw ConfigError("driver dimension does not match coefficients");

  const double l = driver_.trunc.l;
  if (!std::isfinite(nu.moment(2, Annulus::ball(l)))) {
    integrability_error_ =
        "jump term not integrable: Hs fails (int_{|z|<=l} |z|^2 nu(dz) diverges)";
    return;
  }
  if (!std::isfinite(nu.mass(Annulus::outside(l)))) {
    integrability_error_ = "jump term not integrable: Hl fails (nu(|z| > l) is infinite)";
    return;
  }
  if (quad_.kind == JumpQuadrature::Kind::atomic_sum) return;

  const Annulus region = driver_.trunc.simulated_region();
  node_mass_ = nu.mass(region);
  if (!std::isfinite(node_mass_)) {
    integrability_error_ = "jump quadrature: infinite mass on " + region.describe() +
                           "; use discard_below_eps";
    return;
  }
  if (node_mass_ > 0.0) {
    RngStream rng(quad_.seed, 0, Purpose::quadrature);
    nodes_.reserve(quad_.samples);
    for (std::size_t k = 0; k < quad_.samples; ++k) nodes_.push_back(nu.sample_mark(region, rng));
  }
  if (driver_.trunc.mode == TruncationConfig::Mode::discard_below_eps) {
    const Annulus ball = Annulus::ball(driver_.trunc.eps);
    if (nu.is_atomic()) {
      for (const Atom& a : nu.atoms()) {
        if (!ball.contains(std::sqrt(norm2(a.mark.data(), d)))) continue;
        for (int i = 0; i < d; ++i)
          for (int j = 0; j < d; ++j) discarded_q_[i * d + j] += a.mass * a.mark[i] * a.mark[j];
      }
    } else {
      const double m2 = nu.moment(2, ball);
      if (nu.parametric_part()->one_sided()) {
        discarded_q_[0] = m2;
      } else {
        for (int i = 0; i < d; ++i) discarded_q_[i * d + i] = m2 / d;
      }
    }
  }
}

void GeneratorContext::diffusion_matrix(double t, const double* x, double* a) const {
  const int d = coeffs_.dim, m = coeffs_.noise_dim;
  Vec s(d * m);
  coeffs_.diffusion(t, x, s.data());
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int k = 0; k < m; ++k) acc += s[i * m + k] * s[j * m + k];
      a[i * d + j] = 0.5 * acc;
    }
}

GeneratorValue GeneratorContext::eval(const TestFunction& phi, double t, const double* x) const {
  if (!integrability_error_.empty()) throw HypothesisError(integrability_error_);
  const int d = coeffs_.dim, m = coeffs_.noise_dim;
  if (phi.dim != d) throw ConfigError("test function dimension does not match coefficients");
  Scratch& s = scratch(d, m);
  phi.gradient(x, s.grad.data());
  phi.hessian(x, s.hess.data());
  coeffs_.diffusion(t, x, s.sigma.data());
  coeffs_.drift(t, x, s.b.data());

  GeneratorValue out;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int k = 0; k < m; ++k) acc += s.sigma[i * m + k] * s.sigma[j * m + k];
      out.diffusion += 0.5 * acc * s.hess[i * d + j];
    }
  for (int i = 0; i < d; ++i) out.drift += s.b[i] * s.grad[i];

  const double f = coeffs_.f(t, x);
  const LevyMeasure& nu = driver_.nu;
  if (f != 0.0 && has_jumps(nu)) {
    const double l = driver_.trunc.l;
    const double phi0 = phi.value(x);
    auto term = [&](const Vec& z) {
      double u2 = 0.0, ug = 0.0;
      for (int i = 0; i < d; ++i) {
        const double u = f * z[i];
        s.y[i] = x[i] + u;
        u2 += u * u;
        ug += u * s.grad[i];
      }
      double v = phi.value(s.y.data()) - phi0;
      if (std::sqrt(u2) <= l) v -= ug;
      return v;
    };
    if (quad_.kind == JumpQuadrature::Kind::atomic_sum) {
      for (const Atom& a : nu.atoms()) {
        if (a.mass == 0.0) continue;
        out.jump += a.mass * term(a.mark);
      }
    } else if (!nodes_.empty()) {
      double sum = 0.0, sum2 = 0.0;
      for (const Vec& z : nodes_) {
        const double v = term(z);
        sum += v;
        sum2 += v * v;
      }
      const double n = static_cast<double>(nodes_.size());
      const double mean = sum / n;
      const double var = std::max(0.0, (sum2 - n * mean * mean) / std::max(1.0, n - 1.0));
      out.jump = node_mass_ * mean;
      out.se = node_mass_ * std::sqrt(var / n);
    }
    if (quad_.kind == JumpQuadrature::Kind::monte_carlo) {
      double taylor = 0.0;
      for (int i = 0; i < d * d; ++i) taylor += s.hess[i] * discarded_q_[i];
      out.jump += 0.5 * f * f * taylor;
    }
  }
  out.value = (out.diffusion + out.drift) + out.jump;
  return out;
}

namespace {

// True if the second moment on dyadic shells toward the origin stops decaying.
bool shells_diverge(const LevyMeasure& nu, double r) {
  double prev = nu.moment(2, Annulus{r * std::ldexp(1.0, -39), r * std::ldexp(1.0, -38)});
  const double last = nu.moment(2, Annulus{r * std::ldexp(1.0, -40), r * std::ldexp(1.0, -39)});
  if (!std::isfinite(prev) || !std::isfinite(last)) return true;
  return last > 0.0 && last >= (1.0 - 1e-9) * prev;
}

double log_tail(const LevyMeasure& nu, double f, double l, double xnorm) {
  const double af = std::fabs(f);
  const double cut = l / af;
  auto weight = [&](double r) { return std::log1p(af * r / (1.0 + xnorm)); };
  if (nu.is_atomic()) {
    double s = 0.0;
    for (const Atom& a : nu.atoms()) {
      const double r = std::sqrt(norm2(a.mark.data(), a.mark.size()));
      if (r > cut) s += a.mass * weight(r);
    }
    return s;
  }
  const ParametricMeasure* p = nu.parametric_part();
  return radial_integral([&](double r) { return weight(r) * p->radial_density(r); }, cut, kInf);
}

}  // namespace

HypothesisReport validate_hypotheses(const GeneratorContext& ctx, const ProbeGrid& probes) {
  HypothesisReport rep;
  rep.h1.name = "H1";
  rep.hs.name = "Hs";
  rep.hl.name = "Hl";
  const CoefficientSet& c = ctx.coeffs();
  const GrowthReport g = probe_linear_growth(c, probes);
  rep.h1.constant = g.c1;
  if (g.superlinear) {
    rep.h1.violated = true;
    rep.h1.witness_t = g.witness_t;
    rep.h1.witness_x = g.witness_x;
    rep.h1.detail = "|b| + ||sigma|| grows faster than linearly on the outer probe shells";
  }

  const LevyMeasure& nu = ctx.driver().nu;
  if (!has_jumps(nu)) return rep;
  const double l = ctx.driver().trunc.l;
  const int d = c.dim;
  const bool singular = shells_diverge(nu, l);

  for (double t : probes.times) {
    for (const Vec& x : probes.points) {
      const double f = c.f(t, x.data());
      if (f == 0.0) continue;
      const double x2 = norm2(x.data(), d);
      const double cut = l / std::fabs(f);
      if (!rep.hs.violated) {
        const double m2 = f * f * nu.moment(2, Annulus::ball(cut));
        if (singular || !std::isfinite(m2)) {
          rep.hs.violated = true;
          rep.hs.constant = kInfinity;
          rep.hs.witness_t = t;
          rep.hs.witness_x = x;
          rep.hs.detail = "second moment of nu^f on the small-jump ball diverges on refining annuli";
        } else {
          rep.hs.constant = std::max(rep.hs.constant, m2 / (1.0 + x2));
        }
      }
      if (!rep.hl.violated) {
        const double big = nu.mass(Annulus::outside(cut));
        const double lt = std::isfinite(big) ? log_tail(nu, f, l, std::sqrt(x2)) : kInfinity;
        if (!std::isfinite(big) || !std::isfinite(lt)) {
          rep.hl.violated = true;
          rep.hl.constant = kInfinity;
          rep.hl.witness_t = t;
          rep.hl.witness_x = x;
          rep.hl.detail = std::isfinite(big) ? "log-moment of big jumps diverges"
                                             : "nu^f has infinite mass outside B_l";
        } else {
          rep.hl.constant = std::max(rep.hl.constant, lt);
        }
      }
    }
  }
  return rep;
}

MartingaleResidual martingale_residual(const Ensemble& e, const GeneratorContext& ctx,
                                       const TestFunction& phi, double s, double t,
                                       int bins_per_dim, std::size_t min_count) {
  if (e.n == 0) throw ConfigError("martingale_residual: empty ensemble");
  if (!(s < t)) throw ConfigError("martingale_residual: need s < t");
  const std::size_t is = e.grid.index_at_or_before(s), it = e.grid.index_at_or_before(t);
  const double tol = 1e-12 * e.grid.T;
  if (std::fabs(e.grid.time(is) - s) > tol || std::fabs(e.grid.time(it) - t) > tol)
    throw ConfigError("martingale_residual: s and t must be base grid times");
  const int d = e.dim;

  std::vector<double> dm(e.n);
  parallel_for(e.n, 1024, [&](std::size_t b, std::size_t end) {
    for (std::size_t p = b; p < end; ++p) {
      const auto* recs = e.jumps.empty() ? nullptr : &e.jumps[p];
      std::size_t r = 0;
      if (recs)
        while (r < recs->size() && (*recs)[r].cell < is) ++r;
      double integral = 0.0;
      for (std::size_t i = is; i < it; ++i) {
        const double* left = e.state(i, p);
        double tl = e.grid.time(i);
        while (recs && r < recs->size() && (*recs)[r].cell == i) {
          const JumpRecord& rec = (*recs)[r++];
          integral += ctx.eval(phi, tl, left).value * (rec.time - tl);
          left = rec.post.data();
          tl = rec.time;
        }
        integral += ctx.eval(phi, tl, left).value * (e.grid.time(i + 1) - tl);
      }
      dm[p] = (phi.value(e.state(it, p)) - phi.value(e.state(is, p))) - integral;
    }
  });

  // Bins over the active coordinates of x_s.
  std::vector<int> active;
  Vec lo(d, kInfinity), hi(d, -kInfinity);
  for (std::size_t p = 0; p < e.n; ++p)
    for (int k = 0; k < d; ++k) {
      lo[k] = std::min(lo[k], e.state(is, p)[k]);
      hi[k] = std::max(hi[k], e.state(is, p)[k]);
    }
  for (int k = 0; k < d; ++k)
    if (hi[k] > lo[k]) active.push_back(k);
  std::size_t nbins = 1;
  for (std::size_t k = 0; k < active.size(); ++k) nbins *= bins_per_dim;
  std::vector<std::size_t> bin_of(e.n, 0);
  for (std::size_t p = 0; p < e.n; ++p) {
    std::size_t idx = 0;
    for (int k : active) {
      const double u = (e.state(is, p)[k] - lo[k]) / (hi[k] - lo[k]);
      const int j = std::min(bins_per_dim - 1, static_cast<int>(u * bins_per_dim));
      idx = idx * bins_per_dim + j;
    }
    bin_of[p] = idx;
  }

  MartingaleResidual out;
  out.bins.resize(nbins);
  std::vector<double> sum(nbins, 0.0), dev(nbins, 0.0);
  for (std::size_t p = 0; p < e.n; ++p) {
    out.bins[bin_of[p]].count++;
    sum[bin_of[p]] += dm[p];
  }
  for (std::size_t b = 0; b < nbins; ++b)
    if (out.bins[b].count) out.bins[b].estimate = sum[b] / static_cast<double>(out.bins[b].count);
  for (std::size_t p = 0; p < e.n; ++p) {
    const double dv = dm[p] - out.bins[bin_of[p]].estimate;
    dev[bin_of[p]] += dv * dv;
  }
  for (std::size_t b = 0; b < nbins; ++b) {
    BinResult& br = out.bins[b];
    if (!active.empty()) {
      const int k = active[0];
      const std::size_t j = b / (nbins / bins_per_dim);
      const double w = (hi[k] - lo[k]) / bins_per_dim;
      br.lo = lo[k] + w * static_cast<double>(j);
      br.hi = br.lo + w;
    } else {
      br.lo = br.hi = e.n ? e.state(is, 0)[0] : 0.0;
    }
    if (br.count < min_count) {
      if (br.count > 0) out.flagged++;
      continue;
    }
    br.scored = true;
    const double n = static_cast<double>(br.count);
    br.se = std::sqrt(dev[b] / (n - 1.0) / n);
    const double z = z_score(br.estimate, br.se);
    if (std::fabs(br.estimate) > out.max_abs) {
      out.max_abs = std::fabs(br.estimate);
      out.se_at_max = br.se;
    }
    out.max_z = std::max(out.max_z, z);
    if (z > 3.0) out.pass = false;
  }
  return out;
}

std::pair<double, double> fpe_guards(const std::vector<EnsembleLaw>& marginals,
                                     const GeneratorContext& ctx,
                                     const std::vector<double>& radii) {
  // Heuristic rendering of the two integrability conditions: time-Riemann sums
  // of ensemble averages, on a subsample of at most 20 times x 2000 particles.
  const CoefficientSet& c = ctx.coeffs();
  const LevyMeasure& nu = ctx.driver().nu;
  const double l = ctx.driver().trunc.l;
  const int d = c.dim, m = c.noise_dim;
  const bool jumps = has_jumps(nu);
  const std::size_t K = marginals.size();
  const std::size_t tstride = std::max<std::size_t>(1, K / 20);
  double g1 = 0.0, g2 = 0.0;
  Vec b(d), s(d * m), a(d * d);
  for (double R : radii) {
    g1 = g2 = 0.0;
    for (std::size_t k = 0; k + 1 < K; k += tstride) {
      const EnsembleLaw& law = marginals[k];
      const double dt = marginals[std::min(K - 1, k + tstride)].time - law.time;
      const std::size_t n = law.size();
      const std::size_t pstride = std::max<std::size_t>(1, n / 2000);
      double acc1 = 0.0, acc2 = 0.0;
      std::size_t used = 0;
      for (std::size_t p = 0; p < n; p += pstride, ++used) {
        const double* x = law.point(p);
        const double r = std::sqrt(norm2(x, d));
        const double f = c.f(law.time, x);
        const double cut = f == 0.0 ? kInfinity : l / std::fabs(f);
        if (r <= R) {
          c.drift(law.time, x, b.data());
          ctx.diffusion_matrix(law.time, x, a.data());
          double v = std::sqrt(norm2(b.data(), d)) + std::sqrt(norm2(a.data(), d * d));
          if (jumps && f != 0.0) v += f * f * nu.moment(2, Annulus::ball(cut));
          acc1 += v;
          if (jumps && f != 0.0) acc2 += nu.mass(Annulus::outside(cut));
        }
        if (jumps && f != 0.0) acc2 += nu.mass(Annulus::outside(std::max(l, r - R) / std::fabs(f)));
      }
      g1 += dt * acc1 / static_cast<double>(used);
      g2 += dt * acc2 / static_cast<double>(used);
    }
    if (!std::isfinite(g1))
      throw HypothesisError("local integrability guard (drift, diffusion, small jumps) diverges "
                            "for R = " + std::to_string(R));
    if (!std::isfinite(g2))
      throw HypothesisError("big-jump integrability guard diverges for R = " + std::to_string(R));
  }
  return {g1, g2};
}

FpeResidual fpe_weak_residual(const std::vector<EnsembleLaw>& marginals,
                              const GeneratorContext& ctx, const TestFunction& phi,
                              const FpeOptions& opts) {
  if (marginals.empty()) throw ConfigError("fpe_weak_residual: no marginals");
  fpe_guards(marginals, ctx, opts.guard_radii);
  const std::size_t K = marginals.size();
  FpeResidual out;
  out.discretization_budget = opts.discretization_budget;
  out.paired = true;
  const std::size_t n0 = marginals[0].size();
  for (const auto& law : marginals)
    if (law.size() != n0 || !law.weights.empty()) out.paired = false;

  auto push_row = [&](double t, double res, double se) {
    ResidualRow row{t, phi.id, res, se, 3.0 * se + opts.discretization_budget, true};
    row.pass = std::fabs(res) <= row.budget;
    if (!row.pass) out.pass = false;
    if (std::fabs(res) >= out.sup_abs) {
      out.sup_abs = std::fabs(res);
      out.mc_se_at_sup = se;
    }
    out.sup_z = std::max(out.sup_z, z_score(res, se));
    out.rows.push_back(row);
  };

  auto eval_all = [&](const EnsembleLaw& law, std::vector<double>& fv, std::vector<double>* lv) {
    const std::size_t n = law.size();
    fv.resize(n);
    if (lv) lv->resize(n);
    parallel_for(n, 2048, [&](std::size_t b, std::size_t e) {
      for (std::size_t p = b; p < e; ++p) {
        fv[p] = phi.value(law.point(p));
        if (lv) (*lv)[p] = ctx.eval(phi, law.time, law.point(p)).value;
      }
    });
  };

  if (out.paired) {
    const double n = static_cast<double>(n0);
    std::vector<double> phi0, cur, lcur, run(n0, 0.0), r(n0), dev(n0);
    eval_all(marginals[0], phi0, nullptr);
    for (std::size_t k = 0; k < K; ++k) {
      eval_all(marginals[k], cur, k + 1 < K ? &lcur : nullptr);
      for (std::size_t p = 0; p < n0; ++p) r[p] = (cur[p] - phi0[p]) - run[p];
      const double mean = kernels::sum(r.data(), n0) / n;
      for (std::size_t p = 0; p < n0; ++p) dev[p] = r[p] - mean;
      const double ss = kernels::dot(dev.data(), dev.data(), n0);
      const double se = n0 > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
      push_row(marginals[k].time, k == 0 ? 0.0 : mean, k == 0 ? 0.0 : se);
      if (k + 1 < K) kernels::axpy(run.data(), marginals[k + 1].time - marginals[k].time,
                                   lcur.data(), n0);
    }
    return out;
  }

  // Independent particle sets: combine the per-time variances.
  auto moments = [](const EnsembleLaw& law, const std::vector<double>& v, double& mean,
                    double& var_of_mean) {
    const std::size_t n = v.size();
    if (law.weights.empty()) {
      mean = kernels::sum(v.data(), n) / static_cast<double>(n);
      double ss = 0.0;
      for (double e : v) ss += (e - mean) * (e - mean);
      var_of_mean = n > 1 ? ss / (n - 1.0) / static_cast<double>(n) : 0.0;
      return;
    }
    const double wsum = kernels::sum(law.weights.data(), n);
    mean = kernels::dot(law.weights.data(), v.data(), n) / wsum;
    double ss = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      const double w = law.weights[p] / wsum;
      ss += w * w * (v[p] - mean) * (v[p] - mean);
    }
    var_of_mean = ss;
  };
  std::vector<double> fv, lv;
  eval_all(marginals[0], fv, nullptr);
  double m0, v0;
  moments(marginals[0], fv, m0, v0);
  double integral = 0.0, integral_var = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    eval_all(marginals[k], fv, k + 1 < K ? &lv : nullptr);
    double mk, vk;
    moments(marginals[k], fv, mk, vk);
    if (k == 0) {
      push_row(marginals[0].time, 0.0, 0.0);
    } else {
      push_row(marginals[k].time, (mk - m0) - integral, std::sqrt(vk + v0 + integral_var));
    }
    if (k + 1 < K) {
      double ml, vl;
      moments(marginals[k], lv, ml, vl);
      const double dt = marginals[k + 1].time - marginals[k].time;
      integral += ml * dt;
      integral_var += vl * dt * dt;
    }
  }
  return out;
}

std::vector<EnsembleLaw> all_marginals(const Ensemble& e) {
  std::vector<EnsembleLaw> out(e.grid.steps + 1);
  const std::size_t slice = e.n * e.dim;
  for (std::size_t i = 0; i <= e.grid.steps; ++i) {
    out[i].time = e.grid.time(i);
    out[i].dim = e.dim;
    out[i].points.assign(e.values.begin() + static_cast<std::ptrdiff_t>(i * slice),
                         e.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * slice));
  }
  return out;
}

SuperpositionReport superposition_crosscheck(const Ensemble& e, const GeneratorContext& ctx,
                                             const std::vector<TestFunction>& dictionary,
                                             const SuperpositionOptions& opts) {
  SuperpositionReport rep;
  rep.hypotheses = validate_hypotheses(ctx, ProbeGrid::standard(ctx.coeffs().dim, e.grid.T));
  if (!rep.hypotheses.ok()) {
    const HypothesisEntry& bad = rep.hypotheses.h1.violated   ? rep.hypotheses.h1
                                 : rep.hypotheses.hs.violated ? rep.hypotheses.hs
                                                              : rep.hypotheses.hl;
    throw HypothesisError("superposition check needs a valid context: " + bad.name + " fails (" +
                          bad.detail + ")");
  }
  const auto marginals = all_marginals(e);
  const std::size_t K = e.grid.steps;
  const std::size_t C = std::max<std::size_t>(1, std::min(opts.checkpoints, K));
  FpeOptions fo;
  fo.discretization_budget = opts.discretization_budget;
  for (const TestFunction& phi : dictionary) {
    const FpeResidual fr = fpe_weak_residual(marginals, ctx, phi, fo);
    double sup = 0.0, supz = 0.0;
    for (std::size_t c = 1; c <= C; ++c) {
      const std::size_t k = (c * K) / C;
      const ResidualRow& row = fr.rows[k];
      rep.rows.push_back(row);
      sup = std::max(sup, std::fabs(row.residual));
      supz = std::max(supz, z_score(row.residual, row.mc_se));
      if (!row.pass) rep.pass = false;
    }
    rep.phi_ids.push_back(phi.id);
    rep.sup_abs.push_back(sup);
    rep.sup_z.push_back(supz);
  }
  return rep;
}

SuperpositionReport superposition_crosscheck(const GeneratorContext& ctx, const InitialLaw& mu0,
                                             const std::vector<TestFunction>& dictionary,
                                             const TimeGrid& grid, std::size_t n,
                                             std::uint64_t seed,
                                             const SuperpositionOptions& opts,
                                             EngineOptions engine) {
  const Ensemble e = simulate_ensemble(ctx.coeffs(), ctx.driver(), mu0, grid, n, seed, engine);
  return superposition_crosscheck(e, ctx, dictionary, opts);
}

}  // namespace levylab
