// Acceptance gate: one PASS/FAIL line per criterion.  Seeds are fixed; every
// statistical threshold is the one stated for the criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "levylab/experiment.hpp"
#include "levylab/filter_lab.hpp"
#include "levylab/generator_lab.hpp"
#include "../oracles/generator_oracle.hpp"
#include "../oracles/kalman_oracle.hpp"
#include "../oracles/psi_oracle.hpp"

using namespace levylab;
using nlohmann::json;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Driver atoms_driver(int dim, std::vector<Atom> atoms, double l) {
  Driver d;
  d.nu = LevyMeasure::atomic(dim, std::move(atoms));
  d.trunc.l = l;
  return d;
}

const json kOU = {{"name", "ou"}, {"params", {{"theta", 1.0}, {"sigma", std::sqrt(2.0)}}}, {"gamma", 1.0}};
Driver ou_driver() { return atoms_driver(1, {{{0.8}, 0.5}, {{-0.6}, 0.5}, {{0.3}, 1.0}}, 0.5); }

Verdict c1_generator() {
  struct Case {
    json spec;
    Driver driver;
  };
  std::vector<Case> cases;
  cases.push_back({kOU, ou_driver()});
  cases.push_back({{{"name", "tanh_drift"}, {"params", {{"k", 2.0}, {"sigma", 0.5}}}, {"gamma", 0.8}, {"g", "bounded"}},
                   atoms_driver(1, {{{1.5}, 0.2}, {{-0.1}, 3.0}}, 0.7)});
  cases.push_back({{{"name", "rotation_degenerate"}, {"params", {{"omega", 1.0}, {"kappa", 0.3}}}, {"gamma", 1.0},
                    {"g", "linear_growth"}},
                   atoms_driver(2, {{{0.3, -0.2}, 1.0}, {{-1.0, 0.5}, 0.4}}, 1.0)});
  RngStream rng(101, 0, Purpose::generic);
  double worst = 0.0;
  for (int probe = 0; probe < 50; ++probe) {
    const Case& c = cases[probe % cases.size()];
    const CoefficientSet coeffs = make_coefficients(c.spec);
    const GeneratorContext ctx(coeffs, c.driver);
    const auto dict = standard_dictionary(coeffs.dim, 1.0);
    Vec x(coeffs.dim);
    for (auto& v : x) v = -2.0 + 4.0 * rng.uniform();
    const double t = rng.uniform();
    const auto& phi = dict[rng.below(dict.size())];
    const double got = ctx.eval(phi, t, x.data()).value;
    const auto ref = oracle::brute_force_generator(coeffs, c.driver.nu.atoms(), c.driver.trunc.l, phi, t, x);
    worst = std::max(worst, std::fabs(got - ref.value) / std::max(1.0, ref.scale));
  }
  return {worst <= 1e-12, fmt("max relative error %.3g over 50 probes (tol 1e-12)", worst)};
}

struct SuperpositionRun {
  Ensemble e;
  double sup = 0.0, se = 0.0, sup_z = 0.0;
};

SuperpositionRun superposition_at(double h) {
  const CoefficientSet coeffs = make_coefficients(kOU);
  const GeneratorContext ctx(coeffs, ou_driver());
  SuperpositionRun r;
  r.e = simulate_ensemble(coeffs, ou_driver(), InitialLaw::normal({0.0}, {1.0}), TimeGrid::uniform(1.0, h), 100000, 2026);
  const auto rep = superposition_crosscheck(r.e, ctx, standard_dictionary(1, 1.0), {10, 0.0});
  for (const auto& row : rep.rows) {
    if (std::fabs(row.residual) > r.sup) {
      r.sup = std::fabs(row.residual);
      r.se = row.mc_se;
    }
    if (row.mc_se > 0.0) r.sup_z = std::max(r.sup_z, std::fabs(row.residual) / row.mc_se);
  }
  return r;
}

SuperpositionRun g_run_h;  // shared by criteria 2 and 3

Verdict c2_superposition() {
  g_run_h = superposition_at(0.01);
  const SuperpositionRun half = superposition_at(0.005);
  const bool within = g_run_h.sup_z <= 3.0;
  const bool halves = half.sup <= 0.5 * g_run_h.sup + 3.0 * half.se;
  return {within && halves,
          fmt("h=0.01: sup|r| %.3g (max z %.2f); h=0.005: sup|r| %.3g, needs <= 0.5*sup + 3se = %.3g",
              g_run_h.sup, g_run_h.sup_z, half.sup, 0.5 * g_run_h.sup + 3.0 * half.se)};
}

Verdict c3_martingale() {
  const CoefficientSet coeffs = make_coefficients(kOU);
  const GeneratorContext ctx(coeffs, ou_driver());
  const auto dict = standard_dictionary(1, 1.0);
  double max_z = 0.0;
  for (const auto& phi : dict) max_z = std::max(max_z, martingale_residual(g_run_h.e, ctx, phi, 0.0, 1.0).max_z);

  CoefficientSet wrong = coeffs;
  wrong.affine.reset();
  const auto base = coeffs.drift;
  wrong.drift = [base](double t, const double* x, double* out) {
    base(t, x, out);
    out[0] += 1.0;
  };
  const auto bad = martingale_residual(g_run_h.e, GeneratorContext(wrong, ou_driver()), dict[1], 0.0, 1.0);
  return {max_z <= 3.0 && bad.max_z > 3.0,
          fmt("true drift: max z %.2f over 6 functions x bins (<= 3); corrupted drift: max z %.2f (> 3)", max_z,
              bad.max_z)};
}

int psi_violations(const PsiFunction& psi, int probes) {
  const double top = psi.knots().empty() ? 10.0 : 2.0 * psi.knots().back() + 10.0;
  int bad = 0;
  for (int i = 0; i < probes; ++i) {
    const double x = top * std::pow(static_cast<double>(i) / (probes - 1), 3.0);
    bad += !(psi.value(x) >= 0.0);
    bad += !(psi.d1(x) > 0.0 && psi.d1(x) <= 1.0);
    bad += !(psi.d2(x) >= -2.0 && psi.d2(x) <= 0.0);
  }
  bad += psi.value(0.0) != 0.0;
  return bad;
}

Verdict c4_psi() {
  std::vector<double> r, w;
  for (int j = 3; j <= 60; ++j) {
    r.push_back(2.0 * std::exp(static_cast<double>(j)));
    w.push_back(1.0 / (j * std::log(j) * std::log(j)));
  }
  const auto heavy = construct_psi_from_r(r, w);
  RngStream rng(4, 0, Purpose::generic);
  EnsembleLaw normal{0.0, 1, {}, {}};
  for (int i = 0; i < 20000; ++i) normal.points.push_back(rng.normal());
  const auto light = construct_psi(normal);
  const int bad = psi_violations(heavy.psi, 1000) + psi_violations(light.psi, 1000);

  const oracle::PsiPieces pc{heavy.psi.knots(), heavy.psi.slopes(), heavy.psi.widths()};
  double direct = 0.0, mass = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    direct += w[i] * pc.integral(r[i]);
    mass += w[i];
  }
  direct /= mass;
  const double rel = std::fabs(heavy.weighted_sum - direct) / direct;
  return {bad == 0 && heavy.halving_engaged && std::isfinite(heavy.weighted_sum) && rel <= 1e-9,
          fmt("%.0f constraint violations; heavy tail: halving engaged %.0f, weighted sum %.6g, relative error %.3g (tol 1e-9)",
              bad, heavy.halving_engaged ? 1.0 : 0.0, heavy.weighted_sum, rel)};
}

Verdict c5_gronwall() {
  GronwallPaths g;
  const std::size_t steps = 20000;
  g.n_paths = 1;
  for (std::size_t i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    g.times.push_back(t);
    g.xi.push_back(std::exp(t));
    g.eta.push_back(1.0);
    g.A.push_back(t);
    g.M.push_back(0.0);
  }
  bool eq_ok = true;
  double worst_side = 0.0;
  for (auto [p, q] : {std::pair{0.9, 0.5}, {0.5, 0.25}}) {
    const auto res = gronwall_check(g, p, q, steps);
    const double lhs = std::exp(1.0), rhs = std::pow(p / (p - q), 1.0 / q) * std::exp(1.0);
    worst_side = std::max({worst_side, std::fabs(res.lhs - lhs) / lhs, std::fabs(res.rhs - rhs) / rhs});
    eq_ok &= res.lhs <= res.rhs;
  }
  eq_ok &= worst_side <= 1e-10;
  int rejected = 0;
  RngStream pq(5, 0, Purpose::generic);
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const double p = 0.2 + 0.7 * pq.uniform();
    const double q = p * (0.1 + 0.8 * pq.uniform());
    const auto inst = random_gronwall_instance(1000 + s, 200, 40, 1.0);
    rejected += !gronwall_check(inst, p, q, 40).pass;
  }
  return {eq_ok && rejected == 0,
          fmt("equality case: lhs <= rhs %.0f, side error %.3g (tol 1e-10); %.0f of 1000 random instances exceed rhs + 3se",
              eq_ok ? 1.0 : 0.0, worst_side, rejected)};
}

const std::vector<int> kSchedule{1, 2, 4, 8, 16, 32};

Verdict c6_limit() {
  const json spec = {{"name", "ou"}, {"params", {{"theta", 1.0}, {"sigma", 1.0}}}, {"gamma", 1.0}};
  Perturbation p;
  p.drift_shift = 0.5;
  p.drift_sin = 0.5;
  p.sigma_scale = 0.5;
  p.gamma_shift = 0.5;
  const auto rep = limit_experiment(make_family(spec, p), atoms_driver(1, {{{0.8}, 0.5}, {{-0.6}, 0.5}}, 0.4),
                                    InitialLaw::normal({0.0}, {1.0}), kSchedule, TimeGrid::uniform(1.0, 0.01), 10000,
                                    606, EmpiricalDistanceConfig::standard(1));
  std::string d;
  for (const auto& r : rep.rows) d += fmt("%.3g ", r.distance);
  return {rep.monotone && rep.ratio_ok,
          "d(n) = " + d + fmt("ratio %.3g (<= 0.25), non-increasing within 2se: ", rep.rows.back().distance / rep.rows.front().distance) +
              (rep.monotone ? "yes" : "no")};
}

Verdict c7_kalman() {
  const double a = -1.0, c = 0.5, s = 1.0;
  const json mspec = {{"h", {{"name", "identity"}}},
                      {"lambda", {{"name", "constant"}, {"c", 0.5}}},
                      {"L_floor", 0.25},
                      {"nu2", {{"kind", "zero"}, {"dim", 1}}}};
  const auto model = make_observation_model(mspec, 1);
  const TimeGrid g = TimeGrid::uniform(1.0, 0.01);
  const auto coeffs = make_coefficients({{"name", "linear"}, {"params", {{"A", {{a}}}, {"c", {c}}, {"S", {{s}}}}}});
  const auto truth = simulate_path(coeffs, Driver{}, {0.5}, g, 707);
  const auto obs = simulate_observation(truth, model, g, 708);
  const auto k = oracle::discrete_kalman(a, c, s, 0.0, 1.0, g.h(), obs.cont_increments);
  const auto run = filter_run(model, coeffs, Driver{}, InitialLaw::normal({0.0}, {1.0}), g, &obs, 10000, 709);
  double max_z = 0.0;
  for (std::size_t i = 5; i <= g.steps; i += 5) {
    const FilterState& st = run[i];
    const auto w = st.weights();
    double m = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) m += w[j] * st.particles[j];
    double v = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) v += w[j] * (st.particles[j] - m) * (st.particles[j] - m);
    // Self-normalized importance sampling standard errors.
    double sm = 0.0, sv = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double e = st.particles[j] - k.mean[i];
      sm += w[j] * w[j] * e * e;
      sv += w[j] * w[j] * (e * e - k.var[i]) * (e * e - k.var[i]);
    }
    max_z = std::max({max_z, std::fabs(m - k.mean[i]) / std::sqrt(sm), std::fabs(v - k.var[i]) / std::sqrt(sv)});
  }
  return {max_z <= 3.0, fmt("max z over 20 checkpoints x (mean, variance) = %.2f (<= 3)", max_z)};
}

Verdict c8_likelihood() {
  RngStream rng(8, 0, Purpose::generic);
  double worst = 0.0, raw = 0.0;
  std::size_t events = 0;
  for (int i = 0; i < 100; ++i) {
    const double c = 0.05 + 0.9 * rng.uniform(), m = 0.1 + 5.0 * rng.uniform(), T = 0.2 + 3.0 * rng.uniform();
    const json spec = {{"h", {{"name", "zero"}}},
                       {"lambda", {{"name", "constant"}, {"c", c}}},
                       {"L_floor", 0.5 * c},
                       {"nu2", {{"kind", "atomic"}, {"dim", 1}, {"atoms", {{{"mark", 0.5}, {"mass", m}}}}}},
                       {"U0", {{"r_lo", -1.0}, {"r_hi", 1.0}}}};
    const auto model = make_observation_model(spec, 1);
    const TimeGrid g = TimeGrid::uniform(T, T / 50);
    const auto coeffs = make_coefficients({{"name", "ou"}});
    const auto x = simulate_path(coeffs, Driver{}, {0.0}, g, 800 + i);
    const auto obs = simulate_observation(x, model, g, 900 + i);
    const double k = static_cast<double>(obs.jump_events_U0.size());
    events += obs.jump_events_U0.size();
    const double exact = k * std::log(c) + (1.0 - c) * m * T;
    const double got = log_likelihood(x, obs, model);
    // k log c and (1 - c) m T can nearly cancel; errors are relative to the sum of their magnitudes.
    const double scale = std::fabs(k * std::log(c)) + (1.0 - c) * m * T;
    worst = std::max(worst, std::fabs(got - exact) / scale);
    raw = std::max(raw, std::fabs(got - exact) / std::fabs(exact));
  }
  return {worst <= 1e-12, fmt("max error %.3g relative to term magnitudes over 100 draws, %.0f events (tol 1e-12); "
                              "relative to |log Sigma| %.3g",
                              worst, static_cast<double>(events), raw)};
}

Verdict c9_robustness() {
  const json spec = {{"name", "ou"}, {"params", {{"theta", 1.0}, {"sigma", 1.0}}}, {"gamma", 0.5}};
  Perturbation p;
  p.drift_shift = 1.0;
  const json mspec = {
      {"h", {{"name", "tanh"}}},
      {"lambda", {{"name", "logistic_abs"}, {"scale", 0.9}}},
      {"L_floor", 0.4},
      {"nu2",
       {{"kind", "atomic"},
        {"dim", 1},
        {"atoms", {{{"mark", 0.5}, {"mass", 2.0}}, {{"mark", -0.5}, {"mass", 2.0}}, {{"mark", 2.0}, {"mass", 0.5}}}}}},
      {"U0", {{"r_lo", -1.0}, {"r_hi", 1.0}}}};
  const auto model = make_observation_model(mspec, 1);
  const auto rep = robustness_experiment(make_family(spec, p), atoms_driver(1, {{{0.8}, 0.5}, {{-0.6}, 0.5}}, 0.4),
                                         InitialLaw::normal({0.0}, {1.0}), model, kSchedule,
                                         TimeGrid::uniform(1.0, 0.01), 10000, 909,
                                         EmpiricalDistanceConfig::standard(1));
  std::string d;
  for (const auto& r : rep.rows) d += fmt("%.3g ", r.D);
  return {rep.monotone && rep.ratio_ok,
          "D(n) = " + d + fmt("ratio %.3g (<= 0.25), non-increasing within 2se: ", rep.rows.back().D / rep.rows.front().D) +
              (rep.monotone ? "yes" : "no")};
}

Verdict c10_replay() {
  const std::vector<json> manifests = {
      json::parse(R"({"kind": "superposition",
        "coefficients": {"name": "ou", "params": {"theta": 1.0, "sigma": 1.0}, "gamma": 1.0},
        "driver": {"nu": {"kind": "atomic", "dim": 1, "atoms": [{"mark": 0.8, "mass": 0.5}, {"mark": -0.6, "mass": 0.5}]},
                   "truncation": {"l": 0.5}},
        "initial": {"kind": "normal", "mean": 0.0, "sd": 1.0}, "T": 0.5, "h": 0.02, "N": 5000})"),
      json::parse(R"({"kind": "limit",
        "coefficients": {"name": "ou", "params": {"theta": 1.0, "sigma": 1.0}},
        "initial": {"kind": "normal", "mean": 0.0, "sd": 1.0}, "perturbation": {"drift_shift": 1.0},
        "schedule": [1, 2, 4], "T": 0.5, "h": 0.02, "N": 5000})"),
      json::parse(R"({"kind": "filter_robustness",
        "coefficients": {"name": "ou", "params": {"theta": 1.0, "sigma": 1.0}},
        "initial": {"kind": "normal", "mean": 0.0, "sd": 1.0}, "perturbation": {"drift_shift": 1.0},
        "schedule": [1, 2, 4], "T": 0.5, "h": 0.02, "N": 2000, "replicas": 2,
        "observation": {"h": {"name": "tanh"}, "lambda": {"name": "logistic_abs", "scale": 0.9}, "L_floor": 0.4,
                        "nu2": {"kind": "atomic", "dim": 1, "atoms": [{"mark": 0.5, "mass": 2.0}]},
                        "U0": {"r_lo": -1.0, "r_hi": 1.0}},
        "resampling": {"enabled": true, "threshold": 0.5}})"),
      json::parse(R"({"kind": "diagnostics",
        "coefficients": {"name": "ou", "params": {"theta": 1.0, "sigma": 1.0}},
        "initial": {"kind": "normal", "mean": 0.0, "sd": 1.0}, "perturbation": {"drift_shift": 1.0},
        "schedule": [1, 2], "T": 0.5, "h": 0.02, "N": 2000})")};
  const auto root = std::filesystem::temp_directory_path() / "levylab_acceptance_replay";
  std::filesystem::remove_all(root);
  int bad = 0, checked = 0;
  std::string first_diff;
  for (std::size_t i = 0; i < manifests.size(); ++i) {
    const RunManifest m = RunManifest::from_json(manifests[i]);
    const std::string dir = (root / m.kind).string();
    write_bundle(run_manifest(m, 1000 + i, 1), dir, 1);
    for (int w : {1, 4, 8}) {
      const ReplayReport r = replay_bundle(dir, w);
      ++checked;
      if (!r.identical) {
        ++bad;
        if (first_diff.empty() && !r.diffs.empty()) first_diff = m.kind + ": " + r.diffs.front();
      }
    }
  }
  std::filesystem::remove_all(root);
  return {bad == 0, fmt("%.0f of %.0f replays (4 kinds x workers 1, 4, 8) bit-identical", checked - bad, checked) +
                        (first_diff.empty() ? "" : "; " + first_diff)};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    double budget_s;  // 0: no runtime bound
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> all = {
      {1, 1.0, c1_generator},    {2, 300.0, c2_superposition}, {3, 300.0, c3_martingale},
      {4, 0.0, c4_psi},          {5, 0.0, c5_gronwall},        {6, 600.0, c6_limit},
      {7, 120.0, c7_kalman},     {8, 0.0, c8_likelihood},      {9, 900.0, c9_robustness},
      {10, 0.0, c10_replay}};
  int failed = 0;
  for (const auto& c : all) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0.0 && secs > c.budget_s) {
      v.pass = false;
      v.detail += fmt("; runtime %.1f s exceeds %.0f s", secs, c.budget_s);
    }
    std::printf("criterion %2d: %s  %s  [%.1f s]\n", c.id, v.pass ? "PASS" : "FAIL", v.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !v.pass;
  }
  return failed == 0 ? 0 : 1;
}
