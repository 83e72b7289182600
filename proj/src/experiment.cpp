#include "levylab/experiment.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "levylab/convergence_lab.hpp"
#include "levylab/filter_lab.hpp"
#include "levylab/generator_lab.hpp"
#include "levylab/parallel.hpp"
#include "levylab/test_functions.hpp"

namespace levylab {

using nlohmann::json;
namespace fs = std::filesystem;

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string Table::to_csv() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
  os << '\n';
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
    os << '\n';
  }
  return os.str();
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  if (!j.is_object()) throw ConfigError("manifest must be a JSON object");
  m.kind = j.value("kind", "");
  m.config = j;
  m.config.erase("kind");
  m.config.erase("seed");
  if (j.contains("seed")) m.seed = j.at("seed").get<std::uint64_t>();
  return m;
}

json RunManifest::to_json() const {
  json j = config;
  j["kind"] = kind;
  if (seed) j["seed"] = *seed;
  return j;
}

RunManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("manifest '" + path + "' is not valid JSON: " + e.what());
  }
  return RunManifest::from_json(j);
}

namespace {

// Everything a manifest selects, built once.
struct Setup {
  CoefficientSet coeffs;
  Driver driver;
  InitialLaw mu0;
  TimeGrid grid;
  std::size_t N = 0;
};

Driver parse_driver(const json& c, int dim) {
  Driver d;
  d.nu = LevyMeasure::zero(dim);
  if (!c.contains("driver")) return d;
  const json& j = c.at("driver");
  if (j.contains("nu")) d.nu = LevyMeasure::from_json(j.at("nu"));
  d.nu.validate();
  if (d.nu.dim() != dim) throw ConfigError("driver.nu dimension differs from the coefficient dimension");
  if (j.contains("truncation")) d.trunc = TruncationConfig::from_json(j.at("truncation"));
  d.trunc.validate();
  return d;
}

template <class F>
void collect(std::vector<std::string>& errs, const std::string& where, F&& f) {
  try {
    f();
  } catch (const json::exception& e) {
    errs.push_back(where + ": " + e.what());
  } catch (const std::exception& e) {
    errs.push_back(where + ": " + e.what());
  }
}

std::vector<int> parse_schedule(const json& c) {
  const auto s = c.at("schedule").get<std::vector<int>>();
  if (s.empty()) throw ConfigError("schedule must not be empty");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] < 1) throw ConfigError("schedule entries must be >= 1");
    if (i && s[i] <= s[i - 1]) throw ConfigError("schedule must be strictly increasing");
  }
  return s;
}

Setup build_setup(const RunManifest& m) {
  const json& c = m.config;
  Setup s;
  s.coeffs = make_coefficients(c.at("coefficients"));
  s.driver = parse_driver(c, s.coeffs.dim);
  s.mu0 = InitialLaw::from_json(c.at("initial"));
  if (s.mu0.dim() != s.coeffs.dim) throw ConfigError("initial law dimension differs from the coefficients");
  s.grid = TimeGrid::uniform(c.at("T").get<double>(), c.at("h").get<double>());
  s.N = c.at("N").get<std::size_t>();
  return s;
}

}  // namespace

std::vector<std::string> RunManifest::validation_errors() const {
  std::vector<std::string> errs;
  static const char* kinds[] = {"superposition", "limit", "filter_robustness", "diagnostics"};
  if (std::find(std::begin(kinds), std::end(kinds), kind) == std::end(kinds))
    errs.push_back("kind: must be one of superposition, limit, filter_robustness, diagnostics");
  const json& c = config;
  int dim = 1;
  CoefficientSet coeffs;
  bool have_coeffs = false;
  collect(errs, "coefficients", [&] {
    coeffs = make_coefficients(c.at("coefficients"));
    dim = coeffs.dim;
    have_coeffs = true;
  });
  Driver driver;
  collect(errs, "driver", [&] { driver = parse_driver(c, dim); });
  collect(errs, "initial", [&] {
    const InitialLaw mu0 = InitialLaw::from_json(c.at("initial"));
    if (mu0.dim() != dim) throw ConfigError("dimension differs from the coefficients");
  });
  double T = 1.0;
  collect(errs, "T/h", [&] {
    T = c.at("T").get<double>();
    TimeGrid::uniform(T, c.at("h").get<double>());
  });
  collect(errs, "N", [&] {
    if (c.at("N").get<long long>() < 1) throw ConfigError("N must be >= 1");
  });
  if (c.contains("assumptions") && !c.at("assumptions").is_array())
    errs.push_back("assumptions: must be an array of strings");

  if (kind == "limit" || kind == "filter_robustness") {
    collect(errs, "schedule", [&] { parse_schedule(c); });
    collect(errs, "perturbation", [&] {
      const Perturbation p = Perturbation::from_json(c.value("perturbation", json::object()));
      if (!have_coeffs) return;
      const CoefficientFamily fam = make_family(c.at("coefficients"), p);
      if (kind == "limit") {
        const double G = fam.gamma_sup();
        if (G > 0.0 && driver.trunc.l > 1.0 / (std::sqrt(2.0) * G))
          throw ConfigError("truncation level l exceeds 1/(sqrt(2) Gamma) = " +
                            format_real(1.0 / (std::sqrt(2.0) * G)));
      }
    });
  }
  if (kind == "limit") {
    collect(errs, "distance", [&] {
      const std::string d = c.value("distance", "marginal_sup");
      if (d != "marginal_sup" && d != "wasserstein1_marginal")
        throw ConfigError("distance must be marginal_sup or wasserstein1_marginal");
      if (d == "wasserstein1_marginal" && dim != 1) throw ConfigError("wasserstein1_marginal needs dim 1");
    });
  }
  if (kind == "filter_robustness") {
    collect(errs, "observation", [&] {
      make_observation_model(c.at("observation"), dim).validate(T);
    });
    collect(errs, "replicas", [&] {
      if (c.value("replicas", 8) < 1) throw ConfigError("replicas must be >= 1");
    });
  }
  if (kind == "diagnostics") {
    collect(errs, "K_grid/theta_grid", [&] {
      for (double k : c.value("K_grid", std::vector<double>{1.0}))
        if (!(k > 0.0)) throw ConfigError("K_grid entries must be > 0");
      for (double th : c.value("theta_grid", std::vector<double>{0.1}))
        if (!(th > 0.0 && th <= T)) throw ConfigError("theta_grid entries must lie in (0, T]");
    });
  }
  return errs;
}

void RunManifest::validate() const {
  const auto errs = validation_errors();
  if (errs.empty()) return;
  std::string msg = "manifest rejected:";
  for (const auto& e : errs) msg += "\n  - " + e;
  throw ConfigError(msg);
}

namespace {

json hypotheses_json(const HypothesisReport& r) {
  json a = json::array();
  for (const HypothesisEntry* e : {&r.h1, &r.hs, &r.hl})
    a.push_back({{"name", e->name},
                 {"constant", e->constant},
                 {"violated", e->violated},
                 {"witness_t", e->witness_t},
                 {"witness_x", e->witness_x},
                 {"detail", e->detail}});
  return a;
}

std::vector<std::string> manifest_assumptions(const RunManifest& m) {
  return m.config.value("assumptions", std::vector<std::string>{});
}

void run_superposition(const RunManifest& m, std::uint64_t seed, Bundle& b) {
  const json& c = m.config;
  const Setup s = build_setup(m);
  const GeneratorContext ctx(s.coeffs, s.driver);
  const auto dict = standard_dictionary(s.coeffs.dim, c.value("dictionary_scale", 1.0));
  SuperpositionOptions opts;
  opts.checkpoints = c.value("checkpoints", std::size_t{10});
  opts.discretization_budget = c.value("discretization_budget", 0.0);
  const Ensemble e =
      simulate_ensemble(s.coeffs, s.driver, s.mu0, s.grid, s.N, derive_seed(seed, "superposition"));
  const SuperpositionReport rep = superposition_crosscheck(e, ctx, dict, opts);

  Table t{"fpe_residuals", {"t", "phi_id", "residual", "mc_se", "budget", "pass"}, {}};
  for (const auto& r : rep.rows)
    t.rows.push_back({format_real(r.t), r.phi_id, format_real(r.residual), format_real(r.mc_se),
                      format_real(r.budget), r.pass ? "1" : "0"});
  b.tables.push_back(t);
  bool pass = rep.pass;
  json summary = {{"kind", m.kind}, {"hypotheses", hypotheses_json(rep.hypotheses)}};
  json per_phi = json::array();
  for (std::size_t i = 0; i < rep.phi_ids.size(); ++i)
    per_phi.push_back({{"phi_id", rep.phi_ids[i]}, {"sup_abs", rep.sup_abs[i]}, {"sup_z", rep.sup_z[i]}});
  summary["fpe"] = {{"pass", rep.pass}, {"per_phi", per_phi}};

  if (c.value("martingale", true)) {
    Table mt{"martingale_residuals", {"phi_id", "bin_lo", "bin_hi", "count", "estimate", "se", "scored"}, {}};
    bool mpass = true;
    double max_z = 0.0;
    for (const auto& phi : dict) {
      const MartingaleResidual mr = martingale_residual(e, ctx, phi, 0.0, s.grid.T);
      for (const auto& bin : mr.bins)
        mt.rows.push_back({phi.id, format_real(bin.lo), format_real(bin.hi), std::to_string(bin.count),
                           format_real(bin.estimate), format_real(bin.se), bin.scored ? "1" : "0"});
      mpass = mpass && mr.pass;
      max_z = std::max(max_z, mr.max_z);
    }
    b.tables.push_back(mt);
    summary["martingale"] = {{"pass", mpass}, {"max_z", max_z}};
    pass = pass && mpass;
  }
  summary["assumptions"] = manifest_assumptions(m);
  summary["pass"] = pass;
  b.summary = summary;
  b.pass = pass;
}

void run_limit(const RunManifest& m, std::uint64_t seed, Bundle& b) {
  const json& c = m.config;
  const Setup s = build_setup(m);
  const CoefficientFamily fam =
      make_family(c.at("coefficients"), Perturbation::from_json(c.value("perturbation", json::object())));
  EmpiricalDistanceConfig cfg = EmpiricalDistanceConfig::standard(s.coeffs.dim);
  if (c.value("distance", "marginal_sup") == "wasserstein1_marginal")
    cfg.mode = EmpiricalDistanceConfig::Mode::wasserstein1_marginal;
  LimitOptions opts;
  opts.checkpoints = c.value("checkpoints", std::size_t{10});
  const LimitReport rep = limit_experiment(fam, s.driver, s.mu0, parse_schedule(c), s.grid, s.N,
                                           derive_seed(seed, "limit"), cfg, opts);
  Table t{"distances", {"n", "distance", "se", "time_at_max", "phi_at_max", "density_sup", "lyapunov"}, {}};
  for (const auto& r : rep.rows)
    t.rows.push_back({std::to_string(r.n), format_real(r.distance), format_real(r.se),
                      format_real(r.time_at_max), r.phi_at_max, format_real(r.density_sup),
                      format_real(r.lyapunov)});
  b.tables.push_back(t);
  std::vector<std::string> assumptions = rep.assumptions;
  for (auto& a : manifest_assumptions(m)) assumptions.push_back(a);
  b.summary = {{"kind", m.kind},
               {"monotone", rep.monotone},
               {"ratio_ok", rep.ratio_ok},
               {"gamma_sup", rep.gamma_sup},
               {"l_bound", rep.l_bound},
               {"limit_density_sup", rep.limit_density_sup},
               {"assumptions", assumptions},
               {"pass", rep.pass}};
  b.pass = rep.pass;
}

void run_filter(const RunManifest& m, std::uint64_t seed, Bundle& b) {
  const json& c = m.config;
  const Setup s = build_setup(m);
  const CoefficientFamily fam =
      make_family(c.at("coefficients"), Perturbation::from_json(c.value("perturbation", json::object())));
  const ObservationModel model = make_observation_model(c.at("observation"), s.coeffs.dim);
  const EmpiricalDistanceConfig dict = EmpiricalDistanceConfig::standard(s.coeffs.dim);
  RobustnessOptions opts;
  opts.replicas = c.value("replicas", std::size_t{8});
  opts.checkpoints = c.value("checkpoints", std::size_t{10});
  if (c.contains("resampling")) {
    opts.filter.resampling.enabled = c.at("resampling").value("enabled", false);
    opts.filter.resampling.threshold = c.at("resampling").value("threshold", 0.5);
  }
  const RobustnessReport rep = robustness_experiment(fam, s.driver, s.mu0, model, parse_schedule(c), s.grid,
                                                     s.N, derive_seed(seed, "robustness"), dict, opts);
  Table t{"robustness", {"n", "D", "se", "h_gap", "lambda_gap"}, {}};
  for (const auto& r : rep.rows)
    t.rows.push_back({std::to_string(r.n), format_real(r.D), format_real(r.se), format_real(r.h_gap),
                      format_real(r.lambda_gap)});
  b.tables.push_back(t);

  // One persisted observation and the limit filter run on it.
  const std::uint64_t trace_seed = derive_seed(seed, "trace");
  const Ensemble truth = simulate_ensemble(fam.limit, s.driver, s.mu0, s.grid, 1, trace_seed);
  ObservationRecord obs = simulate_observation(truth.path(0), model, s.grid, derive_seed(trace_seed, "obs"));
  obs.truth_link = "trace truth particle 0";
  FilterOptions fo = opts.filter;
  fo.record_every = std::max<std::size_t>(1, s.grid.steps / opts.checkpoints);
  const auto states = filter_run(model, fam.limit, s.driver, s.mu0, s.grid, &obs, s.N,
                                 derive_seed(trace_seed, "filter"), fo);
  Table tr{"filter_trace", {"t", "phi_id", "pi", "rho1", "ess"}, {}};
  for (const auto& st : states)
    for (const auto& f : dict.dictionary)
      tr.rows.push_back({format_real(st.t), f.id, format_real(filter_mean(st, f.f)),
                         format_real(st.normalizer()), format_real(st.ess)});
  b.tables.push_back(tr);
  Table ot{"observation", {"json"}, {{obs.to_json().dump()}}};
  b.tables.push_back(ot);

  std::vector<std::string> assumptions = rep.assumptions;
  for (auto& a : manifest_assumptions(m)) assumptions.push_back(a);
  b.summary = {{"kind", m.kind},
               {"monotone", rep.monotone},
               {"ratio_ok", rep.ratio_ok},
               {"checkpoints", rep.checkpoints},
               {"assumptions", assumptions},
               {"pass", rep.pass}};
  b.pass = rep.pass;
}

void run_diagnostics(const RunManifest& m, std::uint64_t seed, Bundle& b) {
  const json& c = m.config;
  const Setup s = build_setup(m);
  const GeneratorContext ctx(s.coeffs, s.driver);
  const HypothesisReport hyp = validate_hypotheses(ctx, ProbeGrid::standard(s.coeffs.dim, s.grid.T));
  Table ht{"hypotheses", {"name", "constant", "violated", "witness_t", "detail"}, {}};
  for (const HypothesisEntry* e : {&hyp.h1, &hyp.hs, &hyp.hl})
    ht.rows.push_back({e->name, format_real(e->constant), e->violated ? "1" : "0",
                       format_real(e->witness_t), "\"" + e->detail + "\""});
  b.tables.push_back(ht);

  const Perturbation p = Perturbation::from_json(c.value("perturbation", json::object()));
  const std::vector<int> schedule = c.contains("schedule") ? parse_schedule(c) : std::vector<int>{};
  const CoefficientFamily fam = make_family(c.at("coefficients"), p);
  const FamilyEnsembles fe = simulate_coupled_family(fam, s.driver, s.mu0, schedule, s.grid, s.N,
                                                     derive_seed(seed, "diagnostics"));
  const PsiConstruction psi = construct_psi(marginal_law(fe.limit, 0.0));
  std::vector<const Ensemble*> members{&fe.limit};
  for (const auto& e : fe.members) members.push_back(&e);
  const auto K = c.value("K_grid", std::vector<double>{1.0, 2.0, 4.0, 8.0});
  const auto theta = c.value("theta_grid", std::vector<double>{0.01, 0.05, 0.1});
  const TightnessReport tr = tightness_diagnostics(members, psi.psi, K, theta, c.value("N_threshold", 0.5));
  Table ts{"tightness_sup", {"K", "prob"}, {}};
  for (std::size_t i = 0; i < K.size(); ++i) ts.rows.push_back({format_real(K[i]), format_real(tr.prob_sup_exceeds[i])});
  Table ti{"tightness_increment", {"theta", "prob"}, {}};
  for (std::size_t i = 0; i < theta.size(); ++i)
    ti.rows.push_back({format_real(theta[i]), format_real(tr.prob_increment[i])});
  Table tl{"lyapunov", {"member", "value"}, {}};
  for (std::size_t i = 0; i < tr.lyapunov.size(); ++i)
    tl.rows.push_back({i == 0 ? std::string("limit") : std::to_string(schedule[i - 1]), format_real(tr.lyapunov[i])});
  b.tables.push_back(ts);
  b.tables.push_back(ti);
  b.tables.push_back(tl);
  const bool pass = hyp.ok() && tr.decays_iii && tr.decays_iv;
  b.summary = {{"kind", m.kind},
               {"hypotheses", hypotheses_json(hyp)},
               {"psi", psi.psi.to_json()},
               {"psi_weighted_sum", psi.weighted_sum},
               {"psi_halving_engaged", psi.halving_engaged},
               {"decays_sup", tr.decays_iii},
               {"decays_increment", tr.decays_iv},
               {"assumptions", manifest_assumptions(m)},
               {"pass", pass}};
  b.pass = pass;
}

}  // namespace

Bundle run_manifest(const RunManifest& m, std::uint64_t seed, int workers) {
  m.validate();
  const int saved = default_workers();
  set_default_workers(std::max(1, workers));
  Bundle b;
  b.manifest = m;
  b.seed = seed;
  try {
    if (m.kind == "superposition") run_superposition(m, seed, b);
    else if (m.kind == "limit") run_limit(m, seed, b);
    else if (m.kind == "filter_robustness") run_filter(m, seed, b);
    else run_diagnostics(m, seed, b);
  } catch (...) {
    set_default_workers(saved);
    throw;
  }
  set_default_workers(saved);
  b.summary["seed"] = seed;
  return b;
}

namespace {

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  out << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + p.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

void write_bundle(const Bundle& b, const std::string& dir, int workers) {
  const fs::path root(dir);
  fs::create_directories(root / "tables");
  json manifest = {{"manifest", b.manifest.to_json()}, {"seed", b.seed}};
  write_file(root / "manifest.json", manifest.dump(2) + "\n");
  for (const Table& t : b.tables) write_file(root / "tables" / (t.name + ".csv"), t.to_csv());
  write_file(root / "summary.json", b.summary.dump(2) + "\n");
  json info = {{"workers", workers}, {"hardware_threads", std::thread::hardware_concurrency()}};
  write_file(root / "run_info.json", info.dump(2) + "\n");
}

ReplayReport replay_bundle(const std::string& dir, int workers) {
  const fs::path root(dir);
  if (!fs::exists(root / "manifest.json")) throw ConfigError("bundle '" + dir + "' has no manifest.json");
  const json j = json::parse(read_file(root / "manifest.json"));
  if (!j.contains("manifest") || !j.contains("seed"))
    throw ConfigError("bundle manifest.json must hold 'manifest' and 'seed'");
  const RunManifest m = RunManifest::from_json(j.at("manifest"));
  const Bundle b = run_manifest(m, j.at("seed").get<std::uint64_t>(), workers);
  ReplayReport rep;
  rep.pass = b.pass;
  std::vector<std::string> seen;
  for (const Table& t : b.tables) {
    const fs::path p = root / "tables" / (t.name + ".csv");
    seen.push_back(t.name + ".csv");
    if (!fs::exists(p)) {
      rep.diffs.push_back("tables/" + t.name + ".csv missing from the bundle");
      continue;
    }
    const std::string old = read_file(p), now = t.to_csv();
    if (old == now) continue;
    // Report the first differing line.
    std::istringstream a(old), c(now);
    std::string la, lc;
    std::size_t line = 0;
    while (true) {
      ++line;
      const bool ga = static_cast<bool>(std::getline(a, la));
      const bool gc = static_cast<bool>(std::getline(c, lc));
      if (!ga && !gc) break;
      if (la != lc || ga != gc) {
        rep.diffs.push_back("tables/" + t.name + ".csv line " + std::to_string(line) + ": '" + la +
                            "' vs '" + lc + "'");
        break;
      }
    }
  }
  if (fs::exists(root / "tables"))
    for (const auto& entry : fs::directory_iterator(root / "tables"))
      if (std::find(seen.begin(), seen.end(), entry.path().filename().string()) == seen.end())
        rep.diffs.push_back("tables/" + entry.path().filename().string() + " not produced by the re-run");
  if (!fs::exists(root / "summary.json") || read_file(root / "summary.json") != b.summary.dump(2) + "\n")
    rep.diffs.push_back("summary.json differs");
  rep.identical = rep.diffs.empty();
  return rep;
}

}  // namespace levylab
