#include "levylab/filter_lab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "levylab/kernels.hpp"
#include "levylab/parallel.hpp"

namespace levylab {

using nlohmann::json;

namespace {

// Complement of an annulus as up to two annuli.
std::vector<Annulus> complement(const Annulus& a) {
  std::vector<Annulus> out;
  if (a.r_lo >= 0.0) out.push_back(Annulus::ball(a.r_lo));
  if (std::isfinite(a.r_hi)) out.push_back(Annulus::outside(std::max(a.r_hi, a.r_lo)));
  return out;
}

void add_nodes(const LevyMeasure& nu, const Annulus& region, std::size_t samples,
               std::uint64_t seed, std::uint64_t stream, std::vector<Atom>& out) {
  if (region.empty()) return;
  if (nu.is_atomic()) {
    for (const Atom& a : nu.atoms())
      if (region.contains(std::sqrt(norm2(a.mark.data(), a.mark.size())))) out.push_back(a);
    return;
  }
  const double m = nu.mass(region);
  if (!std::isfinite(m))
    throw HypothesisError("observation measure nu2 has infinite mass on " + region.describe());
  if (m == 0.0 || samples == 0) return;
  RngStream rng(seed, stream, Purpose::quadrature);
  for (std::size_t i = 0; i < samples; ++i)
    out.push_back({nu.sample_mark(region, rng), m / static_cast<double>(samples)});
}

const Vec& probe_marks_fallback(int k) {
  static thread_local Vec v;
  v.assign(k, 0.5);
  return v;
}

}  // namespace

ObservationModel make_observation_model(const json& spec, int dim_x) {
  ObservationModel m;
  m.spec_ = spec;
  m.dim_x_ = dim_x;
  m.nu2_ = spec.contains("nu2") ? LevyMeasure::from_json(spec.at("nu2")) : LevyMeasure::zero(dim_x);
  m.nu2_.validate();
  const int k = m.dim_y_ = m.nu2_.dim();

  const json hs = spec.value("h", json{{"name", "zero"}});
  const std::string hname = hs.is_string() ? hs.get<std::string>() : hs.at("name").get<std::string>();
  if (hname == "zero") {
    m.h_zero_ = true;
    m.h_ = [k](const double*, double* out) { std::fill(out, out + k, 0.0); };
  } else if (hname == "identity") {
    if (k != dim_x) throw ConfigError("h = identity needs observation dim == signal dim");
    m.h_ = [k](const double* x, double* out) { std::copy(x, x + k, out); };
  } else if (hname == "tanh") {
    if (k != dim_x) throw ConfigError("h = tanh needs observation dim == signal dim");
    m.h_ = [k](const double* x, double* out) {
      for (int i = 0; i < k; ++i) out[i] = std::tanh(x[i]);
    };
  } else if (hname == "linear") {
    const auto H = hs.at("H").get<std::vector<std::vector<double>>>();
    if (static_cast<int>(H.size()) != k) throw ConfigError("h = linear: H must have dim_y rows");
    for (const auto& row : H)
      if (static_cast<int>(row.size()) != dim_x) throw ConfigError("h = linear: H must have dim_x columns");
    m.h_ = [H, k, dim_x](const double* x, double* out) {
      for (int i = 0; i < k; ++i) {
        double s = 0.0;
        for (int j = 0; j < dim_x; ++j) s += H[i][j] * x[j];
        out[i] = s;
      }
    };
  } else {
    throw ConfigError("unknown observation function h '" + hname + "'");
  }

  const json ls = spec.value("lambda", json{{"name", "constant"}, {"c", 0.5}});
  const std::string lname = ls.at("name").get<std::string>();
  if (lname == "constant") {
    const double c = ls.at("c").get<double>();
    if (!(c > 0.0 && c < 1.0)) throw ConfigError("lambda = constant needs 0 < c < 1");
    m.lambda_free_ = true;
    m.lambda_ = [c](const double*, const double*) { return c; };
  } else if (lname == "logistic_abs") {
    const double scale = ls.at("scale").get<double>();
    if (!(scale > 0.0 && scale <= 1.0)) throw ConfigError("lambda = logistic_abs needs 0 < scale <= 1");
    m.lambda_ = [scale, dim_x](const double* x, const double*) {
      return scale / (1.0 + std::exp(-std::sqrt(norm2(x, dim_x))));
    };
  } else {
    throw ConfigError("unknown thinning intensity lambda '" + lname + "'");
  }

  const double L = spec.value("L_floor", 0.0);
  m.iota_ = L;
  m.L_ = [L](const double*) { return L; };

  if (spec.contains("U0")) {
    const json& u = spec.at("U0");
    m.U0_ = {u.value("r_lo", -1.0), u.contains("r_hi") && !u.at("r_hi").is_null()
                                        ? u.at("r_hi").get<double>()
                                        : kInfinity};
  }
  const json q = spec.value("quadrature", json::object());
  const std::size_t samples = q.value("samples", std::size_t{4096});
  const std::uint64_t qseed = q.value("seed", std::uint64_t{0x13198A2E03707344ull});
  add_nodes(m.nu2_, m.U0_, samples, qseed, 0, m.nodes_U0_);
  m.nodes_all_ = m.nodes_U0_;
  std::uint64_t stream = 1;
  for (const Annulus& a : complement(m.U0_)) add_nodes(m.nu2_, a, samples, qseed, stream++, m.nodes_all_);
  return m;
}

double ObservationModel::compensator(const double* x) const {
  double s = 0.0;
  for (const Atom& a : nodes_U0_) s += a.mass * (1.0 - lambda_(x, a.mark.data()));
  return s;
}

void ObservationModel::validate(double T) const {
  for (const Annulus& a : complement(U0_)) {
    const double m = nu2_.mass(a);
    if (!std::isfinite(m))
      throw HypothesisError("nu2 must have finite mass outside U0; infinite on " + a.describe());
  }
  if (!std::isfinite(nu2_.mass(U0_)))
    throw HypothesisError("nu2 must have finite mass on U0 " + U0_.describe() +
                          " (small observation jumps are simulated exactly)");
  if (!std::isfinite(nu2_.moment(2, U0_)))
    throw HypothesisError("int_U0 |u|^2 nu2(du) is infinite");
  if (!(iota_ > 0.0)) throw HypothesisError("floor L must satisfy inf L = iota > 0");

  std::vector<const double*> marks;
  for (const Atom& a : nodes_all_) marks.push_back(a.mark.data());
  if (marks.empty()) marks.push_back(probe_marks_fallback(dim_y_).data());
  const ProbeGrid probes = ProbeGrid::standard(dim_x_, T);
  for (const Vec& x : probes.points) {
    for (const double* u : marks) {
      const double lam = lambda_(x.data(), u), L = L_(u);
      if (!(iota_ <= L && L < lam && lam < 1.0)) {
        char buf[200];
        std::snprintf(buf, sizeof buf,
                      "need 0 < iota <= L(u) < lambda(x,u) < 1; at |x| = %.6g, |u| = %.6g: "
                      "L = %.6g, lambda = %.6g",
                      std::sqrt(norm2(x.data(), dim_x_)), std::sqrt(norm2(u, dim_y_)), L, lam);
        throw HypothesisError(buf);
      }
    }
  }
  double floor_integral = 0.0;
  for (const Atom& a : nodes_U0_) {
    const double L = L_(a.mark.data());
    floor_integral += a.mass * (1.0 - L) * (1.0 - L) / L;
  }
  if (!std::isfinite(floor_integral))
    throw HypothesisError("int_U0 (1-L)^2/L nu2(du) is infinite");
}

ObservationNoise sample_observation_noise(const ObservationModel& model, const TimeGrid& grid,
                                          std::uint64_t seed) {
  ObservationNoise noise;
  noise.grid = grid;
  noise.dim_y = model.dim_y();
  const double sq = std::sqrt(grid.h());
  RngStream w(seed, 0, Purpose::obs_noise);
  noise.dW.resize(grid.steps * noise.dim_y);
  for (double& v : noise.dW) v = sq * w.normal();
  RngStream prop(seed, 0, Purpose::obs_proposals);
  noise.proposals = sample_jump_events(model.nu2(), Annulus::everything(), grid.T, prop);
  RngStream thin(seed, 0, Purpose::obs_thinning);
  noise.uniforms.resize(noise.proposals.size());
  for (double& u : noise.uniforms) u = thin.uniform();
  return noise;
}

std::size_t cell_of(const TimeGrid& grid, double t) {
  if (!(t >= 0.0 && t <= grid.T)) throw ConfigError("event time outside [0, T]");
  if (t == 0.0) return 0;
  auto c = static_cast<std::size_t>(std::ceil(t / grid.h()));
  c = std::clamp<std::size_t>(c, 1, grid.steps) - 1;
  while (c > 0 && !(grid.time(c) < t)) --c;
  while (c + 1 < grid.steps && grid.time(c + 1) < t) ++c;
  return c;
}

namespace {

// X at each base time, taken from the merged grid.
std::vector<double> base_states(const CadlagPath& path, const TimeGrid& grid) {
  if (path.times.empty() || path.times.front() != 0.0 || path.times.back() != grid.T)
    throw ConfigError("path and observation grid are not aligned (different horizons)");
  std::vector<double> out((grid.steps + 1) * path.dim);
  std::size_t k = 0;
  for (std::size_t i = 0; i <= grid.steps; ++i) {
    const double t = grid.time(i);
    while (k + 1 < path.size() && path.times[k + 1] <= t) ++k;
    if (path.times[k] != t && !path.is_jump[k])
      throw ConfigError("path and observation grid are not aligned (base time missing)");
    std::copy(path.at(k), path.at(k) + path.dim, out.begin() + static_cast<std::ptrdiff_t>(i * path.dim));
  }
  return out;
}

void check_lambda(double lam, const double* x, int dx, double t) {
  if (!(lam > 0.0 && lam < 1.0)) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "lambda = %.6g outside (0,1) at t = %.6g, |x| = %.6g", lam, t,
                  std::sqrt(norm2(x, dx)));
    throw HypothesisError(buf);
  }
}

}  // namespace

ObservationRecord simulate_observation(const CadlagPath& signal, const ObservationModel& model,
                                       const ObservationNoise& noise) {
  if (signal.dim != model.dim_x()) throw ConfigError("signal dimension does not match the model");
  const TimeGrid& grid = noise.grid;
  const std::vector<double> xs = base_states(signal, grid);
  const int k = model.dim_y(), d = signal.dim;
  const double dt = grid.h();
  ObservationRecord rec;
  rec.grid = grid;
  rec.dim_y = k;
  rec.cont_increments.resize(grid.steps * k);
  Vec hx(k);
  for (std::size_t c = 0; c < grid.steps; ++c) {
    model.h(xs.data() + c * d, hx.data());
    for (int i = 0; i < k; ++i)
      rec.cont_increments[c * k + i] = hx[i] * dt + noise.dW[c * k + i];
  }
  for (std::size_t j = 0; j < noise.proposals.size(); ++j) {
    const JumpEvent& e = noise.proposals[j];
    const double* x = xs.data() + cell_of(grid, e.time) * d;
    const double lam = model.lambda(x, e.mark.data());
    check_lambda(lam, x, d, e.time);
    if (!(noise.uniforms[j] < lam)) continue;
    if (model.U0().contains(std::sqrt(norm2(e.mark.data(), k))))
      rec.jump_events_U0.push_back(e);
    else
      rec.jump_events_big.push_back(e);
  }
  return rec;
}

ObservationRecord simulate_observation(const CadlagPath& signal, const ObservationModel& model,
                                       const TimeGrid& grid, std::uint64_t seed) {
  return simulate_observation(signal, model, sample_observation_noise(model, grid, seed));
}

json ObservationRecord::to_json() const {
  auto events = [](const std::vector<JumpEvent>& v) {
    json a = json::array();
    for (const auto& e : v) a.push_back({{"t", e.time}, {"u", e.mark}});
    return a;
  };
  return {{"T", grid.T},
          {"steps", grid.steps},
          {"dim_y", dim_y},
          {"increments", cont_increments},
          {"jumps_U0", events(jump_events_U0)},
          {"jumps_big", events(jump_events_big)},
          {"truth_link", truth_link}};
}

ObservationRecord ObservationRecord::from_json(const json& j) {
  ObservationRecord r;
  r.grid = {j.at("T").get<double>(), j.at("steps").get<std::size_t>()};
  r.dim_y = j.at("dim_y").get<int>();
  r.cont_increments = j.at("increments").get<std::vector<double>>();
  if (r.cont_increments.size() != r.grid.steps * r.dim_y)
    throw ConfigError("observation record: increment count does not match the grid");
  auto events = [](const json& a) {
    std::vector<JumpEvent> v;
    for (const auto& e : a) v.push_back({e.at("t").get<double>(), e.at("u").get<Vec>()});
    return v;
  };
  r.jump_events_U0 = events(j.at("jumps_U0"));
  r.jump_events_big = events(j.at("jumps_big"));
  r.truth_link = j.value("truth_link", "");
  return r;
}

double cell_log_increment(const ObservationModel& model, const double* x, const double* dy,
                          const JumpEvent* events, std::size_t n_events, double dt) {
  double r = 0.0;
  if (!model.h_zero()) {
    const int k = model.dim_y();
    double hx[16];
    std::vector<double> big;
    double* hp = hx;
    if (k > 16) {
      big.resize(k);
      hp = big.data();
    }
    model.h(x, hp);
    double dot = 0.0, hh = 0.0;
    for (int i = 0; i < k; ++i) {
      dot += hp[i] * dy[i];
      hh += hp[i] * hp[i];
    }
    r = dot - 0.5 * hh * dt;
  }
  for (std::size_t e = 0; e < n_events; ++e) r += std::log(model.lambda(x, events[e].mark.data()));
  return r + dt * model.compensator(x);
}

namespace {

// For each cell, the index range of its U0 events.
std::vector<std::size_t> event_offsets(const ObservationRecord& obs) {
  std::vector<std::size_t> off(obs.grid.steps + 1, 0);
  std::size_t prev = 0;
  double last = -1.0;
  for (const JumpEvent& e : obs.jump_events_U0) {
    if (e.time < last) throw ConfigError("observation record: U0 events are not time-sorted");
    last = e.time;
    const std::size_t c = cell_of(obs.grid, e.time);
    if (c < prev) throw ConfigError("observation record: U0 events are not time-sorted");
    prev = c;
    off[c + 1]++;
  }
  for (std::size_t c = 0; c < obs.grid.steps; ++c) off[c + 1] += off[c];
  return off;
}

void check_grid(const TimeGrid& a, const TimeGrid& b) {
  if (a.T != b.T || a.steps != b.steps)
    throw ConfigError("observation grid does not match the particle grid (jump-time alignment)");
}

}  // namespace

double log_likelihood(const CadlagPath& particle, const ObservationRecord& obs,
                      const ObservationModel& model) {
  if (obs.dim_y != model.dim_y()) throw ConfigError("observation dimension does not match the model");
  const std::vector<double> xs = base_states(particle, obs.grid);
  const std::vector<std::size_t> off = event_offsets(obs);
  const double dt = obs.grid.h();
  double s = 0.0;
  for (std::size_t c = 0; c < obs.grid.steps; ++c) {
    const double* x = xs.data() + c * particle.dim;
    for (std::size_t e = off[c]; e < off[c + 1]; ++e)
      check_lambda(model.lambda(x, obs.jump_events_U0[e].mark.data()), x, particle.dim,
                   obs.jump_events_U0[e].time);
    s += cell_log_increment(model, x, obs.increment(c), obs.jump_events_U0.data() + off[c],
                            off[c + 1] - off[c], dt);
  }
  return s;
}

std::vector<double> FilterState::weights() const {
  const std::size_t n = size();
  std::vector<double> w(n);
  const double m = *std::max_element(log_weights.begin(), log_weights.end());
  for (std::size_t i = 0; i < n; ++i) w[i] = std::exp(log_weights[i] - m);
  const double s = kernels::sum(w.data(), n);
  for (double& v : w) v /= s;
  return w;
}

EnsembleLaw FilterState::law() const {
  EnsembleLaw l;
  l.time = t;
  l.dim = dim;
  l.points = particles;
  l.weights = weights();
  return l;
}

double filter_mean(const FilterState& s, const std::function<double(const double*)>& phi) {
  const std::size_t n = s.size();
  const std::vector<double> w = s.weights();
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = phi(s.particles.data() + i * s.dim);
  return kernels::dot(w.data(), v.data(), n);
}

std::vector<FilterState> filter_run(const ObservationModel& model, const CoefficientSet& signal,
                                    const Driver& driver, const InitialLaw& mu0,
                                    const TimeGrid& grid, const ObservationRecord* obs,
                                    std::size_t n_particles, std::uint64_t seed,
                                    const FilterOptions& opts) {
  if (n_particles == 0) throw ConfigError("filter_run: need at least one particle");
  if (signal.dim != model.dim_x()) throw ConfigError("filter_run: signal and model dimensions differ");
  std::vector<std::size_t> off;
  if (obs) {
    check_grid(obs->grid, grid);
    if (obs->dim_y != model.dim_y()) throw ConfigError("observation dimension does not match the model");
    off = event_offsets(*obs);
  }
  const int d = signal.dim;
  const std::size_t N = n_particles;
  EnsembleStepper stepper(signal, driver, mu0, grid, N, seed, opts.engine);
  std::vector<double> lw(N, 0.0), w(N);
  double log_norm = 0.0;
  std::vector<FilterState> out;
  const std::size_t every = std::max<std::size_t>(1, opts.record_every);

  auto record = [&](double ess, bool resampled) {
    FilterState s;
    s.t = stepper.time();
    s.dim = d;
    s.particles = stepper.states();
    s.log_weights = lw;
    s.log_normalizer = log_norm;
    s.ess = ess;
    s.resampled = resampled;
    out.push_back(std::move(s));
  };
  record(static_cast<double>(N), false);

  const double dt = grid.h();
  const int workers = opts.engine.workers;
  while (!stepper.done()) {
    const std::size_t c = stepper.step();
    if (obs) {
      const std::vector<double>& x = stepper.states();
      const JumpEvent* ev = obs->jump_events_U0.data() + off[c];
      const std::size_t ne = off[c + 1] - off[c];
      const double* dy = obs->increment(c);
      parallel_for(N, opts.engine.grain, [&](std::size_t b, std::size_t e) {
        for (std::size_t p = b; p < e; ++p)
          lw[p] += cell_log_increment(model, x.data() + p * d, dy, ev, ne, dt);
      }, workers);
    }
    stepper.advance();

    // Normalization is the synchronization point; all reductions run in index order.
    const double m = *std::max_element(lw.begin(), lw.end());
    if (!std::isfinite(m))
      throw SimulationError("filter collapse: every particle weight vanished or is not finite",
                            stepper.time());
    for (std::size_t p = 0; p < N; ++p) w[p] = std::exp(lw[p] - m);
    const double S = kernels::sum(w.data(), N);
    const double ess = S * S / kernels::dot(w.data(), w.data(), N);
    log_norm = m + std::log(S / static_cast<double>(N));
    bool resampled = false;
    if (opts.resampling.enabled && ess < opts.resampling.threshold * static_cast<double>(N)) {
      // Multinomial draw through sorted uniforms built from exponential spacings.
      RngStream rng(seed, stepper.step(), Purpose::resampling);
      std::vector<double> u(N + 1);
      double acc = 0.0;
      for (std::size_t i = 0; i <= N; ++i) {
        acc += -std::log(rng.uniform());
        u[i] = acc;
      }
      const std::vector<double>& x = stepper.states();
      std::vector<double> nx(N * d);
      std::size_t src = 0;
      double cum = w[0] / S;
      for (std::size_t i = 0; i < N; ++i) {
        const double target = u[i] / u[N];
        while (target > cum && src + 1 < N) cum += w[++src] / S;
        std::copy(x.begin() + static_cast<std::ptrdiff_t>(src * d),
                  x.begin() + static_cast<std::ptrdiff_t>((src + 1) * d),
                  nx.begin() + static_cast<std::ptrdiff_t>(i * d));
      }
      stepper.set_states(std::move(nx));
      std::fill(lw.begin(), lw.end(), log_norm);
      resampled = true;
    }
    if (stepper.step() % every == 0 || stepper.done()) record(resampled ? N : ess, resampled);
  }
  return out;
}

namespace {

std::vector<double> filter_means(const FilterState& s, const EmpiricalDistanceConfig& dict) {
  std::vector<double> out;
  out.reserve(dict.dictionary.size());
  for (const BLFunction& f : dict.dictionary) out.push_back(filter_mean(s, f.f));
  return out;
}

MomentEstimate mean_se_of(const std::vector<double>& v) {
  MomentEstimate m;
  const std::size_t n = v.size();
  if (n == 0) return m;
  m.mean = kernels::sum(v.data(), n) / static_cast<double>(n);
  if (n > 1) {
    double ss = 0.0;
    for (double e : v) ss += (e - m.mean) * (e - m.mean);
    m.se = std::sqrt(ss / (n - 1.0) / static_cast<double>(n));
  }
  return m;
}

// Left-point time integrals of the h and log-lambda gaps per particle.
void gap_integrals(const ObservationModel& model, int d, std::size_t N, std::size_t steps, double dt,
                   const std::function<const double*(std::size_t, std::size_t)>& xn,
                   const std::function<const double*(std::size_t, std::size_t)>& x,
                   std::vector<double>& hg, std::vector<double>& lg) {
  const int k = model.dim_y();
  hg.assign(N, 0.0);
  lg.assign(N, 0.0);
  parallel_for(N, 256, [&](std::size_t b, std::size_t e) {
    Vec ha(k), hb(k);
    for (std::size_t p = b; p < e; ++p) {
      for (std::size_t i = 0; i < steps; ++i) {
        const double* a = xn(i, p);
        const double* c = x(i, p);
        model.h(a, ha.data());
        model.h(c, hb.data());
        double s = 0.0;
        for (int j = 0; j < k; ++j) s += (ha[j] - hb[j]) * (ha[j] - hb[j]);
        hg[p] += s * dt;
        if (!model.lambda_state_free()) {
          double q = 0.0;
          for (const Atom& node : model.nodes_all()) {
            const double g = std::log(model.lambda(a, node.mark.data())) -
                             std::log(model.lambda(c, node.mark.data()));
            q += node.mass * g * g;
          }
          lg[p] += q * dt;
        }
      }
    }
  });
  (void)d;
}

}  // namespace

RobustnessReport robustness_experiment(const CoefficientFamily& family, const Driver& driver,
                                       const InitialLaw& mu0, const ObservationModel& model,
                                       const std::vector<int>& schedule, const TimeGrid& grid,
                                       std::size_t n_particles, std::uint64_t seed,
                                       const EmpiricalDistanceConfig& dict,
                                       const RobustnessOptions& opts) {
  if (schedule.empty()) throw ConfigError("robustness_experiment: empty schedule");
  if (opts.replicas == 0) throw ConfigError("robustness_experiment: need at least one replica");
  model.validate(grid.T);
  dict.validate(family.limit.dim);
  const ProbeGrid probes = ProbeGrid::standard(family.limit.dim, grid.T);
  std::vector<CoefficientSet> members;
  for (int n : schedule) {
    members.push_back(family.member(n));
    const GrowthReport g = probe_linear_growth(members.back(), probes);
    if (g.superlinear)
      throw HypothesisError("H1 (linear growth) fails for member n = " + std::to_string(n) +
                            " at t = " + std::to_string(g.witness_t) +
                            ", |x| = " +
                            std::to_string(std::sqrt(norm2(g.witness_x.data(), g.witness_x.size()))));
  }

  RobustnessReport rep;
  const std::size_t K = grid.steps;
  const std::size_t C = std::max<std::size_t>(1, std::min(opts.checkpoints, K));
  std::vector<std::size_t> cps;
  for (std::size_t c = 1; c <= C; ++c) cps.push_back(c * K / C);
  for (std::size_t s : cps) rep.checkpoints.push_back(grid.time(s));
  for (const auto& f : dict.dictionary) rep.phi_ids.push_back(f.id);

  FilterOptions fopt = opts.filter;
  fopt.record_every = 1;
  const std::uint64_t truth_seed = derive_seed(seed, "robustness/truth");
  std::vector<std::vector<double>> D(schedule.size(), std::vector<double>(opts.replicas, 0.0));
  std::vector<double> h_gap(schedule.size(), 0.0), l_gap(schedule.size(), 0.0);

  auto run_once = [&](const CoefficientSet& coeffs, std::size_t r, const ObservationNoise& noise,
                      std::uint64_t filter_seed) {
    EngineOptions eo = fopt.engine;
    eo.first_particle = r;
    const Ensemble truth = simulate_ensemble(coeffs, driver, mu0, grid, 1, truth_seed, eo);
    ObservationRecord obs = simulate_observation(truth.path(0), model, noise);
    obs.truth_link = "truth particle " + std::to_string(r);
    return filter_run(model, coeffs, driver, mu0, grid, &obs, n_particles, filter_seed, fopt);
  };

  for (std::size_t r = 0; r < opts.replicas; ++r) {
    const ObservationNoise noise =
        sample_observation_noise(model, grid, derive_seed(seed, "robustness/obs/" + std::to_string(r)));
    const std::uint64_t fseed = derive_seed(seed, "robustness/filter/" + std::to_string(r));
    const std::vector<FilterState> lim = run_once(family.limit, r, noise, fseed);
    std::vector<std::vector<double>> lim_means;
    for (std::size_t s : cps) lim_means.push_back(filter_means(lim[s], dict));
    for (std::size_t k = 0; k < schedule.size(); ++k) {
      const std::vector<FilterState> run = run_once(members[k], r, noise, fseed);
      double acc = 0.0;
      for (std::size_t c = 0; c < cps.size(); ++c) {
        const std::vector<double> m = filter_means(run[cps[c]], dict);
        for (std::size_t j = 0; j < m.size(); ++j) acc += std::fabs(m[j] - lim_means[c][j]);
      }
      D[k][r] = acc / static_cast<double>(cps.size() * dict.dictionary.size());
      if (r == 0) {
        const int d = family.limit.dim;
        std::vector<double> hg, lg;
        gap_integrals(
            model, d, n_particles, K, grid.h(),
            [&](std::size_t i, std::size_t p) { return run[i].particles.data() + p * d; },
            [&](std::size_t i, std::size_t p) { return lim[i].particles.data() + p * d; }, hg, lg);
        h_gap[k] = mean_se_of(hg).mean;
        l_gap[k] = mean_se_of(lg).mean;
      }
    }
  }

  for (std::size_t k = 0; k < schedule.size(); ++k) {
    const MomentEstimate m = mean_se_of(D[k]);
    rep.rows.push_back({schedule[k], m.mean, m.se, h_gap[k], l_gap[k]});
  }
  for (std::size_t k = 0; k + 1 < rep.rows.size(); ++k) {
    const auto &a = rep.rows[k], &b = rep.rows[k + 1];
    if (b.D > a.D + 2.0 * std::sqrt(a.se * a.se + b.se * b.se)) rep.monotone = false;
  }
  rep.ratio_ok = rep.rows.back().D <= rep.rows.front().D / 4.0;
  rep.pass = rep.monotone && rep.ratio_ok;
  rep.assumptions.push_back(
      "D averages |pi^n_t(phi) - pi_t(phi)| over checkpoints and a finite bounded-Lipschitz "
      "dictionary; a surrogate for weak convergence of the filter laws");
  rep.assumptions.push_back(
      "observations coupled through shared Brownian increments, proposal atoms and thinning "
      "uniforms; coupling is variance reduction only");
  if (opts.filter.resampling.enabled)
    rep.assumptions.push_back("resampling enabled: particle coupling across n is partial");
  return rep;
}

HLambdaReport hypothesis_checks_h_lambda(const FamilyEnsembles& fam, const ObservationModel& model) {
  HLambdaReport rep;
  const Ensemble& lim = fam.limit;
  for (std::size_t k = 0; k < fam.members.size(); ++k) {
    const Ensemble& e = fam.members[k];
    if (e.n != lim.n || e.grid.steps != lim.grid.steps)
      throw ConfigError("hypothesis_checks_h_lambda: ensembles are not coupled");
    std::vector<double> hg, lg;
    gap_integrals(
        model, e.dim, e.n, e.grid.steps, e.grid.h(),
        [&](std::size_t i, std::size_t p) { return e.state(i, p); },
        [&](std::size_t i, std::size_t p) { return lim.state(i, p); }, hg, lg);
    const MomentEstimate h = mean_se_of(hg), l = mean_se_of(lg);
    rep.rows.push_back({fam.indices[k], h.mean, h.se, l.mean, l.se});
  }
  for (std::size_t k = 0; k + 1 < rep.rows.size(); ++k) {
    const auto &a = rep.rows[k], &b = rep.rows[k + 1];
    if (b.h_gap > a.h_gap + 2.0 * std::hypot(a.h_gap_se, b.h_gap_se)) rep.h_decreasing = false;
    if (b.lambda_gap > a.lambda_gap + 2.0 * std::hypot(a.lambda_gap_se, b.lambda_gap_se))
      rep.lambda_decreasing = false;
  }
  return rep;
}

}  // namespace levylab
