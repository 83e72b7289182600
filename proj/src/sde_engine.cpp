#include "levylab/sde_engine.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "levylab/kernels.hpp"
#include "levylab/parallel.hpp"

namespace levylab {

namespace {

constexpr std::size_t kMaxScratch = 64;

}  // namespace

TimeGrid TimeGrid::uniform(double T, double h) {
  if (!(T > 0.0) || !(h > 0.0)) throw ConfigError("time grid needs T > 0 and h > 0");
  const double ratio = T / h;
  const auto steps = static_cast<std::size_t>(std::llround(ratio));
  if (steps < 1 || std::fabs(static_cast<double>(steps) - ratio) > 1e-9 * ratio)
    throw ConfigError("time grid: T must be an integer multiple of h");
  return TimeGrid{T, steps};
}

std::size_t TimeGrid::index_at_or_before(double t) const {
  if (t <= 0.0) return 0;
  if (t >= T) return steps;
  auto i = static_cast<std::size_t>(std::floor(t / T * static_cast<double>(steps)));
  i = std::min(i, steps);
  while (i < steps && time(i + 1) <= t) ++i;
  while (i > 0 && time(i) > t) --i;
  return i;
}

EnsembleStepper::EnsembleStepper(const CoefficientSet& coeffs, const Driver& driver,
                                 const InitialLaw& mu0, const TimeGrid& grid, std::size_t n,
                                 std::uint64_t seed, EngineOptions opts)
    : coeffs_(coeffs), driver_(driver), grid_(grid), n_(n), opts_(opts) {
  const int d = coeffs_.dim, m = coeffs_.noise_dim;
  if (d < 1 || m < 1) throw ConfigError("coefficient set has no dimensions");
  if (static_cast<std::size_t>(std::max(d * m, d)) > kMaxScratch)
    throw ConfigError("state or noise dimension too large for the engine");
  if (mu0.dim() != d) throw ConfigError("initial law dimension does not match coefficients");
  const bool has_driver = !(driver_.nu.is_atomic() && driver_.nu.atoms().empty());
  if (has_driver && driver_.nu.dim() != d)
    throw ConfigError("driver dimension does not match coefficients");
  driver_.trunc.validate();
  if (n_ == 0) throw ConfigError("ensemble size must be positive");

  x_.assign(n_ * d, 0.0);
  dw_.assign(n_, 0.0);
  brownian_.resize(n_);
  events_.assign(n_, {});
  next_event_.assign(n_, 0);
  records_.assign(n_, {});

  const Annulus region = driver_.trunc.simulated_region();
  const double rate = has_driver ? driver_.nu.mass(region) : 0.0;
  if (has_driver && !std::isfinite(rate))
    throw InfiniteMassError("driver has infinite mass on the simulated region " +
                            region.describe() + "; use discard_below_eps");

  parallel_for(
      n_, opts_.grain,
      [&](std::size_t b, std::size_t e) {
        for (std::size_t p = b; p < e; ++p) {
          const std::uint64_t id = opts_.first_particle + p;
          RngStream init(seed, id, Purpose::initial_state);
          mu0.sample(init, x_.data() + p * d);
          brownian_[p] = RngStream(seed, id, Purpose::brownian);
          if (rate > 0.0) {
            RngStream jumps(seed, id, Purpose::driver_jumps);
            events_[p] = sample_jump_events(driver_.nu, region, grid_.T, jumps);
          }
        }
      },
      opts_.workers);

  if (coeffs_.f_constant()) {
    const double f = coeffs_.gamma;
    const_comp_ = has_driver ? scaled_compensation(driver_.nu, driver_.trunc, f) : Vec(d, 0.0);
    for (auto& v : const_comp_) v *= f;
    if (coeffs_.affine && d == 1 && m == 1) {
      use_kernel_ = true;
      kernel_c_ = coeffs_.affine->c - const_comp_[0];
    }
  }
}

void EnsembleStepper::set_states(std::vector<double> x) {
  if (x.size() != x_.size()) throw ConfigError("set_states: wrong size");
  x_ = std::move(x);
}

void EnsembleStepper::drift_eff(double t, const double* x, double* out) const {
  if (use_kernel_) {
    out[0] = coeffs_.affine->a * x[0] + kernel_c_;
    return;
  }
  coeffs_.drift(t, x, out);
  const int d = coeffs_.dim;
  if (coeffs_.f_constant()) {
    for (int k = 0; k < d; ++k) out[k] = out[k] - const_comp_[k];
    return;
  }
  const double f = coeffs_.f(t, x);
  if (f == 0.0 || (driver_.nu.is_atomic() && driver_.nu.atoms().empty())) return;
  const Vec comp = scaled_compensation(driver_.nu, driver_.trunc, f);
  for (int k = 0; k < d; ++k) out[k] = out[k] - f * comp[k];
}

void EnsembleStepper::generic_step(std::size_t p, double t, double dt, double sqrt_dt,
                                   double* x) {
  const int d = coeffs_.dim, m = coeffs_.noise_dim;
  std::array<double, kMaxScratch> b, s, dw;
  for (int j = 0; j < m; ++j) dw[j] = sqrt_dt * brownian_[p].normal();
  drift_eff(t, x, b.data());
  coeffs_.diffusion(t, x, s.data());
  for (int k = 0; k < d; ++k) {
    double noise = s[k * m] * dw[0];
    for (int j = 1; j < m; ++j) noise += s[k * m + j] * dw[j];
    const double step = b[k] * dt;
    x[k] = (x[k] + step) + noise;
  }
}

void EnsembleStepper::advance_range(std::size_t begin, std::size_t end, double& bad_time) {
  const int d = coeffs_.dim;
  const double t0 = grid_.time(step_), t1 = grid_.time(step_ + 1);
  const double dt = t1 - t0, sq = std::sqrt(dt);
  auto jumps_in_cell = [&](std::size_t p) {
    return next_event_[p] < events_[p].size() && events_[p][next_event_[p]].time <= t1;
  };

  std::vector<std::size_t> jumpers;
  if (use_kernel_) {
    for (std::size_t p = begin; p < end; ++p) {
      if (jumps_in_cell(p)) {
        jumpers.push_back(p);
        dw_[p] = 0.0;
      } else {
        dw_[p] = sq * brownian_[p].normal();
      }
    }
    std::vector<double> saved(jumpers.size());
    for (std::size_t k = 0; k < jumpers.size(); ++k) saved[k] = x_[jumpers[k]];
    kernels::euler_affine(x_.data() + begin, dw_.data() + begin, coeffs_.affine->a, kernel_c_,
                          coeffs_.affine->s, dt, end - begin);
    for (std::size_t k = 0; k < jumpers.size(); ++k) x_[jumpers[k]] = saved[k];
    for (std::size_t p = begin; p < end; ++p) {
      if (!std::isfinite(x_[p]) && !jumps_in_cell(p)) bad_time = std::min(bad_time, t1);
    }
  } else {
    for (std::size_t p = begin; p < end; ++p) {
      if (jumps_in_cell(p)) {
        jumpers.push_back(p);
        continue;
      }
      double* x = x_.data() + p * d;
      generic_step(p, t0, dt, sq, x);
      for (int k = 0; k < d; ++k)
        if (!std::isfinite(x[k])) bad_time = std::min(bad_time, t1);
    }
  }

  for (std::size_t p : jumpers) {
    double* x = x_.data() + p * d;
    double t = t0;
    while (jumps_in_cell(p)) {
      const JumpEvent& ev = events_[p][next_event_[p]++];
      const double gap = ev.time - t;
      if (gap > 0.0) generic_step(p, t, gap, std::sqrt(gap), x);
      JumpRecord rec;
      rec.time = ev.time;
      rec.cell = static_cast<std::uint32_t>(step_);
      rec.mark = ev.mark;
      rec.pre.assign(x, x + d);
      const double f = coeffs_.f(ev.time, x);
      for (int k = 0; k < d; ++k) {
        const double u = f * ev.mark[k];
        x[k] = x[k] + u;
      }
      rec.post.assign(x, x + d);
      records_[p].push_back(std::move(rec));
      for (int k = 0; k < d; ++k)
        if (!std::isfinite(x[k])) bad_time = std::min(bad_time, ev.time);
      t = std::max(t, ev.time);
    }
    if (t1 > t) generic_step(p, t, t1 - t, std::sqrt(t1 - t), x);
    for (int k = 0; k < d; ++k)
      if (!std::isfinite(x[k])) bad_time = std::min(bad_time, t1);
  }
}

void EnsembleStepper::advance() {
  if (done()) throw SimulationError("stepper already at the horizon", grid_.T);
  const std::size_t grain = std::max<std::size_t>(opts_.grain, 8);
  const std::size_t chunks = (n_ + grain - 1) / grain;
  std::vector<double> bad(chunks, kInfinity);
  parallel_for(
      n_, grain, [&](std::size_t b, std::size_t e) { advance_range(b, e, bad[b / grain]); },
      opts_.workers);
  ++step_;
  const double first_bad = *std::min_element(bad.begin(), bad.end());
  if (std::isfinite(first_bad)) {
    throw SimulationError("non-finite state at t = " + std::to_string(first_bad), first_bad);
  }
}

Ensemble simulate_ensemble(const CoefficientSet& coeffs, const Driver& driver,
                           const InitialLaw& mu0, const TimeGrid& grid, std::size_t n,
                           std::uint64_t seed, EngineOptions opts) {
  EnsembleStepper stepper(coeffs, driver, mu0, grid, n, seed, opts);
  Ensemble e;
  e.grid = grid;
  e.dim = coeffs.dim;
  e.n = n;
  const std::size_t slice = n * coeffs.dim;
  e.values.resize((grid.steps + 1) * slice);
  std::copy(stepper.states().begin(), stepper.states().end(), e.values.begin());
  for (std::size_t i = 1; i <= grid.steps; ++i) {
    stepper.advance();
    std::copy(stepper.states().begin(), stepper.states().end(),
              e.values.begin() + static_cast<std::ptrdiff_t>(i * slice));
  }
  e.jumps = stepper.jump_records();
  return e;
}

CadlagPath Ensemble::path(std::size_t p) const {
  CadlagPath out;
  out.dim = dim;
  const auto& recs = jumps[p];
  std::size_t r = 0;
  for (std::size_t i = 0; i <= grid.steps; ++i) {
    const double ti = grid.time(i);
    bool flagged = false;
    // Jumps landing exactly on a base time mark that base point.
    while (r < recs.size() && recs[r].time == ti && i > 0) {
      out.jumps.push_back({recs[r].time, recs[r].mark});
      flagged = true;
      ++r;
    }
    out.times.push_back(ti);
    out.values.insert(out.values.end(), state(i, p), state(i, p) + dim);
    out.is_jump.push_back(flagged);
    if (i == grid.steps) break;
    const double next = grid.time(i + 1);
    while (r < recs.size() && recs[r].time < next) {
      const JumpRecord& rec = recs[r++];
      out.jumps.push_back({rec.time, rec.mark});
      if (rec.time == out.times.back()) {
        // Simultaneous jumps collapse onto one grid point carrying the last post value.
        std::copy(rec.post.begin(), rec.post.end(), out.values.end() - dim);
        continue;
      }
      out.times.push_back(rec.time);
      out.values.insert(out.values.end(), rec.post.begin(), rec.post.end());
      out.is_jump.push_back(true);
    }
  }
  return out;
}

CadlagPath simulate_path(const CoefficientSet& coeffs, const Driver& driver, const Vec& x0,
                         const TimeGrid& grid, std::uint64_t seed, std::uint64_t particle) {
  // A one-particle ensemble whose particle carries the requested stream index.
  EnsembleStepper probe(coeffs, driver, InitialLaw::dirac(x0), grid, 1, seed,
                        EngineOptions{1, 1, particle});
  Ensemble e;
  e.grid = grid;
  e.dim = coeffs.dim;
  e.n = 1;
  e.values.insert(e.values.end(), probe.states().begin(), probe.states().end());
  while (!probe.done()) {
    probe.advance();
    e.values.insert(e.values.end(), probe.states().begin(), probe.states().end());
  }
  e.jumps = probe.jump_records();
  return e.path(0);
}

FamilyEnsembles simulate_coupled_family(const CoefficientFamily& family, const Driver& driver,
                                        const InitialLaw& mu0, const std::vector<int>& indices,
                                        const TimeGrid& grid, std::size_t n, std::uint64_t seed,
                                        EngineOptions opts) {
  const ProbeGrid probes = ProbeGrid::standard(family.limit.dim, grid.T);
  auto check = [&](const CoefficientSet& c) {
    const GrowthReport rep = probe_linear_growth(c, probes);
    if (rep.superlinear) {
      std::string where;
      for (double v : rep.witness_x) where += (where.empty() ? "" : ",") + std::to_string(v);
      throw HypothesisError("coefficient set '" + c.name +
                            "' violates the linear-growth bound at t = " +
                            std::to_string(rep.witness_t) + ", x = (" + where + ")");
    }
  };
  check(family.limit);
  std::vector<CoefficientSet> members;
  for (int k : indices) {
    members.push_back(family.member(k));
    check(members.back());
  }
  FamilyEnsembles out;
  out.indices = indices;
  for (const auto& c : members)
    out.members.push_back(simulate_ensemble(c, driver, mu0, grid, n, seed, opts));
  out.limit = simulate_ensemble(family.limit, driver, mu0, grid, n, seed, opts);
  return out;
}

EnsembleLaw marginal_law(const Ensemble& e, double t) {
  if (e.n == 0) throw ConfigError("marginal_law: empty ensemble");
  if (t < 0.0 || t > e.grid.T) throw ConfigError("marginal_law: t outside [0, T]");
  const std::size_t i = e.grid.index_at_or_before(t);
  EnsembleLaw law;
  law.time = t;
  law.dim = e.dim;
  law.points.resize(e.n * e.dim);
  for (std::size_t p = 0; p < e.n; ++p) {
    const double* v = e.state(i, p);
    if (i < e.grid.steps && !e.jumps.empty()) {
      for (const JumpRecord& rec : e.jumps[p]) {
        if (rec.cell == i && rec.time <= t) v = rec.post.data();
        if (rec.cell > i) break;
      }
    }
    std::copy(v, v + e.dim, law.points.begin() + static_cast<std::ptrdiff_t>(p * e.dim));
  }
  return law;
}

namespace {

constexpr char kMagic[8] = {'L', 'V', 'Y', 'E', 'N', 'S', '0', '1'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ConfigError("ensemble file truncated");
  return v;
}

}  // namespace

void write_ensemble(const Ensemble& e, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  os.write(kMagic, sizeof kMagic);
  put(os, kVersion);
  put<std::uint64_t>(os, e.n);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(e.dim));
  put(os, e.grid.T);
  put<std::uint64_t>(os, e.grid.steps);
  for (std::size_t p = 0; p < e.n; ++p)
    for (std::size_t i = 0; i <= e.grid.steps; ++i)
      os.write(reinterpret_cast<const char*>(e.state(i, p)), sizeof(double) * e.dim);
  for (std::size_t p = 0; p < e.n; ++p) {
    const auto& recs = e.jumps.empty() ? std::vector<JumpRecord>{} : e.jumps[p];
    put<std::uint64_t>(os, recs.size());
    for (const JumpRecord& r : recs) {
      put(os, r.time);
      put(os, r.cell);
      os.write(reinterpret_cast<const char*>(r.mark.data()), sizeof(double) * e.dim);
      os.write(reinterpret_cast<const char*>(r.pre.data()), sizeof(double) * e.dim);
      os.write(reinterpret_cast<const char*>(r.post.data()), sizeof(double) * e.dim);
    }
  }
  if (!os) throw ConfigError("failed writing " + path);
}

Ensemble read_ensemble(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path);
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw ConfigError(path + " is not an ensemble file");
  if (get<std::uint32_t>(is) != kVersion) throw ConfigError("unsupported ensemble file version");
  Ensemble e;
  e.n = get<std::uint64_t>(is);
  e.dim = static_cast<int>(get<std::uint32_t>(is));
  e.grid.T = get<double>(is);
  e.grid.steps = get<std::uint64_t>(is);
  e.values.resize((e.grid.steps + 1) * e.n * e.dim);
  for (std::size_t p = 0; p < e.n; ++p)
    for (std::size_t i = 0; i <= e.grid.steps; ++i)
      is.read(reinterpret_cast<char*>(e.values.data() + (i * e.n + p) * e.dim),
              sizeof(double) * e.dim);
  if (!is) throw ConfigError("ensemble file truncated");
  e.jumps.resize(e.n);
  for (std::size_t p = 0; p < e.n; ++p) {
    const auto count = get<std::uint64_t>(is);
    for (std::uint64_t k = 0; k < count; ++k) {
      JumpRecord r;
      r.time = get<double>(is);
      r.cell = get<std::uint32_t>(is);
      r.mark.resize(e.dim);
      r.pre.resize(e.dim);
      r.post.resize(e.dim);
      is.read(reinterpret_cast<char*>(r.mark.data()), sizeof(double) * e.dim);
      is.read(reinterpret_cast<char*>(r.pre.data()), sizeof(double) * e.dim);
      is.read(reinterpret_cast<char*>(r.post.data()), sizeof(double) * e.dim);
      if (!is) throw ConfigError("ensemble file truncated");
      e.jumps[p].push_back(std::move(r));
    }
  }
  return e;
}

}  // namespace levylab
