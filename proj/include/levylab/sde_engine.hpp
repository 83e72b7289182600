#pragma once

// Jump-adapted Euler-Maruyama ensembles.
//
// Each particle p owns three counter-based streams keyed by (seed, p): its
// initial draw, its Brownian increments, and its driver jump events.  Members
// of a coupled family that share a seed therefore see the same noise, and the
// output never depends on how particles were scheduled across workers.

#include <cstdint>
#include <string>
#include <vector>

#include "levylab/coefficients.hpp"
#include "levylab/levy_driver.hpp"

namespace levylab {

struct TimeGrid {
  double T = 1.0;
  std::size_t steps = 100;

  static TimeGrid uniform(double T, double h);
  double h() const { return T / static_cast<double>(steps); }
  double time(std::size_t i) const {
    return i == steps ? T : T * static_cast<double>(i) / static_cast<double>(steps);
  }
  // Largest i with time(i) <= t.
  std::size_t index_at_or_before(double t) const;
};

struct Driver {
  LevyMeasure nu = LevyMeasure::zero(1);
  TruncationConfig trunc;
};

struct JumpRecord {
  double time = 0.0;
  std::uint32_t cell = 0;  // jump lies in (t_cell, t_cell+1]
  Vec mark;
  Vec pre;   // X at tau-
  Vec post;  // X at tau
};

// A single path on its merged grid (base times plus driver jump times).
struct CadlagPath {
  int dim = 1;
  std::vector<double> times;
  std::vector<double> values;  // times.size() x dim
  std::vector<bool> is_jump;   // times[i] is a driver jump time
  std::vector<JumpEvent> jumps;

  std::size_t size() const { return times.size(); }
  const double* at(std::size_t i) const { return values.data() + i * dim; }
};

struct Ensemble {
  TimeGrid grid;
  int dim = 1;
  std::size_t n = 0;
  std::vector<double> values;  // (steps + 1) x n x dim, time-major
  std::vector<std::vector<JumpRecord>> jumps;

  const double* state(std::size_t step, std::size_t p) const {
    return values.data() + (step * n + p) * dim;
  }
  CadlagPath path(std::size_t p) const;
};

// Equal or weighted particle cloud at one time.
struct EnsembleLaw {
  double time = 0.0;
  int dim = 1;
  std::vector<double> points;  // size() x dim
  std::vector<double> weights; // empty means equal weights

  std::size_t size() const { return dim > 0 ? points.size() / dim : 0; }
  const double* point(std::size_t i) const { return points.data() + i * dim; }
};

struct EngineOptions {
  int workers = 0;  // 0: default_workers()
  std::size_t grain = 1024;
  // Stream index of local particle 0; lets a small run reproduce a slice of a larger one.
  std::uint64_t first_particle = 0;
};

// Steps a whole ensemble forward one base cell at a time.  Filters use this
// directly so they can resample states between cells.
class EnsembleStepper {
 public:
  EnsembleStepper(const CoefficientSet& coeffs, const Driver& driver, const InitialLaw& mu0,
                  const TimeGrid& grid, std::size_t n, std::uint64_t seed,
                  EngineOptions opts = {});

  std::size_t step() const { return step_; }
  double time() const { return grid_.time(step_); }
  bool done() const { return step_ == grid_.steps; }
  std::size_t size() const { return n_; }
  int dim() const { return coeffs_.dim; }
  const TimeGrid& grid() const { return grid_; }

  const std::vector<double>& states() const { return x_; }
  // Overwrite states (e.g. after resampling).  Noise streams stay attached to
  // particle indices.
  void set_states(std::vector<double> x);

  // Advances every particle across (t_i, t_{i+1}].  Throws SimulationError on
  // the first non-finite state.
  void advance();

  const std::vector<std::vector<JumpRecord>>& jump_records() const { return records_; }

 private:
  void advance_range(std::size_t begin, std::size_t end, double& bad_time);
  void generic_step(std::size_t p, double t, double dt, double sqrt_dt, double* x);
  void drift_eff(double t, const double* x, double* out) const;

  CoefficientSet coeffs_;
  Driver driver_;
  TimeGrid grid_;
  std::size_t n_;
  EngineOptions opts_;
  std::size_t step_ = 0;

  bool use_kernel_ = false;
  double kernel_c_ = 0.0;   // c - f * compensation, for the affine case
  Vec const_comp_;          // f * compensation when f is constant

  std::vector<double> x_;
  std::vector<double> dw_;
  std::vector<RngStream> brownian_;
  std::vector<std::vector<JumpEvent>> events_;
  std::vector<std::size_t> next_event_;
  std::vector<std::vector<JumpRecord>> records_;
};

Ensemble simulate_ensemble(const CoefficientSet& coeffs, const Driver& driver,
                           const InitialLaw& mu0, const TimeGrid& grid, std::size_t n,
                           std::uint64_t seed, EngineOptions opts = {});

CadlagPath simulate_path(const CoefficientSet& coeffs, const Driver& driver, const Vec& x0,
                         const TimeGrid& grid, std::uint64_t seed, std::uint64_t particle = 0);

struct FamilyEnsembles {
  std::vector<int> indices;
  std::vector<Ensemble> members;  // members[k] belongs to indices[k]
  Ensemble limit;
};

// Rejects any member whose coefficients fail the linear-growth probe.
FamilyEnsembles simulate_coupled_family(const CoefficientFamily& family, const Driver& driver,
                                        const InitialLaw& mu0, const std::vector<int>& indices,
                                        const TimeGrid& grid, std::size_t n, std::uint64_t seed,
                                        EngineOptions opts = {});

// Value of every path at the largest merged-grid time <= t.
EnsembleLaw marginal_law(const Ensemble& e, double t);

// Columnar binary persistence.
void write_ensemble(const Ensemble& e, const std::string& path);
Ensemble read_ensemble(const std::string& path);

}  // namespace levylab
