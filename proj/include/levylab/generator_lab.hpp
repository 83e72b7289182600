#pragma once

// The generator L_t = A + B + N^f on test functions, the hypothesis
// validators, and the two empirical identities built on it: the martingale
// property of M^phi along simulated paths and the weak Fokker-Planck identity
// of the simulated marginals.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "levylab/coefficients.hpp"
#include "levylab/levy_driver.hpp"
#include "levylab/sde_engine.hpp"
#include "levylab/test_functions.hpp"

namespace levylab {

struct JumpQuadrature {
  enum class Kind { atomic_sum, monte_carlo };
  Kind kind = Kind::atomic_sum;
  std::size_t samples = 10000;
  std::uint64_t seed = 0x243F6A8885A308D3ull;
};

struct GeneratorValue {
  double value = 0.0;
  double se = 0.0;  // quadrature standard error (0 for atomic sums)
  double diffusion = 0.0;
  double drift = 0.0;
  double jump = 0.0;
};

class GeneratorContext {
 public:
  // Atomic drivers default to exact summation, parametric ones to Monte Carlo.
  GeneratorContext(CoefficientSet coeffs, Driver driver,
                   std::optional<JumpQuadrature> quadrature = std::nullopt);

  const CoefficientSet& coeffs() const { return coeffs_; }
  const Driver& driver() const { return driver_; }
  const JumpQuadrature& quadrature() const { return quad_; }

  // a = sigma sigma^T / 2, row-major dim x dim.
  void diffusion_matrix(double t, const double* x, double* a) const;

  // Throws HypothesisError naming Hs or Hl when the jump term is not integrable.
  GeneratorValue eval(const TestFunction& phi, double t, const double* x) const;

 private:
  CoefficientSet coeffs_;
  Driver driver_;
  JumpQuadrature quad_;
  std::string integrability_error_;
  // Monte Carlo nodes over the simulated region and their total mass.
  std::vector<Vec> nodes_;
  double node_mass_ = 0.0;
  // Second moments of the discarded ball, int_{|z|<=eps} z z^T nu(dz).
  Vec discarded_q_;
};

inline GeneratorValue eval_generator(const GeneratorContext& ctx, const TestFunction& phi,
                                     double t, const double* x) {
  return ctx.eval(phi, t, x);
}

struct HypothesisEntry {
  std::string name;  // "H1", "Hs", "Hl"
  double constant = 0.0;
  bool violated = false;
  double witness_t = 0.0;
  Vec witness_x;
  std::string detail;
};

struct HypothesisReport {
  HypothesisEntry h1, hs, hl;
  bool ok() const { return !h1.violated && !hs.violated && !hl.violated; }
};

// C1: sup (|b| + ||sigma||_F) / (1 + |x|)
// C2: sup int_{|u| <= l} |u|^2 nu^f(du) / (1 + |x|^2)
// C3: sup int_{|u| > l} log(1 + |u| / (1 + |x|)) nu^f(du), plus nu^f(|u| > l) < inf
// Divergence of the jump integrals is detected from the mass oracles, both
// analytically and by refining annuli toward the singular end.
HypothesisReport validate_hypotheses(const GeneratorContext& ctx, const ProbeGrid& probes);

struct BinResult {
  double lo = 0.0, hi = 0.0;  // first active coordinate range
  std::size_t count = 0;
  double estimate = 0.0;
  double se = 0.0;
  bool scored = false;
};

struct MartingaleResidual {
  std::vector<BinResult> bins;
  double max_abs = 0.0;  // over scored bins
  double se_at_max = 0.0;
  double max_z = 0.0;    // max |estimate| / se over scored bins
  std::size_t flagged = 0;
  bool pass = true;      // every scored bin within 3 se
};

// E[M_t - M_s | bin(x_s)] with M^phi_t = phi(x_t) - phi(x_0) - int_0^t L phi(x_r) dr
// integrated at left points of the merged grid.  s and t are base grid times.
MartingaleResidual martingale_residual(const Ensemble& e, const GeneratorContext& ctx,
                                       const TestFunction& phi, double s, double t,
                                       int bins_per_dim = 8, std::size_t min_count = 100);

struct ResidualRow {
  double t = 0.0;
  std::string phi_id;
  double residual = 0.0;
  double mc_se = 0.0;
  double budget = 0.0;
  bool pass = true;
};

struct FpeResidual {
  std::vector<ResidualRow> rows;
  double sup_abs = 0.0;
  double sup_z = 0.0;
  double mc_se_at_sup = 0.0;
  double discretization_budget = 0.0;
  bool paired = false;
  bool pass = true;
};

struct FpeOptions {
  double discretization_budget = 0.0;  // added to 3 se in every row budget
  std::vector<double> guard_radii = {1.0, 2.0, 5.0, 10.0};
};

// t_k -> mu_{t_k}(phi) - mu_0(phi) - sum_{j<k} mu_{t_j}(L phi) dt_j over the given
// marginals.  When all marginals share one particle set (same size, equal
// weights) the standard error is computed per particle.  Throws
// HypothesisError naming the failed integrability guard.
FpeResidual fpe_weak_residual(const std::vector<EnsembleLaw>& marginals,
                              const GeneratorContext& ctx, const TestFunction& phi,
                              const FpeOptions& opts = {});

// Empirical integrability guards over the marginals; returns the two
// estimates for the largest radius.  Throws on divergence.
std::pair<double, double> fpe_guards(const std::vector<EnsembleLaw>& marginals,
                                     const GeneratorContext& ctx,
                                     const std::vector<double>& radii);

struct SuperpositionOptions {
  std::size_t checkpoints = 10;
  double discretization_budget = 0.0;
};

struct SuperpositionReport {
  std::vector<ResidualRow> rows;  // scored checkpoint rows for every phi
  std::vector<std::string> phi_ids;
  std::vector<double> sup_abs;    // per phi, over checkpoints
  std::vector<double> sup_z;
  bool pass = true;
  HypothesisReport hypotheses;
};

std::vector<EnsembleLaw> all_marginals(const Ensemble& e);

// Marginals of an already simulated ensemble against ctx's generator.
SuperpositionReport superposition_crosscheck(const Ensemble& e, const GeneratorContext& ctx,
                                             const std::vector<TestFunction>& dictionary,
                                             const SuperpositionOptions& opts = {});

SuperpositionReport superposition_crosscheck(const GeneratorContext& ctx, const InitialLaw& mu0,
                                             const std::vector<TestFunction>& dictionary,
                                             const TimeGrid& grid, std::size_t n,
                                             std::uint64_t seed,
                                             const SuperpositionOptions& opts = {},
                                             EngineOptions engine = {});

}  // namespace levylab
