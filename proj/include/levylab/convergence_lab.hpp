#pragma once

// Tools for coefficient-convergence experiments: the psi/Psi Lyapunov
// construction, tightness diagnostics, bounded-Lipschitz distances between
// empirical laws, the stochastic Gronwall checker, and the end-to-end limit
// experiment.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "levylab/coefficients.hpp"
#include "levylab/sde_engine.hpp"
#include "levylab/test_functions.hpp"

namespace levylab {

// Concave piecewise-linear-with-blends psi on [0, inf).  The slope starts at 1
// and is multiplied by 2^{-h_j} past knot k_j.  Each slope drop D_j is blended
// over [k_j, k_j + w_j] with the smoothstep 3u^2 - 2u^3, w_j = max(1e-3, D_j),
// so psi is C^2 with -1.5 <= psi'' <= 0 and 0 < psi' <= 1.
class PsiFunction {
 public:
  PsiFunction() = default;  // the identity
  // Knots need not be sorted; coincident or overlapping knots are merged.
  PsiFunction(std::vector<double> knots, std::vector<int> halvings);

  double value(double r) const;
  double d1(double r) const;
  double d2(double r) const;

  const std::vector<double>& knots() const { return knots_; }
  const std::vector<int>& halvings() const { return halvings_; }
  const std::vector<double>& slopes() const { return slopes_; }  // slope after knot j
  const std::vector<double>& widths() const { return widths_; }
  bool is_identity() const { return knots_.empty(); }
  int total_halvings() const;

  // Psi(x) = psi(log(1 + |x|^2)) with analytic derivatives.
  double big_psi(const double* x, int dim) const;
  TestFunction as_test_function(int dim) const;

  nlohmann::json to_json() const;
  static PsiFunction from_json(const nlohmann::json& j);

 private:
  void build();
  std::size_t segment(double r) const;  // number of knots <= r

  std::vector<double> knots_;
  std::vector<int> halvings_;
  std::vector<double> slopes_;
  std::vector<double> widths_;
  std::vector<double> base_;  // psi(k_j)
};

struct PsiConstruction {
  PsiFunction psi;
  double weighted_sum = 0.0;  // sum_i w_i psi(r_i) / sum_i w_i
  double identity_sum = 0.0;  // the same with psi = identity
  bool halving_engaged = false;
  int iterations = 0;
  std::size_t levels = 0;
};

// Builds psi from weighted samples of r = log(1 + |x|^2).  Tail levels are the
// sets of atoms holding tail mass <= 2^{-j} (at least 4 atoms, distinct sets);
// while some level's conditional mean of psi(r) exceeds 1.5 times the previous
// level's, the slope is halved beyond the smallest positive r of the previous
// level.  At most 1000 halvings in total.
PsiConstruction construct_psi_from_r(const std::vector<double>& r,
                                     const std::vector<double>& weights = {});
PsiConstruction construct_psi(const EnsembleLaw& mu0_samples);

struct MomentEstimate {
  double mean = 0.0;
  double se = 0.0;
};

// E sup_t Psi^{1/2}(X_t) over the merged grid (jump left limits included).
MomentEstimate lyapunov_moment(const Ensemble& e, const PsiFunction& psi);

struct TightnessReport {
  std::vector<double> K_grid;
  std::vector<double> prob_sup_exceeds;  // sup_n P(sup_t |X^n_t| > K)
  std::vector<double> theta_grid;
  std::vector<double> prob_increment;    // sup over n and stopping times of P(|X_{tau+theta} - X_tau| >= N)
  std::vector<double> lyapunov;          // per ensemble
  bool decays_iii = true;
  bool decays_iv = true;
};

// Stopping-time surrogates: deterministic times {0, T/4, T/2, 3T/4} and first
// exits from balls of radius {1, 2, 4}, all truncated at T - theta.
TightnessReport tightness_diagnostics(const std::vector<const Ensemble*>& family,
                                      const PsiFunction& psi, const std::vector<double>& K_grid,
                                      const std::vector<double>& theta_grid, double N_threshold);

struct BLFunction {
  std::string id;
  std::function<double(const double* x)> f;
};

struct EmpiricalDistanceConfig {
  enum class Mode { marginal_sup, wasserstein1_marginal };
  std::vector<BLFunction> dictionary;
  Mode mode = Mode::marginal_sup;

  // Tents max(0, 1 - |x - c|), sin(x_k + s), and tanh(x_k - c) along each axis.
  static EmpiricalDistanceConfig standard(int dim);
  // Throws ConfigError if some element exceeds bound 1 or Lipschitz constant 1
  // on the probe pairs.
  void validate(int dim) const;
};

struct DistanceEstimate {
  double distance = 0.0;
  double se = 0.0;
  std::string argmax;
};

// max over the dictionary of |E_1 phi - E_2 phi|.  With paired = true the two
// clouds are treated as coupled particle by particle (same size, equal weights).
DistanceEstimate bl_distance(const EnsembleLaw& a, const EnsembleLaw& b,
                             const EmpiricalDistanceConfig& cfg, bool paired = false);

// Sample paths of xi, eta, A, M on a common grid: values are path-major,
// n_paths x times.size().
struct GronwallPaths {
  std::vector<double> times;
  std::size_t n_paths = 0;
  std::vector<double> xi, eta, A, M;

  double at(const std::vector<double>& v, std::size_t path, std::size_t i) const {
    return v[path * times.size() + i];
  }
};

struct GronwallResult {
  double lhs = 0.0, rhs = 0.0;
  double lhs_se = 0.0, rhs_se = 0.0;
  bool pass = false;
};

// (E sup_{t<=tau} xi^q)^{1/q} <= (p/(p-q))^{1/q} (E exp{p A_tau/(1-p)})^{(1-p)/p} E sup_{t<=tau} eta.
// tau is a grid index.  The hypothesis xi <= eta + int xi dA + M is checked with
// the upper Riemann sum of the integral; violations throw HypothesisError.
GronwallResult gronwall_check(const GronwallPaths& paths, double p, double q, std::size_t tau);

// Paths satisfying the hypothesis by construction: M = c (E - 1) for a
// discrete exponential martingale E, eta >= c, and
// xi_i = u_i (eta_i + sum_{j<i} xi_j dA_j + M_i) with u_i uniform on [0, 1].
GronwallPaths random_gronwall_instance(std::uint64_t seed, std::size_t n_paths,
                                       std::size_t steps, double T = 1.0);

struct LimitRow {
  int n = 0;
  double distance = 0.0;
  double se = 0.0;
  double time_at_max = 0.0;
  std::string phi_at_max;
  double density_sup = 0.0;  // Scott-rule histogram sup over checkpoints
  double lyapunov = 0.0;
};

struct LimitReport {
  std::vector<LimitRow> rows;
  double limit_density_sup = 0.0;
  double gamma_sup = 0.0;
  double l_bound = 0.0;  // 1 / (sqrt(2) Gamma)
  bool monotone = true;
  bool ratio_ok = true;
  bool pass = false;
  std::vector<std::string> assumptions;
};

struct LimitOptions {
  std::size_t checkpoints = 10;
  EngineOptions engine;
};

// Enforces l <= 1/(sqrt(2) Gamma).  PASS iff d(n_max) <= d(n_min)/4 and every
// consecutive step d_{k+1} <= d_k + 2 sqrt(se_k^2 + se_{k+1}^2).
LimitReport limit_experiment(const CoefficientFamily& family, const Driver& driver,
                             const InitialLaw& mu0, const std::vector<int>& schedule,
                             const TimeGrid& grid, std::size_t n, std::uint64_t seed,
                             const EmpiricalDistanceConfig& cfg, const LimitOptions& opts = {});

// Scott-rule histogram estimate of sup_x rho(x) for a cloud.
double histogram_density_sup(const EnsembleLaw& law);

}  // namespace levylab
