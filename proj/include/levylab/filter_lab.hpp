#pragma once

// Weighted-particle filter for a signal observed through a Brownian channel
// plus a thinned Poisson point process.
//
// Particles move under the signal law alone and never see the observation;
// the observation enters only through log-weights.  Both the observation
// thinning and the weights evaluate h and lambda at the left end of each base
// cell, so the filter is exact for the discretized observation model.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "levylab/convergence_lab.hpp"
#include "levylab/sde_engine.hpp"

namespace levylab {

class ObservationModel {
 public:
  ObservationModel() = default;

  int dim_x() const { return dim_x_; }
  int dim_y() const { return dim_y_; }
  const LevyMeasure& nu2() const { return nu2_; }
  const Annulus& U0() const { return U0_; }
  double iota() const { return iota_; }
  const nlohmann::json& spec() const { return spec_; }

  void h(const double* x, double* out) const { h_(x, out); }
  double lambda(const double* x, const double* u) const { return lambda_(x, u); }
  double L(const double* u) const { return L_(u); }
  // True when lambda does not depend on x; h may still.
  bool lambda_state_free() const { return lambda_free_; }
  bool h_zero() const { return h_zero_; }

  // int_{U0} (1 - lambda(x, u)) nu2(du) by the model's quadrature.
  double compensator(const double* x) const;
  // Quadrature nodes over U0 and over the whole support of nu2.
  const std::vector<Atom>& nodes_U0() const { return nodes_U0_; }
  const std::vector<Atom>& nodes_all() const { return nodes_all_; }

  // Mass conditions and 0 < iota <= L(u) < lambda(x, u) < 1 on probe pairs.
  // Throws HypothesisError with a witness.
  void validate(double T = 1.0) const;

  friend ObservationModel make_observation_model(const nlohmann::json& spec, int dim_x);

 private:
  int dim_x_ = 1;
  int dim_y_ = 1;
  std::function<void(const double*, double*)> h_;
  std::function<double(const double*, const double*)> lambda_;
  std::function<double(const double*)> L_;
  bool lambda_free_ = false;
  bool h_zero_ = false;
  LevyMeasure nu2_ = LevyMeasure::zero(1);
  Annulus U0_ = Annulus::ball(1.0);
  double iota_ = 0.0;
  std::vector<Atom> nodes_U0_;
  std::vector<Atom> nodes_all_;
  nlohmann::json spec_;
};

// spec: {"h": {"name": zero|identity|linear|tanh, ...},
//        "lambda": {"name": constant|logistic_abs, ...}, "L_floor": value,
//        "nu2": measure, "U0": {"r_lo", "r_hi"}, "quadrature": {...}}
ObservationModel make_observation_model(const nlohmann::json& spec, int dim_x);

// Observation randomness that does not depend on the signal.  Sharing it
// across a coupled family couples the observations.
struct ObservationNoise {
  TimeGrid grid;
  int dim_y = 1;
  std::vector<double> dW;            // steps x dim_y
  std::vector<JumpEvent> proposals;  // Poisson(T nu2) atoms, time-sorted
  std::vector<double> uniforms;      // one thinning uniform per proposal
};

ObservationNoise sample_observation_noise(const ObservationModel& model, const TimeGrid& grid,
                                          std::uint64_t seed);

struct ObservationRecord {
  TimeGrid grid;
  int dim_y = 1;
  std::vector<double> cont_increments;  // steps x dim_y
  std::vector<JumpEvent> jump_events_U0;
  std::vector<JumpEvent> jump_events_big;
  std::string truth_link;  // diagnostics only

  const double* increment(std::size_t cell) const {
    return cont_increments.data() + cell * dim_y;
  }
  nlohmann::json to_json() const;
  static ObservationRecord from_json(const nlohmann::json& j);
};

// Cell containing time t, i.e. t in (t_c, t_c+1]; t = 0 maps to cell 0.
std::size_t cell_of(const TimeGrid& grid, double t);

ObservationRecord simulate_observation(const CadlagPath& signal, const ObservationModel& model,
                                       const ObservationNoise& noise);
ObservationRecord simulate_observation(const CadlagPath& signal, const ObservationModel& model,
                                       const TimeGrid& grid, std::uint64_t seed);

// Log-likelihood increment over one cell for a particle at x = X_{t_c}.
// `events` are the U0 events of the cell.
double cell_log_increment(const ObservationModel& model, const double* x, const double* dy,
                          const JumpEvent* events, std::size_t n_events, double dt);

// log Sigma_T along a whole path.
double log_likelihood(const CadlagPath& particle, const ObservationRecord& obs,
                      const ObservationModel& model);

struct FilterState {
  double t = 0.0;
  int dim = 1;
  std::vector<double> particles;
  std::vector<double> log_weights;
  double log_normalizer = 0.0;  // log rho_t(1)
  double ess = 0.0;
  bool resampled = false;

  std::size_t size() const { return log_weights.size(); }
  double normalizer() const { return std::exp(log_normalizer); }
  // Normalized weights; sum to one.
  std::vector<double> weights() const;
  EnsembleLaw law() const;
};

// pi_t(phi) by log-sum-exp.
double filter_mean(const FilterState& s, const std::function<double(const double*)>& phi);

struct ResamplingConfig {
  bool enabled = false;
  double threshold = 0.5;  // resample when ESS < threshold * N
};

struct FilterOptions {
  ResamplingConfig resampling;
  EngineOptions engine;
  std::size_t record_every = 1;  // keep every k-th state (the last is always kept)
};

// obs == nullptr runs the particles with no weighting at all.
std::vector<FilterState> filter_run(const ObservationModel& model, const CoefficientSet& signal,
                                    const Driver& driver, const InitialLaw& mu0,
                                    const TimeGrid& grid, const ObservationRecord* obs,
                                    std::size_t n_particles,
                                    std::uint64_t seed, const FilterOptions& opts = {});

struct RobustnessRow {
  int n = 0;
  double D = 0.0;
  double se = 0.0;
  double h_gap = 0.0;       // E int |h(X^n) - h(X)|^2 dt on the filter particles
  double lambda_gap = 0.0;  // E int int |log lambda(X^n,u) - log lambda(X,u)|^2 nu2(du) dt
};

struct RobustnessReport {
  std::vector<RobustnessRow> rows;
  std::vector<double> checkpoints;
  std::vector<std::string> phi_ids;
  bool monotone = true;
  bool ratio_ok = false;
  bool pass = false;
  std::vector<std::string> assumptions;
};

struct RobustnessOptions {
  std::size_t replicas = 8;
  std::size_t checkpoints = 10;
  FilterOptions filter;
};

RobustnessReport robustness_experiment(const CoefficientFamily& family, const Driver& driver,
                                       const InitialLaw& mu0, const ObservationModel& model,
                                       const std::vector<int>& schedule, const TimeGrid& grid,
                                       std::size_t n_particles, std::uint64_t seed,
                                       const EmpiricalDistanceConfig& dictionary,
                                       const RobustnessOptions& opts = {});

struct HLambdaRow {
  int n = 0;
  double h_gap = 0.0;
  double h_gap_se = 0.0;
  double lambda_gap = 0.0;
  double lambda_gap_se = 0.0;
};

struct HLambdaReport {
  std::vector<HLambdaRow> rows;
  bool h_decreasing = true;
  bool lambda_decreasing = true;
};

HLambdaReport hypothesis_checks_h_lambda(const FamilyEnsembles& fam, const ObservationModel& model);

}  // namespace levylab
