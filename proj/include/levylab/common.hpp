#pragma once

#include <stdexcept>
#include <string>
#include <limits>
#include <vector>

namespace levylab {

using Vec = std::vector<double>;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// Invalid configuration: negative masses, l <= 0, malformed manifests.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A quantity that must be finite (a Poisson intensity, a compensator) is not.
class InfiniteMassError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A model hypothesis or an integrability guard failed on the supplied inputs.
class HypothesisError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class SimulationError : public std::runtime_error {
 public:
  SimulationError(const std::string& what, double time)
      : std::runtime_error(what), time_(time) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

inline double norm2(const double* x, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) s += x[i] * x[i];
  return s;
}

}  // namespace levylab
