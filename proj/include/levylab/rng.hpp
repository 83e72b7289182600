#pragma once

// Counter-based random streams.
//
// Every random draw in the laboratory comes from a Philox4x32-10 block cipher
// keyed by the master seed and addressed by (particle index, purpose, block
// counter).  A stream therefore depends only on its address, never on which
// worker thread consumed it or in which order.

#include <array>
#include <cstdint>
#include <limits>
#include <string_view>

namespace levylab {

/// What a stream is used for.  Two streams with the same particle index but
/// different purposes are statistically independent.
enum class Purpose : std::uint32_t {
  initial_state = 1,
  brownian = 2,
  driver_jumps = 3,
  obs_noise = 4,
  obs_proposals = 5,
  obs_thinning = 6,
  quadrature = 7,
  resampling = 8,
  generic = 9,
};

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

/// Philox4x32 with 10 rounds (Salmon et al. constants).
PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key) noexcept;

/// SplitMix64 finalizer; used to derive child seeds from a master seed.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Deterministically derive a seed for a named sub-experiment.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) noexcept;

class RngStream {
 public:
  using result_type = std::uint32_t;

  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t particle, Purpose purpose) noexcept;

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() noexcept { return next_u32(); }

  std::uint32_t next_u32() noexcept;
  /// Uniform on the open interval (0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Standard normal via Box-Muller on two uniforms.
  double normal() noexcept;
  /// Poisson with the given mean (inversion below 30, PTRS above).
  std::uint64_t poisson(double mean);
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;

  std::uint64_t blocks_used() const noexcept { return block_; }

 private:
  void refill() noexcept;

  PhiloxKey key_{};
  std::uint32_t particle_lo_ = 0;
  std::uint32_t tag_ = 0;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace levylab
