#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "levylab/rng.hpp"

using namespace levylab;

TEST_CASE("philox4x32-10 known-answer vectors") {
  CHECK(philox4x32_10({0, 0, 0, 0}, {0, 0}) ==
        PhiloxCounter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  CHECK(philox4x32_10({~0u, ~0u, ~0u, ~0u}, {~0u, ~0u}) ==
        PhiloxCounter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  CHECK(philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                      {0xa4093822u, 0x299f31d0u}) ==
        PhiloxCounter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("streams depend only on their address") {
  RngStream a(42, 7, Purpose::brownian), b(42, 7, Purpose::brownian);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u32() == b.next_u32());

  RngStream c(42, 7, Purpose::driver_jumps), d(42, 8, Purpose::brownian), e(43, 7, Purpose::brownian);
  RngStream ref(42, 7, Purpose::brownian);
  int same_c = 0, same_d = 0, same_e = 0;
  for (int i = 0; i < 256; ++i) {
    const auto r = ref.next_u32();
    same_c += c.next_u32() == r;
    same_d += d.next_u32() == r;
    same_e += e.next_u32() == r;
  }
  CHECK(same_c < 3);
  CHECK(same_d < 3);
  CHECK(same_e < 3);
}

TEST_CASE("high particle indices stay distinct") {
  RngStream a(1, 5, Purpose::generic), b(1, 5 + (1ull << 32), Purpose::generic);
  CHECK(a.next_u32() != b.next_u32());
}

TEST_CASE("uniform lies in the open unit interval with the right moments") {
  RngStream r(9, 0, Purpose::generic);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    s += u;
    s2 += u * u;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  CHECK(std::fabs(mean - 0.5) < 4.0 * std::sqrt(1.0 / 12.0 / n));
  CHECK(std::fabs(var - 1.0 / 12.0) < 0.002);
}

TEST_CASE("normal moments") {
  RngStream r(11, 3, Purpose::brownian);
  const int n = 200000;
  double s = 0.0, s2 = 0.0, s4 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
    s4 += z * z * z * z;
  }
  CHECK(std::fabs(s / n) < 4.0 / std::sqrt(n));
  CHECK(std::fabs(s2 / n - 1.0) < 4.0 * std::sqrt(2.0 / n));
  CHECK(std::fabs(s4 / n - 3.0) < 4.0 * std::sqrt(96.0 / n));
}

TEST_CASE("poisson mean and variance on both sampler branches") {
  for (double mean : {0.3, 4.0, 29.5, 30.0, 250.0}) {
    RngStream r(5, static_cast<std::uint64_t>(mean * 10), Purpose::driver_jumps);
    const int n = 40000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double k = static_cast<double>(r.poisson(mean));
      s += k;
      s2 += k * k;
    }
    const double m = s / n, v = s2 / n - m * m;
    CAPTURE(mean);
    CHECK(std::fabs(m - mean) < 4.0 * std::sqrt(mean / n));
    CHECK(std::fabs(v / mean - 1.0) < 0.05);
  }
  RngStream r(5, 0, Purpose::generic);
  CHECK(r.poisson(0.0) == 0);
}

TEST_CASE("poisson pmf chi-square at mean 3") {
  RngStream r(77, 1, Purpose::generic);
  const int n = 50000, K = 10;
  std::vector<double> count(K + 1, 0.0);
  for (int i = 0; i < n; ++i) count[std::min<std::uint64_t>(r.poisson(3.0), K)] += 1.0;
  double chi2 = 0.0, p = std::exp(-3.0), tail = 1.0;
  for (int k = 0; k < K; ++k) {
    chi2 += std::pow(count[k] - n * p, 2) / (n * p);
    tail -= p;
    p *= 3.0 / (k + 1);
  }
  chi2 += std::pow(count[K] - n * tail, 2) / (n * tail);
  CHECK(chi2 < 30.0);  // 10 degrees of freedom, p ~ 1e-3
}

TEST_CASE("below stays in range and covers it") {
  RngStream r(3, 3, Purpose::resampling);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 5000; ++i) {
    const auto k = r.below(17);
    REQUIRE(k < 17);
    seen.insert(k);
  }
  CHECK(seen.size() == 17);
  CHECK(r.below(1) == 0);
  CHECK(r.below(0) == 0);
}

TEST_CASE("derived seeds separate tags") {
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
}
