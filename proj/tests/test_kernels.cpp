#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "levylab/kernels.hpp"
#include "levylab/rng.hpp"
#include "oracles/reduction_oracle.hpp"

using namespace levylab;
namespace k = levylab::kernels;

namespace {

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

std::vector<double> hostile(std::size_t n, std::uint64_t seed) {
  RngStream r(seed, n, Purpose::generic);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = r.normal() * std::pow(10.0, static_cast<int>(r.below(21)) - 10);
    if (i % 7 == 0) v[i] += 1e16;
    if (i % 11 == 0) v[i] -= 1e16;
  }
  return v;
}

void compare_tables(const k::KernelTable& a, const k::KernelTable& b) {
  for (std::size_t n = 0; n <= 263; ++n) {
    const auto x = hostile(n, 1), y = hostile(n, 2);
    CAPTURE(n);
    REQUIRE(same_bits(a.sum(x.data(), n), b.sum(x.data(), n)));
    REQUIRE(same_bits(a.dot(x.data(), y.data(), n), b.dot(x.data(), y.data(), n)));
    if (n) REQUIRE(same_bits(a.max(x.data(), n), b.max(x.data(), n)));

    auto xa = x, xb = x;
    a.euler_affine(xa.data(), y.data(), -0.7, 0.3, 1.3, 0.01, n);
    b.euler_affine(xb.data(), y.data(), -0.7, 0.3, 1.3, 0.01, n);
    for (std::size_t i = 0; i < n; ++i) REQUIRE(same_bits(xa[i], xb[i]));

    xa = x;
    xb = x;
    a.add(xa.data(), y.data(), n);
    b.add(xb.data(), y.data(), n);
    for (std::size_t i = 0; i < n; ++i) REQUIRE(same_bits(xa[i], xb[i]));

    xa = x;
    xb = x;
    a.axpy(xa.data(), -2.5, y.data(), n);
    b.axpy(xb.data(), -2.5, y.data(), n);
    for (std::size_t i = 0; i < n; ++i) REQUIRE(same_bits(xa[i], xb[i]));
  }
}

}  // namespace

TEST_CASE("scalar reference reproduces the canonical order") {
  for (std::size_t n : {0u, 1u, 7u, 8u, 9u, 16u, 100u, 1001u}) {
    const auto x = hostile(n, 3);
    CHECK(same_bits(k::scalar_table().sum(x.data(), n), oracle::canonical_sum(x.data(), n)));
    std::vector<double> p(n);
    const auto y = hostile(n, 4);
    for (std::size_t i = 0; i < n; ++i) p[i] = x[i] * y[i];
    CHECK(same_bits(k::scalar_table().dot(x.data(), y.data(), n), oracle::canonical_sum(p.data(), n)));
  }
}

TEST_CASE("euler update follows (x + (a x + c) dt) + s dw") {
  double x[3] = {1.0, -2.0, 0.5};
  const double dw[3] = {0.1, 0.2, -0.3};
  k::scalar_table().euler_affine(x, dw, -1.0, 0.5, 2.0, 0.01, 3);
  CHECK(same_bits(x[0], (1.0 + (-1.0 * 1.0 + 0.5) * 0.01) + 2.0 * 0.1));
  CHECK(same_bits(x[1], (-2.0 + (-1.0 * -2.0 + 0.5) * 0.01) + 2.0 * 0.2));
}

TEST_CASE("avx2 kernels are bitwise equal to the scalar reference") {
  const k::KernelTable* avx = k::avx2_table();
  if (!avx || !k::isa_available(k::Isa::avx2)) {
    MESSAGE("AVX2 not available on this machine; equivalence not exercised");
    return;
  }
  compare_tables(k::scalar_table(), *avx);
}

TEST_CASE("neon kernels are bitwise equal to the scalar reference") {
  const k::KernelTable* neon = k::neon_table();
  if (!neon || !k::isa_available(k::Isa::neon)) {
    MESSAGE("NEON not available on this machine; equivalence not exercised");
    return;
  }
  compare_tables(k::scalar_table(), *neon);
}

TEST_CASE("runtime selection and fallback") {
  const k::Isa before = k::active_isa();
  k::set_isa(k::Isa::scalar);
  CHECK(k::active_isa() == k::Isa::scalar);
  const double v[3] = {1, 2, 3};
  CHECK(k::sum(v, 3) == 6.0);
#if !defined(__aarch64__)
  k::set_isa(k::Isa::neon);
  CHECK(k::active_isa() == k::Isa::scalar);
#endif
  k::set_isa(before);
  CHECK(k::active_isa() == before);
  CHECK(k::isa_name(k::Isa::avx2) == "avx2");
}
