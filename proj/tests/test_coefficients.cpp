#include <doctest.h>

#include <cmath>

#include "levylab/coefficients.hpp"
#include "levylab/convergence_lab.hpp"
#include "levylab/test_functions.hpp"

using namespace levylab;
using nlohmann::json;

TEST_CASE("registry builds the documented coefficient sets") {
  const auto ou = make_coefficients({{"name", "ou"}, {"params", {{"theta", 2.0}, {"mu", 0.5}, {"sigma", 0.3}}}});
  double x = 1.5, b, s;
  ou.drift(0.0, &x, &b);
  ou.diffusion(0.0, &x, &s);
  CHECK(b == doctest::Approx(-2.0 * 1.5 + 2.0 * 0.5));
  CHECK(s == 0.3);
  REQUIRE(ou.affine);
  CHECK(ou.affine->a == -2.0);
  CHECK(ou.affine->c == 1.0);

  const auto rot = make_coefficients({{"name", "rotation_degenerate"}, {"params", {{"omega", 1.0}, {"kappa", 0.5}}}});
  CHECK(rot.dim == 2);
  CHECK(rot.noise_dim == 1);
  CHECK_FALSE(rot.affine);

  CHECK_THROWS_AS(make_coefficients({{"name", "nope"}}), ConfigError);
  CHECK_THROWS_AS(make_coefficients({{"name", "ou"}, {"g", "weird"}}), ConfigError);
}

TEST_CASE("jump shape g") {
  const auto c = make_coefficients({{"name", "zero"}, {"gamma", 2.0}, {"g", "linear_growth"}});
  const double x = -3.0;
  CHECK(c.f(0.0, &x) == doctest::Approx(2.0 * 4.0));
  CHECK_FALSE(c.f_constant());
  const auto one = make_coefficients({{"name", "zero"}, {"gamma", 0.7}});
  CHECK(one.f_constant());
  CHECK(one.f(0.0, &x) == 0.7);
}

TEST_CASE("families: exact copy for a zero perturbation, 1/n shifts otherwise") {
  const json spec = {{"name", "ou"}, {"params", {{"theta", 1.0}, {"sigma", 1.0}}}, {"gamma", 1.0}};
  const auto same = make_family(spec, Perturbation{});
  const double x = 0.7;
  double b0, b1;
  same.limit.drift(0.0, &x, &b0);
  same.member(5).drift(0.0, &x, &b1);
  CHECK(b0 == b1);

  Perturbation p;
  p.drift_shift = 1.0;
  p.sigma_scale = 0.5;
  p.gamma_shift = 0.5;
  const auto fam = make_family(spec, p);
  const auto m4 = fam.member(4);
  m4.drift(0.0, &x, &b1);
  CHECK(b1 == doctest::Approx(b0 + 0.25));
  double s;
  m4.diffusion(0.0, &x, &s);
  CHECK(s == doctest::Approx(1.125));
  CHECK(m4.gamma == doctest::Approx(1.125));
  CHECK(fam.gamma_sup() == doctest::Approx(1.5));
  CHECK_THROWS_AS(fam.member(0), ConfigError);

  p.drift_sin = 0.5;
  const auto wavy = make_family(spec, p).member(2);
  wavy.drift(0.0, &x, &b1);
  CHECK(b1 == doctest::Approx(b0 + 0.5 + 0.25 * std::sin(x)));
  CHECK_FALSE(wavy.affine);
}

TEST_CASE("linear growth probe") {
  const auto ou = make_coefficients({{"name", "ou"}});
  const auto g = probe_linear_growth(ou, ProbeGrid::standard(1, 1.0));
  CHECK_FALSE(g.superlinear);
  CHECK(g.c1 > 0.0);

  CoefficientSet cubic = ou;
  cubic.drift = [](double, const double* x, double* out) { out[0] = -x[0] * x[0] * x[0]; };
  const auto bad = probe_linear_growth(cubic, ProbeGrid::standard(1, 1.0));
  CHECK(bad.superlinear);
  CHECK(std::fabs(bad.witness_x[0]) == 1000.0);
}

TEST_CASE("initial laws") {
  const InitialLaw n = InitialLaw::normal({1.0}, {2.0});
  RngStream rng(1, 0, Purpose::initial_state);
  double s = 0.0;
  for (int i = 0; i < 20000; ++i) {
    double x;
    n.sample(rng, &x);
    s += x;
  }
  CHECK(std::fabs(s / 20000 - 1.0) < 4.0 * 2.0 / std::sqrt(20000.0));
  const InitialLaw back = InitialLaw::from_json(InitialLaw::uniform({0.0, 1.0}, {1.0, 3.0}).to_json());
  CHECK(back.kind == InitialLaw::Kind::uniform);
  CHECK(back.b[1] == 3.0);
  CHECK_THROWS_AS(InitialLaw::from_json({{"kind", "normal"}, {"mean", {0.0, 1.0}}, {"sd", {1.0}}}), ConfigError);
}

TEST_CASE("test function derivatives agree with finite differences") {
  for (int d : {1, 2}) {
    const auto probes = derivative_probes(d, 4.0, 41);
    for (const auto& f : standard_dictionary(d, 1.0)) {
      CAPTURE(f.id);
      const auto chk = check_derivatives(f, probes);
      CHECK(chk.ok);
    }
    CHECK(check_derivatives(log_growth_identity(d), probes).ok);
    const PsiFunction psi({0.5, 2.0}, {1, 3});
    CHECK(check_derivatives(psi.as_test_function(d), probes, 1e-4).ok);
  }
}

TEST_CASE("windowed polynomial is exactly one inside and zero outside") {
  const auto w = windowed_polynomial("w", {0.0}, 0, 1.0, 2.0);
  for (double x : {-1.0, -0.3, 0.0, 0.99, 1.0}) CHECK(w(&x) == 1.0);
  for (double x : {-2.0, 2.0, 2.5, -10.0}) CHECK(w(&x) == 0.0);
  const auto bump = smooth_bump("b", {1.0}, 0.5);
  const double c = 1.0, out = 1.5;
  CHECK(bump(&c) == doctest::Approx(1.0));
  CHECK(bump(&out) == 0.0);
}
