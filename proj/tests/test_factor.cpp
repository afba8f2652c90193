#include <cmath>

#include "doctest.h"
#include "fdb/factor.hpp"
#include "helpers.hpp"

using fdb::Rng;
using fdb::ScenarioSpec;
using fdb::Vec;

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// E[e^{c|X|}] for X ~ N(0, s^2)
double folded_exp_moment(double c, double s) {
  return 2.0 * std::exp(0.5 * c * c * s * s) * normal_cdf(c * s);
}

}  // namespace

TEST_CASE("zero-noise flow follows the exponential decay of the drift") {
  ScenarioSpec spec = fdbtest::load_example("flat");  // drift -phi, kappa = 1
  Rng rng(5);
  Vec phi0 = Vec::Constant(1, 1.5);
  fdb::FactorSegment seg =
      fdb::simulate_factor(spec, 0, phi0, 0.0, 1.0, 1e-4, rng, /*zero_noise=*/true);
  CHECK(seg.t0 == 0.0);
  CHECK(seg.t1 == 1.0);
  CHECK(seg.values(0, 0) == 1.5);
  CHECK(seg.values(seg.steps(), 0) ==
        doctest::Approx(1.5 * std::exp(-1.0)).epsilon(2e-4));
  // all increments are frozen at zero
  CHECK(seg.increments.cwiseAbs().maxCoeff() == 0.0);
  // uniform interior steps, exact endpoint
  double t = 0.0;
  for (int k = 0; k < seg.steps(); ++k) t += seg.step_sizes(k);
  CHECK(t == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(fdb::simulate_factor(spec, 0, phi0, 0.0, 1.0, 0.0, rng),
                  fdb::NumericalError);
  CHECK_THROWS_AS(fdb::simulate_factor(spec, 0, phi0, 1.0, 0.5, 1e-3, rng),
                  fdb::NumericalError);
}

TEST_CASE("cascade path stitches segments through the jump map exactly") {
  ScenarioSpec spec = fdbtest::load_example("curved");  // varphi = +0.2 constant
  Rng rng(11);
  fdb::DefaultDraw draw = fdb::sample_defaults(spec, rng);
  const double horizon = draw.times(draw.times.size() - 1) + 1.0;
  fdb::FactorPath path = fdb::simulate_factor_path(spec, draw, horizon, 1e-3, rng);
  REQUIRE(path.segments.size() == 2);
  for (std::size_t s = 0; s + 1 < path.segments.size(); ++s) {
    const fdb::FactorSegment& a = path.segments[s];
    const fdb::FactorSegment& b = path.segments[s + 1];
    CHECK(a.t1 == doctest::Approx(draw.times(static_cast<Eigen::Index>(s))).epsilon(1e-12));
    CHECK(b.t0 == a.t1);
    Vec pre = a.values.row(a.steps()).transpose();
    Vec post = fdb::apply_jump(spec, static_cast<int>(s), pre);
    CHECK(b.values(0, 0) == post(0));  // exact stitching, no re-rounding
    CHECK(post(0) == doctest::Approx(pre(0) + 0.2).epsilon(1e-15));
  }
  CHECK(path.segments.back().t1 == doctest::Approx(horizon).epsilon(1e-12));
}

TEST_CASE("synchronous coupling contracts at the declared rate") {
  ScenarioSpec spec = fdbtest::load_example("flat");
  Vec a = Vec::Constant(1, 2.0), b = Vec::Constant(1, -1.0);
  fdb::CouplingReport rep = fdb::ergodic_coupling_check(spec, 0, a, b, 5.0, 1e-3, 99);
  CHECK(rep.pass);
  CHECK(rep.sup_ratio <= rep.tolerance);
  CHECK(rep.sup_ratio >= 0.9);  // the ratio starts at 1 at time zero
  CHECK_THROWS_AS(fdb::ergodic_coupling_check(spec, 0, a, a, 5.0, 1e-3, 99),
                  fdb::NumericalError);

  // an inflated dissipativity declaration makes the check fail honestly
  ScenarioSpec wrong = spec;
  wrong.dissipativity = 2.0;
  fdb::CouplingReport bad = fdb::ergodic_coupling_check(wrong, 0, a, b, 5.0, 1e-3, 99);
  CHECK(!bad.pass);
}

TEST_CASE("exponential moment probe matches the stationary OU oracle") {
  // dPhi = -Phi dt + dW has stationary law N(0, 1/2)
  ScenarioSpec spec = fdbtest::load_example("flat");
  const double c = 0.5;
  Vec times(4);
  times << 2.0, 4.0, 6.0, 8.0;
  fdb::MomentProbe probe =
      fdb::exponential_moment_probe(spec, 0, c, times, 4000, 0.01, 31);
  REQUIRE(probe.upper.size() == 4);
  const double s = std::sqrt(0.5);
  const double upper_oracle = folded_exp_moment(c, s);
  const double lower_oracle = folded_exp_moment(-c, s);
  CHECK(probe.stabilized);
  CHECK(probe.upper(3) == doctest::Approx(upper_oracle).epsilon(0.05));
  CHECK(probe.lower(3) == doctest::Approx(lower_oracle).epsilon(0.05));
  // e^{-c|x|} <= 1 <= e^{c|x|} pathwise
  for (int i = 0; i < 4; ++i) {
    CHECK(probe.lower(i) <= 1.0 + 1e-12);
    CHECK(probe.upper(i) >= 1.0 - 1e-12);
  }
}

TEST_CASE("brownian increments are reproducible and thread-independent draws") {
  ScenarioSpec spec = fdbtest::load_example("flat");
  Rng r1 = Rng::for_path(123, 7);
  Rng r2 = Rng::for_path(123, 7);
  Vec phi0 = Vec::Zero(1);
  fdb::FactorSegment s1 = fdb::simulate_factor(spec, 0, phi0, 0.0, 0.5, 1e-3, r1);
  fdb::FactorSegment s2 = fdb::simulate_factor(spec, 0, phi0, 0.0, 0.5, 1e-3, r2);
  CHECK((s1.values - s2.values).cwiseAbs().maxCoeff() == 0.0);
  CHECK((s1.increments - s2.increments).cwiseAbs().maxCoeff() == 0.0);
  Rng r3 = Rng::for_path(123, 8);
  fdb::FactorSegment s3 = fdb::simulate_factor(spec, 0, phi0, 0.0, 0.5, 1e-3, r3);
  CHECK((s1.values - s3.values).cwiseAbs().maxCoeff() > 0.0);
}
