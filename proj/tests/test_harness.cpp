#include <cmath>
#include <limits>

#include "doctest.h"
#include "fdb/harness.hpp"
#include "helpers.hpp"

using fdb::ScenarioSpec;
using fdb::Vec;

namespace {

struct FlatSetup {
  ScenarioSpec spec;
  fdb::ConstantsLedger led;
  fdb::BsdeSolution sol;
  double y0 = 0.0;  // regime-0 value at the initial factor
};

FlatSetup flat_setup() {
  FlatSetup s;
  s.spec = fdbtest::load_example("flat");
  s.led = fdb::compute_constants(s.spec);
  fdb::SolveOptions opts;
  opts.newton_polish = true;
  s.sol = fdb::solve_chain(s.spec, s.led, s.spec.rho, opts);
  s.y0 = s.sol.grid.interpolate(s.sol.regimes[0].y, s.spec.initial_factor);
  return s;
}

}  // namespace

TEST_CASE("strategy transformations of the solved fields") {
  FlatSetup s = flat_setup();

  fdb::SolvedFields opt = fdb::make_fields(s.spec, s.sol);
  CHECK(opt.pi[0].col(0).minCoeff() == doctest::Approx(0.2).epsilon(1e-6));
  CHECK(opt.pi[0].col(0).maxCoeff() == doctest::Approx(0.2).epsilon(1e-6));
  CHECK(opt.pi[1].col(0).mean() == doctest::Approx(0.1).epsilon(1e-6));

  fdb::StrategySpec zero;
  zero.kind = fdb::StrategySpec::Kind::zero;
  fdb::SolvedFields zf = fdb::make_fields(s.spec, s.sol, zero);
  CHECK(zf.pi[0].cwiseAbs().maxCoeff() == 0.0);

  fdb::StrategySpec scaled;
  scaled.kind = fdb::StrategySpec::Kind::scaled_clipped;
  scaled.scale = 1.5;
  fdb::SolvedFields sf = fdb::make_fields(s.spec, s.sol, scaled);
  CHECK(sf.pi[0].col(0).mean() == doctest::Approx(0.3).epsilon(1e-6));
  CHECK(sf.pi[1].col(0).mean() == doctest::Approx(0.15).epsilon(1e-6));

  fdb::StrategySpec flip;
  flip.kind = fdb::StrategySpec::Kind::flip_first;
  fdb::SolvedFields ff = fdb::make_fields(s.spec, s.sol, flip);
  CHECK(ff.pi[0].col(0).mean() == doctest::Approx(-0.2).epsilon(1e-6));

  fdb::StrategySpec cst;
  cst.kind = fdb::StrategySpec::Kind::constant;
  cst.constant = Vec::Constant(1, 5.0);  // projected into the radius-1 box
  fdb::SolvedFields cf = fdb::make_fields(s.spec, s.sol, cst);
  CHECK(cf.pi[1].col(0).mean() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("optimal strategy is a martingale, competitors are supermartingales") {
  FlatSetup s = flat_setup();
  Vec cps(2);
  cps << 0.5, 1.0;
  fdb::SimOptions opts;
  opts.paths = 1500;
  opts.dt = 2e-3;
  opts.seed = 42;

  fdb::SolvedFields opt = fdb::make_fields(s.spec, s.sol);
  for (int n : {0, 1}) {
    fdb::MartingaleReport rep =
        fdb::martingale_test(s.spec, opt, n, cps, /*two_sided=*/true, opts);
    CHECK(rep.all_pass);
    CHECK(rep.excluded == 0);
    // the start value is the closed-form -e^{gamma(y^n(start) - Y_0)}
    const double start_phi0 =
        n == 0 ? s.y0
               : s.sol.grid.interpolate(
                     s.sol.regimes[1].y,
                     fdb::regime_start_factor(s.spec, 1));
    CHECK(rep.v_start == doctest::Approx(-std::exp(start_phi0 - s.y0)).epsilon(1e-12));
  }

  fdb::StrategySpec scaled;
  scaled.kind = fdb::StrategySpec::Kind::scaled_clipped;
  fdb::SolvedFields sf = fdb::make_fields(s.spec, s.sol, scaled);
  for (int n : {0, 1}) {
    fdb::MartingaleReport rep =
        fdb::martingale_test(s.spec, sf, n, cps, /*two_sided=*/false, opts);
    CHECK(rep.all_pass);
  }
}

TEST_CASE("zero strategy: deterministic paths degrade gracefully") {
  FlatSetup s = flat_setup();
  fdb::StrategySpec zero;
  zero.kind = fdb::StrategySpec::Kind::zero;
  fdb::SolvedFields zf = fdb::make_fields(s.spec, s.sol, zero);
  Vec cps(1);
  cps << 1.0;
  fdb::SimOptions opts;
  opts.paths = 64;
  opts.dt = 1e-2;

  // force bit-identical constant fields: every path produces the same value
  fdb::SolvedFields exact = zf;
  exact.y[1].setConstant(-0.05);
  exact.z[1].setZero();

  // a two-sided test on a zero Monte Carlo spread cannot certify anything
  // and must say so
  CHECK_THROWS_AS(fdb::martingale_test(s.spec, exact, 1, cps, true, opts),
                  fdb::SemanticError);

  // the one-sided comparison stays valid: wealth sits still and V decays
  // strictly through the uncompensated jump term, by the factor e^{rho*0.05}
  fdb::MartingaleReport rep = fdb::martingale_test(s.spec, exact, 1, cps, false, opts);
  CHECK(rep.all_pass);
  CHECK(rep.se(0) <= 1e-14);  // last-ulp interpolation noise at most
  CHECK(rep.gap(0) < 0.0);
  CHECK(rep.gap(0) ==
        doctest::Approx(rep.v_start * (std::exp(0.005) - 1.0)).epsilon(1e-10));

  // the solved fields carry last-ulp noise, so the spread is tiny but nonzero
  // and the decay matches the same closed form
  fdb::MartingaleReport rep2 = fdb::martingale_test(s.spec, zf, 1, cps, false, opts);
  CHECK(rep2.all_pass);
  CHECK(rep2.se(0) <= 1e-12);
  CHECK(rep2.gap(0) ==
        doctest::Approx(rep2.v_start * (std::exp(0.005) - 1.0)).epsilon(1e-5));
}

TEST_CASE("terminal-regime log increments are exactly compensated") {
  FlatSetup s = flat_setup();
  fdb::SolvedFields opt = fdb::make_fields(s.spec, s.sol);
  Vec cps(1);
  cps << 1.0;
  fdb::SimOptions opts;
  opts.paths = 4000;
  opts.dt = 1e-3;
  opts.seed = 3;
  fdb::ComponentRun run = fdb::simulate_regime_component(s.spec, opt, 1, cps, opts);
  REQUIRE(run.v.rows() == 4000);

  // log(-V_1) - log(-V_0) = -pi alpha - rho y^1 + martingale increment,
  // so adding (pi alpha + rho y^1) t centers it exactly
  const double comp = 0.1 * 0.1 + 0.1 * (-0.05);
  Vec centered(run.v.rows());
  for (Eigen::Index i = 0; i < run.v.rows(); ++i)
    centered(i) = std::log(-run.v(i, 0)) - std::log(-run.v_start) + comp;
  const double mean = centered.mean();
  const double sd = std::sqrt((centered.array() - mean).square().sum() /
                              double(centered.size() - 1));
  const double se = sd / std::sqrt(double(centered.size()));
  CHECK(std::abs(mean) <= 3.0 * se);
  // quadratic variation of the log: |pi sigma|^2 t = 0.01
  CHECK(sd == doctest::Approx(0.1).epsilon(0.1));
}

TEST_CASE("decomposition identity holds on both regime components") {
  FlatSetup s = flat_setup();
  fdb::SolvedFields opt = fdb::make_fields(s.spec, s.sol);
  fdb::SimOptions opts;
  opts.paths = 1500;
  opts.dt = 2e-3;
  opts.seed = 9;
  for (int n : {0, 1}) {
    fdb::DecompositionReport rep =
        fdb::decomposition_identity_test(s.spec, opt, n, 1.0, opts);
    CHECK(rep.pass);
    CHECK(rep.s == 1.0);
    CHECK(rep.lhs < 0.0);
  }
}

TEST_CASE("growth estimate: optimal beats the flipped strategy") {
  FlatSetup s = flat_setup();
  Vec horizons(1);
  horizons << 15.0;
  fdb::SimOptions opts;
  opts.paths = 1200;
  opts.dt = 1e-2;
  opts.seed = 5;

  fdb::SolvedFields opt = fdb::make_fields(s.spec, s.sol);
  fdb::GrowthReport g_opt = fdb::growth_rate_estimate(s.spec, opt, horizons, opts);
  REQUIRE(!g_opt.skipped[0]);
  CHECK(g_opt.qualifying[0] >= 100);
  CHECK(std::abs(g_opt.rate(0) - (-0.005)) <= 3.0 * g_opt.se(0) + 2e-3);

  fdb::StrategySpec flip;
  flip.kind = fdb::StrategySpec::Kind::flip_first;
  fdb::SolvedFields ff = fdb::make_fields(s.spec, s.sol, flip);
  fdb::GrowthReport g_flip = fdb::growth_rate_estimate(s.spec, ff, horizons, opts);
  REQUIRE(!g_flip.skipped[0]);
  // flipping the position turns the drift against the investor: the
  // certified growth -0.005 degrades to about +0.015
  CHECK(g_flip.rate(0) > g_opt.rate(0) + 0.01);
}

TEST_CASE("first-default tail frequencies match the closed-form survival") {
  ScenarioSpec spec = fdbtest::load_example("flat");
  Vec times(3);
  times << 0.5, 1.0, 2.0;
  fdb::SurvivalCheck chk = fdb::survival_crosscheck(spec, times, 20000, 77);
  CHECK(chk.pass);
  for (int i = 0; i < 3; ++i) {
    CHECK(chk.analytic(i) == doctest::Approx(std::exp(-times(i))).epsilon(1e-12));
    CHECK(std::abs(chk.empirical(i) - chk.analytic(i)) <= 3.0 * chk.se(i) + 1e-12);
  }
}

TEST_CASE("bundle simulation: conditional wealth drift and G-field identity") {
  FlatSetup s = flat_setup();
  fdb::SolvedFields opt = fdb::make_fields(s.spec, s.sol);
  Vec cps(2);
  cps << 0.25, 1.0;
  fdb::SimOptions opts;
  opts.paths = 2500;
  opts.dt = 2e-3;
  opts.seed = 11;
  fdb::BundleSummary bundle = fdb::simulate_bundle(s.spec, opt, 1.0, cps, opts);
  REQUIRE(bundle.wealth.rows() + bundle.excluded == 2500);

  // paths with no default inside the horizon hold pi = 0.2 throughout:
  // E[X_1] = pi sigma alpha = 0.04
  double sum = 0.0, sumsq = 0.0;
  long k = 0;
  for (Eigen::Index i = 0; i < bundle.wealth.rows(); ++i) {
    if (bundle.t_first(i) <= 1.0) continue;
    const double x = bundle.wealth(i, 1);
    sum += x;
    sumsq += x * x;
    ++k;

    // on the no-default event the G-field value has the closed form
    // -e^{-rho y^0 t} e^{-X_t} in the flat scenario
    const double expected = -std::exp(-s.spec.rho * s.y0 * 1.0 - x);
    CHECK(bundle.u_hat(i, 1) == doctest::Approx(expected).epsilon(1e-6));
  }
  REQUIRE(k >= 500);
  const double mean = sum / double(k);
  const double se = std::sqrt((sumsq / k - mean * mean) / double(k));
  CHECK(std::abs(mean - 0.04) <= 3.0 * se);

  // survivors of the m-th default are marked with an infinite last time
  long finished = 0;
  for (Eigen::Index i = 0; i < bundle.t_last.size(); ++i)
    if (std::isfinite(bundle.t_last(i))) ++finished;
  const double frac = double(finished) / double(bundle.t_last.size());
  CHECK(std::abs(frac - (1.0 - std::exp(-1.0))) <= 0.03);
}

TEST_CASE("zero strategy keeps wealth identically zero through defaults") {
  FlatSetup s = flat_setup();
  fdb::StrategySpec zero;
  zero.kind = fdb::StrategySpec::Kind::zero;
  fdb::SolvedFields zf = fdb::make_fields(s.spec, s.sol, zero);
  Vec cps(2);
  cps << 0.5, 2.0;
  fdb::SimOptions opts;
  opts.paths = 300;
  opts.dt = 1e-2;
  fdb::BundleSummary bundle = fdb::simulate_bundle(s.spec, zf, 2.0, cps, opts);
  CHECK(bundle.wealth.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("simulation is deterministic in the seed and thread count") {
  FlatSetup s = flat_setup();
  fdb::SolvedFields opt = fdb::make_fields(s.spec, s.sol);
  Vec cps(2);
  cps << 0.5, 1.0;
  fdb::SimOptions a;
  a.paths = 400;
  a.dt = 5e-3;
  a.seed = 123;
  a.threads = 1;
  fdb::SimOptions b = a;
  b.threads = 3;

  fdb::BundleSummary ba = fdb::simulate_bundle(s.spec, opt, 1.0, cps, a);
  fdb::BundleSummary bb = fdb::simulate_bundle(s.spec, opt, 1.0, cps, b);
  REQUIRE(ba.wealth.rows() == bb.wealth.rows());
  CHECK((ba.wealth - bb.wealth).cwiseAbs().maxCoeff() == 0.0);
  CHECK((ba.u_hat - bb.u_hat).cwiseAbs().maxCoeff() == 0.0);

  fdb::ComponentRun ra = fdb::simulate_regime_component(s.spec, opt, 0, cps, a);
  fdb::ComponentRun rb = fdb::simulate_regime_component(s.spec, opt, 0, cps, b);
  CHECK((ra.v - rb.v).cwiseAbs().maxCoeff() == 0.0);

  fdb::SimOptions c = a;
  c.seed = 124;
  fdb::ComponentRun rc = fdb::simulate_regime_component(s.spec, opt, 0, cps, c);
  CHECK((ra.v - rc.v).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("pathwise invariants at defaults: wealth, prices, admissibility") {
  ScenarioSpec spec = fdbtest::load_example("curved");
  fdb::ConstantsLedger led = fdb::compute_constants(spec);
  fdb::SolveOptions so;
  so.newton_polish = true;
  fdb::BsdeSolution sol = fdb::solve_chain(spec, led, spec.rho, so);
  fdb::SolvedFields opt = fdb::make_fields(spec, sol);

  bool saw_default = false;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL}) {
    fdb::PathDetail path = fdb::simulate_path_detail(spec, opt, 6.0, 1e-3, seed);
    REQUIRE(path.factor.segments.size() == path.wealth.size());
    REQUIRE(path.factor.segments.size() == path.prices.size());
    for (std::size_t si = 0; si + 1 < path.factor.segments.size(); ++si) {
      saw_default = true;
      const fdb::FactorSegment& fa = path.factor.segments[si];
      const fdb::FactorSegment& fb = path.factor.segments[si + 1];

      // factor stitches through the jump map
      Vec pre = fa.values.row(fa.steps()).transpose();
      CHECK(fb.values(0, 0) ==
            doctest::Approx(fdb::apply_jump(spec, static_cast<int>(si), pre)(0))
                .epsilon(1e-14));

      // wealth jumps by exactly pi' beta at the pre-jump state
      const double before = path.wealth[si](fa.steps());
      const double after = path.wealth[si + 1](0);
      const double jump = path.pre_jump_pi[si].dot(path.pre_jump_beta[si]);
      CHECK(after - before == doctest::Approx(jump).epsilon(1e-12));
      CHECK(path.pre_jump_beta[si](0) == doctest::Approx(0.05).epsilon(1e-14));

      // prices take the multiplicative hit 1 + beta
      const double p_before = path.prices[si](fa.steps(), 0);
      const double p_after = path.prices[si + 1](0, 0);
      CHECK(p_after == doctest::Approx(p_before * 1.05).epsilon(1e-12));

      // the executed strategy sits inside the regime constraint set
      CHECK(spec.constraints[si].contains(path.pre_jump_pi[si], 1e-9));
    }
    for (const auto& prices : path.prices) CHECK(prices.minCoeff() > 0.0);
  }
  CHECK(saw_default);
}

TEST_CASE("leaving the factor box on most paths is a numerical error") {
  ScenarioSpec spec = fdbtest::load_example("flat");
  spec.grid.half_width = 0.3;  // stationary sd is 0.71: almost every path exits
  spec.grid.cells = 16;
  fdb::ConstantsLedger led = fdb::compute_constants(spec);
  fdb::BsdeSolution sol = fdb::solve_chain(spec, led, spec.rho);
  fdb::SolvedFields opt = fdb::make_fields(spec, sol);
  Vec cps(1);
  cps << 2.0;
  fdb::SimOptions opts;
  opts.paths = 200;
  opts.dt = 1e-2;
  CHECK_THROWS_AS(fdb::simulate_regime_component(spec, opt, 0, cps, opts),
                  fdb::NumericalError);
}
