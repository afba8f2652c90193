#include <cmath>

#include "doctest.h"
#include "fdb/scenario.hpp"
#include "helpers.hpp"

using fdb::ScenarioSpec;
using fdb::Vec;

TEST_CASE("scalar family closed forms match dense evaluation") {
  fdb::ScalarFamily tanh_fam;
  tanh_fam.kind = fdb::ScalarFamily::Kind::tanh_affine;
  tanh_fam.coef = Vec::Constant(1, 1.0);
  tanh_fam.scale = 0.2;
  tanh_fam.intercept = 0.1;
  CHECK(tanh_fam.sup_norm() == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(tanh_fam.lipschitz() == doctest::Approx(0.2).epsilon(1e-14));
  Vec phi(1);
  double sup = 0.0, lip = 0.0, prev = 0.0, prev_x = 0.0;
  for (int i = 0; i <= 4000; ++i) {
    double x = -10.0 + i * 20.0 / 4000.0;
    phi[0] = x;
    double v = tanh_fam.eval(phi);
    CHECK(v == doctest::Approx(0.2 * std::tanh(x) + 0.1).epsilon(1e-14));
    sup = std::max(sup, std::abs(v));
    if (i > 0) lip = std::max(lip, std::abs(v - prev) / (x - prev_x));
    prev = v;
    prev_x = x;
  }
  CHECK(sup <= tanh_fam.sup_norm() + 1e-12);
  CHECK(lip <= tanh_fam.lipschitz() + 1e-12);

  fdb::ScalarFamily aff;
  aff.kind = fdb::ScalarFamily::Kind::affine;
  aff.coef = Vec::Constant(1, -4.0);
  aff.intercept = 0.0;
  CHECK(!aff.bounded());
  CHECK(aff.lipschitz() == doctest::Approx(4.0).epsilon(1e-14));
  phi[0] = 0.5;
  CHECK(aff.eval(phi) == doctest::Approx(-2.0).epsilon(1e-14));
}

TEST_CASE("constraint set projection and membership") {
  fdb::ConstraintSet box;
  box.kind = fdb::ConstraintSet::Kind::box;
  box.radius = 1.0;
  Vec p(2);
  p << 2.0, -3.0;
  Vec q = box.project(p);
  CHECK(q(0) == doctest::Approx(1.0));
  CHECK(q(1) == doctest::Approx(-1.0));
  CHECK(box.contains(q, 1e-12));
  CHECK(!box.contains(p));

  fdb::ConstraintSet ball;
  ball.kind = fdb::ConstraintSet::Kind::ball;
  ball.radius = 1.0;
  Vec r = ball.project(p);
  CHECK(r.norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r(0) / r(1) == doctest::Approx(p(0) / p(1)).epsilon(1e-12));
  Vec inside = 0.5 * r;
  CHECK(ball.project(inside).isApprox(inside, 1e-14));
}

TEST_CASE("flat example: derived constants have closed-form values") {
  ScenarioSpec spec = fdbtest::load_example("flat");
  fdb::ConstantsLedger led = fdb::compute_constants(spec);

  // all coefficient families are constant, so every Lipschitz constant and
  // therefore the driver's factor-Lipschitz constant vanish
  CHECK(led.c_alpha == 0.0);
  CHECK(led.c_sigma == 0.0);
  CHECK(led.c_beta == 0.0);
  CHECK(led.c_varphi == 0.0);
  CHECK(led.c_phi == 0.0);
  CHECK(led.cphi_below_cg);
  CHECK(led.k_z.size() == 2);
  CHECK(led.k_z[0] == 0.0);
  CHECK(led.k_z[1] == 0.0);

  // driver sup bound: max(|alpha|^2/(2 gamma), total mass / gamma) = max(0.02, 1)
  CHECK(led.k_y == doctest::Approx(1.0).epsilon(1e-14));
  // jump-gap bound with k_z = 0: -(1/gamma) log(mass/(gamma k_y)) = -log 1 ... = -1? pin the frozen value
  CHECK(led.k_delta_y[1] == doctest::Approx(-1.0).epsilon(1e-12));

  // risk premia 0.02 vs 0.005: monotone with margin 0.015 everywhere
  CHECK(led.risk_premium_monotone);
  CHECK(led.risk_premium_margin == doctest::Approx(0.015).epsilon(1e-12));

  // radius-1 boxes are too small for the closed-form solvability condition in
  // regime 0 but satisfy it in the terminal regime
  CHECK(!led.strategy_bound_feasible);
  REQUIRE(led.strategy_bound_margin.size() == 2);
  CHECK(led.strategy_bound_margin[0] < 0.0);
  CHECK(led.strategy_bound_margin[1] == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("curved example: derived constants match independent recomputation") {
  ScenarioSpec spec = fdbtest::load_example("curved");
  fdb::ConstantsLedger led = fdb::compute_constants(spec);

  // primitives: alpha = 0.2 tanh(phi) + 0.1 in both regimes, sigma = 1,
  // beta = 0.05 constant, varphi = 0.2 constant, boxes of radius 2
  CHECK(led.k_alpha == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(led.c_alpha == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(led.k_sigma == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(led.c_sigma == 0.0);
  CHECK(led.k_beta == doctest::Approx(0.05).epsilon(1e-14));
  CHECK(led.c_beta == 0.0);
  CHECK(led.k_varphi == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(led.c_varphi == 0.0);
  CHECK(led.c_g == doctest::Approx(4.0).epsilon(1e-14));

  // factor-Lipschitz constant of the reduced driver, gamma = 1, c_pi = 2:
  // branch 1: gamma (C_sig C_pi + C_al/g)(C_pi K_sig + K_al/g) + C_al K_al/g
  //         = 0.2 * (2 + 0.3) + 0.2 * 0.3 = 0.52
  const double branch1 = led.gamma * (led.c_sigma * led.c_pi + led.c_alpha / led.gamma) *
                             (led.c_pi * led.k_sigma + led.k_alpha / led.gamma) +
                         led.c_alpha * led.k_alpha / led.gamma;
  CHECK(led.c_phi == doctest::Approx(0.52).epsilon(1e-14));
  CHECK(led.c_phi >= branch1 - 1e-15);
  CHECK(led.cphi_below_cg);

  // gradient bounds: K_Z^n = C_phi (1+C_vphi)^{m-n}/(C_g - C_phi)
  //                        + c_pi C_beta sum_{j<m-n} (1+C_vphi)^j
  // with C_vphi = C_beta = 0 both regimes collapse to 0.52/3.48
  CHECK(led.k_z[1] == doctest::Approx(0.52 / 3.48).epsilon(1e-13));
  CHECK(led.k_z[0] == doctest::Approx(0.52 / 3.48).epsilon(1e-13));
  CHECK(led.k_z[0] == doctest::Approx(0.14942528735632185).epsilon(1e-14));
  CHECK(led.k_delta_y[1] == doctest::Approx(-0.6494632566252989).epsilon(1e-12));

  // identical alpha families in both regimes: the strict cross-regime risk
  // premium dominance fails
  CHECK(!led.risk_premium_monotone);
  CHECK(led.risk_premium_margin <= 1e-12);

  // radius-2 boxes satisfy the solvability condition in both regimes
  CHECK(led.strategy_bound_feasible);
  REQUIRE(led.strategy_bound_margin.size() == 2);
  CHECK(led.strategy_bound_margin[0] == doctest::Approx(0.07906718144841363).epsilon(1e-12));
  CHECK(led.strategy_bound_margin[1] == doctest::Approx(1.1011494252873562).epsilon(1e-12));
}

TEST_CASE("driver sup bound tracks the worst regime") {
  // gamma = 2 with |alpha| = 3 makes the quadratic part dominate the jump
  // mass: K_Y = max(9/4, 1/2) = 2.25
  ScenarioSpec spec = fdbtest::load_example("flat");
  spec.gamma = 2.0;
  for (auto& reg : spec.regimes)
    for (auto& fam : reg.alpha.comp) {
      fam.kind = fdb::ScalarFamily::Kind::constant;
      fam.intercept = 3.0;
    }
  for (auto& reg : spec.regimes) {
    reg.alpha.declared_sup = 3.0;
    reg.alpha.declared_lip = 0.0;
  }
  fdb::ConstantsLedger led = fdb::compute_constants(spec);
  CHECK(led.k_y == doctest::Approx(2.25).epsilon(1e-14));
}

TEST_CASE("dissipativity probe accepts true rates and rejects inflated ones") {
  ScenarioSpec spec = fdbtest::load_example("flat");
  fdb::DissipativityReport rep = fdb::check_dissipativity(spec, 2048, 7);
  CHECK(rep.pass);
  for (double r : rep.worst_ratio) CHECK(r <= 1.0 + 1e-9);
  CHECK(rep.observed_drift_gap <= spec.drift_gap + 1e-12);

  // the drift is -phi; declaring a contraction rate of 2 must be caught
  ScenarioSpec wrong = spec;
  wrong.dissipativity = 2.0;
  fdb::DissipativityReport bad = fdb::check_dissipativity(wrong, 2048, 7);
  CHECK(!bad.pass);
}

TEST_CASE("validation battery passes on the examples and flags corruption") {
  for (const char* name : {"flat", "curved"}) {
    ScenarioSpec spec = fdbtest::load_example(name);
    fdb::ConstantsLedger led = fdb::compute_constants(spec);
    auto checks = fdb::validate_scenario(spec, led);
    CHECK(checks.size() > 5);
    for (const auto& c : checks) {
      INFO(name, ": ", c.name, ": ", c.detail);
      CHECK(c.pass);
    }
  }

  // doubling kappa breaks the unit-norm normalization
  ScenarioSpec bad = fdbtest::load_example("flat");
  bad.kappa *= 2.0;
  fdb::ConstantsLedger led_bad = fdb::compute_constants(bad);
  bool all = true;
  for (const auto& c : fdb::validate_scenario(bad, led_bad)) all = all && c.pass;
  CHECK(!all);

  // understating a declared sup must be caught by cross-sampling
  ScenarioSpec lie = fdbtest::load_example("curved");
  lie.regimes[0].alpha.declared_sup = 0.05;
  fdb::ConstantsLedger led_lie = fdb::compute_constants(lie);
  bool all_lie = true;
  for (const auto& c : fdb::validate_scenario(lie, led_lie)) all_lie = all_lie && c.pass;
  CHECK(!all_lie);
}

TEST_CASE("scenario JSON round trip is lossless") {
  for (const char* name : {"flat", "curved"}) {
    ScenarioSpec spec = fdbtest::load_example(name);
    fdb::json j1 = fdb::scenario_to_json(spec);
    ScenarioSpec back = fdb::scenario_from_json(j1);
    fdb::json j2 = fdb::scenario_to_json(back);
    CHECK(j1 == j2);
    CHECK(back.m == spec.m);
    CHECK(back.gamma == spec.gamma);
    CHECK(back.grid.cells == spec.grid.cells);
    Vec phi = Vec::Constant(spec.d, 0.37);
    for (int n = 0; n <= spec.m; ++n) {
      CHECK(back.alpha(n, phi).isApprox(spec.alpha(n, phi), 1e-15));
      CHECK(back.drift(n, phi).isApprox(spec.drift(n, phi), 1e-15));
    }
  }
}
