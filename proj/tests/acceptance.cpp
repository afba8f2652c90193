// Acceptance gate: eight scripted criteria, one PASS/FAIL line each.
// Run a single criterion with `acceptance --criterion k`, or all without args.

#include <chrono>
#include <cmath>
#include <cstring>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "fdb/defaults.hpp"
#include "fdb/harness.hpp"
#include "fdb/scenario.hpp"
#include "fdb/solver.hpp"

namespace {

using fdb::ScenarioSpec;
using fdb::Vec;

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

ScenarioSpec load_example(const std::string& name) {
  return fdb::load_scenario(std::string(FDB_SCENARIO_DIR) + "/" + name + ".json");
}

double bisect_root(double lo, double hi, double (*f)(double)) {
  double flo = f(lo);
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    double fm = f(mid);
    if ((flo <= 0.0) == (fm <= 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// sup of |field - target| over nodes with |phi| <= half_width - margin
double interior_sup_gap(const fdb::Grid& grid, const Vec& field, double target,
                        double margin) {
  double sup = 0.0;
  for (Eigen::Index i = 0; i < grid.num_nodes(); ++i) {
    Vec p = grid.node(i);
    bool interior = true;
    for (int k = 0; k < grid.d; ++k)
      if (std::abs(p(k)) > grid.half_width - margin + 1e-12) interior = false;
    if (interior) sup = std::max(sup, std::abs(field(i) - target));
  }
  return sup;
}

fdb::SolveOptions polished() {
  fdb::SolveOptions opts;
  opts.newton_polish = true;
  return opts;
}

// --------------------------------------------------------------------------
// criterion 1: flat-scenario oracle
// --------------------------------------------------------------------------
bool criterion_1(std::string& detail) {
  constexpr double kTol = 1e-4;
  constexpr double kBudget = 10.0;
  Timer timer;
  ScenarioSpec spec = load_example("flat");
  fdb::ConstantsLedger led = fdb::compute_constants(spec);
  fdb::BsdeSolution sol = fdb::solve_chain(spec, led, 0.1, polished());
  const double secs = timer.seconds();

  const double y0 = bisect_root(0.0, 3.0, [](double y) {
    return 0.1 * y + 0.02 - std::exp(-0.05 - y);
  });
  const double margin = 10.0 * sol.grid.h();
  const double gap1 = interior_sup_gap(sol.grid, sol.regimes[1].y, -0.05, margin);
  const double gap0 = interior_sup_gap(sol.grid, sol.regimes[0].y, y0, margin);

  std::ostringstream os;
  os << "sup|y1 + 0.05| = " << gap1 << ", sup|y0 - " << y0 << "| = " << gap0
     << " (tol " << kTol << "), solve " << secs << " s (budget " << kBudget << " s)";
  detail = os.str();
  return gap1 <= kTol && gap0 <= kTol && secs < kBudget;
}

// --------------------------------------------------------------------------
// criterion 2: certified value/gradient/jump-gap bounds across discounts
// --------------------------------------------------------------------------
bool criterion_2(std::string& detail) {
  constexpr double kBudget = 300.0;
  Timer timer;
  ScenarioSpec spec = load_example("curved");
  fdb::ConstantsLedger led = fdb::compute_constants(spec);
  bool ok = true;
  std::ostringstream os;
  for (double rho : {0.5, 0.1, 0.02}) {
    fdb::BsdeSolution sol = fdb::solve_chain(spec, led, rho, polished());
    const double eps = 10.0 * sol.grid.h();
    for (int n = 0; n <= spec.m; ++n) {
      if (sol.bounds.y_sup[n] > led.k_y / rho + eps) ok = false;
      if (sol.bounds.z_sup[n] > led.k_z[n] + eps) ok = false;
    }
    if (sol.bounds.jump_gap_sup[0] > led.k_delta_y[1] + eps) ok = false;
    os << "[rho=" << rho << ": y " << sol.bounds.y_sup[0] << "/" << led.k_y / rho
       << ", z " << std::max(sol.bounds.z_sup[0], sol.bounds.z_sup[1]) << "/"
       << led.k_z[0] << ", gap " << sol.bounds.jump_gap_sup[0] << "/"
       << led.k_delta_y[1] << " +eps " << eps << "] ";
  }
  const double secs = timer.seconds();
  os << secs << " s (budget " << kBudget << " s)";
  detail = os.str();
  return ok && secs < kBudget;
}

// --------------------------------------------------------------------------
// criterion 3: strategy stays inside the certified radius
// --------------------------------------------------------------------------
bool criterion_3(std::string& detail) {
  constexpr double kSlack = 1e-6;
  ScenarioSpec spec = load_example("curved");
  fdb::ConstantsLedger led = fdb::compute_constants(spec);
  bool ok = led.strategy_bound_feasible;
  std::ostringstream os;
  os << "C_pi = " << led.c_pi << ";";
  for (double rho : {0.5, 0.1, 0.02}) {
    fdb::BsdeSolution sol = fdb::solve_chain(spec, led, rho, polished());
    fdb::StrategyBoundReport rep = fdb::strategy_bound_report(spec, led, sol);
    for (double s : rep.sup_norm)
      if (s > led.c_pi + kSlack) ok = false;
    os << " rho=" << rho << " sup|pi*| = " << std::max(rep.sup_norm[0], rep.sup_norm[1]);
  }
  detail = os.str();
  return ok;
}

// --------------------------------------------------------------------------
// criterion 4: martingale / supermartingale certification
// --------------------------------------------------------------------------
bool criterion_4(std::string& detail) {
  constexpr long kPaths = 100000;
  constexpr double kDt = 1e-3;
  constexpr double kBudget = 600.0;
  Timer timer;
  Vec cps(3);
  cps << 0.5, 1.0, 2.0;
  fdb::SimOptions opts;
  opts.paths = kPaths;
  opts.dt = kDt;
  opts.seed = 1;

  bool ok = true;
  std::ostringstream os;
  for (const char* name : {"flat", "curved"}) {
    ScenarioSpec spec = load_example(name);
    fdb::ConstantsLedger led = fdb::compute_constants(spec);
    fdb::BsdeSolution sol = fdb::solve_chain(spec, led, spec.rho, polished());

    fdb::SolvedFields opt = fdb::make_fields(spec, sol);
    fdb::StrategySpec zspec;
    zspec.kind = fdb::StrategySpec::Kind::zero;
    fdb::SolvedFields zero = fdb::make_fields(spec, sol, zspec);
    fdb::StrategySpec sspec;
    sspec.kind = fdb::StrategySpec::Kind::scaled_clipped;
    sspec.scale = 1.5;
    fdb::SolvedFields scaled = fdb::make_fields(spec, sol, sspec);

    for (int n : {0, spec.m}) {
      fdb::MartingaleReport mg = fdb::martingale_test(spec, opt, n, cps, true, opts);
      fdb::MartingaleReport sm0 = fdb::martingale_test(spec, zero, n, cps, false, opts);
      fdb::MartingaleReport sm1 =
          fdb::martingale_test(spec, scaled, n, cps, false, opts);
      ok = ok && mg.all_pass && sm0.all_pass && sm1.all_pass;
      os << "[" << name << " n=" << n << " mart max|gap|/se "
         << (mg.gap.cwiseAbs().array() / mg.se.array().max(1e-300)).maxCoeff()
         << ", super ok " << (sm0.all_pass && sm1.all_pass) << "] ";
      if (n == spec.m) break;
    }
  }
  const double secs = timer.seconds();
  os << secs << " s (budget " << kBudget << " s)";
  detail = os.str();
  return ok && secs < kBudget;
}

// --------------------------------------------------------------------------
// criterion 5: recursive decomposition identity
// --------------------------------------------------------------------------
bool criterion_5(std::string& detail) {
  constexpr long kPaths = 100000;
  ScenarioSpec spec = load_example("flat");
  fdb::ConstantsLedger led = fdb::compute_constants(spec);
  fdb::BsdeSolution sol = fdb::solve_chain(spec, led, spec.rho, polished());
  fdb::SolvedFields opt = fdb::make_fields(spec, sol);
  fdb::SimOptions opts;
  opts.paths = kPaths;
  opts.dt = 1e-3;
  opts.seed = 1;
  bool ok = true;
  std::ostringstream os;
  for (int n : {0, spec.m}) {
    fdb::DecompositionReport rep =
        fdb::decomposition_identity_test(spec, opt, n, 1.0, opts);
    ok = ok && rep.pass;
    os << "[n=" << n << " lhs " << rep.lhs << " mc " << rep.mean << " +/- " << rep.se
       << "] ";
    if (n == spec.m) break;
  }
  detail = os.str();
  return ok;
}

// --------------------------------------------------------------------------
// criterion 6: ergodic limit, residual, and realized growth rate
// --------------------------------------------------------------------------
bool criterion_6(std::string& detail) {
  constexpr double kTraceTol = 1e-6;
  constexpr double kResidualTol = 1e-5;
  constexpr double kGrowthFloor = 5e-4;
  constexpr double kBudget = 900.0;
  Timer timer;
  ScenarioSpec spec = load_example("flat");
  fdb::ConstantsLedger led = fdb::compute_constants(spec);

  fdb::ErgodicSolution erg = fdb::ergodic_continuation(spec, led);
  bool ok = erg.ladder_converged && erg.full_system_certified;
  double worst_trace = 0.0;
  for (double v : erg.ladder_varrho)
    worst_trace = std::max(worst_trace, std::abs(v + 0.005));
  ok = ok && worst_trace <= kTraceTol;
  ok = ok && std::abs(erg.varrho + 0.005) <= kTraceTol;
  ok = ok && erg.residual_sup <= kResidualTol;

  fdb::BsdeSolution sol = fdb::solve_chain(spec, led, spec.rho, polished());
  fdb::SolvedFields opt = fdb::make_fields(spec, sol);
  Vec horizons(3);
  horizons << 10.0, 25.0, 50.0;
  fdb::SimOptions opts;
  opts.paths = 100000;
  opts.dt = 1e-3;
  opts.seed = 1;
  fdb::GrowthReport rep = fdb::growth_rate_estimate(spec, opt, horizons, opts);
  double rate = std::numeric_limits<double>::quiet_NaN();
  double se = 0.0;
  bool have_rate = false;
  for (Eigen::Index i = horizons.size() - 1; i >= 0; --i) {
    if (!rep.skipped[static_cast<std::size_t>(i)]) {
      rate = rep.rate(i);
      se = rep.se(i);
      have_rate = true;
      break;
    }
  }
  const double gap = std::abs(rate - erg.varrho);
  const double tol = std::max(3.0 * se, kGrowthFloor);
  ok = ok && have_rate && gap <= tol;

  const double secs = timer.seconds();
  std::ostringstream os;
  os << "varrho " << erg.varrho << " (trace dev " << worst_trace << " <= " << kTraceTol
     << "), residual " << erg.residual_sup << " <= " << kResidualTol << ", growth(T=50) "
     << rate << " gap " << gap << " <= " << tol << ", " << secs << " s (budget "
     << kBudget << " s)";
  detail = os.str();
  return ok && secs < kBudget;
}

// --------------------------------------------------------------------------
// criterion 7: second-order grid convergence trend
// --------------------------------------------------------------------------
bool criterion_7(std::string& detail) {
  ScenarioSpec spec = load_example("curved");
  fdb::ConstantsLedger led = fdb::compute_constants(spec);

  std::vector<fdb::BsdeSolution> sols;
  for (int cells : {512, 1024, 2048}) {
    ScenarioSpec s = spec;
    s.grid.cells = cells;
    sols.push_back(fdb::solve_chain(s, led, s.rho, polished()));
  }

  bool ok = true;
  std::ostringstream os;
  for (int n = 0; n <= spec.m; ++n) {
    // sup over shared nodes (coarse node i sits at index 2i on the finer grid)
    double d1 = 0.0, d2 = 0.0;
    for (Eigen::Index i = 0; i < sols[0].grid.num_nodes(); ++i)
      d1 = std::max(d1, std::abs(sols[0].regimes[n].y(i) - sols[1].regimes[n].y(2 * i)));
    for (Eigen::Index i = 0; i < sols[1].grid.num_nodes(); ++i)
      d2 = std::max(d2, std::abs(sols[1].regimes[n].y(i) - sols[2].regimes[n].y(2 * i)));
    if (d1 > 4.0 * d2 + 1e-12) ok = false;
    os << "[n=" << n << " |y512-y1024| " << d1 << " vs 4|y1024-y2048| " << 4.0 * d2
       << "] ";
  }
  detail = os.str();
  return ok;
}

// --------------------------------------------------------------------------
// criterion 8: survival-density suite
// --------------------------------------------------------------------------
bool criterion_8(std::string& detail) {
  ScenarioSpec spec = load_example("flat");
  Vec none(0);
  const double closed = fdb::survival_density(spec, 0, std::log(2.0), none);
  const double quad = fdb::survival_density_quadrature(spec, 0, std::log(2.0), none);
  const double gap_closed = std::abs(closed - 0.5);
  const double gap_quad = std::abs(quad - 0.5);

  Vec times(4);
  times << 0.5, 1.0, 2.0, 4.0;
  fdb::SurvivalCheck chk = fdb::survival_crosscheck(spec, times, 100000, 1);

  std::ostringstream os;
  os << "closed |eta(ln2) - 1/2| = " << gap_closed << " (tol 1e-10), quadrature "
     << gap_quad << " (tol 1e-6), MC tails " << (chk.pass ? "pass" : "fail");
  detail = os.str();
  return gap_closed <= 1e-10 && gap_quad <= 1e-6 && chk.pass;
}

using CriterionFn = bool (*)(std::string&);

struct Entry {
  int id;
  const char* label;
  CriterionFn fn;
};

const Entry kCriteria[] = {
    {1, "flat-scenario field oracle", criterion_1},
    {2, "certified bounds across discount rates", criterion_2},
    {3, "strategy radius certification", criterion_3},
    {4, "martingale/supermartingale tests", criterion_4},
    {5, "decomposition identity", criterion_5},
    {6, "ergodic limit and growth rate", criterion_6},
    {7, "grid convergence trend", criterion_7},
    {8, "survival-density suite", criterion_8},
};

}  // namespace

int main(int argc, char** argv) {
  int which = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      which = std::atoi(argv[i + 1]);
      ++i;
    } else {
      std::cerr << "usage: acceptance [--criterion k]\n";
      return 2;
    }
  }
  if (which < 0 || which > 8) {
    std::cerr << "criterion must be in 1..8\n";
    return 2;
  }

  bool all_ok = true;
  for (const Entry& e : kCriteria) {
    if (which != 0 && e.id != which) continue;
    std::string detail;
    bool ok = false;
    try {
      ok = e.fn(detail);
    } catch (const std::exception& ex) {
      detail = std::string("exception: ") + ex.what();
      ok = false;
    }
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << e.id << " (" << e.label
              << "): " << detail << "\n";
    all_ok = all_ok && ok;
  }
  return all_ok ? 0 : 1;
}
