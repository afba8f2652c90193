#pragma once

#include <string>

#include "fdb/scenario.hpp"

#ifndef FDB_SCENARIO_DIR
#error "FDB_SCENARIO_DIR must point at the generated example scenarios"
#endif

namespace fdbtest {

inline fdb::ScenarioSpec load_example(const std::string& name) {
  return fdb::load_scenario(std::string(FDB_SCENARIO_DIR) + "/" + name + ".json");
}

// Bisection for the scalar fixed points the constant-coefficient chains
// reduce to; an oracle path independent of the PDE solver.
template <class F>
double bisect(F f, double lo, double hi, double tol = 1e-13) {
  double flo = f(lo);
  for (int it = 0; it < 200 && hi - lo > tol; ++it) {
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

}  // namespace fdbtest
