#pragma once

#include <cmath>
#include <functional>

#include "fdb/errors.hpp"

namespace fdb {

// Adaptive Simpson on [a,b]: classic bisection with the 1/15 Richardson error
// estimate, relative tolerance with a small absolute floor, bounded depth.
inline double adaptive_simpson(const std::function<double(double)>& f, double a,
                               double b, double rel_tol = 1e-8,
                               double abs_floor = 1e-300, int max_depth = 40) {
  struct Impl {
    const std::function<double(double)>& f;
    double rel_tol, abs_floor;
    double recurse(double a, double m, double b, double fa, double fm, double fb,
                   double whole, int depth) {
      double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
      double flm = f(lm), frm = f(rm);
      double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
      double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
      double err = left + right - whole;
      if (depth <= 0)
        throw NumericalError("adaptive_simpson: maximum recursion depth reached");
      double scale = std::max(std::abs(left + right), abs_floor);
      if (std::abs(err) <= 15.0 * std::max(rel_tol * scale, abs_floor))
        return left + right + err / 15.0;
      return recurse(a, lm, m, fa, flm, fm, left, depth - 1) +
             recurse(m, rm, b, fm, frm, fb, right, depth - 1);
    }
  };
  double m = 0.5 * (a + b);
  double fa = f(a), fm = f(m), fb = f(b);
  double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  Impl impl{f, rel_tol, abs_floor};
  return impl.recurse(a, m, b, fa, fm, fb, whole, max_depth);
}

}  // namespace fdb
