#pragma once

#include "fdb/grid.hpp"
#include "fdb/scenario.hpp"

namespace fdb {

// Pointwise inputs of the regime-n driver at factor value phi.
struct DriverInput {
  int n = 0;
  double y = 0.0;             // current-regime value
  Vec z;                      // R^d gradient coordinate
  Vec phi;                    // R^d factor value
  double y_next_at_jump = 0;  // next-regime value at the jumped factor (n < m only)
};

struct ArgminResult {
  Vec pi_star;
  double value = 0.0;
  int iterations = 0;
  double kkt_residual = 0.0;
};

struct MinimizeOptions {
  double tol = 1e-10;  // projected-gradient sup-norm target
  int max_iter = 200;
};

// Coefficients of one regime evaluated at one factor point. Grid solvers
// cache these per node so the inner minimization never re-evaluates
// coefficient families.
struct DriverPoint {
  double gamma = 1.0;
  Mat sigma;              // m x d
  Vec alpha;              // d
  Vec weights;            // loss weights (size 0 when has_jump is false)
  std::vector<Vec> beta;  // per mark, R^m
  bool has_jump = false;  // false in the terminal regime

  // Quadratic market part at gradient coordinate z:
  //   (gamma/2)|sigma' pi - (z + alpha/gamma)|^2 - alpha' z - |alpha|^2/(2 gamma)
  double f1(const Vec& pi, const Vec& z) const;
  // Jump compensator at value gap delta = y_next - y (log-space guarded):
  //   (1/gamma) sum_l w_l exp(gamma (delta - pi' beta_l))
  double f2(const Vec& pi, double delta) const;
  // f1 + f2 (f2 only when has_jump)
  double value(const Vec& pi, const Vec& z, double delta) const;
  // gradient and Hessian of value(.) in pi
  void grad_hess(const Vec& pi, const Vec& z, double delta, Vec& grad, Mat& hess) const;
};

DriverPoint make_driver_point(const ScenarioSpec& spec, int n, const Vec& phi);

// Constrained minimizer over the given constraint set: projected Newton with
// backtracking. The objective is strongly convex (curvature at least
// gamma sigma_min^2). `warm` optionally seeds the iteration.
ArgminResult point_minimize(const DriverPoint& pt, const ConstraintSet& cons,
                            const Vec& z, double delta,
                            const MinimizeOptions& opts = {},
                            const Vec* warm = nullptr);

// Convenience wrappers in terms of the scenario (cold path).
double f1(const ScenarioSpec& spec, int n, const Vec& pi, const Vec& z, const Vec& phi);
double f2(const ScenarioSpec& spec, int n, const Vec& pi, double y, double y_next,
          const Vec& phi);
double driver_value(const ScenarioSpec& spec, const DriverInput& in, const Vec& pi);
ArgminResult minimize_driver(const ScenarioSpec& spec, const DriverInput& in,
                             const MinimizeOptions& opts = {});

// Optimal strategy at an arbitrary factor point: interpolates the solved
// fields, minimizes the driver, and (when `c_pi_bound` > 0) asserts the
// certified strategy bound |pi*| <= c_pi_bound + 1e-6. Points outside the
// grid box are an extrapolation error.
ArgminResult optimal_strategy(const ScenarioSpec& spec, int n, const Vec& phi,
                              const Grid& grid, const Vec& y_field, const Mat& z_field,
                              const Vec* y_next_jump_field, double c_pi_bound,
                              const MinimizeOptions& opts = {});

}  // namespace fdb
