#pragma once

#include <string>
#include <vector>

#include "fdb/driver.hpp"

namespace fdb {

struct SolveOptions {
  double dtau = 0.2;             // pseudo-time step (auto-shrunk on blow-up)
  double tol_stationary = 1e-7;  // sup-norm update per unit pseudo-time
  long max_steps = 400000;
  bool newton_polish = false;  // optional accelerator after marching (d = 1)
  double newton_tol = 1e-12;   // residual sup-norm target for Newton
  int newton_max_iter = 50;
  // Monotone (Kushner-Dupuis) drift stencil: first-order upwind differences
  // for the advection term, keeping an M-matrix at every resolution. Off, the
  // drift is centered (second order, monotone only while |g| h < kappa^2).
  bool upwind_advection = true;
  MinimizeOptions argmin;
};

struct RegimeSolution {
  Vec y;               // nodal values
  Mat z;               // num_nodes x d, z = kappa' grad y (central differences)
  Vec y_next_at_jump;  // nodal y^{n+1}(phi + varphi^n(phi)); empty at n = m
  long marching_steps = 0;
  int newton_iterations = 0;
  double residual_sup = 0;  // stationary residual sup-norm at the solution
};

// Certified-bound audit of a solved chain (interior nodes, tolerance 10 h).
struct BoundReport {
  double epsilon = 0;  // 10 h
  double y_bound = 0;  // k_y / rho
  std::vector<double> y_sup;                       // per regime
  std::vector<double> z_bound, z_sup;              // per regime
  std::vector<double> jump_gap_bound, jump_gap_sup;  // index n = 1..m
  bool z_gap_evaluated = false;  // false when the contraction margin is gone
  bool pass = false;
};

struct BsdeSolution {
  double rho = 0;
  Grid grid;
  std::vector<RegimeSolution> regimes;  // m+1
  BoundReport bounds;
};

// Nodal field of y_next(phi + varphi^n(phi)) built from the next regime's
// nodal field (interpolation clamped to the box).
Vec jump_composite_field(const ScenarioSpec& spec, const Grid& grid, int n,
                         const Vec& next_field);

// Stationary solve of one regime by IMEX pseudo-time marching (implicit
// diffusion/advection/rho, explicit minimized driver), optional Newton polish.
// `y_next_field` is the next regime's nodal field (null at n = m).
RegimeSolution solve_regime(const ScenarioSpec& spec, int n, double rho,
                            const Vec* y_next_field, const Grid& grid,
                            const SolveOptions& opts = {},
                            const Vec* warm_start = nullptr);

// Full recursive chain n = m..0 plus the bound audit.
BsdeSolution solve_chain(const ScenarioSpec& spec, const ConstantsLedger& ledger,
                         double rho, const SolveOptions& opts = {});

BoundReport evaluate_bounds(const ScenarioSpec& spec, const ConstantsLedger& ledger,
                            const BsdeSolution& sol);

// Optimal strategy at every node (num_nodes x m), warm-started along the sweep.
Mat strategy_field(const ScenarioSpec& spec, const Grid& grid, int n, const Vec& y,
                   const Mat& z, const Vec* y_next_jump,
                   const MinimizeOptions& opts = {});

struct StrategyBoundReport {
  double bound = 0;  // c_pi
  bool enforced = false;
  std::vector<double> sup_norm;  // per regime, interior nodes
  bool pass = false;
};
StrategyBoundReport strategy_bound_report(const ScenarioSpec& spec,
                                          const ConstantsLedger& ledger,
                                          const BsdeSolution& sol,
                                          const MinimizeOptions& opts = {});

// ---------------------------------------------------------------------------
// Vanishing-discount continuation
// ---------------------------------------------------------------------------
struct ErgodicOptions {
  double rho0 = 0.1;
  double shrink = 0.5;
  double tol_rho = 1e-6;   // stop rule on both the growth trace and field drift
  double rho_min = 1e-9;
  int max_rungs = 60;
  // Continue when the risk-premium monotonicity check failed; only the
  // terminal-regime equation is certified in that case.
  bool override_monotonicity = false;
  SolveOptions solve;
};

struct ErgodicSolution {
  double varrho = 0;  // long-run growth constant
  Grid grid;
  std::vector<Vec> y_bar;  // m+1 fields, normalized so y_bar[0](ref_0 node) = 0
  std::vector<Mat> z_bar;
  std::vector<int> certified;  // regimes whose limit equation is certified
  bool full_system_certified = false;
  bool ladder_converged = false;
  std::string message;
  std::vector<double> ladder_rho;      // rung discount rates
  std::vector<double> ladder_varrho;   // rho_i * y^m_{rho_i}(ref_m)
  std::vector<double> ladder_drift;    // field drift between consecutive rungs
  double coupling_floor = 0;  // min over rungs/regimes of exp(gamma (y^{n+1}-y^n)) at refs
  double residual_sup = 0, residual_mean = 0;  // certified regimes, centered subdomain
  std::vector<double> residual_sup_regime, residual_mean_regime;  // all regimes
};

ErgodicSolution ergodic_continuation(const ScenarioSpec& spec,
                                     const ConstantsLedger& ledger,
                                     const ErgodicOptions& opts = {});

struct ErgodicResidualReport {
  std::vector<double> sup_regime, mean_regime;  // all regimes, centered subdomain
  double sup = 0, mean = 0;                     // over the certified set
};
// Residual of the limit system |varrho - L y_bar - min driver| on the centered
// sub-domain (half the half-width). The stencil must match the one the fields
// were solved with.
ErgodicResidualReport ergodic_residual(const ScenarioSpec& spec,
                                       const ErgodicSolution& sol,
                                       bool upwind_advection = true);

}  // namespace fdb
