#pragma once

#include <cstdint>
#include <vector>

#include "fdb/defaults.hpp"
#include "fdb/factor.hpp"
#include "fdb/rng.hpp"
#include "fdb/scenario.hpp"
#include "fdb/solver.hpp"

namespace fdb {

// Strategy under test, expressed as a transformation of the optimal field.
struct StrategySpec {
  enum class Kind { optimal, zero, scaled_clipped, flip_first, constant };
  Kind kind = Kind::optimal;
  double scale = 1.5;  // scaled_clipped: project(scale * pi*)
  Vec constant;        // constant: project(constant) at every node
};

// Nodal fields the simulators interpolate along paths.
struct SolvedFields {
  Grid grid;
  double rho = 0;
  std::vector<Vec> y;            // m+1
  std::vector<Mat> z;            // m+1
  std::vector<Vec> y_next_jump;  // m entries; [n] holds y^{n+1}(phi + varphi^n(phi))
  std::vector<Mat> pi;           // m+1 strategy fields, num_nodes x m
};

SolvedFields make_fields(const ScenarioSpec& spec, const BsdeSolution& sol,
                         const StrategySpec& strat = {});

struct SimOptions {
  double dt = 1e-3;
  long paths = 10000;
  std::uint64_t seed = 1;
  int threads = 1;  // <= 0 picks hardware concurrency
};

// Deterministic time-0 state of the regime-n indexed component: every default
// stamped at time 0 with the first mark, factor = jump-composed initial
// factor, wealth = 0.
Vec regime_start_factor(const ScenarioSpec& spec, int n);

// Piecewise-linear weight tables in time (identically 1 when empty); the
// decomposition test feeds survival-density ratios through these.
struct WeightFns {
  Vec times, outer, inner;
};

struct ComponentRun {
  double v_start = 0;
  Vec checkpoints;
  Mat v;       // kept paths x checkpoints
  Mat wealth;  // kept paths x checkpoints
  long requested = 0, excluded = 0;
};

// F-indexed regime-n simulation from the deterministic start (no further
// defaults): the V-process of the given strategy field at the checkpoints,
// with the next-regime integral term accumulated by trapezoid quadrature.
ComponentRun simulate_regime_component(const ScenarioSpec& spec,
                                       const SolvedFields& fields, int n,
                                       const Vec& checkpoints, const SimOptions& opts,
                                       const WeightFns* weights = nullptr);

struct MartingaleReport {
  int regime = 0;
  bool two_sided = true;
  double v_start = 0;
  Vec checkpoints, mean, se, gap;  // gap = mean - v_start
  std::vector<bool> pass;
  bool all_pass = false;
  long paths = 0, excluded = 0;
};

// Two-sided (martingale) or one-sided (supermartingale) 3*SE test of
// E[V_s] against V_0 from the deterministic start.
MartingaleReport martingale_test(const ScenarioSpec& spec, const SolvedFields& fields,
                                 int n, const Vec& checkpoints, bool two_sided,
                                 const SimOptions& opts);

struct DecompositionReport {
  int regime = 0;
  double s = 0;
  double lhs = 0, mean = 0, se = 0, rel_gap = 0;
  bool pass = false;
  long paths = 0;
};

// Equality form of the recursive decomposition identity: the time-t product
// (component value) x (survival density) against the Monte Carlo of the
// time-s product plus the integrated next-component term. Survival densities
// enter as quadrature/closed-form ratios so the check ties the density module
// to the simulator; n = m reduces to the terminal martingale test.
DecompositionReport decomposition_identity_test(const ScenarioSpec& spec,
                                                const SolvedFields& fields, int n,
                                                double s, const SimOptions& opts);

struct GrowthReport {
  Vec horizons;
  Vec rate, se;  // NaN when skipped
  std::vector<long> qualifying;
  std::vector<bool> skipped;  // fewer than 100 qualifying paths
  long paths = 0, excluded = 0;
};

// (1/T) log E[exp(-gamma (X_T - X_{T_m})) | T_m <= T] on a horizon ladder,
// log-space accumulation and delta-method standard errors.
GrowthReport growth_rate_estimate(const ScenarioSpec& spec, const SolvedFields& fields,
                                  const Vec& horizons, const SimOptions& opts);

struct BundleSummary {
  Vec checkpoints;
  Mat wealth;   // kept paths x checkpoints
  Mat u_hat;    // kept paths x checkpoints: G-field value along the path
  Vec t_first;  // first default time per kept path (inf beyond horizon)
  Vec t_last;   // m-th default time per kept path (inf beyond horizon)
  long requested = 0, excluded = 0;
};

// Full market simulation across the default cascade under the strategy field:
// wealth diffuses with the regime coefficients and jumps by pi' beta at each
// default; the G-field value -exp(-gamma X + gamma(Y - int rho Y - Y_0)) is
// tracked along the realized regime sequence.
BundleSummary simulate_bundle(const ScenarioSpec& spec, const SolvedFields& fields,
                              double horizon, const Vec& checkpoints,
                              const SimOptions& opts);

// One path with full trajectories: factor segments, wealth, asset prices with
// the multiplicative (1 + beta) default jumps, and the pre-jump quantities the
// pathwise invariants are asserted against.
struct PathDetail {
  DefaultDraw draw;
  FactorPath factor;
  std::vector<Vec> wealth;       // per segment, aligned with factor value rows
  std::vector<Mat> prices;       // per segment, (steps+1) x m
  std::vector<Vec> pre_jump_pi;    // strategy just before each realized default
  std::vector<Vec> pre_jump_beta;  // beta(phi-, mark) at each realized default
};
PathDetail simulate_path_detail(const ScenarioSpec& spec, const SolvedFields& fields,
                                double horizon, double dt, std::uint64_t seed);

struct SurvivalCheck {
  Vec times, empirical, se, analytic;  // tail of the first default time
  bool pass = false;
  long paths = 0;
};
SurvivalCheck survival_crosscheck(const ScenarioSpec& spec, const Vec& times,
                                  long paths, std::uint64_t seed);

}  // namespace fdb
