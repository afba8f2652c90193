#pragma once

#include "fdb/defaults.hpp"
#include "fdb/rng.hpp"
#include "fdb/scenario.hpp"

namespace fdb {

// One regime segment of the factor path: uniform interior steps of length dt,
// with a final partial step so the segment endpoint is hit exactly. Brownian
// increments are stored for reuse by the wealth simulator (shared noise).
struct FactorSegment {
  int regime = 0;
  double t0 = 0, t1 = 0;
  double dt = 0;
  Mat values;      // (steps+1) x d; row k = value at time(k)
  Mat increments;  // steps x d Brownian increments
  Vec step_sizes;  // steps; all = dt except possibly the last

  int steps() const { return static_cast<int>(step_sizes.size()); }
  double time_at(int k) const;
};

struct FactorPath {
  std::vector<FactorSegment> segments;  // one per regime 0..m
};

// Euler-Maruyama under regime n from phi0 on [t0, t1]. zero_noise freezes the
// Brownian increments at zero (deterministic flow, useful for calibration
// tests). Throws a precondition error when dt <= 0 or t1 < t0.
FactorSegment simulate_factor(const ScenarioSpec& spec, int n, const Vec& phi0,
                              double t0, double t1, double dt, Rng& rng,
                              bool zero_noise = false);

// Post-default factor value: phi + varphi^n(phi).
Vec apply_jump(const ScenarioSpec& spec, int n, const Vec& phi);

// Full path across the default cascade up to `horizon`: regime n runs on
// [θ_n, θ_{n+1}) and the stitching identity
//   Φ^{n+1}_{θ_{n+1}} = Φ^n_{θ_{n+1}-} + varphi^n(Φ^n_{θ_{n+1}-})
// holds exactly at every default inside the horizon.
FactorPath simulate_factor_path(const ScenarioSpec& spec, const DefaultDraw& draw,
                                double horizon, double dt, Rng& rng);

// Two copies driven by the same noise from different starts: reports the sup
// over time of |ΔΦ_t| e^{c_g t} / |Δφ_0|, which the contraction property keeps
// at 1 + O(dt). Equal starts are a precondition error.
struct CouplingReport {
  double sup_ratio = 0;
  double tolerance = 0;  // 1 + discretization allowance
  bool pass = false;
};
CouplingReport ergodic_coupling_check(const ScenarioSpec& spec, int n, const Vec& phi1,
                                      const Vec& phi2, double t_max, double dt,
                                      std::uint64_t seed);

// Monte Carlo probe of E[exp(+c|Φ_t|)] and E[exp(-c|Φ_t|)] on a time ladder,
// accumulated in log space. `stabilized` reports whether the last two rungs of
// the upper estimate agree to 1%.
struct MomentProbe {
  Vec times;
  Vec upper;
  Vec lower;
  bool stabilized = false;
};
MomentProbe exponential_moment_probe(const ScenarioSpec& spec, int n, double c,
                                     const Vec& times, int paths, double dt,
                                     std::uint64_t seed);

}  // namespace fdb
