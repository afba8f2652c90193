#include "fdb/factor.hpp"

#include <cmath>

namespace fdb {

double FactorSegment::time_at(int k) const {
  if (k <= 0) return t0;
  if (k >= steps()) return t1;
  return t0 + k * dt;
}

FactorSegment simulate_factor(const ScenarioSpec& spec, int n, const Vec& phi0,
                              double t0, double t1, double dt, Rng& rng,
                              bool zero_noise) {
  if (!(dt > 0.0)) throw NumericalError("simulate_factor: dt must be positive");
  if (t1 < t0) throw NumericalError("simulate_factor: t1 must be >= t0");
  if (phi0.size() != spec.d) throw NumericalError("simulate_factor: phi0 dimension mismatch");

  double span = t1 - t0;
  int whole = static_cast<int>(span / dt);
  double rem = span - whole * dt;
  int steps = whole + (rem > 1e-12 * std::max(1.0, span) ? 1 : 0);

  FactorSegment seg;
  seg.regime = n;
  seg.t0 = t0;
  seg.t1 = t1;
  seg.dt = dt;
  seg.values.resize(steps + 1, spec.d);
  seg.increments.resize(steps, spec.d);
  seg.step_sizes.resize(steps);

  Vec phi = phi0;
  Vec g(spec.d), dw(spec.d);
  seg.values.row(0) = phi.transpose();
  for (int k = 0; k < steps; ++k) {
    double h = (k == steps - 1) ? (t1 - (t0 + k * dt)) : dt;
    seg.step_sizes[k] = h;
    double sq = std::sqrt(h);
    for (int i = 0; i < spec.d; ++i) dw[i] = zero_noise ? 0.0 : sq * rng.normal();
    seg.increments.row(k) = dw.transpose();
    spec.drifts[n].eval_into(phi, g);
    phi += g * h + spec.kappa * dw;
    seg.values.row(k + 1) = phi.transpose();
  }
  return seg;
}

Vec apply_jump(const ScenarioSpec& spec, int n, const Vec& phi) {
  return phi + spec.jump_map(n, phi);
}

FactorPath simulate_factor_path(const ScenarioSpec& spec, const DefaultDraw& draw,
                                double horizon, double dt, Rng& rng) {
  FactorPath path;
  Vec phi = spec.initial_factor;
  double t = 0.0;
  for (int n = 0; n <= spec.m; ++n) {
    double seg_end = n < spec.m ? std::min(draw.times[n], horizon) : horizon;
    seg_end = std::max(seg_end, t);
    path.segments.push_back(simulate_factor(spec, n, phi, t, seg_end, dt, rng));
    if (n < spec.m && draw.times[n] <= horizon) {
      // Default inside the horizon: jump the factor, continue in regime n+1.
      phi = apply_jump(spec, n, path.segments.back().values.row(path.segments.back().steps()).transpose());
      t = seg_end;
    } else {
      break;  // horizon reached before the next default
    }
  }
  return path;
}

CouplingReport ergodic_coupling_check(const ScenarioSpec& spec, int n, const Vec& phi1,
                                      const Vec& phi2, double t_max, double dt,
                                      std::uint64_t seed) {
  if ((phi1 - phi2).norm() < 1e-14)
    throw NumericalError("ergodic_coupling_check: starts must differ");
  if (!(dt > 0.0) || !(t_max > 0.0))
    throw NumericalError("ergodic_coupling_check: dt and t_max must be positive");

  Rng rng(seed);
  double d0 = (phi1 - phi2).norm();
  Vec a = phi1, b = phi2, ga(spec.d), gb(spec.d), dw(spec.d);
  int steps = static_cast<int>(std::ceil(t_max / dt));
  double cg = spec.dissipativity;
  CouplingReport rep;
  rep.sup_ratio = 1.0;
  double sq = std::sqrt(dt);
  for (int k = 0; k < steps; ++k) {
    for (int i = 0; i < spec.d; ++i) dw[i] = sq * rng.normal();
    spec.drifts[n].eval_into(a, ga);
    spec.drifts[n].eval_into(b, gb);
    a += ga * dt + spec.kappa * dw;  // shared noise: the increments cancel in a-b,
    b += gb * dt + spec.kappa * dw;  // leaving the pure drift contraction
    double t = (k + 1) * dt;
    rep.sup_ratio = std::max(rep.sup_ratio, (a - b).norm() * std::exp(cg * t) / d0);
  }
  rep.tolerance = 1.0 + cg * cg * t_max * dt;
  rep.pass = rep.sup_ratio <= rep.tolerance;
  return rep;
}

MomentProbe exponential_moment_probe(const ScenarioSpec& spec, int n, double c,
                                     const Vec& times, int paths, double dt,
                                     std::uint64_t seed) {
  if (times.size() == 0 || paths <= 0)
    throw NumericalError("exponential_moment_probe: need times and paths");
  for (Eigen::Index i = 1; i < times.size(); ++i)
    if (times[i] <= times[i - 1])
      throw NumericalError("exponential_moment_probe: times must be increasing");

  MomentProbe probe;
  probe.times = times;
  Mat norms(paths, times.size());  // |Phi_t| per path and ladder rung
  for (int p = 0; p < paths; ++p) {
    Rng rng = Rng::for_path(seed, static_cast<std::uint64_t>(p));
    Vec phi = spec.initial_factor;
    Vec g(spec.d), dw(spec.d);
    double t = 0.0;
    double sq = std::sqrt(dt);
    for (Eigen::Index r = 0; r < times.size(); ++r) {
      while (t < times[r] - 1e-12) {
        double h = std::min(dt, times[r] - t);
        double s = h == dt ? sq : std::sqrt(h);
        for (int i = 0; i < spec.d; ++i) dw[i] = s * rng.normal();
        spec.drifts[n].eval_into(phi, g);
        phi += g * h + spec.kappa * dw;
        t += h;
      }
      norms(p, r) = phi.norm();
    }
  }

  probe.upper.resize(times.size());
  probe.lower.resize(times.size());
  Vec ones = Vec::Ones(paths);
  for (Eigen::Index r = 0; r < times.size(); ++r) {
    // log-space means: exp(LSE(+-c|Phi|) - log(paths))
    Vec e = norms.col(r);
    probe.upper[r] = std::exp(log_sum_exp(c * e, ones) - std::log(double(paths)));
    probe.lower[r] = std::exp(log_sum_exp(-c * e, ones) - std::log(double(paths)));
  }
  Eigen::Index last = times.size() - 1;
  probe.stabilized =
      last >= 1 && std::abs(probe.upper[last] - probe.upper[last - 1]) <=
                       0.01 * std::max(1.0, std::abs(probe.upper[last]));
  return probe;
}

}  // namespace fdb
