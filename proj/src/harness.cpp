#include "fdb/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <thread>
#include <vector>

namespace fdb {
namespace {

constexpr double kExpGuard = 700.0;
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double guarded_exp(double e, const char* where) {
  if (!(e <= kExpGuard))
    throw NumericalError(std::string("exponent overflow in ") + where);
  return std::exp(e);
}

// Clamped piecewise-linear table lookup; identically 1 on an empty table.
double lerp_table(const Vec& times, const Vec& vals, double t) {
  const Eigen::Index n = times.size();
  if (n == 0) return 1.0;
  if (t <= times[0]) return vals[0];
  if (t >= times[n - 1]) return vals[n - 1];
  Eigen::Index lo = 0, hi = n - 1;
  while (hi - lo > 1) {
    Eigen::Index mid = (lo + hi) / 2;
    (times[mid] <= t ? lo : hi) = mid;
  }
  double w = (t - times[lo]) / (times[lo + 1] - times[lo]);
  return (1.0 - w) * vals[lo] + w * vals[lo + 1];
}

int resolve_threads(int threads) {
  if (threads > 0) return threads;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Runs work(lo, hi) over a partition of [0, paths); exceptions from workers
// are captured and rethrown on the calling thread.
void parallel_paths(long paths, int threads,
                    const std::function<void(long, long)>& work) {
  long t = std::min<long>(resolve_threads(threads), std::max<long>(paths, 1));
  if (t <= 1) {
    work(0, paths);
    return;
  }
  std::vector<std::thread> pool;
  std::mutex mu;
  std::exception_ptr err;
  long chunk = (paths + t - 1) / t;
  for (long i = 0; i < t; ++i) {
    long lo = i * chunk, hi = std::min(paths, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&work, &mu, &err, lo, hi] {
      try {
        work(lo, hi);
      } catch (...) {
        std::lock_guard<std::mutex> g(mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

std::vector<long> checkpoint_steps(const Vec& checkpoints, double dt) {
  if (!(dt > 0)) throw SemanticError("simulation step dt must be positive");
  if (checkpoints.size() == 0) throw SemanticError("at least one checkpoint is required");
  std::vector<long> ks(static_cast<std::size_t>(checkpoints.size()));
  double prev = -1.0;
  for (Eigen::Index i = 0; i < checkpoints.size(); ++i) {
    double t = checkpoints[i];
    if (!(t >= 0)) throw SemanticError("checkpoints must be nonnegative");
    if (!(t > prev)) throw SemanticError("checkpoints must be strictly increasing");
    prev = t;
    long k = std::llround(t / dt);
    if (std::abs(static_cast<double>(k) * dt - t) > 1e-9 * std::max(1.0, t))
      throw SemanticError("checkpoint times must be integer multiples of dt");
    ks[static_cast<std::size_t>(i)] = k;
  }
  return ks;
}

void require_fields(const ScenarioSpec& spec, const SolvedFields& f) {
  std::size_t want = static_cast<std::size_t>(spec.m) + 1;
  if (f.y.size() != want || f.pi.size() != want ||
      f.y_next_jump.size() + 1 != want)
    throw SemanticError("solved fields do not match the scenario regime count");
}

// Column means and standard errors of a kept-path sample matrix.
void column_stats(const Mat& s, Vec& mean, Vec& se) {
  long k = s.rows();
  if (k < 2) throw SemanticError("fewer than two retained paths; cannot form standard errors");
  mean = s.colwise().mean();
  se.resize(s.cols());
  for (Eigen::Index c = 0; c < s.cols(); ++c) {
    double var = (s.col(c).array() - mean[c]).square().sum() / static_cast<double>(k - 1);
    se[c] = std::sqrt(var / static_cast<double>(k));
  }
}

Mat keep_rows(const Mat& m, const std::vector<unsigned char>& bad, long kept) {
  Mat out(kept, m.cols());
  long r = 0;
  for (long p = 0; p < m.rows(); ++p)
    if (!bad[static_cast<std::size_t>(p)]) out.row(r++) = m.row(p);
  return out;
}

void check_exclusions(long excluded, long requested) {
  if (excluded > 0 && excluded * 1000 >= requested)
    throw NumericalError("path exclusion fraction reached 0.1%: factor paths left the grid box");
}

void require_strategy_admissible(const ConstraintSet& cons, const Vec& pi) {
  if (!cons.contains(pi, 1e-9))
    throw SemanticError("interpolated strategy left the constraint set");
}

}  // namespace

Vec regime_start_factor(const ScenarioSpec& spec, int n) {
  if (n < 0 || n > spec.m) throw SemanticError("regime index out of range");
  Vec phi = spec.initial_factor;
  for (int k = 0; k < n; ++k) phi = apply_jump(spec, k, phi);
  return phi;
}

SolvedFields make_fields(const ScenarioSpec& spec, const BsdeSolution& sol,
                         const StrategySpec& strat) {
  if (sol.regimes.size() != static_cast<std::size_t>(spec.m) + 1)
    throw SemanticError("solution regime count does not match the scenario");
  SolvedFields f;
  f.grid = sol.grid;
  f.rho = sol.rho;
  for (int n = 0; n <= spec.m; ++n) {
    f.y.push_back(sol.regimes[static_cast<std::size_t>(n)].y);
    f.z.push_back(sol.regimes[static_cast<std::size_t>(n)].z);
  }
  for (int n = 0; n < spec.m; ++n)
    f.y_next_jump.push_back(sol.regimes[static_cast<std::size_t>(n)].y_next_at_jump);

  if (strat.kind == StrategySpec::Kind::constant &&
      strat.constant.size() != spec.m)
    throw SemanticError("constant strategy must have one component per asset");

  for (int n = 0; n <= spec.m; ++n) {
    Mat pi = strategy_field(spec, sol.grid, n, f.y[static_cast<std::size_t>(n)],
                            f.z[static_cast<std::size_t>(n)],
                            n < spec.m ? &f.y_next_jump[static_cast<std::size_t>(n)] : nullptr);
    const ConstraintSet& cons = spec.constraints[static_cast<std::size_t>(n)];
    switch (strat.kind) {
      case StrategySpec::Kind::optimal:
        break;
      case StrategySpec::Kind::zero:
        pi.setZero();
        break;
      case StrategySpec::Kind::scaled_clipped:
        for (Eigen::Index r = 0; r < pi.rows(); ++r)
          pi.row(r) = cons.project(strat.scale * pi.row(r).transpose()).transpose();
        break;
      case StrategySpec::Kind::flip_first:
        for (Eigen::Index r = 0; r < pi.rows(); ++r) {
          Vec row = pi.row(r).transpose();
          row[0] = -row[0];
          pi.row(r) = cons.project(row).transpose();
        }
        break;
      case StrategySpec::Kind::constant: {
        Vec row = cons.project(strat.constant);
        pi.rowwise() = row.transpose();
        break;
      }
    }
    f.pi.push_back(std::move(pi));
  }
  return f;
}

ComponentRun simulate_regime_component(const ScenarioSpec& spec,
                                       const SolvedFields& fields, int n,
                                       const Vec& checkpoints, const SimOptions& opts,
                                       const WeightFns* weights) {
  require_fields(spec, fields);
  if (n < 0 || n > spec.m) throw SemanticError("regime index out of range");
  if (opts.paths < 2) throw SemanticError("at least two paths are required");
  const std::vector<long> ks = checkpoint_steps(checkpoints, opts.dt);
  const long last_step = ks.back();
  const std::size_t kcount = ks.size();

  const Grid& grid = fields.grid;
  const double gamma = spec.gamma;
  const double rho = fields.rho;
  const double dt = opts.dt;
  const double sqdt = std::sqrt(dt);
  const int d = spec.d, m = spec.m;
  const bool has_next = n < m;
  const std::size_t un = static_cast<std::size_t>(n);

  const Vec start = regime_start_factor(spec, n);
  const double y0_ref = grid.interpolate(fields.y[0], spec.initial_factor);
  const double ystart = grid.interpolate(fields.y[un], start);

  auto w_outer = [&](double t) {
    return weights ? lerp_table(weights->times, weights->outer, t) : 1.0;
  };
  auto w_inner = [&](double t) {
    return weights ? lerp_table(weights->times, weights->inner, t) : 1.0;
  };

  const double v_start =
      -guarded_exp(gamma * (ystart - y0_ref), "V-process start value") * w_outer(0.0);

  Mat vall(opts.paths, static_cast<Eigen::Index>(kcount));
  Mat wall(opts.paths, static_cast<Eigen::Index>(kcount));
  std::vector<unsigned char> bad(static_cast<std::size_t>(opts.paths), 0);

  const VectorMap& fam_alpha = spec.regimes[un].alpha;
  const VectorMap& fam_sigma = spec.regimes[un].sigma;
  const VectorMap& fam_drift = spec.drifts[un];
  const ConstraintSet& cons = spec.constraints[un];
  const Vec& wmass = has_next ? spec.weights(n) : fields.y[un];  // dummy ref when n = m
  const int marks = has_next ? spec.num_marks() : 0;

  auto body = [&](long lo, long hi) {
    Vec phi(d), gv(d), av(d), sf(m * d), pirow(m), bl(m), dw(d);
    for (long p = lo; p < hi; ++p) {
      Rng rng = Rng::for_path(opts.seed, static_cast<std::uint64_t>(p));
      phi = start;
      double x = 0.0, integ = 0.0, term2 = 0.0, t = 0.0;
      double ycur = ystart;
      bool excluded = false;

      auto interp_strategy = [&]() {
        for (int j = 0; j < m; ++j)
          pirow[j] = grid.interpolate(fields.pi[un].col(j), phi);
        require_strategy_admissible(cons, pirow);
      };
      auto inner_term = [&]() {
        double ynj = grid.interpolate(fields.y_next_jump[un], phi);
        double s = 0.0;
        for (int l = 0; l < marks; ++l) {
          spec.regimes[un].beta[static_cast<std::size_t>(l)].eval_into(phi, bl);
          double dp = 0.0;
          for (int i = 0; i < m; ++i) dp += pirow[i] * bl[i];
          s += wmass[l] * guarded_exp(-gamma * dp, "V-process jump factor");
        }
        return s * guarded_exp(gamma * (ynj - integ - y0_ref) - gamma * x,
                               "V-process integrand") *
               w_inner(t);
      };

      interp_strategy();
      double aprev = has_next ? inner_term() : 0.0;
      std::size_t ci = 0;
      if (ks[0] == 0) {
        vall(p, 0) = v_start;
        wall(p, 0) = 0.0;
        ci = 1;
      }
      for (long k = 0; k < last_step; ++k) {
        fam_alpha.eval_into(phi, av);
        fam_sigma.eval_into(phi, sf);
        fam_drift.eval_into(phi, gv);
        for (int i = 0; i < d; ++i) dw[i] = sqdt * rng.normal();
        double dx = 0.0;
        for (int j = 0; j < d; ++j) {
          double vj = 0.0;
          for (int i = 0; i < m; ++i) vj += sf[i * d + j] * pirow[i];
          dx += vj * (av[j] * dt + dw[j]);
        }
        x += dx;
        for (int i = 0; i < d; ++i) {
          double kd = 0.0;
          for (int j = 0; j < d; ++j) kd += spec.kappa(i, j) * dw[j];
          phi[i] += gv[i] * dt + kd;
        }
        t = static_cast<double>(k + 1) * dt;
        if (!grid.inside(phi)) {
          excluded = true;
          break;
        }
        double ynew = grid.interpolate(fields.y[un], phi);
        integ += 0.5 * rho * (ycur + ynew) * dt;
        ycur = ynew;
        interp_strategy();
        if (has_next) {
          double anew = inner_term();
          term2 += 0.5 * (aprev + anew) * dt;
          aprev = anew;
        }
        if (ci < kcount && k + 1 == ks[ci]) {
          double e = gamma * (ycur - integ - y0_ref) - gamma * x;
          vall(p, static_cast<Eigen::Index>(ci)) =
              -guarded_exp(e, "V-process value") * w_outer(t) - term2;
          wall(p, static_cast<Eigen::Index>(ci)) = x;
          ++ci;
        }
      }
      bad[static_cast<std::size_t>(p)] = excluded ? 1 : 0;
    }
  };
  parallel_paths(opts.paths, opts.threads, body);

  long excluded = 0;
  for (unsigned char b : bad) excluded += b;
  check_exclusions(excluded, opts.paths);

  ComponentRun run;
  run.v_start = v_start;
  run.checkpoints = checkpoints;
  run.requested = opts.paths;
  run.excluded = excluded;
  run.v = keep_rows(vall, bad, opts.paths - excluded);
  run.wealth = keep_rows(wall, bad, opts.paths - excluded);
  return run;
}

MartingaleReport martingale_test(const ScenarioSpec& spec, const SolvedFields& fields,
                                 int n, const Vec& checkpoints, bool two_sided,
                                 const SimOptions& opts) {
  ComponentRun run = simulate_regime_component(spec, fields, n, checkpoints, opts);
  MartingaleReport rep;
  rep.regime = n;
  rep.two_sided = two_sided;
  rep.v_start = run.v_start;
  rep.checkpoints = checkpoints;
  rep.paths = run.v.rows();
  rep.excluded = run.excluded;
  column_stats(run.v, rep.mean, rep.se);
  rep.gap = rep.mean.array() - run.v_start;
  // a spread at the rounding-noise floor (paths identical up to last-ulp
  // interpolation noise) cannot support a two-sided 3-sigma certificate
  const double se_floor = 64.0 * std::numeric_limits<double>::epsilon() *
                          std::max(1.0, std::abs(run.v_start));
  if (two_sided && (rep.se.array() <= se_floor).any())
    throw SemanticError(
        "degenerate Monte Carlo spread: all paths identical, two-sided test impossible");
  rep.pass.resize(static_cast<std::size_t>(checkpoints.size()));
  rep.all_pass = true;
  const double slack = 1e-12 * std::max(1.0, std::abs(run.v_start));
  for (Eigen::Index i = 0; i < checkpoints.size(); ++i) {
    bool ok = two_sided ? std::abs(rep.gap[i]) <= 3.0 * rep.se[i]
                        : rep.gap[i] <= 3.0 * rep.se[i] + slack;
    rep.pass[static_cast<std::size_t>(i)] = ok;
    rep.all_pass = rep.all_pass && ok;
  }
  return rep;
}

DecompositionReport decomposition_identity_test(const ScenarioSpec& spec,
                                                const SolvedFields& fields, int n,
                                                double s, const SimOptions& opts) {
  if (!(s > 0)) throw SemanticError("decomposition horizon must be positive");
  if (n < 0 || n > spec.m) throw SemanticError("regime index out of range");

  // Survival-density ratio tables (independent quadrature path over the
  // closed form) at interpolation knots; the simulator applies them as the
  // outer weight on the component value and the inner weight on the
  // next-regime integrand, turning the component martingale statistic into
  // the recursive decomposition identity.
  const int nk = 33;
  WeightFns w;
  w.times.setLinSpaced(nk, 0.0, s);
  w.outer.resize(nk);
  w.inner.resize(nk);
  Vec theta_out = Vec::Zero(n);
  for (int k = 0; k < nk; ++k) {
    double t = w.times[k];
    w.outer[k] = forward_scale(survival_density_quadrature(spec, n, t, theta_out),
                               survival_density(spec, n, t, theta_out));
  }
  if (n < spec.m) {
    Vec theta_in = Vec::Zero(n + 1);
    for (int k = 0; k < nk; ++k) {
      double t = w.times[k];
      theta_in[n] = t;
      w.inner[k] = forward_scale(survival_density_quadrature(spec, n + 1, t, theta_in),
                                 survival_density(spec, n + 1, t, theta_in));
    }
  } else {
    w.inner.setOnes();
  }

  Vec cks(1);
  cks[0] = s;
  ComponentRun run = simulate_regime_component(spec, fields, n, cks, opts, &w);

  DecompositionReport rep;
  rep.regime = n;
  rep.s = s;
  rep.lhs = run.v_start;
  rep.paths = run.v.rows();
  Vec mean, se;
  column_stats(run.v, mean, se);
  rep.mean = mean[0];
  rep.se = se[0];
  double gap = std::abs(rep.mean - rep.lhs);
  rep.rel_gap = gap / std::max(std::abs(rep.lhs), 1e-300);
  rep.pass = gap <= 3.0 * rep.se + 1e-12 * std::max(1.0, std::abs(rep.lhs));
  return rep;
}

namespace {

// Shared stepping core for the full-cascade simulators: advances (phi, x, t)
// under regime `r` to `te` with uniform steps of dt and a final partial step,
// optionally accumulating the trapezoid of rho * y along the way.
struct CascadeState {
  Vec phi;
  double x = 0, t = 0, integ = 0, ycur = 0;
  int r = 0;
};

class CascadeStepper {
 public:
  CascadeStepper(const ScenarioSpec& spec, const SolvedFields& fields, double dt,
                 bool track_y)
      : spec_(spec), fields_(fields), dt_(dt), sqdt_(std::sqrt(dt)), track_y_(track_y),
        gv_(spec.d), av_(spec.d), sf_(spec.m * spec.d), pirow_(spec.m), dw_(spec.d) {}

  // Returns false when the factor leaves the grid box (path excluded).
  bool advance(CascadeState& st, double te, Rng& rng) {
    const Grid& grid = fields_.grid;
    const int d = spec_.d, m = spec_.m;
    const std::size_t ur = static_cast<std::size_t>(st.r);
    const VectorMap& fam_alpha = spec_.regimes[ur].alpha;
    const VectorMap& fam_sigma = spec_.regimes[ur].sigma;
    const VectorMap& fam_drift = spec_.drifts[ur];
    while (te - st.t > 1e-12) {
      double h = std::min(dt_, te - st.t);
      double sq = h == dt_ ? sqdt_ : std::sqrt(h);
      interp_strategy(st);
      fam_alpha.eval_into(st.phi, av_);
      fam_sigma.eval_into(st.phi, sf_);
      fam_drift.eval_into(st.phi, gv_);
      for (int i = 0; i < d; ++i) dw_[i] = sq * rng.normal();
      double dx = 0.0;
      for (int j = 0; j < d; ++j) {
        double vj = 0.0;
        for (int i = 0; i < m; ++i) vj += sf_[i * d + j] * pirow_[i];
        dx += vj * (av_[j] * h + dw_[j]);
      }
      st.x += dx;
      for (int i = 0; i < d; ++i) {
        double kd = 0.0;
        for (int j = 0; j < d; ++j) kd += spec_.kappa(i, j) * dw_[j];
        st.phi[i] += gv_[i] * h + kd;
      }
      st.t += h;
      if (!grid.inside(st.phi)) return false;
      if (track_y_) {
        double ynew = grid.interpolate(fields_.y[ur], st.phi);
        st.integ += 0.5 * fields_.rho * (st.ycur + ynew) * h;
        st.ycur = ynew;
      }
    }
    st.t = te;
    return true;
  }

  // Applies the realized default of regime st.r with the given mark: wealth
  // jumps by pi'beta at the pre-jump state, the factor by its jump map.
  void apply_default(CascadeState& st, int mark) {
    interp_strategy(st);
    Vec bl = spec_.beta(st.r, mark, st.phi);
    double dp = 0.0;
    for (int i = 0; i < spec_.m; ++i) dp += pirow_[i] * bl[i];
    st.x += dp;
    st.phi = apply_jump(spec_, st.r, st.phi);
    st.r += 1;
    if (track_y_)
      st.ycur = fields_.grid.interpolate(fields_.y[static_cast<std::size_t>(st.r)], st.phi);
  }

  const Vec& strategy() const { return pirow_; }

  void interp_strategy(const CascadeState& st) {
    const std::size_t ur = static_cast<std::size_t>(st.r);
    for (int j = 0; j < spec_.m; ++j)
      pirow_[j] = fields_.grid.interpolate(fields_.pi[ur].col(j), st.phi);
    require_strategy_admissible(spec_.constraints[ur], pirow_);
  }

 private:
  const ScenarioSpec& spec_;
  const SolvedFields& fields_;
  double dt_, sqdt_;
  bool track_y_;
  Vec gv_, av_, sf_, pirow_, dw_;
};

double logsumexp(const std::vector<double>& v) {
  double mx = -kInf;
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return -kInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

GrowthReport growth_rate_estimate(const ScenarioSpec& spec, const SolvedFields& fields,
                                  const Vec& horizons, const SimOptions& opts) {
  require_fields(spec, fields);
  if (horizons.size() == 0) throw SemanticError("horizon ladder must be nonempty");
  for (Eigen::Index i = 0; i < horizons.size(); ++i) {
    if (!(horizons[i] > 0)) throw SemanticError("horizons must be positive");
    if (i > 0 && !(horizons[i] > horizons[i - 1]))
      throw SemanticError("horizon ladder must be strictly increasing");
  }
  if (opts.paths < 2) throw SemanticError("at least two paths are required");
  const int hcount = static_cast<int>(horizons.size());
  const double gamma = spec.gamma;
  const int m = spec.m;

  Mat lmat(opts.paths, hcount);
  lmat.setConstant(kNaN);
  std::vector<unsigned char> bad(static_cast<std::size_t>(opts.paths), 0);

  auto body = [&](long lo, long hi) {
    CascadeStepper stepper(spec, fields, opts.dt, /*track_y=*/false);
    std::vector<double> xh(static_cast<std::size_t>(hcount));
    for (long p = lo; p < hi; ++p) {
      Rng rng = Rng::for_path(opts.seed, static_cast<std::uint64_t>(p));
      DefaultDraw draw = sample_defaults(spec, rng);
      CascadeState st;
      st.phi = spec.initial_factor;
      double x_tm = kNaN;
      int kd = 0, kh = 0;
      bool excluded = false;
      while (kh < hcount) {
        double t_def = kd < m ? draw.times[kd] : kInf;
        double t_hor = horizons[kh];
        double te = std::min(t_def, t_hor);
        if (!stepper.advance(st, te, rng)) {
          excluded = true;
          break;
        }
        if (t_def <= t_hor) {
          stepper.apply_default(st, draw.marks[static_cast<std::size_t>(kd)]);
          ++kd;
          if (kd == m) x_tm = st.x;
        } else {
          xh[static_cast<std::size_t>(kh)] = st.x;
          ++kh;
        }
      }
      if (excluded) {
        bad[static_cast<std::size_t>(p)] = 1;
        continue;
      }
      for (int j = 0; j < hcount; ++j)
        if (draw.times[m - 1] <= horizons[j])
          lmat(p, j) = -gamma * (xh[static_cast<std::size_t>(j)] - x_tm);
    }
  };
  parallel_paths(opts.paths, opts.threads, body);

  long excluded = 0;
  for (unsigned char b : bad) excluded += b;
  check_exclusions(excluded, opts.paths);

  GrowthReport rep;
  rep.horizons = horizons;
  rep.rate.setConstant(hcount, kNaN);
  rep.se.setConstant(hcount, kNaN);
  rep.qualifying.assign(static_cast<std::size_t>(hcount), 0);
  rep.skipped.assign(static_cast<std::size_t>(hcount), false);
  rep.paths = opts.paths;
  rep.excluded = excluded;
  std::vector<double> vals, vals2;
  for (int j = 0; j < hcount; ++j) {
    vals.clear();
    vals2.clear();
    for (long p = 0; p < opts.paths; ++p) {
      double l = lmat(p, j);
      if (std::isfinite(l)) {
        vals.push_back(l);
        vals2.push_back(2.0 * l);
      }
    }
    long k = static_cast<long>(vals.size());
    rep.qualifying[static_cast<std::size_t>(j)] = k;
    if (k < 100) {
      rep.skipped[static_cast<std::size_t>(j)] = true;
      continue;
    }
    double m1 = logsumexp(vals) - std::log(static_cast<double>(k));
    double m2 = logsumexp(vals2) - std::log(static_cast<double>(k));
    double t = horizons[j];
    rep.rate[j] = m1 / t;
    double ratio = std::exp(std::max(0.0, m2 - 2.0 * m1)) - 1.0;
    ratio *= static_cast<double>(k) / static_cast<double>(k - 1);
    rep.se[j] = std::sqrt(std::max(0.0, ratio) / static_cast<double>(k)) / t;
  }
  return rep;
}

BundleSummary simulate_bundle(const ScenarioSpec& spec, const SolvedFields& fields,
                              double horizon, const Vec& checkpoints,
                              const SimOptions& opts) {
  require_fields(spec, fields);
  if (!(horizon > 0)) throw SemanticError("horizon must be positive");
  if (checkpoints.size() == 0) throw SemanticError("at least one checkpoint is required");
  double prev = 0.0;
  for (Eigen::Index i = 0; i < checkpoints.size(); ++i) {
    if (!(checkpoints[i] > prev && (i > 0 || checkpoints[i] > 0)))
      throw SemanticError("checkpoints must be positive and strictly increasing");
    prev = checkpoints[i];
  }
  if (checkpoints[checkpoints.size() - 1] > horizon)
    throw SemanticError("checkpoints must not exceed the horizon");
  if (opts.paths < 2) throw SemanticError("at least two paths are required");
  const int kcount = static_cast<int>(checkpoints.size());
  const double gamma = spec.gamma;
  const int m = spec.m;
  const double y0_ref = fields.grid.interpolate(fields.y[0], spec.initial_factor);

  Mat wealth(opts.paths, kcount), uhat(opts.paths, kcount);
  Vec tfirst(opts.paths), tlast(opts.paths);
  std::vector<unsigned char> bad(static_cast<std::size_t>(opts.paths), 0);

  auto body = [&](long lo, long hi) {
    CascadeStepper stepper(spec, fields, opts.dt, /*track_y=*/true);
    for (long p = lo; p < hi; ++p) {
      Rng rng = Rng::for_path(opts.seed, static_cast<std::uint64_t>(p));
      DefaultDraw draw = sample_defaults(spec, rng);
      CascadeState st;
      st.phi = spec.initial_factor;
      st.ycur = y0_ref;
      int kd = 0, kc = 0;
      bool excluded = false;
      while (kc < kcount) {
        double t_def = kd < m ? draw.times[kd] : kInf;
        double t_ck = checkpoints[kc];
        double te = std::min(t_def, t_ck);
        if (!stepper.advance(st, te, rng)) {
          excluded = true;
          break;
        }
        if (t_def <= t_ck) {
          stepper.apply_default(st, draw.marks[static_cast<std::size_t>(kd)]);
          ++kd;
        } else {
          double e = gamma * (st.ycur - st.integ - y0_ref) - gamma * st.x;
          uhat(p, kc) = -guarded_exp(e, "performance field value");
          wealth(p, kc) = st.x;
          ++kc;
        }
      }
      bad[static_cast<std::size_t>(p)] = excluded ? 1 : 0;
      tfirst[p] = draw.times[0] <= horizon ? draw.times[0] : kInf;
      tlast[p] = draw.times[m - 1] <= horizon ? draw.times[m - 1] : kInf;
    }
  };
  parallel_paths(opts.paths, opts.threads, body);

  long excluded = 0;
  for (unsigned char b : bad) excluded += b;
  check_exclusions(excluded, opts.paths);
  long kept = opts.paths - excluded;

  BundleSummary out;
  out.checkpoints = checkpoints;
  out.requested = opts.paths;
  out.excluded = excluded;
  out.wealth = keep_rows(wealth, bad, kept);
  out.u_hat = keep_rows(uhat, bad, kept);
  out.t_first.resize(kept);
  out.t_last.resize(kept);
  long r = 0;
  for (long p = 0; p < opts.paths; ++p) {
    if (bad[static_cast<std::size_t>(p)]) continue;
    out.t_first[r] = tfirst[p];
    out.t_last[r] = tlast[p];
    ++r;
  }
  return out;
}

PathDetail simulate_path_detail(const ScenarioSpec& spec, const SolvedFields& fields,
                                double horizon, double dt, std::uint64_t seed) {
  require_fields(spec, fields);
  if (!(horizon > 0)) throw SemanticError("horizon must be positive");
  Rng rng = Rng::for_path(seed, 0);
  PathDetail out;
  out.draw = sample_defaults(spec, rng);
  out.factor = simulate_factor_path(spec, out.draw, horizon, dt, rng);

  const Grid& grid = fields.grid;
  const int m = spec.m, d = spec.d;
  double x = 0.0;
  Vec prices = Vec::Ones(m);
  Vec pirow(m), av(d), sf(m * d);
  const std::size_t nseg = out.factor.segments.size();
  for (std::size_t si = 0; si < nseg; ++si) {
    const FactorSegment& seg = out.factor.segments[si];
    const std::size_t ur = static_cast<std::size_t>(seg.regime);
    const int steps = seg.steps();
    Vec wseg(steps + 1);
    Mat pseg(steps + 1, m);
    wseg[0] = x;
    pseg.row(0) = prices.transpose();
    for (int k = 0; k < steps; ++k) {
      Vec phi = seg.values.row(k).transpose();
      double h = seg.step_sizes[k];
      for (int j = 0; j < m; ++j)
        pirow[j] = grid.interpolate(fields.pi[ur].col(j), phi);
      require_strategy_admissible(spec.constraints[ur], pirow);
      spec.regimes[ur].alpha.eval_into(phi, av);
      spec.regimes[ur].sigma.eval_into(phi, sf);
      double dx = 0.0;
      for (int i = 0; i < m; ++i) {
        double di = 0.0;
        for (int j = 0; j < d; ++j)
          di += sf[i * d + j] * (av[j] * h + seg.increments(k, j));
        prices[i] *= 1.0 + di;
        dx += pirow[i] * di;
      }
      x += dx;
      wseg[k + 1] = x;
      pseg.row(k + 1) = prices.transpose();
    }
    out.wealth.push_back(std::move(wseg));
    out.prices.push_back(std::move(pseg));
    if (si + 1 < nseg) {
      // The boundary between consecutive segments is the realized default of
      // this segment's regime.
      Vec phi_pre = seg.values.row(steps).transpose();
      for (int j = 0; j < m; ++j)
        pirow[j] = grid.interpolate(fields.pi[ur].col(j), phi_pre);
      require_strategy_admissible(spec.constraints[ur], pirow);
      int mark = out.draw.marks[static_cast<std::size_t>(seg.regime)];
      Vec bl = spec.beta(seg.regime, mark, phi_pre);
      double dp = 0.0;
      for (int i = 0; i < m; ++i) dp += pirow[i] * bl[i];
      x += dp;
      for (int i = 0; i < m; ++i) prices[i] *= 1.0 + bl[i];
      out.pre_jump_pi.push_back(pirow);
      out.pre_jump_beta.push_back(bl);
    }
  }
  return out;
}

SurvivalCheck survival_crosscheck(const ScenarioSpec& spec, const Vec& times,
                                  long paths, std::uint64_t seed) {
  if (times.size() == 0) throw SemanticError("at least one time is required");
  for (Eigen::Index i = 0; i < times.size(); ++i)
    if (!(times[i] > 0)) throw SemanticError("times must be positive");
  if (paths < 100) throw SemanticError("at least 100 paths are required");

  std::vector<long> counts(static_cast<std::size_t>(times.size()), 0);
  for (long p = 0; p < paths; ++p) {
    Rng rng = Rng::for_path(seed, static_cast<std::uint64_t>(p));
    DefaultDraw draw = sample_defaults(spec, rng);
    for (Eigen::Index i = 0; i < times.size(); ++i)
      if (draw.times[0] > times[i]) ++counts[static_cast<std::size_t>(i)];
  }

  SurvivalCheck out;
  out.times = times;
  out.paths = paths;
  out.empirical.resize(times.size());
  out.se.resize(times.size());
  out.analytic.resize(times.size());
  out.pass = true;
  const Vec empty_chain;
  for (Eigen::Index i = 0; i < times.size(); ++i) {
    double ph = static_cast<double>(counts[static_cast<std::size_t>(i)]) /
                static_cast<double>(paths);
    out.empirical[i] = ph;
    out.se[i] = std::sqrt(std::max(ph * (1.0 - ph), 0.0) / static_cast<double>(paths));
    out.analytic[i] = survival_density(spec, 0, times[i], empty_chain);
    bool ok = std::abs(ph - out.analytic[i]) <= 3.0 * out.se[i] + 1e-12;
    out.pass = out.pass && ok;
  }
  return out;
}

}  // namespace fdb
