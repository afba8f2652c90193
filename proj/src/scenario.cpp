#include "fdb/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "fdb/rng.hpp"

namespace fdb {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kSqrtPi = 1.7724538509055160273;

std::string format_detail(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}
}  // namespace

// ---------------------------------------------------------------------------
// ScalarFamily
// ---------------------------------------------------------------------------
double ScalarFamily::eval(const Vec& phi) const {
  switch (kind) {
    case Kind::constant:
      return intercept;
    case Kind::affine:
      return coef.dot(phi) + intercept;
    case Kind::tanh_affine:
      return scale * std::tanh(coef.dot(phi) + inner_shift) + intercept;
    case Kind::tabulated: {
      double x = phi[0];
      if (x <= knots[0]) return values[0];
      Eigen::Index last = knots.size() - 1;
      if (x >= knots[last]) return values[last];
      const double* begin = knots.data();
      const double* hi = std::upper_bound(begin, begin + knots.size(), x);
      Eigen::Index i = hi - begin;  // knots[i-1] <= x < knots[i]
      double w = (x - knots[i - 1]) / (knots[i] - knots[i - 1]);
      return (1.0 - w) * values[i - 1] + w * values[i];
    }
  }
  return 0.0;
}

double ScalarFamily::sup_norm() const {
  switch (kind) {
    case Kind::constant:
      return std::abs(intercept);
    case Kind::affine:
      return coef.size() == 0 || coef.isZero(0.0) ? std::abs(intercept) : kInf;
    case Kind::tanh_affine:
      if (coef.size() == 0 || coef.isZero(0.0))
        return std::abs(scale * std::tanh(inner_shift) + intercept);
      return std::abs(scale) + std::abs(intercept);
    case Kind::tabulated:
      return values.cwiseAbs().maxCoeff();
  }
  return 0.0;
}

double ScalarFamily::lipschitz() const {
  switch (kind) {
    case Kind::constant:
      return 0.0;
    case Kind::affine:
      return coef.size() == 0 ? 0.0 : coef.norm();
    case Kind::tanh_affine:
      return coef.size() == 0 ? 0.0 : std::abs(scale) * coef.norm();
    case Kind::tabulated: {
      double lip = 0.0;
      for (Eigen::Index i = 1; i < knots.size(); ++i)
        lip = std::max(lip,
                       std::abs(values[i] - values[i - 1]) / (knots[i] - knots[i - 1]));
      return lip;
    }
  }
  return 0.0;
}

double VectorMap::sup_norm_closed_form() const {
  double s = 0.0;
  for (const auto& c : comp) {
    double v = c.sup_norm();
    if (!std::isfinite(v)) return kInf;
    s += v * v;
  }
  return std::sqrt(s);
}

double VectorMap::lipschitz_closed_form() const {
  double s = 0.0;
  for (const auto& c : comp) {
    double v = c.lipschitz();
    s += v * v;
  }
  return std::sqrt(s);
}

bool VectorMap::bounded() const {
  return std::all_of(comp.begin(), comp.end(),
                     [](const ScalarFamily& c) { return c.bounded(); });
}

// ---------------------------------------------------------------------------
// ConstraintSet
// ---------------------------------------------------------------------------
Vec ConstraintSet::project(const Vec& pi) const {
  if (kind == Kind::box) return pi.cwiseMax(-radius).cwiseMin(radius);
  double n = pi.norm();
  if (n <= radius) return pi;
  return pi * (radius / n);
}

bool ConstraintSet::contains(const Vec& pi, double tol) const {
  if (kind == Kind::box) return pi.cwiseAbs().maxCoeff() <= radius + tol;
  return pi.norm() <= radius + tol;
}

// ---------------------------------------------------------------------------
// Constants ledger
// ---------------------------------------------------------------------------
namespace {

// Deterministic evaluation lattice covering the grid box.
std::vector<Vec> lattice_points(const Grid& g, int per_axis) {
  std::vector<Vec> pts;
  double step = 2.0 * g.half_width / (per_axis - 1);
  if (g.d == 1) {
    pts.reserve(per_axis);
    for (int i = 0; i < per_axis; ++i) {
      Vec p(1);
      p[0] = -g.half_width + i * step;
      pts.push_back(p);
    }
  } else {
    pts.reserve(static_cast<std::size_t>(per_axis) * per_axis);
    for (int i = 0; i < per_axis; ++i)
      for (int j = 0; j < per_axis; ++j) {
        Vec p(2);
        p[0] = -g.half_width + i * step;
        p[1] = -g.half_width + j * step;
        pts.push_back(p);
      }
  }
  return pts;
}

}  // namespace

ConstantsLedger compute_constants(const ScenarioSpec& s) {
  ConstantsLedger L;
  const int m = s.m;
  L.gamma = s.gamma;
  L.rho = s.rho;
  L.c_g = s.dissipativity;
  L.d_g = s.drift_gap;
  L.sigma_min = s.sigma_min;
  for (const auto& c : s.constraints) L.c_pi = std::max(L.c_pi, c.radius);

  L.k_alpha_regime.resize(m + 1);
  for (int n = 0; n <= m; ++n) {
    const MarketRegime& r = s.regimes[n];
    L.k_alpha_regime[n] = r.alpha.declared_sup;
    L.k_alpha = std::max(L.k_alpha, r.alpha.declared_sup);
    L.c_alpha = std::max(L.c_alpha, r.alpha.declared_lip);
    L.k_sigma = std::max(L.k_sigma, r.sigma.declared_sup);
    L.c_sigma = std::max(L.c_sigma, r.sigma.declared_lip);
    for (const auto& b : r.beta) {
      L.k_beta = std::max(L.k_beta, b.declared_sup);
      L.c_beta = std::max(L.c_beta, b.declared_lip);
    }
  }
  for (const auto& jm : s.jump_maps) {
    L.k_varphi = std::max(L.k_varphi, jm.declared_sup);
    L.c_varphi = std::max(L.c_varphi, jm.declared_lip);
  }

  const double g = s.gamma;
  double max_a2 = 0.0;
  for (double a : L.k_alpha_regime) max_a2 = std::max(max_a2, a * a);
  L.k_y = (1.0 / g) * std::max(1.0, max_a2 / 2.0);

  double branch1 = g * (L.c_sigma * L.c_pi + L.c_alpha / g) *
                       (L.c_pi * L.k_sigma + L.k_alpha / g) +
                   L.c_alpha * L.k_alpha / g;
  double branch2 = L.c_sigma * L.c_pi + L.c_alpha / g + L.c_alpha;
  L.c_phi = std::max(branch1, branch2);
  L.cphi_below_cg = L.c_phi < L.c_g;

  // Gradient bounds per regime; infinite when the contraction margin is gone.
  L.k_z.assign(m + 1, kInf);
  if (L.c_g > L.c_phi) {
    for (int n = 0; n <= m; ++n) {
      double geom = 0.0;
      for (int j = 0; j < m - n; ++j) geom += std::pow(1.0 + L.c_varphi, j);
      L.k_z[n] = L.c_phi * std::pow(1.0 + L.c_varphi, m - n) / (L.c_g - L.c_phi) +
                 L.c_pi * L.c_beta * geom;
    }
  }

  // One-sided jump-gap bounds, recursive from the terminal regime down.
  L.k_delta_y.assign(m + 1, std::numeric_limits<double>::quiet_NaN());
  if (m >= 1) {
    double bracket = 2.0 * L.k_varphi +
                     (kSqrtPi / 2.0) * std::exp(L.c_pi * L.k_beta / 2.0) *
                         std::sqrt(L.d_g * L.d_g / L.c_g + 4.0);
    double c_level = std::isfinite(L.k_z[m]) ? (g / 2.0) * L.k_z[m] * L.k_z[m] : kInf;
    for (int n = m; n >= 1; --n) {
      L.k_delta_y[n] = std::isfinite(c_level) && std::isfinite(L.k_z[n])
                           ? g * std::exp(L.c_pi * L.k_beta) * c_level - 1.0 +
                                 L.k_z[n] * bracket
                           : kInf;
      if (n >= 2)
        c_level = std::isfinite(L.k_delta_y[n]) && std::isfinite(L.k_z[n - 1])
                      ? (g / 2.0) * L.k_z[n - 1] * L.k_z[n - 1] +
                            (1.0 / g) * std::exp(g * L.k_delta_y[n])
                      : kInf;
    }
  }

  // Solvability condition for the unconstrained strategy bound.
  L.strategy_bound_margin.assign(m + 1, -kInf);
  bool all_margins = true;
  for (int n = 0; n <= m; ++n) {
    double rhs = 2.0 * L.k_alpha_regime[n] / g +
                 (std::isfinite(L.k_z[n]) ? 2.0 * L.k_z[n] : kInf);
    if (n < m)
      rhs += std::isfinite(L.k_delta_y[n + 1])
                 ? (std::sqrt(2.0) / g) * std::exp((g / 2.0) * L.k_delta_y[n + 1])
                 : kInf;
    L.strategy_bound_margin[n] = L.sigma_min * L.c_pi - rhs;
    all_margins = all_margins && L.strategy_bound_margin[n] >= 0.0;
  }
  L.strategy_bound_feasible =
      all_margins && L.c_pi > 0.0 && L.c_pi < L.c_g && L.c_phi <= L.c_g;

  // Cross-regime dominance of the squared risk premium, plus feasibility of
  // the unconstrained optimizer, sampled on a deterministic lattice.
  L.risk_premium_margin = kInf;
  bool premium_ok = m >= 1;
  if (m >= 1 && std::isfinite(L.k_z[0])) {
    int per_axis = s.d == 1 ? 201 : 21;
    std::vector<Vec> pts = lattice_points(s.grid, per_axis);
    for (int n = 0; n < m && premium_ok; ++n) {
      double kzn = L.k_z[n], kzn1 = L.k_z[n + 1];
      std::vector<Vec> a_n(pts.size()), a_n1(pts.size());
      for (std::size_t i = 0; i < pts.size(); ++i) {
        a_n[i] = s.alpha(n, pts[i]);
        a_n1[i] = s.alpha(n + 1, pts[i]);
      }
      for (std::size_t i = 0; i < pts.size(); ++i) {
        for (std::size_t j = 0; j < pts.size(); ++j) {
          double lhs = a_n[i].squaredNorm() / (2.0 * g);
          double rhs = a_n1[j].squaredNorm() / (2.0 * g) + g * kzn * kzn / 2.0 +
                       (a_n[i] - a_n1[j]).norm() * kzn +
                       (kzn + kzn1) * a_n1[j].norm();
          L.risk_premium_margin = std::min(L.risk_premium_margin, lhs - rhs);
        }
      }
      // Feasibility of the unconstrained optimizer at zero gradient.
      for (std::size_t i = 0; i < pts.size(); ++i) {
        Mat sig = s.sigma(n, pts[i]);
        Vec pihat = (sig * sig.transpose()).ldlt().solve(sig * a_n[i]) / g;
        if (!s.constraints[n].contains(pihat, 1e-9) ||
            (sig.transpose() * pihat - a_n[i] / g).norm() > 1e-8) {
          premium_ok = false;
          break;
        }
      }
    }
  } else {
    L.risk_premium_margin = m >= 1 ? -kInf : kInf;
    premium_ok = false;
  }
  L.risk_premium_monotone = premium_ok && L.risk_premium_margin >= 0.0;
  return L;
}

namespace {
json number_or_tag(double v) {
  if (std::isnan(v)) return json(nullptr);
  if (!std::isfinite(v)) return json(v > 0 ? "infinity" : "-infinity");
  return json(v);
}
json vector_json(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(number_or_tag(x));
  return a;
}
}  // namespace

json ConstantsLedger::to_json() const {
  json j;
  j["gamma"] = gamma;
  j["rho"] = rho;
  j["c_g"] = c_g;
  j["d_g"] = d_g;
  j["c_pi"] = c_pi;
  j["sigma_min"] = sigma_min;
  j["k_alpha"] = k_alpha;
  j["c_alpha"] = c_alpha;
  j["k_sigma"] = k_sigma;
  j["c_sigma"] = c_sigma;
  j["k_beta"] = k_beta;
  j["c_beta"] = c_beta;
  j["k_varphi"] = k_varphi;
  j["c_varphi"] = c_varphi;
  j["k_alpha_regime"] = vector_json(k_alpha_regime);
  j["k_y"] = k_y;
  j["c_phi"] = c_phi;
  j["k_z"] = vector_json(k_z);
  j["k_delta_y"] = vector_json(k_delta_y);
  j["cphi_below_cg"] = cphi_below_cg;
  j["strategy_bound_feasible"] = strategy_bound_feasible;
  j["strategy_bound_margin"] = vector_json(strategy_bound_margin);
  j["risk_premium_monotone"] = risk_premium_monotone;
  j["risk_premium_margin"] = number_or_tag(risk_premium_margin);
  return j;
}

// ---------------------------------------------------------------------------
// Dissipativity / drift-gap Monte Carlo check
// ---------------------------------------------------------------------------
DissipativityReport check_dissipativity(const ScenarioSpec& s, int pairs,
                                        std::uint64_t seed) {
  DissipativityReport rep;
  rep.worst_ratio.assign(s.m + 1, -kInf);
  Rng rng(seed);
  double R = s.grid.half_width;
  Vec p1(s.d), p2(s.d);
  for (int k = 0; k < pairs; ++k) {
    for (int i = 0; i < s.d; ++i) {
      p1[i] = (2.0 * rng.uniform() - 1.0) * R;
      p2[i] = (2.0 * rng.uniform() - 1.0) * R;
    }
    double dist2 = (p1 - p2).squaredNorm();
    if (dist2 < 1e-16) continue;
    for (int n = 0; n <= s.m; ++n) {
      double ratio = (s.drift(n, p1) - s.drift(n, p2)).dot(p1 - p2) / dist2;
      rep.worst_ratio[n] = std::max(rep.worst_ratio[n], ratio);
      if (n >= 1)
        rep.observed_drift_gap = std::max(
            rep.observed_drift_gap, (s.drift(n, p1) - s.drift(n - 1, p1)).norm());
    }
  }
  rep.pass = true;
  std::ostringstream detail;
  for (int n = 0; n <= s.m; ++n) {
    double margin = rep.worst_ratio[n] + s.dissipativity;
    if (margin > 1e-9) {
      rep.pass = false;
      detail << "regime " << n << ": worst pairing ratio " << rep.worst_ratio[n]
             << " exceeds -" << s.dissipativity << " (margin " << margin << "); ";
    }
  }
  if (rep.observed_drift_gap > s.drift_gap + 1e-9) {
    rep.pass = false;
    detail << "observed drift gap " << rep.observed_drift_gap
           << " exceeds declared " << s.drift_gap << "; ";
  }
  if (rep.pass) {
    detail << "worst ratios:";
    for (double r : rep.worst_ratio) detail << ' ' << r;
    detail << "; observed drift gap " << rep.observed_drift_gap;
  }
  rep.detail = detail.str();
  return rep;
}

// ---------------------------------------------------------------------------
// Validation battery
// ---------------------------------------------------------------------------
namespace {

struct SampledBounds {
  double sup = 0.0;
  double lip = 0.0;
};

// Empirical sup and Lipschitz constant of a map on the lattice (consecutive
// pairs along the first axis give the directional slopes).
SampledBounds sample_map(const VectorMap& f, const std::vector<Vec>& pts) {
  SampledBounds b;
  Vec prev, cur(f.out_dim);
  Vec prev_phi;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    f.eval_into(pts[i], cur);
    b.sup = std::max(b.sup, cur.norm());
    if (i > 0) {
      double dphi = (pts[i] - prev_phi).norm();
      if (dphi > 1e-12)
        b.lip = std::max(b.lip, (cur - prev).norm() / dphi);
    }
    prev = cur;
    prev_phi = pts[i];
  }
  return b;
}

void check_declared(std::vector<CheckResult>& out, const std::string& label,
                    const VectorMap& f, const std::vector<Vec>& pts) {
  SampledBounds b = sample_map(f, pts);
  bool sup_ok = !std::isfinite(f.declared_sup) || b.sup <= f.declared_sup + 1e-7;
  bool lip_ok = b.lip <= f.declared_lip + 1e-7;
  std::ostringstream d;
  d << "sampled sup " << b.sup << " vs declared " << f.declared_sup
    << ", sampled lipschitz " << b.lip << " vs declared " << f.declared_lip;
  out.push_back({label, sup_ok && lip_ok, d.str()});
}

}  // namespace

std::vector<CheckResult> validate_scenario(const ScenarioSpec& s,
                                           const ConstantsLedger& ledger) {
  std::vector<CheckResult> out;
  const int m = s.m;
  int per_axis = s.d == 1 ? 401 : 41;
  std::vector<Vec> pts = lattice_points(s.grid, per_axis);

  // kappa: unit Frobenius norm; diagonal when d = 2 (the grid solver treats
  // the diffusion tensor axis-by-axis).
  {
    double norm = s.kappa.norm();
    bool ok = std::abs(norm - 1.0) <= 1e-9;
    std::string detail = "frobenius norm " + format_detail(norm);
    if (s.d == 2) {
      double off = std::abs(s.kappa(0, 1)) + std::abs(s.kappa(1, 0));
      if (off > 1e-14) {
        ok = false;
        detail += "; off-diagonal entries present (unsupported for d=2)";
      }
    }
    out.push_back({"kappa_normalized", ok, detail});
  }

  // Market coefficient maps must be bounded (the drift is the only coefficient
  // allowed to grow).
  {
    bool ok = true;
    std::string bad;
    for (int n = 0; n <= m; ++n) {
      if (!s.regimes[n].alpha.bounded()) { ok = false; bad += " alpha[" + std::to_string(n) + "]"; }
      if (!s.regimes[n].sigma.bounded()) { ok = false; bad += " sigma[" + std::to_string(n) + "]"; }
      for (std::size_t l = 0; l < s.regimes[n].beta.size(); ++l)
        if (!s.regimes[n].beta[l].bounded()) {
          ok = false;
          bad += " beta[" + std::to_string(n) + "][" + std::to_string(l) + "]";
        }
    }
    for (int n = 0; n < m; ++n)
      if (!s.jump_maps[n].bounded()) { ok = false; bad += " jump_map[" + std::to_string(n) + "]"; }
    out.push_back({"market_families_bounded", ok,
                   ok ? "all market coefficients bounded" : "unbounded:" + bad});
  }

  // Declared sup / Lipschitz constants vs dense sampling.
  for (int n = 0; n <= m; ++n) {
    check_declared(out, "declared_constants_alpha_" + std::to_string(n),
                   s.regimes[n].alpha, pts);
    check_declared(out, "declared_constants_sigma_" + std::to_string(n),
                   s.regimes[n].sigma, pts);
    for (std::size_t l = 0; l < s.regimes[n].beta.size(); ++l)
      check_declared(out,
                     "declared_constants_beta_" + std::to_string(n) + "_" + std::to_string(l),
                     s.regimes[n].beta[l], pts);
  }
  for (int n = 0; n < m; ++n)
    check_declared(out, "declared_constants_jump_map_" + std::to_string(n),
                   s.jump_maps[n], pts);

  // Volatility: full row rank with singular values above the declared floor.
  {
    double worst = kInf;
    for (int n = 0; n <= m; ++n)
      for (const Vec& p : pts) {
        Eigen::JacobiSVD<Mat> svd(s.sigma(n, p));
        worst = std::min(worst, svd.singularValues().minCoeff());
      }
    bool ok = worst >= s.sigma_min - 1e-9;
    out.push_back({"sigma_singular_floor", ok,
                   "smallest sampled singular value " + format_detail(worst) +
                       " vs declared floor " + format_detail(s.sigma_min)});
  }

  // Componentwise loss fractions stay above -1 (no total-loss-and-more).
  {
    double worst = kInf;
    for (int n = 0; n < m; ++n)
      for (const auto& b : s.regimes[n].beta)
        for (const Vec& p : pts) worst = std::min(worst, b.eval(p).minCoeff());
    bool ok = m == 0 || worst > -1.0 + 1e-9;
    out.push_back({"beta_above_minus_one", ok,
                   "smallest sampled loss component " + format_detail(worst)});
  }

  // Loss weights: nonnegative with positive total mass, one row per default.
  {
    bool ok = true;
    std::string detail = "ok";
    for (int n = 0; n < m; ++n) {
      if (s.loss_weights[n].size() != s.num_marks() ||
          s.loss_weights[n].minCoeff() < 0.0 || s.loss_weights[n].sum() <= 0.0) {
        ok = false;
        detail = "row " + std::to_string(n) + " invalid";
      }
    }
    out.push_back({"loss_weights", ok, detail});
  }

  // Arrival rates.
  {
    bool ok = s.default_density.family == "poisson-renewal" &&
              s.default_density.rates.size() == m &&
              (m == 0 || s.default_density.rates.minCoeff() > 0.0);
    out.push_back({"default_density", ok,
                   ok ? "poisson-renewal, positive rates" : "invalid family or rates"});
  }

  // Constraint radii.
  {
    bool ok = true;
    for (const auto& c : s.constraints) ok = ok && c.radius > 0.0;
    out.push_back({"constraints_positive", ok, ok ? "ok" : "nonpositive radius"});
  }

  // Reference points and initial factor inside the grid box.
  {
    bool ok = s.grid.inside(s.initial_factor);
    for (const Vec& p : s.reference_points) ok = ok && s.grid.inside(p);
    out.push_back({"points_inside_grid", ok, ok ? "ok" : "point outside the grid box"});
  }

  // Cell Peclet number of the implicit advection stencil (informational: a
  // value above 1 loses the M-matrix property and may admit oscillations).
  {
    double max_drift = 0.0;
    for (int n = 0; n <= m; ++n)
      for (const Vec& p : pts) max_drift = std::max(max_drift, s.drift(n, p).lpNorm<Eigen::Infinity>());
    double nu = 0.5 / s.d;  // diagonal diffusion coefficient for unit-norm kappa
    double peclet = max_drift * s.grid.h() / (2.0 * nu);
    out.push_back({"grid_peclet", true,
                   "max |g| h / (2 nu) = " + format_detail(peclet) +
                       (peclet > 1.0 ? " (warning: above 1)" : "")});
  }

  // Monte Carlo dissipativity / drift gap.
  {
    DissipativityReport rep = check_dissipativity(s);
    out.push_back({"check_dissipativity", rep.pass, rep.detail});
  }

  // Echo the contraction margin used by the gradient bounds.
  out.push_back({"contraction_margin", true,
                 std::string("c_phi ") + format_detail(ledger.c_phi) + " vs c_g " +
                     format_detail(ledger.c_g) +
                     (ledger.cphi_below_cg ? " (margin positive)"
                                           : " (no margin: gradient bounds infinite)")});
  return out;
}

// ---------------------------------------------------------------------------
// JSON round trip
// ---------------------------------------------------------------------------
namespace {

const json& need(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw IoError(std::string("missing field: ") + key);
  return *it;
}

double need_num(const json& j, const char* key) {
  const json& v = need(j, key);
  if (!v.is_number()) throw IoError(std::string("field is not a number: ") + key);
  return v.get<double>();
}

int need_int(const json& j, const char* key) {
  const json& v = need(j, key);
  if (!v.is_number_integer()) throw IoError(std::string("field is not an integer: ") + key);
  return v.get<int>();
}

std::string need_str(const json& j, const char* key) {
  const json& v = need(j, key);
  if (!v.is_string()) throw IoError(std::string("field is not a string: ") + key);
  return v.get<std::string>();
}

Vec json_to_vec(const json& v, const char* key) {
  if (!v.is_array()) throw IoError(std::string("field is not an array: ") + key);
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw IoError(std::string("non-numeric entry in: ") + key);
    out[i] = v[i].get<double>();
  }
  return out;
}

json vec_to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

ScalarFamily family_from_json(const json& j, int d) {
  ScalarFamily f;
  std::string type = need_str(j, "type");
  if (type == "constant") {
    f.kind = ScalarFamily::Kind::constant;
    f.intercept = need_num(j, "value");
  } else if (type == "affine") {
    f.kind = ScalarFamily::Kind::affine;
    f.coef = json_to_vec(need(j, "coef"), "coef");
    f.intercept = need_num(j, "intercept");
    if (f.coef.size() != d) throw IoError("affine coef size does not match d");
  } else if (type == "tanh_affine") {
    f.kind = ScalarFamily::Kind::tanh_affine;
    f.scale = need_num(j, "scale");
    f.coef = json_to_vec(need(j, "coef"), "coef");
    f.inner_shift = j.value("inner_shift", 0.0);
    f.intercept = need_num(j, "intercept");
    if (f.coef.size() != d) throw IoError("tanh_affine coef size does not match d");
  } else if (type == "tabulated") {
    if (d != 1) throw IoError("tabulated families require d = 1");
    f.kind = ScalarFamily::Kind::tabulated;
    f.knots = json_to_vec(need(j, "knots"), "knots");
    f.values = json_to_vec(need(j, "values"), "values");
    if (f.knots.size() != f.values.size() || f.knots.size() < 2)
      throw IoError("tabulated family needs matching knots/values, size >= 2");
    for (Eigen::Index i = 1; i < f.knots.size(); ++i)
      if (f.knots[i] <= f.knots[i - 1]) throw IoError("tabulated knots must be ascending");
  } else {
    throw IoError("unknown coefficient family type: " + type);
  }
  return f;
}

json family_to_json(const ScalarFamily& f) {
  json j;
  switch (f.kind) {
    case ScalarFamily::Kind::constant:
      j["type"] = "constant";
      j["value"] = f.intercept;
      break;
    case ScalarFamily::Kind::affine:
      j["type"] = "affine";
      j["coef"] = vec_to_json(f.coef);
      j["intercept"] = f.intercept;
      break;
    case ScalarFamily::Kind::tanh_affine:
      j["type"] = "tanh_affine";
      j["scale"] = f.scale;
      j["coef"] = vec_to_json(f.coef);
      j["inner_shift"] = f.inner_shift;
      j["intercept"] = f.intercept;
      break;
    case ScalarFamily::Kind::tabulated:
      j["type"] = "tabulated";
      j["knots"] = vec_to_json(f.knots);
      j["values"] = vec_to_json(f.values);
      break;
  }
  return j;
}

VectorMap map_from_json(const json& j, int in_dim, int out_dim, const char* what) {
  VectorMap f;
  f.in_dim = in_dim;
  f.out_dim = out_dim;
  const json& comps = need(j, "components");
  if (!comps.is_array() || static_cast<int>(comps.size()) != out_dim)
    throw IoError(std::string(what) + ": components must be an array of size " +
                  std::to_string(out_dim));
  for (const auto& c : comps) f.comp.push_back(family_from_json(c, in_dim));
  f.declared_sup = j.contains("sup") ? need_num(j, "sup") : f.sup_norm_closed_form();
  f.declared_lip =
      j.contains("lipschitz") ? need_num(j, "lipschitz") : f.lipschitz_closed_form();
  return f;
}

json map_to_json(const VectorMap& f) {
  json j;
  j["components"] = json::array();
  for (const auto& c : f.comp) j["components"].push_back(family_to_json(c));
  if (std::isfinite(f.declared_sup)) j["sup"] = f.declared_sup;
  j["lipschitz"] = f.declared_lip;
  return j;
}

// Value-level sanity that is semantic rather than structural.
void sanity_check(const ScenarioSpec& s) {
  if (s.m < 1) throw SemanticError("m must be at least 1");
  if (s.d != 1 && s.d != 2) throw SemanticError("d must be 1 or 2");
  if (s.gamma <= 0.0) throw SemanticError("gamma must be positive");
  if (s.rho <= 0.0) throw SemanticError("rho must be positive");
  if (s.dissipativity <= 0.0) throw SemanticError("dissipativity must be positive");
  if (s.drift_gap < 0.0) throw SemanticError("drift_gap must be nonnegative");
  if (s.sigma_min <= 0.0) throw SemanticError("sigma_min must be positive");
  if (s.grid.cells < 4) throw SemanticError("grid.cells must be at least 4");
  if (s.grid.half_width <= 0.0) throw SemanticError("grid.half_width must be positive");
  if (s.num_marks() < 1) throw SemanticError("at least one mark label required");
  for (int n = 0; n < s.m; ++n) {
    if (s.loss_weights[n].minCoeff() < 0.0)
      throw SemanticError("loss weights must be nonnegative");
    if (s.loss_weights[n].sum() <= 0.0)
      throw SemanticError("loss weights must have positive total mass");
  }
  if (s.default_density.family != "poisson-renewal")
    throw SemanticError("unsupported default density family: " + s.default_density.family);
  if (s.default_density.rates.size() != s.m ||
      (s.m > 0 && s.default_density.rates.minCoeff() <= 0.0))
    throw SemanticError("default density needs m positive rates");
  for (const auto& c : s.constraints)
    if (c.radius <= 0.0) throw SemanticError("constraint radius must be positive");
}

}  // namespace

ScenarioSpec scenario_from_json(const json& j) {
  ScenarioSpec s;
  s.name = need_str(j, "name");
  s.m = need_int(j, "m");
  s.d = need_int(j, "d");
  s.gamma = need_num(j, "gamma");
  s.rho = need_num(j, "rho");
  if (s.m < 1 || s.d < 1 || s.d > 2)
    throw IoError("unsupported dimensions: m must be >= 1, d in {1,2}");

  const json& fac = need(j, "factor");
  s.dissipativity = need_num(fac, "dissipativity");
  s.drift_gap = need_num(fac, "drift_gap");
  {
    const json& kj = need(fac, "kappa");
    if (!kj.is_array() || static_cast<int>(kj.size()) != s.d)
      throw IoError("kappa must be a d x d array");
    s.kappa.resize(s.d, s.d);
    for (int r = 0; r < s.d; ++r) {
      Vec row = json_to_vec(kj[r], "kappa row");
      if (row.size() != s.d) throw IoError("kappa must be a d x d array");
      s.kappa.row(r) = row.transpose();
    }
  }
  {
    const json& dj = need(fac, "drifts");
    if (!dj.is_array() || static_cast<int>(dj.size()) != s.m + 1)
      throw IoError("factor.drifts must have m+1 entries");
    for (const auto& e : dj) s.drifts.push_back(map_from_json(e, s.d, s.d, "drift"));
  }
  {
    const json& jj = need(fac, "jump_maps");
    if (!jj.is_array() || static_cast<int>(jj.size()) != s.m)
      throw IoError("factor.jump_maps must have m entries");
    for (const auto& e : jj) s.jump_maps.push_back(map_from_json(e, s.d, s.d, "jump_map"));
  }

  const json& mk = need(j, "marks");
  {
    const json& lbl = need(mk, "labels");
    if (!lbl.is_array() || lbl.empty()) throw IoError("marks.labels must be a nonempty array");
    for (const auto& e : lbl) {
      if (!e.is_string()) throw IoError("marks.labels entries must be strings");
      s.mark_labels.push_back(e.get<std::string>());
    }
    const json& lw = need(mk, "loss_weights");
    if (!lw.is_array() || static_cast<int>(lw.size()) != s.m)
      throw IoError("marks.loss_weights must have m rows");
    for (const auto& row : lw) {
      Vec w = json_to_vec(row, "loss_weights row");
      if (w.size() != static_cast<Eigen::Index>(s.mark_labels.size()))
        throw IoError("loss_weights row size must match number of labels");
      s.loss_weights.push_back(w);
    }
  }

  const json& mkt = need(j, "market");
  s.sigma_min = need_num(mkt, "sigma_min");
  {
    const json& regs = need(mkt, "regimes");
    if (!regs.is_array() || static_cast<int>(regs.size()) != s.m + 1)
      throw IoError("market.regimes must have m+1 entries");
    for (int n = 0; n <= s.m; ++n) {
      const json& r = regs[n];
      MarketRegime reg;
      reg.alpha = map_from_json(need(r, "alpha"), s.d, s.d, "alpha");
      reg.sigma = map_from_json(need(r, "sigma"), s.d, s.m * s.d, "sigma");
      if (n < s.m) {
        const json& bj = need(r, "beta");
        if (!bj.is_array() || bj.size() != s.mark_labels.size())
          throw IoError("market.regimes[n].beta must have one map per mark");
        for (const auto& e : bj) reg.beta.push_back(map_from_json(e, s.d, s.m, "beta"));
      }
      s.regimes.push_back(std::move(reg));
    }
  }

  const json& dd = need(j, "default_density");
  s.default_density.family = need_str(dd, "family");
  s.default_density.rates = json_to_vec(need(dd, "rates"), "rates");

  {
    const json& cj = need(j, "constraints");
    if (!cj.is_array() || static_cast<int>(cj.size()) != s.m + 1)
      throw IoError("constraints must have m+1 entries");
    for (const auto& e : cj) {
      ConstraintSet c;
      std::string t = need_str(e, "type");
      if (t == "box")
        c.kind = ConstraintSet::Kind::box;
      else if (t == "ball")
        c.kind = ConstraintSet::Kind::ball;
      else
        throw IoError("unknown constraint type: " + t);
      c.radius = need_num(e, "radius");
      s.constraints.push_back(c);
    }
  }

  const json& gj = need(j, "grid");
  s.grid.d = s.d;
  s.grid.half_width = need_num(gj, "half_width");
  s.grid.cells = need_int(gj, "cells");

  {
    const json& rp = need(j, "reference_points");
    if (!rp.is_array() || static_cast<int>(rp.size()) != s.m + 1)
      throw IoError("reference_points must have m+1 entries");
    for (const auto& e : rp) {
      Vec p = json_to_vec(e, "reference point");
      if (p.size() != s.d) throw IoError("reference point dimension mismatch");
      s.reference_points.push_back(p);
    }
  }

  if (j.contains("initial_factor")) {
    s.initial_factor = json_to_vec(j["initial_factor"], "initial_factor");
    if (s.initial_factor.size() != s.d) throw IoError("initial_factor dimension mismatch");
  } else {
    s.initial_factor = Vec::Zero(s.d);
  }

  sanity_check(s);
  return s;
}

json scenario_to_json(const ScenarioSpec& s) {
  json j;
  j["name"] = s.name;
  j["m"] = s.m;
  j["d"] = s.d;
  j["gamma"] = s.gamma;
  j["rho"] = s.rho;

  json fac;
  fac["dissipativity"] = s.dissipativity;
  fac["drift_gap"] = s.drift_gap;
  json kap = json::array();
  for (int r = 0; r < s.d; ++r) kap.push_back(vec_to_json(s.kappa.row(r)));
  fac["kappa"] = kap;
  fac["drifts"] = json::array();
  for (const auto& g : s.drifts) fac["drifts"].push_back(map_to_json(g));
  fac["jump_maps"] = json::array();
  for (const auto& g : s.jump_maps) fac["jump_maps"].push_back(map_to_json(g));
  j["factor"] = fac;

  json mk;
  mk["labels"] = s.mark_labels;
  mk["loss_weights"] = json::array();
  for (const auto& w : s.loss_weights) mk["loss_weights"].push_back(vec_to_json(w));
  j["marks"] = mk;

  json mkt;
  mkt["sigma_min"] = s.sigma_min;
  mkt["regimes"] = json::array();
  for (int n = 0; n <= s.m; ++n) {
    json r;
    r["alpha"] = map_to_json(s.regimes[n].alpha);
    r["sigma"] = map_to_json(s.regimes[n].sigma);
    if (n < s.m) {
      r["beta"] = json::array();
      for (const auto& b : s.regimes[n].beta) r["beta"].push_back(map_to_json(b));
    }
    mkt["regimes"].push_back(r);
  }
  j["market"] = mkt;

  json dd;
  dd["family"] = s.default_density.family;
  dd["rates"] = vec_to_json(s.default_density.rates);
  j["default_density"] = dd;

  j["constraints"] = json::array();
  for (const auto& c : s.constraints) {
    json e;
    e["type"] = c.kind == ConstraintSet::Kind::box ? "box" : "ball";
    e["radius"] = c.radius;
    j["constraints"].push_back(e);
  }

  json gj;
  gj["half_width"] = s.grid.half_width;
  gj["cells"] = s.grid.cells;
  j["grid"] = gj;

  j["reference_points"] = json::array();
  for (const auto& p : s.reference_points) j["reference_points"].push_back(vec_to_json(p));
  j["initial_factor"] = vec_to_json(s.initial_factor);
  return j;
}

ScenarioSpec load_scenario(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open scenario file: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw IoError("scenario parse error in " + path + ": " + e.what());
  }
  return scenario_from_json(j);
}

}  // namespace fdb
