#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fdb/errors.hpp"
#include "fdb/grid.hpp"
#include "fdb/linalg.hpp"

namespace fdb {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Coefficient families. Every model coefficient is a componentwise map built
// from these scalar families; sup and Lipschitz constants have closed forms,
// and validation cross-checks them by dense sampling instead of trusting them.
// ---------------------------------------------------------------------------
struct ScalarFamily {
  enum class Kind { constant, affine, tanh_affine, tabulated };
  Kind kind = Kind::constant;

  // constant: value = intercept
  // affine:   value = coef' phi + intercept
  // tanh_affine: value = scale * tanh(coef' phi + inner_shift) + intercept
  // tabulated (d==1 only): piecewise-linear through (knots, values),
  //   constant extension outside the knot range.
  Vec coef;
  double intercept = 0.0;
  double scale = 0.0;
  double inner_shift = 0.0;
  Vec knots, values;

  double eval(const Vec& phi) const;
  // Exact global sup of |value|; +inf for a genuinely affine family.
  double sup_norm() const;
  // Exact global Lipschitz constant (euclidean norm in phi).
  double lipschitz() const;
  bool bounded() const { return std::isfinite(sup_norm()); }
};

// Componentwise map R^d -> R^k. Matrix-valued coefficients are stored
// row-major (component index = row * cols + col).
struct VectorMap {
  int in_dim = 1;
  int out_dim = 1;
  std::vector<ScalarFamily> comp;

  // Declared bounds; loaders default them to the closed forms below, and a
  // scenario file may override them upward (validation samples against them).
  double declared_sup = 0.0;
  double declared_lip = 0.0;

  void eval_into(const Vec& phi, Vec& out) const {
    for (int i = 0; i < out_dim; ++i) out[i] = comp[i].eval(phi);
  }
  Vec eval(const Vec& phi) const {
    Vec out(out_dim);
    eval_into(phi, out);
    return out;
  }
  // sqrt(sum of component sups^2): a valid euclidean sup bound.
  double sup_norm_closed_form() const;
  // sqrt(sum of component Lipschitz^2): a valid euclidean Lipschitz bound.
  double lipschitz_closed_form() const;
  bool bounded() const;
};

// ---------------------------------------------------------------------------
// Scenario pieces
// ---------------------------------------------------------------------------
struct ConstraintSet {
  enum class Kind { box, ball };
  Kind kind = Kind::box;
  double radius = 1.0;

  // Euclidean projection onto the set.
  Vec project(const Vec& pi) const;
  bool contains(const Vec& pi, double tol = 0.0) const;
};

struct DefaultDensity {
  std::string family = "poisson-renewal";  // the only supported family
  Vec rates;                               // m positive inter-arrival rates
};

struct MarketRegime {
  VectorMap alpha;               // R^d -> R^d
  VectorMap sigma;               // R^d -> R^{m x d}, row-major
  std::vector<VectorMap> beta;   // per mark: R^d -> R^m; empty in the last regime
};

struct ScenarioSpec {
  std::string name;
  int m = 1;        // number of default events (= number of risky assets)
  int d = 1;        // factor dimension, 1 or 2
  double gamma = 1.0;
  double rho = 0.1;

  // Factor model.
  double dissipativity = 1.0;  // declared contraction rate of the drifts
  double drift_gap = 0.0;      // declared sup of |g^n - g^{n-1}|
  Mat kappa;                   // d x d, Frobenius norm 1 (diagonal when d=2)
  std::vector<VectorMap> drifts;     // m+1 maps R^d -> R^d
  std::vector<VectorMap> jump_maps;  // m maps R^d -> R^d

  // Market.
  double sigma_min = 1.0;  // declared lower bound on singular values of sigma
  std::vector<MarketRegime> regimes;  // m+1

  // Marks.
  std::vector<std::string> mark_labels;
  std::vector<Vec> loss_weights;  // m rows; row n = weights for the (n+1)-th default

  DefaultDensity default_density;
  std::vector<ConstraintSet> constraints;  // m+1
  Grid grid;
  std::vector<Vec> reference_points;  // m+1 points in R^d
  Vec initial_factor;                 // time-0 factor value

  // --- evaluation helpers -------------------------------------------------
  Vec alpha(int n, const Vec& phi) const { return regimes[n].alpha.eval(phi); }
  Mat sigma(int n, const Vec& phi) const {
    Vec flat = regimes[n].sigma.eval(phi);
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(flat.data(), m, d);
  }
  Vec mu(int n, const Vec& phi) const { return sigma(n, phi) * alpha(n, phi); }
  Vec beta(int n, int mark, const Vec& phi) const {
    return regimes[n].beta[mark].eval(phi);
  }
  Vec drift(int n, const Vec& phi) const { return drifts[n].eval(phi); }
  Vec jump_map(int n, const Vec& phi) const { return jump_maps[n].eval(phi); }
  Vec apply_jump_map(int n, const Vec& phi) const { return phi + jump_map(n, phi); }
  const Vec& weights(int n) const { return loss_weights[n]; }
  double total_mass(int n) const { return loss_weights[n].sum(); }
  int num_marks() const { return static_cast<int>(mark_labels.size()); }
};

// ---------------------------------------------------------------------------
// Derived constants. Pure function of the declared scenario data; every bound
// the solver certifies against lives here.
// ---------------------------------------------------------------------------
struct ConstantsLedger {
  double gamma = 0, rho = 0;
  double c_g = 0, d_g = 0, c_pi = 0, sigma_min = 0;
  // Aggregate (max over regimes) sup and Lipschitz constants.
  double k_alpha = 0, c_alpha = 0;
  double k_sigma = 0, c_sigma = 0;
  double k_beta = 0, c_beta = 0;
  double k_varphi = 0, c_varphi = 0;
  std::vector<double> k_alpha_regime;  // per-regime sup of |alpha|

  double k_y = 0;    // |y^n| <= k_y / rho
  double c_phi = 0;  // factor-Lipschitz constant of the reduced driver
  std::vector<double> k_z;        // size m+1: |z^n| and Lipschitz(y^n) bound
  std::vector<double> k_delta_y;  // size m+1; entry n (n>=1) bounds y^n(jump)-y^{n-1}

  bool cphi_below_cg = false;         // C_phi < C_g strictly
  bool strategy_bound_feasible = false;  // closed-form solvability condition
  std::vector<double> strategy_bound_margin;  // per regime: lhs - rhs
  bool risk_premium_monotone = false;  // cross-regime dominance of |alpha|^2/(2 gamma)
  double risk_premium_margin = 0;      // min sampled margin (negative = violated)

  json to_json() const;
};

ConstantsLedger compute_constants(const ScenarioSpec& spec);

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------
struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct DissipativityReport {
  std::vector<double> worst_ratio;  // per regime: max of the pairing ratio
  double observed_drift_gap = 0;    // max over samples of |g^n - g^{n-1}|
  bool pass = false;
  std::string detail;
};

// Monte Carlo pairing check of the declared contraction rate and drift gap.
DissipativityReport check_dissipativity(const ScenarioSpec& spec, int pairs = 4096,
                                        std::uint64_t seed = 20260819ULL);

// Full deterministic check battery (family boundedness, declared-constant
// cross-sampling, sigma singular values, loss-vector sanity, kappa norm, ...).
std::vector<CheckResult> validate_scenario(const ScenarioSpec& spec,
                                           const ConstantsLedger& ledger);

// ---------------------------------------------------------------------------
// JSON round trip
// ---------------------------------------------------------------------------
ScenarioSpec scenario_from_json(const json& j);
json scenario_to_json(const ScenarioSpec& spec);
ScenarioSpec load_scenario(const std::string& path);

}  // namespace fdb
