#include "fdb/defaults.hpp"

#include <cmath>

#include "fdb/quadrature.hpp"

namespace fdb {

namespace {

// Ordered chains on the closed simplex: 0 <= θ_1 <= ... <= θ_n. The density
// formulas extend continuously to ties (zero-length inter-arrival intervals),
// which the deterministic start states of the verification harness use;
// decreasing or negative chains stay a domain error.
void require_chain(const Vec& theta, int n) {
  if (theta.size() != n)
    throw SemanticError("default-time vector has wrong length");
  double prev = 0.0;
  for (int k = 0; k < n; ++k) {
    if (!(theta[k] >= prev))
      throw SemanticError("default times must be nondecreasing and nonnegative");
    prev = theta[k];
  }
}

// prod_{k=1..n} rate_k e^{-rate_k (θ_k - θ_{k-1})} / mass_k
double chain_prefactor(const ScenarioSpec& s, const Vec& theta, int n) {
  double v = 1.0;
  double prev = 0.0;
  for (int k = 0; k < n; ++k) {
    double rate = s.default_density.rates[k];
    v *= rate * std::exp(-rate * (theta[k] - prev)) / s.total_mass(k);
    prev = theta[k];
  }
  return v;
}

}  // namespace

double density_eta(const ScenarioSpec& s, const Vec& theta) {
  require_chain(theta, s.m);
  return chain_prefactor(s, theta, s.m);
}

double survival_density(const ScenarioSpec& s, int n, double t, const Vec& theta_n) {
  if (n < 0 || n > s.m) throw SemanticError("regime index out of range");
  require_chain(theta_n, n);
  double last = n > 0 ? theta_n[n - 1] : 0.0;
  if (n < s.m && t < last)
    throw SemanticError("survival_density requires t >= last default time");
  double v = chain_prefactor(s, theta_n, n);
  if (n < s.m) {
    double rate = s.default_density.rates[n];
    v *= std::exp(-rate * (t - last));
  }
  return v;
}

double survival_density_quadrature(const ScenarioSpec& s, int n, double t,
                                   const Vec& theta_n, double rel_tol) {
  if (n < 0 || n > s.m) throw SemanticError("regime index out of range");
  require_chain(theta_n, n);
  double last = n > 0 ? theta_n[n - 1] : 0.0;
  if (n < s.m && t < last)
    throw SemanticError("survival_density requires t >= last default time");

  // Tail integral over θ_{n+1} < ... < θ_m. Every remaining time integral runs
  // through adaptive Simpson on a truncated range (45 e-folds of the arrival
  // exponential, truncation error ~3e-20), so this route shares no algebra
  // with the closed form. The mark integrals cancel the 1/mass normalization
  // analytically because the density is mark-independent.
  struct Tail {
    const ScenarioSpec& s;
    double rel_tol;
    // Integral over θ_{level+1} in (lower, ∞) given the previous default at
    // `prev`, times the deeper tails.
    double value(int level, double prev, double lower) const {
      if (level >= s.m) return 1.0;
      double rate = s.default_density.rates[level];
      auto f = [&](double theta) {
        return rate * std::exp(-rate * (theta - prev)) * value(level + 1, theta, theta);
      };
      return adaptive_simpson(f, lower, lower + 45.0 / rate, rel_tol);
    }
  };
  Tail tail{s, rel_tol};
  return chain_prefactor(s, theta_n, n) * tail.value(n, last, std::max(t, last));
}

DefaultDraw sample_defaults(const ScenarioSpec& s, Rng& rng) {
  DefaultDraw d;
  d.times.resize(s.m);
  d.marks.resize(s.m);
  double prev = 0.0;
  for (int k = 0; k < s.m; ++k) {
    double rate = s.default_density.rates[k];
    prev += -std::log(rng.uniform()) / rate;
    d.times[k] = prev;
    const Vec& w = s.weights(k);
    double u = rng.uniform() * w.sum();
    double acc = 0.0;
    int mark = static_cast<int>(w.size()) - 1;
    for (Eigen::Index l = 0; l < w.size(); ++l) {
      acc += w[l];
      if (u <= acc) {
        mark = static_cast<int>(l);
        break;
      }
    }
    d.marks[k] = mark;
  }
  return d;
}

double forward_scale(double value, double survival) {
  if (!(survival > 0.0))
    throw SemanticError("survival weight must be strictly positive");
  return value / survival;
}

}  // namespace fdb
