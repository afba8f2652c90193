#pragma once

#include "fdb/rng.hpp"
#include "fdb/scenario.hpp"

namespace fdb {

// One realization of the default cascade: strictly increasing positive times
// and the mark drawn at each default.
struct DefaultDraw {
  Vec times;               // size m
  std::vector<int> marks;  // size m, indices into mark_labels
};

// Joint density of the m default times and marks with respect to
// dθ ⊗ (loss-weight counting measure). For the renewal family the value is
// mark-independent: prod_k rate_k e^{-rate_k (θ_k - θ_{k-1})} / prod_k mass_k.
// Unordered or negative times are a domain error.
double density_eta(const ScenarioSpec& spec, const Vec& theta);

// Survival re-weighting after n defaults at theta_(n), evaluated at t >= θ_n:
// the tail integral of density_eta over the remaining times and marks.
// Closed form; n = m returns density_eta(theta) (t-independent).
double survival_density(const ScenarioSpec& spec, int n, double t, const Vec& theta_n);

// Same quantity with every remaining time integral evaluated by nested
// adaptive quadrature — an independent code path used for cross-checks.
double survival_density_quadrature(const ScenarioSpec& spec, int n, double t,
                                   const Vec& theta_n, double rel_tol = 1e-8);

// Exact inverse-transform sampling: for k = 1..m first the inter-arrival time,
// then the mark from the normalized loss weights (fixed draw order).
DefaultDraw sample_defaults(const ScenarioSpec& spec, Rng& rng);

// Re-weighting guard: value / survival, domain error unless survival > 0.
double forward_scale(double value, double survival);

}  // namespace fdb
