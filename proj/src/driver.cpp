#include "fdb/driver.hpp"

#include <cmath>
#include <limits>

namespace fdb {

namespace {
constexpr double kExpGuard = 700.0;  // exponent ceiling before overflow
}

double DriverPoint::f1(const Vec& pi, const Vec& z) const {
  Vec target = z + alpha / gamma;
  return 0.5 * gamma * (sigma.transpose() * pi - target).squaredNorm() -
         alpha.dot(z) - alpha.squaredNorm() / (2.0 * gamma);
}

double DriverPoint::f2(const Vec& pi, double delta) const {
  double acc = 0.0;
  for (Eigen::Index l = 0; l < weights.size(); ++l) {
    if (weights[l] <= 0.0) continue;
    double e = gamma * (delta - pi.dot(beta[l]));
    if (e > kExpGuard)
      throw NumericalError("driver jump term overflow (exponent > 700)");
    acc += weights[l] * std::exp(e);
  }
  return acc / gamma;
}

double DriverPoint::value(const Vec& pi, const Vec& z, double delta) const {
  double v = f1(pi, z);
  if (has_jump) v += f2(pi, delta);
  return v;
}

void DriverPoint::grad_hess(const Vec& pi, const Vec& z, double delta, Vec& grad,
                            Mat& hess) const {
  Vec target = z + alpha / gamma;
  grad = gamma * (sigma * (sigma.transpose() * pi - target));
  hess = gamma * (sigma * sigma.transpose());
  if (!has_jump) return;
  for (Eigen::Index l = 0; l < weights.size(); ++l) {
    if (weights[l] <= 0.0) continue;
    double e = gamma * (delta - pi.dot(beta[l]));
    if (e > kExpGuard)
      throw NumericalError("driver jump term overflow (exponent > 700)");
    double w = weights[l] * std::exp(e);
    grad -= w * beta[l];
    hess += gamma * w * (beta[l] * beta[l].transpose());
  }
}

DriverPoint make_driver_point(const ScenarioSpec& spec, int n, const Vec& phi) {
  DriverPoint pt;
  pt.gamma = spec.gamma;
  pt.sigma = spec.sigma(n, phi);
  pt.alpha = spec.alpha(n, phi);
  pt.has_jump = n < spec.m;
  if (pt.has_jump) {
    pt.weights = spec.weights(n);
    for (Eigen::Index l = 0; l < pt.weights.size(); ++l)
      pt.beta.push_back(spec.beta(n, static_cast<int>(l), phi));
  }
  return pt;
}

ArgminResult point_minimize(const DriverPoint& pt, const ConstraintSet& cons,
                            const Vec& z, double delta, const MinimizeOptions& opts,
                            const Vec* warm) {
  const Eigen::Index m = pt.sigma.rows();
  ArgminResult res;
  Vec pi = warm != nullptr ? cons.project(*warm) : cons.project(Vec::Zero(m));
  double obj = pt.value(pi, z, delta);
  Vec grad(m);
  Mat hess(m, m);

  for (res.iterations = 0; res.iterations < opts.max_iter; ++res.iterations) {
    pt.grad_hess(pi, z, delta, grad, hess);
    res.kkt_residual = (pi - cons.project(pi - grad)).lpNorm<Eigen::Infinity>();
    if (res.kkt_residual <= opts.tol) break;

    Vec step = hess.ldlt().solve(grad);
    double t = 1.0;
    bool moved = false;
    while (t > 1e-14) {
      Vec cand = cons.project(pi - t * step);
      double cobj = pt.value(cand, z, delta);
      // Armijo condition on the projected displacement.
      if (cobj <= obj - 1e-4 * grad.dot(pi - cand) || cobj < obj - 1e-16) {
        pi = cand;
        obj = cobj;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved) break;  // stalled at numerical precision; KKT re-checked below
  }
  pt.grad_hess(pi, z, delta, grad, hess);
  res.kkt_residual = (pi - cons.project(pi - grad)).lpNorm<Eigen::Infinity>();
  if (res.kkt_residual > std::max(opts.tol, 1e-8))
    throw NumericalError("driver minimization failed to reach the KKT tolerance");
  res.pi_star = pi;
  res.value = obj;
  return res;
}

double f1(const ScenarioSpec& spec, int n, const Vec& pi, const Vec& z, const Vec& phi) {
  return make_driver_point(spec, n, phi).f1(pi, z);
}

double f2(const ScenarioSpec& spec, int n, const Vec& pi, double y, double y_next,
          const Vec& phi) {
  if (n >= spec.m) throw SemanticError("f2 is undefined in the terminal regime");
  return make_driver_point(spec, n, phi).f2(pi, y_next - y);
}

double driver_value(const ScenarioSpec& spec, const DriverInput& in, const Vec& pi) {
  return make_driver_point(spec, in.n, in.phi)
      .value(pi, in.z, in.y_next_at_jump - in.y);
}

ArgminResult minimize_driver(const ScenarioSpec& spec, const DriverInput& in,
                             const MinimizeOptions& opts) {
  return point_minimize(make_driver_point(spec, in.n, in.phi),
                        spec.constraints[in.n], in.z, in.y_next_at_jump - in.y, opts);
}

ArgminResult optimal_strategy(const ScenarioSpec& spec, int n, const Vec& phi,
                              const Grid& grid, const Vec& y_field, const Mat& z_field,
                              const Vec* y_next_jump_field, double c_pi_bound,
                              const MinimizeOptions& opts) {
  if (!grid.inside(phi, 1e-9))
    throw NumericalError("optimal_strategy: factor point outside the grid box");
  DriverInput in;
  in.n = n;
  in.phi = phi;
  in.y = grid.interpolate(y_field, phi);
  in.z = grid.interpolate_columns(z_field, phi);
  if (n < spec.m) {
    if (y_next_jump_field == nullptr)
      throw NumericalError("optimal_strategy: next-regime field required for n < m");
    in.y_next_at_jump = grid.interpolate(*y_next_jump_field, phi);
  }
  ArgminResult res = minimize_driver(spec, in, opts);
  if (c_pi_bound > 0.0 && res.pi_star.norm() > c_pi_bound + 1e-6)
    throw SemanticError("certified strategy bound violated: |pi*| = " +
                        std::to_string(res.pi_star.norm()) + " > " +
                        std::to_string(c_pi_bound) + " + 1e-6");
  return res;
}

}  // namespace fdb
