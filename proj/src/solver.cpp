#include "fdb/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

namespace fdb {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Tridiagonal (Thomas) solve. Row i reads lower(i) x_{i-1} + diag(i) x_i +
// upper(i) x_{i+1}; lower(0) and upper(n-1) are ignored.
// ---------------------------------------------------------------------------
struct Tridiag {
  Vec lower, diag, upper;

  void resize(Eigen::Index n) {
    lower = Vec::Zero(n);
    diag = Vec::Zero(n);
    upper = Vec::Zero(n);
  }

  Vec solve(const Vec& rhs) const {
    const Eigen::Index n = diag.size();
    Vec c(n), x(n);
    double piv = diag(0);
    if (std::abs(piv) < 1e-300) throw NumericalError("tridiagonal solve: zero pivot");
    c(0) = n > 1 ? upper(0) / piv : 0.0;
    x(0) = rhs(0) / piv;
    for (Eigen::Index i = 1; i < n; ++i) {
      piv = diag(i) - lower(i) * c(i - 1);
      if (std::abs(piv) < 1e-300) throw NumericalError("tridiagonal solve: zero pivot");
      c(i) = i + 1 < n ? upper(i) / piv : 0.0;
      x(i) = (rhs(i) - lower(i) * x(i - 1)) / piv;
    }
    for (Eigen::Index i = n - 2; i >= 0; --i) x(i) -= c(i) * x(i + 1);
    return x;
  }
};

// ---------------------------------------------------------------------------
// One regime on a 1-D grid. Caches per-node driver coefficients and the drift
// samples, and provides the pieces every outer algorithm is built from:
//   F(y) = L y + H(y) - rho y - src,    L = nu d2/dphi2 + g d/dphi,
// with reflecting ghost nodes, H the minimized driver, and src a constant
// source (rho*shift for shifted solves, the growth constant for the pinned
// ergodic system).
// ---------------------------------------------------------------------------
class Regime1D {
 public:
  Regime1D(const ScenarioSpec& spec, int n, const Grid& grid,
           const MinimizeOptions& argmin, bool upwind = true)
      : spec_(spec), grid_(grid), n_(n), argmin_(argmin), upwind_(upwind),
        cons_(spec.constraints[n]) {
    if (grid.d != 1) throw NumericalError("regime engine: grid must be one-dimensional");
    const Eigen::Index nn = grid.num_nodes();
    h_ = grid.h();
    kap_ = spec.kappa(0, 0);
    nu_ = 0.5 * kap_ * kap_;
    has_jump_ = n < spec.m;
    points_.reserve(static_cast<std::size_t>(nn));
    g_ = Vec(nn);
    Vec phi(1);
    for (Eigen::Index i = 0; i < nn; ++i) {
      phi(0) = grid.axis_coord(static_cast<int>(i));
      points_.push_back(make_driver_point(spec, n, phi));
      g_(i) = spec.drift(n, phi)(0);
    }
    pi_ws_ = Mat::Zero(nn, spec.m);
  }

  double kappa() const { return kap_; }
  bool has_jump() const { return has_jump_; }

  // Minimized Hamiltonian at every node. z is the central difference of y
  // scaled by kappa (zero on the reflecting boundary). When requested, also
  // returns the envelope data for the Newton linearization:
  //   dH/dy_i   = -gamma f2(pi*)      (through delta = base - y),
  //   dH/dz_i   =  gamma (z - sigma' pi*).
  void eval_hamiltonian(const Vec& y, const Vec* delta_base, Vec& z, Vec& H,
                        Vec* f2_star, Vec* dh_dz) {
    const Eigen::Index nn = grid_.num_nodes();
    if (has_jump_ && delta_base == nullptr)
      throw NumericalError("regime solve: next-regime field is required below the terminal regime");
    z = kap_ * grid_.derivative(y, 0);
    H.resize(nn);
    if (f2_star) f2_star->setZero(nn);
    if (dh_dz) dh_dz->resize(nn);
    Vec zv(1), warm(spec_.m);
    for (Eigen::Index i = 0; i < nn; ++i) {
      zv(0) = z(i);
      const double delta = has_jump_ ? (*delta_base)(i)-y(i) : 0.0;
      warm = pi_ws_.row(i).transpose();
      ArgminResult res = point_minimize(points_[static_cast<std::size_t>(i)], cons_,
                                        zv, delta, argmin_, &warm);
      pi_ws_.row(i) = res.pi_star.transpose();
      H(i) = res.value;
      if (f2_star && has_jump_)
        (*f2_star)(i) = points_[static_cast<std::size_t>(i)].f2(res.pi_star, delta);
      if (dh_dz) {
        const DriverPoint& pt = points_[static_cast<std::size_t>(i)];
        (*dh_dz)(i) = pt.gamma * (zv(0) - (pt.sigma.transpose() * res.pi_star)(0));
      }
    }
  }

  Vec apply_L(const Vec& y) const {
    const Eigen::Index nn = grid_.num_nodes();
    const double ih2 = 1.0 / (h_ * h_), i2h = 1.0 / (2.0 * h_), ih = 1.0 / h_;
    Vec out(nn);
    // reflecting ghosts: the advection term at the walls reads the mirrored
    // neighbor, which cancels for the centered stencil
    out(0) = 2.0 * nu_ * (y(1) - y(0)) * ih2 +
             (upwind_ ? std::abs(g_(0)) * (y(1) - y(0)) * ih : 0.0);
    out(nn - 1) = 2.0 * nu_ * (y(nn - 2) - y(nn - 1)) * ih2 +
                  (upwind_ ? std::abs(g_(nn - 1)) * (y(nn - 2) - y(nn - 1)) * ih : 0.0);
    for (Eigen::Index i = 1; i + 1 < nn; ++i) {
      const double adv =
          upwind_ ? (std::max(g_(i), 0.0) * (y(i + 1) - y(i)) +
                     std::min(g_(i), 0.0) * (y(i) - y(i - 1))) *
                        ih
                  : g_(i) * (y(i + 1) - y(i - 1)) * i2h;
      out(i) = nu_ * (y(i + 1) - 2.0 * y(i) + y(i - 1)) * ih2 + adv;
    }
    return out;
  }

  Vec residual(const Vec& y, double rho, double src, const Vec* delta_base) {
    Vec z, H;
    eval_hamiltonian(y, delta_base, z, H, nullptr, nullptr);
    Vec F = apply_L(y) + H - rho * y;
    F.array() -= src;
    return F;
  }

  // IMEX marching: (I + dtau (rho I - L)) y+ = y + dtau (H(y) - src).
  // The step is halved (and the implicit matrix rebuilt) whenever the update
  // stops being finite; stationarity is ||y+ - y||_inf / dtau < tol.
  long march(Vec& y, double rho, double src, const Vec* delta_base,
             const SolveOptions& opts) {
    double dtau = opts.dtau;
    Tridiag M = implicit_matrix(rho, dtau);
    Vec z, H, rhs, ynew, yprev = y;
    long steps = 0;
    int halvings = 0;
    while (steps < opts.max_steps) {
      bool bad = false;
      try {
        eval_hamiltonian(y, delta_base, z, H, nullptr, nullptr);
      } catch (const NumericalError&) {
        bad = true;  // overflow guard tripped: retreat and shrink the step
      }
      if (!bad) {
        rhs = y + dtau * (H.array() - src).matrix();
        ynew = M.solve(rhs);
        const double upd = (ynew - y).lpNorm<Eigen::Infinity>() / dtau;
        if (ynew.allFinite() && std::isfinite(upd) && upd < 1e12) {
          yprev = y;
          y = ynew;
          ++steps;
          if (upd < opts.tol_stationary) return steps;
          continue;
        }
        bad = true;
      }
      if (++halvings > 25)
        throw NumericalError("pseudo-time marching blew up at the minimum step size");
      y = yprev;
      dtau *= 0.5;
      M = implicit_matrix(rho, dtau);
    }
    throw NumericalError("pseudo-time marching did not reach stationarity within the step budget");
  }

  // Damped Newton on F(y) = 0. Returns true when the residual target (or the
  // floating-point floor of the stencil) is reached.
  bool newton(Vec& y, double rho, double src, const Vec* delta_base,
              const SolveOptions& opts, int& iterations) {
    Vec z, H, f2s, dhdz;
    iterations = 0;
    for (int it = 0; it < opts.newton_max_iter; ++it) {
      eval_hamiltonian(y, delta_base, z, H, &f2s, &dhdz);
      Vec F = apply_L(y) + H - rho * y;
      F.array() -= src;
      const double fn = F.lpNorm<Eigen::Infinity>();
      if (fn < opts.newton_tol) return true;
      Tridiag J = jacobian(rho, f2s, dhdz);
      // flip sign so the Thomas pivots stay positive (J is an M-matrix times -1)
      Vec dy = J.solve(-F);
      double s = 1.0;
      bool accepted = false;
      Vec ytrial;
      while (s >= 1.0 / 1024.0) {
        ytrial = y + s * dy;
        try {
          const double fnt =
              residual(ytrial, rho, src, delta_base).lpNorm<Eigen::Infinity>();
          if (fnt < (1.0 - 1e-4 * s) * fn || fnt < opts.newton_tol) {
            y = ytrial;
            accepted = true;
            break;
          }
        } catch (const NumericalError&) {
          // overflow on the trial point: shrink
        }
        s *= 0.5;
      }
      ++iterations;
      if (!accepted) return fn < 1e-8;  // stalled at the floating-point floor
    }
    return residual(y, rho, src, delta_base).lpNorm<Eigen::Infinity>() < opts.newton_tol;
  }

  // Newton for the pinned system on (u, q):
  //   F(u, q) = L u + H(u) - rho u - q = 0,   u(pin) = 0,
  // whose bordered Jacobian [[J, -1], [e_pin', 0]] stays uniformly nonsingular
  // as rho -> 0 (where J itself acquires the constant null vector).
  bool newton_bordered(Vec& u, double& q, Eigen::Index pin, double rho,
                       const Vec* delta_base, const SolveOptions& opts,
                       int& iterations) {
    const Eigen::Index nn = grid_.num_nodes();
    // re-gauge so the pin is exact: y = u + q/rho is invariant under
    // (u, q) -> (u - c, q + rho c)
    q += rho * u(pin);
    u.array() -= u(pin);
    Vec z, H, f2s, dhdz;
    iterations = 0;
    auto combined_norm = [&](const Vec& uu, double qq) {
      Vec F = residual(uu, rho, qq, delta_base);
      return std::max(F.lpNorm<Eigen::Infinity>(), std::abs(uu(pin)));
    };
    for (int it = 0; it < opts.newton_max_iter; ++it) {
      eval_hamiltonian(u, delta_base, z, H, &f2s, &dhdz);
      Vec F = apply_L(u) + H - rho * u;
      F.array() -= q;
      const double fn = std::max(F.lpNorm<Eigen::Infinity>(), std::abs(u(pin)));
      if (fn < opts.newton_tol) return true;
      Tridiag J = jacobian(rho, f2s, dhdz);
      // assemble the bordered system and solve it sparsely
      Eigen::SparseMatrix<double> A(nn + 1, nn + 1);
      std::vector<Eigen::Triplet<double>> trip;
      trip.reserve(static_cast<std::size_t>(3 * nn + 2));
      for (Eigen::Index i = 0; i < nn; ++i) {
        if (i > 0) trip.emplace_back(i, i - 1, J.lower(i));
        trip.emplace_back(i, i, J.diag(i));
        if (i + 1 < nn) trip.emplace_back(i, i + 1, J.upper(i));
        trip.emplace_back(i, nn, -1.0);
      }
      trip.emplace_back(nn, pin, 1.0);
      A.setFromTriplets(trip.begin(), trip.end());
      Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
      lu.compute(A);
      if (lu.info() != Eigen::Success)
        throw NumericalError("bordered Newton: factorization failed");
      Vec rhs(nn + 1);
      rhs.head(nn) = -F;
      rhs(nn) = -u(pin);
      Vec step = lu.solve(rhs);
      double s = 1.0;
      bool accepted = false;
      while (s >= 1.0 / 1024.0) {
        Vec ut = u + s * step.head(nn);
        const double qt = q + s * step(nn);
        try {
          const double fnt = combined_norm(ut, qt);
          if (fnt < (1.0 - 1e-4 * s) * fn || fnt < opts.newton_tol) {
            u = ut;
            q = qt;
            accepted = true;
            break;
          }
        } catch (const NumericalError&) {
        }
        s *= 0.5;
      }
      ++iterations;
      if (!accepted) return fn < 1e-8;
    }
    return combined_norm(u, q) < opts.newton_tol;
  }

 private:
  Tridiag implicit_matrix(double rho, double dtau) const {
    const Eigen::Index nn = grid_.num_nodes();
    const double ih2 = 1.0 / (h_ * h_), i2h = 1.0 / (2.0 * h_), ih = 1.0 / h_;
    Tridiag M;
    M.resize(nn);
    for (Eigen::Index i = 0; i < nn; ++i) {
      double lo = 0.0, up = 0.0;
      double di = -2.0 * nu_ * ih2;
      if (i == 0) {
        up = 2.0 * nu_ * ih2;
        if (upwind_) { up += std::abs(g_(i)) * ih; di -= std::abs(g_(i)) * ih; }
      } else if (i == nn - 1) {
        lo = 2.0 * nu_ * ih2;
        if (upwind_) { lo += std::abs(g_(i)) * ih; di -= std::abs(g_(i)) * ih; }
      } else if (upwind_) {
        lo = nu_ * ih2 - std::min(g_(i), 0.0) * ih;
        up = nu_ * ih2 + std::max(g_(i), 0.0) * ih;
        di -= std::abs(g_(i)) * ih;
      } else {
        lo = nu_ * ih2 - g_(i) * i2h;
        up = nu_ * ih2 + g_(i) * i2h;
      }
      M.lower(i) = -dtau * lo;
      M.diag(i) = 1.0 + dtau * (rho - di);
      M.upper(i) = -dtau * up;
    }
    return M;
  }

  // dF/dy as a tridiagonal matrix: the L stencil, the z-coupling through the
  // central difference, the -rho diagonal, and the jump envelope -gamma f2*.
  Tridiag jacobian(double rho, const Vec& f2s, const Vec& dhdz) const {
    const Eigen::Index nn = grid_.num_nodes();
    const double ih2 = 1.0 / (h_ * h_), i2h = 1.0 / (2.0 * h_), ih = 1.0 / h_;
    const double gamma = spec_.gamma;
    Tridiag J;
    J.resize(nn);
    for (Eigen::Index i = 0; i < nn; ++i) {
      J.diag(i) = -2.0 * nu_ * ih2 - rho - gamma * f2s(i);
      if (i == 0) {
        J.upper(i) = 2.0 * nu_ * ih2;  // z(0) = 0 identically: no z-coupling
        if (upwind_) { J.upper(i) += std::abs(g_(i)) * ih; J.diag(i) -= std::abs(g_(i)) * ih; }
      } else if (i == nn - 1) {
        J.lower(i) = 2.0 * nu_ * ih2;
        if (upwind_) { J.lower(i) += std::abs(g_(i)) * ih; J.diag(i) -= std::abs(g_(i)) * ih; }
      } else if (upwind_) {
        J.lower(i) = nu_ * ih2 - std::min(g_(i), 0.0) * ih - dhdz(i) * kap_ * i2h;
        J.upper(i) = nu_ * ih2 + std::max(g_(i), 0.0) * ih + dhdz(i) * kap_ * i2h;
        J.diag(i) -= std::abs(g_(i)) * ih;
      } else {
        J.lower(i) = nu_ * ih2 - g_(i) * i2h - dhdz(i) * kap_ * i2h;
        J.upper(i) = nu_ * ih2 + g_(i) * i2h + dhdz(i) * kap_ * i2h;
      }
    }
    return J;
  }

  const ScenarioSpec& spec_;
  const Grid& grid_;
  int n_ = 0;
  MinimizeOptions argmin_;
  bool upwind_ = true;
  ConstraintSet cons_;
  double h_ = 0, kap_ = 0, nu_ = 0;
  bool has_jump_ = false;
  std::vector<DriverPoint> points_;
  Vec g_;
  Mat pi_ws_;  // per-node minimizer warm starts across sweeps
};

// ---------------------------------------------------------------------------
// Two-dimensional regime engine (diagonal kappa): Douglas splitting in a
// stationary-consistent form, marching only.
//   (I - dtau A_x) yhat = (I + dtau A_y) y + dtau (H(y) - src)
//   (I - dtau A_y) y+   = yhat - dtau A_y y
// with A_k = nu_k d2_k + g_k d_k - (rho/2) I, so fixed points solve
// L y + H - rho y - src = 0 exactly.
// ---------------------------------------------------------------------------
class Regime2D {
 public:
  Regime2D(const ScenarioSpec& spec, int n, const Grid& grid,
           const MinimizeOptions& argmin, bool upwind = true)
      : spec_(spec), grid_(grid), n_(n), argmin_(argmin), upwind_(upwind),
        cons_(spec.constraints[n]) {
    if (grid.d != 2) throw NumericalError("regime engine: grid must be two-dimensional");
    const Eigen::Index nn = grid.num_nodes();
    h_ = grid.h();
    kapx_ = spec.kappa(0, 0);
    kapy_ = spec.kappa(1, 1);
    nux_ = 0.5 * kapx_ * kapx_;
    nuy_ = 0.5 * kapy_ * kapy_;
    has_jump_ = n < spec.m;
    points_.reserve(static_cast<std::size_t>(nn));
    g_ = Mat(nn, 2);
    for (Eigen::Index i = 0; i < nn; ++i) {
      Vec phi = grid.node(i);
      points_.push_back(make_driver_point(spec, n, phi));
      g_.row(i) = spec.drift(n, phi).transpose();
    }
    pi_ws_ = Mat::Zero(nn, spec.m);
  }

  void eval_hamiltonian(const Vec& y, const Vec* delta_base, Mat& z, Vec& H) {
    const Eigen::Index nn = grid_.num_nodes();
    if (has_jump_ && delta_base == nullptr)
      throw NumericalError("regime solve: next-regime field is required below the terminal regime");
    z.resize(nn, 2);
    z.col(0) = kapx_ * grid_.derivative(y, 0);
    z.col(1) = kapy_ * grid_.derivative(y, 1);
    H.resize(nn);
    Vec zv(2), warm(spec_.m);
    for (Eigen::Index i = 0; i < nn; ++i) {
      zv = z.row(i).transpose();
      const double delta = has_jump_ ? (*delta_base)(i)-y(i) : 0.0;
      warm = pi_ws_.row(i).transpose();
      ArgminResult res = point_minimize(points_[static_cast<std::size_t>(i)], cons_,
                                        zv, delta, argmin_, &warm);
      pi_ws_.row(i) = res.pi_star.transpose();
      H(i) = res.value;
    }
  }

  // Full generator L = nu_x d2_x + nu_y d2_y + g_x d_x + g_y d_y with
  // reflecting ghosts on each axis.
  Vec apply_L(const Vec& y) const {
    const int n = grid_.nodes_per_axis();
    const double ih2 = 1.0 / (h_ * h_);
    Vec out(y.size());
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const Eigen::Index f = static_cast<Eigen::Index>(i) * n + j;
        const int ip = i == n - 1 ? n - 2 : i + 1, im = i == 0 ? 1 : i - 1;
        const int jp = j == n - 1 ? n - 2 : j + 1, jm = j == 0 ? 1 : j - 1;
        const double yxp = y(static_cast<Eigen::Index>(ip) * n + j);
        const double yxm = y(static_cast<Eigen::Index>(im) * n + j);
        const double yyp = y(static_cast<Eigen::Index>(i) * n + jp);
        const double yym = y(static_cast<Eigen::Index>(i) * n + jm);
        double lap = nux_ * (yxp - 2.0 * y(f) + yxm) * ih2 +
                     nuy_ * (yyp - 2.0 * y(f) + yym) * ih2;
        double adv = advection(y(f), yxm, yxp, g_(f, 0), i, n) +
                     advection(y(f), yym, yyp, g_(f, 1), j, n);
        out(f) = lap + adv;
      }
    }
    return out;
  }

  Vec residual(const Vec& y, double rho, double src, const Vec* delta_base) {
    Mat z;
    Vec H;
    eval_hamiltonian(y, delta_base, z, H);
    Vec F = apply_L(y) + H - rho * y;
    F.array() -= src;
    return F;
  }

  long march(Vec& y, double rho, double src, const Vec* delta_base,
             const SolveOptions& opts) {
    double dtau = opts.dtau;
    Mat z;
    Vec H, yprev = y;
    long steps = 0;
    int halvings = 0;
    while (steps < opts.max_steps) {
      bool bad = false;
      Vec ynew;
      try {
        eval_hamiltonian(y, delta_base, z, H);
        Vec b = (H.array() - src).matrix();
        Vec ayy = apply_axis(y, 1, rho);
        Vec rhs1 = y + dtau * (ayy + b);
        Vec yhat = solve_axis(rhs1, 0, rho, dtau);
        Vec rhs2 = yhat - dtau * ayy;
        ynew = solve_axis(rhs2, 1, rho, dtau);
      } catch (const NumericalError&) {
        bad = true;
      }
      if (!bad) {
        const double upd = (ynew - y).lpNorm<Eigen::Infinity>() / dtau;
        if (ynew.allFinite() && std::isfinite(upd) && upd < 1e12) {
          yprev = y;
          y = ynew;
          ++steps;
          if (upd < opts.tol_stationary) return steps;
          continue;
        }
        bad = true;
      }
      if (++halvings > 25)
        throw NumericalError("pseudo-time marching blew up at the minimum step size");
      y = yprev;
      dtau *= 0.5;
    }
    throw NumericalError("pseudo-time marching did not reach stationarity within the step budget");
  }

 private:
  // One-axis advection with reflecting ghosts: at the walls the mirrored
  // neighbor makes the centered stencil cancel, while upwind keeps |g| ih.
  double advection(double yc, double ym, double yp, double g, int a, int n) const {
    const double ih = 1.0 / h_;
    if (a == 0 || a == n - 1) return upwind_ ? std::abs(g) * (yp - yc) * ih : 0.0;
    if (upwind_)
      return (std::max(g, 0.0) * (yp - yc) + std::min(g, 0.0) * (yc - ym)) * ih;
    return g * (yp - ym) * 0.5 * ih;
  }

  // A_k y with A_k = nu_k d2_k + g_k d_k - (rho/2) I along one axis.
  Vec apply_axis(const Vec& y, int axis, double rho) const {
    const int n = grid_.nodes_per_axis();
    const double ih2 = 1.0 / (h_ * h_);
    const double nu = axis == 0 ? nux_ : nuy_;
    Vec out(y.size());
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const Eigen::Index f = static_cast<Eigen::Index>(i) * n + j;
        const int a = axis == 0 ? i : j;
        const int ap = a == n - 1 ? n - 2 : a + 1, am = a == 0 ? 1 : a - 1;
        const Eigen::Index fp = axis == 0 ? static_cast<Eigen::Index>(ap) * n + j
                                          : static_cast<Eigen::Index>(i) * n + ap;
        const Eigen::Index fm = axis == 0 ? static_cast<Eigen::Index>(am) * n + j
                                          : static_cast<Eigen::Index>(i) * n + am;
        double v = nu * (y(fp) - 2.0 * y(f) + y(fm)) * ih2 - 0.5 * rho * y(f);
        v += advection(y(f), y(fm), y(fp), g_(f, axis), a, n);
        out(f) = v;
      }
    }
    return out;
  }

  // Solve (I - dtau A_k) x = rhs by per-line Thomas sweeps.
  Vec solve_axis(const Vec& rhs, int axis, double rho, double dtau) const {
    const int n = grid_.nodes_per_axis();
    const double ih2 = 1.0 / (h_ * h_), i2h = 1.0 / (2.0 * h_);
    const double nu = axis == 0 ? nux_ : nuy_;
    Vec out(rhs.size());
    Tridiag M;
    M.resize(n);
    Vec line(n);
    const int nlines = n;
    for (int l = 0; l < nlines; ++l) {
      for (int a = 0; a < n; ++a) {
        const Eigen::Index f = axis == 0 ? static_cast<Eigen::Index>(a) * n + l
                                         : static_cast<Eigen::Index>(l) * n + a;
        const double g = g_(f, axis), ih = 1.0 / h_;
        double lo = 0.0, up = 0.0, dadv = 0.0;
        if (a == 0) {
          up = 2.0 * nu * ih2;
          if (upwind_) { up += std::abs(g) * ih; dadv = std::abs(g) * ih; }
        } else if (a == n - 1) {
          lo = 2.0 * nu * ih2;
          if (upwind_) { lo += std::abs(g) * ih; dadv = std::abs(g) * ih; }
        } else if (upwind_) {
          lo = nu * ih2 - std::min(g, 0.0) * ih;
          up = nu * ih2 + std::max(g, 0.0) * ih;
          dadv = std::abs(g) * ih;
        } else {
          lo = nu * ih2 - g * i2h;
          up = nu * ih2 + g * i2h;
        }
        M.lower(a) = -dtau * lo;
        M.diag(a) = 1.0 + dtau * (0.5 * rho + 2.0 * nu * ih2 + dadv);
        M.upper(a) = -dtau * up;
        line(a) = rhs(f);
      }
      Vec sol = M.solve(line);
      for (int a = 0; a < n; ++a) {
        const Eigen::Index f = axis == 0 ? static_cast<Eigen::Index>(a) * n + l
                                         : static_cast<Eigen::Index>(l) * n + a;
        out(f) = sol(a);
      }
    }
    return out;
  }

  const ScenarioSpec& spec_;
  const Grid& grid_;
  int n_ = 0;
  MinimizeOptions argmin_;
  bool upwind_ = true;
  ConstraintSet cons_;
  double h_ = 0, kapx_ = 0, kapy_ = 0, nux_ = 0, nuy_ = 0;
  bool has_jump_ = false;
  std::vector<DriverPoint> points_;
  Mat g_;
  Mat pi_ws_;
};

Mat z_field_from(const Grid& grid, const ScenarioSpec& spec, const Vec& y) {
  Mat z(grid.num_nodes(), grid.d);
  for (int k = 0; k < grid.d; ++k) z.col(k) = spec.kappa(k, k) * grid.derivative(y, k);
  return z;
}

Eigen::Index nearest_node(const Grid& grid, const Vec& p) {
  const int n = grid.nodes_per_axis();
  auto axis_index = [&](double x) {
    long i = std::lround((x + grid.half_width) / grid.h());
    return static_cast<int>(std::clamp<long>(i, 0, n - 1));
  };
  if (grid.d == 1) return axis_index(p(0));
  return static_cast<Eigen::Index>(axis_index(p(0))) * n + axis_index(p(1));
}

}  // namespace

// ---------------------------------------------------------------------------
// Free functions
// ---------------------------------------------------------------------------
Vec jump_composite_field(const ScenarioSpec& spec, const Grid& grid, int n,
                         const Vec& next_field) {
  const Eigen::Index nn = grid.num_nodes();
  if (next_field.size() != nn)
    throw NumericalError("jump composite: field size does not match grid");
  Vec out(nn);
  for (Eigen::Index i = 0; i < nn; ++i) {
    Vec target = spec.apply_jump_map(n, grid.node(i));
    out(i) = grid.interpolate(next_field, target);
  }
  return out;
}

RegimeSolution solve_regime(const ScenarioSpec& spec, int n, double rho,
                            const Vec* y_next_field, const Grid& grid,
                            const SolveOptions& opts, const Vec* warm_start) {
  if (rho <= 0) throw SemanticError("regime solve requires a positive discount rate");
  if (n < 0 || n > spec.m) throw SemanticError("regime index out of range");
  RegimeSolution sol;
  Vec comp;
  const Vec* delta_base = nullptr;
  if (n < spec.m) {
    if (y_next_field == nullptr)
      throw NumericalError("regime solve: next-regime field is required below the terminal regime");
    comp = jump_composite_field(spec, grid, n, *y_next_field);
    delta_base = &comp;
  }
  Vec y = warm_start ? *warm_start : Vec(Vec::Zero(grid.num_nodes()));
  if (grid.d == 1) {
    Regime1D eng(spec, n, grid, opts.argmin, opts.upwind_advection);
    sol.marching_steps = eng.march(y, rho, 0.0, delta_base, opts);
    if (opts.newton_polish) {
      int it = 0;
      eng.newton(y, rho, 0.0, delta_base, opts, it);
      sol.newton_iterations = it;
    }
    sol.residual_sup = eng.residual(y, rho, 0.0, delta_base).lpNorm<Eigen::Infinity>();
  } else {
    Regime2D eng(spec, n, grid, opts.argmin, opts.upwind_advection);
    sol.marching_steps = eng.march(y, rho, 0.0, delta_base, opts);
    sol.residual_sup = eng.residual(y, rho, 0.0, delta_base).lpNorm<Eigen::Infinity>();
  }
  sol.y = y;
  sol.z = z_field_from(grid, spec, y);
  if (delta_base) sol.y_next_at_jump = comp;
  return sol;
}

BsdeSolution solve_chain(const ScenarioSpec& spec, const ConstantsLedger& ledger,
                         double rho, const SolveOptions& opts) {
  BsdeSolution out;
  out.rho = rho;
  out.grid = spec.grid;
  out.regimes.resize(static_cast<std::size_t>(spec.m) + 1);
  const Vec* next = nullptr;
  for (int n = spec.m; n >= 0; --n) {
    out.regimes[static_cast<std::size_t>(n)] =
        solve_regime(spec, n, rho, next, out.grid, opts);
    next = &out.regimes[static_cast<std::size_t>(n)].y;
  }
  out.bounds = evaluate_bounds(spec, ledger, out);
  return out;
}

BoundReport evaluate_bounds(const ScenarioSpec& spec, const ConstantsLedger& ledger,
                            const BsdeSolution& sol) {
  BoundReport rep;
  const Grid& grid = sol.grid;
  rep.epsilon = 10.0 * grid.h();
  rep.y_bound = ledger.k_y / sol.rho;
  rep.z_gap_evaluated = ledger.cphi_below_cg;
  const double inner = grid.half_width - rep.epsilon;
  auto interior = [&](Eigen::Index i) {
    Vec p = grid.node(i);
    for (int k = 0; k < grid.d; ++k)
      if (std::abs(p(k)) > inner + 1e-12) return false;
    return true;
  };
  const int m = spec.m;
  rep.y_sup.assign(static_cast<std::size_t>(m) + 1, 0.0);
  rep.z_sup.assign(static_cast<std::size_t>(m) + 1, 0.0);
  rep.z_bound.assign(static_cast<std::size_t>(m) + 1, 0.0);
  rep.jump_gap_sup.assign(static_cast<std::size_t>(m), -kInf);
  rep.jump_gap_bound.assign(static_cast<std::size_t>(m), 0.0);
  for (int n = 0; n <= m; ++n) {
    rep.z_bound[static_cast<std::size_t>(n)] = ledger.k_z[static_cast<std::size_t>(n)];
    const RegimeSolution& rs = sol.regimes[static_cast<std::size_t>(n)];
    for (Eigen::Index i = 0; i < grid.num_nodes(); ++i) {
      if (!interior(i)) continue;
      rep.y_sup[static_cast<std::size_t>(n)] =
          std::max(rep.y_sup[static_cast<std::size_t>(n)], std::abs(rs.y(i)));
      rep.z_sup[static_cast<std::size_t>(n)] =
          std::max(rep.z_sup[static_cast<std::size_t>(n)], rs.z.row(i).norm());
    }
    if (n >= 1) {
      // one-sided gap y^n(jump(phi)) - y^{n-1}(phi), evaluated on regime n-1
      const RegimeSolution& prev = sol.regimes[static_cast<std::size_t>(n) - 1];
      rep.jump_gap_bound[static_cast<std::size_t>(n) - 1] =
          ledger.k_delta_y[static_cast<std::size_t>(n)];
      for (Eigen::Index i = 0; i < grid.num_nodes(); ++i) {
        if (!interior(i)) continue;
        rep.jump_gap_sup[static_cast<std::size_t>(n) - 1] =
            std::max(rep.jump_gap_sup[static_cast<std::size_t>(n) - 1],
                     prev.y_next_at_jump(i) - prev.y(i));
      }
    }
  }
  bool ok = true;
  for (int n = 0; n <= m; ++n)
    if (rep.y_sup[static_cast<std::size_t>(n)] > rep.y_bound + 1e-9) ok = false;
  if (rep.z_gap_evaluated) {
    for (int n = 0; n <= m; ++n)
      if (rep.z_sup[static_cast<std::size_t>(n)] >
          rep.z_bound[static_cast<std::size_t>(n)] + 1e-9)
        ok = false;
    for (int n = 1; n <= m; ++n)
      if (rep.jump_gap_sup[static_cast<std::size_t>(n) - 1] >
          rep.jump_gap_bound[static_cast<std::size_t>(n) - 1] + 1e-9)
        ok = false;
  }
  rep.pass = ok;
  return rep;
}

Mat strategy_field(const ScenarioSpec& spec, const Grid& grid, int n, const Vec& y,
                   const Mat& z, const Vec* y_next_jump, const MinimizeOptions& opts) {
  const Eigen::Index nn = grid.num_nodes();
  if (n < spec.m && y_next_jump == nullptr)
    throw NumericalError("strategy field: next-regime field is required below the terminal regime");
  Mat out(nn, spec.m);
  Vec warm = Vec::Zero(spec.m);
  for (Eigen::Index i = 0; i < nn; ++i) {
    DriverPoint pt = make_driver_point(spec, n, grid.node(i));
    Vec zrow = z.row(i).transpose();
    const double delta = n < spec.m ? (*y_next_jump)(i)-y(i) : 0.0;
    ArgminResult res =
        point_minimize(pt, spec.constraints[static_cast<std::size_t>(n)], zrow, delta,
                       opts, &warm);
    warm = res.pi_star;
    out.row(i) = res.pi_star.transpose();
  }
  return out;
}

StrategyBoundReport strategy_bound_report(const ScenarioSpec& spec,
                                          const ConstantsLedger& ledger,
                                          const BsdeSolution& sol,
                                          const MinimizeOptions& opts) {
  StrategyBoundReport rep;
  rep.bound = ledger.c_pi;
  rep.enforced = ledger.strategy_bound_feasible;
  const Grid& grid = sol.grid;
  const double inner = grid.half_width - 10.0 * grid.h();
  auto interior = [&](Eigen::Index i) {
    Vec p = grid.node(i);
    for (int k = 0; k < grid.d; ++k)
      if (std::abs(p(k)) > inner + 1e-12) return false;
    return true;
  };
  rep.sup_norm.assign(static_cast<std::size_t>(spec.m) + 1, 0.0);
  for (int n = 0; n <= spec.m; ++n) {
    const RegimeSolution& rs = sol.regimes[static_cast<std::size_t>(n)];
    const Vec* nxt = n < spec.m ? &rs.y_next_at_jump : nullptr;
    Mat pis = strategy_field(spec, grid, n, rs.y, rs.z, nxt, opts);
    for (Eigen::Index i = 0; i < grid.num_nodes(); ++i) {
      if (!interior(i)) continue;
      rep.sup_norm[static_cast<std::size_t>(n)] =
          std::max(rep.sup_norm[static_cast<std::size_t>(n)], pis.row(i).norm());
    }
  }
  rep.pass = true;
  if (rep.enforced)
    for (double s : rep.sup_norm)
      if (s > rep.bound + 1e-6) rep.pass = false;
  return rep;
}

// ---------------------------------------------------------------------------
// Vanishing-discount continuation (1-D)
// ---------------------------------------------------------------------------
ErgodicSolution ergodic_continuation(const ScenarioSpec& spec,
                                     const ConstantsLedger& ledger,
                                     const ErgodicOptions& opts) {
  if (spec.grid.d != 1)
    throw NumericalError("ergodic continuation is implemented for one-dimensional factors only");
  const bool certified_all = ledger.risk_premium_monotone;
  if (!certified_all && !opts.override_monotonicity)
    throw SemanticError(
        "risk-premium monotonicity check failed; rerun with the terminal-regime "
        "override to certify the terminal equation only");
  const Grid& grid = spec.grid;
  const int m = spec.m;
  const Eigen::Index nn = grid.num_nodes();
  const Eigen::Index pin_m = nearest_node(grid, spec.reference_points[static_cast<std::size_t>(m)]);

  ErgodicSolution out;
  out.grid = grid;
  out.full_system_certified = certified_all;
  if (certified_all)
    for (int n = 0; n <= m; ++n) out.certified.push_back(n);
  else
    out.certified.push_back(m);

  std::vector<Regime1D> eng;
  eng.reserve(static_cast<std::size_t>(m) + 1);
  for (int n = 0; n <= m; ++n)
    eng.emplace_back(spec, n, grid, opts.solve.argmin, opts.solve.upwind_advection);

  std::vector<Vec> v(static_cast<std::size_t>(m) + 1);  // y^n = v^n + c at each rung
  std::vector<Vec> vbar_prev;
  Vec u_m, u_m_prev;
  double q = 0.0;
  double varrho_prev = 0.0;
  bool have_prev = false;
  // snapshot of the last fully completed rung (a later rung may break mid-chain)
  std::vector<Vec> v_ok;
  Vec u_ok;
  double q_ok = 0.0;
  double coupling_floor = kInf;
  std::ostringstream msg;

  for (int rung = 0; rung < opts.max_rungs; ++rung) {
    const double rho_i = opts.rho0 * std::pow(opts.shrink, rung);
    if (rho_i < opts.rho_min) {
      msg << "discount ladder reached rho_min without meeting the stop rule; ";
      break;
    }
    const double c = have_prev ? varrho_prev / rho_i : 0.0;

    // terminal regime: pinned level + growth candidate
    if (!have_prev) {
      Vec y0 = Vec::Zero(nn);
      eng[static_cast<std::size_t>(m)].march(y0, rho_i, 0.0, nullptr, opts.solve);
      q = rho_i * y0(pin_m);
      u_m = y0.array() - y0(pin_m);
    }
    int it_m = 0;
    bool ok_m = eng[static_cast<std::size_t>(m)].newton_bordered(
        u_m, q, pin_m, rho_i, nullptr, opts.solve, it_m);
    if (!ok_m && rho_i >= 1e-3) {
      Vec y = u_m + Vec::Constant(nn, q / rho_i);
      eng[static_cast<std::size_t>(m)].march(y, rho_i, 0.0, nullptr, opts.solve);
      q = rho_i * y(pin_m);
      u_m = y.array() - y(pin_m);
      ok_m = eng[static_cast<std::size_t>(m)].newton_bordered(u_m, q, pin_m, rho_i,
                                                              nullptr, opts.solve, it_m);
    }
    if (!ok_m) {
      msg << "pinned Newton stalled at rho=" << rho_i << "; ";
      break;
    }
    // growth trace rho_i * y^m(ref_m); exact q when the reference sits on a node
    const double varrho_i =
        q + rho_i * grid.interpolate(u_m, spec.reference_points[static_cast<std::size_t>(m)]);
    v[static_cast<std::size_t>(m)] = u_m.array() + (q / rho_i - c);

    // lower regimes in the shifted representation u = y - c (src = rho c)
    bool chain_ok = true;
    for (int n = m - 1; n >= 0; --n) {
      Vec comp = jump_composite_field(spec, grid, n, v[static_cast<std::size_t>(n) + 1]);
      // warm start: the previous rung's shifted field is O(rho) away from the
      // new solution, whereas translating back to the raw gauge diverges ~1/rho
      Vec u = have_prev ? v[static_cast<std::size_t>(n)] : Vec(Vec::Zero(nn));
      if (!have_prev)
        eng[static_cast<std::size_t>(n)].march(u, rho_i, rho_i * c, &comp, opts.solve);
      int it_n = 0;
      bool ok_n = eng[static_cast<std::size_t>(n)].newton(u, rho_i, rho_i * c, &comp,
                                                          opts.solve, it_n);
      if (!ok_n && rho_i >= 1e-3) {
        eng[static_cast<std::size_t>(n)].march(u, rho_i, rho_i * c, &comp, opts.solve);
        ok_n = eng[static_cast<std::size_t>(n)].newton(u, rho_i, rho_i * c, &comp,
                                                       opts.solve, it_n);
      }
      if (!ok_n) {
        chain_ok = false;
        msg << "regime " << n << " Newton stalled at rho=" << rho_i << "; ";
        break;
      }
      v[static_cast<std::size_t>(n)] = u;
    }
    if (!chain_ok) break;

    // cross-regime coupling floor at the reference points (gauge-invariant)
    for (int n = 0; n < m; ++n) {
      const double ynext = grid.interpolate(v[static_cast<std::size_t>(n) + 1],
                                            spec.reference_points[static_cast<std::size_t>(n) + 1]);
      const double ycur = grid.interpolate(v[static_cast<std::size_t>(n)],
                                           spec.reference_points[static_cast<std::size_t>(n)]);
      coupling_floor = std::min(coupling_floor, std::exp(spec.gamma * (ynext - ycur)));
    }

    // normalized fields and rung-to-rung drift of the certified object
    const double gauge0 =
        grid.interpolate(v[0], spec.reference_points[0]);
    std::vector<Vec> vbar(static_cast<std::size_t>(m) + 1);
    for (int n = 0; n <= m; ++n)
      vbar[static_cast<std::size_t>(n)] = v[static_cast<std::size_t>(n)].array() - gauge0;
    double drift = kInf;
    if (have_prev) {
      if (certified_all) {
        drift = 0.0;
        for (int n = 0; n <= m; ++n)
          drift = std::max(drift, (vbar[static_cast<std::size_t>(n)] -
                                   vbar_prev[static_cast<std::size_t>(n)])
                                      .lpNorm<Eigen::Infinity>());
      } else {
        drift = (u_m - u_m_prev).lpNorm<Eigen::Infinity>();
      }
    }

    out.ladder_rho.push_back(rho_i);
    out.ladder_varrho.push_back(varrho_i);
    out.ladder_drift.push_back(drift);

    const bool cauchy = have_prev && std::abs(varrho_i - varrho_prev) < opts.tol_rho &&
                        drift < opts.tol_rho;
    varrho_prev = varrho_i;
    vbar_prev = vbar;
    u_m_prev = u_m;
    have_prev = true;
    v_ok = v;
    u_ok = u_m;
    q_ok = q;
    if (cauchy) {
      out.ladder_converged = true;
      break;
    }
  }
  if (!have_prev)
    throw NumericalError("discount ladder failed before completing a single rung");
  if (!out.ladder_converged)
    msg << "reporting the last completed rung; ";
  out.coupling_floor = m > 0 ? coupling_floor : 1.0;

  // limit polish at rho = 0: pinned system for the terminal regime, then the
  // regularized lower regimes (their linearization keeps the -gamma f2 diagonal,
  // which the certified coupling floor keeps away from zero).
  double q0 = q_ok;
  Vec u0 = u_ok;
  {
    int it = 0;
    bool ok = eng[static_cast<std::size_t>(m)].newton_bordered(u0, q0, pin_m, 0.0,
                                                               nullptr, opts.solve, it);
    if (!ok) {
      q0 = q_ok;
      u0 = u_ok;
      msg << "limit polish kept the last ladder rung for the terminal regime; ";
    }
  }
  out.varrho = q0;

  // assemble fields in a common gauge; start from the last-rung common
  // representation shifted so the terminal field matches u0's gauge
  std::vector<Vec> w(static_cast<std::size_t>(m) + 1);
  const double shift_m = grid.interpolate(v_ok[static_cast<std::size_t>(m)],
                                          spec.reference_points[static_cast<std::size_t>(m)]);
  for (int n = 0; n < m; ++n)
    w[static_cast<std::size_t>(n)] = v_ok[static_cast<std::size_t>(n)].array() - shift_m;
  w[static_cast<std::size_t>(m)] = u0;
  if (certified_all) {
    for (int n = m - 1; n >= 0; --n) {
      Vec comp = jump_composite_field(spec, grid, n, w[static_cast<std::size_t>(n) + 1]);
      int it = 0;
      Vec trial = w[static_cast<std::size_t>(n)];
      bool ok = eng[static_cast<std::size_t>(n)].newton(trial, 0.0, q0, &comp,
                                                        opts.solve, it);
      if (ok)
        w[static_cast<std::size_t>(n)] = trial;
      else
        msg << "limit polish kept the last ladder rung for regime " << n << "; ";
    }
  }
  const double gauge = grid.interpolate(w[0], spec.reference_points[0]);
  out.y_bar.resize(static_cast<std::size_t>(m) + 1);
  out.z_bar.resize(static_cast<std::size_t>(m) + 1);
  for (int n = 0; n <= m; ++n) {
    out.y_bar[static_cast<std::size_t>(n)] = w[static_cast<std::size_t>(n)].array() - gauge;
    out.z_bar[static_cast<std::size_t>(n)] =
        z_field_from(grid, spec, out.y_bar[static_cast<std::size_t>(n)]);
  }
  out.message = msg.str();

  ErgodicResidualReport res = ergodic_residual(spec, out, opts.solve.upwind_advection);
  out.residual_sup_regime = res.sup_regime;
  out.residual_mean_regime = res.mean_regime;
  out.residual_sup = res.sup;
  out.residual_mean = res.mean;
  return out;
}

ErgodicResidualReport ergodic_residual(const ScenarioSpec& spec,
                                       const ErgodicSolution& sol,
                                       bool upwind_advection) {
  if (sol.grid.d != 1)
    throw NumericalError("ergodic residual is implemented for one-dimensional factors only");
  const Grid& grid = sol.grid;
  const int m = spec.m;
  ErgodicResidualReport rep;
  rep.sup_regime.assign(static_cast<std::size_t>(m) + 1, 0.0);
  rep.mean_regime.assign(static_cast<std::size_t>(m) + 1, 0.0);
  MinimizeOptions argmin;
  const double inner = 0.5 * grid.half_width;
  for (int n = 0; n <= m; ++n) {
    Regime1D eng(spec, n, grid, argmin, upwind_advection);
    Vec comp;
    const Vec* base = nullptr;
    if (n < m) {
      comp = jump_composite_field(spec, grid, n, sol.y_bar[static_cast<std::size_t>(n) + 1]);
      base = &comp;
    }
    Vec r = eng.residual(sol.y_bar[static_cast<std::size_t>(n)], 0.0, sol.varrho, base);
    double sup = 0.0, sum = 0.0;
    long count = 0;
    for (Eigen::Index i = 0; i < grid.num_nodes(); ++i) {
      if (std::abs(grid.axis_coord(static_cast<int>(i))) > inner + 1e-12) continue;
      sup = std::max(sup, std::abs(r(i)));
      sum += std::abs(r(i));
      ++count;
    }
    rep.sup_regime[static_cast<std::size_t>(n)] = sup;
    rep.mean_regime[static_cast<std::size_t>(n)] = count > 0 ? sum / count : 0.0;
  }
  double sup = 0.0, mean = 0.0;
  for (int n : sol.certified) {
    sup = std::max(sup, rep.sup_regime[static_cast<std::size_t>(n)]);
    mean = std::max(mean, rep.mean_regime[static_cast<std::size_t>(n)]);
  }
  rep.sup = sup;
  rep.mean = mean;
  return rep;
}

}  // namespace fdb
