#pragma once

#include <cmath>

#include "fdb/errors.hpp"
#include "fdb/linalg.hpp"

namespace fdb {

// Tensor-product node grid on [-R, R]^d, d in {1,2}: `cells` intervals per
// axis, `cells`+1 nodes per axis, spacing h = 2R/cells. Fields are stored as
// flat vectors in row-major order (d=2: flat = ix*(cells+1) + iy). Reads off
// the box are clamped; callers that must reject exterior points check
// `inside` first.
struct Grid {
  int d = 1;
  double half_width = 6.0;
  int cells = 512;

  double h() const { return 2.0 * half_width / cells; }
  int nodes_per_axis() const { return cells + 1; }
  Eigen::Index num_nodes() const {
    Eigen::Index n = nodes_per_axis();
    return d == 1 ? n : n * n;
  }

  double axis_coord(int i) const { return -half_width + i * h(); }

  Vec node(Eigen::Index flat) const {
    Vec x(d);
    if (d == 1) {
      x[0] = axis_coord(static_cast<int>(flat));
    } else {
      int n = nodes_per_axis();
      x[0] = axis_coord(static_cast<int>(flat / n));
      x[1] = axis_coord(static_cast<int>(flat % n));
    }
    return x;
  }

  bool inside(const Vec& phi, double tol = 0.0) const {
    for (int k = 0; k < d; ++k)
      if (std::abs(phi[k]) > half_width + tol) return false;
    return true;
  }

  // Whether the node with per-axis indices is on the boundary of the box.
  bool boundary_node(Eigen::Index flat) const {
    int n = nodes_per_axis();
    if (d == 1) return flat == 0 || flat == n - 1;
    int i = static_cast<int>(flat / n), j = static_cast<int>(flat % n);
    return i == 0 || i == n - 1 || j == 0 || j == n - 1;
  }

  // Multilinear interpolation of a scalar field, clamped to the box.
  double interpolate(const Eigen::Ref<const Vec>& field, const Vec& phi) const {
    if (field.size() != num_nodes())
      throw NumericalError("interpolate: field size does not match grid");
    double hh = h();
    int n = nodes_per_axis();
    auto locate = [&](double x, int& i0, double& w) {
      double s = (x + half_width) / hh;
      if (s <= 0.0) { i0 = 0; w = 0.0; return; }
      if (s >= cells) { i0 = cells - 1; w = 1.0; return; }
      i0 = static_cast<int>(s);
      w = s - i0;
    };
    if (d == 1) {
      int i0; double w;
      locate(phi[0], i0, w);
      return (1.0 - w) * field[i0] + w * field[i0 + 1];
    }
    int i0, j0; double wx, wy;
    locate(phi[0], i0, wx);
    locate(phi[1], j0, wy);
    auto at = [&](int i, int j) { return field[static_cast<Eigen::Index>(i) * n + j]; };
    return (1.0 - wx) * ((1.0 - wy) * at(i0, j0) + wy * at(i0, j0 + 1)) +
           wx * ((1.0 - wy) * at(i0 + 1, j0) + wy * at(i0 + 1, j0 + 1));
  }

  // Interpolates each column of a (num_nodes x k) field matrix.
  Vec interpolate_columns(const Mat& field, const Vec& phi) const {
    Vec out(field.cols());
    for (Eigen::Index c = 0; c < field.cols(); ++c)
      out[c] = interpolate(field.col(c), phi);
    return out;
  }

  // Central-difference partial derivative along `axis` with reflecting
  // (zero-Neumann) ghost nodes, second order including the boundary rows.
  Vec derivative(const Eigen::Ref<const Vec>& field, int axis) const {
    if (field.size() != num_nodes())
      throw NumericalError("derivative: field size does not match grid");
    int n = nodes_per_axis();
    double inv2h = 1.0 / (2.0 * h());
    Vec out(field.size());
    if (d == 1) {
      for (int i = 0; i < n; ++i) {
        int ip = i == n - 1 ? n - 2 : i + 1;
        int im = i == 0 ? 1 : i - 1;
        out[i] = (field[ip] - field[im]) * inv2h;
      }
      return out;
    }
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        Eigen::Index f = static_cast<Eigen::Index>(i) * n + j;
        int a = axis == 0 ? i : j;
        int ap = a == n - 1 ? n - 2 : a + 1;
        int am = a == 0 ? 1 : a - 1;
        Eigen::Index fp = axis == 0 ? static_cast<Eigen::Index>(ap) * n + j : static_cast<Eigen::Index>(i) * n + ap;
        Eigen::Index fm = axis == 0 ? static_cast<Eigen::Index>(am) * n + j : static_cast<Eigen::Index>(i) * n + am;
        out[f] = (field[fp] - field[fm]) * inv2h;
      }
    }
    return out;
  }
};

}  // namespace fdb
