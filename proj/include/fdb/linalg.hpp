#pragma once

#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace fdb {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Numerically stable log(sum_i w_i * exp(e_i)) for positive weights w.
// Underflow of individual terms is benign; an empty or all-zero-weight sum
// returns -infinity.
inline double log_sum_exp(const Eigen::Ref<const Vec>& exponents,
                          const Eigen::Ref<const Vec>& weights) {
  double emax = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < exponents.size(); ++i)
    if (weights[i] > 0.0 && exponents[i] > emax) emax = exponents[i];
  if (!std::isfinite(emax)) return -std::numeric_limits<double>::infinity();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < exponents.size(); ++i)
    if (weights[i] > 0.0) acc += weights[i] * std::exp(exponents[i] - emax);
  return emax + std::log(acc);
}

}  // namespace fdb
