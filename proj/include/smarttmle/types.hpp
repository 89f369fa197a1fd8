#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>

namespace smarttmle {

using Scalar = double;
using Index = Eigen::Index;

using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using IntVector = Eigen::Matrix<int, Eigen::Dynamic, 1>;
using BoolVector = Eigen::Matrix<bool, Eigen::Dynamic, 1>;

using ConstMatrixRef = Eigen::Ref<const Matrix>;
using ConstVectorRef = Eigen::Ref<const Vector>;

inline Scalar expit(Scalar x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const Scalar e = std::exp(x);
  return e / (1.0 + e);
}

// logit(0) and logit(1) map to -inf/+inf; expit maps them back exactly.
inline Scalar logit(Scalar p) {
  if (p <= 0.0) return -std::numeric_limits<Scalar>::infinity();
  if (p >= 1.0) return std::numeric_limits<Scalar>::infinity();
  return std::log(p / (1.0 - p));
}

// Standard normal quantile, Wichura's AS 241 (PPND16). Relative error well
// below 1e-8 over (0,1), which is all the Wald machinery needs.
Scalar normal_quantile(Scalar p);

// Standard normal upper-tail helpers built on erfc.
inline Scalar normal_cdf(Scalar x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
inline Scalar two_sided_p(Scalar z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

}  // namespace smarttmle
