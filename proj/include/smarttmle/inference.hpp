#pragma once

#include "smarttmle/tmle.hpp"
#include "smarttmle/types.hpp"

#include <string>

namespace smarttmle {

struct InfluenceCurve {
  Vector d0, d1, d2, d3;
  Vector total;  // rowwise sum
};

InfluenceCurve influence_components(const TmleFit& fit);

/// Empirical second moment of the total influence function, (1/n) sum IF_i^2.
/// The component-sum-of-squares variant (1/n) sum_i sum_t D_ti^2 is kept
/// behind the flag for comparison.
Scalar variance_estimate(const InfluenceCurve& ic, bool component_sum_of_squares = false);

Scalar covariance_estimate(const InfluenceCurve& a, const InfluenceCurve& b);

struct ContrastResult {
  std::string regime1, regime2;
  Scalar estimate = 0.0;      // psi1 - psi2
  Scalar standard_error = 0.0;  // tau_n / sqrt(n)
  Scalar z = 0.0;
  Scalar p_value = 1.0;
  Scalar ci_lower = 0.0;
  Scalar ci_upper = 0.0;
  Scalar alpha = 0.05;
  bool reject = false;
};

/// Wald contrast between two TMLE fits on the same dataset. Rejects when
/// |z| strictly exceeds the 1-alpha/2 normal quantile.
ContrastResult contrast_test(const TmleFit& fit1, const TmleFit& fit2, Scalar alpha = 0.05);

/// Single-regime Wald machinery for psi itself.
struct RegimeSummary {
  std::string regime;
  Scalar psi = 0.0;
  Scalar standard_error = 0.0;
  Scalar ci_lower = 0.0;
  Scalar ci_upper = 0.0;
};
RegimeSummary regime_summary(const TmleFit& fit, Scalar alpha = 0.05);

}  // namespace smarttmle
