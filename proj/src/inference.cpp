#include "smarttmle/inference.hpp"

#include <cmath>
#include <stdexcept>

namespace smarttmle {

InfluenceCurve influence_components(const TmleFit& fit) {
  InfluenceCurve ic;
  ic.d0 = fit.d0;
  ic.d1 = fit.d1;
  ic.d2 = fit.d2;
  ic.d3 = fit.d3;
  ic.total = fit.d0 + fit.d1 + fit.d2 + fit.d3;
  return ic;
}

Scalar variance_estimate(const InfluenceCurve& ic, bool component_sum_of_squares) {
  const Index n = ic.total.size();
  if (n < 2) throw std::invalid_argument("variance_estimate: need n >= 2");
  if (component_sum_of_squares) {
    return (ic.d0.squaredNorm() + ic.d1.squaredNorm() + ic.d2.squaredNorm() +
            ic.d3.squaredNorm()) /
           static_cast<Scalar>(n);
  }
  return ic.total.squaredNorm() / static_cast<Scalar>(n);
}

Scalar covariance_estimate(const InfluenceCurve& a, const InfluenceCurve& b) {
  if (a.total.size() != b.total.size()) {
    throw std::invalid_argument("covariance_estimate: length mismatch");
  }
  return a.total.dot(b.total) / static_cast<Scalar>(a.total.size());
}

ContrastResult contrast_test(const TmleFit& fit1, const TmleFit& fit2, Scalar alpha) {
  if (fit1.n != fit2.n) {
    throw std::invalid_argument("contrast_test: fits come from different datasets");
  }
  const auto n = static_cast<Scalar>(fit1.n);
  const InfluenceCurve ic1 = influence_components(fit1);
  const InfluenceCurve ic2 = influence_components(fit2);
  const Scalar var1 = variance_estimate(ic1);
  const Scalar var2 = variance_estimate(ic2);
  const Scalar cov = covariance_estimate(ic1, ic2);
  const Scalar tau_sq = var1 + var2 - 2.0 * cov;
  const Scalar tau = std::sqrt(std::max(tau_sq, 0.0));

  ContrastResult out;
  out.regime1 = fit1.regime.name();
  out.regime2 = fit2.regime.name();
  out.estimate = fit1.psi - fit2.psi;
  out.alpha = alpha;
  const Scalar zq = normal_quantile(1.0 - alpha / 2.0);

  if (tau <= 1e-12) {
    // Identical fits collapse to a guarded non-rejection; a nonzero estimate
    // with no variance is unanswerable.
    if (std::abs(out.estimate) <= 1e-12) {
      out.z = 0.0;
      out.p_value = 1.0;
      out.standard_error = 0.0;
      out.ci_lower = out.ci_upper = out.estimate;
      out.reject = false;
      return out;
    }
    throw std::runtime_error("contrast_test: degenerate influence-function variance");
  }

  out.standard_error = tau / std::sqrt(n);
  out.z = std::sqrt(n) * out.estimate / tau;
  out.p_value = two_sided_p(out.z);
  out.ci_lower = out.estimate - zq * out.standard_error;
  out.ci_upper = out.estimate + zq * out.standard_error;
  out.reject = std::abs(out.z) > zq;
  return out;
}

RegimeSummary regime_summary(const TmleFit& fit, Scalar alpha) {
  RegimeSummary out;
  out.regime = fit.regime.name();
  out.psi = fit.psi;
  const InfluenceCurve ic = influence_components(fit);
  out.standard_error = std::sqrt(variance_estimate(ic) / static_cast<Scalar>(fit.n));
  const Scalar zq = normal_quantile(1.0 - alpha / 2.0);
  out.ci_lower = fit.psi - zq * out.standard_error;
  out.ci_upper = fit.psi + zq * out.standard_error;
  return out;
}

}  // namespace smarttmle
