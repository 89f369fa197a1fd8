#pragma once

#include "smarttmle/types.hpp"

#include <string>

namespace smarttmle {

enum class GlmFamily { Logistic, Poisson, NegativeBinomial, InterceptOnly };

/// Fitting controls for a single GLM. The link is implied by the family
/// (logit for Logistic, log for Poisson/NegativeBinomial). Logistic accepts
/// fractional responses in [0,1], which is what the fluctuation submodels
/// feed it.
struct GlmSpec {
  GlmFamily family = GlmFamily::Logistic;
  bool add_intercept = true;
  int max_iterations = 100;
  Scalar tolerance = 1e-10;  // max-abs coefficient change
  // Profile search range for the NegBin size parameter, on log(theta).
  Scalar log_theta_min = -5.0;
  Scalar log_theta_max = 10.0;
  Scalar theta_search_tol = 1e-6;
};

struct GlmFit {
  Vector coefficients;  // includes the intercept first when add_intercept
  Scalar theta = 0.0;   // NegBin size; unused otherwise
  bool converged = false;
  bool ridged = false;  // a ridge jitter was needed to solve normal equations
  Scalar deviance = 0.0;
  int iterations = 0;
};

/// Weighted maximum likelihood by IRLS with step-halving. `weights` may be
/// empty (unit weights) and `offset` may be empty (zero offset). Singular
/// weighted normal equations fall back to a ridge-stabilized solve and set
/// `ridged`. Non-convergence is reported via `converged`, never thrown.
GlmFit fit_glm(const GlmSpec& spec, ConstMatrixRef x, ConstVectorRef y,
               ConstVectorRef weights = Vector(), ConstVectorRef offset = Vector());

/// Inverse-link(X beta + offset), elementwise.
Vector predict_glm(const GlmFit& fit, const GlmSpec& spec, ConstMatrixRef x,
                   ConstVectorRef offset = Vector());

/// Weighted score vector X^T (w .* (y - mu)) at the fit; the IRLS
/// convergence check used by tests.
Vector glm_score(const GlmFit& fit, const GlmSpec& spec, ConstMatrixRef x, ConstVectorRef y,
                 ConstVectorRef weights = Vector(), ConstVectorRef offset = Vector());

}  // namespace smarttmle
