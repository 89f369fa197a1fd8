#pragma once

#include "smarttmle/types.hpp"

#include <cstdint>
#include <vector>

namespace smarttmle {

/// Simplified highly adaptive LASSO: zero-order spline (indicator) basis at
/// observed knots, L1-penalized squared-error fit by coordinate descent,
/// penalty picked by K-fold cross-validation.
struct HalConfig {
  int max_degree = 2;         // max interaction order of the indicator basis
  int lambda_grid_size = 50;  // log-spaced from lambda_max down 4 decades
  Scalar lambda_decades = 4.0;
  int cv_folds = 5;
  std::uint64_t fold_seed = 1;
  Index basis_cap = 2000;  // largest-variance-first truncation
  Scalar cd_tolerance = 1e-7;
  int max_passes = 1000;
};

/// One indicator basis function: prod_{s in vars} 1(x_s >= knots_s).
struct HalBasisFunction {
  std::vector<int> vars;
  std::vector<Scalar> knots;
};

struct HalBasis {
  Matrix columns;  // n x m binary matrix
  std::vector<HalBasisFunction> descriptors;
  bool truncated = false;
};

struct HalFit {
  std::vector<HalBasisFunction> basis;  // all retained basis descriptors
  Vector coefficients;                  // aligned with `basis`, original scale
  Scalar intercept = 0.0;
  Scalar lambda = 0.0;
  std::vector<Scalar> lambda_grid;
  std::vector<Scalar> cv_risk;  // per grid point
  Index active_count = 0;
};

HalBasis hal_basis(ConstMatrixRef x, const HalConfig& config);

HalFit fit_hal(ConstMatrixRef x, ConstVectorRef y, ConstVectorRef weights, const HalConfig& config);

Vector hal_predict(const HalFit& fit, ConstMatrixRef x_new);

/// Solves the weighted LASSO over a fixed (already standardized) design for
/// one lambda; exposed for the path tests. Objective:
///   (1/2W) sum_i w_i (y_i - b0 - x_i.b)^2 + lambda * |b|_1 ,  W = sum w_i.
void coordinate_descent_lasso(ConstMatrixRef x_std, ConstVectorRef y, ConstVectorRef weights,
                              Scalar lambda, Scalar tolerance, int max_passes, Scalar& intercept,
                              Vector& beta);

}  // namespace smarttmle
