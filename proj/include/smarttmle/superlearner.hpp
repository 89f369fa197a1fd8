#pragma once

#include "smarttmle/glm.hpp"
#include "smarttmle/hal.hpp"
#include "smarttmle/types.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

namespace smarttmle {

struct SlCandidate {
  std::string name;
  std::variant<GlmSpec, HalConfig> spec;
};

struct SlLibrary {
  std::vector<SlCandidate> candidates;
  int folds = 5;
  std::uint64_t fold_seed = 0;
};

/// Library of §-style count regressions: intercept-only, Poisson,
/// negative binomial, and the highly adaptive LASSO.
SlLibrary default_count_library(int folds, std::uint64_t fold_seed, bool include_hal = true);

struct SlCandidateFit {
  std::string name;
  std::variant<GlmFit, HalFit> fit;
  Scalar cv_risk = 0.0;
  bool failed = false;  // non-finite fold predictions; weight forced to 0
};

struct SlFit {
  Vector weights;  // convex, aligned with candidates
  std::vector<SlCandidateFit> candidate_fits;
  std::vector<SlCandidate> library;
  Scalar ensemble_cv_risk = 0.0;
  bool clip_nonnegative = true;
};

/// Deterministic fold assignment; fold sizes differ by at most one.
std::vector<int> make_folds(Index n, int k, std::uint64_t seed);

SlFit fit_superlearner(const SlLibrary& library, ConstMatrixRef x, ConstVectorRef y,
                       ConstVectorRef weights = Vector());

Vector sl_predict(const SlFit& fit, ConstMatrixRef x_new);

/// Simplex-constrained weighted least squares min_a MSE(y, Z a), solved by
/// exponentiated gradient; exposed for the metalearner tests.
Vector simplex_weights(ConstMatrixRef z, ConstVectorRef y, ConstVectorRef weights,
                       Scalar tol = 1e-8, int max_iterations = 10000);

}  // namespace smarttmle
