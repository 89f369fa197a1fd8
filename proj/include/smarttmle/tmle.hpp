#pragma once

#include "smarttmle/propensity.hpp"
#include "smarttmle/superlearner.hpp"
#include "smarttmle/trial_data.hpp"
#include "smarttmle/types.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace smarttmle {

enum class InitialFitKind {
  SuperLearner,         // intercept-only + Poisson + NegBin + HAL stack
  PoissonGlm,           // pooled log-linear regression only
  SaturatedFollowers,   // exact cell means on regime-consistent rows
};

struct TmleConfig {
  InitialFitKind initial_fit = InitialFitKind::SuperLearner;
  bool include_hal = true;
  int sl_folds = 5;
  std::uint64_t seed = 0;
  Scalar delta_g = 0.01;      // propensity truncation, per factor
  Scalar clamp_delta = 0.005; // scaled fitted values clamped to [d, 1-d] before logit
  Index min_n = 30;
};

/// Initial stage regression behind a uniform prediction surface.
class StagePredictor {
 public:
  virtual ~StagePredictor() = default;
  virtual Vector predict(ConstMatrixRef x) const = 0;
  virtual std::string describe() const = 0;
};

/// Design rows shared by fitting and counterfactual evaluation. Arm history
/// enters as the four first-line indicator columns; control is the baseline.
Vector stage3_design_row(int a0, int a1, const SubjectRecord& rec);
Vector stage2_design_row(int a0, int a1, const SubjectRecord& rec);
Vector stage1_design_row(int a0, const SubjectRecord& rec);

/// The five interventional arm assignments of the stacked regressions, in
/// the fixed row-block order (1,d(1,.)), (2,d(2,.)), (1,1), (2,2), (0,0).
std::array<std::pair<int, int>, 5> stacked_arm_assignments(const SubjectRecord& rec);

struct StackedDataset {
  Matrix design;                          // no intercept column
  Vector pseudo_outcome;                  // Y_t + upstream(a0, a1, history)
  std::vector<char> usable;               // source subject has Cbar_t = 1
  std::vector<char> own_arm_match;        // stacked arms equal observed arms
  std::vector<Index> subject;             // source subject per stacked row
};

using StageEvaluator = std::function<Scalar(int a0, int a1, const SubjectRecord&)>;

/// 5n-row stacked dataset for stage t in {1,2}; `upstream` is the augmented
/// stage-(t+1) evaluator.
StackedDataset build_stacked_dataset(const TrialDataset& data, int stage,
                                     const StageEvaluator& upstream);

/// Inverse-propensity-weighted regime-following indicator for stage t.
/// Zero numerator short-circuits the denominator entirely.
Scalar clever_covariate(const PropensityFits& fits, const SubjectRecord& record,
                        const Regime& regime, int stage);

struct FluctuationResult {
  Scalar epsilon = 0.0;
  bool converged = true;
  bool degenerate = false;  // no usable H support; epsilon pinned at 0
};

/// One-parameter logistic fluctuation: y_scaled ~ offset + eps * h, fit as a
/// fractional-response logistic MLE. Rows with infinite offsets carry no
/// information about eps and are skipped.
FluctuationResult fluctuate(ConstVectorRef y_scaled, ConstVectorRef offset_logit,
                            ConstVectorRef h);

struct SequentialStageFit {
  int stage = 0;
  std::shared_ptr<const StagePredictor> initial;
  Scalar scale = 1.0;
  Scalar epsilon = 0.0;
  bool epsilon_converged = true;
  bool epsilon_degenerate = false;
  Scalar eq_residual = 0.0;  // (1/n) sum_i H_t,i * (target - Qbar*_t)
};

struct TmleFit {
  Regime regime;
  Scalar psi = 0.0;
  std::array<SequentialStageFit, 3> stage;  // [0] = stage 1, [2] = stage 3
  std::shared_ptr<const PropensityFits> propensity;
  Scalar clamp_delta = 0.005;

  // Per-subject observed-data clever covariates and influence components.
  Vector h1, h2, h3;
  Vector d0, d1, d2, d3;
  Vector qbar1_values;  // Qbar*_1(L_0i)

  // Diagnostics.
  Scalar min_propensity = 1.0;
  Scalar max_h = 0.0;
  int truncation_count = 0;
  int saturated_cell_misses = 0;
  Index n = 0;

  /// Augmented evaluators; arm arguments are interventional assignments.
  Scalar qtilde3_star(int a0, int a1, const SubjectRecord& rec) const;
  Scalar qtilde2_star(int a0, int a1, const SubjectRecord& rec) const;
  Scalar qbar1_star(const SubjectRecord& rec) const;
  /// Qbar*_t with the cumulative observed-outcome addend, per stage.
  Scalar qbar3_star(const SubjectRecord& rec) const;
  Scalar qbar2_star(const SubjectRecord& rec) const;
};

TmleFit estimate_regime_mean(const TrialDataset& data, const Regime& regime,
                             const TmleConfig& config);
TmleFit estimate_regime_mean(const TrialDataset& data, const Regime& regime,
                             const TmleConfig& config,
                             std::shared_ptr<const PropensityFits> propensity);

/// Unadjusted complete-case baseline: mean cumulative outcome among regime
/// followers with all three visits attended.
Scalar complete_case_regime_mean(const TrialDataset& data, const Regime& regime);

}  // namespace smarttmle
