#pragma once

#include "smarttmle/glm.hpp"
#include "smarttmle/trial_data.hpp"
#include "smarttmle/types.hpp"

#include <array>
#include <stdexcept>

namespace smarttmle {

struct EstimationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One fitted visit-attendance model: pooled logistic regression of C_t on
/// arm-history indicators plus all covariates measured through visit t-1.
/// Degenerate outcomes (all attended / all missed) collapse to a constant.
struct AttendanceModel {
  GlmFit fit;
  bool degenerate = false;
  Scalar constant_probability = 1.0;
  bool flagged_nonconverged = false;
};

/// Randomization and attendance probabilities shared by all regimes: the
/// stage-0 arm proportions, the step-up re-randomization proportion per
/// first-line arm, and the pooled attendance models for visits 1..3.
struct PropensityFits {
  std::array<Scalar, 3> arm_proportion{};       // arms 0,1,2
  std::array<Scalar, 2> step_up_proportion{};   // arms 1,2 (index arm-1)
  std::array<bool, 2> step_up_estimable{};      // any eligible attendee in arm
  AttendanceModel gc1, gc2, gc3;
  Scalar delta_g = 0.01;  // per-factor truncation bound
};

/// Whether (y0, y1) lies in the step-up-eligible region of rule d.
inline bool step_up_eligible(int y0, int y1) { return y1 >= y0 && y1 != 0; }

PropensityFits fit_propensities(const TrialDataset& data, Scalar delta_g = 0.01);

/// Empirical proportion of the regime's stage-0 arm.
Scalar estimate_gA0(const TrialDataset& data, const Regime& regime);
Scalar gA0_from_fits(const PropensityFits& fits, const Regime& regime);

/// Stage-1 arm propensity evaluated at (y0, y1): on the step-up-eligible
/// region, the empirical probability of the regime-consistent stage-1 arm
/// (step for II/III, stay for IIA/IIIA); exactly 1 elsewhere and for
/// regime I.
Scalar estimate_gA1(const PropensityFits& fits, const Regime& regime, int y0, int y1);

/// Attendance probability for visit t in {1,2,3} with the arm history set to
/// the regime-consistent values and covariates taken from the record.
Scalar eval_gC(const PropensityFits& fits, int visit, const SubjectRecord& record,
               const Regime& regime);

/// Cumulative regime-following propensity through visit t: the product
/// gA0 x [gA1(y0,y1) if t >= 2] x prod_{s<=t} gCs, truncated below at
/// delta_g per factor.
Scalar regime_propensity(const PropensityFits& fits, const SubjectRecord& record,
                         const Regime& regime, int through_visit);

}  // namespace smarttmle
