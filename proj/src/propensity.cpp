#include "smarttmle/propensity.hpp"

#include <cmath>
#include <string>

namespace smarttmle {

namespace {

// Arm-history indicator block for visits 2 and 3; control (0,0) is the
// reference category.
void arm_pair_indicators(int a0, int a1, Scalar* out) {
  out[0] = (a0 == 1 && a1 == 1) ? 1.0 : 0.0;
  out[1] = (a0 == 2 && a1 == 2) ? 1.0 : 0.0;
  out[2] = (a0 == 1 && a1 == 3) ? 1.0 : 0.0;
  out[3] = (a0 == 2 && a1 == 3) ? 1.0 : 0.0;
}

AttendanceModel fit_attendance(const Matrix& x, const Vector& y) {
  AttendanceModel model;
  const Scalar mean = y.mean();
  if (mean <= 0.0 || mean >= 1.0) {
    model.degenerate = true;
    model.constant_probability = mean;
    return model;
  }
  GlmSpec spec;
  spec.family = GlmFamily::Logistic;
  model.fit = fit_glm(spec, x, y);
  model.flagged_nonconverged = !model.fit.converged;
  return model;
}

}  // namespace

Scalar estimate_gA0(const TrialDataset& data, const Regime& regime) {
  if (data.n() == 0) throw EstimationError("estimate_gA0: empty dataset");
  Index count = 0;
  for (const auto& r : data.records()) {
    if (r.a0 == regime.stage0_arm) ++count;
  }
  if (count == 0) {
    throw EstimationError("estimate_gA0: no subjects in stage-0 arm " +
                          std::to_string(regime.stage0_arm));
  }
  return static_cast<Scalar>(count) / static_cast<Scalar>(data.n());
}

PropensityFits fit_propensities(const TrialDataset& data, Scalar delta_g) {
  const Index n = data.n();
  if (n == 0) throw EstimationError("fit_propensities: empty dataset");
  PropensityFits fits;
  fits.delta_g = delta_g;

  std::array<Index, 3> arm_count{};
  for (const auto& r : data.records()) ++arm_count[static_cast<size_t>(r.a0)];
  for (int a = 0; a < 3; ++a) {
    fits.arm_proportion[static_cast<size_t>(a)] =
        static_cast<Scalar>(arm_count[static_cast<size_t>(a)]) / static_cast<Scalar>(n);
  }

  for (int arm = 1; arm <= 2; ++arm) {
    Index eligible = 0, stepped = 0;
    for (const auto& r : data.records()) {
      if (r.a0 != arm || !r.c1) continue;
      if (!step_up_eligible(r.y0, *r.y1)) continue;
      ++eligible;
      if (*r.a1 == 3) ++stepped;
    }
    fits.step_up_estimable[static_cast<size_t>(arm - 1)] = eligible > 0;
    fits.step_up_proportion[static_cast<size_t>(arm - 1)] =
        eligible > 0 ? static_cast<Scalar>(stepped) / static_cast<Scalar>(eligible) : 0.0;
  }

  // Visit 1: pooled over every subject.
  {
    Matrix x(n, 4);
    Vector y(n);
    for (Index i = 0; i < n; ++i) {
      const auto& r = data[i];
      x(i, 0) = r.a0 == 1 ? 1.0 : 0.0;
      x(i, 1) = r.a0 == 2 ? 1.0 : 0.0;
      x(i, 2) = r.w0;
      x(i, 3) = static_cast<Scalar>(r.y0);
      y[i] = r.c1 ? 1.0 : 0.0;
    }
    fits.gc1 = fit_attendance(x, y);
  }

  // Visit 2: subjects who attended visit 1.
  {
    std::vector<Index> rows;
    for (Index i = 0; i < n; ++i) {
      if (data[i].c1) rows.push_back(i);
    }
    if (rows.empty()) {
      // Nobody reached visit 2; the model can never be evaluated on a
      // C1-attending history, so a flagged constant suffices.
      fits.gc2.degenerate = true;
      fits.gc2.constant_probability = 1.0;
      fits.gc2.flagged_nonconverged = true;
      return fits;
    }
    Matrix x(static_cast<Index>(rows.size()), 8);
    Vector y(static_cast<Index>(rows.size()));
    for (size_t k = 0; k < rows.size(); ++k) {
      const auto& r = data[rows[k]];
      const auto i = static_cast<Index>(k);
      arm_pair_indicators(r.a0, *r.a1, x.row(i).data());
      x(i, 4) = r.w0;
      x(i, 5) = static_cast<Scalar>(r.y0);
      x(i, 6) = *r.w1;
      x(i, 7) = static_cast<Scalar>(*r.y1);
      y[i] = r.c2 ? 1.0 : 0.0;
    }
    fits.gc2 = fit_attendance(x, y);
  }

  // Visit 3: subjects who attended visits 1 and 2.
  {
    std::vector<Index> rows;
    for (Index i = 0; i < n; ++i) {
      if (data[i].c1 && data[i].c2) rows.push_back(i);
    }
    if (rows.empty()) throw EstimationError("fit_propensities: no visit-2 attendees");
    Matrix x(static_cast<Index>(rows.size()), 10);
    Vector y(static_cast<Index>(rows.size()));
    for (size_t k = 0; k < rows.size(); ++k) {
      const auto& r = data[rows[k]];
      const auto i = static_cast<Index>(k);
      arm_pair_indicators(r.a0, *r.a1, x.row(i).data());
      x(i, 4) = r.w0;
      x(i, 5) = static_cast<Scalar>(r.y0);
      x(i, 6) = *r.w1;
      x(i, 7) = static_cast<Scalar>(*r.y1);
      x(i, 8) = *r.w2;
      x(i, 9) = static_cast<Scalar>(*r.y2);
      y[i] = r.c3 ? 1.0 : 0.0;
    }
    fits.gc3 = fit_attendance(x, y);
  }

  return fits;
}

Scalar gA0_from_fits(const PropensityFits& fits, const Regime& regime) {
  const Scalar p = fits.arm_proportion[static_cast<size_t>(regime.stage0_arm)];
  if (p <= 0.0) {
    throw EstimationError("no subjects in stage-0 arm " + std::to_string(regime.stage0_arm));
  }
  return p;
}

Scalar estimate_gA1(const PropensityFits& fits, const Regime& regime, int y0, int y1) {
  if (regime.stage0_arm == 0) return 1.0;  // control is never re-randomized
  if (!step_up_eligible(y0, y1)) return 1.0;
  const size_t idx = static_cast<size_t>(regime.stage0_arm - 1);
  if (!fits.step_up_estimable[idx]) {
    throw EstimationError("estimate_gA1: no step-up-eligible attendees in arm " +
                          std::to_string(regime.stage0_arm));
  }
  const Scalar step = fits.step_up_proportion[idx];
  return regime.step_up ? step : 1.0 - step;
}

Scalar eval_gC(const PropensityFits& fits, int visit, const SubjectRecord& record,
               const Regime& regime) {
  const AttendanceModel* model = visit == 1 ? &fits.gc1 : visit == 2 ? &fits.gc2 : &fits.gc3;
  if (model->degenerate) return model->constant_probability;

  GlmSpec spec;
  spec.family = GlmFamily::Logistic;
  if (visit == 1) {
    Matrix x(1, 4);
    x(0, 0) = regime.stage0_arm == 1 ? 1.0 : 0.0;
    x(0, 1) = regime.stage0_arm == 2 ? 1.0 : 0.0;
    x(0, 2) = record.w0;
    x(0, 3) = static_cast<Scalar>(record.y0);
    return predict_glm(model->fit, spec, x)[0];
  }
  if (!record.y1 || !record.w1) {
    throw EstimationError("eval_gC: visit-1 covariates absent for subject " + record.id);
  }
  const int a1 = regime.stage1_arm(record.y0, *record.y1);
  if (visit == 2) {
    Matrix x(1, 8);
    arm_pair_indicators(regime.stage0_arm, a1, x.row(0).data());
    x(0, 4) = record.w0;
    x(0, 5) = static_cast<Scalar>(record.y0);
    x(0, 6) = *record.w1;
    x(0, 7) = static_cast<Scalar>(*record.y1);
    return predict_glm(model->fit, spec, x)[0];
  }
  if (!record.y2 || !record.w2) {
    throw EstimationError("eval_gC: visit-2 covariates absent for subject " + record.id);
  }
  Matrix x(1, 10);
  arm_pair_indicators(regime.stage0_arm, a1, x.row(0).data());
  x(0, 4) = record.w0;
  x(0, 5) = static_cast<Scalar>(record.y0);
  x(0, 6) = *record.w1;
  x(0, 7) = static_cast<Scalar>(*record.y1);
  x(0, 8) = *record.w2;
  x(0, 9) = static_cast<Scalar>(*record.y2);
  return predict_glm(model->fit, spec, x)[0];
}

Scalar regime_propensity(const PropensityFits& fits, const SubjectRecord& record,
                         const Regime& regime, int through_visit) {
  const Scalar floor = fits.delta_g;
  Scalar product = std::max(gA0_from_fits(fits, regime), floor);
  if (through_visit >= 2) {
    if (!record.y1) {
      throw EstimationError("regime_propensity: y1 absent for subject " + record.id);
    }
    product *= std::max(estimate_gA1(fits, regime, record.y0, *record.y1), floor);
  }
  for (int visit = 1; visit <= through_visit; ++visit) {
    product *= std::max(eval_gC(fits, visit, record, regime), floor);
  }
  return product;
}

}  // namespace smarttmle
