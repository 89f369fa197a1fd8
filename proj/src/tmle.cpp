#include "smarttmle/tmle.hpp"

#include "smarttmle/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <stdexcept>

namespace smarttmle {

namespace {

void arm_pair_indicators(int a0, int a1, Scalar* out) {
  out[0] = (a0 == 1 && a1 == 1) ? 1.0 : 0.0;
  out[1] = (a0 == 2 && a1 == 2) ? 1.0 : 0.0;
  out[2] = (a0 == 1 && a1 == 3) ? 1.0 : 0.0;
  out[3] = (a0 == 2 && a1 == 3) ? 1.0 : 0.0;
}

}  // namespace

Vector stage3_design_row(int a0, int a1, const SubjectRecord& rec) {
  Vector row(10);
  arm_pair_indicators(a0, a1, row.data());
  row[4] = rec.w0;
  row[5] = static_cast<Scalar>(rec.y0);
  row[6] = rec.w1.value_or(0.0);
  row[7] = static_cast<Scalar>(rec.y1.value_or(0));
  row[8] = rec.w2.value_or(0.0);
  row[9] = static_cast<Scalar>(rec.y2.value_or(0));
  return row;
}

Vector stage2_design_row(int a0, int a1, const SubjectRecord& rec) {
  Vector row(8);
  arm_pair_indicators(a0, a1, row.data());
  row[4] = rec.w0;
  row[5] = static_cast<Scalar>(rec.y0);
  row[6] = rec.w1.value_or(0.0);
  row[7] = static_cast<Scalar>(rec.y1.value_or(0));
  return row;
}

Vector stage1_design_row(int a0, const SubjectRecord& rec) {
  Vector row(4);
  row[0] = a0 == 1 ? 1.0 : 0.0;
  row[1] = a0 == 2 ? 1.0 : 0.0;
  row[2] = rec.w0;
  row[3] = static_cast<Scalar>(rec.y0);
  return row;
}

std::array<std::pair<int, int>, 5> stacked_arm_assignments(const SubjectRecord& rec) {
  // Rule d needs Y1; subjects censored before visit 1 get the stay arm in
  // the dynamic blocks, and those rows are unusable for fitting anyway.
  const int d1 = rec.y1 ? evaluate_rule_d(1, rec.y0, *rec.y1) : 1;
  const int d2 = rec.y1 ? evaluate_rule_d(2, rec.y0, *rec.y1) : 2;
  return {{{1, d1}, {2, d2}, {1, 1}, {2, 2}, {0, 0}}};
}

StackedDataset build_stacked_dataset(const TrialDataset& data, int stage,
                                     const StageEvaluator& upstream) {
  if (stage != 1 && stage != 2) {
    throw std::invalid_argument("build_stacked_dataset: stage must be 1 or 2");
  }
  const Index n = data.n();
  const Index cols = stage == 2 ? 8 : 4;
  StackedDataset out;
  out.design.resize(5 * n, cols);
  out.pseudo_outcome.resize(5 * n);
  out.usable.assign(static_cast<size_t>(5 * n), 0);
  out.own_arm_match.assign(static_cast<size_t>(5 * n), 0);
  out.subject.resize(static_cast<size_t>(5 * n));

  // Block-major layout: rows [b*n, (b+1)*n) hold assignment block b.
  for (Index i = 0; i < n; ++i) {
    const auto& rec = data[i];
    const auto assignments = stacked_arm_assignments(rec);
    const bool usable = stage == 2 ? (rec.c1 && rec.c2) : rec.c1;
    for (size_t b = 0; b < assignments.size(); ++b) {
      const auto [a0, a1] = assignments[b];
      const Index row = static_cast<Index>(b) * n + i;
      out.subject[static_cast<size_t>(row)] = i;
      out.design.row(row) =
          stage == 2 ? stage2_design_row(a0, a1, rec) : stage1_design_row(a0, rec);
      out.usable[static_cast<size_t>(row)] = usable ? 1 : 0;
      out.own_arm_match[static_cast<size_t>(row)] =
          (rec.a0 == a0 && rec.a1 && *rec.a1 == a1) ? 1 : 0;
      if (usable) {
        const Scalar y_t = static_cast<Scalar>(stage == 2 ? *rec.y2 : *rec.y1);
        out.pseudo_outcome[row] = y_t + upstream(a0, a1, rec);
      } else {
        out.pseudo_outcome[row] = 0.0;
      }
    }
  }
  return out;
}

Scalar clever_covariate(const PropensityFits& fits, const SubjectRecord& record,
                        const Regime& regime, int stage) {
  bool numerator = false;
  switch (stage) {
    case 1:
      numerator = record.c1 && follows_regime(record, regime, 0);
      break;
    case 2:
      numerator = record.c1 && record.c2 && follows_regime(record, regime, 1);
      break;
    case 3:
      numerator = record.c1 && record.c2 && record.c3 && follows_regime(record, regime, 1);
      break;
    default:
      throw std::invalid_argument("clever_covariate: stage must be 1, 2, or 3");
  }
  if (!numerator) return 0.0;
  return 1.0 / regime_propensity(fits, record, regime, stage);
}

FluctuationResult fluctuate(ConstVectorRef y_scaled, ConstVectorRef offset_logit,
                            ConstVectorRef h) {
  FluctuationResult result;
  std::vector<Index> rows;
  for (Index i = 0; i < y_scaled.size(); ++i) {
    if (std::isfinite(offset_logit[i]) && h[i] > 0.0) rows.push_back(i);
  }
  if (rows.empty()) {
    result.degenerate = true;
    return result;
  }

  const auto m = static_cast<Index>(rows.size());
  Matrix x(m, 1);
  Vector y(m), off(m);
  for (Index k = 0; k < m; ++k) {
    x(k, 0) = h[rows[static_cast<size_t>(k)]];
    y[k] = std::min(std::max(y_scaled[rows[static_cast<size_t>(k)]], 0.0), 1.0);
    off[k] = offset_logit[rows[static_cast<size_t>(k)]];
  }

  GlmSpec spec;
  spec.family = GlmFamily::Logistic;
  spec.add_intercept = false;
  const GlmFit fit = fit_glm(spec, x, y, Vector(), off);
  Scalar eps = fit.coefficients[0];
  if (!std::isfinite(eps)) eps = 0.0;

  // Newton polish on the exact score; the estimating equations are checked
  // at 1e-8 downstream, so the one-dimensional MLE is driven hard here.
  auto score_at = [&](Scalar e) {
    Scalar s = 0.0;
    for (Index k = 0; k < m; ++k) s += x(k, 0) * (y[k] - expit(off[k] + e * x(k, 0)));
    return s;
  };
  for (int iter = 0; iter < 100; ++iter) {
    Scalar info = 0.0;
    for (Index k = 0; k < m; ++k) {
      const Scalar mu = expit(off[k] + eps * x(k, 0));
      info += x(k, 0) * x(k, 0) * mu * (1.0 - mu);
    }
    if (info <= 1e-300) break;
    const Scalar step = score_at(eps) / info;
    eps += std::min(std::max(step, -50.0), 50.0);
    eps = std::min(std::max(eps, -500.0), 500.0);
    if (std::abs(step) < 1e-15) break;
  }

  const Scalar h_total = x.col(0).sum();
  result.epsilon = eps;
  result.converged = std::abs(score_at(eps)) <= 1e-10 * std::max(1.0, h_total);
  if (!std::isfinite(result.epsilon)) {
    result.epsilon = 0.0;
    result.converged = false;
  }
  return result;
}

namespace {

class GlmStagePredictor final : public StagePredictor {
 public:
  GlmStagePredictor(GlmSpec spec, GlmFit fit) : spec_(std::move(spec)), fit_(std::move(fit)) {}
  Vector predict(ConstMatrixRef x) const override { return predict_glm(fit_, spec_, x); }
  std::string describe() const override { return "poisson_glm"; }

 private:
  GlmSpec spec_;
  GlmFit fit_;
};

class SlStagePredictor final : public StagePredictor {
 public:
  explicit SlStagePredictor(SlFit fit) : fit_(std::move(fit)) {}
  Vector predict(ConstMatrixRef x) const override { return sl_predict(fit_, x); }
  std::string describe() const override { return "super_learner"; }
  const SlFit& fit() const { return fit_; }

 private:
  SlFit fit_;
};

// Exact cell means over regime-consistent rows, keyed by the covariate part
// of the design row (arm columns skipped). Misses fall back to the overall
// training mean and are counted; the saturated-equivalence tests require
// zero misses.
class SaturatedStagePredictor final : public StagePredictor {
 public:
  SaturatedStagePredictor(ConstMatrixRef x, ConstVectorRef y, Index skip_cols)
      : skip_cols_(skip_cols) {
    Scalar total = 0.0;
    for (Index i = 0; i < x.rows(); ++i) {
      auto& cell = cells_[key_of(x.row(i))];
      cell.first += y[i];
      cell.second += 1.0;
      total += y[i];
    }
    fallback_ = x.rows() > 0 ? total / static_cast<Scalar>(x.rows()) : 0.0;
  }

  Vector predict(ConstMatrixRef x) const override {
    Vector out(x.rows());
    for (Index i = 0; i < x.rows(); ++i) {
      const auto it = cells_.find(key_of(x.row(i)));
      if (it == cells_.end()) {
        ++misses_;
        out[i] = fallback_;
      } else {
        out[i] = it->second.first / it->second.second;
      }
    }
    return out;
  }

  std::string describe() const override { return "saturated_cell_means"; }
  int misses() const { return misses_.load(); }

 private:
  std::vector<Scalar> key_of(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    std::vector<Scalar> key;
    key.reserve(static_cast<size_t>(row.size() - skip_cols_));
    for (Index j = skip_cols_; j < row.size(); ++j) key.push_back(row[j]);
    return key;
  }

  Index skip_cols_;
  std::map<std::vector<Scalar>, std::pair<Scalar, Scalar>> cells_;
  Scalar fallback_ = 0.0;
  mutable std::atomic<int> misses_{0};
};

struct EvalContext {
  const Regime* regime;
  const PropensityFits* fits;
  Scalar clamp_delta;
};

Scalar clamp_unit(Scalar q, Scalar delta) {
  return std::min(std::max(q, delta), 1.0 - delta);
}

// s * expit(logit(clamped q/s) + eps * h), with exact pass-through at the
// boundary when clamping is disabled.
Scalar augment(Scalar q_init, Scalar scale, Scalar eps, Scalar h, Scalar delta) {
  const Scalar qs = clamp_unit(q_init / scale, delta);
  if (qs <= 0.0) return 0.0;
  if (qs >= 1.0) return scale;
  return scale * expit(logit(qs) + eps * h);
}

// Interventional clever covariate H_t(a0, a1, 1-bar, history): nonzero only
// when the arm assignment is the regime-consistent one for this history.
Scalar h_eval(const EvalContext& ctx, int stage, int a0, int a1, const SubjectRecord& rec) {
  const Regime& regime = *ctx.regime;
  if (a0 != regime.stage0_arm) return 0.0;
  if (stage >= 2) {
    if (!rec.y1) return 0.0;
    if (a1 != regime.stage1_arm(rec.y0, *rec.y1)) return 0.0;
  }
  return 1.0 / regime_propensity(*ctx.fits, rec, regime, stage);
}

struct StageModel {
  std::shared_ptr<const StagePredictor> predictor;
  Scalar scale = 1.0;
  Scalar epsilon = 0.0;
};

Scalar eval_q3_star(const EvalContext& ctx, const StageModel& m, int a0, int a1,
                    const SubjectRecord& rec) {
  Matrix x(1, 10);
  x.row(0) = stage3_design_row(a0, a1, rec);
  const Scalar q = m.predictor->predict(x)[0];
  return augment(q, m.scale, m.epsilon, h_eval(ctx, 3, a0, a1, rec), ctx.clamp_delta);
}

Scalar eval_q2_star(const EvalContext& ctx, const StageModel& m, int a0, int a1,
                    const SubjectRecord& rec) {
  Matrix x(1, 8);
  x.row(0) = stage2_design_row(a0, a1, rec);
  const Scalar q = m.predictor->predict(x)[0];
  return augment(q, m.scale, m.epsilon, h_eval(ctx, 2, a0, a1, rec), ctx.clamp_delta);
}

Scalar eval_q1_star(const EvalContext& ctx, const StageModel& m, const SubjectRecord& rec) {
  Matrix x(1, 4);
  x.row(0) = stage1_design_row(ctx.regime->stage0_arm, rec);
  const Scalar q = m.predictor->predict(x)[0];
  // The stage-1 numerator is the forced assignment itself, so H is 1/(gA0 gC1).
  const Scalar h = 1.0 / regime_propensity(*ctx.fits, rec, *ctx.regime, 1);
  return augment(q, m.scale, m.epsilon, h, ctx.clamp_delta);
}

std::shared_ptr<const StagePredictor> fit_initial(const TmleConfig& config, int stage_no,
                                                  ConstMatrixRef x, ConstVectorRef y,
                                                  Index saturated_skip_cols) {
  switch (config.initial_fit) {
    case InitialFitKind::PoissonGlm: {
      GlmSpec spec;
      spec.family = GlmFamily::Poisson;
      return std::make_shared<GlmStagePredictor>(spec, fit_glm(spec, x, y));
    }
    case InitialFitKind::SuperLearner: {
      const SlLibrary lib = default_count_library(
          config.sl_folds, derive_seed(config.seed, static_cast<std::uint64_t>(stage_no)),
          config.include_hal);
      return std::make_shared<SlStagePredictor>(fit_superlearner(lib, x, y));
    }
    case InitialFitKind::SaturatedFollowers:
      return std::make_shared<SaturatedStagePredictor>(x, y, saturated_skip_cols);
  }
  throw std::logic_error("fit_initial: unknown kind");
}

}  // namespace

Scalar TmleFit::qtilde3_star(int a0, int a1, const SubjectRecord& rec) const {
  EvalContext ctx{&regime, propensity.get(), clamp_delta};
  StageModel m{stage[2].initial, stage[2].scale, stage[2].epsilon};
  return eval_q3_star(ctx, m, a0, a1, rec);
}

Scalar TmleFit::qtilde2_star(int a0, int a1, const SubjectRecord& rec) const {
  EvalContext ctx{&regime, propensity.get(), clamp_delta};
  StageModel m{stage[1].initial, stage[1].scale, stage[1].epsilon};
  return eval_q2_star(ctx, m, a0, a1, rec);
}

Scalar TmleFit::qbar1_star(const SubjectRecord& rec) const {
  EvalContext ctx{&regime, propensity.get(), clamp_delta};
  StageModel m{stage[0].initial, stage[0].scale, stage[0].epsilon};
  return eval_q1_star(ctx, m, rec);
}

Scalar TmleFit::qbar3_star(const SubjectRecord& rec) const {
  const int a1 = regime.stage1_arm(rec.y0, rec.y1.value_or(0));
  return static_cast<Scalar>(*rec.y1 + *rec.y2) + qtilde3_star(regime.stage0_arm, a1, rec);
}

Scalar TmleFit::qbar2_star(const SubjectRecord& rec) const {
  const int a1 = regime.stage1_arm(rec.y0, rec.y1.value_or(0));
  return static_cast<Scalar>(*rec.y1) + qtilde2_star(regime.stage0_arm, a1, rec);
}

TmleFit estimate_regime_mean(const TrialDataset& data, const Regime& regime,
                             const TmleConfig& config) {
  return estimate_regime_mean(data, regime, config,
                              std::make_shared<const PropensityFits>(
                                  fit_propensities(data, config.delta_g)));
}

TmleFit estimate_regime_mean(const TrialDataset& data, const Regime& regime,
                             const TmleConfig& config,
                             std::shared_ptr<const PropensityFits> propensity) {
  const Index n = data.n();
  if (n < config.min_n) {
    throw EstimationError("estimate_regime_mean: n below configured minimum");
  }

  TmleFit fit;
  fit.regime = regime;
  fit.propensity = std::move(propensity);
  fit.clamp_delta = config.clamp_delta;
  fit.n = n;

  const PropensityFits& prop = *fit.propensity;
  EvalContext ctx{&regime, &prop, config.clamp_delta};

  // Observed-data clever covariates, and the follower counts per stage.
  fit.h1.resize(n);
  fit.h2.resize(n);
  fit.h3.resize(n);
  Index followers1 = 0, followers2 = 0, followers3 = 0;
  for (Index i = 0; i < n; ++i) {
    fit.h1[i] = clever_covariate(prop, data[i], regime, 1);
    fit.h2[i] = clever_covariate(prop, data[i], regime, 2);
    fit.h3[i] = clever_covariate(prop, data[i], regime, 3);
    followers1 += fit.h1[i] > 0.0;
    followers2 += fit.h2[i] > 0.0;
    followers3 += fit.h3[i] > 0.0;
  }
  if (followers1 == 0) throw EstimationError("no uncensored regime followers at stage 1");
  if (followers2 == 0) throw EstimationError("no uncensored regime followers at stage 2");
  if (followers3 == 0) throw EstimationError("no uncensored regime followers at stage 3");

  for (Index i = 0; i < n; ++i) {
    for (int stage = 1; stage <= 3; ++stage) {
      const Scalar h = stage == 1 ? fit.h1[i] : stage == 2 ? fit.h2[i] : fit.h3[i];
      if (h <= 0.0) continue;
      fit.max_h = std::max(fit.max_h, h);
      fit.min_propensity = std::min(fit.min_propensity, 1.0 / h);
      // Count per-factor truncation events for the diagnostics block.
      const auto& rec = data[i];
      if (gA0_from_fits(prop, regime) < prop.delta_g) ++fit.truncation_count;
      if (stage >= 2 && estimate_gA1(prop, regime, rec.y0, *rec.y1) < prop.delta_g) {
        ++fit.truncation_count;
      }
      for (int visit = 1; visit <= stage; ++visit) {
        if (eval_gC(prop, visit, rec, regime) < prop.delta_g) ++fit.truncation_count;
      }
    }
  }

  // ---- Stage 3: initial regression of Y3 on arm history and covariates. ----
  std::vector<Index> rows3;
  for (Index i = 0; i < n; ++i) {
    const auto& r = data[i];
    const bool complete = r.c1 && r.c2 && r.c3;
    if (!complete) continue;
    if (config.initial_fit == InitialFitKind::SaturatedFollowers &&
        !(fit.h3[i] > 0.0)) {
      continue;
    }
    rows3.push_back(i);
  }
  Matrix x3(rows3.size(), 10);
  Vector y3(rows3.size());
  for (size_t k = 0; k < rows3.size(); ++k) {
    const auto& r = data[rows3[k]];
    x3.row(static_cast<Index>(k)) = stage3_design_row(r.a0, *r.a1, r);
    y3[static_cast<Index>(k)] = static_cast<Scalar>(*r.y3);
  }
  StageModel m3;
  m3.predictor = fit_initial(config, 3, x3, y3, 4);
  m3.scale = std::max(y3.size() > 0 ? y3.maxCoeff() : 0.0, 1.0);

  {
    // Fluctuation on the subset with H3 > 0; zero-H rows carry no
    // information about epsilon.
    std::vector<Index> frows;
    for (Index i = 0; i < n; ++i) {
      if (fit.h3[i] > 0.0) frows.push_back(i);
    }
    Vector ys(frows.size()), off(frows.size()), h(frows.size());
    for (size_t k = 0; k < frows.size(); ++k) {
      const auto& r = data[frows[k]];
      Matrix x(1, 10);
      x.row(0) = stage3_design_row(r.a0, *r.a1, r);
      const Scalar q = m3.predictor->predict(x)[0];
      const auto idx = static_cast<Index>(k);
      ys[idx] = static_cast<Scalar>(*r.y3) / m3.scale;
      off[idx] = logit(clamp_unit(q / m3.scale, config.clamp_delta));
      h[idx] = fit.h3[frows[k]];
    }
    const FluctuationResult f3 = fluctuate(ys, off, h);
    m3.epsilon = f3.epsilon;
    fit.stage[2] = {3, m3.predictor, m3.scale, f3.epsilon, f3.converged, f3.degenerate, 0.0};
  }

  // ---- Stage 2: stacked regression of Y2 + Q3* on arm history, L1-bar. ----
  const StageEvaluator q3_eval = [&](int a0, int a1, const SubjectRecord& rec) {
    return eval_q3_star(ctx, m3, a0, a1, rec);
  };
  const StackedDataset stacked2 = build_stacked_dataset(data, 2, q3_eval);
  std::vector<Index> rows2;
  for (Index r = 0; r < stacked2.design.rows(); ++r) {
    if (!stacked2.usable[static_cast<size_t>(r)]) continue;
    if (config.initial_fit == InitialFitKind::SaturatedFollowers) {
      const Index subj = stacked2.subject[static_cast<size_t>(r)];
      if (!(fit.h2[subj] > 0.0) || !stacked2.own_arm_match[static_cast<size_t>(r)]) continue;
    }
    rows2.push_back(r);
  }
  Matrix x2(rows2.size(), 8);
  Vector y2(rows2.size());
  for (size_t k = 0; k < rows2.size(); ++k) {
    x2.row(static_cast<Index>(k)) = stacked2.design.row(rows2[k]);
    y2[static_cast<Index>(k)] = stacked2.pseudo_outcome[rows2[k]];
  }
  StageModel m2;
  m2.predictor = fit_initial(config, 2, x2, y2, 4);

  Vector regime_pseudo2 = Vector::Zero(n);
  Scalar s2 = 1.0;
  for (Index i = 0; i < n; ++i) {
    const auto& r = data[i];
    if (!(r.c1 && r.c2)) continue;
    const int a1 = regime.stage1_arm(r.y0, *r.y1);
    regime_pseudo2[i] = static_cast<Scalar>(*r.y2) + q3_eval(regime.stage0_arm, a1, r);
    s2 = std::max(s2, regime_pseudo2[i]);
  }
  m2.scale = s2;

  {
    std::vector<Index> frows;
    for (Index i = 0; i < n; ++i) {
      if (fit.h2[i] > 0.0) frows.push_back(i);
    }
    Vector ys(frows.size()), off(frows.size()), h(frows.size());
    for (size_t k = 0; k < frows.size(); ++k) {
      const auto& r = data[frows[k]];
      const int a1 = regime.stage1_arm(r.y0, *r.y1);
      Matrix x(1, 8);
      x.row(0) = stage2_design_row(regime.stage0_arm, a1, r);
      const Scalar q = m2.predictor->predict(x)[0];
      const auto idx = static_cast<Index>(k);
      ys[idx] = regime_pseudo2[frows[k]] / m2.scale;
      off[idx] = logit(clamp_unit(q / m2.scale, config.clamp_delta));
      h[idx] = fit.h2[frows[k]];
    }
    const FluctuationResult f2 = fluctuate(ys, off, h);
    m2.epsilon = f2.epsilon;
    fit.stage[1] = {2, m2.predictor, m2.scale, f2.epsilon, f2.converged, f2.degenerate, 0.0};
  }

  // ---- Stage 1: stacked regression of Y1 + Q2* on A0, L0. ----
  const StageEvaluator q2_eval = [&](int a0, int a1, const SubjectRecord& rec) {
    return eval_q2_star(ctx, m2, a0, a1, rec);
  };
  const StackedDataset stacked1 = build_stacked_dataset(data, 1, q2_eval);
  std::vector<Index> rows1;
  const Index block = n;  // block b occupies rows [b*n, (b+1)*n)
  for (Index r = 0; r < stacked1.design.rows(); ++r) {
    if (!stacked1.usable[static_cast<size_t>(r)]) continue;
    if (config.initial_fit == InitialFitKind::SaturatedFollowers) {
      // NPMLE stage-1 cells condition on A0 and C1 only, with the integrand
      // evaluated at the regime-consistent stage-1 arm: keep exactly the
      // regime's own assignment block, restricted to own-arm subjects.
      const Index subj = stacked1.subject[static_cast<size_t>(r)];
      const auto b = static_cast<int>(r / block);
      int regime_block;
      switch (regime.label) {
        case Regime::Label::II: regime_block = 0; break;
        case Regime::Label::III: regime_block = 1; break;
        case Regime::Label::IIA: regime_block = 2; break;
        case Regime::Label::IIIA: regime_block = 3; break;
        default: regime_block = 4; break;
      }
      if (b != regime_block || data[subj].a0 != regime.stage0_arm) continue;
    }
    rows1.push_back(r);
  }
  Matrix x1(rows1.size(), 4);
  Vector y1(rows1.size());
  for (size_t k = 0; k < rows1.size(); ++k) {
    x1.row(static_cast<Index>(k)) = stacked1.design.row(rows1[k]);
    y1[static_cast<Index>(k)] = stacked1.pseudo_outcome[rows1[k]];
  }
  StageModel m1;
  m1.predictor = fit_initial(config, 1, x1, y1, 2);

  Vector regime_pseudo1 = Vector::Zero(n);
  Scalar s1 = 1.0;
  for (Index i = 0; i < n; ++i) {
    const auto& r = data[i];
    if (!r.c1) continue;
    const int a1 = regime.stage1_arm(r.y0, *r.y1);
    regime_pseudo1[i] = static_cast<Scalar>(*r.y1) + q2_eval(regime.stage0_arm, a1, r);
    s1 = std::max(s1, regime_pseudo1[i]);
  }
  m1.scale = s1;

  {
    std::vector<Index> frows;
    for (Index i = 0; i < n; ++i) {
      if (fit.h1[i] > 0.0) frows.push_back(i);
    }
    Vector ys(frows.size()), off(frows.size()), h(frows.size());
    for (size_t k = 0; k < frows.size(); ++k) {
      const auto& r = data[frows[k]];
      Matrix x(1, 4);
      x.row(0) = stage1_design_row(regime.stage0_arm, r);
      const Scalar q = m1.predictor->predict(x)[0];
      const auto idx = static_cast<Index>(k);
      ys[idx] = regime_pseudo1[frows[k]] / m1.scale;
      off[idx] = logit(clamp_unit(q / m1.scale, config.clamp_delta));
      h[idx] = fit.h1[frows[k]];
    }
    const FluctuationResult f1 = fluctuate(ys, off, h);
    m1.epsilon = f1.epsilon;
    fit.stage[0] = {1, m1.predictor, m1.scale, f1.epsilon, f1.converged, f1.degenerate, 0.0};
  }

  // ---- Plug-in over the empirical distribution of L0. ----
  fit.qbar1_values.resize(n);
  for (Index i = 0; i < n; ++i) {
    fit.qbar1_values[i] = eval_q1_star(ctx, m1, data[i]);
  }
  fit.psi = fit.qbar1_values.mean();

  // ---- Influence components and estimating-equation residuals. ----
  fit.d0.resize(n);
  fit.d1.resize(n);
  fit.d2.resize(n);
  fit.d3.resize(n);
  for (Index i = 0; i < n; ++i) {
    const auto& r = data[i];
    fit.d0[i] = fit.qbar1_values[i] - fit.psi;
    Scalar qbar2 = 0.0, qbar3 = 0.0;
    if (fit.h1[i] > 0.0 || fit.h2[i] > 0.0) {
      const int a1 = regime.stage1_arm(r.y0, *r.y1);
      qbar2 = static_cast<Scalar>(*r.y1) + eval_q2_star(ctx, m2, regime.stage0_arm, a1, r);
    }
    if (fit.h2[i] > 0.0 || fit.h3[i] > 0.0) {
      const int a1 = regime.stage1_arm(r.y0, *r.y1);
      qbar3 = static_cast<Scalar>(*r.y1 + *r.y2) +
              eval_q3_star(ctx, m3, regime.stage0_arm, a1, r);
    }
    fit.d1[i] = fit.h1[i] > 0.0 ? fit.h1[i] * (qbar2 - fit.qbar1_values[i]) : 0.0;
    fit.d2[i] = fit.h2[i] > 0.0 ? fit.h2[i] * (qbar3 - qbar2) : 0.0;
    fit.d3[i] = fit.h3[i] > 0.0 ? fit.h3[i] * (r.cumulative_outcome() - qbar3) : 0.0;
  }
  fit.stage[0].eq_residual = fit.d1.mean();
  fit.stage[1].eq_residual = fit.d2.mean();
  fit.stage[2].eq_residual = fit.d3.mean();

  for (const auto& s : fit.stage) {
    if (const auto* sat = dynamic_cast<const SaturatedStagePredictor*>(s.initial.get())) {
      fit.saturated_cell_misses += sat->misses();
    }
  }
  return fit;
}

Scalar complete_case_regime_mean(const TrialDataset& data, const Regime& regime) {
  Scalar total = 0.0;
  Index count = 0;
  for (const auto& r : data.records()) {
    if (!(r.c1 && r.c2 && r.c3)) continue;
    if (!follows_regime(r, regime, 1)) continue;
    total += r.cumulative_outcome();
    ++count;
  }
  if (count == 0) {
    throw EstimationError(std::string("complete_case_regime_mean: no complete-case followers of ") +
                          regime.name());
  }
  return total / static_cast<Scalar>(count);
}

}  // namespace smarttmle
