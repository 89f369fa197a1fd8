#pragma once

#include "smarttmle/tmle.hpp"
#include "smarttmle/trial_data.hpp"
#include "smarttmle/types.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace smarttmle {

/// Data-generating process parameters. gamma's are log rate ratios on the
/// conditional outcome mean; alpha0 is the per-visit missingness logit.
/// alpha_w / alpha_y extend the missingness model with W0 and the last
/// simulated outcome for the informative-missingness variant (both zero
/// reproduces the covariate-independent process).
struct SimParams {
  Index n = 250;
  Scalar gamma0 = std::log(1.5);
  Scalar gamma1 = 0.0;  // text
  Scalar gamma2 = 0.0;  // webapp
  Scalar gamma3 = 0.0;  // eCoaching
  Scalar gamma_w = 0.0;
  Scalar alpha0 = -4.06;
  Scalar alpha_w = 0.0;
  Scalar alpha_y = 0.0;
  Scalar step_up_prob = 0.5;
  std::uint64_t seed = 0;
};

/// One simulated trial; deterministic given (params, seed). Missingness is
/// monotone: the first missed visit censors everything after it. Outcomes
/// keep evolving underneath censoring; only measurement stops.
TrialDataset simulate_trial(const SimParams& params, std::uint64_t seed);

struct McTruth {
  Scalar mean = 0.0;
  Scalar mc_se = 0.0;
};

/// Counterfactual mean of Y1+Y2+Y3 under the regime's intervention: arms
/// assigned per policy (eligible subjects step up deterministically under
/// rule d), attendance enforced.
McTruth true_regime_mean_mc(const SimParams& params, const Regime& regime, Index n_mc,
                            std::uint64_t seed);

struct Contrast {
  Regime::Label first;
  Regime::Label second;
  std::string label;  // e.g. "II-I"
};

/// The six pairwise comparisons of the primary and secondary questions.
std::vector<Contrast> standard_contrasts();
Contrast make_contrast(Regime::Label first, Regime::Label second);

struct PowerCell {
  SimParams params;
  Contrast contrast;
  Scalar true_effect = 0.0;
  int reps = 0;
  int rejections = 0;
  Scalar power = 0.0;
  Scalar mc_se = 0.0;
  int failures = 0;
  bool flagged = false;  // > 2% replication failures
  Scalar mean_estimate = 0.0;
};

struct PowerStudyConfig {
  int reps = 500;
  Scalar alpha = 0.05;
  Index truth_mc_n = 200000;
  std::uint64_t master_seed = 1;
  TmleConfig estimator;
  int threads = 0;  // 0 = hardware concurrency
};

/// Replications are seeded independently from the master seed, so results
/// are reproducible regardless of execution order or thread count.
std::vector<PowerCell> run_power_study(const std::vector<SimParams>& grid,
                                       const std::vector<Contrast>& contrasts,
                                       const PowerStudyConfig& config);

extern const char* const kPowerCsvHeader;
std::string power_cell_csv_row(const PowerCell& cell);

}  // namespace smarttmle
