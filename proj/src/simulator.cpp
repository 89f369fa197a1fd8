#include "smarttmle/simulator.hpp"

#include "smarttmle/inference.hpp"
#include "smarttmle/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <thread>

namespace smarttmle {

namespace {

Scalar arm_effect(const SimParams& p, int arm) {
  switch (arm) {
    case 1: return p.gamma1;
    case 2: return p.gamma2;
    case 3: return p.gamma3;
    default: return 0.0;
  }
}

struct LatentSubject {
  Scalar w0;
  int y0, a0, y1, a1, y2, y3;
  Scalar w1, w2;
};

// The outcome process keeps evolving regardless of measurement; censoring in
// the observed record only masks it.
LatentSubject draw_latent(const SimParams& p, Rng& rng) {
  LatentSubject s;
  s.w0 = rng.bernoulli(0.5) ? 1.0 : 0.0;
  s.y0 = rng.poisson(std::exp(p.gamma0));
  s.a0 = rng.uniform_int(0, 2);

  const Scalar base_w = p.gamma_w * s.w0;
  s.y1 = rng.poisson(std::max(static_cast<Scalar>(s.y0), 0.2) *
                     std::exp(arm_effect(p, s.a0) + base_w));
  s.w1 = rng.normal();

  if (s.a0 != 0 && step_up_eligible(s.y0, s.y1)) {
    s.a1 = rng.bernoulli(p.step_up_prob) ? 3 : s.a0;
  } else {
    s.a1 = s.a0;
  }

  s.y2 = rng.poisson(std::max(static_cast<Scalar>(s.y1), 0.2) *
                     std::exp(arm_effect(p, s.a1) + base_w));
  s.w2 = rng.normal();
  s.y3 = rng.poisson(std::max(static_cast<Scalar>(s.y2), 0.2) *
                     std::exp(arm_effect(p, s.a1) + base_w));
  return s;
}

}  // namespace

TrialDataset simulate_trial(const SimParams& params, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SubjectRecord> records;
  records.reserve(static_cast<size_t>(params.n));
  for (Index i = 0; i < params.n; ++i) {
    const LatentSubject s = draw_latent(params, rng);

    SubjectRecord r;
    r.id = "s" + std::to_string(i + 1);
    r.w0 = s.w0;
    r.y0 = s.y0;
    r.a0 = s.a0;

    // Monotone measurement: visit t is attempted only if t-1 was attended.
    const auto miss_prob = [&](int y_prev) {
      return expit(params.alpha0 + params.alpha_w * s.w0 +
                   params.alpha_y * static_cast<Scalar>(y_prev));
    };
    r.c1 = !rng.bernoulli(miss_prob(s.y0));
    if (r.c1) {
      r.w1 = s.w1;
      r.y1 = s.y1;
      r.a1 = s.a1;
      r.c2 = !rng.bernoulli(miss_prob(s.y1));
    }
    if (r.c2) {
      r.w2 = s.w2;
      r.y2 = s.y2;
      r.c3 = !rng.bernoulli(miss_prob(s.y2));
    }
    if (r.c3) r.y3 = s.y3;
    records.push_back(std::move(r));
  }
  return TrialDataset(std::move(records));
}

McTruth true_regime_mean_mc(const SimParams& params, const Regime& regime, Index n_mc,
                            std::uint64_t seed) {
  Rng rng(seed);
  Scalar sum = 0.0, sum_sq = 0.0;
  const Scalar base = std::exp(params.gamma0);
  for (Index i = 0; i < n_mc; ++i) {
    const Scalar w0 = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const int y0 = rng.poisson(base);
    const Scalar base_w = params.gamma_w * w0;
    const int a0 = regime.stage0_arm;
    const int y1 = rng.poisson(std::max(static_cast<Scalar>(y0), 0.2) *
                               std::exp(arm_effect(params, a0) + base_w));
    const int a1 = regime.stage1_arm(y0, y1);
    const int y2 = rng.poisson(std::max(static_cast<Scalar>(y1), 0.2) *
                               std::exp(arm_effect(params, a1) + base_w));
    const int y3 = rng.poisson(std::max(static_cast<Scalar>(y2), 0.2) *
                               std::exp(arm_effect(params, a1) + base_w));
    const Scalar y = static_cast<Scalar>(y1 + y2 + y3);
    sum += y;
    sum_sq += y * y;
  }
  McTruth out;
  const auto n = static_cast<Scalar>(n_mc);
  out.mean = sum / n;
  out.mc_se = std::sqrt(std::max(sum_sq / n - out.mean * out.mean, 0.0) / n);
  return out;
}

Contrast make_contrast(Regime::Label first, Regime::Label second) {
  Contrast c;
  c.first = first;
  c.second = second;
  c.label = std::string(Regime::from_label(first).name()) + "-" +
            Regime::from_label(second).name();
  return c;
}

std::vector<Contrast> standard_contrasts() {
  using L = Regime::Label;
  return {make_contrast(L::II, L::I),   make_contrast(L::III, L::I),
          make_contrast(L::IIA, L::I),  make_contrast(L::IIIA, L::I),
          make_contrast(L::II, L::IIA), make_contrast(L::III, L::IIIA)};
}

namespace {

struct RepOutcome {
  std::vector<char> computed;  // per contrast
  std::vector<char> rejected;
  std::vector<Scalar> estimate;
};

void parallel_for(Index count, int threads, const std::function<void(Index)>& body) {
  int hw = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  hw = std::max(1, std::min<int>(hw, static_cast<int>(count)));
  if (hw == 1) {
    for (Index i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<Index> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(hw));
  for (int t = 0; t < hw; ++t) {
    pool.emplace_back([&]() {
      while (true) {
        const Index i = next.fetch_add(1);
        if (i >= count) break;
        body(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

std::vector<PowerCell> run_power_study(const std::vector<SimParams>& grid,
                                       const std::vector<Contrast>& contrasts,
                                       const PowerStudyConfig& config) {
  std::vector<PowerCell> cells;
  const auto n_contrasts = contrasts.size();

  for (size_t cell_idx = 0; cell_idx < grid.size(); ++cell_idx) {
    const SimParams& params = grid[cell_idx];

    // Which regimes this cell needs, in a fixed order.
    std::vector<Regime::Label> labels;
    for (const auto& c : contrasts) {
      for (const auto l : {c.first, c.second}) {
        if (std::find(labels.begin(), labels.end(), l) == labels.end()) labels.push_back(l);
      }
    }

    std::vector<Scalar> truths(labels.size());
    for (size_t k = 0; k < labels.size(); ++k) {
      truths[k] = true_regime_mean_mc(params, Regime::from_label(labels[k]), config.truth_mc_n,
                                      derive_seed(config.master_seed, cell_idx, 1000000 + k))
                      .mean;
    }
    auto truth_of = [&](Regime::Label l) {
      for (size_t k = 0; k < labels.size(); ++k) {
        if (labels[k] == l) return truths[k];
      }
      return 0.0;
    };

    std::vector<RepOutcome> outcomes(static_cast<size_t>(config.reps));
    parallel_for(config.reps, config.threads, [&](Index rep) {
      auto& out = outcomes[static_cast<size_t>(rep)];
      out.computed.assign(n_contrasts, 0);
      out.rejected.assign(n_contrasts, 0);
      out.estimate.assign(n_contrasts, 0.0);

      const std::uint64_t rep_seed =
          derive_seed(config.master_seed, cell_idx, static_cast<std::uint64_t>(rep));
      const TrialDataset data = simulate_trial(params, rep_seed);

      std::shared_ptr<const PropensityFits> prop;
      try {
        prop = std::make_shared<const PropensityFits>(
            fit_propensities(data, config.estimator.delta_g));
      } catch (const std::exception&) {
        return;  // all contrasts fail for this replication
      }

      std::vector<std::optional<TmleFit>> fits(labels.size());
      for (size_t k = 0; k < labels.size(); ++k) {
        try {
          fits[k] = estimate_regime_mean(data, Regime::from_label(labels[k]), config.estimator,
                                         prop);
        } catch (const std::exception&) {
          fits[k] = std::nullopt;
        }
      }
      auto fit_of = [&](Regime::Label l) -> const std::optional<TmleFit>& {
        for (size_t k = 0; k < labels.size(); ++k) {
          if (labels[k] == l) return fits[k];
        }
        throw std::logic_error("unreached");
      };

      for (size_t c = 0; c < n_contrasts; ++c) {
        const auto& f1 = fit_of(contrasts[c].first);
        const auto& f2 = fit_of(contrasts[c].second);
        if (!f1 || !f2) continue;
        try {
          const ContrastResult res = contrast_test(*f1, *f2, config.alpha);
          out.computed[c] = 1;
          out.rejected[c] = res.reject ? 1 : 0;
          out.estimate[c] = res.estimate;
        } catch (const std::exception&) {
        }
      }
    });

    for (size_t c = 0; c < n_contrasts; ++c) {
      PowerCell cell;
      cell.params = params;
      cell.contrast = contrasts[c];
      cell.true_effect = truth_of(contrasts[c].first) - truth_of(contrasts[c].second);
      cell.reps = config.reps;
      Scalar est_sum = 0.0;
      int ok = 0;
      for (const auto& out : outcomes) {
        if (!out.computed[c]) continue;
        ++ok;
        cell.rejections += out.rejected[c];
        est_sum += out.estimate[c];
      }
      cell.failures = config.reps - ok;
      cell.power = ok > 0 ? static_cast<Scalar>(cell.rejections) / ok : 0.0;
      cell.mc_se = ok > 0 ? std::sqrt(cell.power * (1.0 - cell.power) / ok) : 0.0;
      cell.mean_estimate = ok > 0 ? est_sum / ok : 0.0;
      cell.flagged = cell.failures > 0.02 * config.reps;
      cells.push_back(cell);
    }
  }
  return cells;
}

const char* const kPowerCsvHeader =
    "gamma1,gamma2,gamma3,alpha0,n,contrast,true_effect,reps,rejections,power,mc_se,failures";

std::string power_cell_csv_row(const PowerCell& cell) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%lld,%s,%.17g,%d,%d,%.17g,%.17g,%d",
                cell.params.gamma1, cell.params.gamma2, cell.params.gamma3, cell.params.alpha0,
                static_cast<long long>(cell.params.n), cell.contrast.label.c_str(),
                cell.true_effect, cell.reps, cell.rejections, cell.power, cell.mc_se,
                cell.failures);
  return buf;
}

}  // namespace smarttmle
