#include "smarttmle/superlearner.hpp"

#include "smarttmle/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace smarttmle;

namespace {

SlLibrary glm_only_library(std::vector<GlmFamily> families, int folds, std::uint64_t seed) {
  SlLibrary lib;
  lib.folds = folds;
  lib.fold_seed = seed;
  for (const auto family : families) {
    GlmSpec spec;
    spec.family = family;
    const char* name = family == GlmFamily::InterceptOnly ? "intercept_only"
                       : family == GlmFamily::Poisson     ? "poisson"
                                                          : "negative_binomial";
    lib.candidates.push_back({name, spec});
  }
  return lib;
}

struct PoissonSim {
  Matrix x;
  Vector y;
};

PoissonSim simulate_poisson(Index n, std::uint64_t seed) {
  Rng rng(seed);
  PoissonSim s;
  s.x.resize(n, 2);
  s.y.resize(n);
  for (Index i = 0; i < n; ++i) {
    s.x(i, 0) = rng.normal() * 0.6;
    s.x(i, 1) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const Scalar mu = std::exp(0.3 + 0.5 * s.x(i, 0) - 0.4 * s.x(i, 1));
    s.y[i] = static_cast<Scalar>(rng.poisson(mu));
  }
  return s;
}

}  // namespace

TEST_CASE("make_folds sizes and determinism") {
  {
    const auto folds = make_folds(10, 5, 3);
    std::vector<int> counts(5, 0);
    for (int f : folds) ++counts[static_cast<size_t>(f)];
    for (int c : counts) CHECK(c == 2);
  }
  {
    const auto folds = make_folds(11, 5, 3);
    std::vector<int> counts(5, 0);
    for (int f : folds) ++counts[static_cast<size_t>(f)];
    std::sort(counts.begin(), counts.end());
    CHECK(counts[0] == 2);
    CHECK(counts[4] == 3);
  }
  CHECK(make_folds(100, 5, 17) == make_folds(100, 5, 17));
  CHECK(make_folds(100, 5, 17) != make_folds(100, 5, 18));
  CHECK_THROWS(make_folds(3, 5, 1));
}

TEST_CASE("single-candidate library gets weight one") {
  const PoissonSim s = simulate_poisson(60, 5);
  const SlLibrary lib = glm_only_library({GlmFamily::InterceptOnly}, 5, 11);
  const SlFit fit = fit_superlearner(lib, s.x, s.y);
  REQUIRE(fit.weights.size() == 1);
  CHECK(fit.weights[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("poisson-generated outcome concentrates weight on the poisson") {
  const PoissonSim s = simulate_poisson(5000, 42);
  const SlLibrary lib = glm_only_library({GlmFamily::InterceptOnly, GlmFamily::Poisson}, 5, 7);
  const SlFit fit = fit_superlearner(lib, s.x, s.y);
  CHECK(fit.weights[1] >= 0.8);
}

TEST_CASE("duplicate candidates split the single-copy weight") {
  const PoissonSim s = simulate_poisson(400, 9);
  const SlLibrary single = glm_only_library({GlmFamily::Poisson, GlmFamily::InterceptOnly}, 5, 13);
  SlLibrary doubled = glm_only_library(
      {GlmFamily::Poisson, GlmFamily::Poisson, GlmFamily::InterceptOnly}, 5, 13);
  const SlFit fit1 = fit_superlearner(single, s.x, s.y);
  const SlFit fit2 = fit_superlearner(doubled, s.x, s.y);
  CHECK(fit2.weights[0] + fit2.weights[1] == doctest::Approx(fit1.weights[0]).epsilon(1e-6));
  const Vector p1 = sl_predict(fit1, s.x);
  const Vector p2 = sl_predict(fit2, s.x);
  CHECK((p1 - p2).lpNorm<Eigen::Infinity>() <= 1e-6);
}

TEST_CASE("weights stay on the simplex and satisfy the oracle property") {
  for (const std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    const PoissonSim s = simulate_poisson(300, seed);
    const SlLibrary lib = glm_only_library(
        {GlmFamily::InterceptOnly, GlmFamily::Poisson, GlmFamily::NegativeBinomial}, 5, seed);
    const SlFit fit = fit_superlearner(lib, s.x, s.y);
    CHECK(fit.weights.minCoeff() >= 0.0);
    CHECK(fit.weights.sum() == doctest::Approx(1.0).epsilon(1e-10));
    Scalar best = std::numeric_limits<Scalar>::infinity();
    for (const auto& cf : fit.candidate_fits) {
      if (!cf.failed) best = std::min(best, cf.cv_risk);
    }
    CHECK(fit.ensemble_cv_risk <= best + 1e-8);
  }
}

TEST_CASE("identical inputs give identical weights") {
  const PoissonSim s = simulate_poisson(250, 21);
  const SlLibrary lib = glm_only_library(
      {GlmFamily::InterceptOnly, GlmFamily::Poisson, GlmFamily::NegativeBinomial}, 5, 33);
  const SlFit a = fit_superlearner(lib, s.x, s.y);
  const SlFit b = fit_superlearner(lib, s.x, s.y);
  CHECK((a.weights - b.weights).lpNorm<Eigen::Infinity>() <= 1e-10);
}

TEST_CASE("sl_predict is the weighted sum of candidate predictions") {
  const PoissonSim s = simulate_poisson(120, 77);
  const SlLibrary lib = glm_only_library({GlmFamily::InterceptOnly, GlmFamily::Poisson}, 5, 3);
  const SlFit fit = fit_superlearner(lib, s.x, s.y);

  GlmSpec io;
  io.family = GlmFamily::InterceptOnly;
  GlmSpec po;
  po.family = GlmFamily::Poisson;
  const Vector pred0 = predict_glm(std::get<GlmFit>(fit.candidate_fits[0].fit), io, s.x);
  const Vector pred1 = predict_glm(std::get<GlmFit>(fit.candidate_fits[1].fit), po, s.x);
  const Vector manual = fit.weights[0] * pred0 + fit.weights[1] * pred1;
  const Vector pred = sl_predict(fit, s.x);
  CHECK((pred - manual.cwiseMax(0.0)).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("a candidate that throws is excluded with weight zero") {
  const PoissonSim s = simulate_poisson(40, 15);
  SlLibrary lib = glm_only_library({GlmFamily::Poisson}, 5, 19);
  HalConfig impossible;
  impossible.cv_folds = 50;  // more folds than training rows
  lib.candidates.push_back({"hal", impossible});
  const SlFit fit = fit_superlearner(lib, s.x, s.y);
  CHECK(fit.candidate_fits[1].failed);
  CHECK(fit.weights[1] == 0.0);
  CHECK(fit.weights[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("simplex metalearner recovers known mixtures") {
  const Index n = 2000;
  Rng rng(4);
  Matrix z(n, 2);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    z(i, 0) = rng.normal();
    z(i, 1) = rng.normal();
    y[i] = 0.5 * z(i, 0) + 0.5 * z(i, 1) + 0.01 * rng.normal();
  }
  const Vector alpha = simplex_weights(z, y, Vector());
  CHECK(alpha[0] == doctest::Approx(0.5).epsilon(0.05));
  CHECK(alpha.sum() == doctest::Approx(1.0).epsilon(1e-10));

  // When one column is the outcome itself, it takes all the weight.
  Matrix z2(n, 2);
  z2.col(0) = y;
  for (Index i = 0; i < n; ++i) z2(i, 1) = rng.normal();
  const Vector alpha2 = simplex_weights(z2, y, Vector());
  CHECK(alpha2[0] >= 0.999);
}

TEST_CASE("default count library lists the four candidates") {
  const SlLibrary lib = default_count_library(5, 1);
  REQUIRE(lib.candidates.size() == 4);
  CHECK(lib.candidates[0].name == "intercept_only");
  CHECK(lib.candidates[1].name == "poisson");
  CHECK(lib.candidates[2].name == "negative_binomial");
  CHECK(lib.candidates[3].name == "hal");
  const SlLibrary no_hal = default_count_library(5, 1, /*include_hal=*/false);
  CHECK(no_hal.candidates.size() == 3);
}
