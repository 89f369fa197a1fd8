#include "smarttmle/glm.hpp"

#include "smarttmle/rng.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>

using namespace smarttmle;

namespace {

// Independent oracle: dense Newton-Raphson on the weighted log-likelihood
// with analytic gradient and Hessian. No working response, no step-halving;
// deliberately a different code path from the IRLS engine it checks.
Vector newton_glm(const Matrix& x, const Vector& y, const Vector& w, const Vector& off,
                  bool logistic) {
  Vector beta = Vector::Zero(x.cols());
  for (int it = 0; it < 200; ++it) {
    const Vector eta = x * beta + off;
    Vector mu(eta.size()), v(eta.size());
    for (Index i = 0; i < eta.size(); ++i) {
      if (logistic) {
        const Scalar m = 1.0 / (1.0 + std::exp(-eta[i]));
        mu[i] = m;
        v[i] = m * (1.0 - m);
      } else {
        const Scalar m = std::exp(eta[i]);
        mu[i] = m;
        v[i] = m;
      }
    }
    const Vector grad = x.transpose() * (w.array() * (y - mu).array()).matrix();
    const Matrix hess = x.transpose() * (w.array() * v.array()).matrix().asDiagonal() * x;
    const Vector step = hess.fullPivLu().solve(grad);
    beta += step;
    if (grad.lpNorm<Eigen::Infinity>() < 1e-13 && step.lpNorm<Eigen::Infinity>() < 1e-13) break;
  }
  return beta;
}

struct Fixture20 {
  Matrix x;        // 20 x 2, no intercept column
  Vector y_logit;  // binary response
  Vector y_count;  // count response
  Vector w;
  Vector offset;   // used by the Poisson case
};

Fixture20 fixture20() {
  const Scalar x1[] = {0.5, -1.2, 0.3, 2.1, -0.7, 1.5, -0.3, 0.8,  -1.8, 0.1,
                       1.1, -0.6, 0.9, -1.4, 2.3,  0.4, -0.9, 1.7, 0.2,  -2.0};
  const Scalar x2[] = {1.0,  0.2, -0.5, 0.7, -1.1, 0.4,  1.3, -0.8, 0.6,  -0.2,
                       -1.5, 1.9, 0.3,  0.8, -0.4, -1.0, 1.2, 0.5,  -0.6, 0.9};
  const Scalar yl[] = {1, 0, 1, 0, 0, 1, 0, 1, 1, 1, 1, 0, 1, 0, 1, 0, 0, 1, 1, 0};
  const Scalar yc[] = {2, 1, 0, 4, 3, 1, 0, 2, 5, 1, 2, 3, 0, 1, 2, 4, 1, 0, 3, 2};
  const Scalar wv[] = {1, 2, 1, 1.5, 1, 1, 2, 1, 1, 1, 1.5, 1, 1, 2, 1, 1, 1, 1, 2, 1};
  Fixture20 f;
  f.x.resize(20, 2);
  f.y_logit.resize(20);
  f.y_count.resize(20);
  f.w.resize(20);
  f.offset.resize(20);
  for (int i = 0; i < 20; ++i) {
    f.x(i, 0) = x1[i];
    f.x(i, 1) = x2[i];
    f.y_logit[i] = yl[i];
    f.y_count[i] = yc[i];
    f.w[i] = wv[i];
    f.offset[i] = 0.1 * x2[i];
  }
  return f;
}

Matrix with_ones(const Matrix& x) {
  Matrix out(x.rows(), x.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(x.cols()) = x;
  return out;
}

}  // namespace

TEST_CASE("logistic intercept-only: logit of the mean") {
  Matrix x(4, 0);
  Vector y(4);
  y << 1, 0, 1, 0;
  GlmSpec spec;
  spec.family = GlmFamily::Logistic;
  const GlmFit fit = fit_glm(spec, x, y);
  CHECK(fit.converged);
  CHECK(std::abs(fit.coefficients[0]) < 1e-10);
}

TEST_CASE("poisson intercept-only: log of the mean") {
  Matrix x(3, 0);
  Vector y(3);
  y << 1, 2, 3;
  GlmSpec spec;
  spec.family = GlmFamily::Poisson;
  const GlmFit fit = fit_glm(spec, x, y);
  CHECK(fit.converged);
  CHECK(fit.coefficients[0] == doctest::Approx(std::log(2.0)).epsilon(1e-10));
}

TEST_CASE("logistic fixture matches the Newton oracle and frozen values") {
  const Fixture20 f = fixture20();
  GlmSpec spec;
  spec.family = GlmFamily::Logistic;
  const GlmFit fit = fit_glm(spec, f.x, f.y_logit, f.w);
  REQUIRE(fit.converged);

  const Vector oracle =
      newton_glm(with_ones(f.x), f.y_logit, f.w, Vector::Zero(20), /*logistic=*/true);
  for (Index j = 0; j < 3; ++j) {
    CHECK(fit.coefficients[j] == doctest::Approx(oracle[j]).epsilon(1e-8));
  }
  // Frozen oracle values.
  CHECK(fit.coefficients[0] == doctest::Approx(0.108799131852122).epsilon(1e-8));
  CHECK(fit.coefficients[1] == doctest::Approx(0.791740758856574).epsilon(1e-8));
  CHECK(fit.coefficients[2] == doctest::Approx(-0.976945004896369).epsilon(1e-8));

  Matrix held(3, 2);
  held << 0.0, 0.5, 1.0, -0.5, -1.0, 1.5;
  const Vector pred = predict_glm(fit, spec, held);
  CHECK(pred[0] == doctest::Approx(0.406205678521326).epsilon(1e-8));
  CHECK(pred[1] == doctest::Approx(0.800434530538026).epsilon(1e-8));
  CHECK(pred[2] == doctest::Approx(0.104484655389811).epsilon(1e-8));
}

TEST_CASE("poisson fixture with weights and offset matches the oracle") {
  const Fixture20 f = fixture20();
  GlmSpec spec;
  spec.family = GlmFamily::Poisson;
  const GlmFit fit = fit_glm(spec, f.x, f.y_count, f.w, f.offset);
  REQUIRE(fit.converged);
  const Vector oracle = newton_glm(with_ones(f.x), f.y_count, f.w, f.offset, /*logistic=*/false);
  for (Index j = 0; j < 3; ++j) {
    CHECK(fit.coefficients[j] == doctest::Approx(oracle[j]).epsilon(1e-8));
  }
  CHECK(fit.coefficients[0] == doctest::Approx(0.616011253497926).epsilon(1e-8));
  CHECK(fit.coefficients[1] == doctest::Approx(-0.032569378382393).epsilon(1e-8));
  CHECK(fit.coefficients[2] == doctest::Approx(-0.301569493790981).epsilon(1e-8));
}

TEST_CASE("score vanishes at converged fits") {
  const Fixture20 f = fixture20();
  GlmSpec logistic;
  logistic.family = GlmFamily::Logistic;
  const GlmFit lf = fit_glm(logistic, f.x, f.y_logit, f.w);
  CHECK(glm_score(lf, logistic, f.x, f.y_logit, f.w).lpNorm<Eigen::Infinity>() <= 1e-6);

  GlmSpec poisson;
  poisson.family = GlmFamily::Poisson;
  const GlmFit pf = fit_glm(poisson, f.x, f.y_count, f.w, f.offset);
  CHECK(glm_score(pf, poisson, f.x, f.y_count, f.w, f.offset).lpNorm<Eigen::Infinity>() <= 1e-6);
}

TEST_CASE("known offset absorbs the signal at large n") {
  const Index n = 10000;
  Rng rng(314);
  Matrix x(n, 2);
  Vector y(n), offset(n);
  const Scalar b0 = -0.4, b1 = 0.9, b2 = -0.6;
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = rng.normal();
    const Scalar eta = b0 + b1 * x(i, 0) + b2 * x(i, 1);
    offset[i] = eta;
    y[i] = rng.bernoulli(expit(eta)) ? 1.0 : 0.0;
  }
  GlmSpec spec;
  spec.family = GlmFamily::Logistic;
  const GlmFit fit = fit_glm(spec, x, y, Vector(), offset);
  REQUIRE(fit.converged);
  CHECK(std::abs(fit.coefficients[1]) < 0.05);
  CHECK(std::abs(fit.coefficients[2]) < 0.05);
}

TEST_CASE("row permutation leaves coefficients unchanged") {
  const Fixture20 f = fixture20();
  GlmSpec spec;
  spec.family = GlmFamily::Poisson;
  const GlmFit fit = fit_glm(spec, f.x, f.y_count, f.w, f.offset);

  std::vector<Index> perm = {7, 3, 19, 0, 11, 15, 2, 9, 4, 18, 6, 13, 1, 16, 10, 5, 12, 8, 17, 14};
  Matrix xp(20, 2);
  Vector yp(20), wp(20), op(20);
  for (int i = 0; i < 20; ++i) {
    xp.row(i) = f.x.row(perm[static_cast<size_t>(i)]);
    yp[i] = f.y_count[perm[static_cast<size_t>(i)]];
    wp[i] = f.w[perm[static_cast<size_t>(i)]];
    op[i] = f.offset[perm[static_cast<size_t>(i)]];
  }
  const GlmFit fit_p = fit_glm(spec, xp, yp, wp, op);
  for (Index j = 0; j < 3; ++j) {
    CHECK(std::abs(fit.coefficients[j] - fit_p.coefficients[j]) <= 1e-12);
  }
}

TEST_CASE("fractional logistic responses are accepted") {
  Matrix x(6, 1);
  x << -1, -0.5, 0, 0.3, 0.8, 1.4;
  Vector y(6);
  y << 0.1, 0.35, 0.4, 0.65, 0.8, 0.93;
  GlmSpec spec;
  spec.family = GlmFamily::Logistic;
  const GlmFit fit = fit_glm(spec, x, y);
  REQUIRE(fit.converged);
  CHECK(glm_score(fit, spec, x, y).lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("negative binomial recovers overdispersion, roughly") {
  const Index n = 4000;
  Rng rng(99);
  Matrix x(n, 1);
  Vector y(n);
  const Scalar theta_true = 2.0;
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = rng.normal() * 0.5;
    const Scalar mu = std::exp(0.5 + 0.4 * x(i, 0));
    // Gamma(2, 1) mixture of Poissons gives NegBin with theta = 2.
    const Scalar g = -std::log(rng.uniform01()) - std::log(rng.uniform01());
    y[i] = static_cast<Scalar>(rng.poisson(g * mu / theta_true));
  }
  GlmSpec spec;
  spec.family = GlmFamily::NegativeBinomial;
  const GlmFit fit = fit_glm(spec, x, y);
  REQUIRE(fit.converged);
  CHECK(fit.theta > 1.2);
  CHECK(fit.theta < 3.2);
  CHECK(fit.coefficients[0] == doctest::Approx(0.5).epsilon(0.15));
  CHECK(fit.coefficients[1] == doctest::Approx(0.4).epsilon(0.25));
}

TEST_CASE("intercept-only family is the weighted mean") {
  Matrix x(4, 3);
  x.setRandom();
  Vector y(4), w(4);
  y << 1, 3, 5, 7;
  w << 1, 1, 1, 3;
  GlmSpec spec;
  spec.family = GlmFamily::InterceptOnly;
  const GlmFit fit = fit_glm(spec, x, y, w);
  CHECK(fit.coefficients[0] == doctest::Approx((1 + 3 + 5 + 21) / 6.0).epsilon(1e-12));
  const Vector pred = predict_glm(fit, spec, x);
  CHECK(pred[2] == doctest::Approx(fit.coefficients[0]).epsilon(1e-12));
}

TEST_CASE("separated logistic data reports non-convergence") {
  Matrix x(8, 1);
  x << -4, -3, -2, -1, 1, 2, 3, 4;
  Vector y(8);
  y << 0, 0, 0, 0, 1, 1, 1, 1;
  GlmSpec spec;
  spec.family = GlmFamily::Logistic;
  const GlmFit fit = fit_glm(spec, x, y);
  CHECK_FALSE(fit.converged);
  CHECK(fit.coefficients.allFinite());
}

TEST_CASE("duplicate column triggers the ridge fallback") {
  Matrix x(10, 2);
  for (int i = 0; i < 10; ++i) {
    x(i, 0) = 0.3 * i - 1.0;
    x(i, 1) = x(i, 0);
  }
  Vector y(10);
  y << 0, 1, 0, 1, 1, 0, 1, 1, 0, 1;
  GlmSpec spec;
  spec.family = GlmFamily::Logistic;
  const GlmFit fit = fit_glm(spec, x, y);
  CHECK(fit.ridged);
  CHECK(fit.coefficients.allFinite());
}

TEST_CASE("zero coefficients predict one half / exp coefficient") {
  GlmFit fit;
  fit.coefficients = Vector::Zero(3);
  GlmSpec spec;
  spec.family = GlmFamily::Logistic;
  Matrix x(5, 2);
  x.setRandom();
  const Vector p = predict_glm(fit, spec, x);
  for (Index i = 0; i < 5; ++i) CHECK(p[i] == doctest::Approx(0.5));

  GlmSpec pois;
  pois.family = GlmFamily::Poisson;
  GlmFit pfit;
  pfit.coefficients = Vector::Constant(1, std::log(2.0));
  Matrix ones(4, 0);
  const Vector mu = predict_glm(pfit, pois, ones);
  for (Index i = 0; i < 4; ++i) CHECK(mu[i] == doctest::Approx(2.0));
}
