#include "smarttmle/superlearner.hpp"

#include "smarttmle/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace smarttmle {

std::vector<int> make_folds(Index n, int k, std::uint64_t seed) {
  if (n < k) throw std::invalid_argument("make_folds: n < k");
  if (k < 2) throw std::invalid_argument("make_folds: need at least 2 folds");
  std::vector<Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 engine(seed);
  // Fisher-Yates with explicit draws; keeps the assignment reproducible.
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(engine() % static_cast<std::uint64_t>(i + 1));
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  std::vector<int> fold(static_cast<size_t>(n));
  for (Index pos = 0; pos < n; ++pos) {
    fold[static_cast<size_t>(order[static_cast<size_t>(pos)])] = static_cast<int>(pos % k);
  }
  return fold;
}

SlLibrary default_count_library(int folds, std::uint64_t fold_seed, bool include_hal) {
  SlLibrary lib;
  lib.folds = folds;
  lib.fold_seed = fold_seed;
  GlmSpec intercept_only;
  intercept_only.family = GlmFamily::InterceptOnly;
  lib.candidates.push_back({"intercept_only", intercept_only});
  GlmSpec poisson;
  poisson.family = GlmFamily::Poisson;
  lib.candidates.push_back({"poisson", poisson});
  GlmSpec negbin;
  negbin.family = GlmFamily::NegativeBinomial;
  lib.candidates.push_back({"negative_binomial", negbin});
  if (include_hal) {
    HalConfig hal;
    hal.fold_seed = derive_seed(fold_seed, 0x4841ULL);
    lib.candidates.push_back({"hal", hal});
  }
  return lib;
}

namespace {

Vector project_simplex(Vector v) {
  const Index m = v.size();
  std::vector<Scalar> u(v.data(), v.data() + m);
  std::sort(u.begin(), u.end(), std::greater<Scalar>());
  Scalar cssv = 0.0;
  Scalar tau = 0.0;
  int rho = 0;
  for (Index j = 0; j < m; ++j) {
    cssv += u[static_cast<size_t>(j)];
    const Scalar t = (cssv - 1.0) / static_cast<Scalar>(j + 1);
    if (u[static_cast<size_t>(j)] - t > 0.0) {
      rho = static_cast<int>(j + 1);
      tau = t;
    }
  }
  (void)rho;
  for (Index j = 0; j < m; ++j) v[j] = std::max(v[j] - tau, 0.0);
  return v;
}

struct CandidateModel {
  std::variant<GlmFit, HalFit> fit;
  Vector predict(const SlCandidate& cand, ConstMatrixRef x) const {
    if (std::holds_alternative<GlmFit>(fit)) {
      return predict_glm(std::get<GlmFit>(fit), std::get<GlmSpec>(cand.spec), x);
    }
    return hal_predict(std::get<HalFit>(fit), x);
  }
};

CandidateModel fit_candidate(const SlCandidate& cand, ConstMatrixRef x, ConstVectorRef y,
                             ConstVectorRef w) {
  CandidateModel model;
  if (std::holds_alternative<GlmSpec>(cand.spec)) {
    model.fit = fit_glm(std::get<GlmSpec>(cand.spec), x, y, w);
  } else {
    model.fit = fit_hal(x, y, w, std::get<HalConfig>(cand.spec));
  }
  return model;
}

}  // namespace

Vector simplex_weights(ConstMatrixRef z, ConstVectorRef y, ConstVectorRef weights, Scalar tol,
                       int max_iterations) {
  const Index n = z.rows();
  const Index m = z.cols();
  const Vector w = weights.size() == 0 ? Vector::Ones(n) : Vector(weights);
  const Scalar wsum = w.sum();

  Vector alpha = Vector::Constant(m, 1.0 / static_cast<Scalar>(m));
  if (m == 1) return alpha;

  const Matrix ztwz = z.transpose() * w.asDiagonal() * z / wsum;
  Eigen::SelfAdjointEigenSolver<Matrix> es(ztwz);
  const Scalar lipschitz = 2.0 * std::max(es.eigenvalues().maxCoeff(), 1e-12);
  const Scalar eta = 1.0 / lipschitz;

  for (int iter = 0; iter < max_iterations; ++iter) {
    const Vector residual = y - z * alpha;
    const Vector grad = -2.0 * (z.transpose() * (w.array() * residual.array()).matrix()) / wsum;
    const Vector mapping = alpha - project_simplex(alpha - grad);
    if (mapping.cwiseAbs().maxCoeff() <= tol) break;
    // Exponentiated-gradient step; multiplicative updates stay on the simplex.
    Vector next = alpha.array() * (-eta * (grad.array() - grad.minCoeff())).exp();
    const Scalar total = next.sum();
    if (!(total > 0.0) || !next.allFinite()) break;
    alpha = next / total;
  }
  return alpha;
}

SlFit fit_superlearner(const SlLibrary& library, ConstMatrixRef x, ConstVectorRef y,
                       ConstVectorRef weights) {
  const Index n = x.rows();
  const auto m = static_cast<Index>(library.candidates.size());
  if (m == 0) throw std::invalid_argument("fit_superlearner: empty library");
  if (n < library.folds) throw std::invalid_argument("fit_superlearner: n smaller than fold count");
  const Vector w = weights.size() == 0 ? Vector::Ones(n) : Vector(weights);
  const Scalar wsum = w.sum();

  const std::vector<int> folds = make_folds(n, library.folds, library.fold_seed);

  Matrix z = Matrix::Zero(n, m);
  std::vector<bool> failed(static_cast<size_t>(m), false);
  for (int f = 0; f < library.folds; ++f) {
    std::vector<Index> train, test;
    for (Index i = 0; i < n; ++i) {
      (folds[static_cast<size_t>(i)] == f ? test : train).push_back(i);
    }
    Matrix x_train(train.size(), x.cols()), x_test(test.size(), x.cols());
    Vector y_train(train.size()), w_train(train.size());
    for (size_t i = 0; i < train.size(); ++i) {
      x_train.row(static_cast<Index>(i)) = x.row(train[i]);
      y_train[static_cast<Index>(i)] = y[train[i]];
      w_train[static_cast<Index>(i)] = w[train[i]];
    }
    for (size_t i = 0; i < test.size(); ++i) x_test.row(static_cast<Index>(i)) = x.row(test[i]);

    for (Index c = 0; c < m; ++c) {
      if (failed[static_cast<size_t>(c)]) continue;
      try {
        const CandidateModel model =
            fit_candidate(library.candidates[static_cast<size_t>(c)], x_train, y_train, w_train);
        Vector pred = model.predict(library.candidates[static_cast<size_t>(c)], x_test);
        if (!pred.allFinite()) {
          failed[static_cast<size_t>(c)] = true;
          continue;
        }
        pred = pred.cwiseMax(0.0);
        for (size_t i = 0; i < test.size(); ++i) z(test[i], c) = pred[static_cast<Index>(i)];
      } catch (const std::exception&) {
        failed[static_cast<size_t>(c)] = true;
      }
    }
  }

  std::vector<Index> ok;
  for (Index c = 0; c < m; ++c) {
    if (!failed[static_cast<size_t>(c)]) ok.push_back(c);
  }
  if (ok.empty()) throw std::runtime_error("fit_superlearner: every candidate failed");

  Matrix z_ok(n, static_cast<Index>(ok.size()));
  for (size_t k = 0; k < ok.size(); ++k) z_ok.col(static_cast<Index>(k)) = z.col(ok[k]);
  const Vector alpha_ok = simplex_weights(z_ok, y, w);

  SlFit fit;
  fit.library = library.candidates;
  fit.weights = Vector::Zero(m);
  for (size_t k = 0; k < ok.size(); ++k) fit.weights[ok[k]] = alpha_ok[static_cast<Index>(k)];

  const Vector ensemble = z_ok * alpha_ok;
  fit.ensemble_cv_risk = (w.array() * (y - ensemble).array().square()).sum() / wsum;

  fit.candidate_fits.resize(static_cast<size_t>(m));
  for (Index c = 0; c < m; ++c) {
    auto& cf = fit.candidate_fits[static_cast<size_t>(c)];
    cf.name = library.candidates[static_cast<size_t>(c)].name;
    cf.failed = failed[static_cast<size_t>(c)];
    if (cf.failed) {
      cf.cv_risk = std::numeric_limits<Scalar>::infinity();
      continue;
    }
    cf.cv_risk = (w.array() * (y - z.col(c)).array().square()).sum() / wsum;
    cf.fit = fit_candidate(library.candidates[static_cast<size_t>(c)], x, y, w).fit;
  }
  return fit;
}

Vector sl_predict(const SlFit& fit, ConstMatrixRef x_new) {
  Vector out = Vector::Zero(x_new.rows());
  for (size_t c = 0; c < fit.candidate_fits.size(); ++c) {
    const auto& cf = fit.candidate_fits[c];
    const Scalar weight = fit.weights[static_cast<Index>(c)];
    if (cf.failed || weight == 0.0) continue;
    CandidateModel model{cf.fit};
    Vector pred = model.predict(fit.library[c], x_new).cwiseMax(0.0);
    out += weight * pred;
  }
  if (fit.clip_nonnegative) out = out.cwiseMax(0.0);
  return out;
}

}  // namespace smarttmle
