#include "smarttmle/hal.hpp"

#include "smarttmle/superlearner.hpp"  // make_folds

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace smarttmle {

namespace {

// Nonempty variable subsets up to max_degree, in order of increasing size
// then lexicographic; the order is part of the deterministic column identity.
void enumerate_subsets(int p, int max_degree, std::vector<std::vector<int>>& out) {
  std::vector<int> current;
  std::function<void(int, int)> fixed = [&](int start, int need) {
    if (need == 0) {
      out.push_back(current);
      return;
    }
    for (int v = start; v <= p - need; ++v) {
      current.push_back(v);
      fixed(v + 1, need - 1);
      current.pop_back();
    }
  };
  for (int size = 1; size <= max_degree; ++size) fixed(0, size);
}

}  // namespace

HalBasis hal_basis(ConstMatrixRef x, const HalConfig& config) {
  const Index n = x.rows();
  const int p = static_cast<int>(x.cols());
  if (p < 1) throw std::invalid_argument("hal_basis: need at least one column");

  std::vector<std::vector<int>> subsets;
  enumerate_subsets(p, std::min(config.max_degree, p), subsets);

  std::vector<Vector> columns;
  std::vector<HalBasisFunction> descriptors;
  std::unordered_map<std::string, int> seen;  // binary pattern -> index

  Vector col(n);
  std::string key(static_cast<size_t>(n), '0');
  for (const auto& subset : subsets) {
    for (Index j = 0; j < n; ++j) {
      bool all_ones = true;
      for (Index i = 0; i < n; ++i) {
        bool on = true;
        for (int v : subset) {
          if (x(i, v) < x(j, v)) {
            on = false;
            break;
          }
        }
        col[i] = on ? 1.0 : 0.0;
        key[static_cast<size_t>(i)] = on ? '1' : '0';
        all_ones = all_ones && on;
      }
      if (all_ones) continue;  // duplicate of the intercept
      if (seen.emplace(key, static_cast<int>(columns.size())).second) {
        columns.push_back(col);
        HalBasisFunction f;
        f.vars = subset;
        f.knots.reserve(subset.size());
        for (int v : subset) f.knots.push_back(x(j, v));
        descriptors.push_back(std::move(f));
      }
    }
  }

  HalBasis basis;
  const Index m = static_cast<Index>(columns.size());
  std::vector<Index> order(static_cast<size_t>(m));
  std::iota(order.begin(), order.end(), Index{0});
  if (m > config.basis_cap) {
    basis.truncated = true;
    std::vector<Scalar> variance(static_cast<size_t>(m));
    for (Index j = 0; j < m; ++j) {
      const Scalar mean = columns[static_cast<size_t>(j)].mean();
      variance[static_cast<size_t>(j)] = mean * (1.0 - mean);
    }
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
      return variance[static_cast<size_t>(a)] > variance[static_cast<size_t>(b)];
    });
    order.resize(static_cast<size_t>(config.basis_cap));
    std::sort(order.begin(), order.end());  // keep original column order
  }

  basis.columns.resize(n, static_cast<Index>(order.size()));
  basis.descriptors.reserve(order.size());
  for (size_t k = 0; k < order.size(); ++k) {
    basis.columns.col(static_cast<Index>(k)) = columns[static_cast<size_t>(order[k])];
    basis.descriptors.push_back(descriptors[static_cast<size_t>(order[k])]);
  }
  return basis;
}

void coordinate_descent_lasso(ConstMatrixRef x_std, ConstVectorRef y, ConstVectorRef weights,
                              Scalar lambda, Scalar tolerance, int max_passes, Scalar& intercept,
                              Vector& beta) {
  const Index n = x_std.rows();
  const Index m = x_std.cols();
  const Vector w = weights.size() == 0 ? Vector::Ones(n) : Vector(weights);
  const Scalar wsum = w.sum();
  if (beta.size() != m) beta = Vector::Zero(m);

  Vector col_sq(m);
  for (Index j = 0; j < m; ++j) {
    col_sq[j] = (w.array() * x_std.col(j).array().square()).sum() / wsum;
  }

  Vector r = y - x_std * beta;
  intercept = (w.array() * r.array()).sum() / wsum;
  r.array() -= intercept;

  auto soft = [](Scalar v, Scalar t) {
    if (v > t) return v - t;
    if (v < -t) return v + t;
    return 0.0;
  };

  auto sweep = [&](const std::vector<Index>& js) {
    Scalar max_change = 0.0;
    for (Index j : js) {
      if (col_sq[j] <= 0.0) continue;
      const Scalar rho =
          (w.array() * x_std.col(j).array() * r.array()).sum() / wsum + col_sq[j] * beta[j];
      const Scalar bj = soft(rho, lambda) / col_sq[j];
      const Scalar diff = bj - beta[j];
      if (diff != 0.0) {
        r -= diff * x_std.col(j);
        beta[j] = bj;
        max_change = std::max(max_change, std::abs(diff));
      }
    }
    const Scalar b0_shift = (w.array() * r.array()).sum() / wsum;
    if (b0_shift != 0.0) {
      intercept += b0_shift;
      r.array() -= b0_shift;
      max_change = std::max(max_change, std::abs(b0_shift));
    }
    return max_change;
  };

  std::vector<Index> all(static_cast<size_t>(m));
  std::iota(all.begin(), all.end(), Index{0});

  int pass = 0;
  while (pass < max_passes) {
    ++pass;
    sweep(all);
    std::vector<Index> active;
    for (Index j = 0; j < m; ++j) {
      if (beta[j] != 0.0) active.push_back(j);
    }
    // Inner cycles over the active set until stable, then re-check all.
    while (pass < max_passes) {
      ++pass;
      if (sweep(active) <= tolerance) break;
    }
    Scalar full_change = sweep(all);
    ++pass;
    if (full_change <= tolerance) break;
  }
}

namespace {

struct Standardization {
  Vector mean;
  Vector sd;
};

Standardization standardize(ConstMatrixRef x, ConstVectorRef w, Matrix& out) {
  const Scalar wsum = w.sum();
  Standardization s;
  s.mean.resize(x.cols());
  s.sd.resize(x.cols());
  out.resize(x.rows(), x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    const Scalar m = (w.array() * x.col(j).array()).sum() / wsum;
    const Scalar var = (w.array() * (x.col(j).array() - m).square()).sum() / wsum;
    const Scalar sd = std::sqrt(std::max(var, 0.0));
    s.mean[j] = m;
    s.sd[j] = sd;
    if (sd > 1e-12) {
      out.col(j) = (x.col(j).array() - m) / sd;
    } else {
      out.col(j).setZero();  // degenerate column carries no signal
    }
  }
  return s;
}

}  // namespace

HalFit fit_hal(ConstMatrixRef x, ConstVectorRef y, ConstVectorRef weights,
               const HalConfig& config) {
  const Index n = x.rows();
  if (n != y.size()) throw std::invalid_argument("fit_hal: dimension mismatch");
  if (n < config.cv_folds) throw std::invalid_argument("fit_hal: n smaller than CV fold count");
  const Vector w = weights.size() == 0 ? Vector::Ones(n) : Vector(weights);
  const Scalar wsum = w.sum();

  HalBasis basis = hal_basis(x, config);
  const Index m = basis.columns.cols();

  HalFit fit;
  const Scalar ybar = (w.array() * y.array()).sum() / wsum;

  Matrix full_std;
  const Standardization std_full = standardize(basis.columns, w, full_std);

  Scalar lambda_max = 0.0;
  for (Index j = 0; j < m; ++j) {
    lambda_max = std::max(
        lambda_max, std::abs((w.array() * full_std.col(j).array() * (y.array() - ybar)).sum() / wsum));
  }
  if (!(lambda_max > 0.0)) {
    fit.intercept = ybar;
    fit.coefficients = Vector();
    fit.lambda = 0.0;
    fit.lambda_grid = {0.0};
    fit.cv_risk = {0.0};
    return fit;
  }

  const int grid_size = std::max(config.lambda_grid_size, 2);
  std::vector<Scalar> grid(static_cast<size_t>(grid_size));
  for (int k = 0; k < grid_size; ++k) {
    grid[static_cast<size_t>(k)] =
        lambda_max * std::pow(10.0, -config.lambda_decades * k / (grid_size - 1));
  }

  // K-fold CV over the shared lambda path, warm starts down the path.
  const std::vector<int> folds = make_folds(n, config.cv_folds, config.fold_seed);
  std::vector<Scalar> cv_sse(grid.size(), 0.0);
  Scalar cv_weight_total = 0.0;
  for (int f = 0; f < config.cv_folds; ++f) {
    std::vector<Index> train, test;
    for (Index i = 0; i < n; ++i) {
      (folds[static_cast<size_t>(i)] == f ? test : train).push_back(i);
    }
    Matrix xb_train(train.size(), m), xb_test(test.size(), m);
    Vector y_train(train.size()), w_train(train.size()), y_test(test.size()), w_test(test.size());
    for (size_t i = 0; i < train.size(); ++i) {
      xb_train.row(static_cast<Index>(i)) = basis.columns.row(train[i]);
      y_train[static_cast<Index>(i)] = y[train[i]];
      w_train[static_cast<Index>(i)] = w[train[i]];
    }
    for (size_t i = 0; i < test.size(); ++i) {
      xb_test.row(static_cast<Index>(i)) = basis.columns.row(test[i]);
      y_test[static_cast<Index>(i)] = y[test[i]];
      w_test[static_cast<Index>(i)] = w[test[i]];
    }
    Matrix xs_train;
    const Standardization st = standardize(xb_train, w_train, xs_train);
    Matrix xs_test(xb_test.rows(), m);
    for (Index j = 0; j < m; ++j) {
      if (st.sd[j] > 1e-12) {
        xs_test.col(j) = (xb_test.col(j).array() - st.mean[j]) / st.sd[j];
      } else {
        xs_test.col(j).setZero();
      }
    }
    Vector beta = Vector::Zero(m);
    Scalar b0 = 0.0;
    for (size_t k = 0; k < grid.size(); ++k) {
      coordinate_descent_lasso(xs_train, y_train, w_train, grid[k], config.cd_tolerance,
                               config.max_passes, b0, beta);
      const Vector pred = (xs_test * beta).array() + b0;
      cv_sse[k] += (w_test.array() * (y_test.array() - pred.array()).square()).sum();
    }
    cv_weight_total += w_test.sum();
  }
  fit.cv_risk.resize(grid.size());
  for (size_t k = 0; k < grid.size(); ++k) fit.cv_risk[k] = cv_sse[k] / cv_weight_total;

  size_t best = 0;
  for (size_t k = 1; k < grid.size(); ++k) {
    if (fit.cv_risk[k] < fit.cv_risk[best]) best = k;
  }

  // Final refit on all data, warm-started down the path to the selected
  // lambda.
  Vector beta = Vector::Zero(m);
  Scalar b0 = 0.0;
  for (size_t k = 0; k <= best; ++k) {
    coordinate_descent_lasso(full_std, y, w, grid[k], config.cd_tolerance, config.max_passes, b0,
                             beta);
  }

  fit.lambda = grid[best];
  fit.lambda_grid = grid;
  fit.intercept = b0;
  std::vector<Index> active;
  for (Index j = 0; j < m; ++j) {
    if (beta[j] != 0.0 && std_full.sd[j] > 1e-12) active.push_back(j);
  }
  fit.active_count = static_cast<Index>(active.size());
  fit.coefficients.resize(static_cast<Index>(active.size()));
  fit.basis.reserve(active.size());
  for (size_t k = 0; k < active.size(); ++k) {
    const Index j = active[k];
    const Scalar coef = beta[j] / std_full.sd[j];
    fit.coefficients[static_cast<Index>(k)] = coef;
    fit.intercept -= std_full.mean[j] * coef;
    fit.basis.push_back(basis.descriptors[static_cast<size_t>(j)]);
  }
  return fit;
}

Vector hal_predict(const HalFit& fit, ConstMatrixRef x_new) {
  Vector out = Vector::Constant(x_new.rows(), fit.intercept);
  for (size_t k = 0; k < fit.basis.size(); ++k) {
    const auto& f = fit.basis[k];
    for (int v : f.vars) {
      if (v >= x_new.cols()) throw std::invalid_argument("hal_predict: column out of range");
    }
    const Scalar coef = fit.coefficients[static_cast<Index>(k)];
    for (Index i = 0; i < x_new.rows(); ++i) {
      bool on = true;
      for (size_t s = 0; s < f.vars.size(); ++s) {
        if (x_new(i, f.vars[s]) < f.knots[s]) {
          on = false;
          break;
        }
      }
      if (on) out[i] += coef;
    }
  }
  return out;
}

}  // namespace smarttmle
