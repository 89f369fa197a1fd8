#include "smarttmle/glm.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <stdexcept>

namespace smarttmle {

namespace {

constexpr Scalar kMuEps = 1e-10;

Vector resolve_weights(ConstVectorRef weights, Index n) {
  if (weights.size() == 0) return Vector::Ones(n);
  if (weights.size() != n) throw std::invalid_argument("fit_glm: weight length mismatch");
  return weights;
}

Vector resolve_offset(ConstVectorRef offset, Index n) {
  if (offset.size() == 0) return Vector::Zero(n);
  if (offset.size() != n) throw std::invalid_argument("fit_glm: offset length mismatch");
  return offset;
}

Scalar xlogy(Scalar x, Scalar y) { return x > 0.0 ? x * std::log(y) : 0.0; }

Scalar deviance_logistic(ConstVectorRef y, ConstVectorRef mu, ConstVectorRef w) {
  Scalar dev = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    const Scalar yi = y[i];
    const Scalar mi = std::min(std::max(mu[i], kMuEps), 1.0 - kMuEps);
    dev += 2.0 * w[i] * (xlogy(yi, yi / mi) + xlogy(1.0 - yi, (1.0 - yi) / (1.0 - mi)));
  }
  return dev;
}

Scalar deviance_poisson(ConstVectorRef y, ConstVectorRef mu, ConstVectorRef w) {
  Scalar dev = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    const Scalar mi = std::max(mu[i], kMuEps);
    dev += 2.0 * w[i] * (xlogy(y[i], y[i] / mi) - (y[i] - mi));
  }
  return dev;
}

Scalar deviance_negbin(ConstVectorRef y, ConstVectorRef mu, ConstVectorRef w, Scalar theta) {
  Scalar dev = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    const Scalar mi = std::max(mu[i], kMuEps);
    dev += 2.0 * w[i] *
           (xlogy(y[i], y[i] / mi) - (y[i] + theta) * std::log((y[i] + theta) / (mi + theta)));
  }
  return dev;
}

Scalar family_deviance(GlmFamily family, ConstVectorRef y, ConstVectorRef mu, ConstVectorRef w,
                       Scalar theta) {
  switch (family) {
    case GlmFamily::Logistic: return deviance_logistic(y, mu, w);
    case GlmFamily::Poisson: return deviance_poisson(y, mu, w);
    case GlmFamily::NegativeBinomial: return deviance_negbin(y, mu, w, theta);
    case GlmFamily::InterceptOnly: break;
  }
  return (w.array() * (y - mu).array().square()).sum();
}

Vector inverse_link(GlmFamily family, ConstVectorRef eta) {
  Vector mu(eta.size());
  if (family == GlmFamily::Logistic) {
    for (Index i = 0; i < eta.size(); ++i) mu[i] = expit(eta[i]);
  } else {
    for (Index i = 0; i < eta.size(); ++i) mu[i] = std::exp(std::min(eta[i], 700.0));
  }
  return mu;
}

// Solve (X^T W X) b = X^T W z, falling back to a ridge jitter when the
// Cholesky factorization fails (near-degenerate fluctuation designs).
Vector solve_weighted_ls(const Matrix& x, const Vector& irls_w, const Vector& z, bool& ridged) {
  const Matrix xtwx = x.transpose() * irls_w.asDiagonal() * x;
  const Vector xtwz = x.transpose() * (irls_w.asDiagonal() * z);
  Eigen::LLT<Matrix> llt(xtwx);
  if (llt.info() == Eigen::Success) {
    Vector b = llt.solve(xtwz);
    if (b.allFinite()) return b;
  }
  ridged = true;
  Matrix jittered = xtwx;
  Scalar jitter = 1e-8;
  for (int attempt = 0; attempt < 8; ++attempt) {
    jittered.diagonal().array() += jitter;
    Eigen::LDLT<Matrix> ldlt(jittered);
    if (ldlt.info() == Eigen::Success) {
      Vector b = ldlt.solve(xtwz);
      if (b.allFinite()) return b;
    }
    jitter *= 100.0;
  }
  throw std::runtime_error("fit_glm: weighted normal equations unsolvable even with ridge");
}

struct IrlsResult {
  Vector beta;
  bool converged = false;
  bool ridged = false;
  Scalar deviance = 0.0;
  int iterations = 0;
};

IrlsResult irls(GlmFamily family, const Matrix& x, const Vector& y, const Vector& w,
                const Vector& offset, Scalar theta, int max_iterations, Scalar tolerance) {
  const Index n = x.rows();
  const Index p = x.cols();
  IrlsResult out;
  out.beta = Vector::Zero(p);

  // glm.fit-style mean start, robust at boundary responses.
  Vector mu(n);
  for (Index i = 0; i < n; ++i) {
    if (family == GlmFamily::Logistic) {
      mu[i] = (w[i] * y[i] + 0.5) / (w[i] + 1.0);
    } else {
      mu[i] = y[i] + 0.1;
    }
  }
  Vector eta(n);
  for (Index i = 0; i < n; ++i) {
    eta[i] = family == GlmFamily::Logistic
                 ? logit(std::min(std::max(mu[i], kMuEps), 1.0 - kMuEps))
                 : std::log(std::max(mu[i], kMuEps));
  }
  Scalar dev = family_deviance(family, y, mu, w, theta);
  bool have_beta = false;

  Vector irls_w(n), z(n);
  for (int iter = 1; iter <= max_iterations; ++iter) {
    out.iterations = iter;
    for (Index i = 0; i < n; ++i) {
      const Scalar m = family == GlmFamily::Logistic
                           ? std::min(std::max(mu[i], kMuEps), 1.0 - kMuEps)
                           : std::max(mu[i], kMuEps);
      Scalar wi;
      if (family == GlmFamily::Logistic) {
        wi = w[i] * m * (1.0 - m);
      } else if (family == GlmFamily::Poisson) {
        wi = w[i] * m;
      } else {
        wi = w[i] * m * theta / (theta + m);
      }
      irls_w[i] = std::max(wi, 1e-14);
      const Scalar dmu = family == GlmFamily::Logistic ? m * (1.0 - m) : m;
      z[i] = (eta[i] - offset[i]) + (y[i] - mu[i]) / dmu;
    }

    Vector beta_new = solve_weighted_ls(x, irls_w, z, out.ridged);

    // Step-halving against deviance increase or non-finite updates.
    Scalar step = 1.0;
    Vector beta_try, mu_try(n), eta_try(n);
    Scalar dev_try = 0.0;
    bool accepted = false;
    for (int half = 0; half < 30; ++half) {
      beta_try = have_beta ? Vector(out.beta + step * (beta_new - out.beta)) : beta_new;
      eta_try = x * beta_try + offset;
      mu_try = inverse_link(family, eta_try);
      dev_try = family_deviance(family, y, mu_try, w, theta);
      if (std::isfinite(dev_try) && (!have_beta || dev_try <= dev * (1.0 + 1e-12) + 1e-12)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      out.deviance = dev;
      out.converged = false;
      return out;
    }

    const Scalar change = have_beta ? (beta_try - out.beta).cwiseAbs().maxCoeff()
                                    : std::numeric_limits<Scalar>::infinity();
    out.beta = beta_try;
    have_beta = true;
    eta = eta_try;
    mu = mu_try;
    dev = dev_try;
    if (change <= tolerance) {
      out.converged = true;
      break;
    }
  }
  out.deviance = dev;
  return out;
}

Scalar negbin_profile_loglik(const Matrix& x, const Vector& y, const Vector& w,
                             const Vector& offset, Scalar theta, const GlmSpec& spec,
                             IrlsResult& fit_out) {
  fit_out = irls(GlmFamily::NegativeBinomial, x, y, w, offset, theta, spec.max_iterations,
                 spec.tolerance);
  const Vector mu = inverse_link(GlmFamily::NegativeBinomial, Vector(x * fit_out.beta + offset));
  Scalar ll = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    const Scalar m = std::max(mu[i], kMuEps);
    ll += w[i] * (std::lgamma(y[i] + theta) - std::lgamma(theta) - std::lgamma(y[i] + 1.0) +
                  theta * std::log(theta / (theta + m)) + y[i] * std::log(m / (theta + m)));
  }
  return ll;
}

Matrix with_intercept(ConstMatrixRef x) {
  Matrix out(x.rows(), x.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(x.cols()) = x;
  return out;
}

}  // namespace

GlmFit fit_glm(const GlmSpec& spec, ConstMatrixRef x_in, ConstVectorRef y, ConstVectorRef weights,
               ConstVectorRef offset) {
  const Index n = y.size();
  if (n == 0) throw std::invalid_argument("fit_glm: empty response");
  const Vector w = resolve_weights(weights, n);
  const Vector off = resolve_offset(offset, n);

  GlmFit fit;
  if (spec.family == GlmFamily::InterceptOnly) {
    const Scalar wsum = w.sum();
    if (wsum <= 0.0) throw std::invalid_argument("fit_glm: nonpositive total weight");
    fit.coefficients = Vector::Constant(1, (w.array() * y.array()).sum() / wsum);
    fit.converged = true;
    fit.deviance = (w.array() * (y.array() - fit.coefficients[0]).square()).sum();
    return fit;
  }

  const Matrix x = spec.add_intercept ? with_intercept(x_in) : Matrix(x_in);
  if (x.rows() != n) throw std::invalid_argument("fit_glm: row count mismatch");
  if (spec.family == GlmFamily::Logistic) {
    if ((y.array() < -1e-12).any() || (y.array() > 1.0 + 1e-12).any()) {
      throw std::invalid_argument("fit_glm: logistic response must lie in [0,1]");
    }
  } else if ((y.array() < 0.0).any()) {
    throw std::invalid_argument("fit_glm: count response must be nonnegative");
  }

  if (spec.family == GlmFamily::NegativeBinomial) {
    // Golden-section profile over log(theta).
    const Scalar gr = (std::sqrt(5.0) - 1.0) / 2.0;
    Scalar a = spec.log_theta_min, b = spec.log_theta_max;
    Scalar c = b - gr * (b - a), d = a + gr * (b - a);
    IrlsResult tmp;
    Scalar fc = negbin_profile_loglik(x, y, w, off, std::exp(c), spec, tmp);
    Scalar fd = negbin_profile_loglik(x, y, w, off, std::exp(d), spec, tmp);
    while (b - a > spec.theta_search_tol) {
      if (fc > fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - gr * (b - a);
        fc = negbin_profile_loglik(x, y, w, off, std::exp(c), spec, tmp);
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + gr * (b - a);
        fd = negbin_profile_loglik(x, y, w, off, std::exp(d), spec, tmp);
      }
    }
    const Scalar theta = std::exp((a + b) / 2.0);
    IrlsResult res;
    negbin_profile_loglik(x, y, w, off, theta, spec, res);
    fit.coefficients = res.beta;
    fit.theta = theta;
    fit.converged = res.converged;
    fit.ridged = res.ridged;
    fit.deviance = res.deviance;
    fit.iterations = res.iterations;
    return fit;
  }

  IrlsResult res = irls(spec.family, x, y, w, off, 0.0, spec.max_iterations, spec.tolerance);
  fit.coefficients = res.beta;
  fit.converged = res.converged;
  fit.ridged = res.ridged;
  fit.deviance = res.deviance;
  fit.iterations = res.iterations;
  return fit;
}

Vector predict_glm(const GlmFit& fit, const GlmSpec& spec, ConstMatrixRef x_in,
                   ConstVectorRef offset) {
  if (spec.family == GlmFamily::InterceptOnly) {
    return Vector::Constant(x_in.rows(), fit.coefficients[0]);
  }
  const Matrix x = spec.add_intercept ? with_intercept(x_in) : Matrix(x_in);
  if (x.cols() != fit.coefficients.size()) {
    throw std::invalid_argument("predict_glm: design column count mismatch");
  }
  const Vector off = resolve_offset(offset, x.rows());
  return inverse_link(spec.family == GlmFamily::Logistic ? GlmFamily::Logistic : GlmFamily::Poisson,
                      Vector(x * fit.coefficients + off));
}

Vector glm_score(const GlmFit& fit, const GlmSpec& spec, ConstMatrixRef x_in, ConstVectorRef y,
                 ConstVectorRef weights, ConstVectorRef offset) {
  const Matrix x = spec.add_intercept ? with_intercept(x_in) : Matrix(x_in);
  const Vector w = resolve_weights(weights, y.size());
  const Vector mu = predict_glm(fit, spec, x_in, offset);
  return x.transpose() * (w.array() * (y - mu).array()).matrix();
}

}  // namespace smarttmle
