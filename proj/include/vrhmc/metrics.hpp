#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "vrhmc/potential.hpp"
#include "vrhmc/record.hpp"

namespace vrhmc {

/// Mean and covariance of a Gaussian. The constructor symmetrizes the
/// covariance and clamps eigenvalues in [-1e-10, 0) to zero.
class GaussianSummary {
 public:
  GaussianSummary(Vector mean, Matrix covariance)
      : mean_(std::move(mean)), cov_(std::move(covariance)) {
    if (cov_.rows() != mean_.size() || cov_.cols() != mean_.size()) {
      throw std::invalid_argument("GaussianSummary: covariance shape does not match mean");
    }
    const double scale = std::max(1.0, cov_.cwiseAbs().maxCoeff());
    if ((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
      throw std::invalid_argument("GaussianSummary: covariance is not symmetric");
    }
    cov_ = 0.5 * (cov_ + cov_.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov_);
    if (es.info() != Eigen::Success) {
      throw std::runtime_error("GaussianSummary: eigendecomposition failed");
    }
    Vector ev = es.eigenvalues();
    if (ev.size() > 0 && ev.minCoeff() < -1e-10 * scale) {
      throw std::invalid_argument("GaussianSummary: covariance is not positive semidefinite");
    }
    ev = ev.cwiseMax(0.0);
    cov_ = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    cov_ = 0.5 * (cov_ + cov_.transpose());
    eigvals_ = ev;
    eigvecs_ = es.eigenvectors();
  }

  const Vector& mean() const noexcept { return mean_; }
  const Matrix& covariance() const noexcept { return cov_; }
  Eigen::Index dimension() const noexcept { return mean_.size(); }

  /// Principal square root of the covariance.
  Matrix sqrt_covariance() const {
    return eigvecs_ * eigvals_.cwiseSqrt().asDiagonal() * eigvecs_.transpose();
  }

 private:
  Vector mean_;
  Matrix cov_;
  Vector eigvals_;
  Matrix eigvecs_;
};

/// Sample mean and (unbiased) covariance of the columns of `samples`.
inline GaussianSummary fit_gaussian(const Matrix& samples) {
  const Eigen::Index n = samples.cols();
  if (n < samples.rows() + 1) {
    throw std::invalid_argument("fit_gaussian: need at least d + 1 samples");
  }
  const Vector mean = samples.rowwise().mean();
  const Matrix centered = samples.colwise() - mean;
  Matrix cov = centered * centered.transpose() / static_cast<double>(n - 1);
  cov = 0.5 * (cov + cov.transpose());
  return {mean, cov};
}

namespace detail {

/// tr((A^{1/2} B A^{1/2})^{1/2})
inline double bures_cross_trace(const GaussianSummary& a, const GaussianSummary& b) {
  const Matrix ra = a.sqrt_covariance();
  Matrix m = ra * b.covariance() * ra;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) {
    throw std::runtime_error("bures_w2: eigendecomposition failed");
  }
  return es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

}  // namespace detail

/// 2-Wasserstein distance between two Gaussians (Bures form):
///   W2^2 = ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a^{1/2} S_b S_a^{1/2})^{1/2}).
/// The cross term is averaged over both argument orders so the result is
/// exactly symmetric.
inline double bures_w2(const GaussianSummary& a, const GaussianSummary& b) {
  if (a.dimension() != b.dimension()) {
    throw std::invalid_argument("bures_w2: dimension mismatch");
  }
  const double mean_term = (a.mean() - b.mean()).squaredNorm();
  const double cross =
      0.5 * (detail::bures_cross_trace(a, b) + detail::bures_cross_trace(b, a));
  const double w2sq =
      mean_term + (a.covariance().trace() + b.covariance().trace()) - 2.0 * cross;
  return std::sqrt(std::max(w2sq, 0.0));
}

/// Gaussian law of the coupled coordinate q = (x, x + v) when x ~ N(mu, S) and
/// v ~ N(0, I/xi) independently (the stationary law).
inline GaussianSummary coupled_target(const GaussianSummary& position, double xi) {
  const Eigen::Index d = position.dimension();
  Vector mean(2 * d);
  mean << position.mean(), position.mean();
  Matrix cov(2 * d, 2 * d);
  const Matrix& s = position.covariance();
  cov << s, s, s, s + Matrix::Identity(d, d) / xi;
  return {mean, cov};
}

/// Average over posterior samples of the held-out negative log-likelihood.
inline double test_nll(const LogisticPotential& test_model, const std::vector<Vector>& samples) {
  if (samples.empty()) throw std::invalid_argument("test_nll: no samples");
  double s = 0.0;
  for (const Vector& x : samples) s += test_model.neg_log_likelihood(x);
  return s / static_cast<double>(samples.size());
}

/// Time average of the squared gradient error over post-burn-in rows.
inline double gradient_mse(const RunRecord& record) {
  double s = 0.0;
  std::size_t n = 0;
  for (const RecordRow& r : record.rows) {
    if (r.iter < record.burn_in || !r.grad_err_sq) continue;
    s += *r.grad_err_sq;
    ++n;
  }
  if (n == 0) {
    throw std::invalid_argument("gradient_mse: no post-burn-in gradient-error diagnostics");
  }
  return s / static_cast<double>(n);
}

/// Mean over chains of (time-averaged post-burn-in potential - reference)^2.
inline double potential_mse(const std::vector<RunRecord>& chains, double true_mean_potential) {
  if (!std::isfinite(true_mean_potential)) {
    throw std::invalid_argument("potential_mse: missing reference mean potential");
  }
  if (chains.empty()) throw std::invalid_argument("potential_mse: no chains");
  double s = 0.0;
  for (const RunRecord& c : chains) {
    if (c.post_burn_in_rows == 0) {
      throw std::invalid_argument("potential_mse: chain has no post-burn-in rows");
    }
    const double e = c.mean_potential - true_mean_potential;
    s += e * e;
  }
  return s / static_cast<double>(chains.size());
}

}  // namespace vrhmc
