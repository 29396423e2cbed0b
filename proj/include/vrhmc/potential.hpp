#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vrhmc/random.hpp"

namespace vrhmc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// A finite-sum potential f(x) = sum_i f_i(x) with per-component gradients.
///
/// `add_component_gradient(i, x, alpha, out)` performs out += alpha * grad f_i(x)
/// and is the hot path used by the estimators. `gradient_full` must agree with
/// the sum of component gradients up to round-off; models are free to use a
/// closed form for it.
template <class M>
concept PotentialModel = requires(const M& m, std::size_t i, const Vector& x,
                                  double alpha, Vector& out) {
  { m.n_components() } -> std::convertible_to<std::size_t>;
  { m.dimension() } -> std::convertible_to<std::size_t>;
  { m.smoothness() } -> std::convertible_to<double>;
  { m.strong_convexity() } -> std::convertible_to<double>;
  { m.potential(x) } -> std::convertible_to<double>;
  { m.component_potential(i, x) } -> std::convertible_to<double>;
  { m.gradient_full(x) } -> std::convertible_to<Vector>;
  m.add_component_gradient(i, x, alpha, out);
};

namespace detail {

inline void check_dim(const Vector& x, std::size_t d, const char* what) {
  if (static_cast<std::size_t>(x.size()) != d) {
    throw std::invalid_argument(std::string(what) + ": expected dimension " +
                                std::to_string(d) + ", got " +
                                std::to_string(x.size()));
  }
}

inline void check_index(std::size_t i, std::size_t n) {
  if (i >= n) {
    throw std::out_of_range("component index " + std::to_string(i) +
                            " out of range [0, " + std::to_string(n) + ")");
  }
}

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) noexcept {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

/// 1 / (1 + exp(z)), i.e. sigmoid(-z).
inline double sigmoid_neg(double z) noexcept {
  if (z >= 0) {
    const double e = std::exp(-z);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(z));
}

}  // namespace detail

template <PotentialModel M>
double condition_number(const M& model) {
  return model.smoothness() / model.strong_convexity();
}

/// Checked single-component gradient.
template <PotentialModel M>
Vector gradient_component(const M& model, std::size_t i, const Vector& x) {
  detail::check_index(i, model.n_components());
  detail::check_dim(x, model.dimension(), "gradient_component");
  Vector out = Vector::Zero(static_cast<Eigen::Index>(model.dimension()));
  model.add_component_gradient(i, x, 1.0, out);
  return out;
}

/// Sum of component gradients in index order; the reference route that
/// `gradient_full` is checked against.
template <PotentialModel M>
Vector gradient_sum_of_components(const M& model, const Vector& x) {
  detail::check_dim(x, model.dimension(), "gradient_sum_of_components");
  Vector out = Vector::Zero(static_cast<Eigen::Index>(model.dimension()));
  for (std::size_t i = 0; i < model.n_components(); ++i) {
    model.add_component_gradient(i, x, 1.0, out);
  }
  return out;
}

/// f_i(x) = (1/N) (d_i - x)^T P (d_i - x) with P = Sigma^{-1}.
///
/// The full potential has Hessian 2P, so the smoothness and strong convexity
/// reported here are twice the extreme eigenvalues of P.
class QuadraticPotential {
 public:
  QuadraticPotential(Matrix data, Matrix precision)
      : data_(std::move(data)), precision_(std::move(precision)) {
    if (data_.cols() < 1 || data_.rows() < 1) {
      throw std::invalid_argument("QuadraticPotential: need N >= 1 and d >= 1");
    }
    if (precision_.rows() != data_.rows() || precision_.cols() != data_.rows()) {
      throw std::invalid_argument("QuadraticPotential: precision must be d x d");
    }
    if ((precision_ - precision_.transpose()).cwiseAbs().maxCoeff() >
        1e-12 * std::max(1.0, precision_.cwiseAbs().maxCoeff())) {
      throw std::invalid_argument("QuadraticPotential: precision not symmetric");
    }
    precision_ = 0.5 * (precision_ + precision_.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(precision_);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > 0)) {
      throw std::invalid_argument("QuadraticPotential: precision not positive definite");
    }
    strong_convexity_ = 2.0 * lo;
    smoothness_ = 2.0 * hi;

    const double n = static_cast<double>(data_.cols());
    mean_ = data_.rowwise().mean();
    precision_data_ = precision_ * data_;
    precision_mean_ = precision_ * mean_;
    offset_ = 0.0;
    for (Eigen::Index i = 0; i < data_.cols(); ++i) {
      const Vector r = data_.col(i) - mean_;
      offset_ += r.dot(precision_ * r);
    }
    offset_ /= n;
    scale_ = 2.0 / n;
  }

  /// Synthetic benchmark family: d_i ~ N(2, 2 I), precision with a random
  /// orthogonal eigenbasis and eigenvalues log-uniform in [m, L] (both
  /// extremes attained when d >= 2).
  static QuadraticPotential synthetic(std::uint64_t seed, std::size_t n,
                                      std::size_t d, double eig_max,
                                      double eig_min) {
    if (n < 1 || d < 1) {
      throw std::invalid_argument("synthetic quadratic: need N >= 1 and d >= 1");
    }
    if (!(eig_min > 0) || !(eig_min <= eig_max)) {
      throw std::invalid_argument("synthetic quadratic: need 0 < m <= L");
    }
    Engine rng = make_engine(seed, 0, Stream::Data);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto di = static_cast<Eigen::Index>(d);

    Matrix data(di, static_cast<Eigen::Index>(n));
    for (Eigen::Index j = 0; j < data.cols(); ++j) {
      for (Eigen::Index r = 0; r < di; ++r) {
        data(r, j) = 2.0 + std::sqrt(2.0) * normal(rng);
      }
    }

    Matrix g(di, di);
    for (Eigen::Index r = 0; r < di; ++r) {
      for (Eigen::Index c = 0; c < di; ++c) g(r, c) = normal(rng);
    }
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ();

    Vector eig(di);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double llo = std::log(eig_min);
    const double lhi = std::log(eig_max);
    for (Eigen::Index r = 0; r < di; ++r) {
      eig(r) = std::exp(llo + (lhi - llo) * unit(rng));
    }
    eig(0) = eig_max;
    if (di >= 2) eig(1) = eig_min;

    Matrix p = q * eig.asDiagonal() * q.transpose();
    p = 0.5 * (p + p.transpose());
    return QuadraticPotential(std::move(data), std::move(p));
  }

  std::size_t n_components() const noexcept {
    return static_cast<std::size_t>(data_.cols());
  }
  std::size_t dimension() const noexcept {
    return static_cast<std::size_t>(data_.rows());
  }
  double smoothness() const noexcept { return smoothness_; }
  double strong_convexity() const noexcept { return strong_convexity_; }

  const Matrix& data() const noexcept { return data_; }
  const Matrix& precision() const noexcept { return precision_; }
  const Vector& data_mean() const noexcept { return mean_; }

  double component_potential(std::size_t i, const Vector& x) const {
    detail::check_index(i, n_components());
    detail::check_dim(x, dimension(), "component_potential");
    const Vector r = data_.col(static_cast<Eigen::Index>(i)) - x;
    return r.dot(precision_ * r) / static_cast<double>(n_components());
  }

  /// Closed form: (x - dbar)^T P (x - dbar) + (1/N) sum_i (d_i - dbar)^T P (d_i - dbar).
  double potential(const Vector& x) const {
    detail::check_dim(x, dimension(), "potential");
    const Vector r = x - mean_;
    return r.dot(precision_ * r) + offset_;
  }

  void add_component_gradient(std::size_t i, const Vector& x, double alpha,
                              Vector& out) const {
    out.noalias() += (alpha * scale_) *
                     (precision_ * x - precision_data_.col(static_cast<Eigen::Index>(i)));
  }

  Vector gradient_full(const Vector& x) const {
    detail::check_dim(x, dimension(), "gradient_full");
    return 2.0 * (precision_ * x - precision_mean_);
  }

  /// Minimum of f, attained at the data mean.
  double minimum_value() const noexcept { return offset_; }

  /// E_{p*}[f] where p* is N(dbar, P^{-1}/2): d/2 plus the minimum value.
  double mean_potential() const noexcept {
    return 0.5 * static_cast<double>(dimension()) + offset_;
  }

 private:
  Matrix data_;            // d x N
  Matrix precision_;       // P
  Matrix precision_data_;  // P d_i, column-wise
  Vector mean_;
  Vector precision_mean_;
  double offset_ = 0.0;
  double scale_ = 0.0;
  double smoothness_ = 0.0;
  double strong_convexity_ = 0.0;
};

/// Mean and covariance of the Gaussian target exp(-f) of a quadratic model.
struct TargetMoments {
  Vector mean;
  Matrix covariance;
};

inline TargetMoments target_moments(const QuadraticPotential& model) {
  return {model.data_mean(), 0.5 * model.precision().inverse()};
}

/// Bayesian logistic regression with a N(0, m^{-1} I) prior:
///   f(x) = (m/2)||x||^2 + sum_i log(1 + exp(-y_i a_i^T x)),
/// split as f_i = (m/(2N))||x||^2 + log(1 + exp(-y_i a_i^T x)).
class LogisticPotential {
 public:
  LogisticPotential(Matrix features, std::vector<double> labels,
                    double prior_precision)
      : features_(std::move(features)),
        labels_(std::move(labels)),
        prior_(prior_precision) {
    if (features_.rows() < 1 || features_.cols() < 1) {
      throw std::invalid_argument("LogisticPotential: need N >= 1 and d >= 1");
    }
    if (static_cast<Eigen::Index>(labels_.size()) != features_.rows()) {
      throw std::invalid_argument("LogisticPotential: label count mismatch");
    }
    for (double y : labels_) {
      if (y != 1.0 && y != -1.0) {
        throw std::invalid_argument("LogisticPotential: labels must be +1/-1");
      }
    }
    if (!(prior_ > 0)) {
      throw std::invalid_argument("LogisticPotential: prior precision must be > 0");
    }
    const Matrix gram = features_.transpose() * features_;
    Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
    smoothness_ = prior_ + 0.25 * std::max(0.0, es.eigenvalues().maxCoeff());
    signed_features_ = features_;
    for (Eigen::Index i = 0; i < features_.rows(); ++i) {
      signed_features_.row(i) *= labels_[static_cast<std::size_t>(i)];
    }
  }

  std::size_t n_components() const noexcept {
    return static_cast<std::size_t>(features_.rows());
  }
  std::size_t dimension() const noexcept {
    return static_cast<std::size_t>(features_.cols());
  }
  double smoothness() const noexcept { return smoothness_; }
  double strong_convexity() const noexcept { return prior_; }
  double prior_precision() const noexcept { return prior_; }
  const Matrix& features() const noexcept { return features_; }
  const std::vector<double>& labels() const noexcept { return labels_; }

  double component_potential(std::size_t i, const Vector& x) const {
    detail::check_index(i, n_components());
    detail::check_dim(x, dimension(), "component_potential");
    const auto ii = static_cast<Eigen::Index>(i);
    const double margin = signed_features_.row(ii).dot(x);
    return 0.5 * prior_ / static_cast<double>(n_components()) * x.squaredNorm() +
           detail::softplus(-margin);
  }

  double potential(const Vector& x) const {
    detail::check_dim(x, dimension(), "potential");
    return 0.5 * prior_ * x.squaredNorm() + neg_log_likelihood(x);
  }

  /// sum_i log(1 + exp(-y_i a_i^T x)); the prior is excluded.
  double neg_log_likelihood(const Vector& x) const {
    detail::check_dim(x, dimension(), "neg_log_likelihood");
    const Vector margins = signed_features_ * x;
    double s = 0.0;
    for (Eigen::Index i = 0; i < margins.size(); ++i) {
      s += detail::softplus(-margins(i));
    }
    return s;
  }

  void add_component_gradient(std::size_t i, const Vector& x, double alpha,
                              Vector& out) const {
    const auto ii = static_cast<Eigen::Index>(i);
    const double margin = signed_features_.row(ii).dot(x);
    const double w = detail::sigmoid_neg(margin);
    out.noalias() += (alpha * prior_ / static_cast<double>(n_components())) * x;
    out.noalias() -= (alpha * w) * signed_features_.row(ii).transpose();
  }

  Vector gradient_full(const Vector& x) const {
    detail::check_dim(x, dimension(), "gradient_full");
    const Vector margins = signed_features_ * x;
    Vector w(margins.size());
    for (Eigen::Index i = 0; i < margins.size(); ++i) {
      w(i) = detail::sigmoid_neg(margins(i));
    }
    return prior_ * x - signed_features_.transpose() * w;
  }

 private:
  Matrix features_;         // N x d, row i is a_i
  Matrix signed_features_;  // row i is y_i a_i
  std::vector<double> labels_;
  double prior_ = 1.0;
  double smoothness_ = 0.0;
};

static_assert(PotentialModel<QuadraticPotential>);
static_assert(PotentialModel<LogisticPotential>);

}  // namespace vrhmc
