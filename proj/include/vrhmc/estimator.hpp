#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "vrhmc/potential.hpp"
#include "vrhmc/random.hpp"

namespace vrhmc {

enum class EstimatorKind { Full, SG, SAGA, SVRG, SARAH, SARGE };

inline constexpr EstimatorKind kAllEstimators[] = {
    EstimatorKind::Full, EstimatorKind::SG,    EstimatorKind::SVRG,
    EstimatorKind::SARAH, EstimatorKind::SAGA, EstimatorKind::SARGE};

inline std::string_view to_string(EstimatorKind k) noexcept {
  switch (k) {
    case EstimatorKind::Full: return "full";
    case EstimatorKind::SG: return "sg";
    case EstimatorKind::SAGA: return "saga";
    case EstimatorKind::SVRG: return "svrg";
    case EstimatorKind::SARAH: return "sarah";
    case EstimatorKind::SARGE: return "sarge";
  }
  return "?";
}

/// Human-readable method label as used in result tables ("SVRG-HMC", ...).
inline std::string method_label(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::Full: return "HMC";
    case EstimatorKind::SG: return "SG-HMC";
    case EstimatorKind::SAGA: return "SAGA-HMC";
    case EstimatorKind::SVRG: return "SVRG-HMC";
    case EstimatorKind::SARAH: return "SARAH-HMC";
    case EstimatorKind::SARGE: return "SARGE-HMC";
  }
  return "?";
}

inline EstimatorKind parse_estimator_kind(std::string_view s) {
  std::string t(s);
  std::transform(t.begin(), t.end(), t.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (t.size() > 4 && t.ends_with("-hmc")) t.resize(t.size() - 4);
  if (t == "full" || t == "hmc" || t == "fg") return EstimatorKind::Full;
  if (t == "sg") return EstimatorKind::SG;
  if (t == "saga") return EstimatorKind::SAGA;
  if (t == "svrg") return EstimatorKind::SVRG;
  if (t == "sarah") return EstimatorKind::SARAH;
  if (t == "sarge") return EstimatorKind::SARGE;
  throw std::invalid_argument("unknown estimator '" + std::string(s) + "'");
}

inline bool uses_epoch(EstimatorKind k) noexcept {
  return k == EstimatorKind::SVRG || k == EstimatorKind::SARAH;
}

// ---------------------------------------------------------------------------
// MSEB descriptors

/// Constants (M1, M2, rho_M, rho_B, rho_F) of the mean-squared-error/bias
/// recursion. `is_mseb` is false for plain SG, which has no finite descriptor.
struct MsebDescriptor {
  bool is_mseb = true;
  double m1 = 0.0;
  double m2 = 0.0;
  double rho_m = 1.0;
  double rho_b = 1.0;
  double rho_f = 1.0;

  /// Theta = M1/rho_M + M2/(rho_M rho_F); +inf when not MSEB.
  double theta() const noexcept {
    if (!is_mseb) return std::numeric_limits<double>::infinity();
    return m1 / rho_m + m2 / (rho_m * rho_f);
  }
};

inline void validate_estimator_params(EstimatorKind kind, std::size_t n,
                                      std::size_t batch, std::size_t epoch) {
  if (n < 1) throw std::invalid_argument("estimator: N must be >= 1");
  if (kind != EstimatorKind::Full && (batch < 1 || batch > n)) {
    throw std::invalid_argument("estimator: batch size must satisfy 1 <= b <= N (b=" +
                                std::to_string(batch) + ", N=" + std::to_string(n) + ")");
  }
  if (uses_epoch(kind) && epoch < 1) {
    throw std::invalid_argument("estimator: epoch length must be >= 1");
  }
}

inline MsebDescriptor mseb_descriptor(EstimatorKind kind, std::size_t n,
                                      std::size_t batch, std::size_t epoch) {
  validate_estimator_params(kind, n, batch, epoch);
  const double N = static_cast<double>(n);
  const double b = static_cast<double>(batch);
  const double p = static_cast<double>(epoch);
  MsebDescriptor d;
  switch (kind) {
    case EstimatorKind::Full:
      break;
    case EstimatorKind::SG:
      d.is_mseb = false;
      break;
    case EstimatorKind::SAGA:
      d.m1 = 3.0 * N / (b * b);
      d.rho_m = b / (2.0 * N);
      break;
    case EstimatorKind::SVRG:
      d.m1 = 3.0 * p / b;
      d.rho_m = 1.0 / (2.0 * p);
      break;
    case EstimatorKind::SARAH:
      d.m1 = 1.0;
      d.rho_m = 1.0 / p;
      d.rho_b = 1.0 / p;
      break;
    case EstimatorKind::SARGE:
      d.m1 = 12.0;
      d.rho_m = b / (2.0 * N);
      d.m2 = (27.0 + 12.0 * b) / N;
      d.rho_f = b / (2.0 * N);
      d.rho_b = b / N;
      break;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Batch sampling

/// Uniform size-b subset of {0..N-1} without replacement (Floyd's algorithm),
/// returned in increasing order. b == N returns the full set without touching
/// the generator.
template <class Rng>
std::vector<std::size_t> sample_batch(Rng& rng, std::size_t n, std::size_t b) {
  if (b < 1 || b > n) {
    throw std::invalid_argument("sample_batch: need 1 <= b <= N (b=" + std::to_string(b) +
                                ", N=" + std::to_string(n) + ")");
  }
  std::vector<std::size_t> out;
  out.reserve(b);
  if (b == n) {
    out.resize(n);
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
  }
  for (std::size_t j = n - b; j < n; ++j) {
    std::uniform_int_distribution<std::size_t> pick(0, j);
    const std::size_t t = pick(rng);
    auto it = std::lower_bound(out.begin(), out.end(), t);
    if (it != out.end() && *it == t) {
      out.insert(std::lower_bound(out.begin(), out.end(), j), j);
    } else {
      out.insert(it, t);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Estimator state

/// One chain's gradient estimator together with its memory.
///
/// Memory by kind: SVRG keeps a snapshot and its full gradient; SAGA keeps the
/// table of most recent component gradients and their running sum; SARAH keeps
/// the previous iterate and previous estimate; SARGE keeps the psi table, its
/// running sum, the previous iterate and previous estimate.
class GradientEstimator {
 public:
  GradientEstimator() = default;

  /// Initializes all memory from x0 with one full pass (N queries) for every
  /// kind that keeps memory.
  template <PotentialModel M>
  static GradientEstimator init(EstimatorKind kind, const M& model, const Vector& x0,
                                std::size_t batch, std::size_t epoch) {
    const std::size_t n = model.n_components();
    validate_estimator_params(kind, n, batch, epoch);
    detail::check_dim(x0, model.dimension(), "init_estimator");

    GradientEstimator e;
    e.kind_ = kind;
    e.n_ = n;
    e.batch_ = kind == EstimatorKind::Full ? n : batch;
    e.epoch_ = uses_epoch(kind) ? epoch : 1;
    e.initialized_ = true;
    const auto d = static_cast<Eigen::Index>(model.dimension());

    switch (kind) {
      case EstimatorKind::Full:
      case EstimatorKind::SG:
        break;
      case EstimatorKind::SVRG:
        e.anchor_ = x0;
        e.anchor_grad_ = model.gradient_full(x0);
        e.queries_ += n;
        break;
      case EstimatorKind::SARAH:
        e.prev_x_ = x0;
        e.prev_estimate_ = model.gradient_full(x0);
        e.queries_ += n;
        break;
      case EstimatorKind::SAGA:
      case EstimatorKind::SARGE:
        e.table_ = Matrix::Zero(d, static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
          Vector col = Vector::Zero(d);
          model.add_component_gradient(i, x0, 1.0, col);
          e.table_.col(static_cast<Eigen::Index>(i)) = col;
        }
        e.table_sum_ = e.table_.rowwise().sum();
        e.queries_ += n;
        if (kind == EstimatorKind::SARGE) {
          e.prev_x_ = x0;
          e.prev_estimate_ = model.gradient_full(x0);
        }
        break;
    }
    return e;
  }

  /// Draws the batch (and, for SVRG/SARAH, the refresh coin) from `rng` and
  /// returns the estimate at x, updating memory.
  template <PotentialModel M, class Rng>
  Vector estimate(const M& model, const Vector& x, Rng& rng) {
    require_initialized();
    bool refresh = false;
    if (uses_epoch(kind_)) {
      if (epoch_ == 1) {
        refresh = true;
      } else {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        refresh = unit(rng) < 1.0 / static_cast<double>(epoch_);
      }
    }
    if (kind_ == EstimatorKind::Full) {
      return estimate_with(model, x, {}, refresh);
    }
    const auto batch = sample_batch(rng, n_, batch_);
    return estimate_with(model, x, batch, refresh);
  }

  /// Deterministic core of `estimate`: the batch and refresh outcome are given.
  /// For Full the batch is ignored.
  template <PotentialModel M>
  Vector estimate_with(const M& model, const Vector& x,
                       std::span<const std::size_t> batch, bool refresh) {
    require_initialized();
    detail::check_dim(x, model.dimension(), "estimate");
    if (kind_ != EstimatorKind::Full && batch.size() != batch_) {
      throw std::invalid_argument("estimate: batch has wrong size");
    }
    const auto d = static_cast<Eigen::Index>(model.dimension());
    const double scale = static_cast<double>(n_) / static_cast<double>(batch_);
    // When the batch is the whole index set every control variate telescopes
    // away and the estimate is the full gradient; computing it directly keeps
    // b = N chains bit-identical to full-gradient chains.
    const bool full_batch = batch_ == n_;
    Vector g;

    switch (kind_) {
      case EstimatorKind::Full:
        g = model.gradient_full(x);
        queries_ += n_;
        break;

      case EstimatorKind::SG:
        if (full_batch) {
          g = model.gradient_full(x);
        } else {
          g = Vector::Zero(d);
          for (std::size_t i : batch) model.add_component_gradient(i, x, scale, g);
        }
        queries_ += batch_;
        break;

      case EstimatorKind::SVRG:
        if (refresh) {
          anchor_ = x;
          anchor_grad_ = model.gradient_full(x);
          queries_ += n_;
        }
        if (full_batch) {
          g = model.gradient_full(x);
        } else {
          g = anchor_grad_;
          for (std::size_t i : batch) {
            model.add_component_gradient(i, x, scale, g);
            model.add_component_gradient(i, anchor_, -scale, g);
          }
        }
        queries_ += 2 * batch_;
        break;

      case EstimatorKind::SARAH:
        if (refresh) {
          g = model.gradient_full(x);
          queries_ += n_;
        } else {
          if (full_batch) {
            g = model.gradient_full(x);
          } else {
            g = prev_estimate_;
            for (std::size_t i : batch) {
              model.add_component_gradient(i, x, scale, g);
              model.add_component_gradient(i, prev_x_, -scale, g);
            }
          }
          queries_ += 2 * batch_;
        }
        prev_x_ = x;
        prev_estimate_ = g;
        break;

      case EstimatorKind::SAGA: {
        Vector delta = Vector::Zero(d);
        Vector fresh(d);
        for (std::size_t i : batch) {
          const auto ii = static_cast<Eigen::Index>(i);
          fresh.setZero();
          model.add_component_gradient(i, x, 1.0, fresh);
          delta += fresh - table_.col(ii);
          table_.col(ii) = fresh;
        }
        g = full_batch ? model.gradient_full(x) : Vector(table_sum_ + scale * delta);
        table_sum_ += delta;
        queries_ += batch_;
        after_table_update();
        break;
      }

      case EstimatorKind::SARGE: {
        const double keep = 1.0 - static_cast<double>(batch_) / static_cast<double>(n_);
        Vector delta = Vector::Zero(d);
        Vector fresh(d);
        for (std::size_t i : batch) {
          const auto ii = static_cast<Eigen::Index>(i);
          fresh.setZero();
          model.add_component_gradient(i, x, 1.0, fresh);
          model.add_component_gradient(i, prev_x_, -keep, fresh);
          delta += fresh - table_.col(ii);
          table_.col(ii) = fresh;
        }
        g = full_batch ? model.gradient_full(x)
                       : Vector(table_sum_ + scale * delta + keep * prev_estimate_);
        table_sum_ += delta;
        queries_ += 2 * batch_;
        after_table_update();
        prev_x_ = x;
        prev_estimate_ = g;
        break;
      }
    }
    last_estimate_ = g;
    ++steps_;
    return g;
  }

  /// Recomputes the SAGA/SARGE running sum from the table.
  void resync_table_sum() {
    if (table_.size() > 0) table_sum_ = table_.rowwise().sum();
  }

  EstimatorKind kind() const noexcept { return kind_; }
  std::size_t n_components() const noexcept { return n_; }
  std::size_t batch_size() const noexcept { return batch_; }
  std::size_t epoch_length() const noexcept { return epoch_; }
  bool initialized() const noexcept { return initialized_; }
  std::uint64_t query_count() const noexcept { return queries_; }
  std::uint64_t steps() const noexcept { return steps_; }

  /// Most recent estimate returned (empty before the first call; for SARAH and
  /// SARGE the initial full gradient).
  const Vector& last_estimate() const noexcept {
    return prev_estimate_.size() > 0 ? prev_estimate_ : last_estimate_;
  }
  const Matrix& table() const noexcept { return table_; }
  const Vector& table_sum() const noexcept { return table_sum_; }
  const Vector& anchor() const noexcept { return anchor_; }
  const Vector& anchor_gradient() const noexcept { return anchor_grad_; }
  const Vector& previous_iterate() const noexcept { return prev_x_; }

  static constexpr std::uint64_t kResyncInterval = 10000;

 private:
  void require_initialized() const {
    if (!initialized_) throw std::logic_error("estimator used before init_estimator");
  }

  void after_table_update() {
    if ((steps_ + 1) % kResyncInterval == 0) resync_table_sum();
  }

  EstimatorKind kind_ = EstimatorKind::Full;
  std::size_t n_ = 0;
  std::size_t batch_ = 0;
  std::size_t epoch_ = 1;
  bool initialized_ = false;
  std::uint64_t queries_ = 0;
  std::uint64_t steps_ = 0;

  Vector anchor_;
  Vector anchor_grad_;
  Matrix table_;  // d x N
  Vector table_sum_;
  Vector prev_x_;
  Vector prev_estimate_;
  Vector last_estimate_;
};

template <PotentialModel M>
GradientEstimator init_estimator(EstimatorKind kind, const M& model, const Vector& x0,
                                 std::size_t batch, std::size_t epoch) {
  return GradientEstimator::init(kind, model, x0, batch, epoch);
}

// ---------------------------------------------------------------------------
// Diagnostics

/// Q = N * sum_i ||grad f_i(x_next) - grad f_i(x)||^2.
template <PotentialModel M>
double q_metric(const M& model, const Vector& x, const Vector& x_next) {
  detail::check_dim(x, model.dimension(), "q_metric");
  detail::check_dim(x_next, model.dimension(), "q_metric");
  const auto d = static_cast<Eigen::Index>(model.dimension());
  Vector diff(d);
  double s = 0.0;
  for (std::size_t i = 0; i < model.n_components(); ++i) {
    diff.setZero();
    model.add_component_gradient(i, x_next, 1.0, diff);
    model.add_component_gradient(i, x, -1.0, diff);
    s += diff.squaredNorm();
  }
  return static_cast<double>(model.n_components()) * s;
}

inline double binomial_coefficient(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  k = std::min(k, n - k);
  double c = 1.0;
  for (std::size_t j = 1; j <= k; ++j) {
    c = c * static_cast<double>(n - k + j) / static_cast<double>(j);
  }
  return c;
}

inline constexpr double kEnumerationLimit = 1e4;

/// Exact E_k[estimate at x_next] by enumerating every batch (and both refresh
/// outcomes for SVRG/SARAH, weighted 1/p and 1 - 1/p). `state` must be the
/// estimator as it stands after producing its estimate at x_prev; it is not
/// modified.
template <PotentialModel M>
Vector conditional_mean_oracle(const GradientEstimator& state, const M& model,
                               const Vector& x_prev, const Vector& x_next) {
  if (!state.initialized()) {
    throw std::logic_error("conditional_mean_oracle: uninitialized estimator");
  }
  detail::check_dim(x_prev, model.dimension(), "conditional_mean_oracle");
  detail::check_dim(x_next, model.dimension(), "conditional_mean_oracle");
  const EstimatorKind kind = state.kind();
  if ((kind == EstimatorKind::SARAH || kind == EstimatorKind::SARGE) &&
      state.previous_iterate() != x_prev) {
    throw std::invalid_argument(
        "conditional_mean_oracle: x_prev does not match the estimator's stored iterate");
  }
  const std::size_t n = state.n_components();
  const std::size_t b = state.batch_size();
  const auto d = static_cast<Eigen::Index>(model.dimension());

  if (kind == EstimatorKind::Full) {
    GradientEstimator copy = state;
    return copy.estimate_with(model, x_next, {}, false);
  }
  const double combos = binomial_coefficient(n, b);
  if (combos > kEnumerationLimit) {
    throw std::invalid_argument("conditional_mean_oracle: C(N, b) = " +
                                std::to_string(combos) + " exceeds enumeration limit");
  }

  struct Branch {
    bool refresh;
    double weight;
  };
  std::vector<Branch> branches;
  if (uses_epoch(kind)) {
    const double pr = 1.0 / static_cast<double>(state.epoch_length());
    branches.push_back({true, pr});
    if (pr < 1.0) branches.push_back({false, 1.0 - pr});
  } else {
    branches.push_back({false, 1.0});
  }

  Vector mean = Vector::Zero(d);
  std::vector<std::size_t> batch(b);
  std::iota(batch.begin(), batch.end(), std::size_t{0});
  const double w_batch = 1.0 / combos;
  while (true) {
    for (const Branch& br : branches) {
      GradientEstimator copy = state;
      mean += (br.weight * w_batch) * copy.estimate_with(model, x_next, batch, br.refresh);
    }
    // next combination in lexicographic order
    std::size_t pos = b;
    while (pos > 0 && batch[pos - 1] == n - b + (pos - 1)) --pos;
    if (pos == 0) break;
    ++batch[pos - 1];
    for (std::size_t j = pos; j < b; ++j) batch[j] = batch[j - 1] + 1;
  }
  return mean;
}

/// grad f(x_next) - E_k[estimate at x_next].
template <PotentialModel M>
Vector bias_residual(const GradientEstimator& state, const M& model, const Vector& x_prev,
                     const Vector& x_next) {
  return model.gradient_full(x_next) - conditional_mean_oracle(state, model, x_prev, x_next);
}

/// Expected cumulative queries after `steps` estimator calls, including the
/// initialization pass.
inline double expected_queries(EstimatorKind kind, std::size_t n, std::size_t b,
                               std::size_t p, std::uint64_t steps) {
  const double N = static_cast<double>(n);
  const double B = static_cast<double>(b);
  const double K = static_cast<double>(steps);
  const double P = static_cast<double>(p);
  switch (kind) {
    case EstimatorKind::Full: return N * K;
    case EstimatorKind::SG: return B * K;
    case EstimatorKind::SAGA: return N + B * K;
    case EstimatorKind::SVRG: return N + K * (N / P + 2.0 * B);
    case EstimatorKind::SARAH: return N + K * (N / P + (1.0 - 1.0 / P) * 2.0 * B);
    case EstimatorKind::SARGE: return N + 2.0 * B * K;
  }
  return 0.0;
}

}  // namespace vrhmc
