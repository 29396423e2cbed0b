#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "vrhmc/estimator.hpp"
#include "vrhmc/integrator.hpp"
#include "vrhmc/metrics.hpp"
#include "vrhmc/potential.hpp"
#include "vrhmc/random.hpp"
#include "vrhmc/record.hpp"

namespace vrhmc {

struct SamplerConfig {
  EstimatorKind estimator = EstimatorKind::Full;
  std::size_t batch = 1;
  /// Average refresh interval for SVRG/SARAH; 0 selects N/b.
  std::size_t epoch = 0;
  DynamicsParams dynamics;

  /// Iteration budget K (0 = bounded by `query_budget` only).
  std::uint64_t iterations = 0;
  /// Stop once cumulative gradient queries reach this value (0 = unused).
  std::uint64_t query_budget = 0;
  std::uint64_t burn_in = 0;
  std::uint64_t stride = 1;

  bool gradient_error = false;
  bool q_metric = false;
  bool keep_samples = false;
  bool keep_momenta = false;

  std::uint64_t seed = 0;
  std::size_t chains = 1;
  /// Worker threads for ensembles (0 = hardware concurrency).
  std::size_t threads = 0;
  /// Initial position; empty means the origin. Initial momentum is always 0.
  Vector x0;

  std::size_t resolved_epoch(std::size_t n) const noexcept {
    if (epoch > 0) return epoch;
    return std::max<std::size_t>(1, n / std::max<std::size_t>(1, batch));
  }

  void validate() const {
    dynamics.validate();
    if (iterations == 0 && query_budget == 0) {
      // K = 0 is a valid (empty) run; nothing further to check.
      if (burn_in != 0) throw std::invalid_argument("SamplerConfig: burn-in must be < K");
    } else if (iterations > 0 && burn_in >= iterations) {
      throw std::invalid_argument("SamplerConfig: burn-in must be < K");
    }
    if (stride < 1) throw std::invalid_argument("SamplerConfig: stride must be >= 1");
    if (chains < 1) throw std::invalid_argument("SamplerConfig: need at least one chain");
  }
};

/// Default dynamics: gamma = 2, xi = 1/L.
template <PotentialModel M>
DynamicsParams default_dynamics(const M& model, double step) {
  return {2.0, 1.0 / model.smoothness(), step};
}

/// Raised when an iterate stops being finite or runs away.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::uint64_t step, double delta, std::size_t chain)
      : std::runtime_error("chain " + std::to_string(chain) + " diverged at step " +
                           std::to_string(step) + " (delta = gamma*xi*h = " +
                           std::to_string(delta) + ")"),
        step_(step),
        delta_(delta),
        chain_(chain) {}

  std::uint64_t step() const noexcept { return step_; }
  double delta() const noexcept { return delta_; }
  std::size_t chain() const noexcept { return chain_; }

 private:
  std::uint64_t step_;
  double delta_;
  std::size_t chain_;
};

/// Optional per-row observable stored in RecordRow::extra.
using RowObservable = std::function<double(const Vector&)>;

inline constexpr double kDivergenceFactor = 1e6;

namespace detail {

/// Post-burn-in accumulator of potential and position moments.
class MomentAccumulator {
 public:
  void add(double potential, const Vector& x) {
    ++n_;
    const double w = 1.0 / static_cast<double>(n_);
    potential_mean_ += (potential - potential_mean_) * w;
    if (mean_.size() == 0) {
      mean_ = Vector::Zero(x.size());
      m2_ = Matrix::Zero(x.size(), x.size());
    }
    const Vector dx = x - mean_;
    mean_ += dx * w;
    m2_.noalias() += dx * (x - mean_).transpose();
  }

  std::size_t count() const noexcept { return n_; }
  double potential_mean() const noexcept { return potential_mean_; }

  void finish(RunRecord& r, std::size_t d) const {
    r.post_burn_in_rows = n_;
    r.mean_potential = potential_mean_;
    r.mean = n_ > 0 ? mean_ : Vector::Zero(static_cast<Eigen::Index>(d));
    if (n_ > 1) {
      Matrix c = m2_ / static_cast<double>(n_ - 1);
      r.covariance = 0.5 * (c + c.transpose());
    } else {
      r.covariance = Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    }
  }

 private:
  std::size_t n_ = 0;
  double potential_mean_ = 0.0;
  Vector mean_;
  Matrix m2_;
};

}  // namespace detail

/// Runs one chain of the variance-reduced HMC loop: estimator call, exact
/// integrator step, diagnostics every `stride` iterations.
template <PotentialModel M>
RunRecord run_chain(const SamplerConfig& config, const M& model, std::size_t chain_id = 0,
                    const RowObservable& observable = {}) {
  config.validate();
  const auto wall_start = std::chrono::steady_clock::now();
  const std::size_t d = model.dimension();
  const std::size_t n = model.n_components();
  const std::size_t epoch = config.resolved_epoch(n);

  Engine batch_rng = make_engine(config.seed, chain_id, Stream::Batch);
  Engine noise_rng = make_engine(config.seed, chain_id, Stream::Noise);

  ChainState state;
  state.x = config.x0.size() > 0 ? config.x0 : Vector::Zero(static_cast<Eigen::Index>(d));
  detail::check_dim(state.x, d, "run_chain x0");
  state.v = Vector::Zero(static_cast<Eigen::Index>(d));

  GradientEstimator est = init_estimator(config.estimator, model, state.x, config.batch, epoch);
  const NoiseCoefficients coeffs = noise_coefficients(config.dynamics);
  const double runaway = kDivergenceFactor * std::max(1.0, state.x.norm());

  RunRecord rec;
  rec.burn_in = config.burn_in;
  detail::MomentAccumulator acc;

  auto push_row = [&](std::uint64_t k, std::uint64_t queries, const Vector& x, const Vector& v,
                      std::optional<double> err, std::optional<double> q) {
    RecordRow row;
    row.iter = k;
    row.queries = queries;
    row.potential = model.potential(x);
    row.grad_err_sq = err;
    row.q_k = q;
    if (k >= config.burn_in) {
      acc.add(row.potential, x);
      row.running_mean_potential = acc.potential_mean();
    }
    if (observable) row.extra = observable(x);
    rec.rows.push_back(row);
    if (config.keep_samples) rec.positions.push_back(x);
    if (config.keep_momenta) rec.momenta.push_back(v);
  };

  auto done = [&](std::uint64_t k) {
    if (config.iterations > 0 && k >= config.iterations) return true;
    if (config.query_budget > 0 && est.query_count() >= config.query_budget) return true;
    return config.iterations == 0 && config.query_budget == 0;
  };

  std::uint64_t k = 0;
  while (!done(k)) {
    const std::uint64_t queries_before = est.query_count();
    const Vector g = est.estimate(model, state.x, batch_rng);
    const bool recorded = k % config.stride == 0;

    std::optional<double> err;
    if (recorded && config.gradient_error) err = (g - model.gradient_full(state.x)).squaredNorm();

    ChainState next = step(state, g, coeffs, noise_rng);
    if (!next.x.allFinite() || !next.v.allFinite() || next.x.norm() > runaway) {
      throw DivergenceError(k, config.dynamics.delta(), chain_id);
    }

    if (recorded) {
      std::optional<double> q;
      if (config.q_metric) q = q_metric(model, state.x, next.x);
      push_row(k, queries_before, state.x, state.v, err, q);
    }
    state = std::move(next);
    ++k;
  }
  push_row(k, est.query_count(), state.x, state.v, std::nullopt, std::nullopt);

  rec.iterations = k;
  rec.total_queries = est.query_count();
  acc.finish(rec, d);
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  return rec;
}

struct EnsembleResult {
  std::vector<RunRecord> chains;
  /// Pointwise mean over chains, aligned on cumulative gradient queries.
  RunRecord aggregate;
};

/// Aligns chains on the query column of chain 0 (truncated to the smallest
/// final query count) and averages each column; a chain contributes its last
/// row at or below each reference query value.
inline RunRecord aggregate_records(const std::vector<RunRecord>& chains) {
  if (chains.empty()) throw std::invalid_argument("aggregate_records: no chains");
  if (chains.size() == 1) return chains.front();

  const RunRecord& ref = chains.front();
  std::uint64_t qmax = std::numeric_limits<std::uint64_t>::max();
  for (const RunRecord& c : chains) {
    if (c.rows.empty()) throw std::invalid_argument("aggregate_records: empty chain");
    qmax = std::min(qmax, c.rows.back().queries);
  }

  RunRecord out;
  out.burn_in = ref.burn_in;
  std::vector<std::size_t> cursor(chains.size(), 0);
  for (const RecordRow& r : ref.rows) {
    if (r.queries > qmax) break;
    RecordRow agg;
    agg.iter = r.iter;
    agg.queries = r.queries;
    double pot = 0.0;
    double err = 0.0, q = 0.0, run = 0.0, ext = 0.0;
    std::size_t nerr = 0, nq = 0, nrun = 0, next = 0;
    bool ok = true;
    for (std::size_t c = 0; c < chains.size(); ++c) {
      const auto& rows = chains[c].rows;
      std::size_t& j = cursor[c];
      while (j + 1 < rows.size() && rows[j + 1].queries <= r.queries) ++j;
      if (rows[j].queries > r.queries) {
        ok = false;
        break;
      }
      const RecordRow& s = rows[j];
      pot += s.potential;
      if (s.grad_err_sq) { err += *s.grad_err_sq; ++nerr; }
      if (s.q_k) { q += *s.q_k; ++nq; }
      if (s.running_mean_potential) { run += *s.running_mean_potential; ++nrun; }
      if (s.extra) { ext += *s.extra; ++next; }
    }
    if (!ok) continue;
    const double nc = static_cast<double>(chains.size());
    agg.potential = pot / nc;
    if (nerr) agg.grad_err_sq = err / static_cast<double>(nerr);
    if (nq) agg.q_k = q / static_cast<double>(nq);
    if (nrun) agg.running_mean_potential = run / static_cast<double>(nrun);
    if (next) agg.extra = ext / static_cast<double>(next);
    out.rows.push_back(agg);
  }

  double mp = 0.0, wall = 0.0, iters = 0.0, queries = 0.0;
  std::size_t post = 0;
  Vector mean = Vector::Zero(ref.mean.size());
  Matrix cov = Matrix::Zero(ref.covariance.rows(), ref.covariance.cols());
  for (const RunRecord& c : chains) {
    mp += c.mean_potential;
    mean += c.mean;
    cov += c.covariance;
    wall += c.wall_seconds;
    iters += static_cast<double>(c.iterations);
    queries += static_cast<double>(c.total_queries);
    post += c.post_burn_in_rows;
  }
  const double nc = static_cast<double>(chains.size());
  out.mean_potential = mp / nc;
  out.mean = mean / nc;
  out.covariance = cov / nc;
  out.wall_seconds = wall;
  out.iterations = static_cast<std::uint64_t>(std::llround(iters / nc));
  out.total_queries = static_cast<std::uint64_t>(std::llround(queries / nc));
  out.post_burn_in_rows = post / chains.size();
  return out;
}

/// Independent chains 0..C-1 with per-chain derived seeds, possibly run
/// concurrently. Divergence of any chain is rethrown after all workers stop.
template <PotentialModel M>
EnsembleResult run_ensemble(const SamplerConfig& config, const M& model,
                            const RowObservable& observable = {}) {
  config.validate();
  EnsembleResult result;
  result.chains.resize(config.chains);

  std::size_t workers = config.threads > 0 ? config.threads
                                           : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, config.chains);

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  std::size_t first_error_chain = std::numeric_limits<std::size_t>::max();

  auto work = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= config.chains) return;
      try {
        result.chains[c] = run_chain(config, model, c, observable);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (c < first_error_chain) {
          first_error_chain = c;
          first_error = std::current_exception();
        }
      }
    }
  };

  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  result.aggregate = aggregate_records(result.chains);
  return result;
}

// ---------------------------------------------------------------------------
// Wasserstein tracking (Gaussian approximation of the chain law)

struct W2Point {
  std::uint64_t iter = 0;
  double queries = 0.0;
  double w2 = 0.0;
};

/// At each recorded row index, fits a Gaussian to the positions pooled across
/// chains and returns its Bures-Wasserstein distance to the target. Exact for
/// the law of x_k only when that law is Gaussian (quadratic targets).
inline std::vector<W2Point> wasserstein_tracker(const std::vector<RunRecord>& chains,
                                                const GaussianSummary& target) {
  if (chains.empty()) throw std::invalid_argument("wasserstein_tracker: no chains");
  std::size_t rows = std::numeric_limits<std::size_t>::max();
  for (const RunRecord& c : chains) {
    if (c.positions.size() != c.rows.size()) {
      throw std::invalid_argument("wasserstein_tracker: chains were run without keep_samples");
    }
    rows = std::min(rows, c.rows.size());
  }
  const Eigen::Index d = target.dimension();
  if (static_cast<Eigen::Index>(chains.size()) < d + 1) {
    throw std::invalid_argument("wasserstein_tracker: need at least d + 1 chains per checkpoint");
  }
  std::vector<W2Point> out;
  out.reserve(rows);
  Matrix pooled(d, static_cast<Eigen::Index>(chains.size()));
  for (std::size_t j = 0; j < rows; ++j) {
    double q = 0.0;
    for (std::size_t c = 0; c < chains.size(); ++c) {
      pooled.col(static_cast<Eigen::Index>(c)) = chains[c].positions[j];
      q += static_cast<double>(chains[c].rows[j].queries);
    }
    out.push_back({chains.front().rows[j].iter, q / static_cast<double>(chains.size()),
                   bures_w2(fit_gaussian(pooled), target)});
  }
  return out;
}

/// Gaussian fit of all retained positions with iter >= from_iter, pooled over
/// chains and time.
inline GaussianSummary pooled_position_summary(const std::vector<RunRecord>& chains,
                                               std::uint64_t from_iter) {
  std::size_t count = 0;
  Eigen::Index d = 0;
  for (const RunRecord& c : chains) {
    if (c.positions.size() != c.rows.size()) {
      throw std::invalid_argument("pooled_position_summary: chains were run without keep_samples");
    }
    for (std::size_t j = 0; j < c.rows.size(); ++j) {
      if (c.rows[j].iter >= from_iter) {
        ++count;
        d = c.positions[j].size();
      }
    }
  }
  if (count == 0) throw std::invalid_argument("pooled_position_summary: no samples");
  Matrix pooled(d, static_cast<Eigen::Index>(count));
  Eigen::Index col = 0;
  for (const RunRecord& c : chains) {
    for (std::size_t j = 0; j < c.rows.size(); ++j) {
      if (c.rows[j].iter >= from_iter) pooled.col(col++) = c.positions[j];
    }
  }
  return fit_gaussian(pooled);
}

/// Converged W2 floor: distance between the pooled post-burn-in fit and the target.
inline double pooled_w2(const std::vector<RunRecord>& chains, const GaussianSummary& target,
                        std::uint64_t from_iter) {
  return bures_w2(pooled_position_summary(chains, from_iter), target);
}

/// Same on the coupled coordinate q = (x, x + v); needs retained momenta.
inline double pooled_w2_coupled(const std::vector<RunRecord>& chains,
                                const GaussianSummary& target, double xi,
                                std::uint64_t from_iter) {
  std::vector<Vector> qs;
  for (const RunRecord& c : chains) {
    if (c.momenta.size() != c.rows.size() || c.positions.size() != c.rows.size()) {
      throw std::invalid_argument("pooled_w2_coupled: need retained positions and momenta");
    }
    for (std::size_t j = 0; j < c.rows.size(); ++j) {
      if (c.rows[j].iter < from_iter) continue;
      Vector q(2 * c.positions[j].size());
      q << c.positions[j], c.positions[j] + c.momenta[j];
      qs.push_back(std::move(q));
    }
  }
  if (qs.empty()) throw std::invalid_argument("pooled_w2_coupled: no samples");
  Matrix pooled(qs.front().size(), static_cast<Eigen::Index>(qs.size()));
  for (std::size_t j = 0; j < qs.size(); ++j) pooled.col(static_cast<Eigen::Index>(j)) = qs[j];
  return bures_w2(fit_gaussian(pooled), coupled_target(target, xi));
}

// ---------------------------------------------------------------------------
// Step-size advisory

/// Largest h allowed by L h <= min(1, 1/sqrt(Theta)) / (10 kappa); 0 when
/// Theta is infinite (no MSEB descriptor).
inline double theoretical_step_bound(double smoothness, double kappa, double theta) {
  if (!std::isfinite(theta)) return 0.0;
  const double f = theta > 1.0 ? 1.0 / std::sqrt(theta) : 1.0;
  return f / (10.0 * kappa * smoothness);
}

}  // namespace vrhmc
