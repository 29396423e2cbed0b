#include <cmath>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace vrhmc;

namespace {

SamplerConfig basic(EstimatorKind k, std::uint64_t iters) {
  SamplerConfig c;
  c.estimator = k;
  c.batch = 2;
  c.epoch = 5;
  c.dynamics = {2.0, 0.5, 0.05};
  c.iterations = iters;
  c.seed = 42;
  c.gradient_error = true;
  return c;
}

}  // namespace

TEST(RunChain, ZeroIterationsRecordsInitialState) {
  const auto model = testutil::small_quadratic(1, 10, 2);
  auto c = basic(EstimatorKind::Full, 0);
  c.x0 = Vector::Ones(2);
  const RunRecord r = run_chain(c, model);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].iter, 0u);
  EXPECT_EQ(r.rows[0].queries, 0u);
  EXPECT_DOUBLE_EQ(r.rows[0].potential, model.potential(Vector::Ones(2)));
  EXPECT_EQ(r.iterations, 0u);
}

TEST(RunChain, RowsStrideAndQueryColumn) {
  const auto model = testutil::small_quadratic(2, 10, 2);
  for (EstimatorKind k : kAllEstimators) {
    auto c = basic(k, 103);
    c.stride = 10;
    const RunRecord r = run_chain(c, model);
    ASSERT_EQ(r.rows.size(), 12u) << to_string(k);  // 0,10,...,100 plus the final 103
    EXPECT_EQ(r.rows.back().iter, 103u);
    EXPECT_EQ(r.rows.back().queries, r.total_queries);
    EXPECT_FALSE(r.rows.back().grad_err_sq.has_value());
    for (std::size_t j = 1; j < r.rows.size(); ++j) {
      EXPECT_GT(r.rows[j].iter, r.rows[j - 1].iter);
      EXPECT_GE(r.rows[j].queries, r.rows[j - 1].queries);
    }
    // row 0 carries the initialization cost only
    const std::uint64_t init = (k == EstimatorKind::Full || k == EstimatorKind::SG) ? 0 : 10;
    EXPECT_EQ(r.rows[0].queries, init) << to_string(k);
  }
}

TEST(RunChain, ReproducibleAndChainDependent) {
  const auto model = testutil::small_logistic(3, 12, 3);
  const auto c = basic(EstimatorKind::SAGA, 200);
  const RunRecord a = run_chain(c, model, 0);
  const RunRecord b = run_chain(c, model, 0);
  const RunRecord other = run_chain(c, model, 1);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t j = 0; j < a.rows.size(); ++j) {
    EXPECT_EQ(a.rows[j].potential, b.rows[j].potential);
    EXPECT_EQ(a.rows[j].grad_err_sq, b.rows[j].grad_err_sq);
  }
  EXPECT_NE(a.rows.back().potential, other.rows.back().potential);
}

TEST(RunChain, QueryBudgetStops) {
  const auto model = testutil::small_quadratic(4, 20, 2);
  auto c = basic(EstimatorKind::SVRG, 0);
  c.query_budget = 500;
  const RunRecord r = run_chain(c, model);
  EXPECT_GE(r.total_queries, 500u);
  // the last step cost at most 2b + N
  EXPECT_LT(r.total_queries, 500u + 2 * 2 + 20);
}

TEST(RunChain, DivergenceIsReported) {
  const auto model = QuadraticPotential::synthetic(1, 100, 3, 10.0, 1.0);
  SamplerConfig c;
  c.estimator = EstimatorKind::Full;
  c.dynamics = {0.01, 1.0, 50.0};
  c.iterations = 1000;
  try {
    run_chain(c, model, 3);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.chain(), 3u);
    EXPECT_NEAR(e.delta(), 0.5, 1e-12);
    EXPECT_LT(e.step(), 1000u);
  }
}

TEST(RunChain, ObservableAndMomentaAreRecorded) {
  const auto model = testutil::small_quadratic(5, 10, 2);
  auto c = basic(EstimatorKind::SG, 30);
  c.keep_samples = true;
  c.keep_momenta = true;
  c.q_metric = true;
  const RunRecord r =
      run_chain(c, model, 0, [](const Vector& x) { return x.sum(); });
  ASSERT_EQ(r.positions.size(), r.rows.size());
  ASSERT_EQ(r.momenta.size(), r.rows.size());
  EXPECT_EQ(r.momenta.front(), Vector::Zero(2));
  for (std::size_t j = 0; j < r.rows.size(); ++j) {
    EXPECT_DOUBLE_EQ(*r.rows[j].extra, r.positions[j].sum());
  }
  EXPECT_TRUE(r.rows[3].q_k.has_value());
}

TEST(RunChain, InvalidConfig) {
  const auto model = testutil::small_quadratic(5, 10, 2);
  auto c = basic(EstimatorKind::SG, 10);
  c.burn_in = 10;
  EXPECT_THROW(run_chain(c, model), std::invalid_argument);
  c.burn_in = 0;
  c.stride = 0;
  EXPECT_THROW(run_chain(c, model), std::invalid_argument);
  c.stride = 1;
  c.x0 = Vector::Zero(3);
  EXPECT_THROW(run_chain(c, model), std::invalid_argument);
  c.x0 = Vector();
  c.batch = 11;
  EXPECT_THROW(run_chain(c, model), std::invalid_argument);
}

// Full gradient on a quadratic: the chain is a linear Gaussian recursion.
TEST(RunChain, StationaryMomentsMatchLyapunov) {
  const auto model = QuadraticPotential::synthetic(3, 50, 2, 4.0, 1.0);
  SamplerConfig c;
  c.estimator = EstimatorKind::Full;
  c.dynamics = {2.0, 1.0 / model.smoothness(), 0.2};
  c.iterations = 400000;
  c.burn_in = 2000;
  c.keep_momenta = false;
  c.x0 = model.data_mean();
  const RunRecord r = run_chain(c, model);
  const auto oracle =
      testutil::lyapunov_oracle(2.0 * model.precision(), noise_coefficients(c.dynamics));
  const Matrix sx = oracle.cov.topLeftCorner(2, 2);
  EXPECT_LT((r.covariance - sx).norm(), 0.1 * sx.norm());
  // mean within 5 sigma using a generous effective sample size of 1/50
  const double n_eff = (c.iterations - c.burn_in) / 50.0;
  for (int i = 0; i < 2; ++i) {
    EXPECT_NEAR(r.mean(i), model.data_mean()(i), 5 * std::sqrt(sx(i, i) / n_eff));
  }
}

TEST(Ensemble, ThreadCountDoesNotChangeResults) {
  const auto model = testutil::small_logistic(6, 15, 2);
  auto c = basic(EstimatorKind::SARGE, 300);
  c.chains = 5;
  c.threads = 1;
  const auto a = run_ensemble(c, model);
  c.threads = 3;
  const auto b = run_ensemble(c, model);
  ASSERT_EQ(a.chains.size(), 5u);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(a.chains[k].rows.back().potential, b.chains[k].rows.back().potential);
  }
  EXPECT_EQ(a.aggregate.rows.size(), b.aggregate.rows.size());
  EXPECT_EQ(a.aggregate.rows.back().potential, b.aggregate.rows.back().potential);
}

TEST(Ensemble, LowestFailingChainIsRethrown) {
  const auto model = QuadraticPotential::synthetic(1, 100, 3, 10.0, 1.0);
  SamplerConfig c;
  c.estimator = EstimatorKind::Full;
  c.dynamics = {0.01, 1.0, 50.0};
  c.iterations = 1000;
  c.chains = 4;
  c.threads = 2;
  try {
    run_ensemble(c, model);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.chain(), 0u);
  }
}

TEST(Aggregate, AlignsOnQueries) {
  RunRecord a, b;
  auto row = [](std::uint64_t it, std::uint64_t q, double pot) {
    RecordRow r;
    r.iter = it;
    r.queries = q;
    r.potential = pot;
    return r;
  };
  a.rows = {row(0, 0, 1.0), row(1, 10, 2.0), row(2, 20, 3.0), row(3, 30, 4.0)};
  b.rows = {row(0, 0, 5.0), row(1, 15, 6.0), row(2, 25, 7.0)};
  for (RunRecord* r : {&a, &b}) {
    r->mean = Vector::Zero(1);
    r->covariance = Matrix::Zero(1, 1);
  }
  const RunRecord agg = aggregate_records({a, b});
  // reference grid of chain a truncated at b's final 25 queries
  ASSERT_EQ(agg.rows.size(), 3u);
  EXPECT_DOUBLE_EQ(agg.rows[0].potential, 3.0);
  EXPECT_DOUBLE_EQ(agg.rows[1].potential, (2.0 + 5.0) / 2);
  EXPECT_DOUBLE_EQ(agg.rows[2].potential, (3.0 + 6.0) / 2);
  EXPECT_THROW(aggregate_records({}), std::invalid_argument);
}

TEST(Wasserstein, TrackerNeedsSamplesAndEnoughChains) {
  const auto model = QuadraticPotential::synthetic(2, 20, 2, 4.0, 1.0);
  const auto tm = target_moments(model);
  const GaussianSummary target(tm.mean, tm.covariance);
  SamplerConfig c;
  c.estimator = EstimatorKind::Full;
  c.dynamics = default_dynamics(model, 0.1);
  c.iterations = 200;
  c.chains = 2;
  auto ens = run_ensemble(c, model);
  EXPECT_THROW(wasserstein_tracker(ens.chains, target), std::invalid_argument);
  c.keep_samples = true;
  ens = run_ensemble(c, model);
  EXPECT_THROW(wasserstein_tracker(ens.chains, target), std::invalid_argument);
  c.chains = 8;
  ens = run_ensemble(c, model);
  const auto w2 = wasserstein_tracker(ens.chains, target);
  EXPECT_EQ(w2.size(), ens.chains[0].rows.size());
  for (const auto& p : w2) EXPECT_TRUE(std::isfinite(p.w2));
  EXPECT_GE(pooled_w2(ens.chains, target, 100), 0.0);
}

TEST(Advisory, StepBound) {
  EXPECT_DOUBLE_EQ(theoretical_step_bound(1.0, 1.0, 0.0), 0.1);
  EXPECT_DOUBLE_EQ(theoretical_step_bound(20.0, 10.0, 0.0), 1.0 / 2000.0);
  const double theta = mseb_descriptor(EstimatorKind::SAGA, 1000, 1, 1).theta();
  EXPECT_NEAR(theoretical_step_bound(1.0, 1.0, theta), 0.1 / std::sqrt(6e6), 1e-15);
  EXPECT_EQ(theoretical_step_bound(1.0, 1.0, std::numeric_limits<double>::infinity()), 0.0);
}
