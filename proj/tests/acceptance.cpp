// Acceptance checks, one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "test_util.hpp"

using namespace vrhmc;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// 1. Stationary covariance of (x, v) against the discrete Lyapunov fixed point.

constexpr double kC1Tolerance = 0.02;
constexpr std::uint64_t kC1Steps = 1000000;
constexpr std::uint64_t kC1BurnIn = 2000;
constexpr double kC1Seconds = 30;

Outcome criterion1() {
  Matrix data(1, 10);
  for (Eigen::Index j = 0; j < 10; ++j) data(0, j) = 0.3 * static_cast<double>(j) - 1.0;
  const QuadraticPotential model(data, Matrix::Constant(1, 1, 1.0));
  SamplerConfig c;
  c.estimator = EstimatorKind::Full;
  c.dynamics = {2.0, 1.0 / model.smoothness(), 0.5};
  c.iterations = kC1BurnIn + kC1Steps;
  c.burn_in = kC1BurnIn;
  c.keep_samples = true;
  c.keep_momenta = true;
  c.seed = 101;
  c.x0 = model.data_mean();
  const RunRecord r = run_chain(c, model);

  Eigen::Matrix2d m = Eigen::Matrix2d::Zero();
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  std::size_t count = 0;
  for (std::size_t j = 0; j < r.rows.size(); ++j) {
    if (r.rows[j].iter < kC1BurnIn) continue;
    const Eigen::Vector2d z(r.positions[j](0) - model.data_mean()(0), r.momenta[j](0));
    mean += z;
    m += z * z.transpose();
    ++count;
  }
  mean /= static_cast<double>(count);
  const Eigen::Matrix2d emp = m / static_cast<double>(count) - mean * mean.transpose();
  const auto oracle = testutil::lyapunov_oracle(2.0 * model.precision(), noise_coefficients(c.dynamics));
  const double rel = (emp - oracle.cov).norm() / oracle.cov.norm();
  return {rel <= kC1Tolerance && count >= kC1Steps,
          "relative Frobenius error " + fmt(rel) + " over " + std::to_string(count) +
              " steps (tolerance " + fmt(kC1Tolerance) + ")"};
}

// ---------------------------------------------------------------------------
// 2. Noise covariance by sampling and PSD on a grid.

constexpr int kC2Draws = 1000000;
constexpr double kC2Sigmas = 5.0;
constexpr double kC2Seconds = 60;

Outcome criterion2() {
  double worst = 0.0;
  for (double h : {0.01, 0.1, 1.0}) {
    const auto c = noise_coefficients({2.0, 1.0, h});
    Engine rng = make_engine(202, static_cast<std::uint64_t>(h * 1000), Stream::Noise);
    // coordinates of one draw are independent, so a single wide draw gives
    // kC2Draws samples of the 2x2 block
    const auto e = sample_noise(c, kC2Draws, rng);
    const double n = kC2Draws;
    const double sxx = e.e_x.squaredNorm() / n;
    const double svv = e.e_v.squaredNorm() / n;
    const double sxv = e.e_x.dot(e.e_v) / n;
    const double se_xx = std::sqrt(2.0 / n) * c.s_xx;
    const double se_vv = std::sqrt(2.0 / n) * c.s_vv;
    const double se_xv = std::sqrt((c.s_xx * c.s_vv + c.s_xv * c.s_xv) / n);
    worst = std::max({worst, std::abs(sxx - c.s_xx) / se_xx, std::abs(svv - c.s_vv) / se_vv,
                      std::abs(sxv - c.s_xv) / se_xv});
  }
  int bad = 0;
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 10; ++j) {
      for (int k = 0; k < 10; ++k) {
        const double g = std::pow(10.0, -2 + 4.0 * i / 9);
        const double xi = std::pow(10.0, -2 + 4.0 * j / 9);
        const double h = std::pow(10.0, -4 + 5.0 * k / 9);
        const auto c = noise_coefficients({g, xi, h});
        const bool ok = c.s_xx >= 0 && c.s_vv >= 0 &&
                        c.s_xx * c.s_vv - c.s_xv * c.s_xv >= -1e-12 * c.s_xx * c.s_vv &&
                        std::isfinite(c.l_xx) && std::isfinite(c.l_vx) && std::isfinite(c.l_vv);
        if (!ok) ++bad;
      }
    }
  }
  return {worst <= kC2Sigmas && bad == 0,
          "max deviation " + fmt(worst, 3) + " SE (limit " + fmt(kC2Sigmas) + "), " +
              std::to_string(bad) + " of 1000 grid points not PSD"};
}

// ---------------------------------------------------------------------------
// 3. Bias recursions by explicit enumeration of batches and refresh coins.

constexpr int kC3Instances = 20;
constexpr double kC3Tolerance = 1e-12;
constexpr double kC3Seconds = 10;

// Averages the next estimate over every size-b subset (and both coin outcomes
// for epoch-based estimators) without touching the estimator.
Vector enumerated_mean(const GradientEstimator& e, const LogisticPotential& model, const Vector& x,
                       std::size_t n, std::size_t b, std::size_t p, bool epoch_based) {
  Vector mean = Vector::Zero(x.size());
  std::vector<std::vector<std::size_t>> subsets;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != b) continue;
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) s.push_back(i);
    subsets.push_back(s);
  }
  const double pr = 1.0 / static_cast<double>(p);
  for (const auto& s : subsets) {
    const double w = 1.0 / static_cast<double>(subsets.size());
    if (epoch_based) {
      GradientEstimator on = e, off = e;
      mean += w * pr * on.estimate_with(model, x, s, true);
      mean += w * (1.0 - pr) * off.estimate_with(model, x, s, false);
    } else {
      GradientEstimator copy = e;
      mean += w * copy.estimate_with(model, x, s, false);
    }
  }
  return mean;
}

Outcome criterion3() {
  std::mt19937_64 rng(303);
  double worst = 0.0;
  int checks = 0;
  for (int inst = 0; inst < kC3Instances; ++inst) {
    const std::size_t n = 2 + inst % 3;
    const std::size_t b = 1 + (inst / 3) % 2;
    const std::size_t d = 1 + inst % 3;
    const std::size_t p = 2 + inst % 4;
    const auto model = testutil::small_logistic(3000 + inst, n, d);
    for (EstimatorKind k : {EstimatorKind::SAGA, EstimatorKind::SVRG, EstimatorKind::SARAH,
                            EstimatorKind::SARGE}) {
      auto e = init_estimator(k, model, testutil::random_vector(rng, d), b, p);
      Engine brng = make_engine(inst, 1, Stream::Batch);
      Vector x = testutil::random_vector(rng, d);
      e.estimate(model, x, brng);
      for (int step = 0; step < 5; ++step) {
        const Vector prev_res = model.gradient_full(x) - e.last_estimate();
        const Vector xn = x + testutil::random_vector(rng, d, 0.5);
        const Vector res =
            model.gradient_full(xn) - enumerated_mean(e, model, xn, n, b, p, uses_epoch(k));
        Vector expect = Vector::Zero(static_cast<Eigen::Index>(d));
        if (k == EstimatorKind::SARAH) expect = (1.0 - 1.0 / static_cast<double>(p)) * prev_res;
        if (k == EstimatorKind::SARGE) {
          expect = (1.0 - static_cast<double>(b) / static_cast<double>(n)) * prev_res;
        }
        worst = std::max(worst, (res - expect).lpNorm<Eigen::Infinity>());
        ++checks;
        e.estimate(model, xn, brng);
        x = xn;
      }
    }
  }
  return {worst <= kC3Tolerance, "max residual mismatch " + fmt(worst, 3) + " over " +
                                     std::to_string(checks) + " steps (tolerance 1e-12)"};
}

// ---------------------------------------------------------------------------
// 4. Zero gradient error for Full, SVRG and SARAH on the quadratic benchmark.

constexpr double kC4Tolerance = 1e-20;
constexpr double kC4Seconds = 60;

ExperimentConfig benchmark_config() {
  ExperimentConfig c;
  c.eig_max = 10;
  c.dim = 5;
  c.n = 1000;
  c.batch = 1;
  c.burn_in = 10000;
  c.iterations = c.burn_in + 100000;
  c.threads = 1;
  return c;
}

Outcome criterion4() {
  auto c = benchmark_config();
  c.methods = {EstimatorKind::Full, EstimatorKind::SVRG, EstimatorKind::SARAH};
  c.chains = 4;
  c.seed = 404;
  const auto r = run_synthetic(c, false);
  bool ok = true;
  std::string detail;
  for (const auto& m : r.methods) {
    double worst = m.error ? std::numeric_limits<double>::infinity() : 0.0;
    for (double g : m.gradient_mses) worst = std::max(worst, g);
    ok = ok && !m.error && m.gradient_mses.size() == c.chains && worst <= kC4Tolerance;
    detail += method_label(m.kind) + " " + fmt(worst, 3) + "  ";
  }
  return {ok, "per-chain gradient MSE max: " + detail + "(limit 1e-20)"};
}

// ---------------------------------------------------------------------------
// 5. Orderings of the quadratic benchmark.

constexpr std::size_t kC5Repeats = 16;
constexpr std::size_t kC5MinOrdered = 14;
constexpr double kC5MinRatio = 10.0;
constexpr double kC5Seconds = 600;

Outcome criterion5() {
  auto c = benchmark_config();
  c.methods = {EstimatorKind::SG, EstimatorKind::SVRG, EstimatorKind::SAGA, EstimatorKind::SARGE};
  c.chains = kC5Repeats;
  c.seed = 505;
  const auto r = run_synthetic(c, false);
  for (const auto& m : r.methods) {
    if (m.error) return {false, method_label(m.kind) + " failed: " + *m.error};
  }
  const auto& sg = r.methods[0];
  const auto& svrg = r.methods[1];
  const auto& saga = r.methods[2];
  const auto& sarge = r.methods[3];
  std::size_t ordered = 0;
  for (std::size_t k = 0; k < kC5Repeats; ++k) {
    if (sarge.gradient_mses[k] < saga.gradient_mses[k] && saga.gradient_mses[k] < sg.gradient_mses[k])
      ++ordered;
  }
  const double ratio = sg.potential_mse / svrg.potential_mse;
  return {ordered >= kC5MinOrdered && ratio >= kC5MinRatio,
          "SARGE < SAGA < SG in " + std::to_string(ordered) + "/" + std::to_string(kC5Repeats) +
              " repeats (need " + std::to_string(kC5MinOrdered) + "); SG/SVRG potential MSE " +
              fmt(ratio, 3) + " (need >= " + fmt(kC5MinRatio) + ")"};
}

// ---------------------------------------------------------------------------
// 6. W2 floor of full-gradient HMC at h and h/2.

constexpr double kC6Step = 0.2;
constexpr double kC6Gamma = 10.0;
constexpr std::uint64_t kC6Steps = 10000000;  // at step h; doubled at h/2
constexpr std::uint64_t kC6Stride = 10;
constexpr double kC6Low = 1.3;
constexpr double kC6High = 2.8;
constexpr double kC6Seconds = 300;

Outcome criterion6() {
  const auto model = QuadraticPotential::synthetic(1, 1000, 5, 10.0, 1.0);
  const auto tm = target_moments(model);
  const GaussianSummary target(tm.mean, tm.covariance);
  double w2[2], exact[2];
  for (int k = 0; k < 2; ++k) {
    const double h = kC6Step / (k + 1);
    SamplerConfig c;
    c.estimator = EstimatorKind::Full;
    c.dynamics = {kC6Gamma, 1.0 / model.smoothness(), h};
    c.iterations = kC6Steps * static_cast<std::uint64_t>(k + 1);
    c.burn_in = 10000;
    c.stride = kC6Stride * static_cast<std::uint64_t>(k + 1);
    c.x0 = tm.mean;
    c.seed = 606;
    const RunRecord r = run_chain(c, model);
    w2[k] = bures_w2(GaussianSummary(r.mean, r.covariance), target);
    const auto oracle =
        testutil::lyapunov_oracle(2.0 * model.precision(), noise_coefficients(c.dynamics));
    exact[k] = bures_w2(GaussianSummary(tm.mean, oracle.cov.topLeftCorner(5, 5)), target);
  }
  const double ratio = w2[0] / w2[1];
  return {ratio >= kC6Low && ratio <= kC6High,
          "W2 " + fmt(w2[0]) + " at h=" + fmt(kC6Step) + ", " + fmt(w2[1]) + " at h/2, ratio " +
              fmt(ratio, 3) + " (stationary-covariance oracle: " + fmt(exact[0]) + ", " +
              fmt(exact[1]) + ", ratio " + fmt(exact[0] / exact[1], 3) + "); need [" +
              fmt(kC6Low) + ", " + fmt(kC6High) + "]"};
}

// ---------------------------------------------------------------------------
// 7. Logistic regression orderings at equal query budgets.

constexpr double kC7Passes = 50;
constexpr double kC7Seconds = 600;

std::optional<std::filesystem::path> data_file(const std::vector<std::string>& names) {
  const char* dir = std::getenv("VRHMC_DATA_DIR");
  if (!dir) return std::nullopt;
  for (const auto& n : names) {
    const std::filesystem::path p = std::filesystem::path(dir) / n;
    if (std::filesystem::is_regular_file(p)) return p;
  }
  return std::nullopt;
}

// Australian-shaped stand-in: 690 rows, 14 features on mixed scales with three
// binary columns, labels drawn from a logistic model.
Dataset australian_like(std::uint64_t seed) {
  constexpr std::size_t n = 690, d = 14;
  const double scales[d] = {1, 10, 5, 1, 1, 20, 3, 1, 1, 8, 1, 100, 1, 500};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Matrix x(n, d);
  Vector shift(d), w(d);
  for (std::size_t j = 0; j < d; ++j) shift(j) = normal(rng) * scales[j];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x(i, j) = normal(rng) * scales[j] + shift(j);
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = coin(rng);
    x(i, 7) = coin(rng);
    x(i, 8) = coin(rng);
  }
  for (std::size_t j = 0; j < d; ++j) w(j) = 1.5 * normal(rng) / scales[j];
  const Vector centre = x.colwise().mean().transpose();
  Dataset ds;
  ds.d = d;
  ds.source = "australian-like";
  for (std::size_t i = 0; i < n; ++i) {
    const double margin = (x.row(i).transpose() - centre).dot(w);
    ds.labels.push_back(unit(rng) < 1.0 / (1.0 + std::exp(-margin)) ? 1 : -1);
    SparseRow row;
    for (std::size_t j = 0; j < d; ++j)
      if (x(i, j) != 0.0) row.emplace_back(static_cast<std::uint32_t>(j), x(i, j));
    ds.rows.push_back(row);
    ds.row_ids.push_back(i);
  }
  return ds;
}

Outcome criterion7() {
  Dataset data;
  std::string name;
  if (const auto p = data_file({"australian", "australian.libsvm", "australian.txt"})) {
    std::ifstream in(*p);
    data = parse_libsvm(in, LabelPolicy::Auto, 14, p->string());
    name = p->filename().string();
  } else {
    data = australian_like(7);
    name = "australian-like synthetic";
  }
  ExperimentConfig c;
  c.budget_passes = kC7Passes;
  c.threads = 1;
  c.seed = 707;
  const auto r = run_logistic_on(c, data, false);
  std::map<EstimatorKind, const LogisticMethodResult*> by;
  for (const auto& m : r.methods) {
    if (m.error || !m.tail_gradient_mse) return {false, method_label(m.kind) + " failed"};
    by[m.kind] = &m;
  }
  const auto pot = [&](EstimatorKind k) { return by.at(k)->tail_potential; };
  const auto gmse = [&](EstimatorKind k) { return *by.at(k)->tail_gradient_mse; };
  const bool potentials = pot(EstimatorKind::SVRG) <= pot(EstimatorKind::SG) &&
                          pot(EstimatorKind::SAGA) <= pot(EstimatorKind::SG);
  const bool gradients = gmse(EstimatorKind::SARAH) <= gmse(EstimatorKind::SAGA) &&
                         gmse(EstimatorKind::SARGE) <= gmse(EstimatorKind::SAGA);
  std::ostringstream os;
  os << name << ", budget " << r.query_budget << " queries; training potential SG " << fmt(pot(EstimatorKind::SG))
     << " SVRG " << fmt(pot(EstimatorKind::SVRG)) << " SAGA " << fmt(pot(EstimatorKind::SAGA))
     << "; gradient MSE SAGA " << fmt(gmse(EstimatorKind::SAGA)) << " SARAH "
     << fmt(gmse(EstimatorKind::SARAH)) << " SARGE " << fmt(gmse(EstimatorKind::SARGE));
  return {potentials && gradients, os.str()};
}

// ---------------------------------------------------------------------------
// 8. Every estimator at b = N, p = 1 reproduces full-gradient HMC bit for bit.

constexpr double kC8Seconds = 5;

template <class M>
bool collapses(const M& model, std::uint64_t seed, std::string& detail) {
  SamplerConfig c;
  c.batch = model.n_components();
  c.epoch = 1;
  c.dynamics = default_dynamics(model, 0.05);
  c.iterations = 500;
  c.keep_samples = true;
  c.keep_momenta = true;
  c.seed = seed;
  c.estimator = EstimatorKind::Full;
  const RunRecord ref = run_chain(c, model);
  bool ok = true;
  for (EstimatorKind k : kAllEstimators) {
    c.estimator = k;
    const RunRecord r = run_chain(c, model);
    bool same = r.positions.size() == ref.positions.size();
    for (std::size_t j = 0; same && j < r.positions.size(); ++j) {
      same = r.positions[j] == ref.positions[j] && r.momenta[j] == ref.momenta[j];
    }
    if (!same) detail += method_label(k) + " differs; ";
    ok = ok && same;
  }
  return ok;
}

Outcome criterion8() {
  std::string detail;
  const bool a = collapses(testutil::small_quadratic(8, 25, 3), 808, detail);
  const bool b = collapses(testutil::small_logistic(8, 25, 4), 809, detail);
  return {a && b, detail.empty() ? "all estimators identical on quadratic and logistic models"
                                 : detail};
}

// ---------------------------------------------------------------------------
// 9. LIBSVM round trip and dataset shapes.

constexpr int kC9Datasets = 200;

Dataset random_dataset(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> rows(1, 60), dims(1, 40);
  std::uniform_real_distribution<double> mant(-1.0, 1.0), expo(-300, 300), density(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  Dataset ds;
  const std::size_t n = rows(rng);
  ds.d = dims(rng);
  const double dens = density(rng);
  std::bernoulli_distribution keep(dens);
  for (std::size_t i = 0; i < n; ++i) {
    SparseRow row;
    for (std::size_t j = 0; j < ds.d; ++j) {
      if (!keep(rng)) continue;
      double v = mant(rng);
      if (sign(rng)) v *= std::pow(10.0, expo(rng));
      if (v == 0.0 || !std::isfinite(v)) v = 1.0;
      row.emplace_back(static_cast<std::uint32_t>(j), v);
    }
    ds.rows.push_back(row);
    ds.labels.push_back(sign(rng) ? 1 : -1);
  }
  return ds;
}

Outcome criterion9() {
  std::mt19937_64 rng(909);
  int failures = 0;
  for (int t = 0; t < kC9Datasets; ++t) {
    const Dataset ds = random_dataset(rng);
    std::ostringstream out;
    write_libsvm(out, ds);
    const Dataset back = parse_libsvm_string(out.str(), LabelPolicy::PlusMinusOne, ds.d);
    if (!(back == ds)) ++failures;
  }
  std::string detail = std::to_string(kC9Datasets - failures) + "/" + std::to_string(kC9Datasets) +
                       " round trips exact";

  struct Known {
    std::vector<std::string> files;
    std::size_t n, d;
  };
  const std::vector<Known> table = {{{"australian", "australian.libsvm"}, 690, 14},
                                    {{"german.numer", "german", "german.libsvm"}, 1000, 24},
                                    {{"phishing", "phishing.libsvm"}, 11055, 68},
                                    {{"mushrooms", "mushrooms.libsvm"}, 8124, 112}};
  int shape_failures = 0, found = 0;
  for (const auto& k : table) {
    const auto p = data_file(k.files);
    if (!p) continue;
    ++found;
    std::ifstream in(*p);
    const Dataset ds = parse_libsvm(in, LabelPolicy::Auto, std::nullopt, p->string());
    const bool ok = ds.n() == k.n && ds.d == k.d;
    if (!ok) ++shape_failures;
    detail += "; " + p->filename().string() + " N=" + std::to_string(ds.n()) +
              " d=" + std::to_string(ds.d) + (ok ? "" : " (mismatch)");
  }
  if (found == 0) detail += "; no real dataset files found (set VRHMC_DATA_DIR to check shapes)";
  return {failures == 0 && shape_failures == 0, detail};
}

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "integrator stationary covariance", kC1Seconds, criterion1},
      {2, "noise covariance", kC2Seconds, criterion2},
      {3, "estimator bias recursions", kC3Seconds, criterion3},
      {4, "zero gradient error cells", kC4Seconds, criterion4},
      {5, "quadratic benchmark orderings", kC5Seconds, criterion5},
      {6, "discretization W2 floor scaling", kC6Seconds, criterion6},
      {7, "logistic regression orderings", kC7Seconds, criterion7},
      {8, "full-batch collapse", kC8Seconds, criterion8},
      {9, "LIBSVM parser", std::numeric_limits<double>::infinity(), criterion9},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.limit_seconds;
    const bool pass = o.pass && in_time;
    if (!pass) ++failed;
    std::cout << "Criterion " << c.id << " (" << c.name << "): " << (pass ? "PASS" : "FAIL")
              << " | " << o.detail << " | " << std::fixed << std::setprecision(1) << secs << " s"
              << (in_time ? "" : " (over the time limit)") << std::defaultfloat << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
