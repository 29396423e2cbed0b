#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vrhmc/dataio.hpp"
#include "vrhmc/estimator.hpp"
#include "vrhmc/metrics.hpp"
#include "vrhmc/potential.hpp"
#include "vrhmc/sampler.hpp"

namespace vrhmc {

enum class ExperimentKind { Synthetic, Logistic };

/// Per-method overrides of the shared sampler settings.
struct MethodOverrides {
  std::optional<std::size_t> batch;
  std::optional<std::size_t> epoch;
  std::optional<double> step;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::Synthetic;

  // synthetic model
  double eig_max = 10.0;
  double eig_min = 1.0;
  std::size_t dim = 5;
  std::size_t n = 1000;
  std::uint64_t data_seed = 1;
  /// Synthetic only: start chains at the origin or at the minimizer.
  bool start_at_mode = true;

  // logistic model
  std::string dataset;
  std::optional<std::size_t> dataset_dim;
  LabelPolicy labels = LabelPolicy::Auto;
  double prior = 1.0;
  double split_ratio = 0.5;
  std::uint64_t split_seed = 0;
  bool standardize = true;

  // samplers
  std::vector<EstimatorKind> methods;
  std::size_t batch = 1;
  std::size_t epoch = 0;
  double step = 0.0;
  std::optional<double> gamma;
  std::optional<double> xi;
  std::uint64_t iterations = 0;
  std::uint64_t burn_in = 0;
  /// Logistic only: query budget in passes over the training set.
  double budget_passes = 0.0;
  /// Logistic only: trailing fraction of the query axis used for summaries.
  double tail_fraction = 0.2;
  std::uint64_t stride = 1;
  std::uint64_t w2_every = 1000;
  std::size_t chains = 0;
  std::size_t threads = 0;
  bool gradient_error = true;
  bool q_metric = false;
  std::map<EstimatorKind, MethodOverrides> overrides;

  std::uint64_t seed = 0;
  std::string out = "out";
  bool paper_scale = false;
};

/// Fills unset fields with the desk-scale (or paper-scale) defaults.
inline void apply_defaults(ExperimentConfig& c) {
  if (c.kind == ExperimentKind::Synthetic) {
    if (c.methods.empty()) {
      c.methods.assign(std::begin(kAllEstimators), std::end(kAllEstimators));
    }
    // gamma = 12 with xi = 1/L damps the slowest mode near critically
    if (c.step <= 0) c.step = 0.02;
    if (!c.gamma) c.gamma = 12.0;
    if (c.burn_in == 0) c.burn_in = 10000;
    if (c.iterations == 0) c.iterations = c.burn_in + (c.paper_scale ? 10000000 : 100000);
    if (c.chains == 0) c.chains = 16;
  } else {
    if (c.methods.empty()) {
      c.methods = {EstimatorKind::SG, EstimatorKind::SVRG, EstimatorKind::SARAH,
                   EstimatorKind::SAGA, EstimatorKind::SARGE};
    }
    // SG noise at b = 1 dominates the thermal noise unless h is small; the
    // larger friction keeps the chains from ringing around the mode
    if (c.step <= 0) c.step = 0.01;
    if (!c.gamma) c.gamma = 30.0;
    if (c.budget_passes <= 0) c.budget_passes = c.paper_scale ? 200.0 : 50.0;
    if (c.chains == 0) c.chains = c.paper_scale ? 2000 : 100;
    if (c.stride == 1) c.stride = 10;
  }
}

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw std::invalid_argument("config: bad value '" + v + "' for key '" + key + "'");
  }
  return out;
}

inline std::uint64_t parse_count(const std::string& key, const std::string& v) {
  // accept 1e5-style integers
  const double d = parse_number<double>(key, v);
  if (!(d >= 0) || d != std::floor(d) || d > 1.8e19) {
    throw std::invalid_argument("config: key '" + key + "' needs a non-negative integer");
  }
  return static_cast<std::uint64_t>(d);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: key '" + key + "' needs a boolean");
}

inline std::vector<EstimatorKind> parse_methods(const std::string& v) {
  std::vector<EstimatorKind> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_estimator_kind(item));
  }
  if (out.empty()) throw std::invalid_argument("config: empty method list");
  return out;
}

}  // namespace detail

/// Sets one configuration key. Per-method keys take the form
/// "<method>.step", "<method>.batch", "<method>.epoch".
inline void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& raw) {
  using namespace detail;
  const std::string v = trim(raw);
  if (const auto dot = key.find('.'); dot != std::string::npos) {
    const EstimatorKind k = parse_estimator_kind(key.substr(0, dot));
    const std::string field = key.substr(dot + 1);
    MethodOverrides& o = c.overrides[k];
    if (field == "step") o.step = parse_number<double>(key, v);
    else if (field == "batch") o.batch = parse_count(key, v);
    else if (field == "epoch") o.epoch = parse_count(key, v);
    else throw std::invalid_argument("config: unknown per-method key '" + key + "'");
    return;
  }
  if (key == "experiment") {
    if (v == "synthetic") c.kind = ExperimentKind::Synthetic;
    else if (v == "logistic") c.kind = ExperimentKind::Logistic;
    else throw std::invalid_argument("config: experiment must be synthetic or logistic");
  } else if (key == "L") c.eig_max = parse_number<double>(key, v);
  else if (key == "m") c.eig_min = parse_number<double>(key, v);
  else if (key == "d") c.dim = parse_count(key, v);
  else if (key == "N") c.n = parse_count(key, v);
  else if (key == "data_seed") c.data_seed = parse_count(key, v);
  else if (key == "init") {
    if (v == "mode") c.start_at_mode = true;
    else if (v == "origin") c.start_at_mode = false;
    else throw std::invalid_argument("config: init must be origin or mode");
  }
  else if (key == "dataset") c.dataset = v;
  else if (key == "dataset_dim") c.dataset_dim = parse_count(key, v);
  else if (key == "labels") c.labels = parse_label_policy(v);
  else if (key == "prior") c.prior = parse_number<double>(key, v);
  else if (key == "split_ratio") c.split_ratio = parse_number<double>(key, v);
  else if (key == "split_seed") c.split_seed = parse_count(key, v);
  else if (key == "standardize") c.standardize = parse_bool(key, v);
  else if (key == "methods") c.methods = parse_methods(v);
  else if (key == "batch") c.batch = parse_count(key, v);
  else if (key == "epoch") c.epoch = parse_count(key, v);
  else if (key == "step") c.step = parse_number<double>(key, v);
  else if (key == "gamma") c.gamma = parse_number<double>(key, v);
  else if (key == "xi") c.xi = parse_number<double>(key, v);
  else if (key == "iterations") c.iterations = parse_count(key, v);
  else if (key == "burn_in") c.burn_in = parse_count(key, v);
  else if (key == "budget_passes") c.budget_passes = parse_number<double>(key, v);
  else if (key == "tail_fraction") c.tail_fraction = parse_number<double>(key, v);
  else if (key == "stride") c.stride = parse_count(key, v);
  else if (key == "w2_every") c.w2_every = parse_count(key, v);
  else if (key == "chains") c.chains = parse_count(key, v);
  else if (key == "threads") c.threads = parse_count(key, v);
  else if (key == "gradient_error") c.gradient_error = parse_bool(key, v);
  else if (key == "q_metric") c.q_metric = parse_bool(key, v);
  else if (key == "seed") c.seed = parse_count(key, v);
  else if (key == "out") c.out = v;
  else if (key == "paper_scale") c.paper_scale = parse_bool(key, v);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

/// Flat "key = value" text; '#' starts a comment.
inline void load_config_text(ExperimentConfig& c, std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    try {
      set_config_value(c, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void load_config_file(ExperimentConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  load_config_text(c, in);
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["experiment"] = c.kind == ExperimentKind::Synthetic ? "synthetic" : "logistic";
  if (c.kind == ExperimentKind::Synthetic) {
    j["L"] = c.eig_max;
    j["m"] = c.eig_min;
    j["d"] = c.dim;
    j["N"] = c.n;
    j["data_seed"] = c.data_seed;
    j["init"] = c.start_at_mode ? "mode" : "origin";
    j["iterations"] = c.iterations;
    j["burn_in"] = c.burn_in;
    j["w2_every"] = c.w2_every;
  } else {
    j["dataset"] = c.dataset;
    if (c.dataset_dim) j["dataset_dim"] = *c.dataset_dim;
    j["labels"] = to_string(c.labels);
    j["prior"] = c.prior;
    j["split_ratio"] = c.split_ratio;
    j["split_seed"] = c.split_seed;
    j["standardize"] = c.standardize;
    j["budget_passes"] = c.budget_passes;
    j["tail_fraction"] = c.tail_fraction;
  }
  std::vector<std::string> methods;
  for (auto k : c.methods) methods.emplace_back(to_string(k));
  j["methods"] = methods;
  j["batch"] = c.batch;
  j["epoch"] = c.epoch;
  j["step"] = c.step;
  if (c.gamma) j["gamma"] = *c.gamma;
  if (c.xi) j["xi"] = *c.xi;
  j["stride"] = c.stride;
  j["chains"] = c.chains;
  j["gradient_error"] = c.gradient_error;
  j["q_metric"] = c.q_metric;
  j["seed"] = c.seed;
  j["paper_scale"] = c.paper_scale;
  nlohmann::json ov = nlohmann::json::object();
  for (const auto& [k, o] : c.overrides) {
    nlohmann::json e = nlohmann::json::object();
    if (o.step) e["step"] = *o.step;
    if (o.batch) e["batch"] = *o.batch;
    if (o.epoch) e["epoch"] = *o.epoch;
    ov[std::string(to_string(k))] = e;
  }
  j["overrides"] = ov;
  return j;
}

/// Resolved sampler settings for one method of an experiment.
template <PotentialModel M>
SamplerConfig method_sampler_config(const ExperimentConfig& c, EstimatorKind kind, const M& model) {
  SamplerConfig s;
  s.estimator = kind;
  s.batch = c.batch;
  s.epoch = c.epoch;
  double h = c.step;
  if (auto it = c.overrides.find(kind); it != c.overrides.end()) {
    if (it->second.batch) s.batch = *it->second.batch;
    if (it->second.epoch) s.epoch = *it->second.epoch;
    if (it->second.step) h = *it->second.step;
  }
  s.dynamics = default_dynamics(model, h);
  if (c.gamma) s.dynamics.gamma = *c.gamma;
  if (c.xi) s.dynamics.xi = *c.xi;
  s.iterations = c.iterations;
  s.burn_in = c.burn_in;
  s.stride = std::max<std::uint64_t>(1, c.stride);
  s.gradient_error = c.gradient_error;
  s.q_metric = c.q_metric;
  s.seed = c.seed;
  s.chains = c.chains;
  s.threads = c.threads;
  return s;
}

// ---------------------------------------------------------------------------
// Advisory

struct AdvisoryRow {
  EstimatorKind kind;
  std::size_t batch = 1;
  std::size_t epoch = 1;
  bool is_mseb = true;
  double theta = 0.0;
  double kappa = 1.0;
  double smoothness = 1.0;
  double step_bound = 0.0;
  double step = 0.0;
  bool exceeds = false;
};

template <PotentialModel M>
AdvisoryRow advisory_row(const M& model, const SamplerConfig& s) {
  AdvisoryRow r;
  r.kind = s.estimator;
  r.batch = s.estimator == EstimatorKind::Full ? model.n_components() : s.batch;
  r.epoch = s.resolved_epoch(model.n_components());
  const MsebDescriptor md = mseb_descriptor(s.estimator, model.n_components(), r.batch, r.epoch);
  r.is_mseb = md.is_mseb;
  r.theta = md.theta();
  r.smoothness = model.smoothness();
  r.kappa = condition_number(model);
  r.step_bound = theoretical_step_bound(r.smoothness, r.kappa, r.theta);
  r.step = s.dynamics.step;
  r.exceeds = r.step > r.step_bound;
  return r;
}

inline nlohmann::json advisory_json(const AdvisoryRow& r) {
  nlohmann::json j;
  j["method"] = method_label(r.kind);
  j["batch"] = r.batch;
  j["epoch"] = r.epoch;
  j["is_mseb"] = r.is_mseb;
  if (r.is_mseb) j["theta"] = r.theta;
  j["kappa"] = r.kappa;
  j["L"] = r.smoothness;
  j["step_bound"] = r.step_bound;
  j["step"] = r.step;
  j["exceeds_bound"] = r.exceeds;
  return j;
}

inline std::string format_advisory(const std::vector<AdvisoryRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(11) << "method" << std::right << std::setw(14) << "Theta"
     << std::setw(14) << "h_max" << std::setw(12) << "h" << "  status\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(11) << method_label(r.kind) << std::right << std::setw(14);
    if (r.is_mseb) os << std::setprecision(6) << r.theta;
    else os << "not MSEB";
    os << std::setw(14) << std::setprecision(4) << r.step_bound << std::setw(12) << r.step
       << "  " << (r.exceeds ? "exceeds theoretical bound" : "within bound") << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Output helpers

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_double(*v) : ""; }

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
  f << s;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Standard error of the mean.
inline double sem_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

inline nlohmann::json vec_json(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline nlohmann::json mat_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_json(m.row(r).transpose()));
  return rows;
}

}  // namespace detail

/// CSV of one synthetic method: iter,queries,potential,grad_err_sq,q_k,w2.
inline std::string synthetic_csv(const RunRecord& aggregate, const std::vector<W2Point>& w2) {
  std::ostringstream os;
  os << "iter,queries,potential,grad_err_sq,q_k,w2\n";
  std::map<std::uint64_t, double> w2_at;
  for (const auto& p : w2) w2_at[p.iter] = p.w2;
  for (const RecordRow& r : aggregate.rows) {
    os << r.iter << ',' << r.queries << ',' << detail::fmt_double(r.potential) << ','
       << detail::fmt_opt(r.grad_err_sq) << ',' << detail::fmt_opt(r.q_k) << ',';
    if (auto it = w2_at.find(r.iter); it != w2_at.end()) os << detail::fmt_double(it->second);
    os << '\n';
  }
  return os.str();
}

/// Per-method result of the synthetic study.
struct SyntheticMethodResult {
  EstimatorKind kind;
  SamplerConfig sampler;
  AdvisoryRow advisory;
  std::optional<std::string> error;
  std::vector<double> potential_sq_errors;  // per chain
  std::vector<double> gradient_mses;        // per chain
  double potential_mse = 0.0;
  double potential_mse_se = 0.0;
  std::optional<double> gradient_mse;
  double gradient_mse_se = 0.0;
  double queries_per_iteration = 0.0;
  std::optional<double> w2_floor;
  RunRecord aggregate;
  std::vector<W2Point> w2_series;
};

struct SyntheticResult {
  ExperimentConfig config;
  double true_mean_potential = 0.0;
  std::vector<SyntheticMethodResult> methods;
  nlohmann::json summary;
  std::string table;
};

inline std::string synthetic_table(const std::vector<SyntheticMethodResult>& methods) {
  std::ostringstream os;
  os << std::left << std::setw(28) << "Methods";
  for (const auto& m : methods) os << std::right << std::setw(24) << method_label(m.kind);
  os << '\n' << std::left << std::setw(28) << "Potential MSE (x1e-5)";
  auto cell = [](double v, double se, int prec) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(prec) << v << " +- " << se;
    return c.str();
  };
  for (const auto& m : methods) {
    os << std::right << std::setw(24)
       << (m.error ? std::string("diverged") : cell(m.potential_mse * 1e5, m.potential_mse_se * 1e5, 1));
  }
  os << '\n' << std::left << std::setw(28) << "Gradient MSE";
  for (const auto& m : methods) {
    std::string s = "-";
    if (m.error) s = "diverged";
    else if (m.gradient_mse) s = cell(*m.gradient_mse, m.gradient_mse_se, 4);
    os << std::right << std::setw(24) << s;
  }
  os << '\n';
  return os.str();
}

/// Quadratic benchmark: every configured method via run_ensemble, scored
/// against the analytic target. Writes <out>/<method>.csv, summary.json and
/// table.txt when `write` is set.
inline SyntheticResult run_synthetic(ExperimentConfig config, bool write = true) {
  config.kind = ExperimentKind::Synthetic;
  apply_defaults(config);
  const QuadraticPotential model =
      QuadraticPotential::synthetic(config.data_seed, config.n, config.dim, config.eig_max,
                                    config.eig_min);
  const TargetMoments tm = target_moments(model);
  const GaussianSummary target(tm.mean, tm.covariance);

  SyntheticResult res;
  res.config = config;
  res.true_mean_potential = model.mean_potential();
  nlohmann::json methods_json = nlohmann::json::array();

  for (EstimatorKind kind : config.methods) {
    SyntheticMethodResult mr;
    mr.kind = kind;
    mr.sampler = method_sampler_config(config, kind, model);
    const bool track_w2 = mr.sampler.chains >= config.dim + 1;
    mr.sampler.keep_samples = track_w2;
    if (config.start_at_mode) mr.sampler.x0 = tm.mean;
    mr.advisory = advisory_row(model, mr.sampler);
    try {
      EnsembleResult ens = run_ensemble(mr.sampler, model);
      for (const RunRecord& c : ens.chains) {
        const double e = c.mean_potential - res.true_mean_potential;
        mr.potential_sq_errors.push_back(e * e);
        if (mr.sampler.gradient_error) mr.gradient_mses.push_back(gradient_mse(c));
      }
      mr.potential_mse = potential_mse(ens.chains, res.true_mean_potential);
      mr.potential_mse_se = detail::sem_of(mr.potential_sq_errors);
      if (!mr.gradient_mses.empty()) {
        mr.gradient_mse = detail::mean_of(mr.gradient_mses);
        mr.gradient_mse_se = detail::sem_of(mr.gradient_mses);
      }
      mr.queries_per_iteration = static_cast<double>(ens.aggregate.total_queries) /
                                 static_cast<double>(std::max<std::uint64_t>(1, ens.aggregate.iterations));
      if (track_w2) {
        std::vector<RunRecord> thin;
        mr.w2_series = wasserstein_tracker(ens.chains, target);
        std::vector<W2Point> kept;
        for (const auto& p : mr.w2_series) {
          if (config.w2_every > 0 && p.iter % config.w2_every == 0) kept.push_back(p);
        }
        mr.w2_series = std::move(kept);
        mr.w2_floor = pooled_w2(ens.chains, target, mr.sampler.burn_in);
        for (RunRecord& c : ens.chains) {
          c.positions.clear();
          c.positions.shrink_to_fit();
        }
      }
      mr.aggregate = std::move(ens.aggregate);
    } catch (const std::exception& e) {
      mr.error = e.what();
    }

    nlohmann::json mj;
    mj["method"] = method_label(kind);
    mj["estimator"] = std::string(to_string(kind));
    mj["batch"] = mr.advisory.batch;
    mj["epoch"] = mr.advisory.epoch;
    mj["step"] = mr.sampler.dynamics.step;
    mj["gamma"] = mr.sampler.dynamics.gamma;
    mj["xi"] = mr.sampler.dynamics.xi;
    mj["advisory"] = advisory_json(mr.advisory);
    if (mr.error) {
      mj["error"] = *mr.error;
    } else {
      mj["potential_mse"] = mr.potential_mse;
      mj["potential_mse_se"] = mr.potential_mse_se;
      if (mr.gradient_mse) {
        mj["gradient_mse"] = *mr.gradient_mse;
        mj["gradient_mse_se"] = mr.gradient_mse_se;
      }
      mj["queries_per_iteration"] = mr.queries_per_iteration;
      mj["total_queries"] = mr.aggregate.total_queries;
      mj["iterations"] = mr.aggregate.iterations;
      mj["mean_potential"] = mr.aggregate.mean_potential;
      if (mr.w2_floor) mj["w2_floor"] = *mr.w2_floor;
      mj["final_mean"] = detail::vec_json(mr.aggregate.mean);
      mj["final_covariance"] = detail::mat_json(mr.aggregate.covariance);
    }
    methods_json.push_back(mj);
    res.methods.push_back(std::move(mr));
  }

  res.table = synthetic_table(res.methods);
  res.summary["config"] = config_to_json(config);
  res.summary["true_mean_potential"] = res.true_mean_potential;
  res.summary["target_mean"] = detail::vec_json(tm.mean);
  res.summary["target_covariance"] = detail::mat_json(tm.covariance);
  res.summary["smoothness"] = model.smoothness();
  res.summary["strong_convexity"] = model.strong_convexity();
  res.summary["methods"] = methods_json;

  if (write) {
    std::filesystem::create_directories(config.out);
    const std::filesystem::path out(config.out);
    for (const auto& m : res.methods) {
      if (m.error) continue;
      detail::write_text(out / (std::string(to_string(m.kind)) + ".csv"),
                         synthetic_csv(m.aggregate, m.w2_series));
    }
    detail::write_text(out / "summary.json", res.summary.dump(2) + "\n");
    detail::write_text(out / "table.txt", res.table);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Logistic regression study

struct LogisticMethodResult {
  EstimatorKind kind;
  SamplerConfig sampler;
  AdvisoryRow advisory;
  std::optional<std::string> error;
  RunRecord aggregate;
  /// Averages of the aggregate series over the trailing query window.
  double tail_potential = 0.0;
  double tail_nll = 0.0;
  std::optional<double> tail_gradient_mse;
};

struct LogisticResult {
  ExperimentConfig config;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t dim = 0;
  std::uint64_t query_budget = 0;
  std::vector<LogisticMethodResult> methods;
  nlohmann::json summary;
};

inline std::string logistic_csv(EstimatorKind kind, const RunRecord& aggregate) {
  std::ostringstream os;
  os << "method,iter,queries,potential,nll,grad_err_sq\n";
  const std::string name(to_string(kind));
  for (const RecordRow& r : aggregate.rows) {
    os << name << ',' << r.iter << ',' << r.queries << ',' << detail::fmt_double(r.potential)
       << ',' << detail::fmt_opt(r.extra) << ',' << detail::fmt_opt(r.grad_err_sq) << '\n';
  }
  return os.str();
}

/// Runs the logistic study on an already-parsed dataset.
inline LogisticResult run_logistic_on(ExperimentConfig config, const Dataset& data,
                                      bool write = true) {
  config.kind = ExperimentKind::Logistic;
  apply_defaults(config);
  auto [train, test] = split(data, config.split_ratio, config.split_seed);
  FeatureTransform transform;
  if (config.standardize) {
    Standardized s = standardize(train, test);
    train = std::move(s.train);
    test = std::move(s.test);
    transform = std::move(s.transform);
  }
  const LogisticPotential model = make_logistic(train, config.prior);
  const LogisticPotential test_model = make_logistic(test, config.prior);

  LogisticResult res;
  res.n_train = train.n();
  res.n_test = test.n();
  res.dim = train.d;
  res.query_budget =
      static_cast<std::uint64_t>(std::llround(config.budget_passes * static_cast<double>(train.n())));
  res.config = config;
  const RowObservable nll = [&test_model](const Vector& x) {
    return test_model.neg_log_likelihood(x);
  };
  const double tail_start = (1.0 - config.tail_fraction) * static_cast<double>(res.query_budget);

  nlohmann::json methods_json = nlohmann::json::array();
  for (EstimatorKind kind : config.methods) {
    LogisticMethodResult mr;
    mr.kind = kind;
    mr.sampler = method_sampler_config(config, kind, model);
    mr.sampler.iterations = 0;
    mr.sampler.burn_in = 0;
    mr.sampler.query_budget = res.query_budget;
    mr.advisory = advisory_row(model, mr.sampler);
    try {
      EnsembleResult ens = run_ensemble(mr.sampler, model, nll);
      mr.aggregate = std::move(ens.aggregate);
      double sp = 0.0, sn = 0.0, se = 0.0;
      std::size_t np = 0, ne = 0;
      for (const RecordRow& r : mr.aggregate.rows) {
        if (static_cast<double>(r.queries) < tail_start) continue;
        sp += r.potential;
        sn += r.extra.value_or(0.0);
        ++np;
        if (r.grad_err_sq) {
          se += *r.grad_err_sq;
          ++ne;
        }
      }
      if (np == 0) throw std::runtime_error("no rows inside the trailing query window");
      mr.tail_potential = sp / static_cast<double>(np);
      mr.tail_nll = sn / static_cast<double>(np);
      if (ne > 0) mr.tail_gradient_mse = se / static_cast<double>(ne);
    } catch (const std::exception& e) {
      mr.error = e.what();
    }
    nlohmann::json mj;
    mj["method"] = method_label(kind);
    mj["estimator"] = std::string(to_string(kind));
    mj["step"] = mr.sampler.dynamics.step;
    mj["gamma"] = mr.sampler.dynamics.gamma;
    mj["xi"] = mr.sampler.dynamics.xi;
    mj["advisory"] = advisory_json(mr.advisory);
    if (mr.error) {
      mj["error"] = *mr.error;
    } else {
      mj["tail_mean_potential"] = mr.tail_potential;
      mj["tail_test_nll"] = mr.tail_nll;
      if (mr.tail_gradient_mse) mj["tail_gradient_mse"] = *mr.tail_gradient_mse;
      mj["mean_iterations"] = mr.aggregate.iterations;
      mj["mean_total_queries"] = mr.aggregate.total_queries;
    }
    methods_json.push_back(mj);
    res.methods.push_back(std::move(mr));
  }

  res.summary["config"] = config_to_json(config);
  res.summary["n_train"] = res.n_train;
  res.summary["n_test"] = res.n_test;
  res.summary["d"] = res.dim;
  res.summary["query_budget"] = res.query_budget;
  res.summary["smoothness"] = model.smoothness();
  if (config.standardize) res.summary["transform"] = transform.to_json();
  res.summary["methods"] = methods_json;

  if (write) {
    std::filesystem::create_directories(config.out);
    const std::filesystem::path out(config.out);
    for (const auto& m : res.methods) {
      if (m.error) continue;
      detail::write_text(out / (std::string(to_string(m.kind)) + ".csv"),
                         logistic_csv(m.kind, m.aggregate));
    }
    detail::write_text(out / "summary.json", res.summary.dump(2) + "\n");
  }
  return res;
}

inline LogisticResult run_logistic(ExperimentConfig config, bool write = true) {
  if (config.dataset.empty()) throw std::invalid_argument("logistic: no dataset path configured");
  std::ifstream in(config.dataset);
  if (!in) throw std::runtime_error("cannot open dataset '" + config.dataset + "'");
  const Dataset data = parse_libsvm(in, config.labels, config.dataset_dim, config.dataset);
  return run_logistic_on(std::move(config), data, write);
}

/// Theoretical step-size report for every configured method.
inline std::vector<AdvisoryRow> print_advisory(ExperimentConfig config,
                                               const Dataset* logistic_data = nullptr) {
  apply_defaults(config);
  std::vector<AdvisoryRow> rows;
  auto fill = [&](const auto& model) {
    for (EstimatorKind k : config.methods) {
      rows.push_back(advisory_row(model, method_sampler_config(config, k, model)));
    }
  };
  if (config.kind == ExperimentKind::Synthetic) {
    fill(QuadraticPotential::synthetic(config.data_seed, config.n, config.dim, config.eig_max,
                                       config.eig_min));
  } else {
    Dataset data;
    if (logistic_data) {
      data = *logistic_data;
    } else {
      if (config.dataset.empty()) throw std::invalid_argument("advisory: no dataset configured");
      std::ifstream in(config.dataset);
      if (!in) throw std::runtime_error("cannot open dataset '" + config.dataset + "'");
      data = parse_libsvm(in, config.labels, config.dataset_dim, config.dataset);
    }
    auto [train, test] = split(data, config.split_ratio, config.split_seed);
    if (config.standardize) train = standardize(train, test).train;
    fill(make_logistic(train, config.prior));
  }
  return rows;
}

}  // namespace vrhmc
