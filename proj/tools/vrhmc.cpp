// Command-line runner for the synthetic and logistic sampling studies.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vrhmc/vrhmc.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool paper_scale = false;
  bool diagnostics = false;
  std::optional<std::string> estimator;
  std::optional<std::size_t> batch;
  std::optional<std::size_t> epoch;
  std::optional<double> step;
  std::optional<std::string> dataset;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "flat key = value configuration file")->check(CLI::ExistingFile);
  app->add_option("--seed", f.seed, "global seed");
  app->add_option("--out", f.out, "output directory");
  app->add_flag("--paper-scale", f.paper_scale, "use the long paper-scale run lengths");
  app->add_flag("--diagnostics", f.diagnostics, "record gradient error and Q_k on every row");
  app->add_option("--estimator", f.estimator,
                  "restrict to one estimator (full, sg, saga, svrg, sarah, sarge)");
  app->add_option("--batch", f.batch, "minibatch size b");
  app->add_option("--epoch", f.epoch, "refresh interval p for SVRG/SARAH");
  app->add_option("--step", f.step, "step size h");
  app->add_option("--dataset", f.dataset, "LIBSVM file (logistic study)");
}

vrhmc::ExperimentConfig resolve(const CommonFlags& f, vrhmc::ExperimentKind kind) {
  vrhmc::ExperimentConfig c;
  c.kind = kind;
  if (!f.config.empty()) vrhmc::load_config_file(c, f.config);
  c.kind = kind;
  if (f.seed) c.seed = *f.seed;
  if (f.out) c.out = *f.out;
  if (f.paper_scale) c.paper_scale = true;
  if (f.diagnostics) {
    c.gradient_error = true;
    c.q_metric = true;
  }
  if (f.estimator) c.methods = {vrhmc::parse_estimator_kind(*f.estimator)};
  if (f.batch) c.batch = *f.batch;
  if (f.epoch) c.epoch = *f.epoch;
  if (f.step) {
    c.step = *f.step;
    c.overrides.clear();
  }
  if (f.dataset) c.dataset = *f.dataset;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variance-reduced Hamiltonian Monte Carlo experiments"};
  app.require_subcommand(1);

  CommonFlags syn_flags, log_flags, adv_flags;
  std::string adv_kind = "synthetic";
  auto* syn = app.add_subcommand("synthetic", "quadratic-potential benchmark");
  add_common(syn, syn_flags);
  auto* lg = app.add_subcommand("logistic", "Bayesian logistic regression on a LIBSVM dataset");
  add_common(lg, log_flags);
  auto* adv = app.add_subcommand("advisory", "theoretical step-size bound per method");
  add_common(adv, adv_flags);
  adv->add_option("--experiment", adv_kind, "synthetic or logistic")
      ->check(CLI::IsMember({"synthetic", "logistic"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (syn->parsed()) {
      const auto res = vrhmc::run_synthetic(resolve(syn_flags, vrhmc::ExperimentKind::Synthetic));
      std::cout << res.table;
      for (const auto& m : res.methods) {
        if (m.error) std::cerr << vrhmc::method_label(m.kind) << ": " << *m.error << '\n';
      }
      std::cout << "wrote " << res.config.out << '\n';
    } else if (lg->parsed()) {
      const auto res = vrhmc::run_logistic(resolve(log_flags, vrhmc::ExperimentKind::Logistic));
      for (const auto& m : res.methods) {
        std::cout << vrhmc::method_label(m.kind);
        if (m.error) {
          std::cout << ": " << *m.error << '\n';
          continue;
        }
        std::cout << "  potential " << m.tail_potential << "  test nll " << m.tail_nll;
        if (m.tail_gradient_mse) std::cout << "  grad mse " << *m.tail_gradient_mse;
        std::cout << '\n';
      }
      std::cout << "wrote " << res.config.out << '\n';
    } else if (adv->parsed()) {
      const auto kind = adv_kind == "logistic" ? vrhmc::ExperimentKind::Logistic
                                               : vrhmc::ExperimentKind::Synthetic;
      auto cfg = resolve(adv_flags, kind);
      std::cout << vrhmc::format_advisory(vrhmc::print_advisory(cfg));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
