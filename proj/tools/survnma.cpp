#include <exception>
#include <functional>
#include <iostream>
#include <map>
#include <stdexcept>

#include "CLI11.hpp"

#include "survnma/commands.hpp"

namespace {

using survnma::CommandOptions;

void add_data(CLI::App* app, CommandOptions& o, bool required) {
  auto* opt = app->add_option("--data", o.data, "Survival data CSV (study, treatment, time, status, ...)");
  if (required) opt->required();
}

void add_common(CLI::App* app, CommandOptions& o) {
  app->add_option("--config", o.config, "JSON run configuration");
  app->add_option("--out-dir", o.out_dir, "Output directory")->required();
  app->add_option("--seed", o.seed, "Random seed");
}

void add_sampler(CLI::App* app, CommandOptions& o) {
  app->add_option("--chains", o.chains, "Number of chains")->check(CLI::PositiveNumber);
  app->add_option("--iter-warmup", o.iter_warmup, "Warmup iterations per chain")->check(CLI::NonNegativeNumber);
  app->add_option("--iter-sampling", o.iter_sampling, "Sampling iterations per chain")->check(CLI::PositiveNumber);
  app->add_option("--threads", o.threads, "Worker threads (0: one per chain)")->check(CLI::NonNegativeNumber);
}

void add_prediction(CLI::App* app, CommandOptions& o) {
  app->add_option("--grid-max", o.grid_max, "Last time of the prediction grid")->check(CLI::PositiveNumber);
  app->add_option("--population", o.population, "Study whose baseline defines the population");
  app->add_option("--treatments", o.treatments, "Treatments to predict (comma separated)")->delimiter(',');
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian network meta-analysis of survival data with M-spline baseline hazards"};
  app.require_subcommand(1);
  CommandOptions o;
  o.log = &std::cerr;
  std::map<CLI::App*, std::function<void(const CommandOptions&)>> handlers;

  auto* knots = app.add_subcommand("knots", "Plan and audit spline knots; Kaplan-Meier coordinates");
  add_data(knots, o, true);
  add_common(knots, o);
  knots->add_option("--reference", o.reference, "Network reference treatment");
  handlers[knots] = survnma::run_knots;

  auto* fit = app.add_subcommand("fit", "Fit a model by NUTS");
  add_data(fit, o, true);
  add_common(fit, o);
  add_sampler(fit, o);
  fit->add_option("--reference", o.reference, "Network reference treatment");
  handlers[fit] = survnma::run_fit;

  auto* predict = app.add_subcommand("predict", "Survival, hazard and log hazard ratio curves from a fit");
  predict->add_option("--fit", o.fits, "Fit output directory")->required()->expected(1);
  add_data(predict, o, false);
  add_common(predict, o);
  add_prediction(predict, o);
  predict->add_option("--reference", o.reference, "Reference treatment of the log hazard ratios");
  handlers[predict] = survnma::run_predict;

  auto* loo = app.add_subcommand("loo", "PSIS-LOO and the LOOIC comparison table");
  loo->add_option("--fit", o.fits, "Fit output directory (repeat to compare models)")->required();
  loo->add_option("--label", o.labels, "Model label, one per --fit");
  add_data(loo, o, false);
  add_common(loo, o);
  handlers[loo] = survnma::run_loo;

  auto* prior = app.add_subcommand("prior-predictive", "Prior baseline hazard ribbons");
  add_data(prior, o, false);
  add_common(prior, o);
  prior->add_option("--population", o.population, "Study whose knots are used");
  prior->add_option("--reference", o.reference, "Network reference treatment");
  handlers[prior] = survnma::run_prior_predictive;

  auto* mvn = app.add_subcommand("export-mvn", "Multivariate normal approximation for external models");
  mvn->add_option("--fit", o.fits, "Fit output directory")->required()->expected(1);
  add_data(mvn, o, false);
  add_common(mvn, o);
  add_prediction(mvn, o);
  handlers[mvn] = survnma::run_export_mvn;

  auto* sim = app.add_subcommand("simulate", "Simulate survival data from known hazards");
  add_common(sim, o);
  sim->get_option("--config")->required();
  handlers[sim] = survnma::run_simulate;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    for (auto* sub : app.get_subcommands()) handlers.at(sub)(o);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
