// Command-line front end: parses flags, overlays them on an optional JSON
// config file, and hands the resulting RunConfig to prtree::run.

#include "prtree/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

template <class T>
void overlay(CLI::Option* opt, const T& value, T& target) {
  if (opt->count() > 0) target = value;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic regression trees and their ensembles"};
  app.require_subcommand(1, 1);

  prtree::RunConfig flags;
  std::string config_path;
  std::vector<double> sigma;
  int max_depth = 0;

  std::vector<CLI::App*> subs = {
      app.add_subcommand("fit", "fit a model and write it as JSON"),
      app.add_subcommand("predict", "predict rows of a CSV with a saved model"),
      app.add_subcommand("cv", "stratified k-fold cross-validation RMSE"),
      app.add_subcommand("biasvar", "bias-variance sweep over a complexity knob"),
  };

  struct Opts {
    CLI::Option *config, *model, *data, *target, *seed, *folds, *trees, *shrinkage, *iters, *burn, *alpha, *beta, *nu,
        *min_leaf, *max_depth, *leaves, *sigma, *out, *model_file, *trials;
  };
  std::vector<Opts> opts;
  for (auto* sub : subs) {
    Opts o;
    o.config = sub->add_option("--config", config_path, "JSON file with default settings; flags take precedence");
    o.model = sub->add_option("--model", flags.model, "tree, rf, gbt or pbart");
    o.data = sub->add_option("--data", flags.data, "input CSV");
    o.target = sub->add_option("--target", flags.target, "target column name");
    o.seed = sub->add_option("--seed", flags.seed, "master random seed");
    o.folds = sub->add_option("--folds", flags.folds, "number of cross-validation folds");
    o.trees = sub->add_option("--trees", flags.trees, "tree count (comma list for biasvar)")->delimiter(',');
    o.shrinkage = sub->add_option("--shrinkage", flags.shrinkage, "boosting shrinkage in (0, 1]");
    o.iters = sub->add_option("--iters", flags.iters, "P-BART iterations");
    o.burn = sub->add_option("--burn", flags.burn, "P-BART burn-in iterations");
    o.alpha = sub->add_option("--alpha", flags.alpha, "P-BART split prior base");
    o.beta = sub->add_option("--beta", flags.beta, "P-BART split prior depth exponent");
    o.nu = sub->add_option("--nu", flags.nu, "P-BART noise prior degrees of freedom");
    o.min_leaf = sub->add_option("--min-leaf", flags.min_leaf, "minimum leaf size as a fraction of training rows");
    o.max_depth = sub->add_option("--max-depth", max_depth, "maximum tree depth");
    o.leaves = sub->add_option("--leaves,--max-leaves", flags.leaves, "leaf cap (comma list for biasvar)")->delimiter(',');
    o.sigma = sub->add_option("--sigma", sigma, "explicit noise vector in scaled units, comma separated")->delimiter(',');
    o.out = sub->add_option("--out", flags.out, "output path");
    o.model_file = sub->add_option("--model-file", flags.model_file, "saved model JSON (predict)");
    o.trials = sub->add_option("--trials", flags.trials, "bias-variance trials");
    opts.push_back(o);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  std::size_t which = 0;
  for (std::size_t i = 0; i < subs.size(); ++i)
    if (subs[i]->parsed()) which = i;
  const Opts& o = opts[which];

  prtree::RunConfig cfg;
  try {
    if (!config_path.empty()) prtree::apply_json_config(cfg, prtree::read_json_file(config_path));
  } catch (const prtree::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const prtree::json::exception& e) {
    std::cerr << "error: malformed config: " << e.what() << '\n';
    return 1;
  }
  cfg.command = subs[which]->get_name();
  overlay(o.model, flags.model, cfg.model);
  overlay(o.data, flags.data, cfg.data);
  overlay(o.target, flags.target, cfg.target);
  overlay(o.seed, flags.seed, cfg.seed);
  overlay(o.folds, flags.folds, cfg.folds);
  overlay(o.trees, flags.trees, cfg.trees);
  overlay(o.shrinkage, flags.shrinkage, cfg.shrinkage);
  overlay(o.iters, flags.iters, cfg.iters);
  overlay(o.burn, flags.burn, cfg.burn);
  overlay(o.alpha, flags.alpha, cfg.alpha);
  overlay(o.beta, flags.beta, cfg.beta);
  overlay(o.nu, flags.nu, cfg.nu);
  overlay(o.min_leaf, flags.min_leaf, cfg.min_leaf);
  overlay(o.leaves, flags.leaves, cfg.leaves);
  overlay(o.out, flags.out, cfg.out);
  overlay(o.model_file, flags.model_file, cfg.model_file);
  overlay(o.trials, flags.trials, cfg.trials);
  if (o.max_depth->count() > 0) cfg.max_depth = max_depth;
  if (o.sigma->count() > 0) cfg.sigma = sigma;

  try {
    return prtree::run(cfg, std::cerr);
  } catch (const prtree::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
