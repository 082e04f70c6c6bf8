#pragma once

#include "prtree/eval.hpp"
#include "prtree/io.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace prtree {

/**
 * @brief One command-line invocation.
 *
 * Defaults follow the reference experimental setup: 10 folds, 100 forest
 * trees, 50 boosting stages, 50 P-BART trees with 1000 iterations of which
 * 200 are burn-in, and leaves holding at least 10% of the training rows.
 */
struct RunConfig {
  std::string command;  // fit | predict | cv | biasvar
  std::string model = "tree";
  std::string data;
  std::string target = "y";
  std::uint64_t seed = 0;
  std::size_t folds = 10;
  std::vector<std::size_t> trees;  // one value, or a list for biasvar
  double shrinkage = 1.0;
  std::size_t iters = 1000;
  std::size_t burn = 200;
  double alpha = 0.95;
  double beta = 2.0;
  double nu = 3.0;
  double min_leaf = 0.10;
  std::optional<int> max_depth;
  std::vector<std::size_t> leaves;  // max-leaves cap, or a list for biasvar
  std::optional<std::vector<double>> sigma;
  std::string out;
  std::string model_file;
  std::size_t trials = 20;

  void validate() const {
    if (command != "fit" && command != "predict" && command != "cv" && command != "biasvar")
      throw ValidationError("unknown command '" + command + "' (expected fit, predict, cv or biasvar)");
    parse_learner(model);
    if (command == "predict") {
      if (model_file.empty()) throw ValidationError("predict needs --model-file");
      if (!std::ifstream(model_file)) throw ValidationError("model file not found: '" + model_file + "'");
    }
    if (data.empty()) throw ValidationError("--data is required");
    if (!std::ifstream(data)) throw ValidationError("data file not found: '" + data + "'");
    if (out.empty()) throw ValidationError("--out is required");
    if (command != "biasvar" && trees.size() > 1) throw ValidationError("--trees takes a single value for " + command);
    if (command != "biasvar" && leaves.size() > 1) throw ValidationError("--leaves takes a single value for " + command);
    if (command == "biasvar" && !trees.empty() && !leaves.empty())
      throw ValidationError("biasvar sweeps either --trees or --leaves, not both");
    for (auto t : trees)
      if (t < 1) throw ValidationError("--trees values must be at least 1");
    if (folds < 2) throw ValidationError("--folds must be at least 2");
    if (trials < 2) throw ValidationError("--trials must be at least 2");
    if (!(min_leaf > 0.0 && min_leaf <= 0.5)) throw ValidationError("--min-leaf must lie in (0, 0.5]");
  }

  LearnerSpec learner(std::optional<std::size_t> tree_override = std::nullopt,
                      std::optional<std::size_t> leaves_override = std::nullopt) const {
    LearnerSpec s;
    s.kind = parse_learner(model);
    s.rule.min_leaf_fraction = min_leaf;
    s.rule.max_depth = max_depth;
    if (leaves_override)
      s.rule.max_leaves = *leaves_override;
    else if (!leaves.empty())
      s.rule.max_leaves = leaves.front();
    s.trees = tree_override ? *tree_override : (trees.empty() ? 0 : trees.front());
    s.shrinkage = shrinkage;
    s.pbart.alpha = alpha;
    s.pbart.beta = beta;
    s.pbart.nu = nu;
    s.pbart.it_max = iters;
    s.pbart.it_burn = burn;
    s.pbart.rule = s.rule;
    if (sigma) s.sigma = SigmaVector(*sigma);
    return s;
  }
};

/// Overlays the keys present in a JSON object onto cfg.
inline void apply_json_config(RunConfig& cfg, const json& j) {
  if (!j.is_object()) throw ValidationError("config file must hold a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "command") cfg.command = v.get<std::string>();
    else if (key == "model") cfg.model = v.get<std::string>();
    else if (key == "data") cfg.data = v.get<std::string>();
    else if (key == "target") cfg.target = v.get<std::string>();
    else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
    else if (key == "folds") cfg.folds = v.get<std::size_t>();
    else if (key == "trees") cfg.trees = v.is_array() ? v.get<std::vector<std::size_t>>() : std::vector<std::size_t>{v.get<std::size_t>()};
    else if (key == "shrinkage") cfg.shrinkage = v.get<double>();
    else if (key == "iters") cfg.iters = v.get<std::size_t>();
    else if (key == "burn") cfg.burn = v.get<std::size_t>();
    else if (key == "alpha") cfg.alpha = v.get<double>();
    else if (key == "beta") cfg.beta = v.get<double>();
    else if (key == "nu") cfg.nu = v.get<double>();
    else if (key == "min_leaf") cfg.min_leaf = v.get<double>();
    else if (key == "max_depth") cfg.max_depth = v.get<int>();
    else if (key == "leaves") cfg.leaves = v.is_array() ? v.get<std::vector<std::size_t>>() : std::vector<std::size_t>{v.get<std::size_t>()};
    else if (key == "sigma") cfg.sigma = v.get<std::vector<double>>();
    else if (key == "out") cfg.out = v.get<std::string>();
    else if (key == "model_file") cfg.model_file = v.get<std::string>();
    else if (key == "trials") cfg.trials = v.get<std::size_t>();
    else throw ValidationError("unknown config key '" + key + "'");
  }
}

namespace detail {

/// Reads the named feature columns of a CSV; other columns are ignored.
inline Dataset load_features(const std::string& path, const std::vector<std::string>& names) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("file '" + path + "' is empty");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);
  auto header = split_csv_line(line);
  for (auto& h : header) h = std::string(trim(h));
  std::vector<std::size_t> cols;
  for (const auto& name : names) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ValidationError("feature column not found: '" + name + "'");
    cols.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  std::vector<std::vector<double>> rows;
  std::size_t row_no = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row_no;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw ValidationError("row " + std::to_string(row_no) + ": expected " + std::to_string(header.size()) + " cells");
    std::vector<double> v(cols.size());
    for (std::size_t c = 0; c < cols.size(); ++c)
      if (!parse_double(cells[cols[c]], v[c]))
        throw ValidationError("row " + std::to_string(row_no) + ", column '" + names[c] + "': non-numeric or blank cell");
    rows.push_back(std::move(v));
  }
  if (rows.empty()) throw ValidationError("file '" + path + "' has no data rows");
  Dataset d;
  d.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < names.size(); ++c)
      d.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
  d.target = Vector::Zero(d.features.rows());
  d.feature_names = names;
  return d;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write file '" + path + "'");
  return out;
}

inline std::string dataset_label(const std::string& path) {
  const auto slash = path.find_last_of("/\\");
  std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
  const auto dot = base.rfind('.');
  return dot == std::string::npos ? base : base.substr(0, dot);
}

// Named random streams derived from --seed.
inline constexpr std::uint64_t kFitStream = 1;
inline constexpr std::uint64_t kCvStream = 2;
inline constexpr std::uint64_t kBiasVarStream = 3;

inline void log_model(std::ostream& log, const FittedModel& m) {
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, PRTree>) {
          for (std::size_t i = 0; i < x.sse_trace.size(); ++i)
            log << "event=split iter=" << i << " leaves=" << i + 1 << " sse=" << fmt(x.sse_trace[i]) << '\n';
        } else if constexpr (std::is_same_v<T, Forest>) {
          for (std::size_t l = 0; l < x.trees.size(); ++l)
            log << "event=tree index=" << l << " leaves=" << x.trees[l].leaf_count()
                << " sse=" << fmt(x.trees[l].sse_trace.back()) << '\n';
        } else if constexpr (std::is_same_v<T, BoostedEnsemble>) {
          for (std::size_t l = 0; l < x.trees.size(); ++l)
            log << "event=stage index=" << l << " leaves=" << x.trees[l].leaf_count()
                << " train_rmse=" << fmt(x.rmse_trace[l]) << '\n';
        } else {
          for (std::size_t it = 0; it < x.acceptance_trace.size(); ++it)
            log << "event=iteration iter=" << it + 1 << " acceptance=" << fmt(x.acceptance_trace[it])
                << " sigma_tilde=" << fmt(x.sigma_trace[it]) << '\n';
          for (std::size_t k = 0; k < x.acceptance_log.size(); ++k)
            if (x.acceptance_log[k].proposed > 0)
              log << "event=moves kind=" << move_name(static_cast<MoveKind>(k))
                  << " proposed=" << x.acceptance_log[k].proposed << " accepted=" << x.acceptance_log[k].accepted << '\n';
        }
      },
      m.model);
}

/**
 * Fits the configured learner on a full dataset. Without an explicit sigma,
 * 20% of the rows are held out to tune it (with the boosted ensemble itself
 * for gbt, the single tree otherwise) before refitting on everything.
 */
inline std::pair<FittedModel, double> fit_full(const LearnerSpec& spec, const Dataset& scaled, const RngSpec& rng) {
  if (spec.sigma) return {fit_learner(spec, scaled, *spec.sigma, rng.child(1)), -1.0};
  std::vector<std::size_t> perm(scaled.n());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  auto eng = rng.child(0).engine();
  std::shuffle(perm.begin(), perm.end(), eng);
  const auto nv = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(perm.size()))));
  std::vector<std::size_t> vi(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(nv));
  std::vector<std::size_t> ti(perm.begin() + static_cast<std::ptrdiff_t>(nv), perm.end());
  std::sort(vi.begin(), vi.end());
  std::sort(ti.begin(), ti.end());
  const Dataset train = scaled.subset(ti), valid = scaled.subset(vi);
  double c;
  if (spec.kind == LearnerKind::gbt) {
    c = tune_sigma(train, valid, [&](const Dataset& t, const SigmaVector& s) {
          return fit_prgbt(t, spec.tree_count(), s, spec.rule, rng.child(1), spec.shrinkage);
        }).multiplier;
  } else {
    c = tune_tree_sigma(train, valid, spec.rule).multiplier;
  }
  const SigmaVector sigma = scaled_sigma(feature_stddev(scaled), c);
  return {fit_learner(spec, scaled, sigma, rng.child(1)), c};
}

}  // namespace detail

inline void run_fit(const RunConfig& cfg, std::ostream& log) {
  const Dataset raw = load_csv(cfg.data, cfg.target);
  auto [scaled, scaler] = standard_scale(raw);
  const LearnerSpec spec = cfg.learner();
  if (spec.sigma) check_sigma(*spec.sigma, raw.p());
  const RngSpec rng{cfg.seed, detail::kFitStream};
  auto [model, c] = detail::fit_full(spec, scaled, rng);
  if (c >= 0.0) log << "event=sigma multiplier=" << detail::fmt(c) << '\n';
  detail::log_model(log, model);
  ModelFile file{cfg.target, raw.feature_names, scaler, std::move(model)};
  write_json_file(cfg.out, to_json(file));
}

inline void run_predict(const RunConfig& cfg, std::ostream& log) {
  const ModelFile file = model_file_from_json(read_json_file(cfg.model_file));
  const Dataset raw = detail::load_features(cfg.data, file.feature_names);
  const Vector pred = file.predict_raw(raw);
  auto out = detail::open_out(cfg.out);
  out << "row,prediction\n";
  for (Eigen::Index i = 0; i < pred.size(); ++i) out << i << ',' << detail::fmt(pred(i)) << '\n';
  log << "event=predict rows=" << pred.size() << '\n';
}

inline void run_cv(const RunConfig& cfg, std::ostream& log) {
  const Dataset raw = load_csv(cfg.data, cfg.target);
  const LearnerSpec spec = cfg.learner();
  if (spec.sigma) check_sigma(*spec.sigma, raw.p());
  const RngSpec rng{cfg.seed, detail::kCvStream};
  const CVPlan plan = make_cv_plan(raw.target, cfg.folds, rng.child(0));
  const CVResult r = cross_validate(raw, spec, plan, rng.child(1));
  for (std::size_t f = 0; f < r.fold_rmse.size(); ++f)
    log << "event=fold index=" << f << " rmse=" << detail::fmt(r.fold_rmse[f])
        << " sigma_multiplier=" << detail::fmt(r.fold_multiplier[f]) << '\n';
  log << "event=cv mean=" << detail::fmt(r.mean) << " std=" << detail::fmt(r.std) << '\n';
  auto out = detail::open_out(cfg.out);
  write_cv_csv(out, detail::dataset_label(cfg.data), cfg.model, r);
}

/**
 * Sweeps one complexity knob: the tree count for ensembles (--trees) or the
 * leaf cap for single trees (--leaves). Sigma comes from --sigma or is tuned
 * once with a single tree and then held fixed.
 */
inline void run_biasvar(const RunConfig& cfg, std::ostream& log) {
  const Dataset raw = load_csv(cfg.data, cfg.target);
  const RngSpec rng{cfg.seed, detail::kBiasVarStream};
  LearnerSpec base = cfg.learner();
  SigmaVector sigma;
  if (base.sigma) {
    check_sigma(*base.sigma, raw.p());
    sigma = *base.sigma;
  } else {
    const auto tuned = tune_biasvar_sigma(raw, base.rule, rng);
    sigma = tuned.sigma;
    log << "event=sigma multiplier=" << detail::fmt(tuned.multiplier) << '\n';
  }

  std::vector<BiasVarRow> rows;
  std::vector<double> knob;
  std::vector<std::vector<double>> bias, var;
  const bool sweep_leaves = !cfg.leaves.empty() && cfg.trees.size() <= 1;
  const std::vector<std::size_t> values =
      sweep_leaves ? cfg.leaves : (cfg.trees.empty() ? std::vector<std::size_t>{base.tree_count()} : cfg.trees);
  for (std::size_t v : values) {
    const LearnerSpec spec = sweep_leaves ? cfg.learner(std::nullopt, v) : cfg.learner(v);
    const BiasVarReport r = bias_variance(raw, spec, sigma, cfg.trials, rng);
    rows.push_back({cfg.model, sweep_leaves ? "max_leaves" : "trees", static_cast<double>(v), r});
    knob.push_back(static_cast<double>(v));
    bias.push_back(r.point_bias_sq);
    var.push_back(r.point_variance);
    log << "event=biasvar value=" << v << " bias_sq=" << detail::fmt(r.bias_sq) << " variance=" << detail::fmt(r.variance)
        << " mse=" << detail::fmt(r.mse) << '\n';
  }
  if (values.size() >= 2) {
    const TrendTest vdown = trend_test(knob, var, false), vup = trend_test(knob, var, true);
    const TrendTest bdown = trend_test(knob, bias, false);
    log << "event=trend statistic=variance direction=decreasing mean_rho=" << detail::fmt(vdown.mean_rho)
        << " p=" << detail::fmt(vdown.p_value) << '\n';
    log << "event=trend statistic=variance direction=increasing mean_rho=" << detail::fmt(vup.mean_rho)
        << " p=" << detail::fmt(vup.p_value) << '\n';
    log << "event=trend statistic=bias_sq direction=decreasing mean_rho=" << detail::fmt(bdown.mean_rho)
        << " p=" << detail::fmt(bdown.p_value) << '\n';
  }
  auto out = detail::open_out(cfg.out);
  write_biasvar_csv(out, rows);
}

/// Executes one command. Returns 0 on success, 1 on invalid input, 2 on numerical failure.
inline int run(const RunConfig& cfg, std::ostream& log = std::cerr) {
  try {
    cfg.validate();
    if (cfg.command == "fit") run_fit(cfg, log);
    else if (cfg.command == "predict") run_predict(cfg, log);
    else if (cfg.command == "cv") run_cv(cfg, log);
    else run_biasvar(cfg, log);
    return 0;
  } catch (const NumericalError& e) {
    log << "error: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    log << "error: " << e.what() << '\n';
    return 1;
  } catch (const json::exception& e) {
    log << "error: malformed JSON: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace prtree
