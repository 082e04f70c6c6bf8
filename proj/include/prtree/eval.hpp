#pragma once

#include "prtree/ensemble.hpp"
#include "prtree/pbart.hpp"
#include "prtree/tree.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace prtree {

inline double rmse(const Vector& truth, const Vector& pred) {
  if (truth.size() != pred.size() || truth.size() == 0) throw ValidationError("rmse needs equal, non-empty vectors");
  return std::sqrt((truth - pred).squaredNorm() / static_cast<double>(truth.size()));
}

// ---------------------------------------------------------------------------
// Learners

enum class LearnerKind { tree, rf, gbt, pbart };

inline const char* learner_name(LearnerKind k) {
  switch (k) {
    case LearnerKind::tree: return "tree";
    case LearnerKind::rf: return "rf";
    case LearnerKind::gbt: return "gbt";
    case LearnerKind::pbart: return "pbart";
  }
  return "?";
}

inline LearnerKind parse_learner(const std::string& s) {
  if (s == "tree") return LearnerKind::tree;
  if (s == "rf") return LearnerKind::rf;
  if (s == "gbt") return LearnerKind::gbt;
  if (s == "pbart") return LearnerKind::pbart;
  throw ValidationError("unknown model kind '" + s + "' (expected tree, rf, gbt or pbart)");
}

/**
 * @brief Everything needed to fit one model kind.
 *
 * `trees` = 0 picks the kind's default (100 for rf, 50 for gbt and pbart).
 * When `sigma` is set it is used as is; otherwise it is tuned on a
 * validation split.
 */
struct LearnerSpec {
  LearnerKind kind = LearnerKind::tree;
  StoppingRule rule;
  std::size_t trees = 0;
  double shrinkage = 1.0;
  bool bootstrap = true;
  std::size_t vars_per_tree = 0;
  PBartHyper pbart;
  std::optional<SigmaVector> sigma;

  std::size_t tree_count() const {
    if (trees > 0) return trees;
    switch (kind) {
      case LearnerKind::rf: return 100;
      case LearnerKind::gbt: return 50;
      case LearnerKind::pbart: return 50;
      default: return 1;
    }
  }
};

/// A fitted model of any kind.
struct FittedModel {
  std::variant<PRTree, Forest, BoostedEnsemble, PBartChain> model;

  Vector predict(const Dataset& d) const {
    return std::visit([&](const auto& m) -> Vector { return m.predict(d); }, model);
  }

  template <class Point>
  double predict_point(const Point& x) const {
    return std::visit([&](const auto& m) -> double { return m.predict(x); }, model);
  }
};

/// Fits the learner with a fixed sigma on an already scaled training set.
inline FittedModel fit_learner(const LearnerSpec& spec, const Dataset& train, const SigmaVector& sigma,
                               const RngSpec& rng) {
  switch (spec.kind) {
    case LearnerKind::tree: return {fit_prtree(train, sigma, spec.rule, rng)};
    case LearnerKind::rf:
      return {fit_prrf(train, spec.tree_count(), sigma, spec.rule, rng, spec.bootstrap, spec.vars_per_tree)};
    case LearnerKind::gbt: return {fit_prgbt(train, spec.tree_count(), sigma, spec.rule, rng, spec.shrinkage)};
    case LearnerKind::pbart: {
      PBartHyper h = spec.pbart;
      h.m = spec.tree_count();
      return {fit_pbart(train, h, sigma, rng)};
    }
  }
  throw ValidationError("unknown learner");
}

// ---------------------------------------------------------------------------
// Sigma tuning

/// Shared multipliers of the per-feature standard deviation tried by tune_sigma.
inline std::vector<double> sigma_grid() {
  std::vector<double> c;
  for (int i = 0; i <= 8; ++i) c.push_back(0.25 * i);
  return c;
}

inline SigmaVector scaled_sigma(const std::vector<double>& stddev, double c) {
  std::vector<double> s(stddev.size());
  for (std::size_t j = 0; j < s.size(); ++j) s[j] = c * stddev[j];
  return SigmaVector(std::move(s));
}

template <class Model>
struct TuneResult {
  SigmaVector sigma;
  double multiplier = 0.0;
  double rmse = 0.0;
  std::vector<double> grid_rmse;
  Model model;
};

/**
 * @brief Grid search over sigma = c * (training std of each feature).
 *
 * `learner(train, sigma)` returns a model with predict(Dataset). The
 * multiplier with the lowest validation RMSE wins; ties go to the smaller c.
 */
template <class Learner>
auto tune_sigma(const Dataset& train, const Dataset& valid, Learner&& learner) {
  using Model = std::decay_t<decltype(learner(train, SigmaVector::zeros(train.p())))>;
  if (valid.n() == 0) throw ValidationError("tune_sigma needs a non-empty validation set");
  const auto sd = feature_stddev(train);
  std::optional<TuneResult<Model>> best;
  std::vector<double> scores;
  for (double c : sigma_grid()) {
    const SigmaVector s = scaled_sigma(sd, c);
    Model m = learner(train, s);
    const double e = rmse(valid.target, m.predict(valid));
    scores.push_back(e);
    if (!best || e < best->rmse) best = TuneResult<Model>{s, c, e, {}, std::move(m)};
  }
  best->grid_rmse = std::move(scores);
  return std::move(*best);
}

// ---------------------------------------------------------------------------
// Cross-validation

/// Folds stratified on target deciles; `valid_fraction` is the share of non-test rows held out for tuning.
struct CVPlan {
  std::vector<std::vector<std::size_t>> folds;
  double valid_fraction = 15.0 / 80.0;

  std::size_t size() const { return folds.size(); }
};

/**
 * @brief Stratified fold assignment for a continuous target.
 *
 * Rows are ranked by target and cut into ten near-equal bins. Each bin is
 * shuffled and dealt to the folds round-robin, with the dealing position
 * carried over from one bin to the next.
 */
inline CVPlan make_cv_plan(const Vector& y, std::size_t folds, const RngSpec& rng) {
  const std::size_t n = static_cast<std::size_t>(y.size());
  if (folds < 2) throw ValidationError("cross-validation needs at least 2 folds");
  if (n < folds) throw ValidationError("fewer rows than folds");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return y(static_cast<Eigen::Index>(a)) < y(static_cast<Eigen::Index>(b));
  });
  constexpr std::size_t kBins = 10;
  auto eng = rng.engine();
  CVPlan plan;
  plan.folds.resize(folds);
  std::size_t deal = 0;
  for (std::size_t b = 0; b < kBins; ++b) {
    const std::size_t lo = b * n / kBins, hi = (b + 1) * n / kBins;
    std::vector<std::size_t> bin(order.begin() + static_cast<std::ptrdiff_t>(lo), order.begin() + static_cast<std::ptrdiff_t>(hi));
    std::shuffle(bin.begin(), bin.end(), eng);
    for (std::size_t i : bin) plan.folds[deal++ % folds].push_back(i);
  }
  for (auto& f : plan.folds) std::sort(f.begin(), f.end());
  return plan;
}

/// One fold's data after scaling with statistics from the non-test rows.
struct FoldSplit {
  std::size_t fold = 0;
  Dataset train;  // empty rows when no validation split was requested: then `rest` is the training set
  Dataset valid;
  Dataset rest;  // train and valid together
  Dataset test;
  Scaler scaler;
  RngSpec rng;
};

struct FoldOutcome {
  Vector test_prediction;
  double multiplier = -1.0;  // chosen sigma multiplier, -1 when not tuned
};

struct CVResult {
  std::vector<double> fold_rmse;
  std::vector<double> fold_multiplier;
  double mean = 0.0;
  double std = 0.0;  // sample std across folds
};

inline FoldSplit make_fold(const Dataset& d, const CVPlan& plan, std::size_t f, const RngSpec& rng) {
  FoldSplit fs;
  fs.fold = f;
  fs.rng = rng.child(f);
  std::vector<char> is_test(d.n(), 0);
  for (std::size_t i : plan.folds[f]) is_test[i] = 1;
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < d.n(); ++i)
    if (!is_test[i]) rest.push_back(i);

  const Dataset rest_raw = d.subset(rest);
  fs.scaler = fit_scaler(rest_raw);
  fs.rest = fs.scaler.apply(rest_raw);
  fs.test = fs.scaler.apply(d.subset(plan.folds[f]));

  std::vector<std::size_t> perm(rest.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  auto eng = fs.rng.child(0).engine();
  std::shuffle(perm.begin(), perm.end(), eng);
  const auto n_valid = static_cast<std::size_t>(std::llround(plan.valid_fraction * static_cast<double>(rest.size())));
  std::vector<std::size_t> vi(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_valid));
  std::vector<std::size_t> ti(perm.begin() + static_cast<std::ptrdiff_t>(n_valid), perm.end());
  std::sort(vi.begin(), vi.end());
  std::sort(ti.begin(), ti.end());
  fs.valid = fs.rest.subset(vi);
  fs.train = fs.rest.subset(ti);
  return fs;
}

inline CVResult summarize_folds(std::vector<double> fold_rmse, std::vector<double> multipliers) {
  CVResult r;
  r.fold_rmse = std::move(fold_rmse);
  r.fold_multiplier = std::move(multipliers);
  const double k = static_cast<double>(r.fold_rmse.size());
  r.mean = std::accumulate(r.fold_rmse.begin(), r.fold_rmse.end(), 0.0) / k;
  double ss = 0.0;
  for (double e : r.fold_rmse) ss += (e - r.mean) * (e - r.mean);
  r.std = r.fold_rmse.size() > 1 ? std::sqrt(ss / (k - 1.0)) : 0.0;
  return r;
}

/// Cross-validates an arbitrary learner: `learner(fold)` returns predictions for fold.test.
template <class Learner>
CVResult cross_validate(const Dataset& d, const CVPlan& plan, const RngSpec& rng, Learner&& learner) {
  if (d.n() < 10) throw ValidationError("cross-validation needs at least 10 rows");
  std::vector<double> errs, mult;
  for (std::size_t f = 0; f < plan.size(); ++f) {
    const FoldSplit fs = make_fold(d, plan, f, rng);
    const FoldOutcome out = learner(fs);
    errs.push_back(rmse(fs.test.target, out.test_prediction));
    mult.push_back(out.multiplier);
  }
  return summarize_folds(std::move(errs), std::move(mult));
}

/// Tunes sigma for a single PR tree on (train, valid) and returns the winner.
inline TuneResult<PRTree> tune_tree_sigma(const Dataset& train, const Dataset& valid, const StoppingRule& rule) {
  return tune_sigma(train, valid, [&](const Dataset& t, const SigmaVector& s) { return fit_prtree(t, s, rule); });
}

/**
 * @brief Fits `spec` on one fold.
 *
 * Single trees and boosted ensembles tune sigma with their own kind and keep
 * the winning model, which was trained on the training part only. Forests
 * and P-BART reuse the single-tree sigma and refit on training plus
 * validation rows.
 */
inline FoldOutcome fit_fold(const LearnerSpec& spec, const FoldSplit& fs) {
  const RngSpec model_rng = fs.rng.child(1);
  if (spec.sigma) {
    const FittedModel m = fit_learner(spec, fs.rest, *spec.sigma, model_rng);
    return {m.predict(fs.test), -1.0};
  }
  switch (spec.kind) {
    case LearnerKind::tree: {
      auto tuned = tune_tree_sigma(fs.train, fs.valid, spec.rule);
      return {tuned.model.predict(fs.test), tuned.multiplier};
    }
    case LearnerKind::gbt: {
      auto tuned = tune_sigma(fs.train, fs.valid, [&](const Dataset& t, const SigmaVector& s) {
        return fit_prgbt(t, spec.tree_count(), s, spec.rule, model_rng, spec.shrinkage);
      });
      return {tuned.model.predict(fs.test), tuned.multiplier};
    }
    case LearnerKind::rf:
    case LearnerKind::pbart: {
      auto tuned = tune_tree_sigma(fs.train, fs.valid, spec.rule);
      const FittedModel m = fit_learner(spec, fs.rest, tuned.sigma, model_rng);
      return {m.predict(fs.test), tuned.multiplier};
    }
  }
  throw ValidationError("unknown learner");
}

inline CVResult cross_validate(const Dataset& d, const LearnerSpec& spec, const CVPlan& plan, const RngSpec& rng) {
  return cross_validate(d, plan, rng, [&](const FoldSplit& fs) { return fit_fold(spec, fs); });
}

// ---------------------------------------------------------------------------
// Bias and variance

struct BiasVarReport {
  double bias_sq = 0.0;
  double variance = 0.0;
  double mse = 0.0;
  std::size_t trials = 0;
  std::vector<double> point_bias_sq;   // per pool point
  std::vector<double> point_variance;  // per pool point, divisor = trials
};

/// Fixed evaluation pool and the rows trials are drawn from.
struct BiasVarDesign {
  std::vector<std::size_t> pool;
  std::vector<std::size_t> source;
};

/// The pool is the 20% test part of a first random 80/20 subsample.
inline BiasVarDesign make_biasvar_design(std::size_t n, const RngSpec& rng) {
  if (n < 10) throw ValidationError("bias-variance needs at least 10 rows");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  auto eng = rng.engine();
  std::shuffle(perm.begin(), perm.end(), eng);
  const auto n_pool = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n)));
  BiasVarDesign des;
  des.pool.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_pool));
  des.source.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_pool), perm.end());
  std::sort(des.pool.begin(), des.pool.end());
  std::sort(des.source.begin(), des.source.end());
  return des;
}

/// Trial t trains on a random 80% of the source rows, drawn from stream t.
inline std::vector<std::size_t> biasvar_trial_rows(const BiasVarDesign& des, std::size_t t, const RngSpec& rng) {
  std::vector<std::size_t> rows = des.source;
  auto eng = rng.child(t).engine();
  std::shuffle(rows.begin(), rows.end(), eng);
  rows.resize(static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(rows.size()))));
  std::sort(rows.begin(), rows.end());
  return rows;
}

/// Decomposes pool predictions (trials x pool) against the pool targets.
inline BiasVarReport decompose(const std::vector<Vector>& predictions, const Vector& truth) {
  if (predictions.size() < 2) throw ValidationError("bias-variance needs at least 2 trials");
  const std::size_t T = predictions.size();
  const Eigen::Index N = truth.size();
  BiasVarReport r;
  r.trials = T;
  double mse = 0.0;
  for (Eigen::Index i = 0; i < N; ++i) {
    // deviations from the first trial keep identical predictions at exactly zero variance
    const double shift = predictions[0](i);
    double dev = 0.0;
    for (const auto& p : predictions) dev += p(i) - shift;
    dev /= static_cast<double>(T);
    const double mean = shift + dev;
    double var = 0.0;
    for (const auto& p : predictions) {
      const double e = (p(i) - shift) - dev;
      var += e * e;
      mse += (truth(i) - p(i)) * (truth(i) - p(i));
    }
    var /= static_cast<double>(T);
    r.point_bias_sq.push_back((truth(i) - mean) * (truth(i) - mean));
    r.point_variance.push_back(var);
  }
  const double dn = static_cast<double>(N);
  r.bias_sq = std::accumulate(r.point_bias_sq.begin(), r.point_bias_sq.end(), 0.0) / dn;
  r.variance = std::accumulate(r.point_variance.begin(), r.point_variance.end(), 0.0) / dn;
  r.mse = mse / (dn * static_cast<double>(T));
  return r;
}

/**
 * @brief Repeated-subsample bias and variance on a fixed pool.
 *
 * `learner(train, trial)` returns predictions on `pool`. Both datasets are
 * scaled with statistics of the source rows, so every trial sees the same
 * coordinates.
 */
template <class Learner>
BiasVarReport bias_variance(const Dataset& d, const BiasVarDesign& des, std::size_t trials, const RngSpec& rng,
                            Learner&& learner) {
  if (trials < 2) throw ValidationError("bias-variance needs at least 2 trials");
  const Scaler sc = fit_scaler(d.subset(des.source));
  const Dataset scaled = sc.apply(d);
  const Dataset pool = scaled.subset(des.pool);
  std::vector<Vector> preds;
  for (std::size_t t = 0; t < trials; ++t) {
    const Dataset train = scaled.subset(biasvar_trial_rows(des, t, rng));
    preds.push_back(learner(train, pool, t));
  }
  return decompose(preds, pool.target);
}

inline BiasVarReport bias_variance(const Dataset& d, const LearnerSpec& spec, const SigmaVector& sigma,
                                   std::size_t trials, const RngSpec& rng) {
  const BiasVarDesign des = make_biasvar_design(d.n(), rng.child(0));
  const RngSpec trial_rng = rng.child(1);
  return bias_variance(d, des, trials, trial_rng, [&](const Dataset& train, const Dataset& pool, std::size_t t) {
    return fit_learner(spec, train, sigma, trial_rng.child(1000 + t)).predict(pool);
  });
}

/// Tunes the single-tree sigma once on the source rows of a bias-variance design (80/20 train/valid).
inline TuneResult<PRTree> tune_biasvar_sigma(const Dataset& d, const StoppingRule& rule, const RngSpec& rng) {
  const BiasVarDesign des = make_biasvar_design(d.n(), rng.child(0));
  const Scaler sc = fit_scaler(d.subset(des.source));
  const Dataset src = sc.apply(d.subset(des.source));
  std::vector<std::size_t> perm(src.n());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  auto eng = rng.child(2).engine();
  std::shuffle(perm.begin(), perm.end(), eng);
  const auto nv = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(perm.size())));
  std::vector<std::size_t> vi(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(nv));
  std::vector<std::size_t> ti(perm.begin() + static_cast<std::ptrdiff_t>(nv), perm.end());
  std::sort(vi.begin(), vi.end());
  std::sort(ti.begin(), ti.end());
  return tune_tree_sigma(src.subset(ti), src.subset(vi), rule);
}

// ---------------------------------------------------------------------------
// Monotone trend test

/// Spearman rank correlation; nothing when either side is constant.
inline std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  if (a.size() != b.size() || a.size() < 2) return std::nullopt;
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

struct TrendTest {
  double mean_rho = 0.0;   // average per-point Spearman correlation with the knob
  double t_stat = 0.0;
  double p_value = 1.0;    // one-sided, in the requested direction
  std::size_t points = 0;  // points with a defined correlation
  bool significant(double level = 0.05) const { return p_value < level; }
};

/**
 * @brief One-sided test that per-point values move monotonically with a knob.
 *
 * `values[l][i]` is point i's statistic at knob level l. Each point
 * contributes its Spearman correlation with the knob levels; a one-sample
 * t-test on those correlations gives the p-value for `increasing` (or
 * decreasing when false).
 */
inline TrendTest trend_test(const std::vector<double>& knob, const std::vector<std::vector<double>>& values,
                            bool increasing) {
  if (values.size() != knob.size() || values.empty()) throw ValidationError("trend_test needs one row per knob level");
  const std::size_t N = values[0].size();
  std::vector<double> rhos;
  for (std::size_t i = 0; i < N; ++i) {
    std::vector<double> series;
    for (const auto& level : values) series.push_back(level[i]);
    if (auto r = spearman(knob, series)) rhos.push_back(increasing ? *r : -*r);
  }
  TrendTest out;
  out.points = rhos.size();
  if (rhos.size() < 2) return out;
  const double n = static_cast<double>(rhos.size());
  const double mean = std::accumulate(rhos.begin(), rhos.end(), 0.0) / n;
  double ss = 0.0;
  for (double r : rhos) ss += (r - mean) * (r - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  out.mean_rho = increasing ? mean : -mean;
  if (sd == 0.0) {
    out.t_stat = mean > 0 ? kInf : (mean < 0 ? -kInf : 0.0);
    out.p_value = mean > 0 ? 0.0 : 1.0;
    return out;
  }
  out.t_stat = mean / (sd / std::sqrt(n));
  const boost::math::students_t dist(n - 1.0);
  out.p_value = boost::math::cdf(boost::math::complement(dist, out.t_stat));
  return out;
}

// ---------------------------------------------------------------------------
// CSV output

namespace detail {
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

inline void write_cv_csv(std::ostream& os, const std::string& dataset, const std::string& method, const CVResult& r) {
  os << "dataset,method,fold,rmse,sigma_multiplier\n";
  for (std::size_t f = 0; f < r.fold_rmse.size(); ++f)
    os << dataset << ',' << method << ',' << f << ',' << detail::fmt(r.fold_rmse[f]) << ','
       << detail::fmt(r.fold_multiplier[f]) << '\n';
}

struct BiasVarRow {
  std::string method;
  std::string knob;
  double value;
  BiasVarReport report;
};

inline void write_biasvar_csv(std::ostream& os, const std::vector<BiasVarRow>& rows) {
  os << "method,knob,value,bias_sq,variance,mse,trials\n";
  for (const auto& r : rows)
    os << r.method << ',' << r.knob << ',' << detail::fmt(r.value) << ',' << detail::fmt(r.report.bias_sq) << ','
       << detail::fmt(r.report.variance) << ',' << detail::fmt(r.report.mse) << ',' << r.report.trials << '\n';
}

}  // namespace prtree
