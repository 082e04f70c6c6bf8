#pragma once

#include "prtree/tree.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

namespace prtree {

/// Bagged PR trees. Prediction is the mean over trees.
struct Forest {
  std::vector<PRTree> trees;
  SigmaVector sigma;
  bool bootstrap = true;
  std::vector<std::vector<std::size_t>> feature_subsample;  // variables each tree was allowed to split on

  std::size_t size() const { return trees.size(); }

  /**
   * Per-tree predictions are sorted before summation, which makes the
   * result exactly invariant to tree order. The final clamp keeps the mean
   * inside [min, max] despite rounding.
   */
  template <class Point>
  double predict(const Point& x) const {
    if (trees.empty()) throw ValidationError("forest has no trees");
    std::vector<double> v;
    v.reserve(trees.size());
    for (const auto& t : trees) v.push_back(t.predict(x));
    std::sort(v.begin(), v.end());
    double sum = 0.0;
    for (double a : v) sum += a;
    const double mean = sum / static_cast<double>(v.size());
    return std::clamp(mean, v.front(), v.back());
  }

  Vector predict(const Dataset& d) const {
    Vector out(d.features.rows());
    for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = predict(d.features.row(i));
    return out;
  }
};

/// Stage-wise boosted PR trees. Prediction is shrinkage times the sum of stage predictions.
struct BoostedEnsemble {
  std::vector<PRTree> trees;
  double shrinkage = 1.0;
  std::vector<double> rmse_trace;  // training RMSE after each stage

  std::size_t size() const { return trees.size(); }

  template <class Point>
  double predict(const Point& x) const {
    if (trees.empty()) throw ValidationError("boosted ensemble has no trees");
    double sum = 0.0;
    for (const auto& t : trees) sum += shrinkage * t.predict(x);
    return sum;
  }

  Vector predict(const Dataset& d) const {
    Vector out(d.features.rows());
    for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = predict(d.features.row(i));
    return out;
  }
};

template <class Point>
double predict_forest(const Forest& f, const Point& x) {
  return f.predict(x);
}

template <class Point>
double predict_boosted(const BoostedEnsemble& b, const Point& x) {
  return b.predict(x);
}

/**
 * @brief Fits m PR trees on bootstrap resamples (PR-RF).
 *
 * Tree l draws its resample and its variable subset from stream l of `rng`.
 * `vars_per_tree` = 0 means all p variables. Every tree shares `sigma`.
 */
inline Forest fit_prrf(const Dataset& d, std::size_t m, const SigmaVector& sigma, const StoppingRule& rule,
                       const RngSpec& rng, bool bootstrap = true, std::size_t vars_per_tree = 0) {
  d.validate();
  if (m < 1) throw ValidationError("a forest needs at least one tree");
  if (vars_per_tree > d.p())
    throw ValidationError("vars_per_tree (" + std::to_string(vars_per_tree) + ") exceeds p (" + std::to_string(d.p()) + ")");
  check_sigma(sigma, d.p());
  if (vars_per_tree == 0) vars_per_tree = d.p();

  Forest f;
  f.sigma = sigma;
  f.bootstrap = bootstrap;
  const std::size_t n = d.n();
  for (std::size_t l = 0; l < m; ++l) {
    auto eng = rng.child(l).engine();
    std::vector<std::size_t> vars(d.p());
    std::iota(vars.begin(), vars.end(), std::size_t{0});
    if (vars_per_tree < d.p()) {
      std::shuffle(vars.begin(), vars.end(), eng);
      vars.resize(vars_per_tree);
      std::sort(vars.begin(), vars.end());
    }
    std::vector<std::size_t> rows(n);
    if (bootstrap) {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (auto& r : rows) r = pick(eng);
    } else {
      std::iota(rows.begin(), rows.end(), std::size_t{0});
    }
    const Dataset sample = bootstrap ? d.subset(rows) : d;
    const std::span<const std::size_t> allowed =
        vars_per_tree < d.p() ? std::span<const std::size_t>(vars) : std::span<const std::size_t>{};
    f.trees.push_back(fit_prtree(sample, sigma, rule, rng.child(l), allowed));
    f.feature_subsample.push_back(std::move(vars));
  }
  return f;
}

/**
 * @brief Gradient boosting with PR trees on squared loss (PR-GBT).
 *
 * Stage l fits the residual y - shrinkage * sum_{l' < l} f_l'(x).
 */
inline BoostedEnsemble fit_prgbt(const Dataset& d, std::size_t m, const SigmaVector& sigma, const StoppingRule& rule,
                                 const RngSpec& rng, double shrinkage = 1.0) {
  d.validate();
  if (m < 1) throw ValidationError("boosting needs at least one stage");
  if (!(shrinkage > 0.0 && shrinkage <= 1.0)) throw ValidationError("shrinkage must lie in (0, 1]");
  check_sigma(sigma, d.p());

  BoostedEnsemble b;
  b.shrinkage = shrinkage;
  Vector fit = Vector::Zero(d.target.size());
  for (std::size_t l = 0; l < m; ++l) {
    const Dataset stage = d.with_target(d.target - fit);
    PRTree t = fit_prtree(stage, sigma, rule, rng.child(l));
    fit += shrinkage * t.predict(d);
    b.rmse_trace.push_back(std::sqrt((d.target - fit).squaredNorm() / static_cast<double>(d.n())));
    b.trees.push_back(std::move(t));
  }
  return b;
}

}  // namespace prtree
