#include "prtree/ensemble.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace prtree;

namespace {

PRTree constant_tree(double gamma, std::size_t p) {
  PRTree t;
  t.nodes = {TreeNode{-1, 0, -1, -1, 0, 0}};
  t.leaf_regions = {Region::whole(p)};
  t.gamma = Vector::Constant(1, gamma);
  t.sigma = SigmaVector::zeros(p);
  return t;
}

Dataset boston_scaled() {
  return standard_scale(load_csv(std::string(PRTREE_DATA_DIR) + "/boston.csv", "medv")).first;
}

}  // namespace

TEST(Forest, SingleTreeWithoutBootstrapEqualsTree) {
  std::mt19937_64 rng(1);
  const Dataset d = oracle::random_dataset(rng, 90, 3);
  const SigmaVector s(std::vector<double>{0.2, 0.3, 0.1});
  const Forest f = fit_prrf(d, 1, s, StoppingRule{}, RngSpec{5, 0}, false);
  const PRTree t = fit_prtree(d, s, StoppingRule{});
  for (std::size_t i = 0; i < d.n(); ++i) EXPECT_EQ(f.predict(d.row(i)), t.predict(d.row(i)));
}

TEST(Forest, ConstantTargetGivesConstant) {
  std::mt19937_64 rng(2);
  Dataset d = oracle::random_dataset(rng, 60, 2);
  d.target.setConstant(-1.5);
  const Forest f = fit_prrf(d, 10, SigmaVector(std::vector<double>{0.5, 0.5}), StoppingRule{}, RngSpec{1, 0});
  for (const auto& t : f.trees) EXPECT_EQ(t.leaf_count(), 1u);
  EXPECT_EQ(f.predict(d.row(3)), -1.5);
}

TEST(Forest, MeanOfTrees) {
  Forest f;
  f.trees = {constant_tree(0.0, 1), constant_tree(2.0, 1)};
  f.sigma = SigmaVector::zeros(1);
  EXPECT_EQ(predict_forest(f, Vector::Zero(1)), 1.0);

  Forest same;
  same.trees = {constant_tree(0.1, 1), constant_tree(0.1, 1), constant_tree(0.1, 1)};
  EXPECT_EQ(same.predict(Vector::Zero(1)), 0.1);
}

TEST(Forest, RecomputedMeanPermutationAndBounds) {
  std::mt19937_64 rng(3);
  const Dataset d = oracle::random_dataset(rng, 80, 2);
  const SigmaVector s(std::vector<double>{0.4, 0.4});
  const Forest f = fit_prrf(d, 3, s, StoppingRule{}, RngSpec{9, 0});
  Forest shuffled = f;
  std::swap(shuffled.trees[0], shuffled.trees[2]);
  std::swap(shuffled.trees[1], shuffled.trees[2]);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int k = 0; k < 200; ++k) {
    Vector x(2);
    x << u(rng), u(rng);
    const double a = f.trees[0].predict(x), b = f.trees[1].predict(x), c = f.trees[2].predict(x);
    const double got = f.predict(x);
    EXPECT_NEAR(got, (a + b + c) / 3.0, 1e-12);
    EXPECT_EQ(got, shuffled.predict(x));
    EXPECT_GE(got, std::min({a, b, c}));
    EXPECT_LE(got, std::max({a, b, c}));
  }
}

TEST(Forest, VarianceShrinksWithTreeCount) {
  std::mt19937_64 rng(4);
  const Dataset d = oracle::random_dataset(rng, 100, 2);
  const SigmaVector s(std::vector<double>{0.3, 0.3});
  std::vector<Vector> grid;
  std::uniform_real_distribution<double> u(-2, 2);
  for (int k = 0; k < 40; ++k) {
    Vector x(2);
    x << u(rng), u(rng);
    grid.push_back(x);
  }
  std::vector<double> avg_var;
  for (std::size_t m : {1, 5, 25, 100}) {
    std::vector<std::vector<double>> preds(grid.size());
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Forest f = fit_prrf(d, m, s, StoppingRule{}, RngSpec{seed, 0});
      for (std::size_t g = 0; g < grid.size(); ++g) preds[g].push_back(f.predict(grid[g]));
    }
    double v = 0;
    for (const auto& p : preds) {
      double mean = 0;
      for (double a : p) mean += a;
      mean /= double(p.size());
      for (double a : p) v += (a - mean) * (a - mean) / double(p.size() - 1);
    }
    avg_var.push_back(v / double(grid.size()));
  }
  for (std::size_t i = 1; i < avg_var.size(); ++i) EXPECT_LT(avg_var[i], avg_var[i - 1]);
}

TEST(Forest, FeatureSubsetsAndValidation) {
  std::mt19937_64 rng(5);
  const Dataset d = oracle::random_dataset(rng, 80, 4);
  const Forest f = fit_prrf(d, 6, SigmaVector::zeros(4), StoppingRule{}, RngSpec{3, 0}, true, 2);
  for (std::size_t l = 0; l < f.size(); ++l) {
    ASSERT_EQ(f.feature_subsample[l].size(), 2u);
    for (const auto& n : f.trees[l].nodes)
      if (!n.is_leaf())
        EXPECT_NE(std::find(f.feature_subsample[l].begin(), f.feature_subsample[l].end(),
                            static_cast<std::size_t>(n.feature)),
                  f.feature_subsample[l].end());
  }
  EXPECT_THROW(fit_prrf(d, 2, SigmaVector::zeros(4), StoppingRule{}, RngSpec{}, true, 5), ValidationError);
  EXPECT_THROW(fit_prrf(d, 0, SigmaVector::zeros(4), StoppingRule{}, RngSpec{}), ValidationError);
}

TEST(Forest, DeterministicUnderSameSeed) {
  std::mt19937_64 rng(6);
  const Dataset d = oracle::random_dataset(rng, 70, 3);
  const SigmaVector s(std::vector<double>{0.2, 0.2, 0.2});
  const Forest a = fit_prrf(d, 5, s, StoppingRule{}, RngSpec{11, 4});
  const Forest b = fit_prrf(d, 5, s, StoppingRule{}, RngSpec{11, 4});
  for (std::size_t l = 0; l < 5; ++l) {
    EXPECT_EQ(a.trees[l].gamma, b.trees[l].gamma);
    EXPECT_EQ(a.trees[l].leaf_regions, b.trees[l].leaf_regions);
  }
}

TEST(Boosting, SingleStageEqualsTree) {
  std::mt19937_64 rng(7);
  const Dataset d = oracle::random_dataset(rng, 90, 3);
  const SigmaVector s(std::vector<double>{0.2, 0.3, 0.1});
  const BoostedEnsemble b = fit_prgbt(d, 1, s, StoppingRule{}, RngSpec{});
  const PRTree t = fit_prtree(d, s, StoppingRule{});
  for (std::size_t i = 0; i < d.n(); ++i) EXPECT_EQ(b.predict(d.row(i)), t.predict(d.row(i)));
}

TEST(Boosting, ExactFitLeavesZeroResidualStage) {
  Dataset d;
  d.features.resize(40, 1);
  d.target.resize(40);
  for (Eigen::Index i = 0; i < 40; ++i) {
    d.features(i, 0) = static_cast<double>(i);
    d.target(i) = i < 20 ? 1.0 : 5.0;
  }
  const BoostedEnsemble b = fit_prgbt(d, 2, SigmaVector::zeros(1), StoppingRule{}, RngSpec{});
  EXPECT_LE(b.trees[1].gamma.cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE(b.rmse_trace.back(), 1e-12);
}

TEST(Boosting, TrainingRmseNonIncreasingOnBoston) {
  const Dataset d = boston_scaled();
  const BoostedEnsemble b = fit_prgbt(d, 50, SigmaVector(std::vector<double>(d.p(), 0.25)), StoppingRule{}, RngSpec{});
  ASSERT_EQ(b.rmse_trace.size(), 50u);
  for (std::size_t i = 1; i < b.rmse_trace.size(); ++i) EXPECT_LE(b.rmse_trace[i], b.rmse_trace[i - 1] * (1 + 1e-12));
  EXPECT_LT(b.rmse_trace.back(), b.rmse_trace.front());
}

TEST(Boosting, ShrunkenTrainingRmseNonIncreasing) {
  std::mt19937_64 rng(8);
  const Dataset d = oracle::random_dataset(rng, 120, 3);
  const BoostedEnsemble b = fit_prgbt(d, 20, SigmaVector(std::vector<double>(3, 0.3)), StoppingRule{}, RngSpec{}, 0.3);
  for (std::size_t i = 1; i < b.rmse_trace.size(); ++i) EXPECT_LE(b.rmse_trace[i], b.rmse_trace[i - 1] * (1 + 1e-12));
}

TEST(Boosting, PredictionIsShrunkenSum) {
  BoostedEnsemble b;
  b.trees = {constant_tree(1.0, 1), constant_tree(0.5, 1)};
  EXPECT_EQ(predict_boosted(b, Vector::Zero(1)), 1.5);
  BoostedEnsemble half;
  half.shrinkage = 0.5;
  half.trees = {constant_tree(2.0, 1), constant_tree(2.0, 1)};
  EXPECT_EQ(half.predict(Vector::Zero(1)), 2.0);
  BoostedEnsemble single;
  single.trees = {constant_tree(3.25, 1)};
  EXPECT_EQ(single.predict(Vector::Zero(1)), single.trees[0].predict(Vector::Zero(1)));
}

TEST(Boosting, RejectsBadShrinkage) {
  std::mt19937_64 rng(9);
  const Dataset d = oracle::random_dataset(rng, 30, 1);
  EXPECT_THROW(fit_prgbt(d, 2, SigmaVector::zeros(1), StoppingRule{}, RngSpec{}, 0.0), ValidationError);
  EXPECT_THROW(fit_prgbt(d, 2, SigmaVector::zeros(1), StoppingRule{}, RngSpec{}, 1.5), ValidationError);
  EXPECT_THROW(fit_prgbt(d, 0, SigmaVector::zeros(1), StoppingRule{}, RngSpec{}), ValidationError);
}
