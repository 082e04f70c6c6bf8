#include "prtree/pbart.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace prtree;

namespace {

// x0 = 1..6 and a shuffled x1, so every cut count is easy to tally by hand
Dataset hand_dataset() {
  Dataset d;
  d.features.resize(6, 2);
  d.features << 1, 6, 2, 1, 3, 5, 4, 2, 5, 4, 6, 3;
  d.target.resize(6);
  d.target << 0.1, -0.3, 0.4, 1.2, 0.9, 1.4;
  return d;
}

StoppingRule loose_rule() { return StoppingRule{0.01, std::nullopt, std::nullopt}; }

PRTree constant_tree(double gamma, std::size_t p) {
  PRTree t;
  t.nodes = {TreeNode{-1, 0, -1, -1, 0, 0}};
  t.leaf_regions = {Region::whole(p)};
  t.gamma = Vector::Constant(1, gamma);
  t.sigma = SigmaVector::zeros(p);
  return t;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double a : v) s += a;
  return s / double(v.size());
}

double var_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0;
  for (double a : v) s += (a - m) * (a - m);
  return s / double(v.size() - 1);
}

}  // namespace

TEST(TreePrior, SingleLeaf) {
  const Dataset d = hand_dataset();
  EXPECT_DOUBLE_EQ(tree_log_prior(BartTree{}, 0.95, 2.0, d), std::log(0.05));
}

TEST(TreePrior, StumpWithOneCut) {
  Dataset d;
  d.features.resize(2, 1);
  d.features << 0, 1;
  d.target = Vector::Zero(2);
  BartTree t;
  t.grow(0, 0, 0.5);
  EXPECT_NEAR(tree_log_prior(t, 0.95, 2.0, d), std::log(0.95) + 2 * std::log(1 - 0.95 / 4), 1e-14);
}

TEST(TreePrior, DeeperTopologyMatchesRecursion) {
  std::mt19937_64 rng(1);
  const Dataset d = oracle::random_dataset(rng, 40, 3);
  const double c0 = d.features.col(0).mean(), c1 = d.features.col(1).maxCoeff() - 0.5;
  BartTree t;
  t.grow(0, 0, c0);
  const auto ls = t.leaves();
  t.grow(ls[1], 1, c1);
  t.grow(t.leaves()[0], 2, 0.0);

  oracle::PriorNode root{0, c0, {}};
  oracle::PriorNode left{2, 0.0, {oracle::PriorNode{}, oracle::PriorNode{}}};
  oracle::PriorNode right{1, c1, {oracle::PriorNode{}, oracle::PriorNode{}}};
  root.kids = {left, right};
  const oracle::Box whole{std::vector<double>(3, -kInf), std::vector<double>(3, kInf)};
  for (double beta : {0.0, 1.0, 2.0})
    EXPECT_NEAR(tree_log_prior(t, 0.9, beta, d), oracle::tree_log_prior(d, root, whole, 0, 0.9, beta), 1e-12);
}

TEST(MarginalLikelihood, ScalarExample) {
  const auto ml = marginal_log_likelihood(Vector::Zero(1), Matrix::Ones(1, 1), 1.0, 1.0);
  EXPECT_NEAR(ml.log_density, -0.5 * std::log(4 * std::numbers::pi), 1e-14);
  EXPECT_NEAR(ml.log_det, std::log(2.0), 1e-14);
}

TEST(MarginalLikelihood, VanishingWeightPrior) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0, 1);
  const Vector R = Vector::NullaryExpr(6, [&] { return g(rng); });
  const Matrix P = Matrix::NullaryExpr(6, 3, [&] { return std::abs(g(rng)); });
  const double st = 0.7;
  double ref = 0;
  for (Eigen::Index i = 0; i < 6; ++i)
    ref += -0.5 * std::log(2 * std::numbers::pi * st * st) - R(i) * R(i) / (2 * st * st);
  EXPECT_NEAR(marginal_log_likelihood(R, P, 1e-9, st).log_density, ref, 1e-9 * std::abs(ref));
}

TEST(MarginalLikelihood, MatchesDenseOracle) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0, 1);
  std::uniform_real_distribution<double> u(0, 1), sc(0.05, 2.0);
  for (int rep = 0; rep < 200; ++rep) {
    const Eigen::Index n = 1 + rep % 10, K = 1 + rep % 5;
    const Vector R = Vector::NullaryExpr(n, [&] { return g(rng); });
    const Matrix P = Matrix::NullaryExpr(n, K, [&] { return u(rng); });
    const double sg = sc(rng), st = sc(rng);
    const auto got = marginal_log_likelihood(R, P, sg, st);
    const auto [ll, logdet] = oracle::dense_log_density(R, P, sg, st);
    EXPECT_LE(std::abs(got.log_density - ll), 1e-8 * std::max(1.0, std::abs(ll)));
    EXPECT_LE(std::abs(got.log_det - logdet), 1e-8 * std::max(1.0, std::abs(logdet)));
  }
}

TEST(MarginalLikelihood, RejectsBadScales) {
  EXPECT_THROW(marginal_log_likelihood(Vector::Zero(2), Matrix::Ones(2, 1), 1.0, 0.0), ValidationError);
  EXPECT_THROW(marginal_log_likelihood(Vector::Zero(2), Matrix::Ones(3, 1), 1.0, 1.0), ValidationError);
}

TEST(ProposeTree, PruneOnSingleLeafIsInvalid) {
  const Dataset d = hand_dataset();
  std::mt19937_64 eng(4);
  MoveProbs only_prune{0.0, 1.0, 0.0, 0.0};
  const auto prop = propose_tree(BartTree{}, eng, only_prune, d, loose_rule());
  EXPECT_EQ(prop.kind, MoveKind::prune);
  EXPECT_FALSE(prop.valid());
}

TEST(ProposeTree, GrowPruneHandCount) {
  const Dataset d = hand_dataset();
  BartTree stump;
  stump.grow(0, 0, 3.5);
  const MoveProbs gp{0.5, 0.5, 0.0, 0.0};
  // both leaves growable, 2 variables each, and every leaf holds 3 distinct values per variable,
  // so any grow has q-ratio log(2 * 2 * 2) - log(1 prunable node in the grown tree)
  int grows = 0, prunes = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    std::mt19937_64 eng(seed);
    const auto prop = propose_tree(stump, eng, gp, d, loose_rule());
    ASSERT_TRUE(prop.valid());
    if (prop.kind == MoveKind::grow) {
      ++grows;
      EXPECT_NEAR(prop.log_q_ratio, std::log(8.0), 1e-12);
      // pruning the new node is the reverse move and the only prune available
      std::mt19937_64 e2(seed);
      Proposal back = propose_tree(prop.tree, e2, gp, d, loose_rule());
      for (int tries = 0; back.kind != MoveKind::prune && tries < 100; ++tries)
        back = propose_tree(prop.tree, e2, gp, d, loose_rule());
      ASSERT_EQ(back.kind, MoveKind::prune);
      EXPECT_EQ(back.tree, stump);
      EXPECT_NEAR(back.log_q_ratio, -std::log(8.0), 1e-12);
    } else {
      ++prunes;
      EXPECT_EQ(prop.tree, BartTree{});
      // single leaf: 1 growable leaf, 2 variables, 5 cuts on x0; the stump has 1 prunable node
      EXPECT_NEAR(prop.log_q_ratio, std::log(1.0) - std::log(1.0 * 2 * 5), 1e-12);
    }
  }
  EXPECT_GT(grows, 0);
  EXPECT_GT(prunes, 0);
}

TEST(ProposeTree, GrowThenPruneRestores) {
  const Dataset d = hand_dataset();
  BartTree t;
  t.grow(0, 1, 3.5);
  const auto before = t;
  t.grow(t.leaves()[1], 0, 4.5);
  t.prune(2);
  EXPECT_EQ(t, before);
}

TEST(ProposeTree, RejectsTooSmallLeaves) {
  const Dataset d = hand_dataset();
  // a third of 6 rows is 2, so no grow of a 3-row leaf can be admissible
  const StoppingRule third{1.0 / 3.0, std::nullopt, std::nullopt};
  BartTree stump;
  stump.grow(0, 0, 3.5);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 eng(seed);
    const auto prop = propose_tree(stump, eng, MoveProbs{1.0 - 1e-12, 1e-12, 0.0, 0.0}, d, third);
    if (prop.kind == MoveKind::grow) EXPECT_FALSE(prop.valid());
  }
}

TEST(ProposeTree, SwapAndChangeKeepShapeValid) {
  std::mt19937_64 rng(5);
  const Dataset d = oracle::random_dataset(rng, 60, 2);
  BartTree t;
  t.grow(0, 0, 0.0);
  t.grow(t.leaves()[1], 1, 0.0);
  std::mt19937_64 eng(6);
  for (int k = 0; k < 200; ++k) {
    const auto prop = propose_tree(t, eng, MoveProbs{0.0, 0.0, 0.5, 0.5}, d, loose_rule());
    if (!prop.valid()) continue;
    EXPECT_EQ(prop.tree.leaf_count(), t.leaf_count());
    EXPECT_TRUE(prop.tree.regions(2).has_value());
    if (prop.kind == MoveKind::swap) EXPECT_EQ(prop.log_q_ratio, 0.0);
  }
}

TEST(MhAccept, IdentityAndInvalid) {
  const Dataset d = hand_dataset();
  std::mt19937_64 eng(7);
  const BartTree t;
  const Matrix P = Matrix::Ones(6, 1);
  const Proposal same{t, 0.0, MoveKind::identity, 0};
  const Proposal bad{t, -kInf, MoveKind::grow, 0};
  PBartHyper h;
  for (int k = 0; k < 100; ++k) {
    EXPECT_TRUE(mh_accept(t, same, d.target, P, P, 0.1, 0.5, h, d, eng));
    EXPECT_FALSE(mh_accept(t, bad, d.target, P, P, 0.1, 0.5, h, d, eng));
  }
}

TEST(MhAccept, FrequencyMatchesRatio) {
  const Dataset d = hand_dataset();
  BartTree t;
  t.grow(0, 0, 3.5);
  std::mt19937_64 eng(8);
  PBartHyper h;
  const SigmaVector sig(std::vector<double>{0.5, 0.5});
  // pick a proposal whose ratio is strictly below one so the coin matters
  for (std::uint64_t seed = 0;; ++seed) {
    std::mt19937_64 pe(seed);
    const auto prop = propose_tree(t, pe, h.move_probs, d, loose_rule());
    if (!prop.valid()) continue;
    const Matrix P = build_membership(d, t.leaf_regions(2), sig).values;
    const Matrix Ps = build_membership(d, prop.tree.leaf_regions(2), sig).values;
    const double delta = mh_log_ratio(t, prop, d.target, P, Ps, 0.3, 0.4, h, d);
    if (!(delta < -0.2 && delta > -3.0)) continue;
    const int N = 100000;
    int hits = 0;
    for (int k = 0; k < N; ++k) hits += mh_accept(t, prop, d.target, P, Ps, 0.3, 0.4, h, d, eng);
    const double p = std::exp(delta);
    EXPECT_LE(std::abs(hits / double(N) - p), 3 * std::sqrt(p * (1 - p) / N));
    break;
  }
}

TEST(DrawGammas, ScalarExample) {
  std::mt19937_64 eng(9);
  const int N = 100000;
  std::vector<double> v;
  for (int k = 0; k < N; ++k)
    v.push_back(draw_gammas(Matrix::Ones(1, 1), Vector::Zero(1), Vector::Zero(1), 1.0, 1.0, eng)(0));
  EXPECT_LE(std::abs(mean_of(v)), 3 * std::sqrt(0.5 / N));
  EXPECT_LE(std::abs(var_of(v) - 0.5), 3 * 0.5 * std::sqrt(2.0 / (N - 1)));
}

TEST(DrawGammas, FlatPriorLimit) {
  const auto wc = weight_conditional(4.0, 10.0, 1e8, 1.0);
  EXPECT_NEAR(wc.mean, 2.5, 1e-12);
}

TEST(DrawGammas, FirstComponentMatchesConditional) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0, 1);
  const Matrix P = Matrix::NullaryExpr(5, 3, [&] { return u(rng); });
  const Vector R = Vector::NullaryExpr(5, [&] { return u(rng) * 2 - 1; });
  Vector g0(3);
  g0 << 0.3, -0.2, 0.5;
  const double sg = 0.8, st = 0.6;
  const double A = P.col(0).squaredNorm();
  const double B = P.col(0).dot(R - P.col(1) * g0(1) - P.col(2) * g0(2));
  const double mean = sg * sg * B / (st * st + sg * sg * A), var = st * st * sg * sg / (st * st + sg * sg * A);
  std::mt19937_64 eng(11);
  const int N = 100000;
  std::vector<double> v;
  for (int k = 0; k < N; ++k) v.push_back(draw_gammas(P, R, g0, sg, st, eng)(0));
  EXPECT_LE(std::abs(mean_of(v) - mean), 3 * std::sqrt(var / N));
  EXPECT_LE(std::abs(var_of(v) - var), 3 * var * std::sqrt(2.0 / (N - 1)));
}

TEST(DrawGammas, KeepsFitInSync) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0, 1);
  const Matrix P = Matrix::NullaryExpr(7, 4, [&] { return u(rng); });
  const Vector R = Vector::NullaryExpr(7, [&] { return u(rng); });
  Vector g = Vector::Zero(4), fit = Vector::Zero(7);
  draw_gammas(P, R, g, fit, 0.5, 0.5, rng);
  EXPECT_LT((fit - P * g).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DrawSigmaTilde, PosteriorParameters) {
  const auto ig = sigma_tilde_posterior(3.0, 1.0, 4, 2.0);
  EXPECT_EQ(ig.shape, 3.5);
  EXPECT_EQ(ig.scale, 2.5);
}

TEST(DrawSigmaTilde, MonteCarloMean) {
  Vector y(4), fit(4);
  y << 1, 2, 3, 4;
  fit << 1, 2, 2, 5;  // SSE = 2
  std::mt19937_64 eng(13);
  const int N = 100000;
  std::vector<double> v;
  for (int k = 0; k < N; ++k) {
    const double s = draw_sigma_tilde(y, fit, 3.0, 1.0, eng);
    ASSERT_GT(s, 0.0);
    v.push_back(s * s);
  }
  const double shape = 3.5, scale = 2.5;
  const double mean = scale / (shape - 1), sd = mean / std::sqrt(shape - 2);
  EXPECT_LE(std::abs(mean_of(v) - mean), 3 * sd / std::sqrt(double(N)));
}

TEST(DrawSigmaTilde, EmptyDataFallsBackToPrior) {
  const auto ig = sigma_tilde_posterior(3.0, 0.5, 0, 0.0);
  EXPECT_EQ(ig.shape, 1.5);
  EXPECT_EQ(ig.scale, 0.75);
  std::mt19937_64 eng(14);
  EXPECT_GT(draw_sigma_tilde(Vector(), Vector(), 3.0, 0.5, eng), 0.0);
}

TEST(Hyper, Validation) {
  PBartHyper h;
  EXPECT_NO_THROW(h.validate());
  h.it_burn = h.it_max;
  EXPECT_THROW(h.validate(), ValidationError);
  h = PBartHyper{};
  h.move_probs.grow = 0.5;
  EXPECT_THROW(h.validate(), ValidationError);
  h = PBartHyper{};
  h.alpha = 1.0;
  EXPECT_THROW(h.validate(), ValidationError);
}

TEST(FitPbart, OneSnapshotWhenChainIsOneLonger) {
  std::mt19937_64 rng(15);
  const Dataset d = oracle::random_dataset(rng, 30, 2);
  PBartHyper h;
  h.m = 3;
  h.it_burn = 5;
  h.it_max = 6;
  const auto c = fit_pbart(d, h, SigmaVector(std::vector<double>{0.3, 0.3}), RngSpec{1, 0});
  EXPECT_EQ(c.snapshots.size(), 1u);
  EXPECT_EQ(c.sigma_trace.size(), 6u);
  EXPECT_EQ(c.total_proposals(), 18u);
}

TEST(FitPbart, ConjugateSingleLeafPosteriorMean) {
  std::mt19937_64 rng(16);
  const Dataset d = oracle::random_dataset(rng, 20, 1);
  PBartHyper h;
  h.m = 1;
  h.tree_moves = false;
  h.fixed_sigma_tilde = 0.2;
  h.sigma_gamma = 0.5;
  h.it_burn = 100;
  h.it_max = 20100;
  const auto c = fit_pbart(d, h, SigmaVector::zeros(1), RngSpec{2, 0});
  const double lo = d.target.minCoeff(), range = d.target.maxCoeff() - lo;
  const Vector y = ((d.target.array() - lo) / range - 0.5).matrix();
  const double st2 = 0.04, sg2 = 0.25, n = 20;
  const double post_mean = sg2 * y.sum() / (st2 + sg2 * n), post_var = st2 * sg2 / (st2 + sg2 * n);
  std::vector<double> v;
  for (std::size_t s = 0; s < c.snapshots.size(); ++s) v.push_back(c.snapshot_value(s, Vector::Zero(1)));
  // with one column every sweep is an exact independent draw
  EXPECT_LE(std::abs(mean_of(v) - post_mean), 3 * std::sqrt(post_var / double(v.size())));
  EXPECT_NEAR(var_of(v), post_var, 4 * post_var * std::sqrt(2.0 / double(v.size())));
}

TEST(FitPbart, DeterministicUnderSeed) {
  std::mt19937_64 rng(17);
  const Dataset d = oracle::random_dataset(rng, 40, 2);
  PBartHyper h;
  h.m = 5;
  h.it_burn = 10;
  h.it_max = 30;
  const SigmaVector s(std::vector<double>{0.3, 0.3});
  const auto a = fit_pbart(d, h, s, RngSpec{3, 1});
  const auto b = fit_pbart(d, h, s, RngSpec{3, 1});
  EXPECT_EQ(a.sigma_trace, b.sigma_trace);
  EXPECT_EQ(a.predict(d), b.predict(d));
  const auto c = fit_pbart(d, h, s, RngSpec{4, 1});
  EXPECT_NE(a.sigma_trace, c.sigma_trace);
}

TEST(FitPbart, SnapshotsPartitionAndRespectLeafSize) {
  std::mt19937_64 rng(18);
  const Dataset d = oracle::random_dataset(rng, 80, 2);
  PBartHyper h;
  h.m = 6;
  h.it_burn = 20;
  h.it_max = 60;
  const auto c = fit_pbart(d, h, SigmaVector(std::vector<double>{0.2, 0.2}), RngSpec{5, 0});
  ASSERT_EQ(c.snapshots.size(), 40u);
  const std::size_t need = h.rule.min_leaf_count(d.n());
  std::uniform_real_distribution<double> u(-3, 3);
  bool grew = false;
  for (const auto& snap : c.snapshots)
    for (const auto& t : snap) {
      grew = grew || t.leaf_count() > 1;
      for (const auto& r : t.leaf_regions) EXPECT_GE(rows_in_region(d, r).size(), need);
      for (int k = 0; k < 5; ++k) {
        Vector x(2);
        x << u(rng), u(rng);
        int hits = 0;
        for (const auto& r : t.leaf_regions) hits += r.contains(x);
        EXPECT_EQ(hits, 1);
      }
    }
  EXPECT_TRUE(grew);
}

TEST(FitPbart, PredictionIsSnapshotAverage) {
  std::mt19937_64 rng(19);
  const Dataset d = oracle::random_dataset(rng, 40, 2);
  PBartHyper h;
  h.m = 4;
  h.it_burn = 5;
  h.it_max = 25;
  const auto c = fit_pbart(d, h, SigmaVector(std::vector<double>{0.3, 0.3}), RngSpec{6, 0});
  for (std::size_t i = 0; i < 10; ++i) {
    double acc = 0;
    for (const auto& snap : c.snapshots)
      for (const auto& t : snap) acc += t.predict(d.row(i));
    const double ref = c.unscale(acc / double(c.snapshots.size()));
    EXPECT_NEAR(c.predict(d.row(i)), ref, 1e-12 * std::max(1.0, std::abs(ref)));
  }
  EXPECT_THROW(c.predict(Vector::Zero(3)), ValidationError);
}

TEST(PredictPbart, HandBuiltChains) {
  PBartChain c;
  c.sigma = SigmaVector::zeros(1);
  c.y_min = -0.5;
  c.y_range = 1.0;  // unscale is the identity
  c.snapshots = {{constant_tree(0.25, 1)}};
  EXPECT_EQ(predict_pbart(c, Vector::Zero(1)), 0.25);
  c.snapshots = {{constant_tree(1.0, 1)}, {constant_tree(3.0, 1)}};
  EXPECT_EQ(predict_pbart(c, Vector::Zero(1)), 2.0);
}

TEST(FitPbart, RejectsTinyData) {
  Dataset d;
  d.features = Matrix::Zero(1, 1);
  d.target = Vector::Zero(1);
  EXPECT_THROW(fit_pbart(d, PBartHyper{}, SigmaVector::zeros(1), RngSpec{}), ValidationError);
}
