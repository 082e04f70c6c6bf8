#include "prtree/core.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace prtree;

namespace {

std::string write_temp(const std::string& name, const std::string& body) {
  const auto path = std::filesystem::temp_directory_path() / ("prtree_core_" + name);
  std::ofstream(path) << body;
  return path.string();
}

}  // namespace

TEST(LoadCsv, ParsesTargetAndFeatures) {
  const auto path = write_temp("ok.csv", "a,b,y\n1,2,3\n4,5,6\n7,8.5,-9\n");
  const Dataset d = load_csv(path, "y");
  EXPECT_EQ(d.n(), 3u);
  EXPECT_EQ(d.p(), 2u);
  EXPECT_EQ(d.feature_names, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(d.features(2, 1), 8.5);
  EXPECT_EQ(d.target(2), -9.0);
}

TEST(LoadCsv, TargetInMiddleColumnAndQuotedHeader) {
  const auto path = write_temp("mid.csv", "\"a\",y,b\r\n1,10,2\r\n3,20,4\r\n");
  const Dataset d = load_csv(path, "y");
  EXPECT_EQ(d.feature_names, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(d.features(1, 1), 4.0);
  EXPECT_EQ(d.target(1), 20.0);
}

TEST(LoadCsv, MissingTargetColumn) {
  const auto path = write_temp("notarget.csv", "a,b\n1,2\n");
  try {
    load_csv(path, "y");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("target column not found"), std::string::npos);
  }
}

TEST(LoadCsv, BlankCellNamesRowAndColumn) {
  const auto path = write_temp("blank.csv", "a,b,y\n1,2,3\n4,,6\n");
  try {
    load_csv(path, "y");
    FAIL();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 2"), std::string::npos);
    EXPECT_NE(msg.find("'b'"), std::string::npos);
  }
}

TEST(LoadCsv, NonNumericAndMissingFile) {
  const auto path = write_temp("text.csv", "a,y\nfoo,1\n");
  EXPECT_THROW(load_csv(path, "y"), ValidationError);
  EXPECT_THROW(load_csv("/nonexistent/file.csv", "y"), ValidationError);
}

TEST(StandardScale, TwoPointColumn) {
  Dataset d;
  d.features.resize(2, 1);
  d.features << 0, 2;
  d.target = Vector::Zero(2);
  const auto [s, sc] = standard_scale(d);
  // sample std of {0, 2} is sqrt(2), so the scaled column is -+1/sqrt(2)
  EXPECT_DOUBLE_EQ(s.features(0, 0), -1.0 / std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(s.features(1, 0), 1.0 / std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(sc.mean[0], 1.0);
  EXPECT_DOUBLE_EQ(sc.std[0], std::sqrt(2.0));
}

TEST(StandardScale, ConstantColumnIsCenteredOnly) {
  Dataset d;
  d.features = Matrix::Constant(3, 1, 5.0);
  d.target = Vector::Zero(3);
  const auto [s, sc] = standard_scale(d);
  EXPECT_EQ(s.features.col(0), Vector::Zero(3));
  EXPECT_EQ(sc.std[0], 1.0);
}

TEST(StandardScale, MomentsAndIdempotence) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(3.0, 7.0);
  Dataset d;
  d.features = Matrix::NullaryExpr(57, 4, [&] { return g(rng); });
  d.target = Vector::Zero(57);
  const auto [s, sc] = standard_scale(d);
  for (Eigen::Index j = 0; j < 4; ++j) {
    const auto c = s.features.col(j);
    const double mean = c.mean();
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt((c.array() - mean).square().sum() / 56.0), 1.0, 1e-9);
  }
  const auto [again, sc2] = standard_scale(s);
  EXPECT_LT((again.features - s.features).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(StandardScale, AffineInvariance) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  Dataset d;
  d.features = Matrix::NullaryExpr(30, 3, [&] { return u(rng); });
  d.target = Vector::Zero(30);
  Dataset t = d;
  t.features = (d.features.array() * 4.5 + 11.0).matrix();
  const auto a = standard_scale(d).first, b = standard_scale(t).first;
  EXPECT_LT((a.features - b.features).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(StandardScale, NeedsTwoRows) {
  Dataset d;
  d.features = Matrix::Ones(1, 2);
  d.target = Vector::Zero(1);
  EXPECT_THROW(standard_scale(d), ValidationError);
}

TEST(Region, SplitTilesParent) {
  Region r({-1.0, -kInf}, {3.0, kInf});
  auto [a, b] = r.split(0, 0.5);
  EXPECT_EQ(a.upper(0), 0.5);
  EXPECT_EQ(b.lower(0), 0.5);
  EXPECT_EQ(a.lower(0), -1.0);
  EXPECT_EQ(b.upper(0), 3.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2, 4);
  for (int i = 0; i < 1000; ++i) {
    Vector x(2);
    x << u(rng), u(rng);
    EXPECT_EQ(r.contains(x), a.contains(x) || b.contains(x));
    EXPECT_FALSE(a.contains(x) && b.contains(x));
  }
  Vector edge(2);
  edge << 0.5, 0.0;
  EXPECT_TRUE(a.contains(edge));
  EXPECT_FALSE(b.contains(edge));
}

TEST(Region, RejectsDegenerateBoundsAndOutsideSplits) {
  EXPECT_THROW(Region({1.0}, {1.0}), ValidationError);
  Region r({0.0}, {1.0});
  EXPECT_THROW(r.split(0, 1.0), ValidationError);
  EXPECT_THROW(r.split(0, -0.5), ValidationError);
  EXPECT_THROW(r.split(1, 0.5), ValidationError);
}

TEST(SigmaVector, RejectsNegative) {
  EXPECT_THROW(SigmaVector(std::vector<double>{0.1, -0.1}), ValidationError);
  EXPECT_NO_THROW(SigmaVector(std::vector<double>{0.0, 2.0}));
}

TEST(RngSpec, ReproducibleAndDistinctStreams) {
  auto a = RngSpec{7, 1}.engine(), b = RngSpec{7, 1}.engine(), c = RngSpec{7, 2}.engine();
  const auto x = a(), y = b(), z = c();
  EXPECT_EQ(x, y);
  EXPECT_NE(x, z);
  const RngSpec base{7, 1};
  EXPECT_NE(base.child(0).engine()(), base.child(1).engine()());
  EXPECT_EQ(base.child(5).engine()(), base.child(5).engine()());
}
