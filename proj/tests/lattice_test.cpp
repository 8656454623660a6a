#include "fbsvie/lattice.hpp"

#include <gtest/gtest.h>

#include "fbsvie/coefficients.hpp"
#include "support/test_util.hpp"

namespace fbsvie {
namespace {

using testing::random_adapted;
using testing::random_leaf_field;

std::vector<VectorXd> scalar_leaves(const std::vector<double>& vals) {
  std::vector<VectorXd> out;
  out.reserve(vals.size());
  for (double v : vals) out.push_back(VectorXd::Constant(1, v));
  return out;
}

TEST(TimeGrid, PartitionsHorizonExactly) {
  const TimeGrid grid{1.0, 8};
  EXPECT_DOUBLE_EQ(grid.dt() * grid.steps, grid.horizon);
  EXPECT_DOUBLE_EQ(grid.time(0), 0.0);
  EXPECT_DOUBLE_EQ(grid.time(8), 1.0);
}

TEST(ScenarioTree, RejectsBadGrids) {
  EXPECT_THROW(ScenarioTree({1.0, 0}), std::invalid_argument);
  EXPECT_THROW(ScenarioTree({-1.0, 4}), std::invalid_argument);
}

TEST(ScenarioTree, IncrementMomentsAreExact) {
  const ScenarioTree tree({2.0, 5});
  const double dt = tree.dt();
  for (int j = 0; j < tree.steps(); ++j) {
    double mean = 0.0, second = 0.0;
    for (int leaf = 0; leaf < tree.leaf_count(); ++leaf) {
      const double dw = tree.increment_at_leaf(leaf, j);
      mean += dw;
      second += dw * dw;
    }
    mean *= tree.leaf_probability();
    second *= tree.leaf_probability();
    EXPECT_NEAR(mean, 0.0, 1e-15);
    EXPECT_NEAR(second, dt, 1e-15);
  }
}

TEST(ScenarioTree, IncrementsAreIndependentAcrossSteps) {
  const ScenarioTree tree({1.0, 4});
  for (int j = 0; j < 4; ++j) {
    for (int k = j + 1; k < 4; ++k) {
      double cross = 0.0;
      for (int leaf = 0; leaf < tree.leaf_count(); ++leaf)
        cross += tree.increment_at_leaf(leaf, j) * tree.increment_at_leaf(leaf, k);
      EXPECT_NEAR(cross * tree.leaf_probability(), 0.0, 1e-15);
    }
  }
}

TEST(CondExpect, TwoStepHandValues) {
  const ScenarioTree tree({1.0, 2});
  const auto leaves = scalar_leaves({4, 2, 8, 6});
  const auto r1 = cond_expect(tree, leaves, 1);
  ASSERT_EQ(r1.size(), 2u);
  EXPECT_DOUBLE_EQ(r1[0][0], 3.0);
  EXPECT_DOUBLE_EQ(r1[1][0], 7.0);
  const auto r0 = cond_expect(tree, leaves, 0);
  EXPECT_DOUBLE_EQ(r0[0][0], 5.0);
}

TEST(CondExpect, TerminalLevelIsIdentity) {
  const ScenarioTree tree({1.0, 3});
  Rng rng(7);
  const auto leaves = random_leaf_field(tree, 2, rng);
  const auto back = cond_expect(tree, leaves, 3);
  for (int leaf = 0; leaf < tree.leaf_count(); ++leaf)
    EXPECT_EQ(back[leaf], leaves[leaf]);
}

TEST(CondExpect, TowerPropertyExact) {
  const ScenarioTree tree({1.0, 3});
  Rng rng(11);
  const auto leaves = random_leaf_field(tree, 1, rng);
  const auto two_then_one =
      cond_expect(tree, expand_to_leaves(tree, cond_expect(tree, leaves, 2), 2), 1);
  const auto direct = cond_expect(tree, leaves, 1);
  for (std::size_t node = 0; node < direct.size(); ++node)
    EXPECT_NEAR((two_then_one[node] - direct[node]).norm(), 0.0, 1e-15);
}

TEST(CondExpect, RejectsBadLevel) {
  const ScenarioTree tree({1.0, 2});
  const auto leaves = scalar_leaves({1, 2, 3, 4});
  EXPECT_THROW(cond_expect(tree, leaves, -1), std::out_of_range);
  EXPECT_THROW(cond_expect(tree, leaves, 3), std::out_of_range);
}

TEST(ItoIntegral, ConstantIntegrandGivesBrownianValue) {
  const ScenarioTree tree({1.0, 4});
  AdaptedProcess z(1, 4);
  for (int k = 0; k < 4; ++k)
    for (int node = 0; node < tree.node_count(k); ++node)
      z.at(k, node) = VectorXd::Constant(1, 2.5);
  const auto integral = ito_integral(tree, z, 0, 4);
  for (int leaf = 0; leaf < tree.leaf_count(); ++leaf) {
    double w = 0.0;
    for (int j = 0; j < 4; ++j) w += tree.increment_at_leaf(leaf, j);
    EXPECT_NEAR(integral[leaf][0], 2.5 * w, 1e-15);
  }
}

TEST(ItoIntegral, ZeroIntegrandGivesZero) {
  const ScenarioTree tree({1.0, 3});
  const AdaptedProcess z(2, 3);
  for (const auto& v : ito_integral(tree, z, 0, 3)) EXPECT_EQ(v.norm(), 0.0);
}

TEST(ItoIntegral, FourPathEnumeration) {
  // N = 2, dt = 0.5, z(0) = 1, z(1) = +-1 by the first move.
  const ScenarioTree tree({1.0, 2});
  AdaptedProcess z(1, 2);
  z.at(0, 0) = VectorXd::Constant(1, 1.0);
  z.at(1, 0) = VectorXd::Constant(1, 1.0);
  z.at(1, 1) = VectorXd::Constant(1, -1.0);
  const auto integral = ito_integral(tree, z, 0, 2);
  const double s = std::sqrt(2.0);
  EXPECT_NEAR(integral[0][0], s, 1e-15);   // uu
  EXPECT_NEAR(integral[1][0], 0.0, 1e-15); // ud
  EXPECT_NEAR(integral[2][0], -s, 1e-15);  // du
  EXPECT_NEAR(integral[3][0], 0.0, 1e-15); // dd
}

TEST(ItoIntegral, ExactIsometry) {
  const ScenarioTree tree({1.5, 5});
  Rng rng(3);
  const auto z = random_adapted(tree, 1, 5, rng);
  const auto integral = ito_integral(tree, z, 0, 5);
  double lhs = 0.0;
  for (const auto& v : integral) lhs += v.squaredNorm();
  lhs *= tree.leaf_probability();
  double rhs = 0.0;
  for (int k = 0; k < 5; ++k) rhs += level_mean_sq(tree, k, z.level(k)) * tree.dt();
  EXPECT_NEAR(lhs - rhs, 0.0, 1e-12);
}

TEST(ItoIntegral, MeanZeroAndAdapted) {
  const ScenarioTree tree({1.0, 4});
  Rng rng(5);
  const auto z = random_adapted(tree, 1, 4, rng);
  const auto integral = ito_integral(tree, z, 0, 2);
  // F_{t_2}-measurable: constant on level-2 subtrees.
  for (int node = 0; node < 4; ++node)
    for (int leaf = node * 4; leaf < (node + 1) * 4; ++leaf)
      EXPECT_NEAR((integral[leaf] - integral[node * 4]).norm(), 0.0, 1e-15);
  VectorXd mean = VectorXd::Zero(1);
  for (const auto& v : integral) mean += v;
  EXPECT_NEAR(mean.norm() * tree.leaf_probability(), 0.0, 1e-15);
}

TEST(ItoIntegral, RejectsBadRange) {
  const ScenarioTree tree({1.0, 3});
  const AdaptedProcess z(1, 3);
  EXPECT_THROW(ito_integral(tree, z, -1, 2), std::out_of_range);
  EXPECT_THROW(ito_integral(tree, z, 2, 1), std::out_of_range);
  EXPECT_THROW(ito_integral(tree, z, 0, 4), std::out_of_range);
}

TEST(MartingaleRepr, OneStepForcedValues) {
  const ScenarioTree tree({1.0, 1});
  const auto repr = martingale_repr(tree, scalar_leaves({3, 1}));
  EXPECT_DOUBLE_EQ(repr.mean[0], 2.0);
  EXPECT_DOUBLE_EQ(repr.z.at(0, 0)[0], 1.0);

  const ScenarioTree quarter({0.25, 1});
  const auto repr2 = martingale_repr(quarter, scalar_leaves({3, 1}));
  EXPECT_DOUBLE_EQ(repr2.mean[0], 2.0);
  EXPECT_DOUBLE_EQ(repr2.z.at(0, 0)[0], 2.0);
}

TEST(MartingaleRepr, ReconstructsPathwise) {
  const ScenarioTree tree({1.0, 3});
  Rng rng(13);
  const auto y = random_leaf_field(tree, 2, rng);
  const auto repr = martingale_repr(tree, y);
  const auto integral = ito_integral(tree, repr.z, 0, 3);
  for (int leaf = 0; leaf < tree.leaf_count(); ++leaf)
    EXPECT_NEAR((y[leaf] - repr.mean - integral[leaf]).lpNorm<Eigen::Infinity>(), 0.0,
                1e-12);
}

TEST(MartingaleRepr, RoundTripWithItoIntegral) {
  // repr(mean + integral(z)) returns (mean, z) exactly.
  const ScenarioTree tree({2.0, 4});
  Rng rng(17);
  const auto z = random_adapted(tree, 1, 4, rng);
  const VectorXd mean = rng.vector(1);
  auto leaves = ito_integral(tree, z, 0, 4);
  for (auto& v : leaves) v += mean;
  const auto repr = martingale_repr(tree, leaves);
  EXPECT_NEAR((repr.mean - mean).norm(), 0.0, 1e-13);
  for (int k = 0; k < 4; ++k)
    for (int node = 0; node < tree.node_count(k); ++node)
      EXPECT_NEAR((repr.z.at(k, node) - z.at(k, node)).norm(), 0.0, 1e-12);
}

TEST(MartingaleRepr, MIdentityExact) {
  // E|y|^2 = |E y|^2 + sum_k E|z_k|^2 dt.
  const ScenarioTree tree({1.0, 5});
  Rng rng(23);
  const auto y = random_leaf_field(tree, 1, rng);
  const auto repr = martingale_repr(tree, y);
  double lhs = 0.0;
  for (const auto& v : y) lhs += v.squaredNorm();
  lhs *= tree.leaf_probability();
  double rhs = repr.mean.squaredNorm();
  for (int k = 0; k < 5; ++k)
    rhs += level_mean_sq(tree, k, repr.z.level(k)) * tree.dt();
  EXPECT_NEAR(lhs - rhs, 0.0, 1e-12);
}

TEST(WeightedNorm, ZeroPairGivesZero) {
  const ScenarioTree tree({1.0, 3});
  const AdaptedProcess y(1, 4);
  const VolterraField z(FieldDomain::UpperTriangle, 1, 3, 3);
  EXPECT_DOUBLE_EQ(weighted_norm(tree, y, z, 2.0), 0.0);
}

TEST(WeightedNorm, HandSummedValue) {
  // y = 1 scalar, z = 0, N = 2, T = 1, beta = 0 -> 1*0.5 + 1*0.5 = 1.
  const ScenarioTree tree({1.0, 2});
  AdaptedProcess y(1, 3);
  for (int k = 0; k < 3; ++k)
    for (int node = 0; node < tree.node_count(k); ++node)
      y.at(k, node) = VectorXd::Constant(1, 1.0);
  const VolterraField z(FieldDomain::UpperTriangle, 1, 2, 2);
  EXPECT_DOUBLE_EQ(weighted_norm(tree, y, z, 0.0), 1.0);
}

TEST(WeightedNorm, BetaZeroMatchesPlainNorm) {
  const ScenarioTree tree({1.0, 4});
  Rng rng(29);
  const auto y = random_adapted(tree, 1, 5, rng);
  VolterraField z(FieldDomain::UpperTriangle, 1, 4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = i; j < 4; ++j)
      for (int node = 0; node < tree.node_count(j); ++node)
        z.at(i, j, node) = rng.vector(1);

  double plain = 0.0;
  for (int i = 0; i < 4; ++i) {
    plain += level_mean_sq(tree, i, y.level(i)) * tree.dt();
    for (int j = i; j < 4; ++j)
      plain += level_mean_sq(tree, j, z.slice(i, j)) * tree.dt() * tree.dt();
  }
  EXPECT_NEAR(weighted_norm(tree, y, z, 0.0), plain, 1e-14);
}

TEST(VolterraField, UpperTriangleRejectsBelowDiagonal) {
  VolterraField z(FieldDomain::UpperTriangle, 1, 3, 3);
  EXPECT_THROW(z.at(2, 1, 0), std::out_of_range);
  EXPECT_NO_THROW(z.at(1, 1, 0));
}

}  // namespace
}  // namespace fbsvie
