#include "fbsvie/fsvie.hpp"

#include <gtest/gtest.h>

#include "support/oracles.hpp"
#include "support/test_util.hpp"

namespace fbsvie {
namespace {

using testing::random_inner_control;

TEST(SolveFsvie, ZeroFamilyStaysAtZero) {
  const ScenarioTree tree({1.0, 4});
  const CoefficientSet c = builtin_family("zero", {}, tree.grid());
  const AdaptedProcess u = constant_control(tree, VectorXd::Zero(1));
  const ForwardSolution sol = solve_fsvie(tree, c, u);
  for (int i = 0; i <= 4; ++i)
    for (int node = 0; node < tree.node_count(i); ++node)
      EXPECT_EQ(sol.X.at(i, node).norm(), 0.0);
}

TEST(SolveFsvie, HandUnrolledDriftRecursion) {
  // phi = 1, b = x, sigma = 0, N = 2, T = 1:
  // X0 = 1, X1 = 1.5, X2 = 1 + (1 + 1.5)*0.5 = 2.25 on every path.
  const ScenarioTree tree({1.0, 2});
  FamilyParams params;
  params.tables["phi"] = {{Poly2{1.0}}};
  params.tables["b.x"] = {{Poly2{1.0}}};
  const CoefficientSet c = builtin_family("linear_volterra", params, tree.grid());
  const ForwardSolution sol = solve_fsvie(tree, c, constant_control(tree, VectorXd::Zero(1)));
  EXPECT_DOUBLE_EQ(sol.X.at(0, 0)[0], 1.0);
  for (int node = 0; node < 2; ++node) EXPECT_DOUBLE_EQ(sol.X.at(1, node)[0], 1.5);
  for (int node = 0; node < 4; ++node) EXPECT_DOUBLE_EQ(sol.X.at(2, node)[0], 2.25);
}

TEST(SolveFsvie, UnitDiffusionReproducesBrownianMotion) {
  const ScenarioTree tree({1.0, 5});
  FamilyParams params;
  params.tables["sigma.0"] = {{Poly2{1.0}}};
  const CoefficientSet c = builtin_family("linear_volterra", params, tree.grid());
  const ForwardSolution sol = solve_fsvie(tree, c, constant_control(tree, VectorXd::Zero(1)));
  for (int i = 0; i <= 5; ++i) {
    for (int node = 0; node < tree.node_count(i); ++node) {
      double w = 0.0;
      for (int j = 0; j < i; ++j) w += tree.increment(node, i, j);
      EXPECT_NEAR(sol.X.at(i, node)[0], w, 1e-15);
    }
  }
}

TEST(SolveFsvie, ThrowsOnBlowup) {
  const ScenarioTree tree({1.0, 3});
  CoefficientSet c = builtin_family("zero", {}, tree.grid());
  c.b = [](int, int, const VectorXd& x, const VectorXd&) {
    return VectorXd::Constant(1, std::numeric_limits<double>::infinity());
  };
  EXPECT_THROW(solve_fsvie(tree, c, constant_control(tree, VectorXd::Zero(1))),
               std::runtime_error);
}

TEST(SolveFsvie, MemorylessKernelsReduceToEulerScheme) {
  // Kernels independent of the first time argument + constant phi:
  // the recursion telescopes to the explicit Euler scheme of the SDE.
  const ScenarioTree tree({1.0, 5});
  const CoefficientSet c = testing::nonlinear_test_set(tree.grid(), false);
  CoefficientSet memoryless = c;
  memoryless.b = [&c](int, int j, const VectorXd& x, const VectorXd& u) {
    return c.b(0, j, x, u);
  };
  memoryless.phi = [](int) { return VectorXd::Constant(1, 0.4); };
  // sigma in the test set is already independent of both time arguments.
  Rng rng(31);
  const AdaptedProcess u = random_inner_control(tree, c.control_set, rng);
  const ForwardSolution sol = solve_fsvie(tree, memoryless, u);

  AdaptedProcess euler(1, 6);
  euler.at(0, 0) = VectorXd::Constant(1, 0.4);
  for (int i = 0; i < 5; ++i) {
    for (int node = 0; node < tree.node_count(i); ++node) {
      const VectorXd& x = euler.at(i, node);
      const VectorXd drift = c.b(0, i, x, u.at(i, node)) * tree.dt();
      const VectorXd diff = c.sigma(0, i, x, u.at(i, node));
      euler.at(i + 1, 2 * node) = x + drift + diff * tree.sqrt_dt();
      euler.at(i + 1, 2 * node + 1) = x + drift - diff * tree.sqrt_dt();
    }
  }
  for (int i = 0; i <= 5; ++i)
    for (int node = 0; node < tree.node_count(i); ++node)
      EXPECT_NEAR((sol.X.at(i, node) - euler.at(i, node)).norm(), 0.0, 1e-12);
}

LowerKernel random_lower_kernel(const ScenarioTree& tree, int dim, Rng& rng,
                                double scale) {
  LowerKernel k(dim, dim, tree.steps() + 1, tree.steps());
  for (int i = 1; i <= tree.steps(); ++i)
    for (int j = 0; j < i; ++j)
      for (int node = 0; node < tree.node_count(j); ++node)
        k.at(i, j, node) = rng.matrix(dim, dim, scale);
  return k;
}

TEST(SolveLinearFsvie, ZeroKernelsReturnPhi) {
  const ScenarioTree tree({1.0, 3});
  Rng rng(3);
  const AdaptedProcess phi = testing::random_adapted(tree, 2, 4, rng);
  const LowerKernel A0(2, 2, 4, 3), C0(2, 2, 4, 3);
  const ForwardSolution sol = solve_linear_fsvie(tree, A0, C0, phi);
  for (int i = 0; i <= 3; ++i)
    for (int node = 0; node < tree.node_count(i); ++node)
      EXPECT_EQ(sol.X.at(i, node), phi.at(i, node));
}

TEST(SolveLinearFsvie, MatchesGeneralSolverOnDriftCase) {
  // Scalar A0 = 1, C0 = 0, phi = 1 reproduces b = x.
  const ScenarioTree tree({1.0, 4});
  LowerKernel A0(1, 1, 5, 4), C0(1, 1, 5, 4);
  for (int i = 1; i <= 4; ++i)
    for (int j = 0; j < i; ++j)
      for (int node = 0; node < tree.node_count(j); ++node)
        A0.at(i, j, node) = MatrixXd::Constant(1, 1, 1.0);
  AdaptedProcess phi(1, 5);
  for (int i = 0; i <= 4; ++i)
    for (int node = 0; node < tree.node_count(i); ++node)
      phi.at(i, node) = VectorXd::Constant(1, 1.0);

  FamilyParams params;
  params.tables["phi"] = {{Poly2{1.0}}};
  params.tables["b.x"] = {{Poly2{1.0}}};
  const CoefficientSet c = builtin_family("linear_volterra", params, tree.grid());

  const ForwardSolution lin = solve_linear_fsvie(tree, A0, C0, phi);
  const ForwardSolution gen =
      solve_fsvie(tree, c, constant_control(tree, VectorXd::Zero(1)));
  for (int i = 0; i <= 4; ++i)
    for (int node = 0; node < tree.node_count(i); ++node)
      EXPECT_NEAR((lin.X.at(i, node) - gen.X.at(i, node)).norm(), 0.0, 1e-13);
}

TEST(SolveLinearFsvie, AgreesWithDenseLowerTriangularSolve) {
  const ScenarioTree tree({1.0, 6});
  Rng rng(17);
  const LowerKernel A0 = random_lower_kernel(tree, 1, rng, 0.8);
  const LowerKernel C0 = random_lower_kernel(tree, 1, rng, 0.8);
  const AdaptedProcess phi = testing::random_adapted(tree, 1, 7, rng);

  const ForwardSolution sol = solve_linear_fsvie(tree, A0, C0, phi);
  const AdaptedProcess oracle = testing::dense_fsvie_solve(tree, A0, C0, phi);
  for (int i = 0; i <= 6; ++i)
    for (int node = 0; node < tree.node_count(i); ++node)
      EXPECT_NEAR((sol.X.at(i, node) - oracle.at(i, node)).lpNorm<Eigen::Infinity>(),
                  0.0, 1e-11);
}

TEST(SolveLinearFsvie, AdditiveInPhi) {
  const ScenarioTree tree({1.0, 4});
  Rng rng(23);
  const LowerKernel A0 = random_lower_kernel(tree, 2, rng, 0.5);
  const LowerKernel C0 = random_lower_kernel(tree, 2, rng, 0.5);
  const AdaptedProcess phi1 = testing::random_adapted(tree, 2, 5, rng);
  const AdaptedProcess phi2 = testing::random_adapted(tree, 2, 5, rng);
  AdaptedProcess phi_sum(2, 5);
  for (int i = 0; i <= 4; ++i)
    for (int node = 0; node < tree.node_count(i); ++node)
      phi_sum.at(i, node) = phi1.at(i, node) + phi2.at(i, node);

  const ForwardSolution s1 = solve_linear_fsvie(tree, A0, C0, phi1);
  const ForwardSolution s2 = solve_linear_fsvie(tree, A0, C0, phi2);
  const ForwardSolution sum = solve_linear_fsvie(tree, A0, C0, phi_sum);
  for (int i = 0; i <= 4; ++i)
    for (int node = 0; node < tree.node_count(i); ++node)
      EXPECT_NEAR(
          (sum.X.at(i, node) - s1.X.at(i, node) - s2.X.at(i, node)).norm(), 0.0,
          1e-12);
}

TEST(SolveFsvie, ControlPerturbationScalesQuadratically) {
  // sup_i E|X_delta(t_i) - X(t_i)|^2 = O(delta^2): halving delta divides the
  // gap by ~4 (exactly 4 for kernels affine in u).
  const ScenarioTree tree({1.0, 4});
  const FamilyParams params = testing::random_lq_params(55, 1, 1, 1, false, 0.4);
  const CoefficientSet c = builtin_family("lq_tracking", params, tree.grid());
  Rng rng(8);
  const AdaptedProcess u = random_inner_control(tree, c.control_set, rng);
  const AdaptedProcess dir = testing::random_adapted(tree, 1, 4, rng, 0.3);

  auto sup_gap = [&](double delta) {
    AdaptedProcess up = u;
    for (int k = 0; k < 4; ++k)
      for (int node = 0; node < tree.node_count(k); ++node)
        up.at(k, node) += delta * dir.at(k, node);
    const ForwardSolution base = solve_fsvie(tree, c, u);
    const ForwardSolution pert = solve_fsvie(tree, c, up);
    double sup = 0.0;
    for (int i = 0; i <= 4; ++i) {
      double acc = 0.0;
      for (int node = 0; node < tree.node_count(i); ++node)
        acc += (pert.X.at(i, node) - base.X.at(i, node)).squaredNorm();
      sup = std::max(sup, acc * tree.node_probability(i));
    }
    return sup;
  };

  const double g1 = sup_gap(0.2);
  const double g2 = sup_gap(0.1);
  EXPECT_NEAR(g1 / g2, 4.0, 0.4);
}

}  // namespace
}  // namespace fbsvie
