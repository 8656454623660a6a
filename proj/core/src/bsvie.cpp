#include "fbsvie/bsvie.hpp"

#include <cmath>

namespace fbsvie {

namespace {

VectorXd frozen_zprime(const VolterraField& frozen_z, int r, int i, int node_r,
                       int dim) {
  if (frozen_z.outer_count() == 0) return VectorXd::Zero(dim);
  // Z(r, i) is F_{t_i}-measurable; read it at the level-i ancestor.
  const int node_i = ScenarioTree::ancestor(node_r, r, i);
  return frozen_z.at(r, i, node_i);
}

}  // namespace

void bsde_family_sweep(const ScenarioTree& tree, const GeneratorSpec& spec,
                       const AdaptedProcess& frozen_y,
                       const VolterraField& frozen_z, AdaptedProcess& y_out,
                       VolterraField& z_upper_out) {
  const int N = tree.steps();
  const int m = spec.dim;
  const double dt = tree.dt();

  for (int i = 0; i < N; ++i) {
    // eta starts as the free term at the leaves and is rolled back to level i.
    std::vector<VectorXd> eta = spec.free_term.slice(i);
    for (int r = N - 1; r >= i; --r) {
      auto [means, coeffs] = repr_step(tree, eta);
      std::vector<VectorXd>& eta_r = means;
      for (int node = 0; node < tree.node_count(r); ++node) {
        const VectorXd& y_arg = frozen_y.at(r, node);
        const VectorXd zp_arg = spec.uses_zprime
                                    ? frozen_zprime(frozen_z, r, i, node, m)
                                    : VectorXd::Zero(m);
        const VectorXd inc = spec.g(i, r, node, y_arg, coeffs[node], zp_arg) * dt;
        if (!inc.allFinite())
          throw std::runtime_error("bsde_family_sweep: non-finite generator value");
        eta_r[node] += inc;
      }
      z_upper_out.slice(i, r) = std::move(coeffs);
      eta = std::move(eta_r);
    }
    y_out.level(i) = std::move(eta);
  }
  // Boundary value.
  y_out.level(N) = spec.free_term.slice(N);
}

MSolution extend_to_msolution(const ScenarioTree& tree, const AdaptedProcess& Y,
                              const VolterraField& Z_upper) {
  const int N = tree.steps();
  const int m = Z_upper.dim();
  MSolution sol;
  sol.Y = Y;
  sol.Z = VolterraField(FieldDomain::FullSquare, m, N, N);
  for (int i = 0; i < N; ++i) {
    for (int j = i; j < N; ++j) sol.Z.slice(i, j) = Z_upper.slice(i, j);
    // Roll Y(t_i) down to the root; the coefficients fill row i below the
    // diagonal and make the M-property exact.
    std::vector<VectorXd> current = Y.level(i);
    for (int r = i - 1; r >= 0; --r) {
      auto [means, coeffs] = repr_step(tree, current);
      sol.Z.slice(i, r) = std::move(coeffs);
      current = std::move(means);
    }
  }
  return sol;
}

namespace {

struct PicardOutcome {
  AdaptedProcess Y;
  VolterraField Z;  // full square when m_solution, upper triangle otherwise
  SolveStats stats;
};

PicardOutcome picard_solve(const ScenarioTree& tree, const GeneratorSpec& spec,
                           const SolverConfig& cfg, bool m_solution) {
  const int N = tree.steps();
  const int m = spec.dim;
  const double beta = cfg.beta_for(tree.grid());

  AdaptedProcess y_frozen(m, N + 1);
  VolterraField z_frozen(FieldDomain::FullSquare, m, m_solution ? N : 0, N);

  PicardOutcome out;
  out.Y = AdaptedProcess(m, N + 1);
  out.Z = VolterraField(m_solution ? FieldDomain::FullSquare
                                   : FieldDomain::UpperTriangle,
                        m, N, N);

  VolterraField z_upper(FieldDomain::UpperTriangle, m, N, N);
  AdaptedProcess y_next(m, N + 1);

  double last_diff = 0.0;
  for (int iter = 1; iter <= cfg.max_iter; ++iter) {
    bsde_family_sweep(tree, spec, y_frozen, z_frozen, y_next, z_upper);

    VolterraField z_next = z_upper;
    if (m_solution) {
      z_next = extend_to_msolution(tree, y_next, z_upper).Z;
    }

    // Weighted norm of the iterate difference (stopping metric).
    AdaptedProcess dy(m, N + 1);
    VolterraField dz(z_next.domain(), m, N, N);
    for (int k = 0; k <= N; ++k)
      for (int node = 0; node < tree.node_count(k); ++node)
        dy.at(k, node) = y_next.at(k, node) - y_frozen.at(k, node);
    for (int i = 0; i < N; ++i)
      for (int j = m_solution ? 0 : i; j < N; ++j)
        for (int node = 0; node < tree.node_count(j); ++node)
          dz.at(i, j, node) = z_next.at(i, j, node) - out.Z.at(i, j, node);

    last_diff = std::sqrt(weighted_norm(tree, dy, dz, beta));
    out.stats.diff_trail.push_back(last_diff);
    out.stats.iterations = iter;

    y_frozen = y_next;
    if (m_solution) z_frozen = z_next;
    out.Y = y_next;
    out.Z = std::move(z_next);

    if (last_diff <= cfg.picard_tol) {
      out.stats.residual = bsvie_residual(tree, spec, out.Y, out.Z);
      return out;
    }
  }
  throw NoConvergence(cfg.max_iter, last_diff);
}

}  // namespace

MSolution solve_bsvie_msolution(const ScenarioTree& tree, const GeneratorSpec& spec,
                                const SolverConfig& cfg) {
  PicardOutcome out = picard_solve(tree, spec, cfg, /*m_solution=*/true);
  MSolution sol;
  sol.Y = std::move(out.Y);
  sol.Z = std::move(out.Z);
  sol.stats = std::move(out.stats);
  return sol;
}

AdaptedSolution solve_bsvie_adapted(const ScenarioTree& tree,
                                    const GeneratorSpec& spec,
                                    const SolverConfig& cfg) {
  if (spec.uses_zprime)
    throw std::invalid_argument(
        "solve_bsvie_adapted: generator must not use the z' slot");
  PicardOutcome out = picard_solve(tree, spec, cfg, /*m_solution=*/false);
  AdaptedSolution sol;
  sol.Y = std::move(out.Y);
  sol.Z = std::move(out.Z);
  sol.stats = std::move(out.stats);
  return sol;
}

double bsvie_residual(const ScenarioTree& tree, const GeneratorSpec& spec,
                      const AdaptedProcess& Y, const VolterraField& Z) {
  const int N = tree.steps();
  const int m = spec.dim;
  const double dt = tree.dt();
  const bool full = Z.domain() == FieldDomain::FullSquare;

  double worst = 0.0;
  for (int i = 0; i < N; ++i) {
    for (int leaf = 0; leaf < tree.leaf_count(); ++leaf) {
      VectorXd rhs = spec.free_term.at(i, leaf);
      for (int j = i; j < N; ++j) {
        const int nj = ScenarioTree::ancestor(leaf, N, j);
        const int ni = ScenarioTree::ancestor(leaf, N, i);
        const VectorXd zp = spec.uses_zprime && full
                                ? Z.at(j, i, ni)
                                : VectorXd::Zero(m);
        rhs += spec.g(i, j, nj, Y.at(j, nj), Z.at(i, j, nj), zp) * dt;
        rhs -= Z.at(i, j, nj) * tree.increment_at_leaf(leaf, j);
      }
      const double gap = (Y.at_leaf(i, leaf, N) - rhs).lpNorm<Eigen::Infinity>();
      worst = std::max(worst, gap);
    }
  }
  return worst;
}

double msolution_defect(const ScenarioTree& tree, const MSolution& sol) {
  const int N = tree.steps();
  double worst = 0.0;
  for (int i = 0; i < N; ++i) {
    const VectorXd mean = level_mean(tree, i, sol.Y.level(i));
    for (int leaf = 0; leaf < tree.leaf_count(); ++leaf) {
      VectorXd acc = mean;
      for (int j = 0; j < i; ++j) {
        acc += sol.Z.at(i, j, ScenarioTree::ancestor(leaf, N, j)) *
               tree.increment_at_leaf(leaf, j);
      }
      const double gap = (sol.Y.at_leaf(i, leaf, N) - acc).lpNorm<Eigen::Infinity>();
      worst = std::max(worst, gap);
    }
  }
  return worst;
}

}  // namespace fbsvie
