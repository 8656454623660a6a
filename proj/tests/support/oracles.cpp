#include "support/oracles.hpp"

namespace fbsvie::testing {

AdaptedProcess dense_fsvie_solve(const ScenarioTree& tree, const LowerKernel& A0,
                                 const LowerKernel& C0, const AdaptedProcess& phi) {
  const int N = tree.steps();
  const int n = phi.dim();
  const double dt = tree.dt();

  // Unknown layout: X_i at level-i node -> offset n*(2^i - 1 + node).
  auto col = [n](int i, int node) { return n * ((1 << i) - 1 + node); };
  const int size = n * ((1 << (N + 1)) - 1);

  MatrixXd M = MatrixXd::Zero(size, size);
  VectorXd rhs = VectorXd::Zero(size);
  for (int i = 0; i <= N; ++i) {
    for (int node = 0; node < tree.node_count(i); ++node) {
      const int row = col(i, node);
      M.block(row, col(i, node), n, n) += MatrixXd::Identity(n, n);
      rhs.segment(row, n) = phi.at(i, node);
      for (int j = 0; j < i; ++j) {
        const int nj = ScenarioTree::ancestor(node, i, j);
        M.block(row, col(j, nj), n, n) -=
            A0.at(i, j, nj) * dt + C0.at(i, j, nj) * tree.increment(node, i, j);
      }
    }
  }
  const VectorXd x = M.partialPivLu().solve(rhs);

  AdaptedProcess out(n, N + 1);
  for (int i = 0; i <= N; ++i)
    for (int node = 0; node < tree.node_count(i); ++node)
      out.at(i, node) = x.segment(col(i, node), n);
  return out;
}

DenseBsvieResult dense_bsvie_solve(const ScenarioTree& tree,
                                   const LinearBSVIEData& d) {
  const int N = tree.steps();
  const int m = d.dim;
  const int leaves = tree.leaf_count();
  const double dt = tree.dt();

  // Per-row layout: [E Y_i | Z(i,0) nodes | Z(i,1) nodes | ...], m per entry.
  const int rowsz = m * leaves;
  auto col_ey = [&](int i) { return i * rowsz; };
  auto col_z = [&](int i, int j, int node) {
    return i * rowsz + m * ((1 << j) + node);
  };
  const int size = N * rowsz;

  MatrixXd M = MatrixXd::Zero(size, size);
  VectorXd rhs = VectorXd::Zero(size);

  // Y_i at the level-i ancestor of `leaf`, entering equation block `row`
  // with matrix `weight`: expand through the M-representation.
  auto add_Y = [&](MatrixXd& mat, int row, int i, int leaf, const MatrixXd& weight) {
    mat.block(row, col_ey(i), m, m) += weight;
    for (int j = 0; j < i; ++j) {
      const int nj = ScenarioTree::ancestor(leaf, N, j);
      mat.block(row, col_z(i, j, nj), m, m) +=
          weight * tree.increment_at_leaf(leaf, j);
    }
  };

  for (int i = 0; i < N; ++i) {
    for (int leaf = 0; leaf < leaves; ++leaf) {
      const int row = (i * leaves + leaf) * m;
      rhs.segment(row, m) = d.psi.at(i, leaf);
      add_Y(M, row, i, leaf, MatrixXd::Identity(m, m));
      for (int j = i; j < N; ++j) {
        const int nj = ScenarioTree::ancestor(leaf, N, j);
        const int ni = ScenarioTree::ancestor(leaf, N, i);
        add_Y(M, row, j, leaf, -dt * d.A.at(i, j, nj));
        M.block(row, col_z(i, j, nj), m, m) +=
            -dt * d.B.at(i, j, nj) +
            MatrixXd::Identity(m, m) * tree.increment_at_leaf(leaf, j);
        M.block(row, col_z(j, i, ni), m, m) -= dt * d.C.at(i, j, nj);
      }
    }
  }

  const VectorXd x = M.partialPivLu().solve(rhs);

  DenseBsvieResult out;
  out.Y = AdaptedProcess(m, N);
  out.Z = VolterraField(FieldDomain::FullSquare, m, N, N);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j)
      for (int node = 0; node < tree.node_count(j); ++node)
        out.Z.at(i, j, node) = x.segment(col_z(i, j, node), m);
    for (int node = 0; node < tree.node_count(i); ++node) {
      VectorXd y = x.segment(col_ey(i), m);
      for (int j = 0; j < i; ++j) {
        const int nj = ScenarioTree::ancestor(node, i, j);
        y += out.Z.at(i, j, nj) * tree.increment(node, i, j);
      }
      out.Y.at(i, node) = std::move(y);
    }
  }
  return out;
}

TerminalProcess dense_xi_solve(const ScenarioTree& tree, const LinearBSVIEData& d,
                               const AdjointData& a) {
  const int N = tree.steps();
  const int m = d.dim;
  const int leaves = tree.leaf_count();
  const double dt = tree.dt();

  auto col = [&](int i, int leaf) { return (i * leaves + leaf) * m; };
  const int size = N * leaves * m;

  MatrixXd M = MatrixXd::Zero(size, size);
  VectorXd rhs = VectorXd::Zero(size);

  for (int i = 0; i < N; ++i) {
    for (int leaf = 0; leaf < leaves; ++leaf) {
      const int row = col(i, leaf);
      M.block(row, col(i, leaf), m, m) += MatrixXd::Identity(m, m);

      const int ni = ScenarioTree::ancestor(leaf, N, i);
      rhs.segment(row, m) = a.alpha.at(i, ni);
      for (int j = 0; j < N; ++j)
        rhs.segment(row, m) += a.beta.at(i, j, ScenarioTree::ancestor(leaf, N, j)) *
                               tree.increment_at_leaf(leaf, j);

      // A-sum over j <= i: -dt A(j,i)^T E_i[xi_j].
      for (int j = 0; j <= i; ++j) {
        const MatrixXd w = -dt * d.A.at(j, i, ni).transpose() / (leaves >> i);
        const int base = ni << (N - i);
        for (int lp = 0; lp < (leaves >> i); ++lp)
          M.block(row, col(j, base + lp), m, m) += w;
      }

      // C-sum over j <= i: -dW_j E_j[C(j,i)^T xi_j]; C varies inside the
      // average (mean-field structure).
      for (int j = 0; j <= i; ++j) {
        const int njl = ScenarioTree::ancestor(leaf, N, j);
        const double w = -tree.increment_at_leaf(leaf, j) / (leaves >> j);
        const int base = njl << (N - j);
        for (int lp = 0; lp < (leaves >> j); ++lp) {
          const int lpi = ScenarioTree::ancestor(base + lp, N, i);
          M.block(row, col(j, base + lp), m, m) +=
              w * d.C.at(j, i, lpi).transpose();
        }
      }

      // B-sum over j >= i: -dW_j B(i,j)^T E_j[xi_i].
      for (int j = i; j < N; ++j) {
        const int njl = ScenarioTree::ancestor(leaf, N, j);
        const MatrixXd w = -tree.increment_at_leaf(leaf, j) *
                           d.B.at(i, j, njl).transpose() / (leaves >> j);
        const int base = njl << (N - j);
        for (int lp = 0; lp < (leaves >> j); ++lp)
          M.block(row, col(i, base + lp), m, m) += w;
      }
    }
  }

  const VectorXd x = M.partialPivLu().solve(rhs);

  TerminalProcess out(m, N, leaves);
  for (int i = 0; i < N; ++i)
    for (int leaf = 0; leaf < leaves; ++leaf)
      out.at(i, leaf) = x.segment(col(i, leaf), m);
  return out;
}

}  // namespace fbsvie::testing
