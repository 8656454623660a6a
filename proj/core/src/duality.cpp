#include "fbsvie/duality.hpp"

#include <cmath>

namespace fbsvie {

UpperKernel::UpperKernel(int rows, int cols, int count)
    : rows_(rows), cols_(cols), count_(count) {
  slices_.resize(static_cast<std::size_t>(count_) * count_);
  for (int o = 0; o < count_; ++o) {
    for (int i = o; i < count_; ++i) {
      slices_[static_cast<std::size_t>(o) * count_ + i].assign(
          std::size_t{1} << i, MatrixXd::Zero(rows, cols));
    }
  }
}

std::vector<MatrixXd>& UpperKernel::slice(int outer, int inner) {
  if (outer < 0 || outer >= count_ || inner < outer || inner >= count_)
    throw std::out_of_range("UpperKernel: index out of range (requires inner >= outer)");
  return slices_[static_cast<std::size_t>(outer) * count_ + inner];
}

const std::vector<MatrixXd>& UpperKernel::slice(int outer, int inner) const {
  return const_cast<UpperKernel*>(this)->slice(outer, inner);
}

double LinearBSVIEData::bound() const {
  double b = 0.0;
  for (const UpperKernel* k : {&A, &B, &C}) {
    for (int o = 0; o < k->count(); ++o)
      for (int i = o; i < k->count(); ++i)
        for (const MatrixXd& mat : k->slice(o, i))
          b = std::max(b, mat.cwiseAbs().maxCoeff());
  }
  return b;
}

namespace {

GeneratorSpec linear_generator_spec(const ScenarioTree& tree,
                                    const LinearBSVIEData& d) {
  const int N = tree.steps();
  const int m = d.dim;
  GeneratorSpec spec;
  spec.dim = m;
  spec.uses_zprime = true;
  spec.free_term = TerminalProcess(m, N + 1, tree.leaf_count());
  for (int i = 0; i < N; ++i) spec.free_term.slice(i) = d.psi.slice(i);
  // Boundary row stays zero; rows 0..N-1 never read it.
  const LinearBSVIEData* data = &d;
  spec.g = [data](int i, int j, int node, const VectorXd& y, const VectorXd& z,
                  const VectorXd& zp) {
    return VectorXd(data->A.at(i, j, node) * y + data->B.at(i, j, node) * z +
                    data->C.at(i, j, node) * zp);
  };
  return spec;
}

}  // namespace

MSolution solve_linear_bsvie(const ScenarioTree& tree, const LinearBSVIEData& d,
                             const SolverConfig& cfg) {
  return solve_bsvie_msolution(tree, linear_generator_spec(tree, d), cfg);
}

std::vector<VectorXd> xi_forward_slice(const ScenarioTree& tree, int i,
                                       const TerminalProcess& xi_frozen,
                                       const LinearBSVIEData& d,
                                       const AdjointData& a) {
  const int N = tree.steps();
  const int m = d.dim;
  const double dt = tree.dt();

  // Sub-diagonal contributions, resolved at level i.
  std::vector<VectorXd> core(tree.node_count(i), VectorXd::Zero(m));
  for (int node = 0; node < tree.node_count(i); ++node)
    core[node] = a.alpha.at(i, node);

  for (int j = 0; j < i; ++j) {
    // A(j,i)^T E_i[xi(t_j)] dt with A(j,i) read at the level-i node.
    const std::vector<VectorXd> xi_j_at_i = cond_expect(tree, xi_frozen.slice(j), i);
    for (int node = 0; node < tree.node_count(i); ++node)
      core[node] += d.A.at(j, i, node).transpose() * xi_j_at_i[node] * dt;

    // E_j[C(j,i)^T xi(t_j)] dW_j: C varies inside the average (mean-field
    // term), so project the product, not the factors.
    std::vector<VectorXd> product(tree.leaf_count());
    for (int leaf = 0; leaf < tree.leaf_count(); ++leaf) {
      const int ni = ScenarioTree::ancestor(leaf, N, i);
      product[leaf] = d.C.at(j, i, ni).transpose() * xi_frozen.at(j, leaf);
    }
    const std::vector<VectorXd> proj = cond_expect(tree, product, j);
    for (int node = 0; node < tree.node_count(i); ++node) {
      const int nj = ScenarioTree::ancestor(node, i, j);
      core[node] += proj[nj] * tree.increment(node, i, j);
    }
  }
  for (int j = 0; j < i; ++j) {
    for (int node = 0; node < tree.node_count(i); ++node) {
      const int nj = ScenarioTree::ancestor(node, i, j);
      core[node] += a.beta.at(i, j, nj) * tree.increment(node, i, j);
    }
  }

  // Diagonal of the A-sum: lambda(t_i, i) = (I - dt A(i,i)^T)^{-1} core.
  std::vector<VectorXd> lambda(tree.node_count(i));
  for (int node = 0; node < tree.node_count(i); ++node) {
    const MatrixXd factor =
        MatrixXd::Identity(m, m) - dt * d.A.at(i, i, node).transpose();
    lambda[node] = factor.partialPivLu().solve(core[node]);
  }

  // Branch recursion; the C-diagonal rides on the first step.
  for (int r = i; r < N; ++r) {
    std::vector<VectorXd> next(tree.node_count(r + 1));
    for (int node = 0; node < tree.node_count(r); ++node) {
      MatrixXd bprime = d.B.at(i, r, node);
      if (r == i) bprime += d.C.at(i, i, node);
      const VectorXd drift =
          bprime.transpose() * lambda[node] + a.beta.at(i, r, node);
      next[2 * node] = lambda[node] + drift * tree.sqrt_dt();
      next[2 * node + 1] = lambda[node] - drift * tree.sqrt_dt();
    }
    lambda = std::move(next);
  }
  return lambda;
}

XiSolution solve_xi(const ScenarioTree& tree, const LinearBSVIEData& d,
                    const AdjointData& a, const SolverConfig& cfg) {
  const int N = tree.steps();
  const int m = d.dim;
  const double dt = tree.dt();

  XiSolution sol;
  sol.xi = TerminalProcess(m, N, tree.leaf_count());

  double last_change = 0.0;
  for (int sweep = 1; sweep <= cfg.max_iter; ++sweep) {
    TerminalProcess next(m, N, tree.leaf_count());
    for (int i = 0; i < N; ++i) next.slice(i) = xi_forward_slice(tree, i, sol.xi, d, a);

    double change_sq = 0.0;
    for (int i = 0; i < N; ++i) {
      double row = 0.0;
      for (int leaf = 0; leaf < tree.leaf_count(); ++leaf)
        row += (next.at(i, leaf) - sol.xi.at(i, leaf)).squaredNorm();
      change_sq += row * tree.leaf_probability() * dt;
    }
    last_change = std::sqrt(change_sq);
    sol.stats.diff_trail.push_back(last_change);
    sol.stats.iterations = sweep;
    sol.xi = std::move(next);

    if (last_change <= cfg.picard_tol) {
      sol.stats.residual = xi_residual(tree, d, a, sol.xi);
      return sol;
    }
  }
  throw NoConvergence(cfg.max_iter, last_change);
}

double xi_residual(const ScenarioTree& tree, const LinearBSVIEData& d,
                   const AdjointData& a, const TerminalProcess& xi) {
  const int N = tree.steps();
  const double dt = tree.dt();

  double worst = 0.0;
  for (int i = 0; i < N; ++i) {
    // E_r[xi(t_i)] for all levels r >= i, reused by the B-sum.
    std::vector<std::vector<VectorXd>> xi_i_at(N + 1);
    for (int r = i; r <= N; ++r) xi_i_at[r] = cond_expect(tree, xi.slice(i), r);

    std::vector<VectorXd> rhs(tree.leaf_count());
    for (int leaf = 0; leaf < tree.leaf_count(); ++leaf) {
      const int ni = ScenarioTree::ancestor(leaf, N, i);
      rhs[leaf] = a.alpha.at(i, ni);
      for (int j = 0; j < N; ++j)
        rhs[leaf] += a.beta.at(i, j, ScenarioTree::ancestor(leaf, N, j)) *
                     tree.increment_at_leaf(leaf, j);
      for (int j = i; j < N; ++j) {
        const int nj = ScenarioTree::ancestor(leaf, N, j);
        MatrixXd bprime = d.B.at(i, j, nj);
        if (j == i) bprime += d.C.at(i, i, nj);
        rhs[leaf] += bprime.transpose() * xi_i_at[j][nj] *
                     tree.increment_at_leaf(leaf, j);
      }
    }
    for (int j = 0; j <= i; ++j) {
      const std::vector<VectorXd> xi_j_at_i = cond_expect(tree, xi.slice(j), i);
      const bool diagonal = j == i;
      for (int leaf = 0; leaf < tree.leaf_count(); ++leaf) {
        const int ni = ScenarioTree::ancestor(leaf, N, i);
        rhs[leaf] += d.A.at(j, i, ni).transpose() * xi_j_at_i[ni] * dt;
      }
      if (!diagonal) {
        std::vector<VectorXd> product(tree.leaf_count());
        for (int leaf = 0; leaf < tree.leaf_count(); ++leaf) {
          const int ni = ScenarioTree::ancestor(leaf, N, i);
          product[leaf] = d.C.at(j, i, ni).transpose() * xi.at(j, leaf);
        }
        const std::vector<VectorXd> proj = cond_expect(tree, product, j);
        for (int leaf = 0; leaf < tree.leaf_count(); ++leaf) {
          rhs[leaf] += proj[ScenarioTree::ancestor(leaf, N, j)] *
                       tree.increment_at_leaf(leaf, j);
        }
      }
    }
    for (int leaf = 0; leaf < tree.leaf_count(); ++leaf) {
      const double gap = (xi.at(i, leaf) - rhs[leaf]).lpNorm<Eigen::Infinity>();
      worst = std::max(worst, gap);
    }
  }
  return worst;
}

DualityPair eval_duality_pair(const ScenarioTree& tree, const LinearBSVIEData& d,
                              const AdjointData& a, const SolverConfig& cfg) {
  const int N = tree.steps();
  const double dt = tree.dt();
  const double pleaf = tree.leaf_probability();

  const MSolution ms = solve_linear_bsvie(tree, d, cfg);
  const XiSolution xs = solve_xi(tree, d, a, cfg);

  DualityPair pair;
  for (int i = 0; i < N; ++i) {
    double acc = 0.0;
    for (int leaf = 0; leaf < tree.leaf_count(); ++leaf)
      acc += d.psi.at(i, leaf).dot(xs.xi.at(i, leaf));
    pair.lhs += acc * pleaf * dt;
  }
  for (int i = 0; i < N; ++i) {
    double acc = 0.0;
    for (int node = 0; node < tree.node_count(i); ++node)
      acc += ms.Y.at(i, node).dot(a.alpha.at(i, node));
    pair.rhs += acc * tree.node_probability(i) * dt;
    for (int j = 0; j < N; ++j) {
      double zb = 0.0;
      for (int node = 0; node < tree.node_count(j); ++node)
        zb += ms.Z.at(i, j, node).dot(a.beta.at(i, j, node));
      pair.rhs += zb * tree.node_probability(j) * dt * dt;
    }
  }
  return pair;
}

DualityPair eval_corollary_duality(const ScenarioTree& tree, const LowerKernel& A0,
                                   const LowerKernel& C0, const AdaptedProcess& phi,
                                   const TerminalProcess& psi,
                                   const SolverConfig& cfg) {
  const int N = tree.steps();
  const double dt = tree.dt();
  const int dim = phi.dim();

  const ForwardSolution fwd = solve_linear_fsvie(tree, A0, C0, phi);

  GeneratorSpec spec;
  spec.dim = dim;
  spec.uses_zprime = true;
  spec.free_term = TerminalProcess(dim, N + 1, tree.leaf_count());
  for (int i = 0; i < N; ++i) spec.free_term.slice(i) = psi.slice(i);
  spec.g = [&A0, &C0, dim](int i, int j, int node, const VectorXd& y,
                           const VectorXd& /*z*/, const VectorXd& zp) {
    if (j <= i) return VectorXd(VectorXd::Zero(dim));
    // Kernels A0(j,i), C0(j,i) are F_{t_i}-measurable; read at the ancestor.
    const int ni = ScenarioTree::ancestor(node, j, i);
    return VectorXd(A0.at(j, i, ni).transpose() * y +
                    C0.at(j, i, ni).transpose() * zp);
  };
  const MSolution pq = solve_bsvie_msolution(tree, spec, cfg);

  DualityPair pair;
  for (int i = 0; i < N; ++i) {
    double lhs_acc = 0.0;
    for (int leaf = 0; leaf < tree.leaf_count(); ++leaf) {
      lhs_acc += psi.at(i, leaf).dot(fwd.X.at_leaf(i, leaf, N));
    }
    pair.lhs += lhs_acc * tree.leaf_probability() * dt;

    double rhs_acc = 0.0;
    for (int node = 0; node < tree.node_count(i); ++node)
      rhs_acc += phi.at(i, node).dot(pq.Y.at(i, node));
    pair.rhs += rhs_acc * tree.node_probability(i) * dt;
  }
  return pair;
}

void specialize_corollary(const ScenarioTree& tree, const LowerKernel& A0,
                          const LowerKernel& C0, const AdaptedProcess& phi,
                          const TerminalProcess& psi, LinearBSVIEData& d_out,
                          AdjointData& a_out) {
  const int N = tree.steps();
  const int dim = phi.dim();

  d_out.dim = dim;
  d_out.A = UpperKernel(dim, dim, N);
  d_out.B = UpperKernel(dim, dim, N);
  d_out.C = UpperKernel(dim, dim, N);
  d_out.psi = TerminalProcess(dim, N, tree.leaf_count());
  for (int i = 0; i < N; ++i) d_out.psi.slice(i) = psi.slice(i);
  for (int o = 0; o < N; ++o) {
    for (int i = o + 1; i < N; ++i) {
      for (int node = 0; node < tree.node_count(i); ++node) {
        // A0(i,o), C0(i,o) are level-o measurable; lift to level i.
        const int no = ScenarioTree::ancestor(node, i, o);
        d_out.A.at(o, i, node) = A0.at(i, o, no).transpose();
        d_out.C.at(o, i, node) = C0.at(i, o, no).transpose();
      }
    }
  }

  a_out.alpha = AdaptedProcess(dim, N);
  for (int i = 0; i < N; ++i) a_out.alpha.level(i) = phi.level(i);
  a_out.beta = VolterraField(FieldDomain::FullSquare, dim, N, N);
}

DualityInstance make_duality_instance(const ScenarioTree& tree, int dim,
                                      std::uint64_t seed, double kernel_bound) {
  const int N = tree.steps();
  Rng rng(seed);

  DualityInstance inst;
  inst.data.dim = dim;
  inst.data.A = UpperKernel(dim, dim, N);
  inst.data.B = UpperKernel(dim, dim, N);
  inst.data.C = UpperKernel(dim, dim, N);
  for (int o = 0; o < N; ++o) {
    for (int i = o; i < N; ++i) {
      for (int node = 0; node < tree.node_count(i); ++node) {
        inst.data.A.at(o, i, node) = rng.matrix(dim, dim, kernel_bound);
        inst.data.B.at(o, i, node) = rng.matrix(dim, dim, kernel_bound);
        inst.data.C.at(o, i, node) = rng.matrix(dim, dim, kernel_bound);
      }
    }
  }
  inst.data.psi = TerminalProcess(dim, N, tree.leaf_count());
  for (int i = 0; i < N; ++i)
    for (int leaf = 0; leaf < tree.leaf_count(); ++leaf)
      inst.data.psi.at(i, leaf) = rng.vector(dim);

  inst.adjoint.alpha = AdaptedProcess(dim, N);
  for (int i = 0; i < N; ++i)
    for (int node = 0; node < tree.node_count(i); ++node)
      inst.adjoint.alpha.at(i, node) = rng.vector(dim);
  inst.adjoint.beta = VolterraField(FieldDomain::FullSquare, dim, N, N);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      for (int node = 0; node < tree.node_count(j); ++node)
        inst.adjoint.beta.at(i, j, node) = rng.vector(dim);

  return inst;
}

}  // namespace fbsvie
