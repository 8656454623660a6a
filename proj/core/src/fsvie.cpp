#include "fbsvie/fsvie.hpp"

#include <cmath>

namespace fbsvie {

namespace {

void check_finite(const VectorXd& v, const char* what) {
  if (!v.allFinite()) throw std::runtime_error(std::string(what) + ": non-finite value produced");
}

}  // namespace

ForwardSolution solve_fsvie(const ScenarioTree& tree, const CoefficientSet& c,
                            const AdaptedProcess& u) {
  const int N = tree.steps();
  const double dt = tree.dt();
  ForwardSolution sol;
  sol.X = AdaptedProcess(c.n, N + 1);

  for (int i = 0; i <= N; ++i) {
    const VectorXd phi_i = c.phi(i);
    for (int node = 0; node < tree.node_count(i); ++node) {
      VectorXd x = phi_i;
      for (int j = 0; j < i; ++j) {
        const int nj = ScenarioTree::ancestor(node, i, j);
        const VectorXd& xj = sol.X.at(j, nj);
        const VectorXd& uj = u.at(j, nj);
        x += c.b(i, j, xj, uj) * dt;
        x += c.sigma(i, j, xj, uj) * tree.increment(node, i, j);
      }
      check_finite(x, "solve_fsvie");
      sol.X.at(i, node) = std::move(x);
    }
  }
  return sol;
}

LowerKernel::LowerKernel(int rows, int cols, int outer_count, int inner_count)
    : outer_(outer_count), inner_(inner_count) {
  slices_.resize(static_cast<std::size_t>(outer_) * inner_);
  for (int i = 0; i < outer_; ++i) {
    for (int j = 0; j < inner_ && j < i; ++j) {
      slices_[static_cast<std::size_t>(i) * inner_ + j].assign(
          std::size_t{1} << j, MatrixXd::Zero(rows, cols));
    }
  }
}

std::vector<MatrixXd>& LowerKernel::slice(int i, int j) {
  if (i < 0 || i >= outer_ || j < 0 || j >= inner_ || j >= i)
    throw std::out_of_range("LowerKernel: index out of range (requires j < i)");
  return slices_[static_cast<std::size_t>(i) * inner_ + j];
}

const std::vector<MatrixXd>& LowerKernel::slice(int i, int j) const {
  return const_cast<LowerKernel*>(this)->slice(i, j);
}

ForwardSolution solve_linear_fsvie(const ScenarioTree& tree, const LowerKernel& A0,
                                   const LowerKernel& C0, const AdaptedProcess& phi) {
  const int N = tree.steps();
  const double dt = tree.dt();
  const int dim = phi.dim();
  if (phi.time_count() < N + 1)
    throw std::invalid_argument("solve_linear_fsvie: phi must cover indices 0..N");
  ForwardSolution sol;
  sol.X = AdaptedProcess(dim, N + 1);

  for (int i = 0; i <= N; ++i) {
    for (int node = 0; node < tree.node_count(i); ++node) {
      VectorXd x = phi.at(i, node);
      for (int j = 0; j < i; ++j) {
        const int nj = ScenarioTree::ancestor(node, i, j);
        const VectorXd& xj = sol.X.at(j, nj);
        x += A0.at(i, j, nj) * xj * dt;
        x += C0.at(i, j, nj) * xj * tree.increment(node, i, j);
      }
      check_finite(x, "solve_linear_fsvie");
      sol.X.at(i, node) = std::move(x);
    }
  }
  return sol;
}

}  // namespace fbsvie
