// Forward stochastic Volterra integral equation on the tree. The two-time
// kernels are re-evaluated for every outer index, so increments depend on
// the whole past; left-endpoint sums keep the recursion explicit (the
// diagonal b(t_i, t_i, .) never enters X(t_i)).
#pragma once

#include "fbsvie/coefficients.hpp"
#include "fbsvie/lattice.hpp"

namespace fbsvie {

struct ForwardSolution {
  AdaptedProcess X;  // time indices 0..N
};

// X(t_i) = phi(t_i) + sum_{j<i} b(t_i,t_j,X_j,u_j) dt
//                   + sum_{j<i} sigma(t_i,t_j,X_j,u_j) dW_j.
// Throws std::runtime_error if a non-finite value is produced.
ForwardSolution solve_fsvie(const ScenarioTree& tree, const CoefficientSet& c,
                            const AdaptedProcess& u);

// Linear kernel pair for the homogeneous part of a linear FSVIE: entry (i, j)
// is used for j < i and must be F_{t_j}-measurable (stored per level-j node).
class LowerKernel {
 public:
  LowerKernel() = default;
  LowerKernel(int rows, int cols, int outer_count, int inner_count);

  int outer_count() const { return outer_; }
  int inner_count() const { return inner_; }

  MatrixXd& at(int i, int j, int node) { return slice(i, j)[node]; }
  const MatrixXd& at(int i, int j, int node) const { return slice(i, j)[node]; }

  std::vector<MatrixXd>& slice(int i, int j);
  const std::vector<MatrixXd>& slice(int i, int j) const;

 private:
  int outer_ = 0, inner_ = 0;
  std::vector<std::vector<MatrixXd>> slices_;  // (i,j), j < i, per level-j node
};

// X(t_i) = phi(t_i) + sum_{j<i} A0(i,j) X_j dt + sum_{j<i} C0(i,j) X_j dW_j.
ForwardSolution solve_linear_fsvie(const ScenarioTree& tree, const LowerKernel& A0,
                                   const LowerKernel& C0, const AdaptedProcess& phi);

}  // namespace fbsvie
