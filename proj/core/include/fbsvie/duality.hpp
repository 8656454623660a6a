// Linear BSVIE, its mean-field Fredholm-Volterra adjoint equation, and the
// duality pairing between them.
//
// Discrete conventions. The linear BSVIE row i reads
//   Y(t_i) = psi(t_i) + sum_{j=i}^{N-1} [A(i,j)Y(t_j) + B(i,j)Z(i,j)
//                                        + C(i,j)Z(j,i)] dt
//                     - sum_{j=i}^{N-1} Z(i,j) dW_j,
// and the adjoint equation row i reads
//   xi(t_i) = alpha(t_i) + sum_{j<=i} A(j,i)^T E_i[xi(t_j)] dt
//                        + sum_{j<=i} E_j[C(j,i)^T xi(t_j)] dW_j
//                        + sum_{j=0}^{N-1} beta(i,j) dW_j
//                        + sum_{j>=i}  B(i,j)^T E_j[xi(t_i)] dW_j.
// Both Volterra sums carry the same diagonal terms as the BSVIE; this is
// what makes the duality identity hold to roundoff. The j = i term of the
// A-sum is resolved by a per-node (I - dt A(i,i)^T) solve, and the j = i
// term of the C-sum rides on the dW_i branch coefficient together with
// B(i,i). With zero kernel diagonals both reduce to strict sums.
//
// Pairing weights: every double time integral uses dt^2 (left endpoints on
// both axes). Mixing conventions breaks the identity; this is the main
// pitfall when extending the module.
#pragma once

#include "fbsvie/bsvie.hpp"
#include "fbsvie/coefficients.hpp"
#include "fbsvie/fsvie.hpp"
#include "fbsvie/lattice.hpp"

namespace fbsvie {

// Matrix kernel on the weak upper triangle: entry (o, i) with i >= o, stored
// per level-i node (adapted in the inner time).
class UpperKernel {
 public:
  UpperKernel() = default;
  UpperKernel(int rows, int cols, int count);

  int count() const { return count_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }

  MatrixXd& at(int outer, int inner, int node) { return slice(outer, inner)[node]; }
  const MatrixXd& at(int outer, int inner, int node) const {
    return slice(outer, inner)[node];
  }

  std::vector<MatrixXd>& slice(int outer, int inner);
  const std::vector<MatrixXd>& slice(int outer, int inner) const;

 private:
  int rows_ = 0, cols_ = 0, count_ = 0;
  std::vector<std::vector<MatrixXd>> slices_;
};

struct LinearBSVIEData {
  UpperKernel A, B, C;   // m x m, adapted in the inner time, bounded
  TerminalProcess psi;   // indices 0..N-1
  int dim = 1;           // m

  double bound() const;  // max entry magnitude over all kernels
};

struct AdjointData {
  AdaptedProcess alpha;  // indices 0..N-1
  VolterraField beta;    // FullSquare, outer 0..N-1
};

struct XiSolution {
  TerminalProcess xi;  // indices 0..N-1; not adapted in general
  SolveStats stats;
};

// M-solution of the linear BSVIE via the generic Picard solver.
MSolution solve_linear_bsvie(const ScenarioTree& tree, const LinearBSVIEData& d,
                             const SolverConfig& cfg = {});

// One row of the adjoint equation against a frozen xi: builds
// lambda(t_i, i) from the sub-diagonal sums (with the implicit A-diagonal
// factor), then runs the branch recursion
//   lambda(t_i, r+1) = lambda(t_i, r) + (B'(i,r)^T lambda(t_i, r) + beta(i,r)) dW_r
// with B'(i,i) = B(i,i) + C(i,i), and returns xi(t_i) = lambda(t_i, N).
std::vector<VectorXd> xi_forward_slice(const ScenarioTree& tree, int i,
                                       const TerminalProcess& xi_frozen,
                                       const LinearBSVIEData& d,
                                       const AdjointData& a);

// Picard iteration of xi_forward_slice over all rows from xi = 0. The frozen
// dependence is strictly lower-triangular in the outer time, so the exact
// fixed point is reached in N sweeps.
XiSolution solve_xi(const ScenarioTree& tree, const LinearBSVIEData& d,
                    const AdjointData& a, const SolverConfig& cfg = {});

// Path-wise defect of the discrete adjoint equation.
double xi_residual(const ScenarioTree& tree, const LinearBSVIEData& d,
                   const AdjointData& a, const TerminalProcess& xi);

struct DualityPair {
  double lhs = 0.0;  // E sum_i <psi(t_i), xi(t_i)> dt
  double rhs = 0.0;  // E sum_i <Y(t_i), alpha(t_i)> dt
                     //   + E sum_{i,j} <Z(i,j), beta(i,j)> dt^2
};

// Both sides computed from independently solved (Y, Z) and xi.
DualityPair eval_duality_pair(const ScenarioTree& tree, const LinearBSVIEData& d,
                              const AdjointData& a, const SolverConfig& cfg = {});

// Corollary pairing: lhs pairs psi against the linear FSVIE solution, rhs
// pairs phi against the M-solution of the transposed-kernel BSVIE
//   p(t_i) = psi(t_i) + sum_{j>i} [A0(j,i)^T p(t_j) + C0(j,i)^T q(j,i)] dt
//                     - sum_{j>=i} q(i,j) dW_j.
// The kernel sums are strict, matching the strict forward recursion.
DualityPair eval_corollary_duality(const ScenarioTree& tree, const LowerKernel& A0,
                                   const LowerKernel& C0, const AdaptedProcess& phi,
                                   const TerminalProcess& psi,
                                   const SolverConfig& cfg = {});

// The specialization A(t,s) = A0(s,t)^T, B = 0, C(t,s) = C0(s,t)^T (zero
// diagonals), alpha = phi, beta = 0 that routes the corollary through the
// general pairing.
void specialize_corollary(const ScenarioTree& tree, const LowerKernel& A0,
                          const LowerKernel& C0, const AdaptedProcess& phi,
                          const TerminalProcess& psi, LinearBSVIEData& d_out,
                          AdjointData& a_out);

// Seeded random bounded instance (kernels, free term, adjoint data) for
// duality experiments; entries are adapted step functions.
struct DualityInstance {
  LinearBSVIEData data;
  AdjointData adjoint;
};
DualityInstance make_duality_instance(const ScenarioTree& tree, int dim,
                                      std::uint64_t seed, double kernel_bound = 0.5);

}  // namespace fbsvie
