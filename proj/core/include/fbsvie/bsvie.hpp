// Backward stochastic Volterra integral equations on the tree, solved by
// Picard iteration of a family of one-step BSDE recursions with (y, z')
// frozen between sweeps.
//
// Discrete conventions (used consistently by every consumer):
//   - row i of the equation reads
//       Y(t_i) = psi(t_i) + sum_{j=i}^{N-1} g(t_i,t_j, Y(t_j), Z(i,j), Z(j,i)) dt
//                         - sum_{j=i}^{N-1} Z(i,j) dW_j,
//     so the generator sum includes the diagonal j = i; its z' argument at
//     j = i reads the frozen diagonal Z(i,i).
//   - Y is stored on 0..N with Y(t_N) = psi(t_N) as the boundary value.
//   - M-solutions fill Z(i,j), j < i, with the martingale-representation
//     coefficients of Y(t_i); the boundary slice Z(N, .) is not stored.
#pragma once

#include "fbsvie/lattice.hpp"

#include <functional>

namespace fbsvie {

// g(i, j, node at level j, y, z, z') -> m-vector. Adapted coefficient
// randomness enters through the node argument.
using Generator = std::function<VectorXd(int, int, int, const VectorXd&,
                                         const VectorXd&, const VectorXd&)>;

struct GeneratorSpec {
  TerminalProcess free_term;  // psi, time indices 0..N
  Generator g;
  bool uses_zprime = false;
  int dim = 1;  // m
};

struct SolverConfig {
  double picard_tol = 1e-11;  // on the weighted norm of iterate differences
  int max_iter = 200;
  double beta = -1.0;  // stopping-norm weight; < 0 means 2N/T

  double beta_for(const TimeGrid& grid) const {
    return beta >= 0.0 ? beta : 2.0 * grid.steps / grid.horizon;
  }
};

struct SolveStats {
  int iterations = 0;
  std::vector<double> diff_trail;  // weighted norm of iterate differences
  double residual = 0.0;           // path-wise equation defect after the solve
};

struct MSolution {
  AdaptedProcess Y;  // 0..N, Y(t_N) = psi(t_N)
  VolterraField Z;   // FullSquare, outer 0..N-1
  SolveStats stats;
};

struct AdaptedSolution {
  AdaptedProcess Y;  // 0..N
  VolterraField Z;   // UpperTriangle
  SolveStats stats;
};

struct NoConvergence : std::runtime_error {
  NoConvergence(int iterations, double last_diff)
      : std::runtime_error(
            "BSVIE Picard iteration did not converge in " +
            std::to_string(iterations) + " sweeps (last diff " +
            std::to_string(last_diff) + "); refine the time grid"),
        iterations(iterations),
        last_diff(last_diff) {}
  int iterations;
  double last_diff;
};

// One sweep of the parameterized BSDE family against a frozen pair. For each
// outer index i, runs the backward recursion
//   eta(i,N) = psi(t_i);   zeta(i,r) = repr coefficient of eta(i,r+1);
//   eta(i,r) = E_r[eta(i,r+1)] + g(t_i,t_r, y(t_r), zeta(i,r), z(r,i)) dt,
// and returns Y(t_i) = eta(i,i), Z(i,j) = zeta(i,j) for j >= i.
void bsde_family_sweep(const ScenarioTree& tree, const GeneratorSpec& spec,
                       const AdaptedProcess& frozen_y,
                       const VolterraField& frozen_z, AdaptedProcess& y_out,
                       VolterraField& z_upper_out);

// Fills Z(i,j), j < i, with the representation coefficients of Y(t_i);
// the M-property then holds exactly per leaf.
MSolution extend_to_msolution(const ScenarioTree& tree, const AdaptedProcess& Y,
                              const VolterraField& Z_upper);

MSolution solve_bsvie_msolution(const ScenarioTree& tree, const GeneratorSpec& spec,
                                const SolverConfig& cfg = {});

AdaptedSolution solve_bsvie_adapted(const ScenarioTree& tree,
                                    const GeneratorSpec& spec,
                                    const SolverConfig& cfg = {});

// Max path-wise defect of the discrete equation over all rows and leaves.
double bsvie_residual(const ScenarioTree& tree, const GeneratorSpec& spec,
                      const AdaptedProcess& Y, const VolterraField& Z);

// Max over rows i of the path-wise defect of
// Y(t_i) = E[Y(t_i)] + sum_{j<i} Z(i,j) dW_j.
double msolution_defect(const ScenarioTree& tree, const MSolution& sol);

}  // namespace fbsvie
