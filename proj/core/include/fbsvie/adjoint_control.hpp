// Control layer: cost functionals, variational systems, adjoint bundles,
// the maximum-principle gradient, and a projected-gradient optimizer.
//
// Two problem kinds share one state equation:
//   C1  generator without z', cost h(X(T), Y(0)) + triangle f-integral;
//   C2  generator may use z', cost h(X(T), E sum Y dt) + square f-integral.
// Cost double-integrals use left-endpoint dt^2 weights with the inner index
// range {j >= i} (C1 triangle) or the full square (C2).
#pragma once

#include "fbsvie/bsvie.hpp"
#include "fbsvie/coefficients.hpp"
#include "fbsvie/duality.hpp"
#include "fbsvie/fsvie.hpp"
#include "fbsvie/lattice.hpp"

namespace fbsvie {

enum class Kind { C1, C2 };

struct ControlProblem {
  Kind kind = Kind::C1;
  CoefficientSet coeffs;

  ControlProblem() = default;
  ControlProblem(Kind kind, CoefficientSet coeffs);
};

struct StateTuple {
  ForwardSolution X;
  AdaptedProcess Y;  // 0..N
  VolterraField Z;   // UpperTriangle for C1, FullSquare for C2
  SolveStats stats;
};

struct VariationalTuple {
  ForwardSolution X1;
  AdaptedProcess Y1;   // 0..N
  VolterraField Z1;    // domain as the state
  AdaptedProcess direction;  // v - u_bar
};

struct AdjointBundle {
  AdaptedProcess lambda;  // m-vector, 0..N; C1 only (empty for C2)
  XiSolution xi;          // m-vector, 0..N-1
  AdaptedProcess mu;      // n-vector, 0..N
  AdaptedProcess nu;      // n-vector, 0..N-1
  AdaptedProcess p;       // n-vector, 0..N
  VolterraField q;        // n-vector, FullSquare
  SolveStats pq_stats;
};

struct NoDescent : std::runtime_error {
  explicit NoDescent(double step)
      : std::runtime_error("projected gradient: backtracking floor reached at step " +
                           std::to_string(step)),
        step(step) {}
  double step;
};

AdaptedProcess constant_control(const ScenarioTree& tree, const VectorXd& value);
AdaptedProcess project_control(const AdaptedProcess& u, const Box& box);
bool control_in_box(const AdaptedProcess& u, const Box& box, double slack = 1e-12);

StateTuple solve_state(const ScenarioTree& tree, const ControlProblem& p,
                       const AdaptedProcess& u, const SolverConfig& cfg = {});

double cost_of_state(const ScenarioTree& tree, const ControlProblem& p,
                     const AdaptedProcess& u, const StateTuple& state);
double eval_cost(const ScenarioTree& tree, const ControlProblem& p,
                 const AdaptedProcess& u, const SolverConfig& cfg = {});
double eval_J1(const ScenarioTree& tree, const ControlProblem& p,
               const AdaptedProcess& u, const SolverConfig& cfg = {});
double eval_J2(const ScenarioTree& tree, const ControlProblem& p,
               const AdaptedProcess& u, const SolverConfig& cfg = {});

// Linear variational system along v - u_bar with coefficients frozen at the
// state trajectory of u_bar.
VariationalTuple solve_variational(const ScenarioTree& tree, const ControlProblem& p,
                                   const AdaptedProcess& u_bar,
                                   const AdaptedProcess& v,
                                   const SolverConfig& cfg = {});
VariationalTuple solve_variational(const ScenarioTree& tree, const ControlProblem& p,
                                   const AdaptedProcess& u_bar,
                                   const AdaptedProcess& v, const StateTuple& state,
                                   const SolverConfig& cfg);

// First-variation value assembled from the variational tuple.
double directional_derivative_variational(const ScenarioTree& tree,
                                          const ControlProblem& p,
                                          const AdaptedProcess& u_bar,
                                          const AdaptedProcess& v,
                                          const SolverConfig& cfg = {});
double directional_derivative_variational(const ScenarioTree& tree,
                                          const ControlProblem& p,
                                          const AdaptedProcess& u_bar,
                                          const StateTuple& state,
                                          const VariationalTuple& var);

AdjointBundle solve_adjoint_bundle(const ScenarioTree& tree, const ControlProblem& p,
                                   const AdaptedProcess& u_bar,
                                   const SolverConfig& cfg = {});
AdjointBundle solve_adjoint_bundle(const ScenarioTree& tree, const ControlProblem& p,
                                   const AdaptedProcess& u_bar,
                                   const StateTuple& state, const SolverConfig& cfg);

// Leaf-resolved maximum-principle integrand G(s); leaf-resolved because xi
// is not adapted. E sum_s <G(s), v(s)-u(s)> dt is the cost derivative.
TerminalProcess mp_gradient(const ScenarioTree& tree, const ControlProblem& p,
                            const AdaptedProcess& u_bar, const AdjointBundle& bundle);
TerminalProcess mp_gradient(const ScenarioTree& tree, const ControlProblem& p,
                            const AdaptedProcess& u_bar, const StateTuple& state,
                            const AdjointBundle& bundle);

// E_s[G(s)]: pairs identically with adapted directions.
AdaptedProcess adapted_projection(const ScenarioTree& tree, const TerminalProcess& G);

// Pairing E sum_s <G(s), d(s)> dt for an adapted direction d.
double gradient_pairing(const ScenarioTree& tree, const TerminalProcess& G,
                        const AdaptedProcess& d);

// Independent difference-quotient oracle; central when u_bar - eps*d stays
// in U, one-sided otherwise.
double fd_directional_derivative(const ScenarioTree& tree, const ControlProblem& p,
                                 const AdaptedProcess& u_bar, const AdaptedProcess& v,
                                 double eps, const SolverConfig& cfg = {});

// Sum over (s, node) of the worst violated vertex of
// <E_s[G(s)], v - u(s)> >= 0.
double stationarity_residual(const ScenarioTree& tree, const AdaptedProcess& g_hat,
                             const AdaptedProcess& u, const Box& box);

struct OptimizeConfig {
  double init_step = 1.0;
  int max_iters = 50;
  double stat_tol = 1e-6;
  double armijo_c = 1e-4;     // sufficient decrease
  double backtrack = 0.5;
  double min_step = 1e-12;
  SolverConfig solver;
};

struct OptimizeRecord {
  int iter = 0;
  double J = 0.0;
  double residual = 0.0;
  double step = 0.0;
  int backtracks = 0;
};

struct OptimizeResult {
  AdaptedProcess u_star;
  std::vector<OptimizeRecord> history;
  bool converged = false;
};

OptimizeResult projected_gradient_optimize(const ScenarioTree& tree,
                                           const ControlProblem& p,
                                           const AdaptedProcess& start,
                                           const OptimizeConfig& cfg = {});

// Backward-solve check of the one-dimensional reduction
//   eta0 = xi + sum_s g0(t_s, zeta0(t_s)) dt - sum_s zeta0(t_s) dW_s:
// the BSDE with terminal xi must recover (eta0, zeta0).
struct Lemma52Report {
  double eta_gap = 0.0;   // |eta(0) - eta0|
  double zeta_gap = 0.0;  // max path-wise |zeta - zeta0|
  bool ok = false;
};
using ScalarGenerator =
    std::function<VectorXd(int, int, const VectorXd&)>;  // (r, node, zeta)
Lemma52Report lemma52_check(const ScenarioTree& tree,
                            const std::vector<VectorXd>& xi_rv, const VectorXd& eta0,
                            const AdaptedProcess& zeta0, const ScalarGenerator& g0,
                            double tol = 1e-10);

}  // namespace fbsvie
