// Exact finite filtered probability space: a non-recombining binary tree
// with Rademacher increments +-sqrt(dt) under the uniform leaf measure.
// Conditional expectations are exact finite averages, so probabilistic
// identities (Ito isometry, martingale representation) hold to roundoff.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

namespace fbsvie {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct TimeGrid {
  double horizon = 1.0;  // T
  int steps = 1;         // N

  double dt() const { return horizon / steps; }
  double time(int k) const { return k * dt(); }
};

// Node addressing: level k holds 2^k nodes; the node index read MSB-first is
// the path of moves, bit 0 = up (+sqrt(dt)), bit 1 = down (-sqrt(dt)).
// Children of node n at level k are 2n (up) and 2n+1 (down) at level k+1.
class ScenarioTree {
 public:
  explicit ScenarioTree(TimeGrid grid);

  const TimeGrid& grid() const { return grid_; }
  int steps() const { return grid_.steps; }
  double dt() const { return grid_.dt(); }
  double sqrt_dt() const { return sqrt_dt_; }

  int node_count(int level) const { return 1 << level; }
  int leaf_count() const { return 1 << grid_.steps; }
  double node_probability(int level) const { return 1.0 / node_count(level); }
  double leaf_probability() const { return 1.0 / leaf_count(); }

  // Move taken over step j on the path to `node` at `level`; requires j < level.
  static int path_bit(int node, int level, int j) {
    return (node >> (level - 1 - j)) & 1;
  }
  static int ancestor(int node, int level, int target_level) {
    return node >> (level - target_level);
  }

  // Brownian increment over step j, resolved at `level` > j.
  double increment(int node, int level, int j) const {
    return path_bit(node, level, j) == 0 ? sqrt_dt_ : -sqrt_dt_;
  }
  double increment_at_leaf(int leaf, int j) const {
    return increment(leaf, grid_.steps, j);
  }

 private:
  TimeGrid grid_;
  double sqrt_dt_;
};

// F-adapted vector process: value at time index k is stored per level-k node,
// so adaptedness is structural.
class AdaptedProcess {
 public:
  AdaptedProcess() = default;
  AdaptedProcess(int dim, int time_count);

  int dim() const { return dim_; }
  int time_count() const { return static_cast<int>(values_.size()); }

  VectorXd& at(int k, int node) { return values_[k][node]; }
  const VectorXd& at(int k, int node) const { return values_[k][node]; }

  std::vector<VectorXd>& level(int k) { return values_[k]; }
  const std::vector<VectorXd>& level(int k) const { return values_[k]; }

  // Value at time k seen from a leaf (k-th ancestor lookup).
  const VectorXd& at_leaf(int k, int leaf, int leaf_level) const {
    return values_[k][leaf >> (leaf_level - k)];
  }

 private:
  int dim_ = 0;
  std::vector<std::vector<VectorXd>> values_;  // [k][node at level k]
};

// Time-indexed F_T-measurable process: every (k, leaf) entry is free.
class TerminalProcess {
 public:
  TerminalProcess() = default;
  TerminalProcess(int dim, int time_count, int leaf_count);

  int dim() const { return dim_; }
  int time_count() const { return static_cast<int>(values_.size()); }
  int leaf_count() const {
    return values_.empty() ? 0 : static_cast<int>(values_[0].size());
  }

  VectorXd& at(int k, int leaf) { return values_[k][leaf]; }
  const VectorXd& at(int k, int leaf) const { return values_[k][leaf]; }

  std::vector<VectorXd>& slice(int k) { return values_[k]; }
  const std::vector<VectorXd>& slice(int k) const { return values_[k]; }

 private:
  int dim_ = 0;
  std::vector<std::vector<VectorXd>> values_;  // [k][leaf]
};

enum class FieldDomain { FullSquare, UpperTriangle };

// Two-parameter process Z(t_i, t_j): outer index i in 0..outer_count-1, inner
// index j in 0..N-1, entry stored per level-j node (inner-slice adaptedness).
// UpperTriangle fields never store j < i entries.
class VolterraField {
 public:
  VolterraField() = default;
  VolterraField(FieldDomain domain, int dim, int outer_count, int inner_count);

  FieldDomain domain() const { return domain_; }
  int dim() const { return dim_; }
  int outer_count() const { return outer_; }
  int inner_count() const { return inner_; }

  bool stored(int i, int j) const {
    return domain_ == FieldDomain::FullSquare || j >= i;
  }

  VectorXd& at(int i, int j, int node) { return slice(i, j)[node]; }
  const VectorXd& at(int i, int j, int node) const { return slice(i, j)[node]; }

  std::vector<VectorXd>& slice(int i, int j);
  const std::vector<VectorXd>& slice(int i, int j) const;

 private:
  int flat(int i, int j) const;

  FieldDomain domain_ = FieldDomain::FullSquare;
  int dim_ = 0;
  int outer_ = 0;
  int inner_ = 0;
  std::vector<std::vector<VectorXd>> slices_;
};

// --- probabilistic primitives -------------------------------------------

// E[x | F_{t_r}] of a leaf-indexed vector: uniform subtree average, exact.
std::vector<VectorXd> cond_expect(const ScenarioTree& tree,
                                  const std::vector<VectorXd>& leaf_values,
                                  int r);

// Lift level-r values to leaves (constant on each subtree).
std::vector<VectorXd> expand_to_leaves(const ScenarioTree& tree,
                                       const std::vector<VectorXd>& level_values,
                                       int r);

// One backward step: from level-(r+1) values to (conditional mean, martingale
// representation coefficient) at level r. Both are exact two-point formulas.
std::pair<std::vector<VectorXd>, std::vector<VectorXd>> repr_step(
    const ScenarioTree& tree, const std::vector<VectorXd>& upper_values);

// Discrete Ito integral sum_{k=a}^{b-1} z(k) dW_k, returned per leaf.
std::vector<VectorXd> ito_integral(const ScenarioTree& tree,
                                   const AdaptedProcess& z, int from, int to);

struct MartingaleRepr {
  VectorXd mean;
  AdaptedProcess z;  // indices 0..N-1
};

// y = mean + sum_k z(k) dW_k, exact per leaf.
MartingaleRepr martingale_repr(const ScenarioTree& tree,
                               const std::vector<VectorXd>& leaf_values);

// Expectations over node values at one level.
VectorXd level_mean(const ScenarioTree& tree, int level,
                    const std::vector<VectorXd>& values);
double level_mean_sq(const ScenarioTree& tree, int level,
                     const std::vector<VectorXd>& values);

// Squared beta-weighted norm: sum_i e^{beta t_i} (E|y_i|^2 +
// sum_{j>=i} E|z(i,j)|^2 dt) dt over i = 0..N-1.
double weighted_norm(const ScenarioTree& tree, const AdaptedProcess& y,
                     const VolterraField& z, double beta);

}  // namespace fbsvie
