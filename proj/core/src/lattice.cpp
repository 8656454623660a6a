#include "fbsvie/lattice.hpp"

#include <cmath>

namespace fbsvie {

ScenarioTree::ScenarioTree(TimeGrid grid) : grid_(grid) {
  if (grid_.steps < 1) throw std::invalid_argument("ScenarioTree: steps must be >= 1");
  if (!(grid_.horizon > 0.0)) throw std::invalid_argument("ScenarioTree: horizon must be > 0");
  if (grid_.steps > 25) throw std::invalid_argument("ScenarioTree: steps too large for exact enumeration");
  sqrt_dt_ = std::sqrt(grid_.dt());
}

AdaptedProcess::AdaptedProcess(int dim, int time_count) : dim_(dim) {
  values_.resize(time_count);
  for (int k = 0; k < time_count; ++k) {
    values_[k].assign(std::size_t{1} << k, VectorXd::Zero(dim));
  }
}

TerminalProcess::TerminalProcess(int dim, int time_count, int leaf_count)
    : dim_(dim) {
  values_.assign(time_count, std::vector<VectorXd>(leaf_count, VectorXd::Zero(dim)));
}

VolterraField::VolterraField(FieldDomain domain, int dim, int outer_count,
                             int inner_count)
    : domain_(domain), dim_(dim), outer_(outer_count), inner_(inner_count) {
  slices_.resize(static_cast<std::size_t>(outer_) * inner_);
  for (int i = 0; i < outer_; ++i) {
    for (int j = 0; j < inner_; ++j) {
      if (stored(i, j)) {
        slices_[flat(i, j)].assign(std::size_t{1} << j, VectorXd::Zero(dim));
      }
    }
  }
}

int VolterraField::flat(int i, int j) const { return i * inner_ + j; }

std::vector<VectorXd>& VolterraField::slice(int i, int j) {
  if (i < 0 || i >= outer_ || j < 0 || j >= inner_)
    throw std::out_of_range("VolterraField: index out of range");
  if (!stored(i, j))
    throw std::out_of_range("VolterraField: below-diagonal entry of an upper-triangle field");
  return slices_[flat(i, j)];
}

const std::vector<VectorXd>& VolterraField::slice(int i, int j) const {
  return const_cast<VolterraField*>(this)->slice(i, j);
}

std::vector<VectorXd> cond_expect(const ScenarioTree& tree,
                                  const std::vector<VectorXd>& leaf_values,
                                  int r) {
  const int n = tree.steps();
  if (r < 0 || r > n) throw std::out_of_range("cond_expect: level out of range");
  if (static_cast<int>(leaf_values.size()) != tree.leaf_count())
    throw std::invalid_argument("cond_expect: leaf vector has wrong size");
  if (r == n) return leaf_values;

  const int block = 1 << (n - r);
  std::vector<VectorXd> out(std::size_t{1} << r);
  for (int node = 0; node < (1 << r); ++node) {
    VectorXd acc = VectorXd::Zero(leaf_values[0].size());
    const int base = node * block;
    for (int l = 0; l < block; ++l) acc += leaf_values[base + l];
    out[node] = acc / block;
  }
  return out;
}

std::vector<VectorXd> expand_to_leaves(const ScenarioTree& tree,
                                       const std::vector<VectorXd>& level_values,
                                       int r) {
  const int n = tree.steps();
  std::vector<VectorXd> out(tree.leaf_count());
  for (int leaf = 0; leaf < tree.leaf_count(); ++leaf) {
    out[leaf] = level_values[leaf >> (n - r)];
  }
  return out;
}

std::pair<std::vector<VectorXd>, std::vector<VectorXd>> repr_step(
    const ScenarioTree& tree, const std::vector<VectorXd>& upper_values) {
  const int upper_count = static_cast<int>(upper_values.size());
  const int lower_count = upper_count / 2;
  std::vector<VectorXd> means(lower_count), coeffs(lower_count);
  const double denom = 2.0 * tree.sqrt_dt();
  for (int node = 0; node < lower_count; ++node) {
    const VectorXd& up = upper_values[2 * node];
    const VectorXd& down = upper_values[2 * node + 1];
    means[node] = 0.5 * (up + down);
    coeffs[node] = (up - down) / denom;
  }
  return {std::move(means), std::move(coeffs)};
}

std::vector<VectorXd> ito_integral(const ScenarioTree& tree,
                                   const AdaptedProcess& z, int from, int to) {
  const int n = tree.steps();
  if (from < 0 || to < from || to > n)
    throw std::out_of_range("ito_integral: index out of range");
  const int dim = z.dim();
  std::vector<VectorXd> out(tree.leaf_count(), VectorXd::Zero(dim));
  for (int leaf = 0; leaf < tree.leaf_count(); ++leaf) {
    VectorXd acc = VectorXd::Zero(dim);
    for (int k = from; k < to; ++k) {
      acc += z.at_leaf(k, leaf, n) * tree.increment_at_leaf(leaf, k);
    }
    out[leaf] = acc;
  }
  return out;
}

MartingaleRepr martingale_repr(const ScenarioTree& tree,
                               const std::vector<VectorXd>& leaf_values) {
  const int n = tree.steps();
  const int dim = static_cast<int>(leaf_values[0].size());
  MartingaleRepr repr;
  repr.z = AdaptedProcess(dim, n);
  std::vector<VectorXd> current = leaf_values;
  for (int r = n - 1; r >= 0; --r) {
    auto [means, coeffs] = repr_step(tree, current);
    repr.z.level(r) = std::move(coeffs);
    current = std::move(means);
  }
  repr.mean = current[0];
  return repr;
}

VectorXd level_mean(const ScenarioTree& tree, int level,
                    const std::vector<VectorXd>& values) {
  VectorXd acc = VectorXd::Zero(values[0].size());
  for (const auto& v : values) acc += v;
  return acc * tree.node_probability(level);
}

double level_mean_sq(const ScenarioTree& tree, int level,
                     const std::vector<VectorXd>& values) {
  double acc = 0.0;
  for (const auto& v : values) acc += v.squaredNorm();
  return acc * tree.node_probability(level);
}

double weighted_norm(const ScenarioTree& tree, const AdaptedProcess& y,
                     const VolterraField& z, double beta) {
  const int n = tree.steps();
  const double dt = tree.dt();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    if (i < y.time_count()) row += level_mean_sq(tree, i, y.level(i));
    if (i < z.outer_count()) {
      for (int j = i; j < z.inner_count(); ++j) {
        row += level_mean_sq(tree, j, z.slice(i, j)) * dt;
      }
    }
    total += std::exp(beta * tree.grid().time(i)) * row * dt;
  }
  return total;
}

}  // namespace fbsvie
