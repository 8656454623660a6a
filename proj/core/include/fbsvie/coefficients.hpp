// Problem data for the controlled system: Volterra kernels b, sigma, the
// generator g, free terms phi, psi, costs h, f, all with analytic first
// derivatives, plus the box control set U.
#pragma once

#include "fbsvie/lattice.hpp"

#include <functional>
#include <map>
#include <string>

namespace fbsvie {

using Eigen::RowVectorXd;

// Box control set U = prod [lo_i, hi_i]; convex, contains 0 by convention.
struct Box {
  VectorXd lo;
  VectorXd hi;

  int dim() const { return static_cast<int>(lo.size()); }
  bool contains(const VectorXd& v, double slack = 0.0) const;
  std::vector<VectorXd> vertices() const;
};

// Componentwise clamp onto the box; idempotent.
VectorXd project_onto_U(const VectorXd& v, const Box& box);

// Scalar polynomial in (t, s) of degree <= 2.
struct Poly2 {
  double c = 0, t = 0, s = 0, tt = 0, ts = 0, ss = 0;

  double eval(double tv, double sv) const {
    return c + t * tv + s * sv + tt * tv * tv + ts * tv * sv + ss * sv * sv;
  }
  bool is_zero() const {
    return c == 0 && t == 0 && s == 0 && tt == 0 && ts == 0 && ss == 0;
  }
};

using PolyMat = std::vector<std::vector<Poly2>>;

// Parameter table for the built-in families. `tables` maps slot names
// ("b.x", "g.zp", "f.uu", ...) to matrices of (t,s)-polynomials.
struct FamilyParams {
  int state_dim = 1;     // n
  int backward_dim = 1;  // m
  int control_dim = 1;   // ell
  std::map<std::string, PolyMat> tables;
  VectorXd control_lo;  // defaults to -1
  VectorXd control_hi;  // defaults to +1
};

// Evaluable coefficient set. All maps take time indices and evaluate at
// t_i = i*dt on the stored grid. Derivatives follow the row-vector
// convention for scalar-valued maps (h_x, f_x, ... are 1 x dim).
struct CoefficientSet {
  int n = 1, m = 1, ell = 1;
  TimeGrid grid;
  bool g_uses_zprime = false;

  std::function<VectorXd(int)> phi;

  // (i, j, x, u) -> n-vector
  std::function<VectorXd(int, int, const VectorXd&, const VectorXd&)> b, sigma;
  std::function<MatrixXd(int, int, const VectorXd&, const VectorXd&)> b_x, b_u,
      sigma_x, sigma_u;

  // (i, j, x', x, y, z, z', u) -> m-vector; z' ignored when !g_uses_zprime
  using GenFn = std::function<VectorXd(int, int, const VectorXd&, const VectorXd&,
                                       const VectorXd&, const VectorXd&,
                                       const VectorXd&, const VectorXd&)>;
  using GenJacFn = std::function<MatrixXd(int, int, const VectorXd&, const VectorXd&,
                                          const VectorXd&, const VectorXd&,
                                          const VectorXd&, const VectorXd&)>;
  GenFn g;
  GenJacFn g_xp, g_x, g_y, g_z, g_zp, g_u;

  // (i, x', x) -> m-vector
  std::function<VectorXd(int, const VectorXd&, const VectorXd&)> psi;
  std::function<MatrixXd(int, const VectorXd&, const VectorXd&)> psi_xp, psi_x;

  std::function<double(const VectorXd&, const VectorXd&)> h;
  std::function<RowVectorXd(const VectorXd&, const VectorXd&)> h_x, h_y;

  // (i, j, x, y, z, u) -> scalar
  std::function<double(int, int, const VectorXd&, const VectorXd&,
                       const VectorXd&, const VectorXd&)> f;
  std::function<RowVectorXd(int, int, const VectorXd&, const VectorXd&,
                            const VectorXd&, const VectorXd&)> f_x, f_y, f_z, f_u;

  Box control_set;
};

// Built-in families: "zero", "linear_volterra" (affine kernels/generator),
// "lq_tracking" (adds quadratic h and f). Throws std::invalid_argument on an
// unknown family name or malformed parameter table.
CoefficientSet builtin_family(const std::string& name, const FamilyParams& params,
                              const TimeGrid& grid);

struct DerivativeReport {
  std::map<std::string, double> max_rel_error;  // per kernel slot
  bool all_ok = true;
  double threshold = 1e-6;

  double worst() const;
};

// Central-difference check of every analytic derivative on random probe
// points. Report-only; flags slots whose relative discrepancy exceeds the
// threshold at the given step.
DerivativeReport validate_derivatives(const CoefficientSet& c, int probes,
                                      double step, std::uint64_t seed);

// Deterministic uniform draw in [-1, 1) from a 64-bit generator state;
// used everywhere reproducible randomness is needed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

  double uniform();                       // [-1, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  VectorXd vector(int dim, double scale = 1.0);
  MatrixXd matrix(int rows, int cols, double scale = 1.0);

 private:
  std::uint64_t next();
  std::uint64_t state_;
};

}  // namespace fbsvie
