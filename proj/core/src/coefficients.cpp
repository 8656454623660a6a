#include "fbsvie/coefficients.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace fbsvie {

bool Box::contains(const VectorXd& v, double slack) const {
  for (int k = 0; k < dim(); ++k) {
    if (v[k] < lo[k] - slack || v[k] > hi[k] + slack) return false;
  }
  return true;
}

std::vector<VectorXd> Box::vertices() const {
  std::vector<VectorXd> out;
  const int d = dim();
  out.reserve(std::size_t{1} << d);
  for (int mask = 0; mask < (1 << d); ++mask) {
    VectorXd v(d);
    for (int k = 0; k < d; ++k) v[k] = (mask >> k) & 1 ? hi[k] : lo[k];
    out.push_back(std::move(v));
  }
  return out;
}

VectorXd project_onto_U(const VectorXd& v, const Box& box) {
  return v.cwiseMax(box.lo).cwiseMin(box.hi);
}

std::uint64_t Rng::next() {
  state_ += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::uniform() { return 2.0 * ((next() >> 11) * 0x1.0p-53) - 1.0; }

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * ((next() >> 11) * 0x1.0p-53);
}

VectorXd Rng::vector(int dim, double scale) {
  VectorXd v(dim);
  for (int k = 0; k < dim; ++k) v[k] = scale * uniform();
  return v;
}

MatrixXd Rng::matrix(int rows, int cols, double scale) {
  MatrixXd a(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) a(r, c) = scale * uniform();
  return a;
}

namespace {

// Evaluable matrix slot backed by a polynomial table (zero when absent).
class Slot {
 public:
  Slot(const FamilyParams& params, const std::string& name, int rows, int cols)
      : rows_(rows), cols_(cols) {
    auto it = params.tables.find(name);
    if (it == params.tables.end()) return;
    const PolyMat& table = it->second;
    if (static_cast<int>(table.size()) != rows)
      throw std::invalid_argument("builtin_family: table '" + name + "' must have " +
                                  std::to_string(rows) + " rows");
    for (const auto& row : table) {
      if (static_cast<int>(row.size()) != cols)
        throw std::invalid_argument("builtin_family: table '" + name + "' must have " +
                                    std::to_string(cols) + " columns");
    }
    table_ = table;
  }

  bool present() const { return !table_.empty(); }

  bool is_zero() const {
    for (const auto& row : table_)
      for (const auto& p : row)
        if (!p.is_zero()) return false;
    return true;
  }

  MatrixXd eval(double t, double s) const {
    MatrixXd out = MatrixXd::Zero(rows_, cols_);
    if (!table_.empty()) {
      for (int r = 0; r < rows_; ++r)
        for (int c = 0; c < cols_; ++c) out(r, c) = table_[r][c].eval(t, s);
    }
    return out;
  }

  MatrixXd eval_sym(double t, double s) const {
    MatrixXd a = eval(t, s);
    return 0.5 * (a + a.transpose());
  }

  VectorXd eval_vec(double t, double s) const { return eval(t, s).col(0); }

 private:
  int rows_, cols_;
  PolyMat table_;
};

const std::set<std::string> kLinearSlots = {
    "phi",    "b.x",  "b.u",  "b.0",    "sigma.x", "sigma.u", "sigma.0",
    "g.xp",   "g.x",  "g.y",  "g.z",    "g.zp",    "g.u",     "g.0",
    "psi.xp", "psi.x", "psi.0", "h.x",  "h.y",     "h.0",     "f.x",
    "f.y",    "f.z",  "f.u",  "f.0"};

const std::set<std::string> kQuadraticSlots = {
    "h.xx", "h.yy", "h.xref", "h.yref", "f.xx",
    "f.yy", "f.zz", "f.uu",   "f.xref", "f.uref"};

void check_slot_names(const std::string& family, const FamilyParams& params,
                      bool allow_linear, bool allow_quadratic) {
  for (const auto& [name, table] : params.tables) {
    (void)table;
    const bool linear = kLinearSlots.count(name) > 0;
    const bool quadratic = kQuadraticSlots.count(name) > 0;
    if (!linear && !quadratic)
      throw std::invalid_argument("builtin_family: unknown table '" + name + "'");
    if (linear && !allow_linear)
      throw std::invalid_argument("builtin_family: family '" + family +
                                  "' does not accept table '" + name + "'");
    if (quadratic && !allow_quadratic)
      throw std::invalid_argument("builtin_family: family '" + family +
                                  "' does not accept table '" + name + "'");
  }
}

}  // namespace

CoefficientSet builtin_family(const std::string& name, const FamilyParams& params,
                              const TimeGrid& grid) {
  if (name != "zero" && name != "linear_volterra" && name != "lq_tracking")
    throw std::invalid_argument("builtin_family: unknown family '" + name + "'");
  const bool linear_ok = name != "zero";
  const bool quad_ok = name == "lq_tracking";
  check_slot_names(name, params, linear_ok, quad_ok);

  const int n = params.state_dim, m = params.backward_dim, l = params.control_dim;
  if (n < 1 || m < 1 || l < 1)
    throw std::invalid_argument("builtin_family: dimensions must be positive");

  CoefficientSet c;
  c.n = n;
  c.m = m;
  c.ell = l;
  c.grid = grid;

  c.control_set.lo = params.control_lo.size() ? params.control_lo
                                              : VectorXd::Constant(l, -1.0);
  c.control_set.hi = params.control_hi.size() ? params.control_hi
                                              : VectorXd::Constant(l, 1.0);
  if (c.control_set.lo.size() != l || c.control_set.hi.size() != l ||
      (c.control_set.hi - c.control_set.lo).minCoeff() < 0.0)
    throw std::invalid_argument("builtin_family: malformed control box");

  Slot phi(params, "phi", n, 1);
  Slot bx(params, "b.x", n, n), bu(params, "b.u", n, l), b0(params, "b.0", n, 1);
  Slot sx(params, "sigma.x", n, n), su(params, "sigma.u", n, l),
      s0(params, "sigma.0", n, 1);
  Slot gxp(params, "g.xp", m, n), gx(params, "g.x", m, n), gy(params, "g.y", m, m),
      gz(params, "g.z", m, m), gzp(params, "g.zp", m, m), gu(params, "g.u", m, l),
      g0(params, "g.0", m, 1);
  Slot pxp(params, "psi.xp", m, n), px(params, "psi.x", m, n),
      p0(params, "psi.0", m, 1);
  Slot hx(params, "h.x", 1, n), hy(params, "h.y", 1, m), h0(params, "h.0", 1, 1);
  Slot fx(params, "f.x", 1, n), fy(params, "f.y", 1, m), fz(params, "f.z", 1, m),
      fu(params, "f.u", 1, l), f0(params, "f.0", 1, 1);
  Slot hxx(params, "h.xx", n, n), hyy(params, "h.yy", m, m),
      hxr(params, "h.xref", n, 1), hyr(params, "h.yref", m, 1);
  Slot fxx(params, "f.xx", n, n), fyy(params, "f.yy", m, m),
      fzz(params, "f.zz", m, m), fuu(params, "f.uu", l, l),
      fxr(params, "f.xref", n, 1), fur(params, "f.uref", l, 1);

  c.g_uses_zprime = gzp.present() && !gzp.is_zero();

  const TimeGrid g = grid;
  auto tt = [g](int i) { return g.time(i); };

  c.phi = [phi, tt](int i) { return phi.eval_vec(tt(i), 0.0); };

  c.b = [bx, bu, b0, tt](int i, int j, const VectorXd& x, const VectorXd& u) {
    const double t = tt(i), s = tt(j);
    return VectorXd(bx.eval(t, s) * x + bu.eval(t, s) * u + b0.eval_vec(t, s));
  };
  c.b_x = [bx, tt](int i, int j, const VectorXd&, const VectorXd&) {
    return bx.eval(tt(i), tt(j));
  };
  c.b_u = [bu, tt](int i, int j, const VectorXd&, const VectorXd&) {
    return bu.eval(tt(i), tt(j));
  };
  c.sigma = [sx, su, s0, tt](int i, int j, const VectorXd& x, const VectorXd& u) {
    const double t = tt(i), s = tt(j);
    return VectorXd(sx.eval(t, s) * x + su.eval(t, s) * u + s0.eval_vec(t, s));
  };
  c.sigma_x = [sx, tt](int i, int j, const VectorXd&, const VectorXd&) {
    return sx.eval(tt(i), tt(j));
  };
  c.sigma_u = [su, tt](int i, int j, const VectorXd&, const VectorXd&) {
    return su.eval(tt(i), tt(j));
  };

  c.g = [gxp, gx, gy, gz, gzp, gu, g0, tt](int i, int j, const VectorXd& xp,
                                           const VectorXd& x, const VectorXd& y,
                                           const VectorXd& z, const VectorXd& zp,
                                           const VectorXd& u) {
    const double t = tt(i), s = tt(j);
    return VectorXd(gxp.eval(t, s) * xp + gx.eval(t, s) * x + gy.eval(t, s) * y +
                    gz.eval(t, s) * z + gzp.eval(t, s) * zp + gu.eval(t, s) * u +
                    g0.eval_vec(t, s));
  };
  auto gen_jac = [tt](Slot slot) {
    return [slot, tt](int i, int j, const VectorXd&, const VectorXd&,
                      const VectorXd&, const VectorXd&, const VectorXd&,
                      const VectorXd&) { return slot.eval(tt(i), tt(j)); };
  };
  c.g_xp = gen_jac(gxp);
  c.g_x = gen_jac(gx);
  c.g_y = gen_jac(gy);
  c.g_z = gen_jac(gz);
  c.g_zp = gen_jac(gzp);
  c.g_u = gen_jac(gu);

  c.psi = [pxp, px, p0, tt](int i, const VectorXd& xp, const VectorXd& x) {
    const double t = tt(i);
    return VectorXd(pxp.eval(t, 0.0) * xp + px.eval(t, 0.0) * x + p0.eval_vec(t, 0.0));
  };
  c.psi_xp = [pxp, tt](int i, const VectorXd&, const VectorXd&) {
    return pxp.eval(tt(i), 0.0);
  };
  c.psi_x = [px, tt](int i, const VectorXd&, const VectorXd&) {
    return px.eval(tt(i), 0.0);
  };

  c.h = [hx, hy, h0, hxx, hyy, hxr, hyr](const VectorXd& x, const VectorXd& y) {
    double v = (hx.eval(0, 0) * x)(0) + (hy.eval(0, 0) * y)(0) + h0.eval(0, 0)(0, 0);
    const VectorXd dx = x - hxr.eval_vec(0, 0);
    const VectorXd dy = y - hyr.eval_vec(0, 0);
    v += 0.5 * dx.dot(hxx.eval_sym(0, 0) * dx) + 0.5 * dy.dot(hyy.eval_sym(0, 0) * dy);
    return v;
  };
  c.h_x = [hx, hxx, hxr](const VectorXd& x, const VectorXd&) {
    return RowVectorXd(hx.eval(0, 0) +
                       (x - hxr.eval_vec(0, 0)).transpose() * hxx.eval_sym(0, 0));
  };
  c.h_y = [hy, hyy, hyr](const VectorXd&, const VectorXd& y) {
    return RowVectorXd(hy.eval(0, 0) +
                       (y - hyr.eval_vec(0, 0)).transpose() * hyy.eval_sym(0, 0));
  };

  c.f = [fx, fy, fz, fu, f0, fxx, fyy, fzz, fuu, fxr, fur, tt](
            int i, int j, const VectorXd& x, const VectorXd& y, const VectorXd& z,
            const VectorXd& u) {
    const double t = tt(i), s = tt(j);
    double v = (fx.eval(t, s) * x)(0) + (fy.eval(t, s) * y)(0) +
               (fz.eval(t, s) * z)(0) + (fu.eval(t, s) * u)(0) + f0.eval(t, s)(0, 0);
    const VectorXd dx = x - fxr.eval_vec(t, s);
    const VectorXd du = u - fur.eval_vec(t, s);
    v += 0.5 * dx.dot(fxx.eval_sym(t, s) * dx) + 0.5 * y.dot(fyy.eval_sym(t, s) * y) +
         0.5 * z.dot(fzz.eval_sym(t, s) * z) + 0.5 * du.dot(fuu.eval_sym(t, s) * du);
    return v;
  };
  c.f_x = [fx, fxx, fxr, tt](int i, int j, const VectorXd& x, const VectorXd&,
                             const VectorXd&, const VectorXd&) {
    const double t = tt(i), s = tt(j);
    return RowVectorXd(fx.eval(t, s) +
                       (x - fxr.eval_vec(t, s)).transpose() * fxx.eval_sym(t, s));
  };
  c.f_y = [fy, fyy, tt](int i, int j, const VectorXd&, const VectorXd& y,
                        const VectorXd&, const VectorXd&) {
    const double t = tt(i), s = tt(j);
    return RowVectorXd(fy.eval(t, s) + y.transpose() * fyy.eval_sym(t, s));
  };
  c.f_z = [fz, fzz, tt](int i, int j, const VectorXd&, const VectorXd&,
                        const VectorXd& z, const VectorXd&) {
    const double t = tt(i), s = tt(j);
    return RowVectorXd(fz.eval(t, s) + z.transpose() * fzz.eval_sym(t, s));
  };
  c.f_u = [fu, fuu, fur, tt](int i, int j, const VectorXd&, const VectorXd&,
                             const VectorXd&, const VectorXd& u) {
    const double t = tt(i), s = tt(j);
    return RowVectorXd(fu.eval(t, s) +
                       (u - fur.eval_vec(t, s)).transpose() * fuu.eval_sym(t, s));
  };

  return c;
}

double DerivativeReport::worst() const {
  double w = 0.0;
  for (const auto& [slot, err] : max_rel_error) {
    (void)slot;
    w = std::max(w, err);
  }
  return w;
}

DerivativeReport validate_derivatives(const CoefficientSet& c, int probes,
                                      double step, std::uint64_t seed) {
  if (!(step > 0.0)) throw std::invalid_argument("validate_derivatives: step must be > 0");
  DerivativeReport report;
  Rng rng(seed);
  auto& err = report.max_rel_error;
  for (const char* slot :
       {"b.x", "b.u", "sigma.x", "sigma.u", "g.xp", "g.x", "g.y", "g.z", "g.zp",
        "g.u", "psi.xp", "psi.x", "h.x", "h.y", "f.x", "f.y", "f.z", "f.u"}) {
    err[slot] = 0.0;
  }

  const int N = c.grid.steps;
  for (int p = 0; p < probes; ++p) {
    const int i = static_cast<int>((rng.uniform() + 1.0) * 0.5 * N);
    const int j = static_cast<int>((rng.uniform() + 1.0) * 0.5 * N);
    const VectorXd x = rng.vector(c.n), xp = rng.vector(c.n);
    const VectorXd y = rng.vector(c.m), z = rng.vector(c.m), zp = rng.vector(c.m);
    const VectorXd u = rng.vector(c.ell);

    auto central = [&](auto&& fn, const VectorXd& base, int dim) {
      MatrixXd jac(fn(base).size(), dim);
      for (int k = 0; k < dim; ++k) {
        VectorXd hi = base, lo = base;
        hi[k] += step;
        lo[k] -= step;
        jac.col(k) = (fn(hi) - fn(lo)) / (2.0 * step);
      }
      return jac;
    };
    auto track = [&](const std::string& slot, const MatrixXd& analytic,
                     const MatrixXd& numeric) {
      const double gap = (analytic - numeric).norm() / (1.0 + analytic.norm());
      err[slot] = std::max(err[slot], gap);
    };

    track("b.x", c.b_x(i, j, x, u),
          central([&](const VectorXd& v) { return c.b(i, j, v, u); }, x, c.n));
    track("b.u", c.b_u(i, j, x, u),
          central([&](const VectorXd& v) { return c.b(i, j, x, v); }, u, c.ell));
    track("sigma.x", c.sigma_x(i, j, x, u),
          central([&](const VectorXd& v) { return c.sigma(i, j, v, u); }, x, c.n));
    track("sigma.u", c.sigma_u(i, j, x, u),
          central([&](const VectorXd& v) { return c.sigma(i, j, x, v); }, u, c.ell));

    auto gwrap = [&](const VectorXd& axp, const VectorXd& ax, const VectorXd& ay,
                     const VectorXd& az, const VectorXd& azp, const VectorXd& au) {
      return c.g(i, j, axp, ax, ay, az, azp, au);
    };
    track("g.xp", c.g_xp(i, j, xp, x, y, z, zp, u),
          central([&](const VectorXd& v) { return gwrap(v, x, y, z, zp, u); }, xp, c.n));
    track("g.x", c.g_x(i, j, xp, x, y, z, zp, u),
          central([&](const VectorXd& v) { return gwrap(xp, v, y, z, zp, u); }, x, c.n));
    track("g.y", c.g_y(i, j, xp, x, y, z, zp, u),
          central([&](const VectorXd& v) { return gwrap(xp, x, v, z, zp, u); }, y, c.m));
    track("g.z", c.g_z(i, j, xp, x, y, z, zp, u),
          central([&](const VectorXd& v) { return gwrap(xp, x, y, v, zp, u); }, z, c.m));
    track("g.zp", c.g_zp(i, j, xp, x, y, z, zp, u),
          central([&](const VectorXd& v) { return gwrap(xp, x, y, z, v, u); }, zp, c.m));
    track("g.u", c.g_u(i, j, xp, x, y, z, zp, u),
          central([&](const VectorXd& v) { return gwrap(xp, x, y, z, zp, v); }, u, c.ell));

    track("psi.xp", c.psi_xp(i, xp, x),
          central([&](const VectorXd& v) { return c.psi(i, v, x); }, xp, c.n));
    track("psi.x", c.psi_x(i, xp, x),
          central([&](const VectorXd& v) { return c.psi(i, xp, v); }, x, c.n));

    auto scalar_central = [&](auto&& fn, const VectorXd& base, int dim) {
      RowVectorXd grad(dim);
      for (int k = 0; k < dim; ++k) {
        VectorXd hi = base, lo = base;
        hi[k] += step;
        lo[k] -= step;
        grad[k] = (fn(hi) - fn(lo)) / (2.0 * step);
      }
      return grad;
    };
    track("h.x", c.h_x(x, y),
          scalar_central([&](const VectorXd& v) { return c.h(v, y); }, x, c.n));
    track("h.y", c.h_y(x, y),
          scalar_central([&](const VectorXd& v) { return c.h(x, v); }, y, c.m));
    track("f.x", c.f_x(i, j, x, y, z, u),
          scalar_central([&](const VectorXd& v) { return c.f(i, j, v, y, z, u); }, x, c.n));
    track("f.y", c.f_y(i, j, x, y, z, u),
          scalar_central([&](const VectorXd& v) { return c.f(i, j, x, v, z, u); }, y, c.m));
    track("f.z", c.f_z(i, j, x, y, z, u),
          scalar_central([&](const VectorXd& v) { return c.f(i, j, x, y, v, u); }, z, c.m));
    track("f.u", c.f_u(i, j, x, y, z, u),
          scalar_central([&](const VectorXd& v) { return c.f(i, j, x, y, z, v); }, u, c.ell));
  }

  for (const auto& [slot, gap] : err) {
    (void)slot;
    if (gap > report.threshold) report.all_ok = false;
  }
  return report;
}

}  // namespace fbsvie
