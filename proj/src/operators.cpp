#include "tic/operators.hpp"

#include <cmath>

namespace tic {

Stencil d1_stencil(std::size_t i, std::size_t count, double h) {
  Stencil s;
  s.size = 3;
  if (i > 0 && i + 1 < count) {
    s.offset = {-1, 0, 1, 0};
    s.weight = {-0.5 / h, 0.0, 0.5 / h, 0.0};
  } else if (i == 0) {
    s.offset = {0, 1, 2, 0};
    s.weight = {-1.5 / h, 2.0 / h, -0.5 / h, 0.0};
  } else {
    s.offset = {0, -1, -2, 0};
    s.weight = {1.5 / h, -2.0 / h, 0.5 / h, 0.0};
  }
  return s;
}

Stencil d2_stencil(std::size_t i, std::size_t count, double h) {
  Stencil s;
  const double h2 = h * h;
  if (i > 0 && i + 1 < count) {
    s.size = 3;
    s.offset = {-1, 0, 1, 0};
    s.weight = {1.0 / h2, -2.0 / h2, 1.0 / h2, 0.0};
    return s;
  }
  const int dir = i == 0 ? 1 : -1;
  if (count < 4) {
    s.size = 3;
    s.offset = {0, dir, 2 * dir, 0};
    s.weight = {1.0 / h2, -2.0 / h2, 1.0 / h2, 0.0};
    return s;
  }
  s.size = 4;
  s.offset = {0, dir, 2 * dir, 3 * dir};
  s.weight = {2.0 / h2, -5.0 / h2, 4.0 / h2, -1.0 / h2};
  return s;
}

TxView::TxView(const GridFunction& gf, std::size_t extra, std::size_t comp) : gf_(&gf), comp_(comp) {
  const Lattice& lat = gf.lattice();
  x_axes_ = lat.state_axes();
  if (x_axes_.empty() || x_axes_.size() > 2) throw DomainError("TxView needs 1 or 2 state axes");
  if (extra >= lat.extra_count()) throw DomainError("reference index out of range");
  if (comp >= gf.arity()) throw DomainError("component out of range");
  t_stride_ = lat.stride(0);
  base_ = extra * lat.x_block();
}

std::size_t x_flat(const TxView& v, const XIndex& idx) {
  std::size_t f = 0;
  for (std::size_t i = 0; i < v.n(); ++i) f += idx[i] * v.x_stride(i);
  return f;
}

Jet jet_at(const TxView& v, std::size_t k, const XIndex& idx) {
  const std::size_t n = v.n();
  Jet j;
  const std::size_t c = x_flat(v, idx);
  j.value = v.value(k, c);
  if (k + 1 < v.t_count()) {
    j.has_dt = true;
    j.dt = (v.value(k + 1, c) - j.value) / v.lattice().time_axis().step();
  }
  j.grad.assign(n, 0.0);
  j.hess.assign(n * n, 0.0);
  std::array<Stencil, 2> s1;
  for (std::size_t a = 0; a < n; ++a) {
    const Axis& ax = v.x_axis(a);
    const long stride = static_cast<long>(v.x_stride(a));
    s1[a] = d1_stencil(idx[a], ax.count, ax.step());
    const Stencil s2 = d2_stencil(idx[a], ax.count, ax.step());
    double g = 0.0, h = 0.0;
    for (int m = 0; m < s1[a].size; ++m) g += s1[a].weight[m] * v.value(k, c + s1[a].offset[m] * stride);
    for (int m = 0; m < s2.size; ++m) h += s2.weight[m] * v.value(k, c + s2.offset[m] * stride);
    j.grad[a] = g;
    j.hess[a * n + a] = h;
  }
  if (n == 2) {
    const long st0 = static_cast<long>(v.x_stride(0)), st1 = static_cast<long>(v.x_stride(1));
    double h01 = 0.0;
    for (int p = 0; p < s1[0].size; ++p) {
      for (int q = 0; q < s1[1].size; ++q) {
        h01 += s1[0].weight[p] * s1[1].weight[q] * v.value(k, c + s1[0].offset[p] * st0 + s1[1].offset[q] * st1);
      }
    }
    j.hess[1] = j.hess[2] = h01;
  }
  return j;
}

Coefficients coefficients(const DynamicsSpec& dyn, double t, ConstSpan x, ConstSpan u) {
  Coefficients c;
  c.mu.assign(dyn.dim_state, 0.0);
  dyn.drift(t, x, u, c.mu);
  c.a = diffusion_matrix(dyn, t, x, u);
  return c;
}

double spatial_generator(const Jet& j, const Coefficients& c) {
  const std::size_t n = j.grad.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += c.mu[i] * j.grad[i];
  double d = 0.0;
  for (std::size_t i = 0; i < n * n; ++i) d += c.a[i] * j.hess[i];
  return s + 0.5 * d;
}

double generator_from_jet(const Jet& j, const Coefficients& c) { return j.dt + spatial_generator(j, c); }

namespace {

Vec node_state(const TxView& v, const XIndex& idx) {
  Vec x(v.n());
  for (std::size_t i = 0; i < v.n(); ++i) x[i] = v.x_axis(i).node(idx[i]);
  return x;
}

void check_node(const Lattice& lat, std::size_t k, const XIndex& idx) {
  const auto sa = lat.state_axes();
  if (k >= lat.time_axis().count) throw DomainError("time index off lattice");
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (idx[i] >= lat.axes()[sa[i]].count) throw DomainError("state index off lattice");
  }
}

}  // namespace

double apply_generator(const TxView& h, ConstSpan u, const DynamicsSpec& dyn, std::size_t k, const XIndex& idx) {
  check_node(h.lattice(), k, idx);
  if (k + 1 >= h.t_count()) throw DomainError("generator needs a node before the final time");
  const Jet j = jet_at(h, k, idx);
  const Vec x = node_state(h, idx);
  return generator_from_jet(j, coefficients(dyn, h.lattice().time_axis().node(k), x, u));
}

std::pair<std::size_t, XIndex> locate_node(const Lattice& lat, double t, ConstSpan x) {
  const auto sa = lat.state_axes();
  if (x.size() != sa.size()) throw DomainError("state dimension mismatch");
  auto k = lat.time_axis().locate(t);
  if (!k) throw DomainError("time is off the lattice");
  XIndex idx{};
  for (std::size_t i = 0; i < sa.size(); ++i) {
    auto xi = lat.axes()[sa[i]].locate(x[i]);
    if (!xi) throw DomainError("state is off the lattice");
    idx[i] = *xi;
  }
  return {*k, idx};
}

double apply_generator(const TxView& h, ConstSpan u, const DynamicsSpec& dyn, double t, ConstSpan x) {
  auto [k, idx] = locate_node(h.lattice(), t, x);
  return apply_generator(h, u, dyn, k, idx);
}

double h_operator(const PayoffSpec& payoffs, const GridFunction& g, ConstSpan u, const DynamicsSpec& dyn,
                  std::size_t k, const XIndex& idx) {
  if (!payoffs.has_gradient()) throw UnsupportedOperation("H-operator needs the gradient G_y");
  const std::size_t n = g.lattice().n_state();
  if (g.arity() != n) throw DomainError("g must have arity n");
  check_node(g.lattice(), k, idx);
  const TxView v0(g, 0, 0);
  const Vec x = node_state(v0, idx);
  const std::size_t c = x_flat(v0, idx);
  Vec gval(n), gy(n);
  for (std::size_t i = 0; i < n; ++i) gval[i] = TxView(g, 0, i).value(k, c);
  const double t = g.lattice().time_axis().node(k);
  payoffs.aggregator_grad(t, x, gval, gy);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (gy[i] == 0.0) continue;
    s += gy[i] * apply_generator(TxView(g, 0, i), u, dyn, k, idx);
  }
  return s;
}

double h_operator(const PayoffSpec& payoffs, const GridFunction& g, ConstSpan u, const DynamicsSpec& dyn, double t,
                  ConstSpan x) {
  auto [k, idx] = locate_node(g.lattice(), t, x);
  return h_operator(payoffs, g, u, dyn, k, idx);
}

double diamond(const PayoffSpec& payoffs, const GridFunction& g, std::size_t k, const XIndex& idx) {
  const std::size_t n = g.lattice().n_state();
  if (g.arity() != n) throw DomainError("g must have arity n");
  check_node(g.lattice(), k, idx);
  const TxView v0(g, 0, 0);
  const Vec x = node_state(v0, idx);
  const std::size_t c = x_flat(v0, idx);
  Vec gval(n);
  for (std::size_t i = 0; i < n; ++i) gval[i] = TxView(g, 0, i).value(k, c);
  return payoffs.aggregator(g.lattice().time_axis().node(k), x, gval);
}

double diamond(const PayoffSpec& payoffs, const GridFunction& g, double t, ConstSpan x) {
  auto [k, idx] = locate_node(g.lattice(), t, x);
  return diamond(payoffs, g, k, idx);
}

GridFunction diamond_grid(const PayoffSpec& payoffs, const GridFunction& g) {
  const Lattice& lat = g.lattice();
  const std::size_t n = lat.n_state();
  if (g.arity() != n || lat.has_ref_state() || lat.has_ref_time()) throw DomainError("g must be an n-vector on (t, x)");
  GridFunction out(lat, 1);
  const std::size_t nx = lat.x_block();
  Vec gval(n);
  for (std::size_t f = 0; f < lat.size(); ++f) {
    const Vec c = lat.coords(f);
    for (std::size_t i = 0; i < n; ++i) gval[i] = g.at(f, i);
    out.at(f) = payoffs.aggregator(c[0], ConstSpan(c).subspan(1, n), gval);
  }
  (void)nx;
  return out;
}

std::size_t diagonal_extra(const Lattice& f_lat, std::size_t k, std::size_t xflat) {
  const std::size_t nx = f_lat.x_block();
  return f_lat.has_ref_time() ? k * nx + xflat : xflat;
}

GridFunction restrict_to_diagonal(const GridFunction& f) {
  const Lattice& lat = f.lattice();
  if (!lat.has_ref_state()) throw DomainError("f has no y axes to restrict");
  const auto xs = lat.state_axes();
  const auto ys = lat.ref_state_axes();
  if (xs.size() != ys.size()) throw DomainError("x and y dimensions differ");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!(lat.axes()[xs[i]] == lat.axes()[ys[i]])) throw DomainError("x and y lattices differ");
  }
  if (auto s = lat.ref_time_axis(); s && !(lat.axes()[*s] == lat.time_axis())) {
    throw DomainError("s and t lattices differ");
  }
  const Lattice out_lat = Lattice::tx(lat.grid());
  GridFunction out(out_lat, f.arity());
  const std::size_t nt = lat.time_axis().count, nx = lat.x_block();
  for (std::size_t k = 0; k < nt; ++k) {
    for (std::size_t c = 0; c < nx; ++c) {
      const std::size_t src = k * lat.stride(0) + diagonal_extra(lat, k, c) * nx + c;
      for (std::size_t a = 0; a < f.arity(); ++a) out.at(k * nx + c, a) = f.at(src, a);
    }
  }
  return out;
}

}  // namespace tic
