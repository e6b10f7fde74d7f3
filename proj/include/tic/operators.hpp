#pragma once

#include <array>

#include "tic/common.hpp"
#include "tic/grid.hpp"
#include "tic/model.hpp"

namespace tic {

/// Finite-difference weights around a node: central in the interior,
/// second-order one-sided at the truncation boundary.
struct Stencil {
  std::array<int, 4> offset{};
  std::array<double, 4> weight{};
  int size = 0;
};

Stencil d1_stencil(std::size_t i, std::size_t count, double h);
Stencil d2_stencil(std::size_t i, std::size_t count, double h);

/// A (t, x) function inside a GridFunction: the (s, y) reference and the
/// component are frozen.
class TxView {
 public:
  TxView(const GridFunction& gf, std::size_t extra = 0, std::size_t comp = 0);

  const GridFunction& function() const { return *gf_; }
  const Lattice& lattice() const { return gf_->lattice(); }
  std::size_t n() const { return x_axes_.size(); }
  std::size_t t_count() const { return lattice().time_axis().count; }
  const Axis& x_axis(std::size_t i) const { return lattice().axes()[x_axes_[i]]; }
  std::size_t x_stride(std::size_t i) const { return lattice().stride(x_axes_[i]); }

  double value(std::size_t k, std::size_t xflat) const {
    return gf_->values()[(k * t_stride_ + base_ + xflat) * gf_->arity() + comp_];
  }

 private:
  const GridFunction* gf_;
  std::vector<std::size_t> x_axes_;
  std::size_t t_stride_ = 0;
  std::size_t base_ = 0;
  std::size_t comp_ = 0;
};

/// Derivatives of a (t, x) function at one node.
struct Jet {
  double value = 0.0;
  double dt = 0.0;  // forward difference; valid iff has_dt
  bool has_dt = false;
  Vec grad;  // n
  Vec hess;  // n x n, row-major
};

// Multi-index of a node inside the x-block.
using XIndex = std::array<std::size_t, 2>;

std::size_t x_flat(const TxView& v, const XIndex& idx);
Jet jet_at(const TxView& v, std::size_t k, const XIndex& idx);

struct Coefficients {
  Vec mu;  // n
  Vec a;   // sigma sigma^T, n x n
};
Coefficients coefficients(const DynamicsSpec& dyn, double t, ConstSpan x, ConstSpan u);

// mu . grad + 1/2 a : hess
double spatial_generator(const Jet& j, const Coefficients& c);
// dt + spatial part
double generator_from_jet(const Jet& j, const Coefficients& c);

/**
 * A^u h at lattice node (k, idx): forward difference in t, central
 * differences in x, one-sided at the x boundary. Throws DomainError at the
 * final time node.
 */
double apply_generator(const TxView& h, ConstSpan u, const DynamicsSpec& dyn, std::size_t k, const XIndex& idx);
// Same, located by coordinates; throws DomainError when (t, x) is off-lattice.
double apply_generator(const TxView& h, ConstSpan u, const DynamicsSpec& dyn, double t, ConstSpan x);

// (k, idx) of an on-lattice point; DomainError otherwise.
std::pair<std::size_t, XIndex> locate_node(const Lattice& lat, double t, ConstSpan x);

/// H_G^u g = G_y(t, x, g(t, x)) . A^u g(t, x); g is a (t, x) function of arity n.
double h_operator(const PayoffSpec& payoffs, const GridFunction& g, ConstSpan u, const DynamicsSpec& dyn,
                  std::size_t k, const XIndex& idx);
double h_operator(const PayoffSpec& payoffs, const GridFunction& g, ConstSpan u, const DynamicsSpec& dyn, double t,
                  ConstSpan x);

/// G diamond g (t, x) = G(t, x, g(t, x)).
double diamond(const PayoffSpec& payoffs, const GridFunction& g, std::size_t k, const XIndex& idx);
double diamond(const PayoffSpec& payoffs, const GridFunction& g, double t, ConstSpan x);
GridFunction diamond_grid(const PayoffSpec& payoffs, const GridFunction& g);

/// f(t, x, x) (or f(t, x, t, x) when f carries a reference time axis),
/// tabulated on the (t, x) lattice. Requires y and x lattices to coincide.
GridFunction restrict_to_diagonal(const GridFunction& f);

// Flat (s, y) reference index of f^{t_k, x} for the node idx (s omitted when
// f has no reference-time axis).
std::size_t diagonal_extra(const Lattice& f_lat, std::size_t k, std::size_t xflat);

}  // namespace tic
