#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tic/common.hpp"

namespace tic {

/// Uniform axis with `count` nodes from `min` to `max` inclusive.
struct Axis {
  double min = 0.0;
  double max = 1.0;
  std::size_t count = 3;

  double step() const { return (max - min) / static_cast<double>(count - 1); }
  double node(std::size_t i) const {
    return i + 1 == count ? max : min + static_cast<double>(i) * step();
  }
  Vec nodes() const;
  // Index of the node equal to v (relative tolerance on the step), if any.
  std::optional<std::size_t> locate(double v, double tol = 1e-9) const;
  // Nearest node index, clamped to the axis.
  std::size_t nearest(double v) const;
  // Right-continuous cell index: i with node(i) <= v < node(i+1), clamped.
  std::size_t floor_index(double v) const;

  static Axis from_nodes(const Vec& nodes, double rel_tol = 1e-9);
  void check(const std::string& what) const;
  bool operator==(const Axis& o) const = default;
};

/// Space-time lattice. The y axes (third argument of f) always share the x
/// lattice, so f(t, x, x) lands on nodes.
struct GridSpec {
  Axis t;
  std::vector<Axis> x;

  std::size_t n() const { return x.size(); }
  std::size_t x_nodes() const;
  double min_dx() const;
  void check() const;
  bool operator==(const GridSpec& o) const = default;
};

enum class AxisRole { Time, RefTime, RefState, State };

/// Rectangular lattice with axes stored slowest-first. Storage order is
/// t, [s], [y...], x..., so every fixed-(t, s, y) slice is one contiguous
/// x-block.
class Lattice {
 public:
  Lattice() = default;
  Lattice(std::vector<Axis> axes, std::vector<AxisRole> roles);

  static Lattice tx(const GridSpec& g);
  static Lattice txy(const GridSpec& g);
  static Lattice txsy(const GridSpec& g);

  const std::vector<Axis>& axes() const { return axes_; }
  const std::vector<AxisRole>& roles() const { return roles_; }
  std::size_t rank() const { return axes_.size(); }
  std::size_t size() const { return size_; }
  std::size_t stride(std::size_t axis) const { return strides_[axis]; }

  std::size_t n_state() const;
  bool has_ref_time() const;
  bool has_ref_state() const;
  const Axis& time_axis() const { return axes_.front(); }
  // Axis positions of the state dimensions, in order x1..xn.
  std::vector<std::size_t> state_axes() const;
  std::vector<std::size_t> ref_state_axes() const;
  std::optional<std::size_t> ref_time_axis() const;

  // Number of nodes in one x-block and number of (s, y) combinations.
  std::size_t x_block() const;
  std::size_t extra_count() const;

  std::size_t flat(const std::vector<std::size_t>& idx) const;
  std::vector<std::size_t> unflat(std::size_t flat) const;
  // Coordinate of every axis at a flat node index.
  Vec coords(std::size_t flat) const;
  // Conventional column names (t, x1.., s, y1..).
  std::vector<std::string> axis_names() const;

  GridSpec grid() const;
  bool operator==(const Lattice& o) const { return axes_ == o.axes_ && roles_ == o.roles_; }

 private:
  std::vector<Axis> axes_;
  std::vector<AxisRole> roles_;
  std::vector<std::size_t> strides_;
  std::size_t size_ = 0;
};

/// Values of a scalar or vector function on a lattice; multilinear
/// interpolation between nodes.
class GridFunction {
 public:
  GridFunction() = default;
  GridFunction(Lattice lattice, std::size_t arity, double fill = 0.0);
  GridFunction(Lattice lattice, std::size_t arity, Vec values);

  const Lattice& lattice() const { return lattice_; }
  std::size_t arity() const { return arity_; }
  const Vec& values() const { return values_; }
  Vec& values() { return values_; }

  double& at(std::size_t node, std::size_t comp = 0) { return values_[node * arity_ + comp]; }
  double at(std::size_t node, std::size_t comp = 0) const { return values_[node * arity_ + comp]; }

  // Multilinear interpolation; coordinates in storage-axis order. Points
  // outside the lattice are clamped to the boundary.
  Vec interpolate(ConstSpan coords) const;

  bool all_finite() const;

  void write_csv(std::ostream& os, const std::vector<std::string>& value_names = {}) const;
  void write_csv(const std::string& path, const std::vector<std::string>& value_names = {}) const;
  static GridFunction read_csv(std::istream& is, const std::string& source = "<csv>");
  static GridFunction read_csv(const std::string& path);

  void write_binary(std::ostream& os) const;
  void write_binary(const std::string& path) const;
  static GridFunction read_binary(std::istream& is);
  static GridFunction read_binary(const std::string& path);

  static constexpr std::uint32_t kBinaryVersion = 1;

 private:
  Lattice lattice_;
  std::size_t arity_ = 1;
  Vec values_;
};

// Tabulate fn(coords, out) at every lattice node.
template <typename Fn>
GridFunction tabulate(const Lattice& lat, std::size_t arity, Fn&& fn) {
  GridFunction gf(lat, arity);
  Vec out(arity);
  for (std::size_t i = 0; i < lat.size(); ++i) {
    const Vec c = lat.coords(i);
    fn(ConstSpan(c), MutSpan(out));
    for (std::size_t a = 0; a < arity; ++a) gf.at(i, a) = out[a];
  }
  return gf;
}

}  // namespace tic
