#include "tic/feedback.hpp"

#include <algorithm>

namespace tic {

namespace {

struct ConstantImpl final : FeedbackControl::Impl {
  Vec u;
  void evaluate(double, ConstSpan, MutSpan out) const override { std::copy(u.begin(), u.end(), out.begin()); }
};

struct RuleImpl final : FeedbackControl::Impl {
  FeedbackControl::RuleFn fn;
  void evaluate(double t, ConstSpan x, MutSpan out) const override { fn(t, x, out); }
};

struct TableImpl final : FeedbackControl::Impl {
  GridFunction table;
  std::vector<std::size_t> state_axes;

  void evaluate(double t, ConstSpan x, MutSpan out) const override {
    const Lattice& lat = table.lattice();
    std::size_t f = lat.time_axis().floor_index(t) * lat.stride(0);
    for (std::size_t i = 0; i < state_axes.size(); ++i) {
      const std::size_t a = state_axes[i];
      f += lat.axes()[a].nearest(x[i]) * lat.stride(a);
    }
    for (std::size_t c = 0; c < table.arity(); ++c) out[c] = table.at(f, c);
  }
};

}  // namespace

FeedbackControl FeedbackControl::constant(Vec u) {
  if (u.empty()) throw DomainError("constant control needs dimension >= 1");
  auto impl = std::make_shared<ConstantImpl>();
  impl->u = u;
  FeedbackControl c = from_impl(Kind::Constant, u.size(), std::move(impl));
  c.constant_ = std::move(u);
  return c;
}

FeedbackControl FeedbackControl::rule(std::size_t dim, RuleFn fn) {
  if (dim == 0 || !fn) throw DomainError("rule control needs a map and dimension >= 1");
  auto impl = std::make_shared<RuleImpl>();
  impl->fn = std::move(fn);
  return from_impl(Kind::Rule, dim, std::move(impl));
}

FeedbackControl FeedbackControl::tabulated(GridFunction table) {
  const Lattice& lat = table.lattice();
  if (lat.has_ref_state() || lat.has_ref_time()) throw DomainError("control table must live on a (t, x) lattice");
  auto impl = std::make_shared<TableImpl>();
  impl->state_axes = lat.state_axes();
  const std::size_t k = table.arity();
  impl->table = std::move(table);
  return from_impl(Kind::Tabulated, k, std::move(impl));
}

FeedbackControl FeedbackControl::from_impl(Kind kind, std::size_t dim, std::shared_ptr<const Impl> impl) {
  FeedbackControl c;
  c.kind_ = kind;
  c.dim_ = dim;
  c.impl_ = std::move(impl);
  return c;
}

Vec FeedbackControl::operator()(double t, ConstSpan x) const {
  Vec u(dim_);
  impl_->evaluate(t, x, u);
  return u;
}

const GridFunction* FeedbackControl::table() const {
  if (kind_ != Kind::Tabulated) return nullptr;
  return &static_cast<const TableImpl&>(*impl_).table;
}

GridFunction tabulate_control(const FeedbackControl& law, const GridSpec& grid) {
  const Lattice lat = Lattice::tx(grid);
  const std::size_t n = grid.n();
  return tabulate(lat, law.dim(), [&](ConstSpan c, MutSpan out) { law.evaluate(c[0], c.subspan(1, n), out); });
}

}  // namespace tic
