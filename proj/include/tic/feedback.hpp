#pragma once

#include <functional>
#include <memory>
#include <optional>

#include "tic/common.hpp"
#include "tic/grid.hpp"

namespace tic {

/**
 * Markovian feedback law (t, x) -> u. Immutable; copies share state.
 *
 * Tabulated laws use nearest-node lookup in x (values stay inside finite
 * control sets) and are right-continuous in t: on [t_k, t_{k+1}) the value
 * of node t_k is used.
 */
class FeedbackControl {
 public:
  enum class Kind { Constant, Rule, Tabulated, Spike };

  struct Impl {
    virtual ~Impl() = default;
    virtual void evaluate(double t, ConstSpan x, MutSpan u) const = 0;
  };

  using RuleFn = std::function<void(double t, ConstSpan x, MutSpan u)>;

  static FeedbackControl constant(Vec u);
  static FeedbackControl rule(std::size_t dim, RuleFn fn);
  // Table over Lattice::tx with arity = control dimension.
  static FeedbackControl tabulated(GridFunction table);
  static FeedbackControl from_impl(Kind kind, std::size_t dim, std::shared_ptr<const Impl> impl);

  Kind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }

  void evaluate(double t, ConstSpan x, MutSpan u) const { impl_->evaluate(t, x, u); }
  Vec operator()(double t, ConstSpan x) const;

  const std::optional<Vec>& constant_value() const { return constant_; }
  const GridFunction* table() const;

 private:
  Kind kind_ = Kind::Constant;
  std::size_t dim_ = 0;
  std::shared_ptr<const Impl> impl_;
  std::optional<Vec> constant_;
};

// Tabulate `law` on the (t, x) lattice of `grid`.
GridFunction tabulate_control(const FeedbackControl& law, const GridSpec& grid);

}  // namespace tic
