#include "tic/regulator.hpp"

#include <cmath>

#include "tic/registry.hpp"

namespace tic {

void RegulatorParams::check() const {
  if (!(a >= 0.0) || !std::isfinite(a)) throw DomainError("regulator: a must be >= 0");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw DomainError("regulator: sigma must be >= 0");
  if (!(T > 0.0) || !std::isfinite(T)) throw DomainError("regulator: T must be > 0");
  if (!std::isfinite(x0)) throw DomainError("regulator: x0 must be finite");
  if (resolution < 2) throw DomainError("regulator: resolution must be >= 2");
}

ProblemSpec regulator_problem(const RegulatorParams& p) {
  p.check();
  ProblemSpec spec;
  spec.name = "regulator";
  spec.horizon = p.T;
  spec.dynamics = regulator_dynamics(p.sigma, p.a);
  spec.controls = ControlSet::interval_box({-p.a}, {p.a}, p.resolution);
  QuadraticForm F = QuadraticForm::squared_distance(1);
  F.horizon = p.T;
  QuadraticForm G = QuadraticForm::zero(1);
  G.horizon = p.T;
  spec.payoffs.terminal = F.value();
  spec.payoffs.aggregator = G.value();
  spec.payoffs.aggregator_grad = G.gradient_y();
  // (x - y)^2 <= (2 + 2 y^2)(1 + x^2)
  spec.payoffs.growth = {{{0.0}, 2.0}, {{1.0}, 4.0}, {{-2.0}, 10.0}};
  return spec;
}

double RegulatorClosedForm::V(double t, double) const { return params.sigma * params.sigma * (params.T - t); }

double RegulatorClosedForm::f(double t, double x, double y) const {
  return (x - y) * (x - y) + params.sigma * params.sigma * (params.T - t);
}

double RegulatorClosedForm::g(double, double x) const { return x; }

RegulatorClosedForm regulator_closed_form(const RegulatorParams& p) {
  p.check();
  return RegulatorClosedForm{p, FeedbackControl::constant({0.0})};
}

CandidateQuadruple RegulatorClosedForm::on_grid(const GridSpec& grid) const {
  if (grid.n() != 1) throw DomainError("the regulator is one-dimensional");
  CandidateQuadruple c;
  c.control = control;
  c.V = tabulate(Lattice::tx(grid), 1, [&](ConstSpan z, MutSpan out) { out[0] = V(z[0], z[1]); });
  c.g = tabulate(Lattice::tx(grid), 1, [&](ConstSpan z, MutSpan out) { out[0] = g(z[0], z[1]); });
  // txy coordinates come in storage order (t, y, x).
  c.f = tabulate(Lattice::txy(grid), 1, [&](ConstSpan z, MutSpan out) { out[0] = f(z[0], z[2], z[1]); });
  return c;
}

ConstantControlValues constant_control_values(const RegulatorParams& p, double u, double t, double x, double y) {
  p.check();
  if (std::abs(u) > p.a * (1 + 1e-12)) throw DomainError("control outside [-a, a]");
  const double drift = u * u * (p.T - t);
  const double var = p.sigma * p.sigma * (p.T - t);
  ConstantControlValues v;
  v.g = x - drift;
  v.f = (x - drift - y) * (x - drift - y) + var;
  v.J = drift * drift + var;
  return v;
}

double time_consistent_value(const RegulatorParams& p, double t, double x) {
  return (x - p.x0) * (x - p.x0) + p.sigma * p.sigma * (p.T - t);
}

CounterexampleReport counterexample_check(const RegulatorParams& p, const GridSpec& grid) {
  const ProblemSpec spec = regulator_problem(p);
  const GridFunction K =
      tabulate(Lattice::tx(grid), 1, [&](ConstSpan z, MutSpan out) { out[0] = time_consistent_value(p, z[0], z[1]); });
  CounterexampleReport rep;
  rep.standard = standard_hjb_residual(K, spec, [&](ConstSpan x) { return (x[0] - p.x0) * (x[0] - p.x0); });
  rep.extended = residual_report(regulator_closed_form(p).on_grid(grid), spec, grid);
  return rep;
}

}  // namespace tic
