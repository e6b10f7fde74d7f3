#pragma once

#include <functional>

#include "tic/hjbx.hpp"
#include "tic/model.hpp"

namespace tic {

/// Time-inconsistent quadratic regulator: n = 1, U = [-a, a], mu = -u^2,
/// constant sigma, F(x, y) = (x - y)^2, G = H = 0.
struct RegulatorParams {
  double a = 1.0;
  double sigma = 0.5;
  double T = 1.0;
  double x0 = 0.0;
  std::size_t resolution = 41;

  // a >= 0 (a = 0 gives U = {0}), sigma >= 0, T > 0, x0 finite.
  void check() const;
};

ProblemSpec regulator_problem(const RegulatorParams& p);

/// Closed-form equilibrium: u = 0, V = sigma^2 (T - t),
/// f = (x - y)^2 + sigma^2 (T - t), g = x.
struct RegulatorClosedForm {
  RegulatorParams params;
  FeedbackControl control;
  double V(double t, double x) const;
  double f(double t, double x, double y) const;
  double g(double t, double x) const;

  // Tabulated on `grid` (y lattice = x lattice).
  CandidateQuadruple on_grid(const GridSpec& grid) const;
};

RegulatorClosedForm regulator_closed_form(const RegulatorParams& p);

struct ConstantControlValues {
  double f = 0.0, g = 0.0, J = 0.0;
};

// Exact Gaussian moments under the constant control u; DomainError if |u| > a.
ConstantControlValues constant_control_values(const RegulatorParams& p, double u, double t, double x, double y);

// K(t, x) = (x - x0)^2 + sigma^2 (T - t).
double time_consistent_value(const RegulatorParams& p, double t, double x);

struct CounterexampleReport {
  StandardResidualReport standard;  // K against the classical HJB
  ResidualReport extended;          // closed-form equilibrium against the extended system
  // Classical residual strictly positive somewhere while the extended check passes.
  bool reproduces() const { return standard.all.sup > standard.threshold && extended.pass(); }
};

CounterexampleReport counterexample_check(const RegulatorParams& p, const GridSpec& grid);

}  // namespace tic
