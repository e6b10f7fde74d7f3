#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"
#include "tic/equilibrium.hpp"
#include "tic/hjbx.hpp"
#include "tic/model.hpp"
#include "tic/sde.hpp"

namespace tic {

// mu = -|u|^2 (n = 1), sigma constant; declared bounds a^2, sigma, floor sigma^2.
DynamicsSpec regulator_dynamics(double sigma, double a);

/// mu = A x + B u + Q (u o u) + c, sigma = S (constant). Matrices row-major.
struct AffineDynamicsParams {
  std::size_t n = 1, k = 1, d = 1;
  Vec A, B, Q, c, S;
};
DynamicsSpec affine_dynamics(const AffineDynamicsParams& p);

/**
 * q(s, x, y) = (x'P x + y'Q y + x'R y + p.x + q.y + c) exp(-rho (T - s)).
 * Used for both F and G; the gradient in y is exact.
 */
struct QuadraticForm {
  std::size_t n = 1;
  Vec P, Q, R, p, q;
  double c = 0.0;
  double rho = 0.0;
  double horizon = 1.0;

  static QuadraticForm zero(std::size_t n);
  static QuadraticForm squared_distance(std::size_t n);
  PayoffFn value() const;
  PayoffGradFn gradient_y() const;
};

// H(r, x, u, s, y) = -(alpha |u|^2 + beta |x - y|^2) exp(-rho (r - s)).
RunningFn quadratic_running(double alpha, double beta, double rho);

struct ControlSpec {
  std::optional<Vec> constant;
  std::optional<std::string> table;  // CSV of a tabulated control
};

struct StartSpec {
  double t = 0.0;
  Vec x;
};

struct EquilibriumConfig {
  ControlSpec base;
  std::vector<TestPoint> points;
  std::vector<Vec> deviations;
  Vec h;
  Vec radii;
  SimConfig sim;
  double fail_margin = 0.0;
};

/// Parsed run configuration. Unknown keys are rejected.
struct RunConfig {
  nlohmann::json raw;
  ProblemSpec problem;
  std::optional<GridSpec> grid;
  SolverOptions solver;
  ResidualThresholds residual;
  SimConfig sim;
  std::optional<StartSpec> start;
  ControlSpec sim_control;
  std::optional<EquilibriumConfig> equilibrium;
  std::size_t probes = 1000;
  std::optional<ProbeBox> probe_box;
  std::uint64_t seed = 0;
  std::string output;
};

// Throws InputError with a JSON-pointer location on any schema violation.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

// FNV-1a 64 over the compact dump of the parsed tree, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

// Materialize a control spec for `problem` on an optional grid.
FeedbackControl make_control(const ControlSpec& spec, const ProblemSpec& problem);

// The regulator preset as a config tree (a=1, sigma=0.5, T=1, x0=0).
nlohmann::json regulator_preset();

}  // namespace tic
