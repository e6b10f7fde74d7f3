#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "tic/sde.hpp"

namespace tic {

struct TestPoint {
  double t = 0.0;
  Vec x;
};

struct Deviation {
  std::string label;
  FeedbackControl control;
};

/// Quantifier grid of the spike test: points x deviations x radii x h.
struct EquilibriumTestPlan {
  std::vector<TestPoint> points;
  std::vector<Deviation> deviations;
  Vec h;  // strictly decreasing
  Vec radii;
  SimConfig cfg;
  // Extra distance below -tol_stat required for a fail verdict.
  double fail_margin = 0.0;

  // Throws DomainError when the plan violates its invariants for `spec`.
  void check(const ProblemSpec& spec) const;
};

enum class Verdict { Pass, Fail, Inconclusive };
const char* to_string(Verdict v);

struct AffineFit {
  bool ok = false;
  bool weighted = false;  // false: ordinary least squares (some stderr was 0)
  double intercept = 0.0, slope = 0.0;
  double intercept_stderr = 0.0, slope_stderr = 0.0;
};

// q(h) = intercept + slope h by least squares with weights 1/se^2. Falls back
// to OLS with the residual variance when any se is 0. Needs >= 3 points.
AffineFit fit_affine(ConstSpan h, ConstSpan q, ConstSpan se);

struct QuotientRow {
  double h = 0.0;
  double quotient = 0.0;
  double stderr = 0.0;
};

struct EquilibriumEntry {
  std::size_t point = 0, deviation = 0, radius = 0;
  std::vector<QuotientRow> rows;
  AffineFit fit;
  double tol_stat = 0.0;
  Verdict verdict = Verdict::Inconclusive;
};

struct EquilibriumReport {
  std::vector<TestPoint> points;
  std::vector<std::string> deviations;
  Vec radii;
  Vec h;
  std::uint64_t seed = 0;
  std::size_t n_paths = 0;
  double fail_margin = 0.0;
  std::vector<EquilibriumEntry> entries;
  Verdict overall = Verdict::Inconclusive;

  // One row per (point, deviation, radius, h).
  void write_csv(std::ostream& os) const;
};

/**
 * (J(base) - J(spike)) / h at (t, x), where the spike applies `dev` on
 * [t, t+h) x B[x, radius]. Both values use the same per-path streams, so the
 * stderr reflects only the spike.
 */
Estimate deviation_quotient(const ProblemSpec& spec, const FeedbackControl& base, const FeedbackControl& dev,
                            const TestPoint& point, double h, double radius, const SimConfig& cfg);

// Stream seed of plan cell (point, h): shared by all deviations and radii.
std::uint64_t plan_seed(std::uint64_t seed, std::size_t point, std::size_t h_index);

EquilibriumReport equilibrium_test(const ProblemSpec& spec, const FeedbackControl& base,
                                   const EquilibriumTestPlan& plan);

}  // namespace tic
