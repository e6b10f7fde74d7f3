#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tic/common.hpp"

namespace tic {

/**
 * Compact control set U, either an interval box or an explicit point list.
 *
 * An interval box is discretized with `resolution` points per dimension
 * (endpoints included, so every vertex is a sample). A box with lo > hi is
 * representable; validate_problem reports it as a compactness violation.
 */
class ControlSet {
 public:
  enum class Kind { IntervalBox, FiniteSet };

  static ControlSet interval_box(Vec lo, Vec hi, std::size_t resolution);
  static ControlSet finite_set(std::vector<Vec> points);

  Kind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }
  const Vec& lo() const { return lo_; }
  const Vec& hi() const { return hi_; }
  std::size_t resolution() const { return resolution_; }

  // Sample points in tie-break order: smallest Euclidean norm first, then
  // lexicographic. Empty when the box is not compact.
  const std::vector<Vec>& samples() const { return samples_; }
  const Vec& minimal_norm_element() const;

  bool contains(ConstSpan u, double tol = 1e-12) const;
  std::optional<std::string> compactness_violation() const;

 private:
  Kind kind_ = Kind::IntervalBox;
  std::size_t dim_ = 0;
  Vec lo_, hi_;
  std::size_t resolution_ = 0;
  std::vector<Vec> points_;
  std::vector<Vec> samples_;

  void build_samples();
};

// mu(t, x, u) -> n-vector
using DriftFn = std::function<void(double t, ConstSpan x, ConstSpan u, MutSpan mu)>;
// sigma(t, x, u) -> n x d matrix, row-major
using DiffusionFn = std::function<void(double t, ConstSpan x, ConstSpan u, MutSpan sigma)>;

struct DynamicsSpec {
  std::size_t dim_state = 1;  // n
  std::size_t dim_noise = 1;  // d
  DriftFn drift;
  DiffusionFn diffusion;
  // User-asserted metadata; spot-checked by validate_problem.
  double drift_bound = 0.0;      // sup |mu|
  double diffusion_bound = 0.0;  // sup |sigma| (Frobenius)
  double ellipticity_floor = 0.0;
  // True when sigma does not depend on x (enables exact path-pairing checks).
  bool state_independent_diffusion = false;
};

using PayoffFn = std::function<double(double s, ConstSpan x, ConstSpan y)>;
using PayoffGradFn = std::function<void(double s, ConstSpan x, ConstSpan y, MutSpan grad)>;
using RunningFn =
    std::function<double(double r, ConstSpan x, ConstSpan u, double s, ConstSpan y)>;

struct GrowthBound {
  Vec y;
  double c0 = 0.0;  // |F(x, y)| <= c0 (1 + |x|^2)
};

struct PayoffSpec {
  PayoffFn terminal;       // F(s, x, y)
  PayoffFn aggregator;     // G(s, x, y)
  PayoffGradFn aggregator_grad;  // G_y; may be empty
  std::optional<RunningFn> running;  // H(r, x, u, s, y)
  // F or G depend on their time argument.
  bool time_dependent = false;
  std::vector<GrowthBound> growth;

  bool has_gradient() const { return static_cast<bool>(aggregator_grad); }
};

struct ProblemSpec {
  std::string name;
  DynamicsSpec dynamics;
  ControlSet controls;
  PayoffSpec payoffs;
  double horizon = 1.0;

  std::size_t n() const { return dynamics.dim_state; }
  std::size_t k() const { return controls.dim(); }
  // Running payoff or time-dependent F/G: f carries an (s, y) reference.
  bool general_case() const { return payoffs.running.has_value() || payoffs.time_dependent; }

  // Throws InputError on structural inconsistency (missing maps, dimension
  // mismatch, T <= 0).
  void check_structure() const;
};

enum class CheckStatus { Pass, Fail, Unevaluable, Skipped };
const char* to_string(CheckStatus s);

struct AssumptionCheck {
  std::string name;
  CheckStatus status = CheckStatus::Skipped;
  double worst = 0.0;      // worst observed statistic
  double threshold = 0.0;  // value it was compared against
  std::string detail;
};

struct ValidationReport {
  std::size_t probes = 0;
  std::uint64_t seed = 0;
  std::vector<AssumptionCheck> checks;

  bool all_pass() const;
  const AssumptionCheck* find(const std::string& name) const;
};

struct ProbeBox {
  Vec lo, hi;
};

/**
 * Spot-checks the standing assumptions (compact U, bounded mu and sigma,
 * ellipticity floor, G_y against central differences, optional growth of F)
 * at `probes` pseudorandom (t, x, u, y) points. Deterministic for a fixed
 * seed. A user map that throws or returns non-finite values marks its check
 * as Unevaluable.
 */
ValidationReport validate_problem(const ProblemSpec& spec, std::size_t probes, std::uint64_t seed,
                                  std::optional<ProbeBox> box = std::nullopt);

struct ValueTerms {
  double F = 0.0;
  double G = 0.0;
  Vec Gy;
  std::optional<double> H;
};

// Point evaluation of every payoff ingredient. Throws DomainError if u is
// outside U or t, s outside [0, T].
ValueTerms evaluate_value_terms(const ProblemSpec& spec, double t, ConstSpan x, ConstSpan y,
                                double s, ConstSpan u);

// sigma sigma^T at (t, x, u), n x n row-major.
Vec diffusion_matrix(const DynamicsSpec& dyn, double t, ConstSpan x, ConstSpan u);

}  // namespace tic
