#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>

#include "tic/common.hpp"
#include "tic/feedback.hpp"
#include "tic/model.hpp"

namespace tic {

struct SimConfig {
  std::size_t n_paths = 10000;
  double dt = 1e-3;
  std::uint64_t seed = 0;
  // Paths 2q and 2q+1 share noise with opposite sign; needs even n_paths.
  bool antithetic = false;

  // Throws DomainError if the config cannot be used with this horizon.
  void check(double horizon) const;
};

// A path produced a non-finite state.
class SimulationError : public std::runtime_error {
 public:
  SimulationError(std::size_t path, double t, const std::string& what)
      : std::runtime_error(what), path_(path), t_(t) {}
  std::size_t path() const { return path_; }
  double time() const { return t_; }

 private:
  std::size_t path_;
  double t_;
};

// Time nodes t0, t0+dt, ..., T; the last step is shortened so T is hit exactly.
Vec time_nodes(double t0, double horizon, double dt);

struct ExitWatch {
  Vec center;
  double radius = 1.0;
};

/// Simulated trajectories. states is n_paths x (steps+1) x n, path-major.
struct PathBatch {
  double t0 = 0.0;
  Vec x0;
  Vec times;
  std::size_t n_paths = 0;
  std::size_t n = 0;
  Vec states;
  // First step index at which the path is outside the watched ball; -1 if
  // never (or no watch requested).
  std::vector<long> exit_step;

  std::size_t steps() const { return times.size() - 1; }
  double state(std::size_t path, std::size_t step, std::size_t i = 0) const {
    return states[(path * times.size() + step) * n + i];
  }
  void write_csv(std::ostream& os) const;
};

struct Estimate {
  Vec mean;
  Vec stderr;
  std::size_t n_paths = 0;
  std::uint64_t seed = 0;

  double value() const { return mean.at(0); }
  double error() const { return stderr.at(0); }
};

/**
 * Euler-Maruyama with the control frozen at each step's left endpoint.
 * Path p draws its normals from stream (seed, p) (antithetic: stream p/2,
 * sign flipped on odd p), so results do not depend on the worker count.
 */
PathBatch simulate_paths(const ProblemSpec& spec, const FeedbackControl& control, double t, ConstSpan x,
                         const SimConfig& cfg, const std::optional<ExitWatch>& watch = std::nullopt);

// Per-path terminal data: F(s, X_T, y) plus the left-endpoint integral of
// H(r, X_r, u_r, s, y) when H is present, and X_T.
struct PathSummary {
  std::size_t n = 0;
  Vec payoff;    // n_paths
  Vec terminal;  // n_paths x n
};

PathSummary summarize_paths(const ProblemSpec& spec, const FeedbackControl& control, double t, ConstSpan x, double s,
                            ConstSpan y, const SimConfig& cfg);

// f_u(t, x, s, y); the basic case ignores s.
Estimate estimate_f(const ProblemSpec& spec, const FeedbackControl& control, double t, ConstSpan x, double s,
                    ConstSpan y, const SimConfig& cfg);
// g_u(t, x) = E[X_T], one component per state dimension.
Estimate estimate_g(const ProblemSpec& spec, const FeedbackControl& control, double t, ConstSpan x,
                    const SimConfig& cfg);
// J(t, x, u) = f_u(t, x, t, x) + G(t, x, g_u(t, x)); delta-method stderr.
Estimate estimate_J(const ProblemSpec& spec, const FeedbackControl& control, double t, ConstSpan x,
                    const SimConfig& cfg);

// Mean and stderr of a scalar sample (pair averages when antithetic).
Estimate sample_estimate(ConstSpan values, bool antithetic);

// J(t, x, a) - J(t, x, b) from two summaries drawn with the same streams.
Estimate paired_difference(const ProblemSpec& spec, double t, ConstSpan x, const PathSummary& a,
                           const PathSummary& b, const SimConfig& cfg);

/**
 * The control equal to `dev` on [t, t+h) x B[center] (closed ball) and to
 * `base` elsewhere. Time membership uses a 1e-9 tolerance so left endpoints
 * of a time grid that hit t or t+h land on the intended side.
 */
FeedbackControl spike_control(const FeedbackControl& base, const FeedbackControl& dev, double t, double h,
                              double radius, ConstSpan center);

}  // namespace tic
