#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "tic/feedback.hpp"
#include "tic/grid.hpp"
#include "tic/model.hpp"
#include "tic/operators.hpp"

namespace tic {

/**
 * (u, V, f, g) on a common space-time lattice.
 *
 * V and g live on Lattice::tx (g with arity n). f lives on Lattice::txy in
 * the basic case and on Lattice::txsy when the problem has a running payoff
 * or time-dependent F, G; in both cases the y (and s) axes coincide with the
 * x (and t) axes.
 */
struct CandidateQuadruple {
  FeedbackControl control;
  GridFunction V;
  GridFunction f;
  GridFunction g;

  GridSpec grid() const { return V.lattice().grid(); }
  // Throws DomainError when the four members do not fit together or `spec`.
  void check(const ProblemSpec& spec) const;
};

// Lattice f must use for `spec` on `grid`.
Lattice f_lattice(const ProblemSpec& spec, const GridSpec& grid);

// Reference (s, y) of a flat extra index of f; s is T in the basic case.
struct Reference {
  double s = 0.0;
  Vec y;
};
Reference reference_of(const Lattice& f_lat, std::size_t extra, double horizon);

struct StepResidual {
  double sup = 0.0;
  std::vector<std::size_t> argmax;  // indices into ControlSet::samples()
  std::vector<Vec> argmax_controls;
};

/**
 * Evaluates the HJB part of the extended system for one candidate. Caches
 * f(t, x, x) and G diamond g so repeated node queries stay cheap.
 */
class HjbEvaluator {
 public:
  HjbEvaluator(const CandidateQuadruple& cand, const ProblemSpec& spec);

  // Full bracket: A V - A f(t,x,x) + A f^x - A (G diamond g) + H_G g (+ H).
  double hamiltonian(ConstSpan u, std::size_t k, const XIndex& idx) const;
  // A f^x + H_G g (+ H); equals the full bracket when V = f(t,x,x) + G diamond g.
  double reduced_hamiltonian(ConstSpan u, std::size_t k, const XIndex& idx) const;
  // Max of the full bracket over the ControlSet samples.
  StepResidual step_residual(std::size_t k, const XIndex& idx, double tie_tolerance = 1e-9) const;

  const GridFunction& diagonal() const { return fbar_; }
  const GridFunction& diamond() const { return dg_; }

 private:
  struct Jets;
  Jets jets(std::size_t k, const XIndex& idx, bool full) const;
  double bracket(const Jets& j, ConstSpan u, std::size_t k, const XIndex& idx, bool full) const;

  const CandidateQuadruple& cand_;
  const ProblemSpec& spec_;
  GridFunction fbar_;
  GridFunction dg_;
};

double hamiltonian(const CandidateQuadruple& cand, const ProblemSpec& spec, ConstSpan u, double t, ConstSpan x);
StepResidual hjb_step_residual(const CandidateQuadruple& cand, const ProblemSpec& spec, double t, ConstSpan x,
                               double tie_tolerance = 1e-9);

struct KolmogorovResidual {
  GridFunction f;  // on the f lattice; 0 on the final time slice
  GridFunction g;  // on the (t, x) lattice, arity n
};

// A^u f^{s,y} (+ H(t, x, u, s, y)) and A^u g at every node before T, with
// u = cand.control(t_k, x).
KolmogorovResidual kolmogorov_residual(const CandidateQuadruple& cand, const ProblemSpec& spec);

struct ResidualThresholds {
  double boundary = 1e-8;
  double identity = 1e-8;
  double kolmogorov_f = 1e-8;
  double kolmogorov_g = 1e-8;
  double hjb = 1e-8;
  double tie_tolerance = 1e-9;
  // Nodes within `band` of the x truncation boundary are reported separately.
  std::size_t band = 2;
};

struct Norms {
  double sup = 0.0;
  double rms = 0.0;
  std::size_t count = 0;
};

struct NodeRef {
  std::size_t k = 0;
  XIndex idx{};
};

struct NamedCheck {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

struct ResidualReport {
  ResidualThresholds thresholds;
  std::vector<NamedCheck> boundary;  // terminal V, f, g and the V = f + G diamond g identity
  Norms kolmogorov_f, kolmogorov_g, hjb;
  Norms band_f, band_g, band_hjb;
  std::size_t argmax_violations = 0;
  std::vector<NodeRef> argmax_violation_nodes;  // first 100
  std::vector<NamedCheck> checks;               // every pass/fail decision

  bool pass() const;
};

ResidualReport residual_report(const CandidateQuadruple& cand, const ProblemSpec& spec, const GridSpec& grid,
                               const ResidualThresholds& thr = {});

struct SolverOptions {
  std::size_t max_outer_iters = 10;
  // Split each grid interval into substeps that satisfy the stability bound.
  bool auto_dt = false;
  double tie_tolerance = 1e-9;
  // A control change below this (max-norm) is not counted.
  double control_tolerance = 0.0;
  // Refuse to allocate more f values than this.
  std::size_t max_f_values = 250'000'000;
};

// Explicit stability bound min(dx)^2 / (n * max Gershgorin row sum of sigma sigma^T).
double stable_dt(const ProblemSpec& spec, const GridSpec& grid);

class CflViolation : public DomainError {
 public:
  CflViolation(double dt, double required)
      : DomainError("time step " + fmt(dt) + " violates the explicit stability bound; need dt <= " + fmt(required)),
        dt_(dt), required_(required) {}
  double dt() const { return dt_; }
  double required_dt() const { return required_; }

 private:
  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
  }
  double dt_, required_;
};

struct SweepRecord {
  std::size_t sweep = 0;
  std::size_t control_changes = 0;
  double f_residual_sup = 0.0, f_residual_rms = 0.0;
  double g_residual_sup = 0.0;
};

struct ConvergenceLog {
  std::vector<SweepRecord> sweeps;
  bool converged = false;
  std::size_t substeps = 1;
  double dt_grid = 0.0;
  double dt_stable = 0.0;
};

struct SolveResult {
  CandidateQuadruple candidate;
  GridFunction control;  // tabulated control, arity k
  ConvergenceLog log;
};

/**
 * Explicit backward march of the extended HJB system with outer policy
 * sweeps. Sweep 0 evaluates the constant minimal-norm control; each later
 * sweep picks, per slice and node, the sample maximizing the reduced
 * Hamiltonian built from next-slice values (ties within tie_tolerance go to
 * the minimal-norm sample) and stops when no node changes.
 * Throws CflViolation when the grid step is unstable and auto_dt is off.
 */
SolveResult solve_extended_hjb(const ProblemSpec& spec, const GridSpec& grid, const SolverOptions& opts = {});

// Kolmogorov march (f, g) under a fixed control; V = f(t,x,x) + G diamond g.
SolveResult evaluate_policy(const ProblemSpec& spec, const GridSpec& grid, const FeedbackControl& control,
                            const SolverOptions& opts = {});

struct StandardSolve {
  GridFunction value;    // (t, x)
  GridFunction control;  // (t, x), arity k
  std::size_t substeps = 1;
};

// Classical backward induction K_k = K_{k+1} + dt max_u L^u K_{k+1} with
// K(T, x) = F(T, x, x); same stencils and tie-break as the extended solver.
StandardSolve standard_hjb_solve(const ProblemSpec& spec, const GridSpec& grid, const SolverOptions& opts = {});

struct StandardResidualReport {
  GridFunction residual;  // sup_u A^u K at every node before T; 0 at T
  Norms interior;  // excludes the boundary band
  Norms all;
  double terminal = 0.0;  // max |K(T, x) - terminal(x)|, when a terminal map was given
  double threshold = 1e-8;
  bool pass() const { return interior.sup <= threshold && terminal <= threshold; }
};

using TerminalFn = std::function<double(ConstSpan x)>;
StandardResidualReport standard_hjb_residual(const GridFunction& value, const ProblemSpec& spec,
                                             const TerminalFn& terminal = {}, double threshold = 1e-8,
                                             std::size_t band = 2);

}  // namespace tic
