#include "tic/equilibrium.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "tic/rng.hpp"

namespace tic {

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Pass: return "pass";
    case Verdict::Fail: return "fail";
    case Verdict::Inconclusive: return "inconclusive";
  }
  return "?";
}

void EquilibriumTestPlan::check(const ProblemSpec& spec) const {
  cfg.check(spec.horizon);
  if (points.empty()) throw DomainError("plan has no test points");
  if (deviations.empty()) throw DomainError("plan has no deviations");
  if (radii.empty()) throw DomainError("plan has no radii");
  if (h.empty()) throw DomainError("plan has no h values");
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (!(h[i] > 0.0)) throw DomainError("h values must be positive");
    if (i > 0 && !(h[i] < h[i - 1])) throw DomainError("h sequence must be strictly decreasing");
  }
  for (double r : radii) {
    if (!(r > 0.0)) throw DomainError("radii must be positive");
  }
  double tmax = 0.0;
  for (const auto& p : points) {
    if (p.x.size() != spec.n()) throw DomainError("test point has wrong state dimension");
    if (!(p.t >= 0.0 && p.t < spec.horizon)) throw DomainError("test point time must lie in [0, T)");
    tmax = std::max(tmax, p.t);
  }
  if (tmax + h.front() > spec.horizon * (1 + 1e-12)) throw DomainError("max(t) + max(h) exceeds the horizon");
  for (const auto& d : deviations) {
    if (d.control.dim() != spec.k()) throw DomainError("deviation '" + d.label + "' has wrong dimension");
    if (const auto& c = d.control.constant_value(); c && !spec.controls.contains(*c, 1e-12)) {
      throw DomainError("deviation '" + d.label + "' lies outside U");
    }
  }
  if (fail_margin < 0.0) throw DomainError("fail_margin must be >= 0");
}

AffineFit fit_affine(ConstSpan h, ConstSpan q, ConstSpan se) {
  AffineFit fit;
  const std::size_t m = h.size();
  if (m < 3 || q.size() != m || se.size() != m) return fit;
  const bool weighted = std::all_of(se.begin(), se.end(), [](double s) { return s > 0.0; });
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double w = weighted ? 1.0 / (se[i] * se[i]) : 1.0;
    sw += w;
    sx += w * h[i];
    sy += w * q[i];
    sxx += w * h[i] * h[i];
    sxy += w * h[i] * q[i];
  }
  const double det = sw * sxx - sx * sx;
  if (!(det > 0.0) || !std::isfinite(det)) return fit;
  fit.slope = (sw * sxy - sx * sy) / det;
  fit.intercept = (sy - fit.slope * sx) / sw;
  double chi2 = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double r = q[i] - fit.intercept - fit.slope * h[i];
    chi2 += weighted ? r * r / (se[i] * se[i]) : r * r;
  }
  // Weighted: covariance from the MC variances, inflated by the reduced
  // chi-square when the affine model fits worse than the noise allows.
  // Unweighted: residual variance estimate.
  const double red = chi2 / static_cast<double>(m - 2);
  const double scale = weighted ? std::max(1.0, red) : red;
  fit.intercept_stderr = std::sqrt(scale * sxx / det);
  fit.slope_stderr = std::sqrt(scale * sw / det);
  fit.weighted = weighted;
  fit.ok = true;
  return fit;
}

Estimate deviation_quotient(const ProblemSpec& spec, const FeedbackControl& base, const FeedbackControl& dev,
                            const TestPoint& point, double h, double radius, const SimConfig& cfg) {
  if (!(h > 0.0)) throw DomainError("h must be positive");
  if (point.t + h > spec.horizon * (1 + 1e-12)) throw DomainError("t + h exceeds the horizon");
  const FeedbackControl spike = spike_control(base, dev, point.t, h, radius, point.x);
  const PathSummary a = summarize_paths(spec, base, point.t, point.x, point.t, point.x, cfg);
  const PathSummary b = summarize_paths(spec, spike, point.t, point.x, point.t, point.x, cfg);
  Estimate e = paired_difference(spec, point.t, point.x, a, b, cfg);
  e.mean[0] /= h;
  e.stderr[0] /= h;
  return e;
}

std::uint64_t plan_seed(std::uint64_t seed, std::size_t point, std::size_t h_index) {
  return mix_seed(mix_seed(seed, point), h_index);
}

EquilibriumReport equilibrium_test(const ProblemSpec& spec, const FeedbackControl& base,
                                   const EquilibriumTestPlan& plan) {
  plan.check(spec);
  EquilibriumReport rep;
  rep.points = plan.points;
  for (const auto& d : plan.deviations) rep.deviations.push_back(d.label);
  rep.radii = plan.radii;
  rep.h = plan.h;
  rep.seed = plan.cfg.seed;
  rep.n_paths = plan.cfg.n_paths;
  rep.fail_margin = plan.fail_margin;

  const std::size_t nd = plan.deviations.size(), nr = plan.radii.size();
  for (std::size_t p = 0; p < plan.points.size(); ++p) {
    const TestPoint& pt = plan.points[p];
    std::vector<EquilibriumEntry> cell(nd * nr);
    for (std::size_t d = 0; d < nd; ++d) {
      for (std::size_t r = 0; r < nr; ++r) {
        cell[d * nr + r].point = p;
        cell[d * nr + r].deviation = d;
        cell[d * nr + r].radius = r;
      }
    }
    for (std::size_t hi = 0; hi < plan.h.size(); ++hi) {
      const double h = plan.h[hi];
      SimConfig cfg = plan.cfg;
      cfg.seed = plan_seed(plan.cfg.seed, p, hi);
      // The base run is shared by every deviation and radius of this cell.
      const PathSummary a = summarize_paths(spec, base, pt.t, pt.x, pt.t, pt.x, cfg);
      for (std::size_t d = 0; d < nd; ++d) {
        for (std::size_t r = 0; r < nr; ++r) {
          const FeedbackControl spike = spike_control(base, plan.deviations[d].control, pt.t, h, plan.radii[r], pt.x);
          const PathSummary b = summarize_paths(spec, spike, pt.t, pt.x, pt.t, pt.x, cfg);
          const Estimate e = paired_difference(spec, pt.t, pt.x, a, b, cfg);
          cell[d * nr + r].rows.push_back({h, e.value() / h, e.error() / h});
        }
      }
    }
    for (auto& entry : cell) {
      Vec hs, qs, ses;
      for (const auto& row : entry.rows) {
        hs.push_back(row.h);
        qs.push_back(row.quotient);
        ses.push_back(row.stderr);
      }
      entry.fit = fit_affine(hs, qs, ses);
      if (!entry.fit.ok) {
        entry.verdict = Verdict::Inconclusive;
      } else {
        entry.tol_stat = 3.0 * entry.fit.intercept_stderr;
        if (entry.fit.intercept >= -entry.tol_stat) {
          entry.verdict = Verdict::Pass;
        } else if (entry.fit.intercept < -entry.tol_stat - plan.fail_margin) {
          entry.verdict = Verdict::Fail;
        } else {
          entry.verdict = Verdict::Inconclusive;
        }
      }
      rep.entries.push_back(std::move(entry));
    }
  }
  bool any_fail = false, all_pass = true;
  for (const auto& e : rep.entries) {
    any_fail = any_fail || e.verdict == Verdict::Fail;
    all_pass = all_pass && e.verdict == Verdict::Pass;
  }
  rep.overall = any_fail ? Verdict::Fail : (all_pass ? Verdict::Pass : Verdict::Inconclusive);
  return rep;
}

void EquilibriumReport::write_csv(std::ostream& os) const {
  os << "point,t";
  const std::size_t n = points.empty() ? 0 : points.front().x.size();
  for (std::size_t i = 0; i < n; ++i) os << ",x" << (i + 1);
  os << ",deviation,radius,h,quotient,stderr,intercept,intercept_stderr,tol_stat,verdict\n";
  char buf[512];
  for (const auto& e : entries) {
    const TestPoint& p = points[e.point];
    for (const auto& row : e.rows) {
      os << e.point;
      std::snprintf(buf, sizeof buf, ",%.17g", p.t);
      os << buf;
      for (double xi : p.x) {
        std::snprintf(buf, sizeof buf, ",%.17g", xi);
        os << buf;
      }
      std::snprintf(buf, sizeof buf, ",%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%s\n",
                    deviations[e.deviation].c_str(), radii[e.radius], row.h, row.quotient, row.stderr,
                    e.fit.intercept, e.fit.intercept_stderr, e.tol_stat, to_string(e.verdict));
      os << buf;
    }
  }
}

}  // namespace tic
