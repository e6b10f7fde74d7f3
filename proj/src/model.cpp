#include "tic/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "tic/rng.hpp"

namespace tic {

double norm2(ConstSpan v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(ConstSpan a, ConstSpan b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// ---------------------------------------------------------------- ControlSet

ControlSet ControlSet::interval_box(Vec lo, Vec hi, std::size_t resolution) {
  if (lo.empty() || lo.size() != hi.size()) {
    throw InputError("", "control box needs matching, non-empty lo/hi");
  }
  ControlSet cs;
  cs.kind_ = Kind::IntervalBox;
  cs.dim_ = lo.size();
  cs.lo_ = std::move(lo);
  cs.hi_ = std::move(hi);
  cs.resolution_ = resolution;
  cs.build_samples();
  return cs;
}

ControlSet ControlSet::finite_set(std::vector<Vec> points) {
  if (points.empty()) throw InputError("", "finite control set is empty");
  const std::size_t k = points.front().size();
  if (k == 0) throw InputError("", "control points must have dimension >= 1");
  for (const auto& p : points) {
    if (p.size() != k) throw InputError("", "control points differ in dimension");
  }
  ControlSet cs;
  cs.kind_ = Kind::FiniteSet;
  cs.dim_ = k;
  cs.points_ = std::move(points);
  cs.lo_.assign(k, std::numeric_limits<double>::infinity());
  cs.hi_.assign(k, -std::numeric_limits<double>::infinity());
  for (const auto& p : cs.points_) {
    for (std::size_t j = 0; j < k; ++j) {
      cs.lo_[j] = std::min(cs.lo_[j], p[j]);
      cs.hi_[j] = std::max(cs.hi_[j], p[j]);
    }
  }
  cs.build_samples();
  return cs;
}

void ControlSet::build_samples() {
  samples_.clear();
  if (kind_ == Kind::FiniteSet) {
    samples_ = points_;
  } else {
    if (compactness_violation()) return;
    const std::size_t m = std::max<std::size_t>(resolution_, 1);
    std::vector<Vec> axes(dim_);
    for (std::size_t j = 0; j < dim_; ++j) {
      if (lo_[j] == hi_[j] || m == 1) {
        axes[j] = {lo_[j] == hi_[j] ? lo_[j] : 0.5 * (lo_[j] + hi_[j])};
        continue;
      }
      for (std::size_t i = 0; i < m; ++i) {
        double v = lo_[j] + (hi_[j] - lo_[j]) * static_cast<double>(i) / static_cast<double>(m - 1);
        if (i == m - 1) v = hi_[j];
        axes[j].push_back(v);
      }
      // Symmetric boxes: snap the midpoint to an exact zero.
      for (double& v : axes[j]) {
        if (std::abs(v) < 1e-14 * (hi_[j] - lo_[j])) v = 0.0;
      }
    }
    std::vector<std::size_t> idx(dim_, 0);
    while (true) {
      Vec u(dim_);
      for (std::size_t j = 0; j < dim_; ++j) u[j] = axes[j][idx[j]];
      samples_.push_back(std::move(u));
      std::size_t j = 0;
      while (j < dim_ && ++idx[j] == axes[j].size()) idx[j++] = 0;
      if (j == dim_) break;
    }
  }
  std::stable_sort(samples_.begin(), samples_.end(), [](const Vec& a, const Vec& b) {
    const double na = norm2(a), nb = norm2(b);
    if (na != nb) return na < nb;
    return a < b;
  });
  samples_.erase(std::unique(samples_.begin(), samples_.end()), samples_.end());
}

const Vec& ControlSet::minimal_norm_element() const {
  if (samples_.empty()) throw DomainError("control set has no admissible points");
  return samples_.front();
}

bool ControlSet::contains(ConstSpan u, double tol) const {
  if (u.size() != dim_) return false;
  if (kind_ == Kind::FiniteSet) {
    for (const auto& p : points_) {
      bool eq = true;
      for (std::size_t j = 0; j < dim_ && eq; ++j) eq = std::abs(p[j] - u[j]) <= tol * (1.0 + std::abs(p[j]));
      if (eq) return true;
    }
    return false;
  }
  for (std::size_t j = 0; j < dim_; ++j) {
    const double slack = tol * (1.0 + std::abs(lo_[j]) + std::abs(hi_[j]));
    if (u[j] < lo_[j] - slack || u[j] > hi_[j] + slack) return false;
  }
  return true;
}

std::optional<std::string> ControlSet::compactness_violation() const {
  if (kind_ == Kind::FiniteSet) return std::nullopt;
  for (std::size_t j = 0; j < dim_; ++j) {
    if (!std::isfinite(lo_[j]) || !std::isfinite(hi_[j])) {
      return "control interval " + std::to_string(j) + " has a non-finite endpoint";
    }
    if (lo_[j] > hi_[j]) {
      std::ostringstream os;
      os << "control interval " << j << " has lo > hi (" << lo_[j] << " > " << hi_[j] << ")";
      return os.str();
    }
  }
  if (resolution_ < 2) {
    bool degenerate = true;
    for (std::size_t j = 0; j < dim_; ++j) degenerate = degenerate && lo_[j] == hi_[j];
    if (!degenerate) return "control resolution must be >= 2 for a non-degenerate box";
  }
  return std::nullopt;
}

// --------------------------------------------------------------- ProblemSpec

void ProblemSpec::check_structure() const {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InputError("/horizon", "horizon must be positive");
  if (dynamics.dim_state == 0 || dynamics.dim_noise == 0) {
    throw InputError("/dynamics", "state and noise dimensions must be positive");
  }
  if (!dynamics.drift || !dynamics.diffusion) throw InputError("/dynamics", "drift and diffusion maps are required");
  if (!payoffs.terminal || !payoffs.aggregator) throw InputError("/payoffs", "F and G maps are required");
  if (controls.dim() == 0) throw InputError("/controls", "control set has dimension 0");
}

const char* to_string(CheckStatus s) {
  switch (s) {
    case CheckStatus::Pass: return "pass";
    case CheckStatus::Fail: return "fail";
    case CheckStatus::Unevaluable: return "unevaluable";
    case CheckStatus::Skipped: return "skipped";
  }
  return "?";
}

bool ValidationReport::all_pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const AssumptionCheck& c) {
    return c.status == CheckStatus::Pass || c.status == CheckStatus::Skipped;
  });
}

const AssumptionCheck* ValidationReport::find(const std::string& name) const {
  for (const auto& c : checks) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

Vec diffusion_matrix(const DynamicsSpec& dyn, double t, ConstSpan x, ConstSpan u) {
  const std::size_t n = dyn.dim_state, d = dyn.dim_noise;
  Vec sig(n * d);
  dyn.diffusion(t, x, u, sig);
  Vec a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t l = 0; l < d; ++l) s += sig[i * d + l] * sig[j * d + l];
      a[i * n + j] = s;
    }
  }
  return a;
}

namespace {

struct Probe {
  double t;
  double s;
  Vec x, y, u;
};

Vec sample_control(const ControlSet& cs, std::mt19937_64& rng) {
  const auto& samples = cs.samples();
  if (cs.kind() == ControlSet::Kind::FiniteSet) {
    std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
    return samples[pick(rng)];
  }
  Vec u(cs.dim());
  for (std::size_t j = 0; j < cs.dim(); ++j) {
    std::uniform_real_distribution<double> d(cs.lo()[j], cs.hi()[j]);
    u[j] = cs.lo()[j] == cs.hi()[j] ? cs.lo()[j] : d(rng);
  }
  return u;
}

// Run `body` and convert exceptions / non-finite results into Unevaluable.
template <typename Body>
bool guarded(AssumptionCheck& check, Body&& body) {
  try {
    if (!body()) {
      check.status = CheckStatus::Unevaluable;
      check.detail = "non-finite evaluation";
      return false;
    }
  } catch (const std::exception& e) {
    check.status = CheckStatus::Unevaluable;
    check.detail = std::string("evaluation failed: ") + e.what();
    return false;
  }
  return true;
}

bool all_finite(ConstSpan v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

ValidationReport validate_problem(const ProblemSpec& spec, std::size_t probes, std::uint64_t seed,
                                  std::optional<ProbeBox> box) {
  ValidationReport rep;
  rep.probes = probes;
  rep.seed = seed;
  const std::size_t n = spec.n(), d = spec.dynamics.dim_noise;

  AssumptionCheck compact{"control_set_compact", CheckStatus::Pass, 0.0, 0.0, ""};
  if (auto why = spec.controls.compactness_violation()) {
    compact.status = CheckStatus::Fail;
    compact.detail = *why;
  }
  rep.checks.push_back(compact);

  ProbeBox pb = box.value_or(ProbeBox{Vec(n, -5.0), Vec(n, 5.0)});
  std::mt19937_64 rng(mix_seed(seed, 0));
  std::vector<Probe> pts;
  const bool can_sample_u = compact.status == CheckStatus::Pass && !spec.controls.samples().empty();
  // Sample points of U are probed too so every vertex of a box is covered.
  const auto& usamples = spec.controls.samples();
  for (std::size_t p = 0; p < probes; ++p) {
    Probe q;
    std::uniform_real_distribution<double> ut(0.0, spec.horizon);
    q.t = ut(rng);
    q.s = ut(rng);
    q.x.resize(n);
    q.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_real_distribution<double> ux(pb.lo[i], pb.hi[i]);
      q.x[i] = ux(rng);
      q.y[i] = ux(rng);
    }
    if (can_sample_u) {
      q.u = (p % 2 == 1) ? usamples[(p / 2) % usamples.size()] : sample_control(spec.controls, rng);
    }
    pts.push_back(std::move(q));
  }

  AssumptionCheck drift{"drift_bounded", CheckStatus::Pass, 0.0, spec.dynamics.drift_bound, ""};
  AssumptionCheck diff{"diffusion_bounded", CheckStatus::Pass, 0.0, spec.dynamics.diffusion_bound, ""};
  AssumptionCheck ell{"ellipticity", CheckStatus::Pass, std::numeric_limits<double>::infinity(),
                      spec.dynamics.ellipticity_floor, ""};
  if (!can_sample_u) {
    for (auto* c : {&drift, &diff, &ell}) {
      c->status = CheckStatus::Skipped;
      c->detail = "control set has no admissible points";
    }
  } else {
    if (!(spec.dynamics.ellipticity_floor > 0.0)) {
      ell.status = CheckStatus::Fail;
      ell.detail = "declared ellipticity floor must be positive";
    }
    Vec mu(n), sig(n * d);
    for (const auto& q : pts) {
      if (drift.status == CheckStatus::Pass || drift.status == CheckStatus::Fail) {
        guarded(drift, [&] {
          spec.dynamics.drift(q.t, q.x, q.u, mu);
          if (!all_finite(mu)) return false;
          drift.worst = std::max(drift.worst, norm2(mu));
          return true;
        });
      }
      if (diff.status == CheckStatus::Pass || diff.status == CheckStatus::Fail) {
        guarded(diff, [&] {
          spec.dynamics.diffusion(q.t, q.x, q.u, sig);
          if (!all_finite(sig)) return false;
          diff.worst = std::max(diff.worst, norm2(sig));
          return true;
        });
      }
      if (ell.status != CheckStatus::Unevaluable) {
        guarded(ell, [&] {
          Vec a = diffusion_matrix(spec.dynamics, q.t, q.x, q.u);
          if (!all_finite(a)) return false;
          Eigen::Map<const Eigen::MatrixXd> A(a.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
          Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
          ell.worst = std::min(ell.worst, es.eigenvalues().minCoeff());
          return true;
        });
      }
    }
    const double rel = 1e-12;
    if (drift.status == CheckStatus::Pass && drift.worst > drift.threshold * (1 + rel) + rel) {
      drift.status = CheckStatus::Fail;
      drift.detail = "observed |mu| exceeds declared bound";
    }
    if (diff.status == CheckStatus::Pass && diff.worst > diff.threshold * (1 + rel) + rel) {
      diff.status = CheckStatus::Fail;
      diff.detail = "observed |sigma| exceeds declared bound";
    }
    if (ell.status == CheckStatus::Pass && ell.worst < ell.threshold * (1 - rel)) {
      ell.status = CheckStatus::Fail;
      ell.detail = "min eigenvalue of sigma sigma^T below declared floor";
    }
  }
  rep.checks.push_back(drift);
  rep.checks.push_back(diff);
  rep.checks.push_back(ell);

  AssumptionCheck grad{"aggregator_gradient", CheckStatus::Pass, 0.0, 1e-5, ""};
  if (!spec.payoffs.has_gradient()) {
    grad.status = CheckStatus::Skipped;
    grad.detail = "no G_y declared";
  } else {
    Vec gy(n), yp, ym;
    for (const auto& q : pts) {
      const bool ok = guarded(grad, [&] {
        spec.payoffs.aggregator_grad(q.s, q.x, q.y, gy);
        if (!all_finite(gy)) return false;
        for (std::size_t j = 0; j < n; ++j) {
          const double h = 1e-5 * std::max(1.0, std::abs(q.y[j]));
          yp = q.y;
          ym = q.y;
          yp[j] += h;
          ym[j] -= h;
          const double fd = (spec.payoffs.aggregator(q.s, q.x, yp) - spec.payoffs.aggregator(q.s, q.x, ym)) /
                            (yp[j] - ym[j]);
          if (!std::isfinite(fd)) return false;
          grad.worst = std::max(grad.worst, std::abs(gy[j] - fd) / std::max(1.0, std::abs(fd)));
        }
        return true;
      });
      if (!ok) break;
    }
    if (grad.status == CheckStatus::Pass && grad.worst > grad.threshold) {
      grad.status = CheckStatus::Fail;
      grad.detail = "G_y disagrees with central differences of G";
    }
  }
  rep.checks.push_back(grad);

  AssumptionCheck growth{"terminal_growth", CheckStatus::Pass, 0.0, 1.0, ""};
  if (spec.payoffs.growth.empty()) {
    growth.status = CheckStatus::Skipped;
    growth.detail = "no C0 declared";
  } else {
    for (const auto& gb : spec.payoffs.growth) {
      if (gb.y.size() != n) {
        growth.status = CheckStatus::Fail;
        growth.detail = "growth reference y has wrong dimension";
        break;
      }
      for (const auto& q : pts) {
        const bool ok = guarded(growth, [&] {
          const double F = spec.payoffs.terminal(q.s, q.x, gb.y);
          if (!std::isfinite(F)) return false;
          const double nx = norm2(q.x);
          growth.worst = std::max(growth.worst, std::abs(F) / (gb.c0 * (1.0 + nx * nx)));
          return true;
        });
        if (!ok) break;
      }
    }
    if (growth.status == CheckStatus::Pass && growth.worst > 1.0 + 1e-12) {
      growth.status = CheckStatus::Fail;
      growth.detail = "|F| exceeds C0 (1 + |x|^2)";
    }
  }
  rep.checks.push_back(growth);
  return rep;
}

ValueTerms evaluate_value_terms(const ProblemSpec& spec, double t, ConstSpan x, ConstSpan y, double s,
                                ConstSpan u) {
  const double T = spec.horizon;
  const double tt = 1e-12 * std::max(1.0, T);
  if (t < -tt || t > T + tt || s < -tt || s > T + tt) throw DomainError("t and s must lie in [0, T]");
  if (x.size() != spec.n() || y.size() != spec.n()) throw DomainError("state dimension mismatch");
  if (!spec.controls.contains(u)) throw DomainError("control value outside U");
  ValueTerms v;
  v.F = spec.payoffs.terminal(s, x, y);
  v.G = spec.payoffs.aggregator(s, x, y);
  v.Gy.assign(spec.n(), 0.0);
  if (spec.payoffs.has_gradient()) spec.payoffs.aggregator_grad(s, x, y, v.Gy);
  if (spec.payoffs.running) v.H = (*spec.payoffs.running)(t, x, u, s, y);
  return v;
}

}  // namespace tic
