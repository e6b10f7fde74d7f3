#include "tic/sde.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>

#include "tic/parallel.hpp"
#include "tic/rng.hpp"

namespace tic {

void SimConfig::check(double horizon) const {
  if (n_paths < 2) throw DomainError("n_paths must be >= 2");
  if (antithetic && n_paths % 2 != 0) throw DomainError("antithetic sampling needs an even n_paths");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("dt must be positive");
  if (dt > horizon) throw DomainError("dt must not exceed the horizon");
}

Vec time_nodes(double t0, double horizon, double dt) {
  if (t0 > horizon) throw DomainError("start time after the horizon");
  Vec times{t0};
  const double span = horizon - t0;
  if (span <= 0.0) return times;
  const double ratio = span / dt;
  auto full = static_cast<std::size_t>(std::floor(ratio + 1e-9));
  for (std::size_t j = 1; j <= full; ++j) times.push_back(t0 + static_cast<double>(j) * dt);
  if (horizon - times.back() > 1e-9 * dt) {
    times.push_back(horizon);
  } else {
    times.back() = horizon;
  }
  return times;
}

namespace {

// One Euler-Maruyama trajectory with preallocated scratch space.
class Stepper {
 public:
  Stepper(const ProblemSpec& spec, const FeedbackControl& control, const Vec& times)
      : spec_(spec), control_(control), times_(times), n_(spec.n()), d_(spec.dynamics.dim_noise),
        u_(control.dim()), mu_(n_), sig_(n_ * d_), z_(d_) {}

  // on_step(j, x, u) is called before step j (and once more at the end with
  // j == steps and u unset). Returns the time at which the state first
  // became non-finite, if it did.
  template <typename OnStep>
  std::optional<double> run(std::uint64_t stream, bool flip, Vec& x, OnStep&& on_step) {
    Xoshiro256 rng(stream);
    std::normal_distribution<double> normal;
    const std::size_t steps = times_.size() - 1;
    for (std::size_t j = 0; j < steps; ++j) {
      const double t = times_[j], dt = times_[j + 1] - t, sq = std::sqrt(dt);
      control_.evaluate(t, x, u_);
      on_step(j, x, u_);
      spec_.dynamics.drift(t, x, u_, mu_);
      spec_.dynamics.diffusion(t, x, u_, sig_);
      for (std::size_t q = 0; q < d_; ++q) z_[q] = flip ? -normal(rng) : normal(rng);
      for (std::size_t i = 0; i < n_; ++i) {
        double dw = 0.0;
        for (std::size_t q = 0; q < d_; ++q) dw += sig_[i * d_ + q] * z_[q];
        x[i] += mu_[i] * dt + dw * sq;
        if (!std::isfinite(x[i])) return times_[j + 1];
      }
    }
    on_step(steps, x, u_);
    return std::nullopt;
  }

  const Vec& times() const { return times_; }

 private:
  const ProblemSpec& spec_;
  const FeedbackControl& control_;
  const Vec& times_;
  std::size_t n_, d_;
  Vec u_, mu_, sig_, z_;
};

std::uint64_t path_stream(const SimConfig& cfg, std::size_t p) {
  return mix_seed(cfg.seed, cfg.antithetic ? p / 2 : p);
}
bool path_flip(const SimConfig& cfg, std::size_t p) { return cfg.antithetic && p % 2 == 1; }

void check_start(const ProblemSpec& spec, const FeedbackControl& control, double t, ConstSpan x,
                 const SimConfig& cfg) {
  cfg.check(spec.horizon);
  if (x.size() != spec.n()) throw DomainError("start state has wrong dimension");
  if (control.dim() != spec.k()) throw DomainError("control has wrong dimension");
  if (t < 0.0 || t > spec.horizon) throw DomainError("start time outside [0, T]");
}

[[noreturn]] void throw_nonfinite(std::size_t p, double t) {
  throw SimulationError(p, t, "non-finite state on path " + std::to_string(p) + " near t=" + std::to_string(t));
}

}  // namespace

PathBatch simulate_paths(const ProblemSpec& spec, const FeedbackControl& control, double t, ConstSpan x,
                         const SimConfig& cfg, const std::optional<ExitWatch>& watch) {
  check_start(spec, control, t, x, cfg);
  if (!(t < spec.horizon)) throw DomainError("simulate_paths needs t < T");
  PathBatch b;
  b.t0 = t;
  b.x0.assign(x.begin(), x.end());
  b.times = time_nodes(t, spec.horizon, cfg.dt);
  b.n_paths = cfg.n_paths;
  b.n = spec.n();
  const std::size_t nt = b.times.size();
  b.states.assign(b.n_paths * nt * b.n, 0.0);
  b.exit_step.assign(b.n_paths, -1);
  parallel_for(b.n_paths, [&](std::size_t lo, std::size_t hi) {
    Stepper st(spec, control, b.times);
    Vec xs(b.n);
    for (std::size_t p = lo; p < hi; ++p) {
      xs = b.x0;
      double* row = &b.states[p * nt * b.n];
      long& exit = b.exit_step[p];
      auto rec = [&](std::size_t j, const Vec& xj, const Vec&) {
        std::copy(xj.begin(), xj.end(), row + j * b.n);
        if (watch && exit < 0) {
          double r2 = 0.0;
          for (std::size_t i = 0; i < b.n; ++i) r2 += (xj[i] - watch->center[i]) * (xj[i] - watch->center[i]);
          if (std::sqrt(r2) > watch->radius) exit = static_cast<long>(j);
        }
      };
      if (const auto bad = st.run(path_stream(cfg, p), path_flip(cfg, p), xs, rec)) throw_nonfinite(p, *bad);
    }
  });
  return b;
}

void PathBatch::write_csv(std::ostream& os) const {
  os << "path,step,t";
  for (std::size_t i = 0; i < n; ++i) os << ",x" << (i + 1);
  os << ",exit_step\n";
  char buf[64];
  for (std::size_t p = 0; p < n_paths; ++p) {
    for (std::size_t j = 0; j < times.size(); ++j) {
      os << p << ',' << j;
      std::snprintf(buf, sizeof buf, ",%.17g", times[j]);
      os << buf;
      for (std::size_t i = 0; i < n; ++i) {
        std::snprintf(buf, sizeof buf, ",%.17g", state(p, j, i));
        os << buf;
      }
      os << ',' << exit_step[p] << '\n';
    }
  }
}

PathSummary summarize_paths(const ProblemSpec& spec, const FeedbackControl& control, double t, ConstSpan x, double s,
                            ConstSpan y, const SimConfig& cfg) {
  check_start(spec, control, t, x, cfg);
  if (y.size() != spec.n()) throw DomainError("reference state has wrong dimension");
  const std::size_t n = spec.n();
  PathSummary out;
  out.n = n;
  out.payoff.assign(cfg.n_paths, 0.0);
  out.terminal.assign(cfg.n_paths * n, 0.0);
  const Vec times = time_nodes(t, spec.horizon, cfg.dt);
  const Vec x0(x.begin(), x.end());
  const auto& running = spec.payoffs.running;
  parallel_for(cfg.n_paths, [&](std::size_t lo, std::size_t hi) {
    Stepper st(spec, control, times);
    Vec xs(n);
    for (std::size_t p = lo; p < hi; ++p) {
      xs = x0;
      double integral = 0.0;
      auto acc = [&](std::size_t j, const Vec& xj, const Vec& uj) {
        if (running && j + 1 < times.size()) integral += (*running)(times[j], xj, uj, s, y) * (times[j + 1] - times[j]);
      };
      if (const auto bad = st.run(path_stream(cfg, p), path_flip(cfg, p), xs, acc)) throw_nonfinite(p, *bad);
      out.payoff[p] = spec.payoffs.terminal(s, xs, y) + integral;
      std::copy(xs.begin(), xs.end(), out.terminal.begin() + static_cast<long>(p * n));
    }
  });
  return out;
}

Estimate sample_estimate(ConstSpan values, bool antithetic) {
  Estimate e;
  e.n_paths = values.size();
  const std::size_t m = antithetic ? values.size() / 2 : values.size();
  auto sample = [&](std::size_t q) { return antithetic ? 0.5 * (values[2 * q] + values[2 * q + 1]) : values[q]; };
  double mean = 0.0;
  for (std::size_t q = 0; q < m; ++q) mean += sample(q);
  mean /= static_cast<double>(m);
  double ss = 0.0;
  for (std::size_t q = 0; q < m; ++q) {
    const double dv = sample(q) - mean;
    ss += dv * dv;
  }
  const double var = m > 1 ? ss / static_cast<double>(m - 1) : 0.0;
  e.mean = {mean};
  e.stderr = {std::sqrt(var / static_cast<double>(m))};
  return e;
}

namespace {

Vec column(const PathSummary& s, std::size_t i) {
  Vec c(s.payoff.size());
  for (std::size_t p = 0; p < c.size(); ++p) c[p] = s.terminal[p * s.n + i];
  return c;
}

Vec column_mean(const PathSummary& s) {
  Vec m(s.n, 0.0);
  const std::size_t np = s.payoff.size();
  for (std::size_t p = 0; p < np; ++p) {
    for (std::size_t i = 0; i < s.n; ++i) m[i] += s.terminal[p * s.n + i];
  }
  for (auto& v : m) v /= static_cast<double>(np);
  return m;
}

// G_y(t, x, ybar), falling back to central differences when no gradient map.
Vec aggregator_gradient(const PayoffSpec& pay, double t, ConstSpan x, const Vec& ybar) {
  Vec gy(ybar.size(), 0.0);
  if (pay.has_gradient()) {
    pay.aggregator_grad(t, x, ybar, gy);
    return gy;
  }
  Vec yp = ybar, ym = ybar;
  for (std::size_t i = 0; i < ybar.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(ybar[i]));
    yp[i] = ybar[i] + h;
    ym[i] = ybar[i] - h;
    gy[i] = (pay.aggregator(t, x, yp) - pay.aggregator(t, x, ym)) / (2 * h);
    yp[i] = ym[i] = ybar[i];
  }
  return gy;
}

}  // namespace

Estimate estimate_f(const ProblemSpec& spec, const FeedbackControl& control, double t, ConstSpan x, double s,
                    ConstSpan y, const SimConfig& cfg) {
  const PathSummary sum = summarize_paths(spec, control, t, x, s, y, cfg);
  Estimate e = sample_estimate(sum.payoff, cfg.antithetic);
  e.seed = cfg.seed;
  return e;
}

Estimate estimate_g(const ProblemSpec& spec, const FeedbackControl& control, double t, ConstSpan x,
                    const SimConfig& cfg) {
  const PathSummary sum = summarize_paths(spec, control, t, x, t, x, cfg);
  Estimate e;
  e.n_paths = cfg.n_paths;
  e.seed = cfg.seed;
  for (std::size_t i = 0; i < sum.n; ++i) {
    const Estimate c = sample_estimate(column(sum, i), cfg.antithetic);
    e.mean.push_back(c.value());
    e.stderr.push_back(c.error());
  }
  return e;
}

namespace {

// Delta-method influence values of J: F_p + G_y(t, x, gbar) . X_p.
Vec influence(const ProblemSpec& spec, double t, ConstSpan x, const PathSummary& s, const Vec& gbar) {
  const Vec gy = aggregator_gradient(spec.payoffs, t, x, gbar);
  Vec v = s.payoff;
  for (std::size_t p = 0; p < v.size(); ++p) {
    for (std::size_t i = 0; i < s.n; ++i) v[p] += gy[i] * s.terminal[p * s.n + i];
  }
  return v;
}

double mean_of(const Vec& v) {
  double m = 0.0;
  for (double a : v) m += a;
  return m / static_cast<double>(v.size());
}

}  // namespace

Estimate estimate_J(const ProblemSpec& spec, const FeedbackControl& control, double t, ConstSpan x,
                    const SimConfig& cfg) {
  const PathSummary sum = summarize_paths(spec, control, t, x, t, x, cfg);
  const Vec gbar = column_mean(sum);
  const Vec infl = influence(spec, t, x, sum, gbar);
  Estimate e = sample_estimate(infl, cfg.antithetic);
  e.mean = {mean_of(sum.payoff) + spec.payoffs.aggregator(t, x, gbar)};
  e.seed = cfg.seed;
  return e;
}

Estimate paired_difference(const ProblemSpec& spec, double t, ConstSpan x, const PathSummary& a,
                           const PathSummary& b, const SimConfig& cfg) {
  if (a.payoff.size() != b.payoff.size() || a.n != b.n) throw DomainError("summaries differ in shape");
  const Vec ga = column_mean(a), gb = column_mean(b);
  const Vec ia = influence(spec, t, x, a, ga), ib = influence(spec, t, x, b, gb);
  Vec d(ia.size()), fd(ia.size());
  for (std::size_t p = 0; p < d.size(); ++p) {
    d[p] = ia[p] - ib[p];
    fd[p] = a.payoff[p] - b.payoff[p];
  }
  Estimate e = sample_estimate(d, cfg.antithetic);
  e.mean = {mean_of(fd) + (spec.payoffs.aggregator(t, x, ga) - spec.payoffs.aggregator(t, x, gb))};
  e.seed = cfg.seed;
  return e;
}

namespace {

struct SpikeImpl final : FeedbackControl::Impl {
  FeedbackControl base, dev;
  double t0 = 0.0, h = 0.0, radius = 0.0;
  Vec center;

  void evaluate(double t, ConstSpan x, MutSpan u) const override {
    constexpr double tol = 1e-9;
    bool inside = t >= t0 - tol && t < t0 + h - tol;
    if (inside) {
      double r2 = 0.0;
      for (std::size_t i = 0; i < center.size(); ++i) r2 += (x[i] - center[i]) * (x[i] - center[i]);
      inside = std::sqrt(r2) <= radius;
    }
    (inside ? dev : base).evaluate(t, x, u);
  }
};

}  // namespace

FeedbackControl spike_control(const FeedbackControl& base, const FeedbackControl& dev, double t, double h,
                              double radius, ConstSpan center) {
  if (!(h > 0.0)) throw DomainError("spike duration h must be positive");
  if (!(radius > 0.0)) throw DomainError("spike radius must be positive");
  if (base.dim() != dev.dim()) throw DomainError("base and deviation differ in control dimension");
  auto impl = std::make_shared<SpikeImpl>();
  impl->base = base;
  impl->dev = dev;
  impl->t0 = t;
  impl->h = h;
  impl->radius = radius;
  impl->center.assign(center.begin(), center.end());
  return FeedbackControl::from_impl(FeedbackControl::Kind::Spike, base.dim(), std::move(impl));
}

}  // namespace tic
