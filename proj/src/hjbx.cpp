#include "tic/hjbx.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tic/parallel.hpp"

namespace tic {

namespace {

// Geometry of one x-block: axes and within-block strides.
struct XGeometry {
  std::size_t n = 0;
  std::size_t block = 0;
  std::array<Axis, 2> axes{};
  std::array<std::size_t, 2> stride{};

  explicit XGeometry(const Lattice& lat) {
    const auto sa = lat.state_axes();
    n = sa.size();
    if (n == 0 || n > 2) throw DomainError("lattices support 1 or 2 state dimensions");
    block = lat.x_block();
    for (std::size_t i = 0; i < n; ++i) {
      axes[i] = lat.axes()[sa[i]];
      stride[i] = lat.stride(sa[i]);
    }
  }

  XIndex unflat(std::size_t c) const {
    XIndex idx{};
    for (std::size_t i = 0; i < n; ++i) idx[i] = (c / stride[i]) % axes[i].count;
    return idx;
  }
  void coords(std::size_t c, Vec& x) const {
    const XIndex idx = unflat(c);
    for (std::size_t i = 0; i < n; ++i) x[i] = axes[i].node(idx[i]);
  }
  bool in_band(const XIndex& idx, std::size_t band) const {
    for (std::size_t i = 0; i < n; ++i) {
      if (idx[i] < band || idx[i] + band >= axes[i].count) return true;
    }
    return false;
  }
};

// Spatial jet of one component of a node-major buffer (arity values per node).
Jet raw_jet(const double* data, std::size_t arity, std::size_t comp, std::size_t c, const XIndex& idx,
            const XGeometry& geo) {
  auto at = [&](long off) { return data[(static_cast<long>(c) + off) * static_cast<long>(arity) + static_cast<long>(comp)]; };
  Jet j;
  j.value = at(0);
  j.grad.assign(geo.n, 0.0);
  j.hess.assign(geo.n * geo.n, 0.0);
  std::array<Stencil, 2> s1;
  for (std::size_t a = 0; a < geo.n; ++a) {
    const long st = static_cast<long>(geo.stride[a]);
    s1[a] = d1_stencil(idx[a], geo.axes[a].count, geo.axes[a].step());
    const Stencil s2 = d2_stencil(idx[a], geo.axes[a].count, geo.axes[a].step());
    double g = 0.0, h = 0.0;
    for (int m = 0; m < s1[a].size; ++m) g += s1[a].weight[m] * at(s1[a].offset[m] * st);
    for (int m = 0; m < s2.size; ++m) h += s2.weight[m] * at(s2.offset[m] * st);
    j.grad[a] = g;
    j.hess[a * geo.n + a] = h;
  }
  if (geo.n == 2) {
    const long st0 = static_cast<long>(geo.stride[0]), st1 = static_cast<long>(geo.stride[1]);
    double h01 = 0.0;
    for (int p = 0; p < s1[0].size; ++p) {
      for (int q = 0; q < s1[1].size; ++q) {
        h01 += s1[0].weight[p] * s1[1].weight[q] * at(s1[0].offset[p] * st0 + s1[1].offset[q] * st1);
      }
    }
    j.hess[1] = j.hess[2] = h01;
  }
  return j;
}

// mu and sigma sigma^T without allocation.
struct CoefScratch {
  Coefficients c;
  Vec sigma;
  CoefScratch(std::size_t n, std::size_t d) : sigma(n * d) {
    c.mu.assign(n, 0.0);
    c.a.assign(n * n, 0.0);
  }
  const Coefficients& fill(const DynamicsSpec& dyn, double t, ConstSpan x, ConstSpan u) {
    const std::size_t n = dyn.dim_state, d = dyn.dim_noise;
    dyn.drift(t, x, u, c.mu);
    dyn.diffusion(t, x, u, sigma);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t q = 0; q < d; ++q) s += sigma[i * d + q] * sigma[j * d + q];
        c.a[i * n + j] = s;
      }
    }
    return c;
  }
};

// L^u at one node as a weighted sum of x-block neighbours.
struct NodeOperator {
  std::array<long, 32> off{};
  std::array<double, 32> w{};
  int size = 0;

  void build(const XGeometry& geo, const XIndex& idx, const Coefficients& c) {
    size = 0;
    std::array<Stencil, 2> s1;
    for (std::size_t a = 0; a < geo.n; ++a) {
      const long st = static_cast<long>(geo.stride[a]);
      s1[a] = d1_stencil(idx[a], geo.axes[a].count, geo.axes[a].step());
      const Stencil s2 = d2_stencil(idx[a], geo.axes[a].count, geo.axes[a].step());
      for (int m = 0; m < s1[a].size; ++m) add(s1[a].offset[m] * st, c.mu[a] * s1[a].weight[m]);
      for (int m = 0; m < s2.size; ++m) add(s2.offset[m] * st, 0.5 * c.a[a * geo.n + a] * s2.weight[m]);
    }
    if (geo.n == 2) {
      const long st0 = static_cast<long>(geo.stride[0]), st1 = static_cast<long>(geo.stride[1]);
      const double a01 = 0.5 * (c.a[1] + c.a[2]);
      for (int p = 0; p < s1[0].size; ++p) {
        for (int q = 0; q < s1[1].size; ++q) {
          add(s1[0].offset[p] * st0 + s1[1].offset[q] * st1, a01 * s1[0].weight[p] * s1[1].weight[q]);
        }
      }
    }
  }
  void add(long o, double weight) {
    off[size] = o;
    w[size] = weight;
    ++size;
  }
  // Applied to component `comp` of a node-major buffer.
  double apply(const double* data, std::size_t c, std::size_t arity = 1, std::size_t comp = 0) const {
    double s = 0.0;
    const long base = static_cast<long>(c);
    for (int m = 0; m < size; ++m) {
      s += w[m] * data[(base + off[m]) * static_cast<long>(arity) + static_cast<long>(comp)];
    }
    return s;
  }
};

std::size_t extra_for_diag(const Lattice& f_lat, std::size_t k, std::size_t c) { return diagonal_extra(f_lat, k, c); }

void accumulate(Norms& n, double v) {
  const double a = std::abs(v);
  n.sup = std::max(n.sup, std::isnan(a) ? std::numeric_limits<double>::infinity() : a);
  n.rms += v * v;
  ++n.count;
}
void finish(Norms& n) { n.rms = n.count ? std::sqrt(n.rms / static_cast<double>(n.count)) : 0.0; }

}  // namespace

Lattice f_lattice(const ProblemSpec& spec, const GridSpec& grid) {
  return spec.general_case() ? Lattice::txsy(grid) : Lattice::txy(grid);
}

Reference reference_of(const Lattice& f_lat, std::size_t extra, double horizon) {
  const XGeometry geo(f_lat);
  Reference r;
  r.y.assign(geo.n, 0.0);
  std::size_t yflat = extra;
  r.s = horizon;
  if (f_lat.has_ref_time()) {
    const auto s_axis = *f_lat.ref_time_axis();
    r.s = f_lat.axes()[s_axis].node(extra / geo.block);
    yflat = extra % geo.block;
  }
  geo.coords(yflat, r.y);
  return r;
}

void CandidateQuadruple::check(const ProblemSpec& spec) const {
  const Lattice& vl = V.lattice();
  if (vl.has_ref_state() || vl.has_ref_time() || V.arity() != 1) throw DomainError("V must be a scalar (t, x) function");
  if (vl.n_state() != spec.n()) throw DomainError("V has the wrong state dimension");
  if (!(g.lattice() == vl) || g.arity() != spec.n()) throw DomainError("g must share V's lattice with arity n");
  if (!(f.lattice() == f_lattice(spec, vl.grid())) || f.arity() != 1) {
    throw DomainError("f lattice does not match the (t, x) lattice of V");
  }
  if (control.dim() != spec.k()) throw DomainError("control has the wrong dimension");
  if (std::abs(vl.time_axis().max - spec.horizon) > 1e-12 * std::max(1.0, spec.horizon)) {
    throw DomainError("time axis must end at the horizon");
  }
}

// ---------------------------------------------------------------------------
// HJB part

struct HjbEvaluator::Jets {
  double t = 0.0;
  Vec x;
  Jet V, fbar, fx, dg;
  std::vector<Jet> g;
  Vec gy;
};

HjbEvaluator::HjbEvaluator(const CandidateQuadruple& cand, const ProblemSpec& spec) : cand_(cand), spec_(spec) {
  cand.check(spec);
  if (!spec.payoffs.has_gradient()) throw UnsupportedOperation("the HJB part needs the gradient G_y");
  fbar_ = restrict_to_diagonal(cand.f);
  dg_ = diamond_grid(spec.payoffs, cand.g);
}

HjbEvaluator::Jets HjbEvaluator::jets(std::size_t k, const XIndex& idx, bool full) const {
  const Lattice& lat = cand_.V.lattice();
  if (k + 1 >= lat.time_axis().count) throw DomainError("the HJB part is evaluated before the final time node");
  Jets j;
  const std::size_t n = spec_.n();
  const TxView v(cand_.V);
  for (std::size_t i = 0; i < n; ++i) {
    if (idx[i] >= v.x_axis(i).count) throw DomainError("state index off lattice");
  }
  const std::size_t c = x_flat(v, idx);
  j.t = lat.time_axis().node(k);
  j.x.resize(n);
  for (std::size_t i = 0; i < n; ++i) j.x[i] = v.x_axis(i).node(idx[i]);
  j.fx = jet_at(TxView(cand_.f, diagonal_extra(cand_.f.lattice(), k, c)), k, idx);
  Vec gval(n);
  for (std::size_t i = 0; i < n; ++i) {
    j.g.push_back(jet_at(TxView(cand_.g, 0, i), k, idx));
    gval[i] = j.g.back().value;
  }
  j.gy.assign(n, 0.0);
  spec_.payoffs.aggregator_grad(j.t, j.x, gval, j.gy);
  if (full) {
    j.V = jet_at(v, k, idx);
    j.fbar = jet_at(TxView(fbar_), k, idx);
    j.dg = jet_at(TxView(dg_), k, idx);
  }
  return j;
}

double HjbEvaluator::bracket(const Jets& j, ConstSpan u, std::size_t, const XIndex&, bool full) const {
  const Coefficients c = coefficients(spec_.dynamics, j.t, j.x, u);
  double s = generator_from_jet(j.fx, c);
  for (std::size_t i = 0; i < j.g.size(); ++i) {
    if (j.gy[i] != 0.0) s += j.gy[i] * generator_from_jet(j.g[i], c);
  }
  if (spec_.payoffs.running) s += (*spec_.payoffs.running)(j.t, j.x, u, j.t, j.x);
  if (full) s += generator_from_jet(j.V, c) - generator_from_jet(j.fbar, c) - generator_from_jet(j.dg, c);
  return s;
}

double HjbEvaluator::hamiltonian(ConstSpan u, std::size_t k, const XIndex& idx) const {
  return bracket(jets(k, idx, true), u, k, idx, true);
}

double HjbEvaluator::reduced_hamiltonian(ConstSpan u, std::size_t k, const XIndex& idx) const {
  return bracket(jets(k, idx, false), u, k, idx, false);
}

StepResidual HjbEvaluator::step_residual(std::size_t k, const XIndex& idx, double tie_tolerance) const {
  const Jets j = jets(k, idx, true);
  const auto& samples = spec_.controls.samples();
  if (samples.empty()) throw DomainError("control set has no samples");
  Vec vals(samples.size());
  for (std::size_t q = 0; q < samples.size(); ++q) vals[q] = bracket(j, samples[q], k, idx, true);
  StepResidual r;
  r.sup = *std::max_element(vals.begin(), vals.end());
  for (std::size_t q = 0; q < samples.size(); ++q) {
    if (vals[q] >= r.sup - tie_tolerance) {
      r.argmax.push_back(q);
      r.argmax_controls.push_back(samples[q]);
    }
  }
  return r;
}

double hamiltonian(const CandidateQuadruple& cand, const ProblemSpec& spec, ConstSpan u, double t, ConstSpan x) {
  const HjbEvaluator ev(cand, spec);
  auto [k, idx] = locate_node(cand.V.lattice(), t, x);
  return ev.hamiltonian(u, k, idx);
}

StepResidual hjb_step_residual(const CandidateQuadruple& cand, const ProblemSpec& spec, double t, ConstSpan x,
                               double tie_tolerance) {
  const HjbEvaluator ev(cand, spec);
  auto [k, idx] = locate_node(cand.V.lattice(), t, x);
  return ev.step_residual(k, idx, tie_tolerance);
}

// ---------------------------------------------------------------------------
// Kolmogorov part

KolmogorovResidual kolmogorov_residual(const CandidateQuadruple& cand, const ProblemSpec& spec) {
  cand.check(spec);
  const Lattice& tl = cand.V.lattice();
  const Lattice& fl = cand.f.lattice();
  const XGeometry geo(tl);
  const std::size_t nt = tl.time_axis().count, nx = geo.block, ne = fl.extra_count(), n = spec.n();
  const double dt = tl.time_axis().step();
  KolmogorovResidual out{GridFunction(fl, 1), GridFunction(tl, n)};
  std::vector<Reference> refs(ne);
  for (std::size_t e = 0; e < ne; ++e) refs[e] = reference_of(fl, e, spec.horizon);
  const auto& running = spec.payoffs.running;

  std::vector<NodeOperator> ops(nx);
  Vec us(nx * spec.k());
  for (std::size_t k = 0; k + 1 < nt; ++k) {
    const double t = tl.time_axis().node(k);
    CoefScratch cs(n, spec.dynamics.dim_noise);
    Vec x(n);
    for (std::size_t c = 0; c < nx; ++c) {
      geo.coords(c, x);
      MutSpan u(&us[c * spec.k()], spec.k());
      cand.control.evaluate(t, x, u);
      ops[c].build(geo, geo.unflat(c), cs.fill(spec.dynamics, t, x, u));
    }
    const double* g0 = &cand.g.values()[k * nx * n];
    const double* g1 = &cand.g.values()[(k + 1) * nx * n];
    for (std::size_t c = 0; c < nx; ++c) {
      for (std::size_t i = 0; i < n; ++i) {
        out.g.at(k * nx + c, i) = (g1[c * n + i] - g0[c * n + i]) / dt + ops[c].apply(g0, c, n, i);
      }
    }
    parallel_for(ne, [&](std::size_t lo, std::size_t hi) {
      Vec xl(n);
      for (std::size_t e = lo; e < hi; ++e) {
        const std::size_t base = k * fl.stride(0) + e * nx;
        const double* f0 = &cand.f.values()[base];
        const double* f1 = f0 + fl.stride(0);
        double* r = &out.f.values()[base];
        for (std::size_t c = 0; c < nx; ++c) {
          double v = (f1[c] - f0[c]) / dt + ops[c].apply(f0, c);
          if (running) {
            geo.coords(c, xl);
            v += (*running)(t, xl, ConstSpan(&us[c * spec.k()], spec.k()), refs[e].s, refs[e].y);
          }
          r[c] = v;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report

bool ResidualReport::pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const NamedCheck& c) { return c.pass; });
}

ResidualReport residual_report(const CandidateQuadruple& cand, const ProblemSpec& spec, const GridSpec& grid,
                               const ResidualThresholds& thr) {
  cand.check(spec);
  if (!(cand.grid() == grid)) throw DomainError("candidate lattice does not match the grid");
  ResidualReport rep;
  rep.thresholds = thr;
  const Lattice& tl = cand.V.lattice();
  const Lattice& fl = cand.f.lattice();
  const XGeometry geo(tl);
  const std::size_t nt = tl.time_axis().count, nx = geo.block, ne = fl.extra_count(), n = spec.n();
  const std::size_t last = nt - 1;
  const double T = tl.time_axis().node(last);
  const HjbEvaluator ev(cand, spec);

  // Terminal conditions and the consistency identity.
  double bv = 0.0, bf = 0.0, bg = 0.0, ident = 0.0;
  Vec x(n);
  for (std::size_t c = 0; c < nx; ++c) {
    geo.coords(c, x);
    const double expect_v = spec.payoffs.terminal(T, x, x) + spec.payoffs.aggregator(T, x, x);
    bv = std::max(bv, std::abs(cand.V.at(last * nx + c) - expect_v));
    for (std::size_t i = 0; i < n; ++i) bg = std::max(bg, std::abs(cand.g.at(last * nx + c, i) - x[i]));
    for (std::size_t e = 0; e < ne; ++e) {
      const Reference r = reference_of(fl, e, spec.horizon);
      bf = std::max(bf, std::abs(cand.f.at(last * fl.stride(0) + e * nx + c) - spec.payoffs.terminal(r.s, x, r.y)));
    }
  }
  for (std::size_t k = 0; k < nt; ++k) {
    for (std::size_t c = 0; c < nx; ++c) {
      const double lhs = cand.V.at(k * nx + c);
      ident = std::max(ident, std::abs(lhs - ev.diagonal().at(k * nx + c) - ev.diamond().at(k * nx + c)));
    }
  }
  auto add = [&](std::vector<NamedCheck>& list, const std::string& name, double v, double t) {
    list.push_back({name, v, t, std::isfinite(v) && v <= t});
  };
  add(rep.boundary, "terminal_V", bv, thr.boundary);
  add(rep.boundary, "terminal_f", bf, thr.boundary);
  add(rep.boundary, "terminal_g", bg, thr.boundary);
  add(rep.boundary, "consistency_identity", ident, thr.identity);

  // Kolmogorov part.
  const KolmogorovResidual kr = kolmogorov_residual(cand, spec);
  for (std::size_t k = 0; k < last; ++k) {
    for (std::size_t c = 0; c < nx; ++c) {
      const bool band = geo.in_band(geo.unflat(c), thr.band);
      for (std::size_t i = 0; i < n; ++i) accumulate(band ? rep.band_g : rep.kolmogorov_g, kr.g.at(k * nx + c, i));
      for (std::size_t e = 0; e < ne; ++e) {
        accumulate(band ? rep.band_f : rep.kolmogorov_f, kr.f.at(k * fl.stride(0) + e * nx + c));
      }
    }
  }

  // HJB part.
  Vec u(spec.k());
  for (std::size_t k = 0; k < last; ++k) {
    const double t = tl.time_axis().node(k);
    for (std::size_t c = 0; c < nx; ++c) {
      const XIndex idx = geo.unflat(c);
      const bool band = geo.in_band(idx, thr.band);
      const StepResidual sr = ev.step_residual(k, idx, thr.tie_tolerance);
      accumulate(band ? rep.band_hjb : rep.hjb, sr.sup);
      if (band) continue;
      geo.coords(c, x);
      cand.control.evaluate(t, x, u);
      const double hu = ev.hamiltonian(u, k, idx);
      if (!(hu >= sr.sup - thr.tie_tolerance)) {
        ++rep.argmax_violations;
        if (rep.argmax_violation_nodes.size() < 100) rep.argmax_violation_nodes.push_back({k, idx});
      }
    }
  }
  for (Norms* p : {&rep.kolmogorov_f, &rep.kolmogorov_g, &rep.hjb, &rep.band_f, &rep.band_g, &rep.band_hjb}) finish(*p);

  rep.checks = rep.boundary;
  add(rep.checks, "kolmogorov_f_sup", rep.kolmogorov_f.sup, thr.kolmogorov_f);
  add(rep.checks, "kolmogorov_g_sup", rep.kolmogorov_g.sup, thr.kolmogorov_g);
  add(rep.checks, "hjb_sup", rep.hjb.sup, thr.hjb);
  add(rep.checks, "argmax_violations", static_cast<double>(rep.argmax_violations), 0.0);
  return rep;
}

// ---------------------------------------------------------------------------
// Solver

double stable_dt(const ProblemSpec& spec, const GridSpec& grid) {
  grid.check();
  const Lattice tl = Lattice::tx(grid);
  const XGeometry geo(tl);
  const std::size_t n = spec.n();
  const auto& samples = spec.controls.samples();
  if (samples.empty()) throw DomainError("control set has no samples");
  const std::size_t nts = std::min<std::size_t>(grid.t.count, 11);
  const std::size_t budget = 2'000'000;
  const std::size_t per = std::max<std::size_t>(1, nts * samples.size());
  const std::size_t xstep = std::max<std::size_t>(1, geo.block * per / budget);
  CoefScratch cs(n, spec.dynamics.dim_noise);
  Vec x(n);
  double worst = 0.0;
  for (std::size_t q = 0; q < nts; ++q) {
    const std::size_t k = nts == 1 ? 0 : q * (grid.t.count - 1) / (nts - 1);
    const double t = grid.t.node(k);
    for (std::size_t c = 0; c < geo.block; c += xstep) {
      geo.coords(c, x);
      for (const auto& u : samples) {
        const Coefficients& co = cs.fill(spec.dynamics, t, x, u);
        for (std::size_t i = 0; i < n; ++i) {
          double row = 0.0;
          for (std::size_t j = 0; j < n; ++j) row += std::abs(co.a[i * n + j]);
          worst = std::max(worst, row);
        }
      }
    }
  }
  if (!std::isfinite(worst)) throw DomainError("diffusion is not finite on the grid");
  if (worst <= 0.0) return std::numeric_limits<double>::infinity();
  const double dx = grid.min_dx();
  return dx * dx / (static_cast<double>(n) * worst);
}

namespace {

struct MarchSetup {
  const ProblemSpec& spec;
  GridSpec grid;
  Lattice tl, fl;
  XGeometry geo;
  std::size_t nt, nx, ne, n, k;
  std::size_t substeps = 1;
  double dt_grid = 0.0, dt_stable = 0.0;
  std::vector<Reference> refs;

  MarchSetup(const ProblemSpec& s, const GridSpec& g, const SolverOptions& opts)
      : spec(s), grid(g), tl(Lattice::tx(g)), fl(f_lattice(s, g)), geo(tl) {
    spec.check_structure();
    grid.check();
    if (grid.n() != spec.n()) throw DomainError("grid and problem differ in state dimension");
    if (std::abs(grid.t.max - spec.horizon) > 1e-12 * std::max(1.0, spec.horizon) || grid.t.min < 0.0) {
      throw DomainError("time grid must end at the horizon");
    }
    nt = grid.t.count;
    nx = geo.block;
    ne = fl.extra_count();
    n = spec.n();
    k = spec.k();
    const double total = static_cast<double>(nt) * static_cast<double>(ne) * static_cast<double>(nx);
    if (total > static_cast<double>(opts.max_f_values)) {
      throw DomainError("f would need " + std::to_string(static_cast<long long>(total)) +
                        " values; reduce the grid (limit " + std::to_string(opts.max_f_values) + ")");
    }
    dt_grid = grid.t.step();
    dt_stable = stable_dt(spec, grid);
    if (dt_grid > dt_stable * (1 + 1e-9)) {
      if (!opts.auto_dt) throw CflViolation(dt_grid, dt_stable);
      substeps = static_cast<std::size_t>(std::ceil(dt_grid / dt_stable - 1e-9));
    }
    refs.resize(ne);
    for (std::size_t e = 0; e < ne; ++e) refs[e] = reference_of(fl, e, spec.horizon);
  }
};

struct MarchOutput {
  GridFunction f, g, control;
};

// Index of the sample maximizing vals (first within tol of the max).
std::size_t pick(const Vec& vals, double tol) {
  const double best = *std::max_element(vals.begin(), vals.end());
  for (std::size_t q = 0; q < vals.size(); ++q) {
    if (vals[q] >= best - tol) return q;
  }
  return 0;
}

// Greedy control at every x node from the slices (fcur, gcur) at time tau;
// the diagonal reference uses s index `sk`.
void greedy_controls(const MarchSetup& m, const Vec& fcur, const Vec& gcur, double tau, std::size_t sk, double tol,
                     Vec& us) {
  const auto& samples = m.spec.controls.samples();
  const auto& pay = m.spec.payoffs;
  if (!pay.has_gradient()) throw UnsupportedOperation("the solver needs the gradient G_y");
  CoefScratch cs(m.n, m.spec.dynamics.dim_noise);
  Vec x(m.n), gval(m.n), gy(m.n), vals(samples.size());
  const double s_ref = m.fl.has_ref_time() ? m.grid.t.node(sk) : tau;
  for (std::size_t c = 0; c < m.nx; ++c) {
    const XIndex idx = m.geo.unflat(c);
    m.geo.coords(c, x);
    const std::size_t e = m.fl.has_ref_time() ? sk * m.nx + c : c;
    const Jet jf = raw_jet(&fcur[e * m.nx], 1, 0, c, idx, m.geo);
    std::vector<Jet> jg;
    for (std::size_t i = 0; i < m.n; ++i) {
      jg.push_back(raw_jet(gcur.data(), m.n, i, c, idx, m.geo));
      gval[i] = gcur[c * m.n + i];
    }
    pay.aggregator_grad(tau, x, gval, gy);
    for (std::size_t q = 0; q < samples.size(); ++q) {
      const Coefficients& co = cs.fill(m.spec.dynamics, tau, x, samples[q]);
      double s = spatial_generator(jf, co);
      for (std::size_t i = 0; i < m.n; ++i) s += gy[i] * spatial_generator(jg[i], co);
      if (pay.running) s += (*pay.running)(tau, x, samples[q], s_ref, x);
      vals[q] = s;
    }
    const Vec& best = samples[pick(vals, tol)];
    std::copy(best.begin(), best.end(), us.begin() + static_cast<long>(c * m.k));
  }
}

void fixed_controls(const MarchSetup& m, const FeedbackControl& law, double tau, Vec& us) {
  Vec x(m.n);
  for (std::size_t c = 0; c < m.nx; ++c) {
    m.geo.coords(c, x);
    law.evaluate(tau, x, MutSpan(&us[c * m.k], m.k));
  }
}

// One explicit substep of length dt from (fcur, gcur) at tau + dt to
// (fnext, gnext) at tau under the node controls us.
void kolmogorov_substep(const MarchSetup& m, const Vec& us, double tau, double dt, const Vec& fcur, const Vec& gcur,
                        Vec& fnext, Vec& gnext) {
  std::vector<NodeOperator> ops(m.nx);
  CoefScratch cs(m.n, m.spec.dynamics.dim_noise);
  Vec x(m.n);
  for (std::size_t c = 0; c < m.nx; ++c) {
    m.geo.coords(c, x);
    ops[c].build(m.geo, m.geo.unflat(c), cs.fill(m.spec.dynamics, tau, x, ConstSpan(&us[c * m.k], m.k)));
  }
  for (std::size_t c = 0; c < m.nx; ++c) {
    for (std::size_t i = 0; i < m.n; ++i) {
      gnext[c * m.n + i] = gcur[c * m.n + i] + dt * ops[c].apply(gcur.data(), c, m.n, i);
    }
  }
  const auto& running = m.spec.payoffs.running;
  parallel_for(m.ne, [&](std::size_t lo, std::size_t hi) {
    Vec xl(m.n);
    for (std::size_t e = lo; e < hi; ++e) {
      const double* src = &fcur[e * m.nx];
      double* dst = &fnext[e * m.nx];
      for (std::size_t c = 0; c < m.nx; ++c) {
        double lf = ops[c].apply(src, c);
        if (running) {
          m.geo.coords(c, xl);
          lf += (*running)(tau, xl, ConstSpan(&us[c * m.k], m.k), m.refs[e].s, m.refs[e].y);
        }
        dst[c] = src[c] + dt * lf;
      }
    }
  });
}

MarchOutput march(const MarchSetup& m, const FeedbackControl* law, double tol) {
  MarchOutput out{GridFunction(m.fl, 1), GridFunction(m.tl, m.n), GridFunction(m.tl, m.k)};
  const std::size_t slice = m.ne * m.nx;
  Vec fcur(slice), fnext(slice), gcur(m.nx * m.n), gnext(m.nx * m.n), us(m.nx * m.k);
  const double T = m.grid.t.node(m.nt - 1);
  Vec x(m.n);
  for (std::size_t e = 0; e < m.ne; ++e) {
    for (std::size_t c = 0; c < m.nx; ++c) {
      m.geo.coords(c, x);
      fcur[e * m.nx + c] = m.spec.payoffs.terminal(m.refs[e].s, x, m.refs[e].y);
    }
  }
  for (std::size_t c = 0; c < m.nx; ++c) {
    m.geo.coords(c, x);
    for (std::size_t i = 0; i < m.n; ++i) gcur[c * m.n + i] = x[i];
  }
  auto store = [&](std::size_t kk) {
    std::copy(fcur.begin(), fcur.end(), out.f.values().begin() + static_cast<long>(kk * slice));
    std::copy(gcur.begin(), gcur.end(), out.g.values().begin() + static_cast<long>(kk * m.nx * m.n));
    std::copy(us.begin(), us.end(), out.control.values().begin() + static_cast<long>(kk * m.nx * m.k));
  };
  if (law) {
    fixed_controls(m, *law, T, us);
  } else {
    greedy_controls(m, fcur, gcur, T, m.nt - 1, tol, us);
  }
  store(m.nt - 1);
  const double dt = m.dt_grid / static_cast<double>(m.substeps);
  for (std::size_t kk = m.nt - 1; kk-- > 0;) {
    const double tk = m.grid.t.node(kk);
    for (std::size_t j = m.substeps; j-- > 0;) {
      const double tau = j == 0 ? tk : tk + static_cast<double>(j) * dt;
      if (law) {
        fixed_controls(m, *law, tau, us);
      } else {
        greedy_controls(m, fcur, gcur, tau, kk, tol, us);
      }
      kolmogorov_substep(m, us, tau, dt, fcur, gcur, fnext, gnext);
      fcur.swap(fnext);
      gcur.swap(gnext);
    }
    store(kk);
  }
  return out;
}

CandidateQuadruple assemble(const MarchSetup& m, MarchOutput&& mo) {
  CandidateQuadruple c;
  c.V = GridFunction(m.tl, 1);
  Vec x(m.n), gval(m.n);
  for (std::size_t kk = 0; kk < m.nt; ++kk) {
    const double t = m.grid.t.node(kk);
    for (std::size_t cc = 0; cc < m.nx; ++cc) {
      m.geo.coords(cc, x);
      for (std::size_t i = 0; i < m.n; ++i) gval[i] = mo.g.at(kk * m.nx + cc, i);
      const double fd = mo.f.at(kk * m.fl.stride(0) + extra_for_diag(m.fl, kk, cc) * m.nx + cc);
      c.V.at(kk * m.nx + cc) = fd + m.spec.payoffs.aggregator(t, x, gval);
    }
  }
  c.f = std::move(mo.f);
  c.g = std::move(mo.g);
  c.control = FeedbackControl::tabulated(mo.control);
  return c;
}

SweepRecord record(std::size_t sweep, std::size_t changes, const CandidateQuadruple& cand, const ProblemSpec& spec) {
  SweepRecord r;
  r.sweep = sweep;
  r.control_changes = changes;
  const KolmogorovResidual kr = kolmogorov_residual(cand, spec);
  const Lattice& tl = cand.V.lattice();
  const XGeometry geo(tl);
  const std::size_t nt = tl.time_axis().count, nx = geo.block, ne = cand.f.lattice().extra_count();
  Norms nf, ng;
  for (std::size_t k = 0; k + 1 < nt; ++k) {
    for (std::size_t c = 0; c < nx; ++c) {
      if (geo.in_band(geo.unflat(c), 2)) continue;
      for (std::size_t i = 0; i < spec.n(); ++i) accumulate(ng, kr.g.at(k * nx + c, i));
      for (std::size_t e = 0; e < ne; ++e) accumulate(nf, kr.f.at(k * cand.f.lattice().stride(0) + e * nx + c));
    }
  }
  finish(nf);
  finish(ng);
  r.f_residual_sup = nf.sup;
  r.f_residual_rms = nf.rms;
  r.g_residual_sup = ng.sup;
  return r;
}

std::size_t count_changes(const GridFunction& a, const GridFunction& b, double tol) {
  const std::size_t nodes = a.lattice().size(), k = a.arity();
  std::size_t changes = 0;
  for (std::size_t i = 0; i < nodes; ++i) {
    double d = 0.0;
    for (std::size_t q = 0; q < k; ++q) d = std::max(d, std::abs(a.at(i, q) - b.at(i, q)));
    if (d > tol) ++changes;
  }
  return changes;
}

}  // namespace

SolveResult solve_extended_hjb(const ProblemSpec& spec, const GridSpec& grid, const SolverOptions& opts) {
  const MarchSetup m(spec, grid, opts);
  SolveResult res;
  res.log.substeps = m.substeps;
  res.log.dt_grid = m.dt_grid;
  res.log.dt_stable = m.dt_stable;

  const FeedbackControl init = FeedbackControl::constant(spec.controls.minimal_norm_element());
  MarchOutput mo = march(m, &init, opts.tie_tolerance);
  GridFunction prev = mo.control;
  res.control = mo.control;
  res.candidate = assemble(m, std::move(mo));
  res.log.sweeps.push_back(record(0, 0, res.candidate, spec));

  for (std::size_t it = 1; it <= opts.max_outer_iters; ++it) {
    MarchOutput next = march(m, nullptr, opts.tie_tolerance);
    const std::size_t changes = count_changes(next.control, prev, opts.control_tolerance);
    prev = next.control;
    res.control = next.control;
    res.candidate = assemble(m, std::move(next));
    res.log.sweeps.push_back(record(it, changes, res.candidate, spec));
    if (changes == 0) {
      res.log.converged = true;
      break;
    }
  }
  return res;
}

SolveResult evaluate_policy(const ProblemSpec& spec, const GridSpec& grid, const FeedbackControl& control,
                            const SolverOptions& opts) {
  if (control.dim() != spec.k()) throw DomainError("control has the wrong dimension");
  const MarchSetup m(spec, grid, opts);
  SolveResult res;
  res.log.substeps = m.substeps;
  res.log.dt_grid = m.dt_grid;
  res.log.dt_stable = m.dt_stable;
  MarchOutput mo = march(m, &control, opts.tie_tolerance);
  res.control = mo.control;
  res.candidate = assemble(m, std::move(mo));
  res.candidate.control = control;
  res.log.sweeps.push_back(record(0, 0, res.candidate, spec));
  res.log.converged = true;
  return res;
}

StandardSolve standard_hjb_solve(const ProblemSpec& spec, const GridSpec& grid, const SolverOptions& opts) {
  spec.check_structure();
  grid.check();
  const Lattice tl = Lattice::tx(grid);
  const XGeometry geo(tl);
  const std::size_t nt = grid.t.count, nx = geo.block, n = spec.n(), k = spec.k();
  const double dt_grid = grid.t.step(), dt_stable = stable_dt(spec, grid);
  std::size_t m = 1;
  if (dt_grid > dt_stable * (1 + 1e-9)) {
    if (!opts.auto_dt) throw CflViolation(dt_grid, dt_stable);
    m = static_cast<std::size_t>(std::ceil(dt_grid / dt_stable - 1e-9));
  }
  const double dt = dt_grid / static_cast<double>(m);
  const auto& samples = spec.controls.samples();
  StandardSolve out{GridFunction(tl, 1), GridFunction(tl, k), m};
  Vec cur(nx), nxt(nx), us(nx * k), x(n), vals(samples.size());
  const double T = grid.t.node(nt - 1);
  for (std::size_t c = 0; c < nx; ++c) {
    geo.coords(c, x);
    cur[c] = spec.payoffs.terminal(T, x, x);
  }
  CoefScratch cs(n, spec.dynamics.dim_noise);
  auto choose = [&](double tau) {
    for (std::size_t c = 0; c < nx; ++c) {
      const XIndex idx = geo.unflat(c);
      geo.coords(c, x);
      const Jet j = raw_jet(cur.data(), 1, 0, c, idx, geo);
      for (std::size_t q = 0; q < samples.size(); ++q) vals[q] = spatial_generator(j, cs.fill(spec.dynamics, tau, x, samples[q]));
      const Vec& best = samples[pick(vals, opts.tie_tolerance)];
      std::copy(best.begin(), best.end(), us.begin() + static_cast<long>(c * k));
    }
  };
  auto store = [&](std::size_t kk) {
    std::copy(cur.begin(), cur.end(), out.value.values().begin() + static_cast<long>(kk * nx));
    std::copy(us.begin(), us.end(), out.control.values().begin() + static_cast<long>(kk * nx * k));
  };
  choose(T);
  store(nt - 1);
  std::vector<NodeOperator> ops(nx);
  for (std::size_t kk = nt - 1; kk-- > 0;) {
    const double tk = grid.t.node(kk);
    for (std::size_t j = m; j-- > 0;) {
      const double tau = j == 0 ? tk : tk + static_cast<double>(j) * dt;
      choose(tau);
      for (std::size_t c = 0; c < nx; ++c) {
        geo.coords(c, x);
        ops[c].build(geo, geo.unflat(c), cs.fill(spec.dynamics, tau, x, ConstSpan(&us[c * k], k)));
      }
      for (std::size_t c = 0; c < nx; ++c) nxt[c] = cur[c] + dt * ops[c].apply(cur.data(), c);
      cur.swap(nxt);
    }
    store(kk);
  }
  return out;
}

StandardResidualReport standard_hjb_residual(const GridFunction& value, const ProblemSpec& spec,
                                             const TerminalFn& terminal, double threshold, std::size_t band) {
  const Lattice& tl = value.lattice();
  if (tl.has_ref_state() || tl.has_ref_time() || value.arity() != 1 || tl.n_state() != spec.n()) {
    throw DomainError("value must be a scalar (t, x) function");
  }
  const XGeometry geo(tl);
  const std::size_t nt = tl.time_axis().count, nx = geo.block, n = spec.n();
  const auto& samples = spec.controls.samples();
  StandardResidualReport rep;
  rep.threshold = threshold;
  rep.residual = GridFunction(tl, 1);
  const TxView v(value);
  Vec x(n);
  for (std::size_t k = 0; k + 1 < nt; ++k) {
    const double t = tl.time_axis().node(k);
    for (std::size_t c = 0; c < nx; ++c) {
      const XIndex idx = geo.unflat(c);
      geo.coords(c, x);
      const Jet j = jet_at(v, k, idx);
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& u : samples) best = std::max(best, generator_from_jet(j, coefficients(spec.dynamics, t, x, u)));
      rep.residual.at(k * nx + c) = best;
      accumulate(rep.all, best);
      if (!geo.in_band(idx, band)) accumulate(rep.interior, best);
    }
  }
  finish(rep.interior);
  finish(rep.all);
  if (terminal) {
    for (std::size_t c = 0; c < nx; ++c) {
      geo.coords(c, x);
      rep.terminal = std::max(rep.terminal, std::abs(value.at((nt - 1) * nx + c) - terminal(x)));
    }
  }
  return rep;
}

}  // namespace tic
