#include "tic/registry.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace tic {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Built-in maps

DynamicsSpec regulator_dynamics(double sigma, double a) {
  DynamicsSpec d;
  d.dim_state = 1;
  d.dim_noise = 1;
  d.drift = [](double, ConstSpan, ConstSpan u, MutSpan mu) {
    double s = 0.0;
    for (double v : u) s += v * v;
    mu[0] = -s;
  };
  d.diffusion = [sigma](double, ConstSpan, ConstSpan, MutSpan sig) { sig[0] = sigma; };
  d.drift_bound = a * a;
  d.diffusion_bound = sigma;
  d.ellipticity_floor = sigma * sigma;
  d.state_independent_diffusion = true;
  return d;
}

DynamicsSpec affine_dynamics(const AffineDynamicsParams& p) {
  const std::size_t n = p.n, k = p.k, nd = p.d;
  auto sized = [](const Vec& v, std::size_t m, const char* what) {
    if (v.empty()) return Vec(m, 0.0);
    if (v.size() != m) throw DomainError(std::string("affine dynamics: ") + what + " has the wrong size");
    return v;
  };
  const Vec A = sized(p.A, n * n, "A"), B = sized(p.B, n * k, "B"), Q = sized(p.Q, n * k, "Q"),
            c = sized(p.c, n, "c"), S = sized(p.S, n * nd, "S");
  DynamicsSpec d;
  d.dim_state = n;
  d.dim_noise = nd;
  d.drift = [=](double, ConstSpan x, ConstSpan u, MutSpan mu) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = c[i];
      for (std::size_t j = 0; j < n; ++j) s += A[i * n + j] * x[j];
      for (std::size_t j = 0; j < k; ++j) s += B[i * k + j] * u[j] + Q[i * k + j] * u[j] * u[j];
      mu[i] = s;
    }
  };
  d.diffusion = [=](double, ConstSpan, ConstSpan, MutSpan sig) { std::copy(S.begin(), S.end(), sig.begin()); };
  d.state_independent_diffusion = true;
  return d;
}

QuadraticForm QuadraticForm::zero(std::size_t n) {
  QuadraticForm q;
  q.n = n;
  q.P.assign(n * n, 0.0);
  q.Q.assign(n * n, 0.0);
  q.R.assign(n * n, 0.0);
  q.p.assign(n, 0.0);
  q.q.assign(n, 0.0);
  return q;
}

QuadraticForm QuadraticForm::squared_distance(std::size_t n) {
  QuadraticForm q = zero(n);
  for (std::size_t i = 0; i < n; ++i) {
    q.P[i * n + i] = 1.0;
    q.Q[i * n + i] = 1.0;
    q.R[i * n + i] = -2.0;
  }
  return q;
}

PayoffFn QuadraticForm::value() const {
  const QuadraticForm f = *this;
  return [f](double s, ConstSpan x, ConstSpan y) {
    const std::size_t n = f.n;
    double v = f.c;
    for (std::size_t i = 0; i < n; ++i) {
      v += f.p[i] * x[i] + f.q[i] * y[i];
      for (std::size_t j = 0; j < n; ++j) {
        v += x[i] * f.P[i * n + j] * x[j] + y[i] * f.Q[i * n + j] * y[j] + x[i] * f.R[i * n + j] * y[j];
      }
    }
    return f.rho == 0.0 ? v : v * std::exp(-f.rho * (f.horizon - s));
  };
}

PayoffGradFn QuadraticForm::gradient_y() const {
  const QuadraticForm f = *this;
  return [f](double s, ConstSpan x, ConstSpan y, MutSpan g) {
    const std::size_t n = f.n;
    const double disc = f.rho == 0.0 ? 1.0 : std::exp(-f.rho * (f.horizon - s));
    for (std::size_t i = 0; i < n; ++i) {
      double v = f.q[i];
      for (std::size_t j = 0; j < n; ++j) v += (f.Q[i * n + j] + f.Q[j * n + i]) * y[j] + f.R[j * n + i] * x[j];
      g[i] = v * disc;
    }
  };
}

RunningFn quadratic_running(double alpha, double beta, double rho) {
  return [=](double r, ConstSpan x, ConstSpan u, double s, ConstSpan y) {
    double uu = 0.0, dd = 0.0;
    for (double v : u) uu += v * v;
    for (std::size_t i = 0; i < x.size(); ++i) dd += (x[i] - y[i]) * (x[i] - y[i]);
    const double v = -(alpha * uu + beta * dd);
    return rho == 0.0 ? v : v * std::exp(-rho * (r - s));
  };
}

// ---------------------------------------------------------------------------
// Schema walking

namespace {

class Node {
 public:
  Node(const json& j, std::string ptr) : j_(j), ptr_(std::move(ptr)) {}

  const json& raw() const { return j_; }
  const std::string& ptr() const { return ptr_; }
  [[noreturn]] void fail(const std::string& what) const { throw InputError(ptr_.empty() ? "/" : ptr_, what); }

  Node object(std::initializer_list<const char*> allowed) const {
    if (!j_.is_object()) fail("expected an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, _] : j_.items()) {
      if (!ok.count(key)) Node(j_[key], ptr_ + "/" + key).fail("unknown key '" + key + "'");
    }
    return *this;
  }
  bool has(const char* key) const { return j_.contains(key); }
  Node at(const char* key) const {
    if (!j_.contains(key)) fail(std::string("missing required key '") + key + "'");
    return Node(j_.at(key), ptr_ + "/" + key);
  }
  std::vector<Node> array(std::size_t min_size = 0) const {
    if (!j_.is_array()) fail("expected an array");
    if (j_.size() < min_size) fail("expected at least " + std::to_string(min_size) + " entries");
    std::vector<Node> out;
    for (std::size_t i = 0; i < j_.size(); ++i) out.emplace_back(j_[i], ptr_ + "/" + std::to_string(i));
    return out;
  }
  double number() const {
    if (!j_.is_number()) fail("expected a number");
    const double v = j_.get<double>();
    if (!std::isfinite(v)) fail("expected a finite number");
    return v;
  }
  double positive() const {
    const double v = number();
    if (!(v > 0.0)) fail("expected a positive number");
    return v;
  }
  std::size_t count(std::size_t min = 0) const {
    if (!j_.is_number_integer() && !j_.is_number_unsigned()) fail("expected an integer");
    const auto v = j_.get<long long>();
    if (v < static_cast<long long>(min)) fail("expected an integer >= " + std::to_string(min));
    return static_cast<std::size_t>(v);
  }
  bool boolean() const {
    if (!j_.is_boolean()) fail("expected true or false");
    return j_.get<bool>();
  }
  std::string string() const {
    if (!j_.is_string()) fail("expected a string");
    return j_.get<std::string>();
  }
  std::uint64_t seed() const {
    if (j_.is_number_unsigned()) return j_.get<std::uint64_t>();
    if (j_.is_number_integer() && j_.get<long long>() >= 0) return static_cast<std::uint64_t>(j_.get<long long>());
    fail("expected a non-negative integer seed");
  }
  Vec vector(std::size_t expect = 0) const {
    Vec v;
    for (const auto& e : array()) v.push_back(e.number());
    if (expect && v.size() != expect) fail("expected " + std::to_string(expect) + " entries");
    return v;
  }
  // Row-major rows x cols matrix from nested arrays.
  Vec matrix(std::size_t rows, std::size_t cols) const {
    const auto rs = array();
    if (rs.size() != rows) fail("expected " + std::to_string(rows) + " rows");
    Vec m;
    for (const auto& r : rs) {
      const Vec row = r.vector(cols);
      m.insert(m.end(), row.begin(), row.end());
    }
    return m;
  }

 private:
  const json& j_;
  std::string ptr_;
};

double opt_number(const Node& n, const char* key, double dflt) { return n.has(key) ? n.at(key).number() : dflt; }

Axis parse_axis(const Node& n) {
  n.object({"min", "max", "nodes"});
  Axis a{n.at("min").number(), n.at("max").number(), n.at("nodes").count(3)};
  if (!(a.max > a.min)) n.fail("axis needs min < max");
  return a;
}

ControlSet parse_controls(const Node& n) {
  n.object({"interval", "resolution", "points"});
  if (n.has("interval") == n.has("points")) n.fail("give exactly one of 'interval' or 'points'");
  if (n.has("points")) {
    std::vector<Vec> pts;
    const auto arr = n.at("points").array(1);
    for (const auto& p : arr) pts.push_back(p.vector());
    const std::size_t k = pts.front().size();
    if (k == 0) arr.front().fail("control points need at least one component");
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (pts[i].size() != k) arr[i].fail("all control points must have the same dimension");
    }
    return ControlSet::finite_set(std::move(pts));
  }
  Vec lo, hi;
  for (const auto& iv : n.at("interval").array(1)) {
    const Vec b = iv.vector(2);
    lo.push_back(b[0]);
    hi.push_back(b[1]);
  }
  const std::size_t res = n.has("resolution") ? n.at("resolution").count(1) : 21;
  return ControlSet::interval_box(std::move(lo), std::move(hi), res);
}

DynamicsSpec parse_dynamics(const Node& n, std::size_t k) {
  n.object({"name", "params", "bounds", "ellipticity_floor"});
  const std::string name = n.at("name").string();
  DynamicsSpec d;
  if (name == "regulator") {
    const Node p = n.at("params").object({"sigma"});
    if (k != 1) n.fail("regulator dynamics needs a scalar control");
    d = regulator_dynamics(p.at("sigma").number(), 0.0);
  } else if (name == "affine") {
    const Node p = n.at("params").object({"n", "d", "A", "B", "Q", "c", "S"});
    AffineDynamicsParams ap;
    ap.n = p.at("n").count(1);
    ap.d = p.at("d").count(1);
    ap.k = k;
    if (ap.n > 2) p.at("n").fail("state dimension above 2 is not supported");
    if (p.has("A")) ap.A = p.at("A").matrix(ap.n, ap.n);
    if (p.has("B")) ap.B = p.at("B").matrix(ap.n, k);
    if (p.has("Q")) ap.Q = p.at("Q").matrix(ap.n, k);
    if (p.has("c")) ap.c = p.at("c").vector(ap.n);
    ap.S = p.at("S").matrix(ap.n, ap.d);
    d = affine_dynamics(ap);
  } else {
    n.at("name").fail("unknown dynamics '" + name + "' (known: regulator, affine)");
  }
  const Node b = n.at("bounds").object({"drift", "diffusion"});
  d.drift_bound = b.at("drift").number();
  d.diffusion_bound = b.at("diffusion").number();
  d.ellipticity_floor = n.at("ellipticity_floor").number();
  return d;
}

QuadraticForm parse_quadratic(const Node& n, std::size_t dim, double horizon, bool& time_dependent) {
  n.object({"name", "params"});
  const std::string name = n.at("name").string();
  QuadraticForm q = QuadraticForm::zero(dim);
  if (name == "zero") {
    if (n.has("params")) n.at("params").object({});
  } else if (name == "squared_distance") {
    q = QuadraticForm::squared_distance(dim);
    if (n.has("params")) {
      const Node p = n.at("params").object({"rho"});
      q.rho = opt_number(p, "rho", 0.0);
    }
  } else if (name == "quadratic") {
    const Node p = n.at("params").object({"P", "Q", "R", "p", "q", "c", "rho"});
    if (p.has("P")) q.P = p.at("P").matrix(dim, dim);
    if (p.has("Q")) q.Q = p.at("Q").matrix(dim, dim);
    if (p.has("R")) q.R = p.at("R").matrix(dim, dim);
    if (p.has("p")) q.p = p.at("p").vector(dim);
    if (p.has("q")) q.q = p.at("q").vector(dim);
    q.c = opt_number(p, "c", 0.0);
    q.rho = opt_number(p, "rho", 0.0);
  } else {
    n.at("name").fail("unknown payoff '" + name + "' (known: zero, squared_distance, quadratic)");
  }
  q.horizon = horizon;
  if (q.rho != 0.0) time_dependent = true;
  return q;
}

PayoffSpec parse_payoffs(const Node& n, std::size_t dim, double horizon) {
  n.object({"F", "G", "H", "growth"});
  PayoffSpec p;
  bool td = false;
  const QuadraticForm F = parse_quadratic(n.at("F"), dim, horizon, td);
  const QuadraticForm G = n.has("G") ? parse_quadratic(n.at("G"), dim, horizon, td) : QuadraticForm::zero(dim);
  p.terminal = F.value();
  p.aggregator = G.value();
  p.aggregator_grad = G.gradient_y();
  p.time_dependent = td;
  if (n.has("H")) {
    const Node h = n.at("H").object({"name", "params"});
    const std::string name = h.at("name").string();
    if (name != "quadratic_running") h.at("name").fail("unknown running payoff '" + name + "' (known: quadratic_running)");
    const Node hp = h.at("params").object({"alpha", "beta", "rho"});
    p.running = quadratic_running(opt_number(hp, "alpha", 0.0), opt_number(hp, "beta", 0.0), opt_number(hp, "rho", 0.0));
  }
  if (n.has("growth")) {
    for (const auto& g : n.at("growth").array()) {
      g.object({"y", "c0"});
      p.growth.push_back({g.at("y").vector(dim), g.at("c0").positive()});
    }
  }
  return p;
}

ControlSpec parse_control_spec(const Node& n, std::size_t k) {
  n.object({"constant", "table"});
  if (n.has("constant") == n.has("table")) n.fail("give exactly one of 'constant' or 'table'");
  ControlSpec c;
  if (n.has("constant")) c.constant = n.at("constant").vector(k);
  if (n.has("table")) c.table = n.at("table").string();
  return c;
}

TestPoint parse_point(const Node& n, std::size_t dim) {
  n.object({"t", "x"});
  return {n.at("t").number(), n.at("x").vector(dim)};
}

SimConfig parse_sim(const Node& n, SimConfig c) {
  if (n.has("n_paths")) c.n_paths = n.at("n_paths").count(2);
  if (n.has("dt")) c.dt = n.at("dt").positive();
  if (n.has("antithetic")) c.antithetic = n.at("antithetic").boolean();
  return c;
}

}  // namespace

RunConfig parse_config(const json& j) {
  const Node root(j, "");
  root.object({"problem", "grid", "solver", "residual", "simulation", "equilibrium", "validation", "seed", "output"});
  RunConfig rc;
  rc.raw = j;
  if (root.has("seed")) rc.seed = root.at("seed").seed();
  if (root.has("output")) rc.output = root.at("output").string();

  const Node pn = root.at("problem").object({"name", "horizon", "dynamics", "controls", "payoffs"});
  ProblemSpec& ps = rc.problem;
  ps.name = pn.has("name") ? pn.at("name").string() : "problem";
  ps.horizon = pn.at("horizon").positive();
  ps.controls = parse_controls(pn.at("controls"));
  ps.dynamics = parse_dynamics(pn.at("dynamics"), ps.controls.dim());
  ps.payoffs = parse_payoffs(pn.at("payoffs"), ps.dynamics.dim_state, ps.horizon);
  try {
    ps.check_structure();
  } catch (const InputError& e) {
    throw InputError("/problem", e.what());
  }
  const std::size_t n = ps.n(), k = ps.k();

  if (root.has("grid")) {
    const Node g = root.at("grid").object({"t", "x"});
    GridSpec gs;
    gs.t = parse_axis(g.at("t"));
    for (const auto& a : g.at("x").array(1)) gs.x.push_back(parse_axis(a));
    if (gs.x.size() != n) g.at("x").fail("grid needs one x axis per state dimension");
    if (std::abs(gs.t.max - ps.horizon) > 1e-12 * std::max(1.0, ps.horizon) || gs.t.min < 0.0) {
      g.at("t").fail("time axis must lie in [0, T] and end at the horizon");
    }
    rc.grid = gs;
  }
  if (root.has("solver")) {
    const Node s = root.at("solver").object({"max_outer_iters", "auto_dt", "tie_tolerance", "control_tolerance",
                                             "max_f_values"});
    if (s.has("max_outer_iters")) rc.solver.max_outer_iters = s.at("max_outer_iters").count(0);
    if (s.has("auto_dt")) rc.solver.auto_dt = s.at("auto_dt").boolean();
    if (s.has("tie_tolerance")) rc.solver.tie_tolerance = s.at("tie_tolerance").number();
    if (s.has("control_tolerance")) rc.solver.control_tolerance = s.at("control_tolerance").number();
    if (s.has("max_f_values")) rc.solver.max_f_values = s.at("max_f_values").count(1);
  }
  if (root.has("residual")) {
    const Node r = root.at("residual").object({"boundary", "identity", "kolmogorov_f", "kolmogorov_g", "hjb",
                                               "tie_tolerance", "band"});
    auto& t = rc.residual;
    t.boundary = opt_number(r, "boundary", t.boundary);
    t.identity = opt_number(r, "identity", t.identity);
    t.kolmogorov_f = opt_number(r, "kolmogorov_f", t.kolmogorov_f);
    t.kolmogorov_g = opt_number(r, "kolmogorov_g", t.kolmogorov_g);
    t.hjb = opt_number(r, "hjb", t.hjb);
    t.tie_tolerance = opt_number(r, "tie_tolerance", t.tie_tolerance);
    if (r.has("band")) t.band = r.at("band").count(0);
  }
  if (root.has("simulation")) {
    const Node s = root.at("simulation").object({"n_paths", "dt", "antithetic", "start", "control"});
    rc.sim = parse_sim(s, rc.sim);
    if (s.has("start")) {
      const TestPoint p = parse_point(s.at("start"), n);
      rc.start = StartSpec{p.t, p.x};
    }
    if (s.has("control")) rc.sim_control = parse_control_spec(s.at("control"), k);
  }
  rc.sim.seed = rc.seed;
  if (root.has("equilibrium")) {
    const Node e = root.at("equilibrium").object({"base", "points", "deviations", "h", "radii", "n_paths", "dt",
                                                  "antithetic", "fail_margin"});
    EquilibriumConfig ec;
    ec.base = parse_control_spec(e.at("base"), k);
    for (const auto& p : e.at("points").array(1)) ec.points.push_back(parse_point(p, n));
    for (const auto& d : e.at("deviations").array(1)) ec.deviations.push_back(d.vector(k));
    ec.h = e.at("h").vector();
    ec.radii = e.at("radii").vector();
    ec.sim = parse_sim(e, SimConfig{});
    ec.sim.seed = rc.seed;
    ec.fail_margin = opt_number(e, "fail_margin", 0.0);
    rc.equilibrium = ec;
  }
  if (root.has("validation")) {
    const Node v = root.at("validation").object({"probes", "box"});
    if (v.has("probes")) rc.probes = v.at("probes").count(1);
    if (v.has("box")) {
      const Node b = v.at("box").object({"lo", "hi"});
      rc.probe_box = ProbeBox{b.at("lo").vector(n), b.at("hi").vector(n)};
    }
  }
  return rc;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError(path, "cannot open config file");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw InputError(path, std::string("malformed JSON: ") + e.what());
  }
  return parse_config(j);
}

std::string config_hash(const json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

FeedbackControl make_control(const ControlSpec& spec, const ProblemSpec& problem) {
  if (spec.constant) {
    if (spec.constant->size() != problem.k()) throw DomainError("control has the wrong dimension");
    if (!problem.controls.contains(*spec.constant, 1e-12)) throw DomainError("constant control lies outside U");
    return FeedbackControl::constant(*spec.constant);
  }
  if (spec.table) {
    GridFunction t = GridFunction::read_csv(*spec.table);
    if (t.arity() != problem.k()) throw InputError(*spec.table, "control table has the wrong arity");
    return FeedbackControl::tabulated(std::move(t));
  }
  return FeedbackControl::constant(problem.controls.minimal_norm_element());
}

json regulator_preset() {
  return json::parse(R"({
    "problem": {
      "name": "regulator",
      "horizon": 1.0,
      "dynamics": {"name": "regulator", "params": {"sigma": 0.5},
                   "bounds": {"drift": 1.0, "diffusion": 0.5}, "ellipticity_floor": 0.25},
      "controls": {"interval": [[-1.0, 1.0]], "resolution": 41},
      "payoffs": {"F": {"name": "squared_distance"}, "G": {"name": "zero"},
                  "growth": [{"y": [0.0], "c0": 2.0}, {"y": [1.0], "c0": 4.0}]}
    },
    "grid": {"t": {"min": 0.0, "max": 1.0, "nodes": 101}, "x": [{"min": -2.0, "max": 2.0, "nodes": 201}]},
    "solver": {"max_outer_iters": 10, "auto_dt": true},
    "simulation": {"n_paths": 100000, "dt": 0.001, "start": {"t": 0.0, "x": [0.0]}, "control": {"constant": [0.0]}},
    "equilibrium": {
      "base": {"constant": [0.0]},
      "points": [{"t": 0.0, "x": [0.0]}, {"t": 0.5, "x": [1.0]}, {"t": 0.5, "x": [-1.0]}],
      "deviations": [[1.0], [-1.0], [0.5], [-0.5]],
      "h": [0.2, 0.1, 0.05, 0.025],
      "radii": [2.5, 5.0],
      "n_paths": 200000,
      "dt": 0.0125
    },
    "seed": 20240611,
    "output": "regulator_out"
  })");
}

}  // namespace tic
