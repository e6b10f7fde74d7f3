#include "tic/report.hpp"

#include <fstream>

namespace tic {

using nlohmann::json;

json run_header(const std::string& command, const std::string& config_hash, std::uint64_t seed) {
  return {{"tool", "ticctl"}, {"version", kToolVersion}, {"command", command}, {"config_hash", config_hash},
          {"seed", seed}};
}

json to_json(const ValidationReport& r) {
  json checks = json::array();
  for (const auto& c : r.checks) {
    checks.push_back({{"name", c.name},
                      {"status", to_string(c.status)},
                      {"worst", c.worst},
                      {"threshold", c.threshold},
                      {"detail", c.detail}});
  }
  return {{"probes", r.probes}, {"seed", r.seed}, {"all_pass", r.all_pass()}, {"checks", checks}};
}

json to_json(const Estimate& e) {
  return {{"mean", e.mean}, {"stderr", e.stderr}, {"n_paths", e.n_paths}, {"seed", e.seed}};
}

namespace {

json norms(const Norms& n) { return {{"sup", n.sup}, {"rms", n.rms}, {"nodes", n.count}}; }

json checks(const std::vector<NamedCheck>& list) {
  json a = json::array();
  for (const auto& c : list) a.push_back({{"name", c.name}, {"value", c.value}, {"threshold", c.threshold}, {"pass", c.pass}});
  return a;
}

}  // namespace

json to_json(const ResidualReport& r) {
  json nodes = json::array();
  for (const auto& n : r.argmax_violation_nodes) nodes.push_back({{"k", n.k}, {"x_index", n.idx}});
  return {{"pass", r.pass()},
          {"boundary", checks(r.boundary)},
          {"kolmogorov_f", norms(r.kolmogorov_f)},
          {"kolmogorov_g", norms(r.kolmogorov_g)},
          {"hjb", norms(r.hjb)},
          {"excluded_band",
           {{"width", r.thresholds.band}, {"kolmogorov_f", norms(r.band_f)}, {"kolmogorov_g", norms(r.band_g)},
            {"hjb", norms(r.band_hjb)}}},
          {"argmax_violations", r.argmax_violations},
          {"argmax_violation_nodes", nodes},
          {"tie_tolerance", r.thresholds.tie_tolerance},
          {"checks", checks(r.checks)}};
}

json to_json(const StandardResidualReport& r) {
  return {{"pass", r.pass()}, {"interior", norms(r.interior)}, {"all_nodes", norms(r.all)},
          {"terminal", r.terminal}, {"threshold", r.threshold}};
}

json to_json(const ConvergenceLog& log) {
  json sweeps = json::array();
  for (const auto& s : log.sweeps) {
    sweeps.push_back({{"sweep", s.sweep},
                      {"control_changes", s.control_changes},
                      {"f_residual_sup", s.f_residual_sup},
                      {"f_residual_rms", s.f_residual_rms},
                      {"g_residual_sup", s.g_residual_sup}});
  }
  return {{"converged", log.converged}, {"substeps", log.substeps}, {"dt_grid", log.dt_grid},
          {"dt_stable", log.dt_stable}, {"sweeps", sweeps}};
}

json to_json(const EquilibriumReport& r) {
  json points = json::array();
  for (const auto& p : r.points) points.push_back({{"t", p.t}, {"x", p.x}});
  json entries = json::array();
  for (const auto& e : r.entries) {
    json rows = json::array();
    for (const auto& row : e.rows) rows.push_back({{"h", row.h}, {"quotient", row.quotient}, {"stderr", row.stderr}});
    entries.push_back({{"point", e.point},
                       {"deviation", r.deviations[e.deviation]},
                       {"radius", r.radii[e.radius]},
                       {"rows", rows},
                       {"fit",
                        {{"ok", e.fit.ok},
                         {"weighted", e.fit.weighted},
                         {"intercept", e.fit.intercept},
                         {"intercept_stderr", e.fit.intercept_stderr},
                         {"slope", e.fit.slope},
                         {"slope_stderr", e.fit.slope_stderr}}},
                       {"tol_stat", e.tol_stat},
                       {"verdict", to_string(e.verdict)}});
  }
  return {{"verdict", to_string(r.overall)}, {"points", points},    {"deviations", r.deviations},
          {"radii", r.radii},                {"h", r.h},            {"n_paths", r.n_paths},
          {"seed", r.seed},                  {"fail_margin", r.fail_margin}, {"entries", entries}};
}

json to_json(const GridSpec& g) {
  json xs = json::array();
  for (const auto& a : g.x) xs.push_back({{"min", a.min}, {"max", a.max}, {"nodes", a.count}});
  return {{"t", {{"min", g.t.min}, {"max", g.t.max}, {"nodes", g.t.count}}}, {"x", xs}};
}

void write_json(const std::string& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw InputError(path, "cannot write file");
  os << j.dump(2) << '\n';
}

}  // namespace tic
