#include "tic/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace tic {

// ---------------------------------------------------------------------- Axis

Vec Axis::nodes() const {
  Vec v(count);
  for (std::size_t i = 0; i < count; ++i) v[i] = node(i);
  return v;
}

std::optional<std::size_t> Axis::locate(double v, double tol) const {
  const double h = step();
  const double r = (v - min) / h;
  const double ri = std::round(r);
  if (ri < 0.0 || ri > static_cast<double>(count - 1)) return std::nullopt;
  if (std::abs(r - ri) > tol * std::max(1.0, std::abs(r))) return std::nullopt;
  return static_cast<std::size_t>(ri);
}

std::size_t Axis::nearest(double v) const {
  const double r = std::round((v - min) / step());
  if (!(r > 0.0)) return 0;
  return std::min(static_cast<std::size_t>(r), count - 1);
}

std::size_t Axis::floor_index(double v) const {
  const double r = (v - min) / step();
  const double fl = std::floor(r + 1e-9 * std::max(1.0, std::abs(r)));
  if (!(fl > 0.0)) return 0;
  return std::min(static_cast<std::size_t>(fl), count - 1);
}

Axis Axis::from_nodes(const Vec& nodes, double rel_tol) {
  if (nodes.size() < 3) throw InputError("", "axis needs at least 3 nodes");
  Axis a{nodes.front(), nodes.back(), nodes.size()};
  if (!(a.max > a.min)) throw InputError("", "axis nodes must be strictly increasing");
  const double h = a.step();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (i > 0 && !(nodes[i] > nodes[i - 1])) throw InputError("", "axis nodes must be strictly increasing");
    if (std::abs(nodes[i] - a.node(i)) > rel_tol * h * std::max(1.0, static_cast<double>(i))) {
      throw InputError("", "axis spacing is not uniform");
    }
  }
  return a;
}

void Axis::check(const std::string& what) const {
  if (count < 3) throw InputError(what, "axis needs at least 3 nodes");
  if (!std::isfinite(min) || !std::isfinite(max) || !(max > min)) {
    throw InputError(what, "axis bounds must be finite with max > min");
  }
}

// ------------------------------------------------------------------ GridSpec

std::size_t GridSpec::x_nodes() const {
  std::size_t n = 1;
  for (const auto& a : x) n *= a.count;
  return n;
}

double GridSpec::min_dx() const {
  double h = std::numeric_limits<double>::infinity();
  for (const auto& a : x) h = std::min(h, a.step());
  return h;
}

void GridSpec::check() const {
  t.check("/grid/t");
  if (x.empty() || x.size() > 2) throw InputError("/grid/x", "state lattices support n = 1 or 2");
  for (std::size_t i = 0; i < x.size(); ++i) x[i].check("/grid/x/" + std::to_string(i));
}

// ------------------------------------------------------------------- Lattice

Lattice::Lattice(std::vector<Axis> axes, std::vector<AxisRole> roles)
    : axes_(std::move(axes)), roles_(std::move(roles)) {
  if (axes_.size() != roles_.size() || axes_.empty() || roles_.front() != AxisRole::Time) {
    throw InputError("", "lattice must start with a time axis");
  }
  strides_.assign(axes_.size(), 1);
  size_ = 1;
  for (std::size_t i = axes_.size(); i-- > 0;) {
    strides_[i] = size_;
    size_ *= axes_[i].count;
  }
}

Lattice Lattice::tx(const GridSpec& g) {
  std::vector<Axis> axes{g.t};
  std::vector<AxisRole> roles{AxisRole::Time};
  for (const auto& a : g.x) {
    axes.push_back(a);
    roles.push_back(AxisRole::State);
  }
  return Lattice(std::move(axes), std::move(roles));
}

Lattice Lattice::txy(const GridSpec& g) {
  std::vector<Axis> axes{g.t};
  std::vector<AxisRole> roles{AxisRole::Time};
  for (const auto& a : g.x) {
    axes.push_back(a);
    roles.push_back(AxisRole::RefState);
  }
  for (const auto& a : g.x) {
    axes.push_back(a);
    roles.push_back(AxisRole::State);
  }
  return Lattice(std::move(axes), std::move(roles));
}

Lattice Lattice::txsy(const GridSpec& g) {
  std::vector<Axis> axes{g.t, g.t};
  std::vector<AxisRole> roles{AxisRole::Time, AxisRole::RefTime};
  for (const auto& a : g.x) {
    axes.push_back(a);
    roles.push_back(AxisRole::RefState);
  }
  for (const auto& a : g.x) {
    axes.push_back(a);
    roles.push_back(AxisRole::State);
  }
  return Lattice(std::move(axes), std::move(roles));
}

std::size_t Lattice::n_state() const {
  return static_cast<std::size_t>(std::count(roles_.begin(), roles_.end(), AxisRole::State));
}
bool Lattice::has_ref_time() const { return ref_time_axis().has_value(); }
bool Lattice::has_ref_state() const {
  return std::find(roles_.begin(), roles_.end(), AxisRole::RefState) != roles_.end();
}

std::vector<std::size_t> Lattice::state_axes() const {
  std::vector<std::size_t> v;
  for (std::size_t i = 0; i < roles_.size(); ++i) {
    if (roles_[i] == AxisRole::State) v.push_back(i);
  }
  return v;
}

std::vector<std::size_t> Lattice::ref_state_axes() const {
  std::vector<std::size_t> v;
  for (std::size_t i = 0; i < roles_.size(); ++i) {
    if (roles_[i] == AxisRole::RefState) v.push_back(i);
  }
  return v;
}

std::optional<std::size_t> Lattice::ref_time_axis() const {
  for (std::size_t i = 0; i < roles_.size(); ++i) {
    if (roles_[i] == AxisRole::RefTime) return i;
  }
  return std::nullopt;
}

std::size_t Lattice::x_block() const {
  std::size_t n = 1;
  for (std::size_t a : state_axes()) n *= axes_[a].count;
  return n;
}

std::size_t Lattice::extra_count() const { return size_ / (axes_.front().count * x_block()); }

std::size_t Lattice::flat(const std::vector<std::size_t>& idx) const {
  std::size_t f = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) f += idx[i] * strides_[i];
  return f;
}

std::vector<std::size_t> Lattice::unflat(std::size_t flat) const {
  std::vector<std::size_t> idx(axes_.size());
  for (std::size_t i = 0; i < axes_.size(); ++i) {
    idx[i] = flat / strides_[i];
    flat %= strides_[i];
  }
  return idx;
}

Vec Lattice::coords(std::size_t flat) const {
  Vec c(axes_.size());
  for (std::size_t i = 0; i < axes_.size(); ++i) {
    c[i] = axes_[i].node(flat / strides_[i]);
    flat %= strides_[i];
  }
  return c;
}

std::vector<std::string> Lattice::axis_names() const {
  std::vector<std::string> names(axes_.size());
  std::size_t nx = 0, ny = 0;
  for (std::size_t i = 0; i < axes_.size(); ++i) {
    switch (roles_[i]) {
      case AxisRole::Time: names[i] = "t"; break;
      case AxisRole::RefTime: names[i] = "s"; break;
      case AxisRole::State: names[i] = "x" + std::to_string(++nx); break;
      case AxisRole::RefState: names[i] = "y" + std::to_string(++ny); break;
    }
  }
  return names;
}

GridSpec Lattice::grid() const {
  GridSpec g;
  g.t = axes_.front();
  for (std::size_t a : state_axes()) g.x.push_back(axes_[a]);
  return g;
}

// -------------------------------------------------------------- GridFunction

GridFunction::GridFunction(Lattice lattice, std::size_t arity, double fill)
    : lattice_(std::move(lattice)), arity_(arity), values_(lattice_.size() * arity, fill) {}

GridFunction::GridFunction(Lattice lattice, std::size_t arity, Vec values)
    : lattice_(std::move(lattice)), arity_(arity), values_(std::move(values)) {
  if (values_.size() != lattice_.size() * arity_) throw InputError("", "values do not match lattice shape");
}

bool GridFunction::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Vec GridFunction::interpolate(ConstSpan coords) const {
  const std::size_t r = lattice_.rank();
  if (coords.size() != r) throw DomainError("interpolation point has wrong rank");
  std::vector<std::size_t> lo(r);
  Vec w(r);
  for (std::size_t i = 0; i < r; ++i) {
    const Axis& a = lattice_.axes()[i];
    double p = (coords[i] - a.min) / a.step();
    p = std::clamp(p, 0.0, static_cast<double>(a.count - 1));
    std::size_t j = std::min(static_cast<std::size_t>(p), a.count - 2);
    lo[i] = j;
    w[i] = p - static_cast<double>(j);
  }
  Vec out(arity_, 0.0);
  const std::size_t corners = std::size_t{1} << r;
  for (std::size_t c = 0; c < corners; ++c) {
    double weight = 1.0;
    std::size_t f = 0;
    for (std::size_t i = 0; i < r; ++i) {
      const bool up = (c >> i) & 1U;
      weight *= up ? w[i] : 1.0 - w[i];
      f += (lo[i] + (up ? 1 : 0)) * lattice_.stride(i);
    }
    if (weight == 0.0) continue;
    for (std::size_t a = 0; a < arity_; ++a) out[a] += weight * at(f, a);
  }
  return out;
}

namespace {

// Columns are written as t, x..., s, y..., values regardless of storage order.
std::vector<std::size_t> csv_axis_order(const Lattice& lat) {
  std::vector<std::size_t> order;
  auto push_role = [&](AxisRole r) {
    for (std::size_t i = 0; i < lat.rank(); ++i) {
      if (lat.roles()[i] == r) order.push_back(i);
    }
  };
  push_role(AxisRole::Time);
  push_role(AxisRole::State);
  push_role(AxisRole::RefTime);
  push_role(AxisRole::RefState);
  return order;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    cell.erase(0, cell.find_first_not_of(" \t\r"));
    cell.erase(cell.find_last_not_of(" \t\r") + 1);
    out.push_back(cell);
  }
  return out;
}

}  // namespace

void GridFunction::write_csv(std::ostream& os, const std::vector<std::string>& value_names) const {
  const auto names = lattice_.axis_names();
  const auto order = csv_axis_order(lattice_);
  for (std::size_t i = 0; i < order.size(); ++i) os << (i ? "," : "") << names[order[i]];
  for (std::size_t a = 0; a < arity_; ++a) {
    std::string nm = a < value_names.size() ? value_names[a]
                                             : (arity_ == 1 ? "value" : "value" + std::to_string(a + 1));
    os << "," << nm;
  }
  os << "\n";
  char buf[32];
  for (std::size_t f = 0; f < lattice_.size(); ++f) {
    const Vec c = lattice_.coords(f);
    for (std::size_t i = 0; i < order.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", c[order[i]]);
      os << (i ? "," : "") << buf;
    }
    for (std::size_t a = 0; a < arity_; ++a) {
      std::snprintf(buf, sizeof buf, "%.17g", at(f, a));
      os << "," << buf;
    }
    os << "\n";
  }
}

void GridFunction::write_csv(const std::string& path, const std::vector<std::string>& value_names) const {
  std::ofstream os(path);
  if (!os) throw InputError(path, "cannot open for writing");
  write_csv(os, value_names);
}

GridFunction GridFunction::read_csv(std::istream& is, const std::string& source) {
  std::string line;
  if (!std::getline(is, line)) throw InputError(source, "empty file");
  const auto header = split_csv(line);
  struct Col {
    AxisRole role;
    std::size_t dim;
  };
  std::vector<std::optional<Col>> cols(header.size());
  std::size_t n_values = 0;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string& h = header[i];
    if (h == "t") {
      cols[i] = Col{AxisRole::Time, 0};
    } else if (h == "s") {
      cols[i] = Col{AxisRole::RefTime, 0};
    } else if (h.size() >= 2 && (h[0] == 'x' || h[0] == 'y') &&
               std::all_of(h.begin() + 1, h.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      cols[i] = Col{h[0] == 'x' ? AxisRole::State : AxisRole::RefState, std::stoul(h.substr(1)) - 1};
    } else {
      ++n_values;
    }
  }
  if (n_values == 0) throw InputError(source + ":1", "no value columns");
  std::vector<Vec> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw InputError(source + ":" + std::to_string(lineno), "wrong number of columns");
    }
    Vec r(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      char* end = nullptr;
      r[i] = std::strtod(cells[i].c_str(), &end);
      if (end == cells[i].c_str() || *end != '\0') {
        throw InputError(source + ":" + std::to_string(lineno), "not a number: '" + cells[i] + "'");
      }
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw InputError(source, "no data rows");

  // Storage order: t, s, y..., x...
  std::vector<std::size_t> storage_cols;
  std::vector<AxisRole> roles;
  auto add_role = [&](AxisRole role) {
    std::vector<std::pair<std::size_t, std::size_t>> found;
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (cols[i] && cols[i]->role == role) found.emplace_back(cols[i]->dim, i);
    }
    std::sort(found.begin(), found.end());
    for (auto [dim, i] : found) {
      storage_cols.push_back(i);
      roles.push_back(role);
    }
  };
  add_role(AxisRole::Time);
  add_role(AxisRole::RefTime);
  add_role(AxisRole::RefState);
  add_role(AxisRole::State);
  if (roles.empty() || roles.front() != AxisRole::Time) throw InputError(source + ":1", "missing 't' column");

  std::vector<Axis> axes;
  for (std::size_t c : storage_cols) {
    std::set<double> uniq;
    for (const auto& r : rows) uniq.insert(r[c]);
    try {
      axes.push_back(Axis::from_nodes(Vec(uniq.begin(), uniq.end())));
    } catch (const InputError& e) {
      throw InputError(source, "column '" + header[c] + "': " + e.what());
    }
  }
  Lattice lat(axes, roles);
  if (rows.size() != lat.size()) throw InputError(source, "row count does not match a full lattice");
  GridFunction gf(lat, n_values, std::numeric_limits<double>::quiet_NaN());
  std::vector<char> seen(lat.size(), 0);
  std::vector<std::size_t> idx(lat.rank());
  for (std::size_t ri = 0; ri < rows.size(); ++ri) {
    for (std::size_t a = 0; a < storage_cols.size(); ++a) {
      auto k = lat.axes()[a].locate(rows[ri][storage_cols[a]]);
      if (!k) throw InputError(source + ":" + std::to_string(ri + 2), "coordinate off lattice");
      idx[a] = *k;
    }
    const std::size_t f = lat.flat(idx);
    if (seen[f]) throw InputError(source + ":" + std::to_string(ri + 2), "duplicate lattice node");
    seen[f] = 1;
    std::size_t v = 0;
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (!cols[i]) gf.at(f, v++) = rows[ri][i];
    }
  }
  return gf;
}

GridFunction GridFunction::read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError(path, "cannot open file");
  return read_csv(is, path);
}

namespace {
constexpr char kMagic[8] = {'T', 'I', 'C', 'G', 'F', 'N', '\0', '\0'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw InputError("<binary>", "truncated grid file");
  return v;
}
}  // namespace

void GridFunction::write_binary(std::ostream& os) const {
  os.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(os, kBinaryVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(lattice_.rank()));
  for (std::size_t i = 0; i < lattice_.rank(); ++i) {
    put<std::uint8_t>(os, static_cast<std::uint8_t>(lattice_.roles()[i]));
    put<double>(os, lattice_.axes()[i].min);
    put<double>(os, lattice_.axes()[i].max);
    put<std::uint64_t>(os, lattice_.axes()[i].count);
  }
  put<std::uint64_t>(os, arity_);
  os.write(reinterpret_cast<const char*>(values_.data()), static_cast<std::streamsize>(values_.size() * sizeof(double)));
}

void GridFunction::write_binary(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError(path, "cannot open for writing");
  write_binary(os);
}

GridFunction GridFunction::read_binary(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw InputError("<binary>", "not a grid-function file");
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kBinaryVersion) throw InputError("<binary>", "unsupported grid file version " + std::to_string(version));
  const auto rank = get<std::uint32_t>(is);
  if (rank == 0 || rank > 8) throw InputError("<binary>", "bad lattice rank");
  std::vector<Axis> axes;
  std::vector<AxisRole> roles;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto role = get<std::uint8_t>(is);
    if (role > static_cast<std::uint8_t>(AxisRole::State)) throw InputError("<binary>", "bad axis role");
    roles.push_back(static_cast<AxisRole>(role));
    Axis a;
    a.min = get<double>(is);
    a.max = get<double>(is);
    a.count = get<std::uint64_t>(is);
    a.check("<binary>");
    axes.push_back(a);
  }
  const auto arity = get<std::uint64_t>(is);
  Lattice lat(std::move(axes), std::move(roles));
  Vec vals(lat.size() * arity);
  if (!is.read(reinterpret_cast<char*>(vals.data()), static_cast<std::streamsize>(vals.size() * sizeof(double)))) {
    throw InputError("<binary>", "truncated grid values");
  }
  return GridFunction(std::move(lat), arity, std::move(vals));
}

GridFunction GridFunction::read_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError(path, "cannot open file");
  return read_binary(is);
}

}  // namespace tic
