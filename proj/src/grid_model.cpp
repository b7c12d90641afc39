#include "evflex/grid_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace evflex {

using nlohmann::json;

namespace {

std::string record_name(const char* section, std::size_t index) {
  return std::string(section) + "[" + std::to_string(index) + "]";
}

template <typename T>
T required(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw CaseError(where + ": missing field '" + key + "'");
  }
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw CaseError(where + ": field '" + key + "' has the wrong type");
  }
}

const json& required_array(const json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end() || !it->is_array()) {
    throw CaseError(std::string("case: missing array section '") + key + "'");
  }
  return *it;
}

std::vector<double> scaled(std::vector<double> v, double factor) {
  for (double& x : v) x *= factor;
  return v;
}

// Physical value that `forward` maps back onto the per-unit `pu` exactly,
// searched among the neighbours of the plain inverse.
template <typename F>
double exact_inverse(double pu, double guess, F forward) {
  if (forward(guess) == pu) return guess;
  double up = guess, down = guess;
  for (int i = 0; i < 16; ++i) {
    up = std::nextafter(up, HUGE_VAL);
    down = std::nextafter(down, -HUGE_VAL);
    if (forward(up) == pu) return up;
    if (forward(down) == pu) return down;
  }
  return guess;
}

double physical_power(double pu, double s_base) {
  return exact_inverse(pu, pu * s_base, [s_base](double f) { return f / s_base; });
}

std::vector<double> physical_series(const std::vector<double>& pu, double s_base) {
  std::vector<double> out;
  out.reserve(pu.size());
  const double k = 1.0 / s_base;
  for (double y : pu) out.push_back(exact_inverse(y, y * s_base, [k](double f) { return f * k; }));
  return out;
}

double physical_admittance(double pu, double z_base) {
  return exact_inverse(pu, pu / z_base, [z_base](double f) { return f * z_base; });
}

}  // namespace

std::size_t NetworkCase::bus_index(int id) const {
  if (id >= 1 && static_cast<std::size_t>(id) <= buses.size() &&
      buses[id - 1].id == id) {
    return static_cast<std::size_t>(id - 1);
  }
  throw CaseError("unknown bus " + std::to_string(id));
}

std::vector<int> NetworkCase::aggregator_buses() const {
  std::vector<int> ids;
  for (const Bus& b : buses) {
    if (b.has_aggregator) ids.push_back(b.id);
  }
  return ids;
}

double NetworkCase::load_p(std::size_t n, int t) const {
  double sum = 0.0;
  for (const LoadProfile& d : loads) {
    if (static_cast<std::size_t>(d.bus - 1) == n) sum += d.p[t];
  }
  return sum;
}

double NetworkCase::load_q(std::size_t n, int t) const {
  double sum = 0.0;
  for (const LoadProfile& d : loads) {
    if (static_cast<std::size_t>(d.bus - 1) == n) sum += d.q[t];
  }
  return sum;
}

double NetworkCase::pv_p(std::size_t n, int t) const {
  double sum = 0.0;
  for (const PVProfile& pv : pv_profiles) {
    if (static_cast<std::size_t>(pv.bus - 1) == n) sum += pv.p[t];
  }
  return sum;
}

double to_per_unit(double value_mw, double base_mva) {
  if (!(base_mva > 0.0)) {
    throw std::invalid_argument("per-unit base must be positive");
  }
  return value_mw / base_mva;
}

double base_impedance(double base_kv, double base_mva) {
  if (!(base_kv > 0.0) || !(base_mva > 0.0)) {
    throw std::invalid_argument("voltage and power bases must be positive");
  }
  return base_kv * base_kv / base_mva;
}

bool is_connected(const NetworkCase& c) {
  const std::size_t n = c.buses.size();
  if (n == 0) return false;
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  std::size_t components = n;
  for (const Line& l : c.lines) {
    auto a = find(c.bus_index(l.from_bus));
    auto b = find(c.bus_index(l.to_bus));
    if (a != b) {
      parent[a] = b;
      --components;
    }
  }
  return components == 1;
}

void validate_case(const NetworkCase& c) {
  if (!(c.base_mva > 0.0)) throw CaseError("meta: base_mva must be positive");
  if (!(c.base_kv > 0.0)) throw CaseError("meta: base_kv must be positive");
  if (c.periods < 1) throw CaseError("meta: T must be at least 1");
  if (!(c.delta_h > 0.0)) throw CaseError("meta: delta_h must be positive");
  if (c.buses.empty()) throw CaseError("buses: at least one bus is required");

  for (std::size_t i = 0; i < c.buses.size(); ++i) {
    const Bus& b = c.buses[i];
    const std::string where = record_name("buses", i) + " (id " +
                              std::to_string(b.id) + ")";
    if (b.id != static_cast<int>(i) + 1) {
      throw CaseError(where + ": bus ids must be unique and contiguous 1..N");
    }
    if (!(b.v_min > 0.0 && b.v_min < b.v_max)) {
      throw CaseError(where + ": require 0 < v_min < v_max");
    }
  }

  std::set<int> ids;
  for (std::size_t i = 0; i < c.lines.size(); ++i) {
    const Line& l = c.lines[i];
    const std::string where = record_name("lines", i) + " (id " +
                              std::to_string(l.id) + ")";
    if (!ids.insert(l.id).second) throw CaseError(where + ": duplicate id");
    for (int end : {l.from_bus, l.to_bus}) {
      try {
        c.bus_index(end);
      } catch (const CaseError&) {
        throw CaseError(where + ": unknown bus " + std::to_string(end));
      }
    }
    if (l.from_bus == l.to_bus) throw CaseError(where + ": self loop");
    if (!(l.s_max > 0.0)) throw CaseError(where + ": s_max must be positive");
    if (!std::isfinite(l.conductance) || !std::isfinite(l.susceptance)) {
      throw CaseError(where + ": non-finite admittance");
    }
  }

  ids.clear();
  for (std::size_t i = 0; i < c.generators.size(); ++i) {
    const Generator& g = c.generators[i];
    const std::string where = record_name("generators", i) + " (id " +
                              std::to_string(g.id) + ")";
    if (!ids.insert(g.id).second) throw CaseError(where + ": duplicate id");
    try {
      c.bus_index(g.bus);
    } catch (const CaseError&) {
      throw CaseError(where + ": unknown bus " + std::to_string(g.bus));
    }
    if (!(g.s_max > 0.0)) throw CaseError(where + ": s_max must be positive");
  }

  const auto T = static_cast<std::size_t>(c.periods);
  ids.clear();
  for (std::size_t i = 0; i < c.loads.size(); ++i) {
    const LoadProfile& d = c.loads[i];
    const std::string where = record_name("loads", i) + " (load_id " +
                              std::to_string(d.load_id) + ")";
    if (!ids.insert(d.load_id).second) throw CaseError(where + ": duplicate id");
    try {
      c.bus_index(d.bus);
    } catch (const CaseError&) {
      throw CaseError(where + ": unknown bus " + std::to_string(d.bus));
    }
    if (d.p.size() != T || d.q.size() != T) {
      throw CaseError(where + ": length mismatch, expected " +
                      std::to_string(T) + " entries in p and q");
    }
    for (double v : d.p) {
      if (!(v >= 0.0)) throw CaseError(where + ": active demand must be >= 0");
    }
    for (double v : d.q) {
      if (!std::isfinite(v)) throw CaseError(where + ": non-finite q");
    }
  }

  ids.clear();
  for (std::size_t i = 0; i < c.pv_profiles.size(); ++i) {
    const PVProfile& pv = c.pv_profiles[i];
    const std::string where = record_name("pv", i) + " (bus " +
                              std::to_string(pv.bus) + ")";
    try {
      c.bus_index(pv.bus);
    } catch (const CaseError&) {
      throw CaseError(where + ": unknown bus " + std::to_string(pv.bus));
    }
    if (!ids.insert(pv.bus).second) {
      throw CaseError(where + ": more than one PV profile at this bus");
    }
    if (pv.p.size() != T || pv.beta_params.size() != T) {
      throw CaseError(where + ": length mismatch, expected " +
                      std::to_string(T) + " entries in p and beta_params");
    }
    if (!(pv.capacity >= 0.0)) throw CaseError(where + ": negative capacity");
    const double slack = 1e-12 * std::max(1.0, pv.capacity);
    for (double v : pv.p) {
      if (!(v >= 0.0 && v <= pv.capacity + slack)) {
        throw CaseError(where + ": output outside [0, capacity]");
      }
    }
    for (const BetaShape& s : pv.beta_params) {
      if (!(s.a > 0.0 && s.b > 0.0)) {
        throw CaseError(where + ": beta shape parameters must be positive");
      }
    }
  }

  if (c.prices.size() != T) {
    throw CaseError("prices: length mismatch, expected " + std::to_string(T) +
                    " entries, got " + std::to_string(c.prices.size()));
  }
  for (double a : c.prices) {
    if (!(a >= 0.0)) throw CaseError("prices: entries must be >= 0");
  }

  if (!is_connected(c)) throw CaseError("lines: network graph is disconnected");
}

NetworkCase parse_case_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CaseError(std::string("case: not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw CaseError("case: top level must be an object");

  NetworkCase c;
  auto meta_it = doc.find("meta");
  if (meta_it == doc.end() || !meta_it->is_object()) {
    throw CaseError("case: missing object section 'meta'");
  }
  const json& meta = *meta_it;
  c.base_mva = required<double>(meta, "base_mva", "meta");
  c.base_kv = required<double>(meta, "base_kv", "meta");
  c.periods = required<int>(meta, "T", "meta");
  c.delta_h = required<double>(meta, "delta_h", "meta");
  if (!(c.base_mva > 0.0)) throw CaseError("meta: base_mva must be positive");
  if (!(c.base_kv > 0.0)) throw CaseError("meta: base_kv must be positive");

  const double s_base = c.base_mva;
  const double z_base = base_impedance(c.base_kv, c.base_mva);

  const json& buses = required_array(doc, "buses");
  for (std::size_t i = 0; i < buses.size(); ++i) {
    const std::string where = record_name("buses", i);
    Bus b;
    b.id = required<int>(buses[i], "id", where);
    b.v_min = required<double>(buses[i], "v_min", where);
    b.v_max = required<double>(buses[i], "v_max", where);
    b.has_aggregator = buses[i].value("has_aggregator", false);
    c.buses.push_back(b);
  }
  std::stable_sort(c.buses.begin(), c.buses.end(),
                   [](const Bus& a, const Bus& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < c.buses.size(); ++i) {
    if (c.buses[i].id == c.buses[i - 1].id) {
      throw CaseError("buses: duplicate id " + std::to_string(c.buses[i].id));
    }
  }

  const json& lines = required_array(doc, "lines");
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = record_name("lines", i);
    Line l;
    l.id = required<int>(lines[i], "id", where);
    l.from_bus = required<int>(lines[i], "from_bus", where);
    l.to_bus = required<int>(lines[i], "to_bus", where);
    l.conductance = required<double>(lines[i], "conductance", where) * z_base;
    l.susceptance = required<double>(lines[i], "susceptance", where) * z_base;
    l.s_max = to_per_unit(required<double>(lines[i], "s_max", where), s_base);
    c.lines.push_back(l);
  }

  const json& gens = required_array(doc, "generators");
  for (std::size_t i = 0; i < gens.size(); ++i) {
    const std::string where = record_name("generators", i);
    Generator g;
    g.id = required<int>(gens[i], "id", where);
    g.bus = required<int>(gens[i], "bus", where);
    g.s_max = to_per_unit(required<double>(gens[i], "s_max", where), s_base);
    c.generators.push_back(g);
  }

  const json& loads = required_array(doc, "loads");
  for (std::size_t i = 0; i < loads.size(); ++i) {
    const std::string where = record_name("loads", i);
    LoadProfile d;
    d.load_id = required<int>(loads[i], "load_id", where);
    d.bus = required<int>(loads[i], "bus", where);
    d.p = scaled(required<std::vector<double>>(loads[i], "p", where), 1.0 / s_base);
    d.q = scaled(required<std::vector<double>>(loads[i], "q", where), 1.0 / s_base);
    c.loads.push_back(std::move(d));
  }

  if (doc.contains("pv")) {
    const json& pvs = required_array(doc, "pv");
    for (std::size_t i = 0; i < pvs.size(); ++i) {
      const std::string where = record_name("pv", i);
      PVProfile pv;
      pv.bus = required<int>(pvs[i], "bus", where);
      pv.capacity = to_per_unit(required<double>(pvs[i], "capacity", where), s_base);
      pv.p = scaled(required<std::vector<double>>(pvs[i], "p", where), 1.0 / s_base);
      auto shapes =
          required<std::vector<std::vector<double>>>(pvs[i], "beta_params", where);
      for (const auto& ab : shapes) {
        if (ab.size() != 2) {
          throw CaseError(where + ": beta_params entries must be [a, b] pairs");
        }
        pv.beta_params.push_back({ab[0], ab[1]});
      }
      c.pv_profiles.push_back(std::move(pv));
    }
  }

  c.prices = required<std::vector<double>>(doc, "prices", "case");

  validate_case(c);
  return c;
}

NetworkCase parse_case(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CaseError("cannot open case file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_case_text(buffer.str());
}

std::string serialize_case(const NetworkCase& c) {
  const double s_base = c.base_mva;
  const double z_base = base_impedance(c.base_kv, c.base_mva);
  json doc;
  doc["meta"] = {{"base_mva", c.base_mva},
                 {"base_kv", c.base_kv},
                 {"T", c.periods},
                 {"delta_h", c.delta_h}};
  doc["buses"] = json::array();
  for (const Bus& b : c.buses) {
    doc["buses"].push_back({{"id", b.id},
                            {"v_min", b.v_min},
                            {"v_max", b.v_max},
                            {"has_aggregator", b.has_aggregator}});
  }
  doc["lines"] = json::array();
  for (const Line& l : c.lines) {
    doc["lines"].push_back({{"id", l.id},
                            {"from_bus", l.from_bus},
                            {"to_bus", l.to_bus},
                            {"conductance", physical_admittance(l.conductance, z_base)},
                            {"susceptance", physical_admittance(l.susceptance, z_base)},
                            {"s_max", physical_power(l.s_max, s_base)}});
  }
  doc["generators"] = json::array();
  for (const Generator& g : c.generators) {
    doc["generators"].push_back(
        {{"id", g.id}, {"bus", g.bus}, {"s_max", physical_power(g.s_max, s_base)}});
  }
  doc["loads"] = json::array();
  for (const LoadProfile& d : c.loads) {
    doc["loads"].push_back({{"load_id", d.load_id},
                            {"bus", d.bus},
                            {"p", physical_series(d.p, s_base)},
                            {"q", physical_series(d.q, s_base)}});
  }
  doc["pv"] = json::array();
  for (const PVProfile& pv : c.pv_profiles) {
    json shapes = json::array();
    for (const BetaShape& s : pv.beta_params) shapes.push_back({s.a, s.b});
    doc["pv"].push_back({{"bus", pv.bus},
                         {"capacity", physical_power(pv.capacity, s_base)},
                         {"p", physical_series(pv.p, s_base)},
                         {"beta_params", shapes}});
  }
  doc["prices"] = c.prices;
  return doc.dump(1);
}

void write_case(const NetworkCase& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw CaseError("cannot write case file " + path.string());
  out << serialize_case(c) << '\n';
}

}  // namespace evflex
