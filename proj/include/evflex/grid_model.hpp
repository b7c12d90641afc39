#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace evflex {

/// Raised for any malformed or inconsistent network case.
class CaseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Bus {
  int id = 0;
  double v_min = 0.9;  // pu
  double v_max = 1.1;  // pu
  bool has_aggregator = false;

  bool operator==(const Bus&) const = default;
};

/// Series branch in the `G − jβ` admittance convention, so that
/// P = G·Vs² − G·Vs·Vr·cos(θs−θr) + β·Vs·Vr·sin(θs−θr).
struct Line {
  int id = 0;
  int from_bus = 0;
  int to_bus = 0;
  double conductance = 0.0;  // pu
  double susceptance = 0.0;  // pu
  double s_max = 0.0;        // pu

  bool operator==(const Line&) const = default;
};

struct Generator {
  int id = 0;
  int bus = 0;
  double s_max = 0.0;  // pu

  bool operator==(const Generator&) const = default;
};

struct LoadProfile {
  int load_id = 0;
  int bus = 0;
  std::vector<double> p;  // pu, one entry per period
  std::vector<double> q;  // pu

  bool operator==(const LoadProfile&) const = default;
};

struct BetaShape {
  double a = 1.0;
  double b = 1.0;

  bool operator==(const BetaShape&) const = default;
};

struct PVProfile {
  int bus = 0;
  double capacity = 0.0;  // pu
  std::vector<double> p;  // expected output, pu
  std::vector<BetaShape> beta_params;

  bool operator==(const PVProfile&) const = default;
};

/// Full per-unit description of a distribution feeder over a horizon of
/// `periods` intervals of `delta_h` hours each. Buses are stored in id order
/// with ids 1..N; lines, generators, loads and PV keep file order.
struct NetworkCase {
  std::vector<Bus> buses;
  std::vector<Line> lines;
  std::vector<Generator> generators;
  std::vector<LoadProfile> loads;
  std::vector<PVProfile> pv_profiles;
  double base_mva = 10.0;
  double base_kv = 12.66;
  int periods = 96;
  double delta_h = 0.25;
  std::vector<double> prices;  // $/MWh

  bool operator==(const NetworkCase&) const = default;

  std::size_t bus_count() const { return buses.size(); }
  /// Zero-based position of bus `id`; throws CaseError for unknown ids.
  std::size_t bus_index(int id) const;
  std::vector<int> aggregator_buses() const;
  bool is_radial() const { return lines.size() + 1 == buses.size(); }

  /// Σ_d P_d at bus position `n` and period `t` (pu).
  double load_p(std::size_t n, int t) const;
  double load_q(std::size_t n, int t) const;
  /// Expected PV output at bus position `n` and period `t` (pu).
  double pv_p(std::size_t n, int t) const;
};

/// Per-unit conversion of a power quantity; throws std::invalid_argument for
/// non-positive bases.
double to_per_unit(double value_mw, double base_mva);

/// Base impedance in ohms for the given voltage (kV) and power (MVA) bases.
double base_impedance(double base_kv, double base_mva);

/// Checks every structural invariant; throws CaseError describing the first
/// offending record.
void validate_case(const NetworkCase& c);

/// True when every bus is reachable from the first bus through lines.
bool is_connected(const NetworkCase& c);

/// Reads a JSON case file (MW/MVAr/MVA, siemens) and converts to per-unit.
NetworkCase parse_case(const std::filesystem::path& path);
NetworkCase parse_case_text(const std::string& text);

/// Inverse of parse_case: writes physical units.
std::string serialize_case(const NetworkCase& c);
void write_case(const NetworkCase& c, const std::filesystem::path& path);

}  // namespace evflex
