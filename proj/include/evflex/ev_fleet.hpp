#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace evflex {

/// Static parameters of one EV. Periods are 1-based; the EV is plugged in
/// for every period in [t_arr, t_dep].
struct EvSpec {
  int bus = 0;
  int id = 0;
  double capacity_kwh = 30.0;
  double socket_kva = 11.0;
  double eta = 0.9;
  double soc_min = 0.2;
  double soc_max = 0.8;
  double soc_init = 0.5;
  double soc_desired = 0.5;
  int t_arr = 1;
  int t_dep = 2;

  bool operator==(const EvSpec&) const = default;
};

struct TruncatedNormal {
  double mean = 0.0;
  double std = 1.0;
  double lo = 0.0;
  double hi = 1.0;
};

struct FleetParams {
  TruncatedNormal arrival{0.66, 0.1, 0.0, 1.0};    // fraction of the day
  TruncatedNormal departure{0.82, 0.1, 0.0, 1.0};
  TruncatedNormal soc_init{48.0, 26.0, 20.0, 80.0};  // percent
  TruncatedNormal soc_desired{68.0, 20.0, 20.0, 80.0};
  double capacity_kwh = 30.0;
  double socket_kva = 11.0;
  double eta = 0.9;
  double soc_min = 0.2;
  double soc_max = 0.8;
  int periods = 96;
  double delta_h = 0.25;
  /// Also reject EVs that cannot reach their desired SOC at full socket
  /// power within their plug-in window.
  bool require_reachable = true;
  int max_attempts = 1000000;
};

/// Independent seed for the fleet at `bus`.
std::uint64_t bus_seed(std::uint64_t base_seed, int bus);

/// Draws `count` EVs by rejection sampling. Deterministic in `seed`.
/// Throws std::invalid_argument for empty truncation ranges or when the
/// acceptance rate is too low to fill the fleet.
std::vector<EvSpec> sample_fleet(int bus, int count, std::uint64_t seed,
                                 const FleetParams& params = {});

/// Checks the EvSpec invariants against a horizon of `periods`.
bool is_valid(const EvSpec& ev, int periods);

void write_fleet_csv(const std::vector<EvSpec>& fleet, const std::filesystem::path& path);
std::vector<EvSpec> read_fleet_csv(const std::filesystem::path& path);

}  // namespace evflex
