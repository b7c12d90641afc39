#include "evflex/ev_fleet.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace evflex {

std::uint64_t bus_seed(std::uint64_t base_seed, int bus) {
  // splitmix64 finalizer
  std::uint64_t z = base_seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(bus + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

void check(const TruncatedNormal& d, const char* name) {
  if (!(d.lo < d.hi) || !(d.std > 0.0) || !std::isfinite(d.mean)) {
    throw std::invalid_argument(std::string("fleet: unsatisfiable truncation for ") + name);
  }
}

}  // namespace

bool is_valid(const EvSpec& ev, int periods) {
  return ev.soc_min <= ev.soc_init && ev.soc_init <= ev.soc_max &&
         ev.soc_min <= ev.soc_desired && ev.soc_desired <= ev.soc_max &&
         ev.soc_desired >= ev.soc_init && 1 <= ev.t_arr && ev.t_arr < ev.t_dep &&
         ev.t_dep <= periods && ev.capacity_kwh > 0.0 && ev.socket_kva > 0.0 &&
         ev.eta > 0.0 && ev.eta <= 1.0;
}

std::vector<EvSpec> sample_fleet(int bus, int count, std::uint64_t seed,
                                 const FleetParams& params) {
  if (count < 0) throw std::invalid_argument("fleet: negative EV count");
  check(params.arrival, "arrival");
  check(params.departure, "departure");
  check(params.soc_init, "initial SOC");
  check(params.soc_desired, "desired SOC");
  const double lo_pct = std::max(params.soc_min * 100.0, params.soc_init.lo);
  const double hi_pct = std::min(params.soc_max * 100.0, params.soc_init.hi);
  const double sd_lo = std::max(params.soc_min * 100.0, params.soc_desired.lo);
  const double sd_hi = std::min(params.soc_max * 100.0, params.soc_desired.hi);
  if (!(lo_pct < hi_pct) || !(sd_lo < sd_hi)) {
    throw std::invalid_argument("fleet: unsatisfiable SOC truncation");
  }

  std::mt19937_64 rng(seed);
  auto draw = [&rng](const TruncatedNormal& d, double lo, double hi) {
    std::normal_distribution<double> normal(d.mean, d.std);
    for (int k = 0; k < 100000; ++k) {
      const double v = normal(rng);
      if (v >= lo && v <= hi) return v;
    }
    throw std::invalid_argument("fleet: truncation interval has negligible probability");
  };

  std::vector<EvSpec> fleet;
  fleet.reserve(static_cast<std::size_t>(count));
  // Arrival and initial SOC are drawn once per EV; departure and desired
  // SOC are redrawn until the EV is consistent.
  constexpr int kRedraws = 1000;
  int attempts = 0;
  while (static_cast<int>(fleet.size()) < count) {
    if (++attempts > params.max_attempts) {
      throw std::invalid_argument("fleet: rejection sampling did not fill the fleet");
    }
    EvSpec ev;
    ev.bus = bus;
    ev.id = static_cast<int>(fleet.size()) + 1;
    ev.capacity_kwh = params.capacity_kwh;
    ev.socket_kva = params.socket_kva;
    ev.eta = params.eta;
    ev.soc_min = params.soc_min;
    ev.soc_max = params.soc_max;
    const double fa = draw(params.arrival, params.arrival.lo, params.arrival.hi);
    const double si = draw(params.soc_init, lo_pct, hi_pct);
    ev.t_arr = static_cast<int>(std::lround(fa * params.periods));
    ev.soc_init = si / 100.0;
    if (ev.t_arr < 1 || ev.t_arr >= params.periods || si > sd_hi) continue;
    bool ok = false;
    for (int k = 0; k < kRedraws && !ok; ++k) {
      const double fd = draw(params.departure, params.departure.lo, params.departure.hi);
      const double sd = draw(params.soc_desired, sd_lo, sd_hi);
      ev.t_dep = static_cast<int>(std::lround(fd * params.periods));
      ev.soc_desired = sd / 100.0;
      if (ev.t_dep <= ev.t_arr || ev.t_dep > params.periods) continue;
      if (ev.soc_desired < ev.soc_init) continue;
      if (params.require_reachable) {
        const double reach = ev.eta * ev.socket_kva * params.delta_h * (ev.t_dep - ev.t_arr + 1);
        if (reach < (ev.soc_desired - ev.soc_init) * ev.capacity_kwh) continue;
      }
      ok = true;
    }
    if (ok) fleet.push_back(ev);
  }
  return fleet;
}

void write_fleet_csv(const std::vector<EvSpec>& fleet, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "bus,ev,capacity_kwh,socket_kva,eta,soc_min,soc_max,soc_init,soc_desired,t_arr,t_dep\n"
      << std::setprecision(17);
  for (const EvSpec& ev : fleet) {
    out << ev.bus << ',' << ev.id << ',' << ev.capacity_kwh << ',' << ev.socket_kva << ','
        << ev.eta << ',' << ev.soc_min << ',' << ev.soc_max << ',' << ev.soc_init << ','
        << ev.soc_desired << ',' << ev.t_arr << ',' << ev.t_dep << '\n';
  }
}

std::vector<EvSpec> read_fleet_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("bus,ev,", 0) != 0) throw std::runtime_error(path.string() + ": unexpected header");
  std::vector<EvSpec> fleet;
  int row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string f[11];
    int k = 0;
    for (; k < 11 && std::getline(row, f[k], ','); ++k) {
    }
    if (k != 11) {
      throw std::runtime_error(path.string() + ": line " + std::to_string(row_no) +
                               " has " + std::to_string(k) + " fields, expected 11");
    }
    EvSpec ev;
    ev.bus = std::stoi(f[0]);
    ev.id = std::stoi(f[1]);
    ev.capacity_kwh = std::stod(f[2]);
    ev.socket_kva = std::stod(f[3]);
    ev.eta = std::stod(f[4]);
    ev.soc_min = std::stod(f[5]);
    ev.soc_max = std::stod(f[6]);
    ev.soc_init = std::stod(f[7]);
    ev.soc_desired = std::stod(f[8]);
    ev.t_arr = std::stoi(f[9]);
    ev.t_dep = std::stoi(f[10]);
    fleet.push_back(ev);
  }
  return fleet;
}

}  // namespace evflex
