#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "evflex/dso_flex.hpp"
#include "evflex/ev_fleet.hpp"
#include "evflex/grid_model.hpp"
#include "evflex/solver/conic.hpp"
#include "evflex/solver/problem.hpp"

namespace evflex {

/// SOC after charging at `p_kw` for `delta_h` hours.
double soc_update(double soc_prev, double p_kw, double eta, double delta_h, double capacity_kwh);

/// One aggregator's data: its fleet, prices and the DSO envelope converted to
/// kW / kVAr.
struct AggregatorInput {
  int bus = 0;
  std::vector<EvSpec> fleet;
  std::vector<double> prices;      // $/MWh per period
  std::vector<double> p_max_kw;    // Σ_k P ≤ p_max_kw[t]
  std::vector<double> q_min_kvar;  // Σ_k Q ≥ q_min_kvar[t]
  double delta_h = 0.25;

  int periods() const { return static_cast<int>(prices.size()); }
};

/// Extracts bus `bus` from a DSO schedule. Envelope values are clipped to
/// the charging quadrant (p ≥ 0, q ≤ 0).
AggregatorInput make_aggregator_input(const NetworkCase& c, const FlexibilitySchedule& s,
                                      int bus, std::vector<EvSpec> fleet);

struct EvSchedule {
  int bus = 0;
  int ev = 0;
  std::vector<double> p_kw;    // per period
  std::vector<double> q_kvar;
  std::vector<double> soc;     // after each period
};

struct AggregatorResult {
  int bus = 0;
  std::vector<EvSchedule> schedules;
  double cost = 0.0;  // $
  solver::SolveReport report;
};

/// Variable indices of one EV in a built aggregator problem.
struct EvColumns {
  int p = 0, q = 0, soc = 0;  // first column of each T-long block
  std::size_t departure_row = 0;
};

struct AggregatorProblem {
  solver::ProblemSpec spec;
  std::vector<EvColumns> columns;
};

/// Minimum-cost charging within the envelope. Throws std::invalid_argument
/// when prices or the envelope do not cover the EV windows.
AggregatorProblem build_aggregator_problem(const AggregatorInput& in);

AggregatorResult schedule_fleet(const AggregatorInput& in, const solver::ConicOptions& options = {});

/// Σ_t α_t·P_t·Δ over every EV, in $.
double schedule_cost(const AggregatorInput& in, const std::vector<EvSchedule>& schedules);

/// Table II row labels, in column order.
inline const std::vector<std::string> kModeLabels{"WOUWOQ", "WOUWQ", "WUWOQ", "WUWQ"};

struct ModeCost {
  std::string model;
  double cost_usd = 0.0;
  double total_flex_mw = 0.0;
  solver::SolveStatus status = solver::SolveStatus::Optimal;
};

/// Total aggregator cost per mode label given each mode's DSO schedule and
/// the fleets per bus.
std::vector<ModeCost> operation_cost_matrix(
    const NetworkCase& c, const std::map<std::string, FlexibilitySchedule>& schedules,
    const std::map<int, std::vector<EvSpec>>& fleets, const solver::ConicOptions& options = {});

/// CSV columns: bus, ev, period (1-based), p_kW, q_kVAr, soc.
void write_ev_schedule_csv(const std::vector<AggregatorResult>& results,
                           const std::filesystem::path& path);
/// CSV columns: model, cost_usd, total_flex_MW.
void write_costs_csv(const std::vector<ModeCost>& costs, const std::filesystem::path& path);

}  // namespace evflex
