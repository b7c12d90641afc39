#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "evflex/acpf.hpp"
#include "evflex/grid_model.hpp"
#include "evflex/solver/nlp.hpp"
#include "evflex/solver/problem.hpp"
#include "evflex/uncertainty.hpp"

namespace evflex {

enum class PfMode { Unity, NonUnity };

std::string to_string(PfMode mode);
PfMode parse_pf_mode(const std::string& text);

/// Deterministic balance rows, or their chance-constrained equivalents.
struct DsoMode {
  bool uncertain = false;
  UncertaintyParams params;

  static DsoMode deterministic() { return {}; }
  static DsoMode with_uncertainty(const UncertaintyParams& p) { return {true, p}; }
};

struct DsoOptions {
  /// |Q^gf| cap per aggregator bus id in pu (EV count × socket rating).
  /// Buses without an entry are uncapped below.
  std::map<int, double> q_cap;
  double load_std_fraction = 0.0;
  solver::NlpOptions nlp;
};

/// Per aggregator bus and period flexible envelope, in pu.
struct FlexibilitySchedule {
  std::vector<int> buses;                  // aggregator bus ids
  int periods = 0;
  double base_mva = 10.0;
  std::vector<std::vector<double>> p_gf;   // [aggregator][t]
  std::vector<std::vector<double>> q_gf;

  /// Position of `bus_id` in `buses`; throws std::out_of_range.
  std::size_t slot(int bus_id) const;
  /// Σ_n Σ_t P^gf in MW.
  double total_p_mw() const;

  bool operator==(const FlexibilitySchedule&) const = default;
};

struct DsoSolution {
  FlexibilitySchedule schedule;
  std::vector<acpf::PeriodState> states;  // one per period
  solver::SolveReport report;
  double total_flex = 0.0;  // MW summed over periods
};

/// Variable and row bookkeeping of a built DSO problem.
struct DsoProblem {
  solver::ProblemSpec spec;
  acpf::PeriodLayout layout;
  std::size_t vars_per_period = 0;

  std::size_t var(int t, std::size_t local) const {
    return static_cast<std::size_t>(t) * vars_per_period + local;
  }
};

/// Flexibility maximization over all periods. Throws std::invalid_argument
/// when the case flags no aggregator bus.
DsoProblem build_dso_problem(const NetworkCase& c, const DsoMode& mode, PfMode pf,
                             const DsoOptions& options = {});

DsoSolution solve_dso(const NetworkCase& c, const DsoMode& mode, PfMode pf,
                      const DsoOptions& options = {});

/// Rebuilds per-period states and the schedule from a primal vector.
DsoSolution extract_solution(const NetworkCase& c, const DsoProblem& problem,
                             const solver::SolveReport& report);

struct SweepPoint {
  double epsilon = 0.0;
  double total_flex = 0.0;  // MW
  solver::SolveStatus status = solver::SolveStatus::NumericalFailure;
};

/// One uncertain solve per ε (ascending), δ and λ fixed.
std::vector<SweepPoint> epsilon_sweep(const NetworkCase& c,
                                      const std::vector<double>& eps_values,
                                      double delta, double lambda, PfMode pf,
                                      const DsoOptions& options = {});

/// Independent re-evaluation of every grid row at a solution: flow
/// definitions, balance rows (with their mode), generator, line and voltage
/// limits. Returns the largest violation in pu.
double audit_solution(const NetworkCase& c, const DsoMode& mode, const DsoSolution& sol,
                      double load_std_fraction = 0.0);

/// CSV columns: bus, period (1-based), p_gf_MW, q_gf_MVAr.
void write_flex_csv(const FlexibilitySchedule& s, const std::filesystem::path& path);
FlexibilitySchedule read_flex_csv(const std::filesystem::path& path, double base_mva);

/// CSV columns: bus, period (1-based), v_pu, theta_rad.
void write_voltages_csv(const NetworkCase& c, const DsoSolution& sol,
                        const std::filesystem::path& path);

}  // namespace evflex
