#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "evflex/grid_model.hpp"

namespace evflex::acpf {

/// Feasibility tolerance applied to every residual, in per-unit.
inline constexpr double kFeasibilityTolerance = 1e-6;

struct BusState {
  double v = 1.0;
  double theta = 0.0;  // rad
};

/// Sending-end oriented branch flow.
struct LineFlow {
  double p = 0.0;
  double q = 0.0;
};

struct GeneratorDispatch {
  double p = 0.0;
  double q = 0.0;
};

/// Partial derivatives of a branch-flow expression with respect to its four
/// arguments.
struct FlowGradient {
  double d_v_s = 0.0;
  double d_v_r = 0.0;
  double d_theta_s = 0.0;
  double d_theta_r = 0.0;
};

double line_flow_p(double v_s, double v_r, double theta_s, double theta_r,
                   double g, double b);
double line_flow_q(double v_s, double v_r, double theta_s, double theta_r,
                   double g, double b);
FlowGradient line_flow_p_gradient(double v_s, double v_r, double theta_s,
                                  double theta_r, double g, double b);
FlowGradient line_flow_q_gradient(double v_s, double v_r, double theta_s,
                                  double theta_r, double g, double b);

/// Everything the grid equations need for one period. Vectors are indexed by
/// bus position, generator position and line position of the case.
struct PeriodState {
  std::vector<BusState> buses;
  std::vector<GeneratorDispatch> dispatch;
  std::vector<LineFlow> flows;
  std::vector<double> flex_p;  // per bus, zero off aggregator buses
  std::vector<double> flex_q;

  /// Flat start: v = 1, θ = 0, all flows, dispatch and flex zero.
  static PeriodState flat(const NetworkCase& c);
};

/// Sending-end flows evaluated from the bus state with the branch equations.
std::vector<LineFlow> evaluate_flows(const NetworkCase& c,
                                     const std::vector<BusState>& buses);

/// Active balance residual at bus `bus_id`, period `t`:
/// Σ P_g − Σ P_l − P^gf − (Σ P_d − P^pv). Outgoing lines contribute their
/// sending-end flow from `state.flows`; incoming lines contribute the branch
/// expression with endpoints swapped.
double balance_residual_p(const NetworkCase& c, int bus_id, int t,
                          const PeriodState& state);
double balance_residual_q(const NetworkCase& c, int bus_id, int t,
                          const PeriodState& state);

enum class LimitKind { Generator, Line, VoltageLower, VoltageUpper };

std::string to_string(LimitKind kind);

struct LimitResidual {
  LimitKind kind;
  int element_id;  // generator id, line id, or bus id
  int period;
  double value;    // ≥ 0 when satisfied
  bool feasible;
};

/// Residuals of the generator disc, line disc and voltage box limits for every
/// period in `states`.
std::vector<LimitResidual> limit_residuals(
    const NetworkCase& c, const std::vector<PeriodState>& states,
    double tolerance = kFeasibilityTolerance);

/// Column layout of one period's decision vector:
/// [V(N) | θ(N) | P_g(G) | Q_g(G) | P_l(L) | Q_l(L) | P^gf(A) | Q^gf(A)],
/// and row layout of its residual vector:
/// [flow P(L) | flow Q(L) | balance P(N) | balance Q(N) | gen disc(G) |
///  line disc(L) | V − V^min (N) | V^max − V (N)].
struct PeriodLayout {
  explicit PeriodLayout(const NetworkCase& c);

  std::size_t buses, generators, lines, aggregators;
  std::vector<int> aggregator_bus;       // bus position per aggregator slot
  std::vector<int> aggregator_of_bus;    // slot per bus position, or -1

  std::size_t v(std::size_t n) const { return n; }
  std::size_t theta(std::size_t n) const { return buses + n; }
  std::size_t pg(std::size_t g) const { return 2 * buses + g; }
  std::size_t qg(std::size_t g) const { return 2 * buses + generators + g; }
  std::size_t pl(std::size_t l) const { return 2 * buses + 2 * generators + l; }
  std::size_t ql(std::size_t l) const {
    return 2 * buses + 2 * generators + lines + l;
  }
  std::size_t pgf(std::size_t a) const {
    return 2 * buses + 2 * generators + 2 * lines + a;
  }
  std::size_t qgf(std::size_t a) const {
    return 2 * buses + 2 * generators + 2 * lines + aggregators + a;
  }
  std::size_t variable_count() const {
    return 2 * buses + 2 * generators + 2 * lines + 2 * aggregators;
  }

  std::size_t row_flow_p(std::size_t l) const { return l; }
  std::size_t row_flow_q(std::size_t l) const { return lines + l; }
  std::size_t row_balance_p(std::size_t n) const { return 2 * lines + n; }
  std::size_t row_balance_q(std::size_t n) const {
    return 2 * lines + buses + n;
  }
  std::size_t row_gen_disc(std::size_t g) const {
    return 2 * lines + 2 * buses + g;
  }
  std::size_t row_line_disc(std::size_t l) const {
    return 2 * lines + 2 * buses + generators + l;
  }
  std::size_t row_v_lower(std::size_t n) const {
    return 3 * lines + 2 * buses + generators + n;
  }
  std::size_t row_v_upper(std::size_t n) const {
    return 3 * lines + 3 * buses + generators + n;
  }
  std::size_t row_count() const { return 3 * lines + 4 * buses + generators; }

  Eigen::VectorXd pack(const PeriodState& s) const;
  PeriodState unpack(const NetworkCase& c, const Eigen::VectorXd& x) const;
};

/// Stacked residual vector of one period in PeriodLayout row order. Flow rows
/// are P_l − expression; disc rows are S² − P² − Q².
Eigen::VectorXd period_residuals(const NetworkCase& c, int t,
                                 const PeriodState& state);

/// Analytic Jacobian of period_residuals with respect to the PeriodLayout
/// decision vector.
Eigen::SparseMatrix<double> jacobian(const NetworkCase& c, int t,
                                     const PeriodState& state);

}  // namespace evflex::acpf
