#pragma once

#include <vector>

#include "evflex/grid_model.hpp"

namespace evflex {

/// Parameters of the hybrid robust/stochastic balance transformation.
struct UncertaintyParams {
  double delta = 0.0;    // infeasibility tolerance
  double epsilon = 0.0;  // uncertainty level
  double lambda = 0.0;   // reliability multiplier

  /// Throws std::invalid_argument when any parameter is negative or NaN.
  void validate() const;
  bool is_zero() const {
    return delta == 0.0 && epsilon == 0.0 && lambda == 0.0;
  }
};

struct NormalApprox {
  double mean = 0.0;
  double std = 0.0;
};

/// Moment-matched normal for `capacity · Beta(a, b)`.
NormalApprox beta_to_normal(double a, double b, double capacity);

/// The two terms appended to the right-hand side of a transformed balance
/// row: −δ·max{1, |nominal|} + ε·λ·nominal.
double robust_margin(double nominal, const UncertaintyParams& params);

/// Net-load statistics for one bus and period, per-unit.
struct NetLoadMoments {
  int bus = 0;
  int period = 0;
  double mean_p = 0.0;  // Σ_d P_d − P^pv
  double mean_q = 0.0;  // Σ_d Q_d
  double std_p = 0.0;
  double std_q = 0.0;
};

/// Moments for every (bus, period), bus-major. Demand standard deviations are
/// `load_std_fraction` times the expected demand; PV contributes its
/// moment-matched beta spread.
std::vector<NetLoadMoments> net_load_moments(const NetworkCase& c,
                                             double load_std_fraction = 0.0);

enum class BalanceKind { Active, Reactive };
enum class RowSense { Equal, GreaterEqual };

/// One bus balance row in the form
///   supply − outflow − flex  (= or ≥)  nominal + margin.
struct BalanceConstraint {
  int bus = 0;
  int period = 0;
  BalanceKind kind = BalanceKind::Active;
  double nominal = 0.0;
  double margin = 0.0;
  RowSense sense = RowSense::Equal;

  double rhs() const { return nominal + margin; }
  bool operator==(const BalanceConstraint&) const = default;
};

/// Plain power-balance equalities (zero margin) for every bus and period.
std::vector<BalanceConstraint> deterministic_balance(
    const NetworkCase& c, const std::vector<NetLoadMoments>& moments);

/// Deterministic equivalents of the uncertain balance rows. All-zero
/// parameters reproduce deterministic_balance exactly; otherwise every row is
/// a one-sided ≥ inequality with the robust margin added. Throws
/// std::invalid_argument when `moments` misses a (bus, period) pair.
std::vector<BalanceConstraint> transform_balance(
    const NetworkCase& c, const UncertaintyParams& params,
    const std::vector<NetLoadMoments>& moments);

/// P(Z > z) for a standard normal Z.
double normal_upper_tail(double z);

}  // namespace evflex
