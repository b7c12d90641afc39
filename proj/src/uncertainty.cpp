#include "evflex/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace evflex {

void UncertaintyParams::validate() const {
  if (!(delta >= 0.0) || !(epsilon >= 0.0) || !(lambda >= 0.0)) {
    throw std::invalid_argument(
        "uncertainty parameters delta, epsilon and lambda must be >= 0");
  }
}

NormalApprox beta_to_normal(double a, double b, double capacity) {
  if (!(a > 0.0) || !(b > 0.0)) {
    throw std::invalid_argument("beta shape parameters must be positive");
  }
  if (!(capacity >= 0.0)) {
    throw std::invalid_argument("PV capacity must be non-negative");
  }
  const double s = a + b;
  return {capacity * a / s, capacity * std::sqrt(a * b / (s * s * (s + 1.0)))};
}

double robust_margin(double nominal, const UncertaintyParams& params) {
  return -params.delta * std::max(1.0, std::abs(nominal)) +
         params.epsilon * params.lambda * nominal;
}

std::vector<NetLoadMoments> net_load_moments(const NetworkCase& c,
                                             double load_std_fraction) {
  std::vector<NetLoadMoments> out;
  out.reserve(c.buses.size() * static_cast<std::size_t>(c.periods));
  for (std::size_t n = 0; n < c.buses.size(); ++n) {
    for (int t = 0; t < c.periods; ++t) {
      NetLoadMoments m;
      m.bus = c.buses[n].id;
      m.period = t;
      double var_p = 0.0;
      double var_q = 0.0;
      for (const LoadProfile& d : c.loads) {
        if (d.bus != m.bus) continue;
        m.mean_p += d.p[t];
        m.mean_q += d.q[t];
        var_p += std::pow(load_std_fraction * d.p[t], 2);
        var_q += std::pow(load_std_fraction * d.q[t], 2);
      }
      for (const PVProfile& pv : c.pv_profiles) {
        if (pv.bus != m.bus) continue;
        const BetaShape& shape = pv.beta_params[t];
        const NormalApprox normal = beta_to_normal(shape.a, shape.b, pv.capacity);
        m.mean_p -= pv.p[t];
        var_p += normal.std * normal.std;
      }
      m.std_p = std::sqrt(var_p);
      m.std_q = std::sqrt(var_q);
      out.push_back(m);
    }
  }
  return out;
}

namespace {

const NetLoadMoments& lookup(const NetworkCase& c,
                             const std::vector<NetLoadMoments>& moments,
                             std::size_t n, int t) {
  const std::size_t k = n * static_cast<std::size_t>(c.periods) +
                        static_cast<std::size_t>(t);
  if (k < moments.size() && moments[k].bus == c.buses[n].id &&
      moments[k].period == t) {
    return moments[k];
  }
  for (const NetLoadMoments& m : moments) {
    if (m.bus == c.buses[n].id && m.period == t) return m;
  }
  throw std::invalid_argument("missing net-load moments for bus " +
                              std::to_string(c.buses[n].id) + ", period " +
                              std::to_string(t));
}

}  // namespace

std::vector<BalanceConstraint> deterministic_balance(
    const NetworkCase& c, const std::vector<NetLoadMoments>& moments) {
  std::vector<BalanceConstraint> rows;
  rows.reserve(2 * c.buses.size() * static_cast<std::size_t>(c.periods));
  for (std::size_t n = 0; n < c.buses.size(); ++n) {
    for (int t = 0; t < c.periods; ++t) {
      const NetLoadMoments& m = lookup(c, moments, n, t);
      rows.push_back({m.bus, t, BalanceKind::Active, m.mean_p, 0.0,
                      RowSense::Equal});
      rows.push_back({m.bus, t, BalanceKind::Reactive, m.mean_q, 0.0,
                      RowSense::Equal});
    }
  }
  return rows;
}

std::vector<BalanceConstraint> transform_balance(
    const NetworkCase& c, const UncertaintyParams& params,
    const std::vector<NetLoadMoments>& moments) {
  params.validate();
  std::vector<BalanceConstraint> rows = deterministic_balance(c, moments);
  if (params.is_zero()) return rows;
  for (BalanceConstraint& row : rows) {
    row.margin = robust_margin(row.nominal, params);
    row.sense = RowSense::GreaterEqual;
  }
  return rows;
}

double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace evflex
