#include "evflex/acpf.hpp"

#include <cmath>
#include <stdexcept>

namespace evflex::acpf {

double line_flow_p(double v_s, double v_r, double theta_s, double theta_r,
                   double g, double b) {
  const double d = theta_s - theta_r;
  return g * v_s * v_s - g * v_s * v_r * std::cos(d) +
         b * v_s * v_r * std::sin(d);
}

double line_flow_q(double v_s, double v_r, double theta_s, double theta_r,
                   double g, double b) {
  const double d = theta_s - theta_r;
  return b * v_s * v_s - b * v_s * v_r * std::cos(d) -
         g * v_s * v_r * std::sin(d);
}

FlowGradient line_flow_p_gradient(double v_s, double v_r, double theta_s,
                                  double theta_r, double g, double b) {
  const double d = theta_s - theta_r;
  const double c = std::cos(d);
  const double s = std::sin(d);
  FlowGradient out;
  out.d_v_s = 2.0 * g * v_s - g * v_r * c + b * v_r * s;
  out.d_v_r = -g * v_s * c + b * v_s * s;
  out.d_theta_s = g * v_s * v_r * s + b * v_s * v_r * c;
  out.d_theta_r = -out.d_theta_s;
  return out;
}

FlowGradient line_flow_q_gradient(double v_s, double v_r, double theta_s,
                                  double theta_r, double g, double b) {
  const double d = theta_s - theta_r;
  const double c = std::cos(d);
  const double s = std::sin(d);
  FlowGradient out;
  out.d_v_s = 2.0 * b * v_s - b * v_r * c - g * v_r * s;
  out.d_v_r = -b * v_s * c - g * v_s * s;
  out.d_theta_s = b * v_s * v_r * s - g * v_s * v_r * c;
  out.d_theta_r = -out.d_theta_s;
  return out;
}

PeriodState PeriodState::flat(const NetworkCase& c) {
  PeriodState s;
  s.buses.assign(c.buses.size(), BusState{});
  s.dispatch.assign(c.generators.size(), GeneratorDispatch{});
  s.flows.assign(c.lines.size(), LineFlow{});
  s.flex_p.assign(c.buses.size(), 0.0);
  s.flex_q.assign(c.buses.size(), 0.0);
  return s;
}

std::vector<LineFlow> evaluate_flows(const NetworkCase& c,
                                     const std::vector<BusState>& buses) {
  std::vector<LineFlow> flows(c.lines.size());
  for (std::size_t l = 0; l < c.lines.size(); ++l) {
    const Line& line = c.lines[l];
    const BusState& s = buses[c.bus_index(line.from_bus)];
    const BusState& r = buses[c.bus_index(line.to_bus)];
    flows[l].p = line_flow_p(s.v, r.v, s.theta, r.theta, line.conductance,
                             line.susceptance);
    flows[l].q = line_flow_q(s.v, r.v, s.theta, r.theta, line.conductance,
                             line.susceptance);
  }
  return flows;
}

namespace {

void check_period(const NetworkCase& c, int t) {
  if (t < 0 || t >= c.periods) {
    throw std::out_of_range("unknown period " + std::to_string(t));
  }
}

template <typename Flow, typename Field>
double balance_residual(const NetworkCase& c, int bus_id, const PeriodState& s,
                        Flow reverse_flow, Field field, double net) {
  const std::size_t n = c.bus_index(bus_id);
  double r = 0.0;
  for (std::size_t g = 0; g < c.generators.size(); ++g) {
    if (c.bus_index(c.generators[g].bus) == n) r += field(s.dispatch[g]);
  }
  for (std::size_t l = 0; l < c.lines.size(); ++l) {
    const Line& line = c.lines[l];
    if (c.bus_index(line.from_bus) == n) {
      r -= field(s.flows[l]);
    } else if (c.bus_index(line.to_bus) == n) {
      const BusState& here = s.buses[n];
      const BusState& there = s.buses[c.bus_index(line.from_bus)];
      r -= reverse_flow(here.v, there.v, here.theta, there.theta,
                        line.conductance, line.susceptance);
    }
  }
  return r - net;
}

}  // namespace

double balance_residual_p(const NetworkCase& c, int bus_id, int t,
                          const PeriodState& state) {
  check_period(c, t);
  const std::size_t n = c.bus_index(bus_id);
  const double net = state.flex_p[n] + c.load_p(n, t) - c.pv_p(n, t);
  return balance_residual(
      c, bus_id, state, line_flow_p,
      [](const auto& x) { return x.p; }, net);
}

double balance_residual_q(const NetworkCase& c, int bus_id, int t,
                          const PeriodState& state) {
  check_period(c, t);
  const std::size_t n = c.bus_index(bus_id);
  const double net = state.flex_q[n] + c.load_q(n, t);
  return balance_residual(
      c, bus_id, state, line_flow_q,
      [](const auto& x) { return x.q; }, net);
}

std::string to_string(LimitKind kind) {
  switch (kind) {
    case LimitKind::Generator:
      return "generator_capacity";
    case LimitKind::Line:
      return "line_capacity";
    case LimitKind::VoltageLower:
      return "voltage_lower";
    case LimitKind::VoltageUpper:
      return "voltage_upper";
  }
  return "unknown";
}

std::vector<LimitResidual> limit_residuals(
    const NetworkCase& c, const std::vector<PeriodState>& states,
    double tolerance) {
  std::vector<LimitResidual> out;
  auto push = [&](LimitKind kind, int id, int t, double value) {
    out.push_back({kind, id, t, value, value >= -tolerance});
  };
  for (std::size_t t = 0; t < states.size(); ++t) {
    const PeriodState& s = states[t];
    const int period = static_cast<int>(t);
    for (std::size_t g = 0; g < c.generators.size(); ++g) {
      const double cap = c.generators[g].s_max;
      const auto& d = s.dispatch[g];
      push(LimitKind::Generator, c.generators[g].id, period,
           cap * cap - d.p * d.p - d.q * d.q);
    }
    for (std::size_t l = 0; l < c.lines.size(); ++l) {
      const double cap = c.lines[l].s_max;
      const auto& f = s.flows[l];
      push(LimitKind::Line, c.lines[l].id, period,
           cap * cap - f.p * f.p - f.q * f.q);
    }
    for (std::size_t n = 0; n < c.buses.size(); ++n) {
      push(LimitKind::VoltageLower, c.buses[n].id, period,
           s.buses[n].v - c.buses[n].v_min);
      push(LimitKind::VoltageUpper, c.buses[n].id, period,
           c.buses[n].v_max - s.buses[n].v);
    }
  }
  return out;
}

PeriodLayout::PeriodLayout(const NetworkCase& c)
    : buses(c.buses.size()),
      generators(c.generators.size()),
      lines(c.lines.size()),
      aggregators(0),
      aggregator_of_bus(c.buses.size(), -1) {
  for (std::size_t n = 0; n < c.buses.size(); ++n) {
    if (c.buses[n].has_aggregator) {
      aggregator_of_bus[n] = static_cast<int>(aggregator_bus.size());
      aggregator_bus.push_back(static_cast<int>(n));
    }
  }
  aggregators = aggregator_bus.size();
}

Eigen::VectorXd PeriodLayout::pack(const PeriodState& s) const {
  Eigen::VectorXd x(variable_count());
  for (std::size_t n = 0; n < buses; ++n) {
    x[v(n)] = s.buses[n].v;
    x[theta(n)] = s.buses[n].theta;
  }
  for (std::size_t g = 0; g < generators; ++g) {
    x[pg(g)] = s.dispatch[g].p;
    x[qg(g)] = s.dispatch[g].q;
  }
  for (std::size_t l = 0; l < lines; ++l) {
    x[pl(l)] = s.flows[l].p;
    x[ql(l)] = s.flows[l].q;
  }
  for (std::size_t a = 0; a < aggregators; ++a) {
    x[pgf(a)] = s.flex_p[aggregator_bus[a]];
    x[qgf(a)] = s.flex_q[aggregator_bus[a]];
  }
  return x;
}

PeriodState PeriodLayout::unpack(const NetworkCase& c,
                                 const Eigen::VectorXd& x) const {
  PeriodState s = PeriodState::flat(c);
  for (std::size_t n = 0; n < buses; ++n) {
    s.buses[n] = {x[v(n)], x[theta(n)]};
  }
  for (std::size_t g = 0; g < generators; ++g) {
    s.dispatch[g] = {x[pg(g)], x[qg(g)]};
  }
  for (std::size_t l = 0; l < lines; ++l) s.flows[l] = {x[pl(l)], x[ql(l)]};
  for (std::size_t a = 0; a < aggregators; ++a) {
    s.flex_p[aggregator_bus[a]] = x[pgf(a)];
    s.flex_q[aggregator_bus[a]] = x[qgf(a)];
  }
  return s;
}

Eigen::VectorXd period_residuals(const NetworkCase& c, int t,
                                 const PeriodState& state) {
  check_period(c, t);
  const PeriodLayout lay(c);
  Eigen::VectorXd r(lay.row_count());
  const auto expected = evaluate_flows(c, state.buses);
  for (std::size_t l = 0; l < lay.lines; ++l) {
    r[lay.row_flow_p(l)] = state.flows[l].p - expected[l].p;
    r[lay.row_flow_q(l)] = state.flows[l].q - expected[l].q;
  }
  for (std::size_t n = 0; n < lay.buses; ++n) {
    r[lay.row_balance_p(n)] = balance_residual_p(c, c.buses[n].id, t, state);
    r[lay.row_balance_q(n)] = balance_residual_q(c, c.buses[n].id, t, state);
  }
  const auto limits = limit_residuals(c, {state});
  // limit_residuals orders generators, lines, then (lower, upper) per bus.
  std::size_t k = 0;
  for (std::size_t g = 0; g < lay.generators; ++g) {
    r[lay.row_gen_disc(g)] = limits[k++].value;
  }
  for (std::size_t l = 0; l < lay.lines; ++l) {
    r[lay.row_line_disc(l)] = limits[k++].value;
  }
  for (std::size_t n = 0; n < lay.buses; ++n) {
    r[lay.row_v_lower(n)] = limits[k++].value;
    r[lay.row_v_upper(n)] = limits[k++].value;
  }
  return r;
}

Eigen::SparseMatrix<double> jacobian(const NetworkCase& c, int t,
                                     const PeriodState& state) {
  check_period(c, t);
  const PeriodLayout lay(c);
  std::vector<Eigen::Triplet<double>> trip;
  auto add = [&](std::size_t row, std::size_t col, double value) {
    trip.emplace_back(static_cast<int>(row), static_cast<int>(col), value);
  };

  for (std::size_t l = 0; l < lay.lines; ++l) {
    const Line& line = c.lines[l];
    const std::size_t s = c.bus_index(line.from_bus);
    const std::size_t r = c.bus_index(line.to_bus);
    const BusState& bs = state.buses[s];
    const BusState& br = state.buses[r];
    const double g = line.conductance;
    const double b = line.susceptance;

    // Flow-definition rows P_l − f(V, θ).
    const FlowGradient fp = line_flow_p_gradient(bs.v, br.v, bs.theta, br.theta, g, b);
    const FlowGradient fq = line_flow_q_gradient(bs.v, br.v, bs.theta, br.theta, g, b);
    add(lay.row_flow_p(l), lay.pl(l), 1.0);
    add(lay.row_flow_p(l), lay.v(s), -fp.d_v_s);
    add(lay.row_flow_p(l), lay.v(r), -fp.d_v_r);
    add(lay.row_flow_p(l), lay.theta(s), -fp.d_theta_s);
    add(lay.row_flow_p(l), lay.theta(r), -fp.d_theta_r);
    add(lay.row_flow_q(l), lay.ql(l), 1.0);
    add(lay.row_flow_q(l), lay.v(s), -fq.d_v_s);
    add(lay.row_flow_q(l), lay.v(r), -fq.d_v_r);
    add(lay.row_flow_q(l), lay.theta(s), -fq.d_theta_s);
    add(lay.row_flow_q(l), lay.theta(r), -fq.d_theta_r);

    // Balance rows: sending end uses the flow variable, receiving end the
    // reversed expression evaluated with (r, s) as (sending, receiving).
    add(lay.row_balance_p(s), lay.pl(l), -1.0);
    add(lay.row_balance_q(s), lay.ql(l), -1.0);
    const FlowGradient rp = line_flow_p_gradient(br.v, bs.v, br.theta, bs.theta, g, b);
    const FlowGradient rq = line_flow_q_gradient(br.v, bs.v, br.theta, bs.theta, g, b);
    add(lay.row_balance_p(r), lay.v(r), -rp.d_v_s);
    add(lay.row_balance_p(r), lay.v(s), -rp.d_v_r);
    add(lay.row_balance_p(r), lay.theta(r), -rp.d_theta_s);
    add(lay.row_balance_p(r), lay.theta(s), -rp.d_theta_r);
    add(lay.row_balance_q(r), lay.v(r), -rq.d_v_s);
    add(lay.row_balance_q(r), lay.v(s), -rq.d_v_r);
    add(lay.row_balance_q(r), lay.theta(r), -rq.d_theta_s);
    add(lay.row_balance_q(r), lay.theta(s), -rq.d_theta_r);

    add(lay.row_line_disc(l), lay.pl(l), -2.0 * state.flows[l].p);
    add(lay.row_line_disc(l), lay.ql(l), -2.0 * state.flows[l].q);
  }

  for (std::size_t g = 0; g < lay.generators; ++g) {
    const std::size_t n = c.bus_index(c.generators[g].bus);
    add(lay.row_balance_p(n), lay.pg(g), 1.0);
    add(lay.row_balance_q(n), lay.qg(g), 1.0);
    add(lay.row_gen_disc(g), lay.pg(g), -2.0 * state.dispatch[g].p);
    add(lay.row_gen_disc(g), lay.qg(g), -2.0 * state.dispatch[g].q);
  }

  for (std::size_t a = 0; a < lay.aggregators; ++a) {
    const auto n = static_cast<std::size_t>(lay.aggregator_bus[a]);
    add(lay.row_balance_p(n), lay.pgf(a), -1.0);
    add(lay.row_balance_q(n), lay.qgf(a), -1.0);
  }

  for (std::size_t n = 0; n < lay.buses; ++n) {
    add(lay.row_v_lower(n), lay.v(n), 1.0);
    add(lay.row_v_upper(n), lay.v(n), -1.0);
  }

  Eigen::SparseMatrix<double> jac(static_cast<int>(lay.row_count()),
                                  static_cast<int>(lay.variable_count()));
  jac.setFromTriplets(trip.begin(), trip.end());
  return jac;
}

}  // namespace evflex::acpf
