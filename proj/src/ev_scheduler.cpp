#include "evflex/ev_scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <stdexcept>

namespace evflex {

using solver::Constraint;
using solver::kInf;

double soc_update(double soc_prev, double p_kw, double eta, double delta_h, double capacity_kwh) {
  return soc_prev + eta * p_kw * delta_h / capacity_kwh;
}

AggregatorInput make_aggregator_input(const NetworkCase& c, const FlexibilitySchedule& s, int bus,
                                      std::vector<EvSpec> fleet) {
  AggregatorInput in;
  in.bus = bus;
  in.fleet = std::move(fleet);
  in.prices = c.prices;
  in.delta_h = c.delta_h;
  const std::size_t a = s.slot(bus);
  const double to_kw = s.base_mva * 1000.0;
  for (int t = 0; t < s.periods; ++t) {
    in.p_max_kw.push_back(std::max(0.0, s.p_gf[a][t]) * to_kw);
    in.q_min_kvar.push_back(std::min(0.0, s.q_gf[a][t]) * to_kw);
  }
  return in;
}

namespace {

bool plugged(const EvSpec& ev, int t) { return t + 1 >= ev.t_arr && t + 1 <= ev.t_dep; }

}  // namespace

AggregatorProblem build_aggregator_problem(const AggregatorInput& in) {
  const int T = in.periods();
  if (static_cast<int>(in.p_max_kw.size()) < T || static_cast<int>(in.q_min_kvar.size()) < T) {
    throw std::invalid_argument("aggregator: envelope shorter than the price horizon");
  }
  AggregatorProblem prob;
  solver::ProblemSpec& spec = prob.spec;
  spec.sense = solver::Sense::Minimize;
  const int f_dyn = spec.add_family("dynamics");
  const int f_disc = spec.add_family("socket_disc");
  const int f_dep = spec.add_family("departure_soc");
  const int f_box = spec.add_family("soc_box");
  const int f_win = spec.add_family("availability_window");
  const int f_env_p = spec.add_family("envelope_p");
  const int f_env_q = spec.add_family("envelope_q");

  for (const EvSpec& ev : in.fleet) {
    if (ev.t_arr < 1 || ev.t_dep > T || ev.t_arr >= ev.t_dep) {
      throw std::invalid_argument("aggregator: EV " + std::to_string(ev.id) +
                                  " has a window outside the horizon");
    }
    EvColumns cols;
    cols.p = static_cast<int>(spec.variable_count());
    for (int t = 0; t < T; ++t) {
      const bool on = plugged(ev, t);
      spec.add_variable(0.0, on ? kInf : 0.0, in.prices[t] * in.delta_h / 1000.0, 0.0);
    }
    cols.q = static_cast<int>(spec.variable_count());
    for (int t = 0; t < T; ++t) spec.add_variable(plugged(ev, t) ? -kInf : 0.0, 0.0, 0.0, 0.0);
    cols.soc = static_cast<int>(spec.variable_count());
    for (int t = 0; t < T; ++t) {
      // Before arrival the SOC cannot move.
      if (t + 1 < ev.t_arr) {
        spec.add_variable(ev.soc_init, ev.soc_init, 0.0, ev.soc_init);
      } else {
        spec.add_variable(-kInf, kInf, 0.0, ev.soc_init);
      }
    }
    prob.columns.push_back(cols);

    const double gain = ev.eta * in.delta_h / ev.capacity_kwh;
    for (int t = 0; t < T; ++t) {
      Constraint row;
      row.linear = {{cols.soc + t, 1.0}, {cols.p + t, -gain}};
      if (t > 0) row.linear.push_back({cols.soc + t - 1, -1.0});
      row.lower = row.upper = t == 0 ? ev.soc_init : 0.0;
      row.family = f_dyn;
      spec.add_constraint(std::move(row));
    }
    for (int t = 0; t < T; ++t) {
      Constraint row;
      row.squares = {{cols.p + t, 1.0}, {cols.q + t, 1.0}};
      row.upper = ev.socket_kva * ev.socket_kva;
      row.family = f_disc;
      spec.add_constraint(std::move(row));
    }
    {
      Constraint row;
      row.linear = {{cols.soc + ev.t_dep - 1, 1.0}};
      row.lower = ev.soc_desired;
      row.family = f_dep;
      prob.columns.back().departure_row = spec.constraints.size();
      spec.add_constraint(std::move(row));
    }
    for (int t = 0; t < T; ++t) {
      Constraint row;
      row.linear = {{cols.soc + t, 1.0}};
      row.lower = ev.soc_min;
      row.upper = ev.soc_max;
      row.family = f_box;
      spec.add_constraint(std::move(row));
    }
    for (int t = 0; t < T; ++t) {
      Constraint row;
      row.linear = {{cols.p + t, 1.0}, {cols.q + t, -1.0}};
      row.upper = plugged(ev, t) ? 2.0 * ev.socket_kva : 0.0;
      row.family = f_win;
      spec.add_constraint(std::move(row));
    }
  }
  for (int t = 0; t < T; ++t) {
    Constraint row;
    for (const EvColumns& cols : prob.columns) row.linear.push_back({cols.p + t, 1.0});
    row.upper = in.p_max_kw[t];
    row.family = f_env_p;
    spec.add_constraint(std::move(row));
  }
  for (int t = 0; t < T; ++t) {
    Constraint row;
    for (const EvColumns& cols : prob.columns) row.linear.push_back({cols.q + t, 1.0});
    row.lower = in.q_min_kvar[t];
    row.family = f_env_q;
    spec.add_constraint(std::move(row));
  }
  return prob;
}

double schedule_cost(const AggregatorInput& in, const std::vector<EvSchedule>& schedules) {
  double cost = 0.0;
  for (const EvSchedule& s : schedules) {
    for (std::size_t t = 0; t < s.p_kw.size(); ++t) {
      cost += in.prices[t] * s.p_kw[t] * in.delta_h / 1000.0;
    }
  }
  return cost;
}

namespace {

// Snaps the interior-point solution onto the physical rows: charging
// quadrant, socket disc and envelope caps hold exactly, and the SOC path
// follows the dynamics exactly.
void polish(const AggregatorInput& in, std::vector<EvSchedule>& out) {
  const int T = in.periods();
  for (std::size_t k = 0; k < out.size(); ++k) {
    const EvSpec& ev = in.fleet[k];
    for (int t = 0; t < T; ++t) {
      double& p = out[k].p_kw[t];
      double& q = out[k].q_kvar[t];
      if (!plugged(ev, t)) {
        p = q = 0.0;
        continue;
      }
      p = std::clamp(p, 0.0, ev.socket_kva);
      q = std::min(q, 0.0);
      if (p * p + q * q > ev.socket_kva * ev.socket_kva) {
        q = -std::sqrt(std::max(0.0, ev.socket_kva * ev.socket_kva - p * p));
      }
    }
  }
  for (int t = 0; t < T; ++t) {
    double sp = 0.0, sq = 0.0;
    for (const EvSchedule& s : out) {
      sp += s.p_kw[t];
      sq += s.q_kvar[t];
    }
    if (sp > in.p_max_kw[t] && sp > 0.0) {
      const double f = in.p_max_kw[t] / sp;
      for (EvSchedule& s : out) s.p_kw[t] *= f;
    }
    if (sq < in.q_min_kvar[t] && sq < 0.0) {
      const double f = in.q_min_kvar[t] / sq;
      for (EvSchedule& s : out) s.q_kvar[t] *= f;
    }
  }
  auto trace = [&](std::size_t k) {
    const EvSpec& ev = in.fleet[k];
    double soc = ev.soc_init;
    for (int t = 0; t < T; ++t) {
      soc = soc_update(soc, out[k].p_kw[t], ev.eta, in.delta_h, ev.capacity_kwh);
      out[k].soc[t] = soc;
    }
  };
  std::vector<double> used(T, 0.0);
  for (int t = 0; t < T; ++t) {
    for (const EvSchedule& s : out) used[t] += s.p_kw[t];
  }
  // Top up departure shortfalls left by the clipping, cheapest period first.
  // Envelope room comes first, then power lent by EVs with SOC to spare.
  for (std::size_t k = 0; k < out.size(); ++k) {
    const EvSpec& ev = in.fleet[k];
    trace(k);
    std::vector<int> order;
    for (int t = ev.t_arr - 1; t < ev.t_dep; ++t) order.push_back(t);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return in.prices[a] < in.prices[b]; });
    const double per_kw = ev.eta * in.delta_h / ev.capacity_kwh;
    for (int t : order) {
      const double short_soc = ev.soc_desired - out[k].soc[ev.t_dep - 1];
      if (short_soc <= 0.0) break;
      double peak = 0.0;
      for (int u = t; u < T; ++u) peak = std::max(peak, out[k].soc[u]);
      double& p = out[k].p_kw[t];
      const double q = out[k].q_kvar[t];
      const double room = std::min({std::sqrt(std::max(0.0, ev.socket_kva * ev.socket_kva - q * q)) - p,
                                    (ev.soc_max - peak) / per_kw, short_soc / per_kw});
      if (room <= 0.0) continue;
      const double direct = std::min(room, std::max(0.0, in.p_max_kw[t] - used[t]));
      double lent = 0.0;
      for (std::size_t j = 0; j < out.size() && direct + lent < room; ++j) {
        if (j == k || out[j].p_kw[t] <= 0.0) continue;
        const EvSpec& other = in.fleet[j];
        double spare = std::numeric_limits<double>::infinity();
        for (int u = t; u < T; ++u) spare = std::min(spare, out[j].soc[u] - other.soc_min);
        if (t < other.t_dep) spare = std::min(spare, out[j].soc[other.t_dep - 1] - other.soc_desired);
        if (spare <= 0.0) continue;
        const double give = std::min({room - direct - lent, out[j].p_kw[t],
                                      spare * other.capacity_kwh / (other.eta * in.delta_h)});
        out[j].p_kw[t] -= give;
        lent += give;
        trace(j);
      }
      p += direct + lent;
      used[t] += direct;
      trace(k);
    }
  }
}

}  // namespace

AggregatorResult schedule_fleet(const AggregatorInput& in, const solver::ConicOptions& options) {
  AggregatorProblem prob = build_aggregator_problem(in);
  AggregatorResult res;
  res.bus = in.bus;
  const int T = in.periods();
  // Departure rows missed after polishing are raised by twice the miss and
  // the problem solved again.
  for (int attempt = 0; attempt < 3; ++attempt) {
    res.report = solver::solve_conic(prob.spec, options);
    res.schedules.clear();
    if (!res.report.optimal()) return res;
    for (std::size_t k = 0; k < in.fleet.size(); ++k) {
      const EvColumns& cols = prob.columns[k];
      EvSchedule s;
      s.bus = in.bus;
      s.ev = in.fleet[k].id;
      s.p_kw.assign(res.report.primal.begin() + cols.p, res.report.primal.begin() + cols.p + T);
      s.q_kvar.assign(res.report.primal.begin() + cols.q, res.report.primal.begin() + cols.q + T);
      s.soc.assign(T, 0.0);
      res.schedules.push_back(std::move(s));
    }
    polish(in, res.schedules);
    bool short_any = false;
    for (std::size_t k = 0; k < in.fleet.size(); ++k) {
      const double miss = in.fleet[k].soc_desired - res.schedules[k].soc[in.fleet[k].t_dep - 1];
      if (miss > 1e-12) {
        short_any = true;
        solver::Constraint& row = prob.spec.constraints[prob.columns[k].departure_row];
        row.lower = std::min(in.fleet[k].soc_max, row.lower + 2.0 * miss);
      }
    }
    if (!short_any) break;
  }
  res.cost = schedule_cost(in, res.schedules);
  return res;
}

std::vector<ModeCost> operation_cost_matrix(
    const NetworkCase& c, const std::map<std::string, FlexibilitySchedule>& schedules,
    const std::map<int, std::vector<EvSpec>>& fleets, const solver::ConicOptions& options) {
  std::vector<ModeCost> out;
  for (const std::string& label : kModeLabels) {
    auto it = schedules.find(label);
    if (it == schedules.end()) continue;
    ModeCost mc;
    mc.model = label;
    mc.total_flex_mw = it->second.total_p_mw();
    for (int bus : it->second.buses) {
      auto f = fleets.find(bus);
      std::vector<EvSpec> fleet = f == fleets.end() ? std::vector<EvSpec>{} : f->second;
      const AggregatorResult r =
          schedule_fleet(make_aggregator_input(c, it->second, bus, std::move(fleet)), options);
      if (!r.report.optimal()) mc.status = r.report.status;
      mc.cost_usd += r.cost;
    }
    out.push_back(mc);
  }
  return out;
}

void write_ev_schedule_csv(const std::vector<AggregatorResult>& results,
                           const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "bus,ev,period,p_kW,q_kVAr,soc\n" << std::setprecision(12);
  for (const AggregatorResult& r : results) {
    for (const EvSchedule& s : r.schedules) {
      for (std::size_t t = 0; t < s.p_kw.size(); ++t) {
        out << s.bus << ',' << s.ev << ',' << t + 1 << ',' << s.p_kw[t] << ',' << s.q_kvar[t]
            << ',' << s.soc[t] << '\n';
      }
    }
  }
}

void write_costs_csv(const std::vector<ModeCost>& costs, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "model,cost_usd,total_flex_MW\n" << std::setprecision(12);
  for (const ModeCost& m : costs) {
    out << m.model << ',' << m.cost_usd << ',' << m.total_flex_mw << '\n';
  }
}

}  // namespace evflex
