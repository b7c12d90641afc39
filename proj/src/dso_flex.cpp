#include "evflex/dso_flex.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace evflex {

using solver::Constraint;
using solver::kInf;
using solver::NonlinearTerm;

std::string to_string(PfMode mode) { return mode == PfMode::Unity ? "unity" : "non_unity"; }

PfMode parse_pf_mode(const std::string& text) {
  if (text == "unity") return PfMode::Unity;
  if (text == "non_unity" || text == "non-unity") return PfMode::NonUnity;
  throw std::invalid_argument("unknown power-factor mode '" + text + "'");
}

std::size_t FlexibilitySchedule::slot(int bus_id) const {
  auto it = std::find(buses.begin(), buses.end(), bus_id);
  if (it == buses.end()) {
    throw std::out_of_range("bus " + std::to_string(bus_id) + " has no flexibility envelope");
  }
  return static_cast<std::size_t>(it - buses.begin());
}

double FlexibilitySchedule::total_p_mw() const {
  double total = 0.0;
  for (const auto& row : p_gf) {
    for (double v : row) total += v;
  }
  return total * base_mva;
}

namespace {

struct LineData {
  double g, b;
};

// Flow row: P_l − f(V_s, V_r, θ_s, θ_r) with vars ordered (V_s, V_r, θ_s, θ_r).
NonlinearTerm flow_term(const std::vector<int>& vars, LineData d, bool active) {
  return {vars, [d, active](std::span<const double> x, std::span<double> grad) {
            const auto f = active ? acpf::line_flow_p : acpf::line_flow_q;
            const auto df = active ? acpf::line_flow_p_gradient : acpf::line_flow_q_gradient;
            const acpf::FlowGradient gr = df(x[0], x[1], x[2], x[3], d.g, d.b);
            grad[0] = -gr.d_v_s;
            grad[1] = -gr.d_v_r;
            grad[2] = -gr.d_theta_s;
            grad[3] = -gr.d_theta_r;
            return -f(x[0], x[1], x[2], x[3], d.g, d.b);
          }};
}

// Sum of reverse-orientation flows into a bus, negated. vars are
// (V_n, θ_n, V_a, θ_a, V_b, θ_b, ...) for incoming lines from a, b, ...
NonlinearTerm incoming_term(std::vector<int> vars, std::vector<LineData> lines, bool active) {
  return {std::move(vars), [lines = std::move(lines), active](std::span<const double> x,
                                                              std::span<double> grad) {
            const auto f = active ? acpf::line_flow_p : acpf::line_flow_q;
            const auto df = active ? acpf::line_flow_p_gradient : acpf::line_flow_q_gradient;
            std::fill(grad.begin(), grad.end(), 0.0);
            double value = 0.0;
            for (std::size_t k = 0; k < lines.size(); ++k) {
              const double vn = x[0], tn = x[1], vo = x[2 + 2 * k], to = x[3 + 2 * k];
              const LineData& d = lines[k];
              value -= f(vn, vo, tn, to, d.g, d.b);
              const acpf::FlowGradient gr = df(vn, vo, tn, to, d.g, d.b);
              grad[0] -= gr.d_v_s;
              grad[1] -= gr.d_theta_s;
              grad[2 + 2 * k] -= gr.d_v_r;
              grad[3 + 2 * k] -= gr.d_theta_r;
            }
            return value;
          }};
}

std::vector<BalanceConstraint> balance_rows(const NetworkCase& c, const DsoMode& mode,
                                            double load_std_fraction) {
  const auto moments = net_load_moments(c, load_std_fraction);
  if (!mode.uncertain) return deterministic_balance(c, moments);
  return transform_balance(c, mode.params, moments);
}

}  // namespace

DsoProblem build_dso_problem(const NetworkCase& c, const DsoMode& mode, PfMode pf,
                             const DsoOptions& options) {
  if (c.aggregator_buses().empty()) {
    throw std::invalid_argument("build_dso_problem: no aggregator buses flagged");
  }
  if (mode.uncertain) mode.params.validate();
  DsoProblem prob{solver::ProblemSpec{}, acpf::PeriodLayout(c), 0};
  const acpf::PeriodLayout& lay = prob.layout;
  prob.vars_per_period = lay.variable_count();
  solver::ProblemSpec& spec = prob.spec;
  spec.sense = solver::Sense::Maximize;

  const int f_flow_p = spec.add_family("line_flow_p");
  const int f_flow_q = spec.add_family("line_flow_q");
  const int f_bal_p = spec.add_family("balance_p");
  const int f_bal_q = spec.add_family("balance_q");
  const int f_gen = spec.add_family("generator_limit");
  const int f_line = spec.add_family("line_limit");
  const int f_unity = spec.add_family("unity_pf");

  const std::vector<BalanceConstraint> balance = balance_rows(c, mode, options.load_std_fraction);
  const std::size_t nb = c.buses.size();

  // Start: flat voltages, substation supplying the whole net load.
  for (int t = 0; t < c.periods; ++t) {
    double net_p = 0.0, net_q = 0.0;
    for (std::size_t n = 0; n < nb; ++n) {
      net_p += c.load_p(n, t) - c.pv_p(n, t);
      net_q += c.load_q(n, t);
    }
    const double share = 1.0 / static_cast<double>(std::max<std::size_t>(1, lay.generators));
    for (std::size_t n = 0; n < nb; ++n) {
      const Bus& bus = c.buses[n];
      spec.add_variable(bus.v_min, bus.v_max, 0.0, std::clamp(1.0, bus.v_min, bus.v_max));
    }
    for (std::size_t n = 0; n < nb; ++n) {
      // Angle reference at the first bus.
      if (n == 0) {
        spec.add_variable(0.0, 0.0, 0.0, 0.0);
      } else {
        spec.add_variable(-kInf, kInf, 0.0, 0.0);
      }
    }
    for (std::size_t g = 0; g < lay.generators; ++g) spec.add_variable(-kInf, kInf, 0.0, net_p * share);
    for (std::size_t g = 0; g < lay.generators; ++g) spec.add_variable(-kInf, kInf, 0.0, net_q * share);
    for (std::size_t l = 0; l < 2 * lay.lines; ++l) spec.add_variable(-kInf, kInf, 0.0, 0.0);
    for (std::size_t a = 0; a < lay.aggregators; ++a) spec.add_variable(0.0, kInf, 1.0, 0.0);
    for (std::size_t a = 0; a < lay.aggregators; ++a) {
      const int bus_id = c.buses[lay.aggregator_bus[a]].id;
      double lo = -kInf;
      if (auto it = options.q_cap.find(bus_id); it != options.q_cap.end()) lo = -it->second;
      spec.add_variable(pf == PfMode::Unity ? -kInf : lo, pf == PfMode::Unity ? kInf : 0.0, 0.0,
                        0.0);
    }
  }

  for (int t = 0; t < c.periods; ++t) {
    auto V = [&](std::size_t n) { return static_cast<int>(prob.var(t, lay.v(n))); };
    auto TH = [&](std::size_t n) { return static_cast<int>(prob.var(t, lay.theta(n))); };
    for (std::size_t l = 0; l < lay.lines; ++l) {
      const Line& line = c.lines[l];
      const std::size_t s = c.bus_index(line.from_bus), r = c.bus_index(line.to_bus);
      const std::vector<int> vars{V(s), V(r), TH(s), TH(r)};
      const LineData d{line.conductance, line.susceptance};
      if (line.s_max <= 0.0) {
        // No flow: both ends share voltage and angle.
        for (const auto& [a, b, fam] : {std::tuple{V(s), V(r), f_flow_p}, std::tuple{TH(s), TH(r), f_flow_q}}) {
          Constraint row;
          row.linear = {{a, 1.0}, {b, -1.0}};
          row.lower = row.upper = 0.0;
          row.family = fam;
          spec.add_constraint(std::move(row));
        }
        continue;
      }
      Constraint cp;
      cp.linear = {{static_cast<int>(prob.var(t, lay.pl(l))), 1.0}};
      cp.nonlinear = flow_term(vars, d, true);
      cp.lower = cp.upper = 0.0;
      cp.family = f_flow_p;
      spec.add_constraint(std::move(cp));
      Constraint cq;
      cq.linear = {{static_cast<int>(prob.var(t, lay.ql(l))), 1.0}};
      cq.nonlinear = flow_term(vars, d, false);
      cq.lower = cq.upper = 0.0;
      cq.family = f_flow_q;
      spec.add_constraint(std::move(cq));
    }
    for (std::size_t n = 0; n < nb; ++n) {
      const int id = c.buses[n].id;
      for (int k = 0; k < 2; ++k) {
        const bool active = k == 0;
        Constraint row;
        for (std::size_t g = 0; g < lay.generators; ++g) {
          if (c.generators[g].bus == id) {
            row.linear.push_back({static_cast<int>(prob.var(t, active ? lay.pg(g) : lay.qg(g))), 1.0});
          }
        }
        std::vector<int> in_vars{V(n), TH(n)};
        std::vector<LineData> in_lines;
        for (std::size_t l = 0; l < lay.lines; ++l) {
          const Line& line = c.lines[l];
          if (line.from_bus == id) {
            row.linear.push_back({static_cast<int>(prob.var(t, active ? lay.pl(l) : lay.ql(l))), -1.0});
          } else if (line.to_bus == id && line.s_max > 0.0) {
            const std::size_t o = c.bus_index(line.from_bus);
            in_vars.push_back(V(o));
            in_vars.push_back(TH(o));
            in_lines.push_back({line.conductance, line.susceptance});
          }
        }
        if (!in_lines.empty()) row.nonlinear = incoming_term(in_vars, in_lines, active);
        if (const int a = lay.aggregator_of_bus[n]; a >= 0) {
          row.linear.push_back({static_cast<int>(prob.var(t, active ? lay.pgf(a) : lay.qgf(a))), -1.0});
        }
        const BalanceConstraint& bc =
            balance[2 * (n * static_cast<std::size_t>(c.periods) + static_cast<std::size_t>(t)) +
                    (active ? 0 : 1)];
        row.lower = bc.rhs();
        row.upper = bc.sense == RowSense::Equal ? bc.rhs() : kInf;
        row.family = active ? f_bal_p : f_bal_q;
        spec.add_constraint(std::move(row));
      }
    }
    for (std::size_t g = 0; g < lay.generators; ++g) {
      Constraint row;
      row.squares = {{static_cast<int>(prob.var(t, lay.pg(g))), 1.0},
                     {static_cast<int>(prob.var(t, lay.qg(g))), 1.0}};
      row.upper = c.generators[g].s_max * c.generators[g].s_max;
      row.family = f_gen;
      spec.add_constraint(std::move(row));
    }
    for (std::size_t l = 0; l < lay.lines; ++l) {
      const double smax = c.lines[l].s_max;
      const int pv = static_cast<int>(prob.var(t, lay.pl(l)));
      const int qv = static_cast<int>(prob.var(t, lay.ql(l)));
      if (smax <= 0.0) {
        // A zero rating admits no flow at all.
        for (int v : {pv, qv}) {
          Constraint row;
          row.linear = {{v, 1.0}};
          row.lower = row.upper = 0.0;
          row.family = f_line;
          spec.add_constraint(std::move(row));
        }
        continue;
      }
      Constraint row;
      row.squares = {{pv, 1.0}, {qv, 1.0}};
      row.upper = smax * smax;
      row.family = f_line;
      spec.add_constraint(std::move(row));
    }
    if (pf == PfMode::Unity) {
      for (std::size_t a = 0; a < lay.aggregators; ++a) {
        Constraint row;
        row.linear = {{static_cast<int>(prob.var(t, lay.qgf(a))), 1.0}};
        row.lower = row.upper = 0.0;
        row.family = f_unity;
        spec.add_constraint(std::move(row));
      }
    }
  }
  return prob;
}

DsoSolution extract_solution(const NetworkCase& c, const DsoProblem& problem,
                             const solver::SolveReport& report) {
  const acpf::PeriodLayout& lay = problem.layout;
  DsoSolution sol;
  sol.report = report;
  FlexibilitySchedule& fs = sol.schedule;
  fs.periods = c.periods;
  fs.base_mva = c.base_mva;
  for (int idx : lay.aggregator_bus) fs.buses.push_back(c.buses[idx].id);
  fs.p_gf.assign(lay.aggregators, std::vector<double>(c.periods, 0.0));
  fs.q_gf.assign(lay.aggregators, std::vector<double>(c.periods, 0.0));
  if (report.primal.size() != problem.spec.variable_count()) return sol;
  for (int t = 0; t < c.periods; ++t) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(problem.vars_per_period));
    for (std::size_t k = 0; k < problem.vars_per_period; ++k) {
      x[static_cast<Eigen::Index>(k)] = report.primal[problem.var(t, k)];
    }
    sol.states.push_back(lay.unpack(c, x));
    for (std::size_t a = 0; a < lay.aggregators; ++a) {
      fs.p_gf[a][t] = x[static_cast<Eigen::Index>(lay.pgf(a))];
      fs.q_gf[a][t] = x[static_cast<Eigen::Index>(lay.qgf(a))];
    }
  }
  sol.total_flex = fs.total_p_mw();
  return sol;
}

DsoSolution solve_dso(const NetworkCase& c, const DsoMode& mode, PfMode pf,
                      const DsoOptions& options) {
  const DsoProblem prob = build_dso_problem(c, mode, pf, options);
  const solver::SolveReport rep = solver::solve_nlp(prob.spec, options.nlp);
  DsoSolution sol = extract_solution(c, prob, rep);
  if (pf == PfMode::Unity) {
    for (auto& row : sol.schedule.q_gf) std::fill(row.begin(), row.end(), 0.0);
  }
  return sol;
}

std::vector<SweepPoint> epsilon_sweep(const NetworkCase& c, const std::vector<double>& eps_values,
                                      double delta, double lambda, PfMode pf,
                                      const DsoOptions& options) {
  if (eps_values.empty()) throw std::invalid_argument("epsilon_sweep: empty epsilon list");
  if (!std::is_sorted(eps_values.begin(), eps_values.end())) {
    throw std::invalid_argument("epsilon_sweep: epsilon values must be ascending");
  }
  std::vector<SweepPoint> out;
  for (double eps : eps_values) {
    const DsoMode mode = DsoMode::with_uncertainty({delta, eps, lambda});
    const DsoSolution sol = solve_dso(c, mode, pf, options);
    out.push_back({eps, sol.total_flex, sol.report.status});
  }
  return out;
}

double audit_solution(const NetworkCase& c, const DsoMode& mode, const DsoSolution& sol,
                      double load_std_fraction) {
  const std::vector<BalanceConstraint> balance = balance_rows(c, mode, load_std_fraction);
  const acpf::PeriodLayout lay(c);
  double worst = 0.0;
  for (int t = 0; t < c.periods && t < static_cast<int>(sol.states.size()); ++t) {
    const acpf::PeriodState& st = sol.states[t];
    const std::vector<acpf::LineFlow> flows = acpf::evaluate_flows(c, st.buses);
    for (std::size_t l = 0; l < flows.size(); ++l) {
      worst = std::max({worst, std::abs(flows[l].p - st.flows[l].p),
                        std::abs(flows[l].q - st.flows[l].q)});
    }
    for (std::size_t n = 0; n < c.buses.size(); ++n) {
      const int id = c.buses[n].id;
      for (int k = 0; k < 2; ++k) {
        const BalanceConstraint& bc =
            balance[2 * (n * static_cast<std::size_t>(c.periods) + static_cast<std::size_t>(t)) + k];
        // Residual with nominal net load already subtracted.
        const double r = k == 0 ? acpf::balance_residual_p(c, id, t, st)
                                : acpf::balance_residual_q(c, id, t, st);
        const double shortfall = bc.margin - r;
        worst = std::max(worst, bc.sense == RowSense::Equal ? std::abs(r - bc.margin)
                                                            : std::max(0.0, shortfall));
      }
    }
    for (std::size_t a = 0; a < lay.aggregators; ++a) {
      worst = std::max(worst, -sol.schedule.p_gf[a][t]);
    }
  }
  std::vector<acpf::PeriodState> states(sol.states.begin(), sol.states.end());
  for (const acpf::LimitResidual& r : acpf::limit_residuals(c, states, 0.0)) {
    double v = r.value;
    // Disc residuals are in squared units; convert to a magnitude excess.
    if (r.kind == acpf::LimitKind::Generator || r.kind == acpf::LimitKind::Line) {
      double smax = 0.0;
      if (r.kind == acpf::LimitKind::Generator) {
        for (const Generator& g : c.generators) {
          if (g.id == r.element_id) smax = g.s_max;
        }
      } else {
        for (const Line& l : c.lines) {
          if (l.id == r.element_id) smax = l.s_max;
        }
      }
      const double s2 = smax * smax - v;
      v = smax - std::sqrt(std::max(0.0, s2));
    }
    worst = std::max(worst, -v);
  }
  return worst;
}

void write_flex_csv(const FlexibilitySchedule& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "bus,period,p_gf_MW,q_gf_MVAr\n" << std::setprecision(17);
  for (std::size_t a = 0; a < s.buses.size(); ++a) {
    for (int t = 0; t < s.periods; ++t) {
      out << s.buses[a] << ',' << t + 1 << ',' << s.p_gf[a][t] * s.base_mva << ','
          << s.q_gf[a][t] * s.base_mva << '\n';
    }
  }
}

FlexibilitySchedule read_flex_csv(const std::filesystem::path& path, double base_mva) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("bus,period,p_gf_MW,q_gf_MVAr", 0) != 0) {
    throw std::runtime_error(path.string() + ": unexpected header");
  }
  FlexibilitySchedule s;
  s.base_mva = base_mva;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string f[4];
    for (auto& field : f) std::getline(row, field, ',');
    const int bus = std::stoi(f[0]);
    const int period = std::stoi(f[1]);
    auto it = std::find(s.buses.begin(), s.buses.end(), bus);
    if (it == s.buses.end()) {
      s.buses.push_back(bus);
      s.p_gf.emplace_back();
      s.q_gf.emplace_back();
      it = s.buses.end() - 1;
    }
    const auto a = static_cast<std::size_t>(it - s.buses.begin());
    if (period != static_cast<int>(s.p_gf[a].size()) + 1) {
      throw std::runtime_error(path.string() + ": periods out of order for bus " + f[0]);
    }
    s.p_gf[a].push_back(std::stod(f[2]) / base_mva);
    s.q_gf[a].push_back(std::stod(f[3]) / base_mva);
  }
  s.periods = s.p_gf.empty() ? 0 : static_cast<int>(s.p_gf.front().size());
  for (const auto& row : s.p_gf) {
    if (static_cast<int>(row.size()) != s.periods) {
      throw std::runtime_error(path.string() + ": buses have different period counts");
    }
  }
  return s;
}

void write_voltages_csv(const NetworkCase& c, const DsoSolution& sol,
                        const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "bus,period,v_pu,theta_rad\n" << std::setprecision(12);
  for (std::size_t n = 0; n < c.buses.size(); ++n) {
    for (std::size_t t = 0; t < sol.states.size(); ++t) {
      out << c.buses[n].id << ',' << t + 1 << ',' << sol.states[t].buses[n].v << ','
          << sol.states[t].buses[n].theta << '\n';
    }
  }
}

}  // namespace evflex
