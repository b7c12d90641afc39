#pragma once

// Property checks shared by the unit tests and the acceptance binary. Each
// check draws `cases` random instances from a fixed seed and reports the
// number of failures and the worst observed error.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "evflex/acpf.hpp"
#include "evflex/ev_fleet.hpp"
#include "evflex/ev_scheduler.hpp"
#include "evflex/grid_model.hpp"
#include "evflex/solver/conic.hpp"
#include "evflex/solver/nlp.hpp"
#include "evflex/uncertainty.hpp"

namespace props {

struct Result {
  std::string name;
  long cases = 0;
  long failures = 0;
  double worst = 0.0;  // largest error seen (meaning depends on the check)

  bool ok() const { return failures == 0 && cases > 0; }
  void record(bool pass, double err = 0.0) {
    ++cases;
    if (!pass) ++failures;
    if (std::isfinite(err)) worst = std::max(worst, err);
  }
};

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Random radial case with 2-6 buses and 1-5 periods.
inline evflex::NetworkCase random_case(Rng& rng) {
  using namespace evflex;
  NetworkCase c;
  const int n = std::uniform_int_distribution<int>(2, 6)(rng);
  c.periods = std::uniform_int_distribution<int>(1, 5)(rng);
  c.base_mva = uniform(rng, 1.0, 100.0);
  c.base_kv = uniform(rng, 1.0, 50.0);
  c.delta_h = uniform(rng, 0.1, 1.0);
  for (int i = 1; i <= n; ++i) {
    c.buses.push_back({i, uniform(rng, 0.9, 0.97), uniform(rng, 1.03, 1.1), i > 1 && rng() % 2 == 0});
  }
  c.buses.back().has_aggregator = true;
  for (int i = 2; i <= n; ++i) {
    const int parent = std::uniform_int_distribution<int>(1, i - 1)(rng);
    c.lines.push_back({i - 1, parent, i, uniform(rng, 0.1, 50.0), uniform(rng, 0.1, 50.0), uniform(rng, 0.1, 5.0)});
  }
  c.generators.push_back({1, 1, uniform(rng, 1.0, 10.0)});
  for (int i = 2; i <= n; ++i) {
    LoadProfile d{i - 1, i, {}, {}};
    for (int t = 0; t < c.periods; ++t) {
      d.p.push_back(uniform(rng, 0.0, 0.5));
      d.q.push_back(uniform(rng, -0.1, 0.3));
    }
    c.loads.push_back(d);
  }
  PVProfile pv;
  pv.bus = n;
  pv.capacity = uniform(rng, 0.01, 0.2);
  for (int t = 0; t < c.periods; ++t) {
    pv.p.push_back(uniform(rng, 0.0, pv.capacity));
    pv.beta_params.push_back({uniform(rng, 0.5, 10.0), uniform(rng, 0.5, 10.0)});
  }
  c.pv_profiles.push_back(pv);
  for (int t = 0; t < c.periods; ++t) c.prices.push_back(uniform(rng, 0.0, 100.0));
  return c;
}

// ---------------------------------------------------------------- grid model

/// parse(serialize(c)) reproduces every field of a parsed case exactly.
inline Result case_roundtrip(long cases, std::uint64_t seed = 1) {
  Result r{"grid-model: serialize/parse round trip"};
  Rng rng(seed);
  for (long i = 0; i < cases; ++i) {
    const evflex::NetworkCase first = evflex::parse_case_text(evflex::serialize_case(random_case(rng)));
    const evflex::NetworkCase again = evflex::parse_case_text(evflex::serialize_case(first));
    r.record(first == again);
  }
  return r;
}

/// to_per_unit(a + b) = to_per_unit(a) + to_per_unit(b) to rounding.
inline Result per_unit_linear(long cases, std::uint64_t seed = 2) {
  Result r{"grid-model: per-unit conversion is linear"};
  Rng rng(seed);
  for (long i = 0; i < cases; ++i) {
    const double a = uniform(rng, -1e3, 1e3), b = uniform(rng, -1e3, 1e3);
    const double base = uniform(rng, 0.1, 1e3);
    const double lhs = evflex::to_per_unit(a + b, base);
    const double rhs = evflex::to_per_unit(a, base) + evflex::to_per_unit(b, base);
    const double scale = std::max({1.0, std::abs(a), std::abs(b)}) / base;
    const double err = std::abs(lhs - rhs) / scale;
    r.record(err <= 1e-14, err);
  }
  return r;
}

// ---------------------------------------------------------------------- acpf

/// At v ≡ 1 and equal angles every flow is exactly zero.
inline Result flat_start_zero(long cases, std::uint64_t seed = 3) {
  Result r{"acpf: flat start gives zero flow"};
  Rng rng(seed);
  for (long i = 0; i < cases; ++i) {
    const double g = uniform(rng, -50, 50), b = uniform(rng, -50, 50), th = uniform(rng, -1, 1);
    const double p = evflex::acpf::line_flow_p(1.0, 1.0, th, th, g, b);
    const double q = evflex::acpf::line_flow_q(1.0, 1.0, th, th, g, b);
    r.record(p == 0.0 && q == 0.0, std::max(std::abs(p), std::abs(q)));
  }
  return r;
}

/// With G = 0 the sending-end P equals minus the reverse-orientation P.
inline Result lossless_antisymmetry(long cases, std::uint64_t seed = 4) {
  Result r{"acpf: lossless lines are antisymmetric"};
  Rng rng(seed);
  for (long i = 0; i < cases; ++i) {
    const double b = uniform(rng, -50, 50), vs = uniform(rng, 0.8, 1.2), vr = uniform(rng, 0.8, 1.2);
    const double ts = uniform(rng, -0.5, 0.5), tr = uniform(rng, -0.5, 0.5);
    const double fwd = evflex::acpf::line_flow_p(vs, vr, ts, tr, 0.0, b);
    const double rev = evflex::acpf::line_flow_p(vr, vs, tr, ts, 0.0, b);
    const double err = std::abs(fwd + rev) / std::max(1.0, std::abs(fwd));
    r.record(err <= 1e-14, err);
  }
  return r;
}

/// With G > 0 the two orientations sum to a non-negative loss.
inline Result loss_nonnegative(long cases, std::uint64_t seed = 5) {
  Result r{"acpf: resistive loss is non-negative"};
  Rng rng(seed);
  for (long i = 0; i < cases; ++i) {
    const double g = uniform(rng, 1e-3, 50), b = uniform(rng, -50, 50);
    const double vs = uniform(rng, 0.5, 1.5), vr = uniform(rng, 0.5, 1.5);
    const double ts = uniform(rng, -1, 1), tr = uniform(rng, -1, 1);
    const double loss = evflex::acpf::line_flow_p(vs, vr, ts, tr, g, b) +
                        evflex::acpf::line_flow_p(vr, vs, tr, ts, g, b);
    const double scale = g * std::max(vs, vr) * std::max(vs, vr);
    r.record(loss >= -1e-14 * scale, std::max(0.0, -loss));
  }
  return r;
}

/// Random state of one period: voltages and angles near nominal, arbitrary
/// dispatch, flows and flex.
inline evflex::acpf::PeriodState random_state(const evflex::NetworkCase& c, Rng& rng) {
  auto s = evflex::acpf::PeriodState::flat(c);
  for (auto& b : s.buses) b = {uniform(rng, 0.9, 1.1), uniform(rng, -0.3, 0.3)};
  for (auto& d : s.dispatch) d = {uniform(rng, -2, 2), uniform(rng, -2, 2)};
  for (auto& f : s.flows) f = {uniform(rng, -2, 2), uniform(rng, -2, 2)};
  const evflex::acpf::PeriodLayout lay(c);
  for (int n : lay.aggregator_bus) {
    s.flex_p[n] = uniform(rng, 0, 1);
    s.flex_q[n] = uniform(rng, -1, 0);
  }
  return s;
}

/// Largest |analytic − fd| / max(1, |fd|) over every Jacobian entry, with
/// central differences of step `h` on the packed decision vector.
inline double jacobian_error(const evflex::NetworkCase& c, int t, const evflex::acpf::PeriodState& s,
                             double h = 1e-6) {
  const evflex::acpf::PeriodLayout lay(c);
  const Eigen::MatrixXd J = Eigen::MatrixXd(evflex::acpf::jacobian(c, t, s));
  const Eigen::VectorXd x = lay.pack(s);
  double worst = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    const Eigen::VectorXd fd = (evflex::acpf::period_residuals(c, t, lay.unpack(c, xp)) -
                                evflex::acpf::period_residuals(c, t, lay.unpack(c, xm))) /
                               (2 * h);
    for (Eigen::Index i = 0; i < fd.size(); ++i) {
      worst = std::max(worst, std::abs(J(i, j) - fd[i]) / std::max(1.0, std::abs(fd[i])));
    }
  }
  return worst;
}

inline Result jacobian_fd(const evflex::NetworkCase& c, long cases, std::uint64_t seed = 6) {
  Result r{"acpf: analytic Jacobian matches central differences"};
  Rng rng(seed);
  for (long i = 0; i < cases; ++i) {
    const int t = std::uniform_int_distribution<int>(0, c.periods - 1)(rng);
    const double err = jacobian_error(c, t, random_state(c, rng));
    r.record(err <= 1e-6, err);
  }
  return r;
}

/// States drawn inside every box and disc give non-negative limit residuals.
inline Result feasible_state_limits(const evflex::NetworkCase& c, long cases, std::uint64_t seed = 7) {
  Result r{"acpf: states inside the limits have feasible residuals"};
  Rng rng(seed);
  for (long i = 0; i < cases; ++i) {
    auto s = evflex::acpf::PeriodState::flat(c);
    for (std::size_t n = 0; n < c.bus_count(); ++n) {
      s.buses[n].v = uniform(rng, c.buses[n].v_min, c.buses[n].v_max);
    }
    auto disc = [&](double smax, double& p, double& q) {
      const double rad = smax * std::sqrt(uniform(rng, 0, 1)), ang = uniform(rng, 0, 2 * M_PI);
      p = rad * std::cos(ang);
      q = rad * std::sin(ang);
    };
    for (std::size_t g = 0; g < c.generators.size(); ++g) disc(c.generators[g].s_max, s.dispatch[g].p, s.dispatch[g].q);
    for (std::size_t l = 0; l < c.lines.size(); ++l) disc(c.lines[l].s_max, s.flows[l].p, s.flows[l].q);
    double worst = 0.0;
    for (const auto& res : evflex::acpf::limit_residuals(c, {s})) worst = std::max(worst, -res.value);
    r.record(worst <= 1e-8, worst);
  }
  return r;
}

// --------------------------------------------------------------- uncertainty

/// robust_margin is nondecreasing in ε for nominal ≥ 0 and nonincreasing in
/// δ for any nominal.
inline Result margin_monotone(long cases, std::uint64_t seed = 8) {
  Result r{"uncertainty: robust margin monotone in epsilon and delta"};
  Rng rng(seed);
  for (long i = 0; i < cases; ++i) {
    const double lam = uniform(rng, 0, 10), delta = uniform(rng, 0, 0.5);
    double e1 = uniform(rng, 0, 0.5), e2 = uniform(rng, 0, 0.5);
    if (e1 > e2) std::swap(e1, e2);
    const double nom_pos = uniform(rng, 0, 5);
    const bool eps_ok = evflex::robust_margin(nom_pos, {delta, e1, lam}) <=
                        evflex::robust_margin(nom_pos, {delta, e2, lam});
    double d1 = uniform(rng, 0, 0.5), d2 = uniform(rng, 0, 0.5);
    if (d1 > d2) std::swap(d1, d2);
    const double nom = uniform(rng, -5, 5), eps = uniform(rng, 0, 0.5);
    const bool delta_ok = evflex::robust_margin(nom, {d1, eps, lam}) >= evflex::robust_margin(nom, {d2, eps, lam});
    r.record(eps_ok && delta_ok);
  }
  return r;
}

/// Zero parameters reproduce the deterministic balance rows bit for bit.
inline Result zero_transform_identity(long cases, std::uint64_t seed = 9) {
  Result r{"uncertainty: zero parameters give the deterministic rows"};
  Rng rng(seed);
  for (long i = 0; i < cases; ++i) {
    const auto c = random_case(rng);
    const auto m = evflex::net_load_moments(c, uniform(rng, 0, 0.2));
    r.record(evflex::transform_balance(c, {}, m) == evflex::deterministic_balance(c, m));
  }
  return r;
}

/// Sample moments of capacity·Beta(a, b) agree with beta_to_normal within
/// three standard errors.
inline Result beta_moments(long samples, std::uint64_t seed = 10) {
  Result r{"uncertainty: beta_to_normal matches Monte Carlo moments"};
  Rng rng(seed);
  const double shapes[][3] = {{2, 2, 1}, {1, 1, 0.15}, {8, 3, 0.2}, {0.7, 4, 1.5}};
  for (const auto& sh : shapes) {
    std::gamma_distribution<double> ga(sh[0], 1.0), gb(sh[1], 1.0);
    std::vector<double> xs(samples);
    double sum = 0.0;
    for (double& x : xs) {
      const double u = ga(rng), v = gb(rng);
      x = sh[2] * u / (u + v);
      sum += x;
    }
    const double mean = sum / samples;
    double m2 = 0.0, m4 = 0.0;
    for (double x : xs) {
      const double d = x - mean;
      m2 += d * d;
      m4 += d * d * d * d;
    }
    m2 /= samples - 1;
    m4 /= samples;
    const auto nd = evflex::beta_to_normal(sh[0], sh[1], sh[2]);
    const double se_mean = std::sqrt(m2 / samples);
    const double se_var = std::sqrt((m4 - m2 * m2) / samples);
    const double z_mean = std::abs(mean - nd.mean) / se_mean;
    const double z_var = std::abs(m2 - nd.std * nd.std) / se_var;
    r.record(z_mean <= 3.0 && z_var <= 3.0, std::max(z_mean, z_var));
  }
  return r;
}

// --------------------------------------------------------------- solver core

/// Random LP/SOCP: minimize c·x over a box with a disc row and a budget row,
/// always feasible and bounded.
inline evflex::solver::ProblemSpec random_conic(Rng& rng) {
  using namespace evflex::solver;
  ProblemSpec p;
  const int n = std::uniform_int_distribution<int>(2, 5)(rng);
  for (int i = 0; i < n; ++i) p.add_variable(-uniform(rng, 0.5, 2), uniform(rng, 0.5, 2), uniform(rng, -1, 1));
  p.add_family("disc");
  p.add_family("budget");
  Constraint disc;
  for (int i = 0; i < 2; ++i) disc.squares.push_back({i, uniform(rng, 0.5, 2)});
  disc.upper = uniform(rng, 0.2, 1.0);
  disc.family = 0;
  p.add_constraint(disc);
  Constraint budget;
  for (int i = 0; i < n; ++i) budget.linear.push_back({i, uniform(rng, 0, 1)});
  budget.lower = -uniform(rng, 0, 0.5);
  budget.upper = uniform(rng, 0, 0.5);
  budget.family = 1;
  p.add_constraint(budget);
  return p;
}

/// Random smooth program: maximize a·x over a box with a nonlinear ring row.
inline evflex::solver::ProblemSpec random_nlp(Rng& rng) {
  using namespace evflex::solver;
  ProblemSpec p;
  p.sense = Sense::Maximize;
  const double a = uniform(rng, 0.2, 1), b = uniform(rng, 0.2, 1), k = uniform(rng, 0.5, 2);
  p.add_variable(-2, 2, a, 0.1);
  p.add_variable(-2, 2, b, 0.1);
  p.add_family("ring");
  Constraint ring;
  ring.nonlinear = NonlinearTerm{{0, 1}, [k](std::span<const double> x, std::span<double> g) {
                                   g[0] = 2 * x[0] + k * x[1];
                                   g[1] = 2 * x[1] + k * x[0];
                                   return x[0] * x[0] + x[1] * x[1] + k * x[0] * x[1];
                                 }};
  ring.upper = uniform(rng, 0.5, 2.0);
  p.add_constraint(ring);
  return p;
}

/// Identical inputs give identical status, objective and primal point;
/// every optimal point passes an independent feasibility audit.
inline Result solver_determinism(long cases, std::uint64_t seed = 11) {
  Result r{"solver-core: deterministic reports, optimal points feasible"};
  Rng rng(seed);
  for (long i = 0; i < cases; ++i) {
    const bool conic = i % 2 == 0;
    const auto spec = conic ? random_conic(rng) : random_nlp(rng);
    const auto a = conic ? evflex::solver::solve_conic(spec) : evflex::solver::solve_nlp(spec);
    const auto b = conic ? evflex::solver::solve_conic(spec) : evflex::solver::solve_nlp(spec);
    const bool same = a.status == b.status && std::abs(a.objective - b.objective) <= 1e-12 && a.primal == b.primal;
    const double viol = a.optimal() ? evflex::solver::max_violation(spec, a.primal).max_absolute : 0.0;
    r.record(same && a.optimal() && viol <= 1e-6, viol);
  }
  return r;
}

/// At optimal status the conic primal objective and dual bound differ by at
/// most 1e-6.
inline Result conic_gap(long cases, std::uint64_t seed = 12) {
  Result r{"solver-core: conic duality gap at optimum"};
  Rng rng(seed);
  for (long i = 0; i < cases; ++i) {
    const auto rep = evflex::solver::solve_conic(random_conic(rng));
    r.record(rep.optimal() && rep.duality_gap <= 1e-6, rep.duality_gap);
  }
  return r;
}

// ------------------------------------------------------------------ ev fleet

/// Every sampled EV satisfies the EvSpec invariants.
inline Result fleet_valid(long seeds, int per_seed = 5, std::uint64_t first = 0) {
  Result r{"ev-fleet: sampled EVs satisfy their invariants"};
  const evflex::FleetParams defaults;
  for (long s = 0; s < seeds; ++s) {
    bool ok = true;
    for (const auto& ev : evflex::sample_fleet(25, per_seed, first + s)) {
      ok = ok && evflex::is_valid(ev, defaults.periods) && ev.t_arr >= 1 && ev.t_arr < ev.t_dep &&
           ev.t_dep <= defaults.periods && ev.soc_min <= ev.soc_init && ev.soc_init <= ev.soc_desired &&
           ev.soc_desired <= ev.soc_max && ev.eta > 0 && ev.eta <= 1;
    }
    r.record(ok);
  }
  return r;
}

// ------------------------------------------------------------- ev scheduler

struct ScheduleCheck {
  double envelope = 0.0;     // worst excess over the P or Q envelope, kW
  double telescoping = 0.0;  // |Δsoc − ηΔΣp/E|
  double departure = 0.0;    // worst shortfall below the desired SOC
  double window = 0.0;       // largest |p|, |q| outside the window
  double disc = 0.0;         // worst p² + q² − S², kVA²
  double soc_box = 0.0;      // worst excursion outside [soc_min, soc_max]
  double cost = 0.0;         // |reported − recomputed| cost, $

  bool ok() const {
    return envelope <= 1e-9 && telescoping <= 1e-9 && departure <= 1e-9 && window == 0.0 && disc <= 1e-9 &&
           soc_box <= 1e-9 && cost <= 1e-9;
  }
};

inline ScheduleCheck check_schedule(const evflex::AggregatorInput& in, const evflex::AggregatorResult& res) {
  ScheduleCheck out;
  const int T = in.periods();
  double cost = 0.0;
  for (int t = 0; t < T; ++t) {
    double sp = 0.0, sq = 0.0;
    for (const auto& s : res.schedules) {
      sp += s.p_kw[t];
      sq += s.q_kvar[t];
    }
    out.envelope = std::max({out.envelope, sp - in.p_max_kw[t], in.q_min_kvar[t] - sq});
  }
  for (std::size_t k = 0; k < in.fleet.size(); ++k) {
    const auto& ev = in.fleet[k];
    const auto& s = res.schedules[k];
    double energy = 0.0;
    for (int t = 0; t < T; ++t) {
      const bool on = t + 1 >= ev.t_arr && t + 1 <= ev.t_dep;
      if (!on) out.window = std::max({out.window, std::abs(s.p_kw[t]), std::abs(s.q_kvar[t])});
      out.disc = std::max(out.disc, s.p_kw[t] * s.p_kw[t] + s.q_kvar[t] * s.q_kvar[t] - ev.socket_kva * ev.socket_kva);
      out.soc_box = std::max({out.soc_box, ev.soc_min - s.soc[t], s.soc[t] - ev.soc_max});
      energy += s.p_kw[t];
      cost += in.prices[t] * s.p_kw[t] * in.delta_h / 1000.0;
    }
    out.telescoping = std::max(
        out.telescoping, std::abs(s.soc[T - 1] - ev.soc_init - ev.eta * in.delta_h * energy / ev.capacity_kwh));
    out.departure = std::max(out.departure, ev.soc_desired - s.soc[ev.t_dep - 1]);
  }
  out.cost = std::abs(cost - res.cost);
  return out;
}

/// Random fleet of 1-6 EVs over 4-12 periods with an envelope loose enough
/// to keep it feasible.
inline evflex::AggregatorInput random_aggregator(Rng& rng) {
  evflex::AggregatorInput in;
  const int T = std::uniform_int_distribution<int>(4, 12)(rng);
  const int n = std::uniform_int_distribution<int>(1, 6)(rng);
  in.bus = 7;
  in.delta_h = 0.25 * std::uniform_int_distribution<int>(1, 4)(rng);
  for (int t = 0; t < T; ++t) in.prices.push_back(uniform(rng, 5, 100));
  for (int k = 0; k < n; ++k) {
    evflex::EvSpec ev;
    ev.bus = 7;
    ev.id = k + 1;
    ev.t_arr = std::uniform_int_distribution<int>(1, T - 1)(rng);
    ev.t_dep = std::uniform_int_distribution<int>(ev.t_arr + 1, T)(rng);
    ev.socket_kva = uniform(rng, 3, 22);
    ev.capacity_kwh = uniform(rng, 20, 80);
    ev.eta = uniform(rng, 0.8, 1.0);
    ev.soc_init = uniform(rng, 0.2, 0.8);
    const double reach = ev.eta * ev.socket_kva * in.delta_h * (ev.t_dep - ev.t_arr + 1) / ev.capacity_kwh;
    ev.soc_desired = uniform(rng, ev.soc_init, std::min(0.8, ev.soc_init + 0.8 * reach));
    in.fleet.push_back(ev);
  }
  double sockets = 0.0;
  for (const auto& ev : in.fleet) sockets += ev.socket_kva;
  for (int t = 0; t < T; ++t) {
    in.p_max_kw.push_back(uniform(rng, 0.8, 1.0) * sockets);
    in.q_min_kvar.push_back(-uniform(rng, 0.0, 0.5) * sockets);
  }
  return in;
}

/// Envelope compliance, SOC telescoping, departure contract, window, disc,
/// SOC box and cost recomputation on random fleets.
inline Result schedule_invariants(long cases, std::uint64_t seed = 13) {
  Result r{"ev-scheduler: schedules meet every invariant"};
  Rng rng(seed);
  for (long i = 0; i < cases; ++i) {
    const auto in = random_aggregator(rng);
    const auto res = evflex::schedule_fleet(in);
    if (!res.report.optimal()) {
      r.record(false);
      continue;
    }
    const auto chk = check_schedule(in, res);
    r.record(chk.ok(), std::max({chk.envelope, chk.telescoping, chk.departure, chk.disc, chk.soc_box, chk.cost}));
  }
  return r;
}

/// Raising one period's price never raises the total power placed in it by
/// more than `tol` kW.
inline Result price_monotonicity(long cases, double tol = 1e-5, std::uint64_t seed = 14) {
  Result r{"ev-scheduler: raising a price never attracts charging"};
  Rng rng(seed);
  for (long i = 0; i < cases; ++i) {
    auto in = random_aggregator(rng);
    const int t = std::uniform_int_distribution<int>(0, in.periods() - 1)(rng);
    const auto base = evflex::schedule_fleet(in);
    in.prices[t] += uniform(rng, 1, 50);
    const auto raised = evflex::schedule_fleet(in);
    if (!base.report.optimal() || !raised.report.optimal()) {
      r.record(false);
      continue;
    }
    double before = 0.0, after = 0.0;
    for (const auto& s : base.schedules) before += s.p_kw[t];
    for (const auto& s : raised.schedules) after += s.p_kw[t];
    r.record(after <= before + tol, std::max(0.0, after - before));
  }
  return r;
}

}  // namespace props
