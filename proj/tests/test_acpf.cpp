#include <doctest.h>

#include <cmath>

#include "evflex/acpf.hpp"
#include "oracles.hpp"
#include "properties.hpp"

using namespace evflex;
using namespace evflex::acpf;

namespace {

const std::string kCase = std::string(EVFLEX_DATA_DIR) + "/ieee33.json";

// Branch expressions in long double complex form: S = Vs·conj(y·(Vs − Vr))
// with y = g − jβ.
std::complex<long double> flow_ld(long double vs, long double vr, long double ts, long double tr, long double g,
                                  long double b) {
  const std::complex<long double> Vs = std::polar(vs, ts), Vr = std::polar(vr, tr), y(g, -b);
  return Vs * std::conj(y * (Vs - Vr));
}

}  // namespace

TEST_SUITE("acpf") {
  TEST_CASE("branch flow values") {
    CHECK(line_flow_p(1, 1, 0.2, 0.2, 3, -7) == 0.0);
    CHECK(line_flow_q(1, 1, 0.2, 0.2, 3, -7) == 0.0);
    const auto ref = flow_ld(1.0L, 0.95L, 0.05L, 0.0L, 2.0L, -5.0L);
    CHECK(std::abs(line_flow_p(1.0, 0.95, 0.05, 0.0, 2, -5) - static_cast<double>(ref.real())) <= 1e-15);
    CHECK(std::abs(line_flow_q(1.0, 0.95, 0.05, 0.0, 2, -5) - static_cast<double>(ref.imag())) <= 1e-15);
    CHECK(line_flow_p(1.02, 0.97, 0.1, -0.02, 0, 6) == doctest::Approx(6 * 1.02 * 0.97 * std::sin(0.12)));
    CHECK(line_flow_q(1.02, 0.97, 0.1, -0.02, 4, 0) == doctest::Approx(-4 * 1.02 * 0.97 * std::sin(0.12)));
  }

  TEST_CASE("flow gradients match central differences") {
    const double x[4] = {1.0, 1.0, 0.0, 0.0};
    for (int k = 0; k < 2; ++k) {
      const auto f = k == 0 ? line_flow_p : line_flow_q;
      const auto g = k == 0 ? line_flow_p_gradient(x[0], x[1], x[2], x[3], 2, -5)
                            : line_flow_q_gradient(x[0], x[1], x[2], x[3], 2, -5);
      const double an[4] = {g.d_v_s, g.d_v_r, g.d_theta_s, g.d_theta_r};
      for (int j = 0; j < 4; ++j) {
        double xp[4], xm[4];
        std::copy(x, x + 4, xp);
        std::copy(x, x + 4, xm);
        xp[j] += 1e-6;
        xm[j] -= 1e-6;
        const double fd = (f(xp[0], xp[1], xp[2], xp[3], 2, -5) - f(xm[0], xm[1], xm[2], xm[3], 2, -5)) / 2e-6;
        CHECK(std::abs(an[j] - fd) / std::max(1.0, std::abs(fd)) <= 1e-6);
      }
    }
    CHECK(line_flow_p_gradient(1, 1, 0, 0, 2, -5).d_theta_s == doctest::Approx(-5.0));
  }

  TEST_CASE("balance of an isolated bus") {
    NetworkCase c;
    c.periods = 1;
    c.buses = {{1, 0.9, 1.1, false}};
    c.generators = {{1, 1, 5.0}};
    c.loads = {{1, 1, {0.3}, {0.1}}};
    c.prices = {10.0};
    auto s = PeriodState::flat(c);
    s.dispatch[0] = {0.3, 0.1};
    CHECK(balance_residual_p(c, 1, 0, s) == 0.0);
    CHECK(balance_residual_q(c, 1, 0, s) == 0.0);
    s.flex_p[0] = 0.25;
    s.flex_q[0] = -0.125;
    CHECK(balance_residual_p(c, 1, 0, s) == doctest::Approx(-0.25).epsilon(1e-15));
    CHECK(balance_residual_q(c, 1, 0, s) == doctest::Approx(0.125).epsilon(1e-15));
    CHECK_THROWS(balance_residual_p(c, 7, 0, s));
    CHECK_THROWS(balance_residual_p(c, 1, 3, s));
  }

  TEST_CASE("balance is linear in the flexible load") {
    const NetworkCase c = parse_case(kCase);
    props::Rng rng(21);
    for (int i = 0; i < 1000; ++i) {
      auto s = props::random_state(c, rng);
      const int t = i % c.periods;
      const double x = props::uniform(rng, -1, 1);
      const double r0 = balance_residual_p(c, 25, t, s), q0 = balance_residual_q(c, 33, t, s);
      s.flex_p[24] += x;
      s.flex_q[32] += x;
      CHECK(std::abs(balance_residual_p(c, 25, t, s) - (r0 - x)) <= 1e-12);
      CHECK(std::abs(balance_residual_q(c, 33, t, s) - (q0 - x)) <= 1e-12);
    }
  }

  TEST_CASE("balance at a Newton power-flow solution of the 3-bus case") {
    const NetworkCase c = oracle::three_bus_case();
    for (int t = 0; t < c.periods; ++t) {
      std::vector<oracle::cplx> demand(3, 0.0);
      for (const auto& d : c.loads) demand[d.bus - 1] += oracle::cplx(d.p[t], d.q[t]);
      demand[2] += oracle::cplx(0.2, -0.05);
      const auto pf = oracle::newton_pf(c, 1.02, demand);
      REQUIRE(pf.converged);
      auto s = PeriodState::flat(c);
      for (int n = 0; n < 3; ++n) s.buses[n] = {std::abs(pf.v[n]), std::arg(pf.v[n])};
      s.flows = evaluate_flows(c, s.buses);
      s.dispatch[0] = {pf.slack.real(), pf.slack.imag()};
      s.flex_p[2] = 0.2;
      s.flex_q[2] = -0.05;
      for (int bus = 1; bus <= 3; ++bus) {
        CHECK(std::abs(balance_residual_p(c, bus, t, s)) <= 1e-6);
        CHECK(std::abs(balance_residual_q(c, bus, t, s)) <= 1e-6);
      }
      CHECK(period_residuals(c, t, s).head(2 * c.lines.size() + 2 * c.bus_count()).cwiseAbs().maxCoeff() <= 1e-6);
    }
  }

  TEST_CASE("limit residuals at their boundaries") {
    const NetworkCase c = oracle::three_bus_case();
    auto s = PeriodState::flat(c);
    s.dispatch[0] = {c.generators[0].s_max, 0.0};
    s.buses[1].v = c.buses[1].v_min;
    s.buses[2].v = c.buses[2].v_max;
    s.flows[0] = {0.0, -c.lines[0].s_max};
    const auto res = limit_residuals(c, {s});
    int seen = 0;
    for (const auto& r : res) {
      if (r.kind == LimitKind::Generator || (r.kind == LimitKind::Line && r.element_id == 1) ||
          (r.kind == LimitKind::VoltageLower && r.element_id == 2) ||
          (r.kind == LimitKind::VoltageUpper && r.element_id == 3)) {
        CHECK(r.value == doctest::Approx(0.0));
        CHECK(r.feasible);
        ++seen;
      }
    }
    CHECK(seen == 4);
    s.buses[1].v = c.buses[1].v_min - 1e-3;
    bool flagged = false;
    for (const auto& r : limit_residuals(c, {s})) {
      if (r.kind == LimitKind::VoltageLower && r.element_id == 2) flagged = !r.feasible;
    }
    CHECK(flagged);
  }

  TEST_CASE("layout pack and unpack are inverse") {
    const NetworkCase c = parse_case(kCase);
    const PeriodLayout lay(c);
    CHECK(lay.variable_count() == 2 * 33 + 2 * 1 + 2 * 32 + 2 * 2);
    CHECK(lay.row_count() == 3 * 32 + 4 * 33 + 1);
    props::Rng rng(5);
    const auto s = props::random_state(c, rng);
    const Eigen::VectorXd x = lay.pack(s);
    CHECK((lay.pack(lay.unpack(c, x)) - x).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("Jacobian structure") {
    const NetworkCase c = parse_case(kCase);
    const PeriodLayout lay(c);
    props::Rng rng(8);
    const auto s = props::random_state(c, rng);
    const Eigen::SparseMatrix<double> J = jacobian(c, 40, s);
    for (std::size_t a = 0; a < lay.aggregators; ++a) {
      const std::size_t n = lay.aggregator_bus[a];
      CHECK(J.coeff(lay.row_balance_p(n), lay.pgf(a)) == -1.0);
      CHECK(J.coeff(lay.row_balance_q(n), lay.qgf(a)) == -1.0);
    }
    auto adjacent = [&](std::size_t n, std::size_t m) {
      if (n == m) return true;
      for (const auto& l : c.lines) {
        const std::size_t i = c.bus_index(l.from_bus), j = c.bus_index(l.to_bus);
        if ((i == n && j == m) || (i == m && j == n)) return true;
      }
      return false;
    };
    int checked = 0;
    for (int k = 0; k < J.outerSize(); ++k) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(J, k); it; ++it) {
        const std::size_t row = it.row(), col = it.col();
        if (row < lay.row_balance_p(0) || row >= lay.row_gen_disc(0)) continue;
        if (col >= lay.pg(0)) continue;
        const std::size_t n = row < lay.row_balance_q(0) ? row - lay.row_balance_p(0) : row - lay.row_balance_q(0);
        const std::size_t m = col < lay.theta(0) ? col : col - lay.buses;
        CHECK(adjacent(n, m));
        ++checked;
      }
    }
    CHECK(checked > 0);
  }

  TEST_CASE("property: flat start, antisymmetry, losses") {
    for (const auto& r : {props::flat_start_zero(10000), props::lossless_antisymmetry(10000),
                          props::loss_nonnegative(10000)}) {
      INFO(r.name << ": " << r.failures << " failures, worst " << r.worst);
      CHECK(r.ok());
    }
  }

  TEST_CASE("property: Jacobian against central differences") {
    const auto r = props::jacobian_fd(parse_case(kCase), 100);
    INFO("worst relative error " << r.worst);
    CHECK(r.ok());
    const auto r3 = props::jacobian_fd(oracle::three_bus_case(), 100);
    CHECK(r3.ok());
  }

  TEST_CASE("property: states inside the limits") {
    const auto r = props::feasible_state_limits(parse_case(kCase), 10000);
    INFO("worst " << r.worst);
    CHECK(r.ok());
  }
}
