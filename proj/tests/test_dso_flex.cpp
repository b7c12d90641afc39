#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "evflex/dso_flex.hpp"
#include "oracles.hpp"

using namespace evflex;
namespace fs = std::filesystem;

namespace {

const std::string kCase = std::string(EVFLEX_DATA_DIR) + "/ieee33.json";

DsoOptions three_bus_options() {
  DsoOptions o;
  o.q_cap = {{3, 0.3}};
  return o;
}

double sum_pu(const FlexibilitySchedule& s) {
  double sum = 0.0;
  for (const auto& row : s.p_gf) {
    for (double p : row) sum += p;
  }
  return sum;
}

double min_voltage(const DsoSolution& s, std::size_t bus) {
  double v = 1e9;
  for (const auto& st : s.states) v = std::min(v, st.buses[bus].v);
  return v;
}

}  // namespace

TEST_SUITE("dso-flex") {
  TEST_CASE("problem structure of the 33-bus case") {
    const NetworkCase c = parse_case(kCase);
    const int T = c.periods;
    const std::size_t per = 2 * 33 + 2 * 1 + 2 * 32 + 2 * 2;
    const DsoProblem det = build_dso_problem(c, DsoMode::deterministic(), PfMode::Unity);
    CHECK(det.spec.variable_count() == T * per);
    CHECK(det.vars_per_period == per);
    CHECK(det.spec.count_family("unity_pf") == static_cast<std::size_t>(2 * T));
    CHECK(det.spec.count_family("balance_p") == static_cast<std::size_t>(33 * T));
    CHECK(det.spec.count_family("line_flow_p") == static_cast<std::size_t>(32 * T));
    CHECK(det.spec.sense == solver::Sense::Maximize);
    for (const auto& row : det.spec.constraints) {
      if (row.family == det.spec.family_index("unity_pf")) {
        CHECK(row.lower == 0.0);
        CHECK(row.upper == 0.0);
      }
    }
    const DsoProblem nonunity = build_dso_problem(c, DsoMode::deterministic(), PfMode::NonUnity);
    CHECK(nonunity.spec.count_family("unity_pf") == 0);
    for (int t = 0; t < T; ++t) {
      for (std::size_t a = 0; a < 2; ++a) {
        CHECK(nonunity.spec.upper[nonunity.var(t, nonunity.layout.qgf(a))] <= 0.0);
        CHECK(nonunity.spec.lower[nonunity.var(t, nonunity.layout.pgf(a))] >= 0.0);
      }
    }

    const DsoProblem unc = build_dso_problem(c, DsoMode::with_uncertainty({0, 0, 6}), PfMode::Unity);
    REQUIRE(unc.spec.constraint_count() == det.spec.constraint_count());
    const int bp = det.spec.family_index("balance_p"), bq = det.spec.family_index("balance_q");
    for (std::size_t i = 0; i < det.spec.constraint_count(); ++i) {
      const auto& d = det.spec.constraints[i];
      const auto& u = unc.spec.constraints[i];
      CHECK(d.family == u.family);
      if (d.family == bp || d.family == bq) {
        CHECK(d.lower == d.upper);
        CHECK(u.lower == d.lower);
        CHECK(u.upper == solver::kInf);
      } else {
        CHECK(u.lower == d.lower);
        CHECK(u.upper == d.upper);
      }
    }
  }

  TEST_CASE("a case without aggregator buses is rejected") {
    NetworkCase c = oracle::three_bus_case();
    c.buses[2].has_aggregator = false;
    CHECK_THROWS_AS(build_dso_problem(c, DsoMode::deterministic(), PfMode::Unity), std::invalid_argument);
  }

  TEST_CASE("3-bus case against the grid-search oracle") {
    const NetworkCase c = oracle::three_bus_case();
    for (PfMode pf : {PfMode::Unity, PfMode::NonUnity}) {
      const DsoSolution s = solve_dso(c, DsoMode::deterministic(), pf, three_bus_options());
      REQUIRE(s.report.optimal());
      double ref = 0.0;
      for (int t = 0; t < c.periods; ++t) ref += oracle::dso_period_oracle(c, t, pf == PfMode::NonUnity, 0.3);
      INFO(to_string(pf) << " solver " << sum_pu(s.schedule) << " oracle " << ref);
      CHECK(std::abs(sum_pu(s.schedule) - ref) <= 1e-3);
    }
  }

  TEST_CASE("solutions on the 3-bus case") {
    const NetworkCase c = oracle::three_bus_case();
    const DsoOptions o = three_bus_options();
    const DsoSolution unity = solve_dso(c, DsoMode::deterministic(), PfMode::Unity, o);
    const DsoSolution nonunity = solve_dso(c, DsoMode::deterministic(), PfMode::NonUnity, o);
    const DsoMode um = DsoMode::with_uncertainty({0, 0.05, 6});
    const DsoSolution unc_unity = solve_dso(c, um, PfMode::Unity, o);
    const DsoSolution unc_nonunity = solve_dso(c, um, PfMode::NonUnity, o);
    for (const auto* s : {&unity, &nonunity, &unc_unity, &unc_nonunity}) {
      INFO(to_string(s->report.status) << ": " << s->report.message);
      REQUIRE(s->report.optimal());
      CHECK(s->states.size() == static_cast<std::size_t>(c.periods));
      CHECK(std::abs(s->total_flex - s->schedule.total_p_mw()) <= 1e-9);
      for (const auto& row : s->schedule.p_gf) {
        for (double p : row) CHECK(p >= 0.0);
      }
    }
    for (const auto* s : {&unity, &unc_unity}) {
      for (const auto& row : s->schedule.q_gf) {
        for (double q : row) CHECK(q == 0.0);
      }
    }
    CHECK(audit_solution(c, DsoMode::deterministic(), unity) <= 1e-6);
    CHECK(audit_solution(c, DsoMode::deterministic(), nonunity) <= 1e-6);
    CHECK(audit_solution(c, um, unc_unity) <= 1e-6);
    CHECK(audit_solution(c, um, unc_nonunity) <= 1e-6);
    CHECK(nonunity.total_flex >= unity.total_flex - 1e-6);
    CHECK(unc_nonunity.total_flex >= unc_unity.total_flex - 1e-6);
    CHECK(unc_unity.total_flex <= unity.total_flex + 1e-6);
    CHECK(unc_nonunity.total_flex <= nonunity.total_flex + 1e-6);
    CHECK(min_voltage(nonunity, 2) >= min_voltage(unity, 2) - 1e-6);
    CHECK(min_voltage(unc_nonunity, 2) >= min_voltage(unc_unity, 2) - 1e-6);
  }

  TEST_CASE("zero line rating towards the aggregator leaves no flexibility") {
    NetworkCase c = oracle::three_bus_case();
    c.lines[1].s_max = 0.0;
    c.loads.pop_back();
    for (PfMode pf : {PfMode::Unity, PfMode::NonUnity}) {
      const DsoSolution s = solve_dso(c, DsoMode::deterministic(), pf, three_bus_options());
      INFO(to_string(s.report.status) << ": " << s.report.message);
      REQUIRE(s.report.optimal());
      for (const auto& row : s.schedule.p_gf) {
        for (double p : row) CHECK(std::abs(p) <= 1e-6);
      }
    }
  }

  TEST_CASE("epsilon sweep") {
    const NetworkCase c = oracle::three_bus_case();
    const auto one = epsilon_sweep(c, {0.0}, 0.0, 6.0, PfMode::Unity, three_bus_options());
    REQUIRE(one.size() == 1);
    CHECK(one[0].status == solver::SolveStatus::Optimal);
    const DsoSolution det = solve_dso(c, DsoMode::deterministic(), PfMode::Unity, three_bus_options());
    CHECK(std::abs(one[0].total_flex - det.total_flex) <= 1e-5);
    const auto pts = epsilon_sweep(c, {0.0, 0.05, 0.1, 0.2}, 0.0, 6.0, PfMode::NonUnity, three_bus_options());
    REQUIRE(pts.size() == 4);
    for (std::size_t i = 1; i < pts.size(); ++i) {
      CHECK(pts[i].status == solver::SolveStatus::Optimal);
      CHECK(pts[i].total_flex <= pts[i - 1].total_flex * (1 + 1e-6));
    }
    CHECK(pts.back().total_flex < pts.front().total_flex);
    CHECK_THROWS_AS(epsilon_sweep(c, {0.1, 0.05}, 0.0, 6.0, PfMode::Unity), std::invalid_argument);
  }

  TEST_CASE("flex schedule CSV round trip") {
    const NetworkCase c = oracle::three_bus_case();
    const DsoSolution s = solve_dso(c, DsoMode::deterministic(), PfMode::NonUnity, three_bus_options());
    const fs::path dir = fs::temp_directory_path() / "evflex_dso_test";
    fs::create_directories(dir);
    write_flex_csv(s.schedule, dir / "flex_schedule.csv");
    CHECK(read_flex_csv(dir / "flex_schedule.csv", c.base_mva) == s.schedule);
    std::ifstream in(dir / "flex_schedule.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "bus,period,p_gf_MW,q_gf_MVAr");
    write_voltages_csv(c, s, dir / "voltages.csv");
    std::ifstream vin(dir / "voltages.csv");
    std::getline(vin, header);
    CHECK(header == "bus,period,v_pu,theta_rad");
    int lines = 0;
    for (std::string l; std::getline(vin, l);) ++lines;
    CHECK(lines == 3 * c.periods);
    CHECK_THROWS(read_flex_csv(dir / "missing.csv", c.base_mva));
    fs::remove_all(dir);
  }

  TEST_CASE("pf mode names") {
    CHECK(to_string(PfMode::Unity) == "unity");
    CHECK(to_string(PfMode::NonUnity) == "non_unity");
    CHECK(parse_pf_mode("non_unity") == PfMode::NonUnity);
    CHECK_THROWS(parse_pf_mode("sideways"));
  }
}
