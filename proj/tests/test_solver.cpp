#include <doctest.h>

#include <cmath>

#include "evflex/solver/conic.hpp"
#include "evflex/solver/nlp.hpp"
#include "properties.hpp"

using namespace evflex::solver;

namespace {

// min x² s.t. x ≥ 1, as min t s.t. x² − t ≤ 0.
ProblemSpec square_min() {
  ProblemSpec p;
  const int x = p.add_variable(1.0, kInf, 0.0, 2.0);
  const int t = p.add_variable(-kInf, kInf, 1.0, 5.0);
  Constraint row;
  row.squares = {{x, 1.0}};
  row.linear = {{t, -1.0}};
  row.upper = 0.0;
  p.add_constraint(row);
  return p;
}

ProblemSpec disc_max() {
  ProblemSpec p;
  p.sense = Sense::Maximize;
  p.add_variable(-kInf, kInf, 1.0);
  p.add_variable(-kInf, kInf, 1.0);
  p.add_family("disc");
  Constraint row;
  row.squares = {{0, 1.0}, {1, 1.0}};
  row.upper = 2.0;
  p.add_constraint(row);
  return p;
}

}  // namespace

TEST_SUITE("solver-core") {
  TEST_CASE("problem spec bookkeeping") {
    ProblemSpec p;
    CHECK(p.add_variable(0, 1) == 0);
    CHECK(p.add_variable(-1, 1, 2.0) == 1);
    CHECK(p.add_family("a") == 0);
    CHECK(p.add_family("b") == 1);
    CHECK(p.family_index("b") == 1);
    CHECK(p.family_index("zzz") == -1);
    Constraint row;
    row.linear = {{0, 1.0}, {1, 2.0}};
    row.lower = 0.5;
    row.family = 1;
    CHECK(p.add_constraint(row) == 0);
    CHECK(p.count_family("b") == 1);
    CHECK_NOTHROW(p.validate());
    const std::vector<double> x{1.0, -0.5};
    CHECK(evaluate_row(p.constraints[0], x) == 0.0);
    CHECK(max_violation(p, x).max_absolute == doctest::Approx(0.5));
    CHECK(max_violation(p, x).worst_row == 0);
    CHECK(evaluate_objective(p, x) == -1.0);
    Constraint bad;
    bad.linear = {{5, 1.0}};
    p.add_constraint(bad);
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    ProblemSpec crossed;
    crossed.add_variable(1, 0);
    CHECK_THROWS_AS(crossed.validate(), std::invalid_argument);
  }

  TEST_CASE("nlp: textbook examples") {
    auto r = solve_nlp(square_min());
    REQUIRE(r.optimal());
    CHECK(r.primal[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.objective == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.max_violation <= 1e-6);
    CHECK(r.kkt_residual <= 1e-6);
    r = solve_nlp(disc_max());
    REQUIRE(r.optimal());
    CHECK(r.primal[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.primal[1] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.objective == doctest::Approx(2.0).epsilon(1e-6));
  }

  TEST_CASE("nlp: smooth nonlinear row") {
    ProblemSpec p;
    p.sense = Sense::Maximize;
    p.add_variable(0, 3, 1.0, 0.5);
    p.add_variable(0, 3, 0.0, 0.5);
    Constraint row;
    row.nonlinear = NonlinearTerm{{0, 1}, [](std::span<const double> x, std::span<double> g) {
                                    g[0] = std::exp(x[0]);
                                    g[1] = -1.0;
                                    return std::exp(x[0]) - x[1];
                                  }};
    row.upper = 0.0;
    p.add_constraint(row);
    const auto r = solve_nlp(p);
    REQUIRE(r.optimal());
    CHECK(r.primal[0] == doctest::Approx(std::log(3.0)).epsilon(1e-6));
  }

  TEST_CASE("nlp: infeasible rows are reported") {
    ProblemSpec p;
    p.add_variable(-5, 5, 1.0);
    p.add_family("impossible");
    Constraint row;
    row.squares = {{0, 1.0}};
    row.upper = -1.0;
    row.family = 0;
    p.add_constraint(row);
    const auto r = solve_nlp(p);
    CHECK(r.status == SolveStatus::Infeasible);
    REQUIRE_FALSE(r.infeasible_families.empty());
    CHECK(r.infeasible_families.front() == "impossible");
  }

  TEST_CASE("conic: examples") {
    ProblemSpec p;
    const int x = p.add_variable(0.5, kInf, 1.0);
    const int y = p.add_variable(-kInf, kInf, 0.0);
    Constraint row;
    row.squares = {{x, 1.0}, {y, 1.0}};
    row.upper = 1.0;
    p.add_constraint(row);
    auto r = solve_conic(p);
    REQUIRE(r.optimal());
    CHECK(r.primal[0] == doctest::Approx(0.5).epsilon(1e-7));
    CHECK(r.duality_gap <= 1e-6);
    r = solve_conic(disc_max());
    REQUIRE(r.optimal());
    CHECK(r.objective == doctest::Approx(2.0).epsilon(1e-7));
    r = solve_conic(ProblemSpec{});
    REQUIRE(r.optimal());
    CHECK(r.objective == 0.0);
  }

  TEST_CASE("conic: fixed variables and equality rows") {
    ProblemSpec p;
    p.add_variable(2, 2, 1.0);
    p.add_variable(0, 10, 3.0);
    Constraint row;
    row.linear = {{0, 1.0}, {1, 1.0}};
    row.lower = row.upper = 5.0;
    p.add_constraint(row);
    const auto r = solve_conic(p);
    REQUIRE(r.optimal());
    CHECK(r.primal[0] == 2.0);
    CHECK(r.primal[1] == doctest::Approx(3.0).epsilon(1e-8));
    CHECK(r.objective == doctest::Approx(11.0).epsilon(1e-8));
  }

  TEST_CASE("conic: infeasible and unbounded") {
    ProblemSpec p;
    p.add_variable(0, kInf, 1.0);
    p.add_family("low");
    p.add_family("high");
    Constraint a, b;
    a.linear = {{0, 1.0}};
    a.lower = 2.0;
    a.family = 0;
    b.linear = {{0, 1.0}};
    b.upper = 1.0;
    b.family = 1;
    p.add_constraint(a);
    p.add_constraint(b);
    auto r = solve_conic(p);
    CHECK(r.status == SolveStatus::Infeasible);
    CHECK(r.infeasible_families.size() == 2);

    ProblemSpec u;
    u.add_variable(0, kInf, -1.0);
    u.add_variable(-kInf, kInf, 0.0);
    Constraint row;
    row.linear = {{0, 1.0}, {1, -1.0}};
    row.upper = 3.0;
    u.add_constraint(row);
    r = solve_conic(u);
    CHECK(r.status == SolveStatus::Unbounded);
  }

  TEST_CASE("conic: rows outside the cone class are rejected") {
    ProblemSpec p;
    p.add_variable(-1, 1, 1.0);
    Constraint row;
    row.squares = {{0, -1.0}};
    row.upper = 1.0;
    p.add_constraint(row);
    CHECK_THROWS_AS(solve_conic(p), std::invalid_argument);
    ProblemSpec q;
    q.add_variable(-1, 1, 1.0);
    Constraint low;
    low.squares = {{0, 1.0}};
    low.lower = 0.5;
    q.add_constraint(low);
    CHECK_THROWS_AS(solve_conic(q), std::invalid_argument);
  }

  TEST_CASE("conic and nlp agree on random convex programs") {
    props::Rng rng(31);
    for (int i = 0; i < 200; ++i) {
      const auto spec = props::random_conic(rng);
      const auto a = solve_conic(spec);
      const auto b = solve_nlp(spec);
      REQUIRE(a.optimal());
      REQUIRE(b.optimal());
      CHECK(std::abs(a.objective - b.objective) <= 1e-5);
    }
  }

  TEST_CASE("property: determinism and feasibility of optimal reports") {
    const auto r = props::solver_determinism(10000);
    INFO(r.failures << " failures, worst violation " << r.worst);
    CHECK(r.ok());
  }

  TEST_CASE("property: conic duality gap") {
    const auto r = props::conic_gap(10000);
    INFO("worst gap " << r.worst);
    CHECK(r.ok());
  }
}
