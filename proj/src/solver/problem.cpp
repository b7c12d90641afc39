#include "evflex/solver/problem.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "evflex/solver/report.hpp"

namespace evflex::solver {

std::string to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::Optimal:
      return "optimal";
    case SolveStatus::Infeasible:
      return "infeasible";
    case SolveStatus::Unbounded:
      return "unbounded";
    case SolveStatus::IterationLimit:
      return "iteration-limit";
    case SolveStatus::NumericalFailure:
      return "numerical-failure";
  }
  return "unknown";
}

int ProblemSpec::add_variable(double lo, double hi, double cost, double start) {
  lower.push_back(lo);
  upper.push_back(hi);
  objective.push_back(cost);
  initial.push_back(start);
  return static_cast<int>(lower.size()) - 1;
}

int ProblemSpec::add_family(std::string name) {
  if (int k = family_index(name); k >= 0) return k;
  family_names.push_back(std::move(name));
  return static_cast<int>(family_names.size()) - 1;
}

int ProblemSpec::family_index(const std::string& name) const {
  auto it = std::find(family_names.begin(), family_names.end(), name);
  return it == family_names.end()
             ? -1
             : static_cast<int>(std::distance(family_names.begin(), it));
}

int ProblemSpec::add_constraint(Constraint row) {
  constraints.push_back(std::move(row));
  return static_cast<int>(constraints.size()) - 1;
}

std::size_t ProblemSpec::count_family(const std::string& name) const {
  const int k = family_index(name);
  if (k < 0) return 0;
  return static_cast<std::size_t>(
      std::count_if(constraints.begin(), constraints.end(),
                    [k](const Constraint& c) { return c.family == k; }));
}

void ProblemSpec::validate() const {
  const auto n = static_cast<int>(lower.size());
  if (upper.size() != lower.size() || objective.size() != lower.size()) {
    throw std::invalid_argument("problem: bound/objective sizes disagree");
  }
  if (!initial.empty() && initial.size() != lower.size()) {
    throw std::invalid_argument("problem: initial point has the wrong size");
  }
  for (int j = 0; j < n; ++j) {
    if (!(lower[j] <= upper[j])) {
      throw std::invalid_argument("problem: crossed bounds on variable " +
                                  std::to_string(j));
    }
  }
  auto check_var = [n](int v, std::size_t row) {
    if (v < 0 || v >= n) {
      throw std::invalid_argument("problem: row " + std::to_string(row) +
                                  " references undeclared variable " +
                                  std::to_string(v));
    }
  };
  for (std::size_t i = 0; i < constraints.size(); ++i) {
    const Constraint& c = constraints[i];
    for (const auto& t : c.linear) check_var(t.var, i);
    for (const auto& t : c.squares) check_var(t.var, i);
    if (c.nonlinear) {
      if (!c.nonlinear->eval) {
        throw std::invalid_argument("problem: row " + std::to_string(i) +
                                    " has a nonlinear term without callback");
      }
      for (int v : c.nonlinear->vars) check_var(v, i);
    }
    if (!(c.lower <= c.upper)) {
      throw std::invalid_argument("problem: crossed bounds on row " +
                                  std::to_string(i));
    }
    if (c.family < 0 ||
        (!family_names.empty() &&
         static_cast<std::size_t>(c.family) >= family_names.size())) {
      throw std::invalid_argument("problem: row " + std::to_string(i) +
                                  " has an unknown family");
    }
  }
}

double evaluate_row(const Constraint& row, std::span<const double> x) {
  double value = 0.0;
  for (const auto& t : row.linear) value += t.coef * x[t.var];
  for (const auto& t : row.squares) value += t.coef * x[t.var] * x[t.var];
  if (row.nonlinear) {
    const auto& nl = *row.nonlinear;
    std::vector<double> local(nl.vars.size());
    std::vector<double> grad(nl.vars.size());
    for (std::size_t k = 0; k < nl.vars.size(); ++k) local[k] = x[nl.vars[k]];
    value += nl.eval(local, grad);
  }
  return value;
}

double evaluate_objective(const ProblemSpec& spec, std::span<const double> x) {
  double value = 0.0;
  for (std::size_t j = 0; j < spec.objective.size(); ++j) {
    value += spec.objective[j] * x[j];
  }
  return value;
}

Violation max_violation(const ProblemSpec& spec, std::span<const double> x) {
  Violation v;
  for (std::size_t j = 0; j < spec.lower.size(); ++j) {
    const double e = std::max(spec.lower[j] - x[j], x[j] - spec.upper[j]);
    if (e > v.max_absolute) {
      v.max_absolute = e;
      v.worst_variable = static_cast<int>(j);
      v.worst_row = -1;
    }
  }
  for (std::size_t i = 0; i < spec.constraints.size(); ++i) {
    const Constraint& c = spec.constraints[i];
    const double g = evaluate_row(c, x);
    const double e = std::max(c.lower - g, g - c.upper);
    if (e > v.max_absolute) {
      v.max_absolute = e;
      v.worst_row = static_cast<int>(i);
      v.worst_variable = -1;
    }
  }
  return v;
}

}  // namespace evflex::solver
