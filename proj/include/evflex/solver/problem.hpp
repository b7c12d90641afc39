#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace evflex::solver {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Sense { Minimize, Maximize };

struct LinearTerm {
  int var;
  double coef;
};

/// `coef · x_var²`.
struct SquareTerm {
  int var;
  double coef;
};

/// Smooth nonlinear contribution φ(x_S) over the variable subset `vars`.
/// `eval` receives the values of `vars` in order, writes ∂φ/∂x_S into
/// `gradient` (same order) and returns φ.
struct NonlinearTerm {
  std::vector<int> vars;
  std::function<double(std::span<const double> x, std::span<double> gradient)>
      eval;
};

/// Row function g(x) = Σ linear + Σ squares + φ(x_S), bounded by
/// lower ≤ g(x) ≤ upper. lower == upper makes an equality row.
struct Constraint {
  std::vector<LinearTerm> linear;
  std::vector<SquareTerm> squares;
  std::optional<NonlinearTerm> nonlinear;
  double lower = -kInf;
  double upper = kInf;
  int family = 0;
};

/// A constrained program with a linear objective. Families label groups of
/// rows (e.g. "line_flow_p") so diagnostics can name constraint kinds.
struct ProblemSpec {
  std::vector<double> lower;    // per variable
  std::vector<double> upper;
  std::vector<double> initial;  // optional warm start, empty for default
  std::vector<double> objective;
  Sense sense = Sense::Minimize;
  std::vector<Constraint> constraints;
  std::vector<std::string> family_names;

  int add_variable(double lo, double hi, double cost = 0.0, double start = 0.0);
  int add_family(std::string name);
  /// Index of a family by name, or -1.
  int family_index(const std::string& name) const;
  int add_constraint(Constraint row);

  std::size_t variable_count() const { return lower.size(); }
  std::size_t constraint_count() const { return constraints.size(); }
  std::size_t count_family(const std::string& name) const;

  /// Throws std::invalid_argument when a row references an undeclared
  /// variable, bounds are crossed, or vector sizes disagree.
  void validate() const;
};

/// Value of row `row` at `x`.
double evaluate_row(const Constraint& row, std::span<const double> x);

/// Objective c·x in the problem's own sense.
double evaluate_objective(const ProblemSpec& spec, std::span<const double> x);

struct Violation {
  double max_absolute = 0.0;  // worst unscaled bound or row violation
  int worst_row = -1;         // -1 when the worst violation is a variable bound
  int worst_variable = -1;
};

/// Feasibility audit independent of any solver state.
Violation max_violation(const ProblemSpec& spec, std::span<const double> x);

}  // namespace evflex::solver
