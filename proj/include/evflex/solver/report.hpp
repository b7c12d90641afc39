#pragma once

#include <string>
#include <vector>

namespace evflex::solver {

enum class SolveStatus { Optimal, Infeasible, Unbounded, IterationLimit, NumericalFailure };

std::string to_string(SolveStatus status);

/// Outcome of any optimization run.
struct SolveReport {
  SolveStatus status = SolveStatus::NumericalFailure;
  double objective = 0.0;              // in the problem's own sense
  std::vector<double> primal;          // one value per problem variable
  std::vector<double> row_duals;       // one multiplier per constraint row
  double max_violation = 0.0;          // unscaled
  double kkt_residual = 0.0;           // scaled first-order residual
  double duality_gap = 0.0;            // conic solves only
  int iterations = 0;
  double wall_time_s = 0.0;
  /// Constraint families implicated when status is Infeasible, most
  /// implicated first.
  std::vector<std::string> infeasible_families;
  std::string message;

  bool optimal() const { return status == SolveStatus::Optimal; }
};

}  // namespace evflex::solver
