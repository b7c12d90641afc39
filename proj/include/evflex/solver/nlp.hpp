#pragma once

#include <cstdint>

#include "evflex/solver/problem.hpp"
#include "evflex/solver/report.hpp"

namespace evflex::solver {

struct NlpOptions {
  int max_iter = 1000;
  double feas_tol = 1e-6;  // on unscaled rows and on scaled rows
  double opt_tol = 1e-6;   // scaled first-order residual
  std::uint64_t seed = 0;  // recorded only; the algorithm is deterministic
  bool verbose = false;
};

/// Primal-dual interior-point method for smooth nonconvex programs.
///
/// Inequality rows receive bounded slacks so that only simple bounds carry
/// the log barrier. Curvature comes from two sources: exact (convexified)
/// second derivatives of the square terms, and a damped BFGS approximation
/// of the nonlinear-term Hessian kept per independent variable block (blocks
/// are the connected components of the variable/nonlinear-row incidence).
/// Steps are globalized with a filter line search on (‖c‖₁, barrier
/// objective); a feasibility restoration phase takes over when the filter
/// rejects every trial step. Rows are scaled by 1/max(1, ‖∇g(x₀)‖∞).
///
/// On Optimal the returned point satisfies the unscaled rows to `feas_tol`
/// and the scaled KKT residual is at most `opt_tol`.
SolveReport solve_nlp(const ProblemSpec& spec, const NlpOptions& options = {});

}  // namespace evflex::solver
