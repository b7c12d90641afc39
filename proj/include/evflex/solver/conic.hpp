#pragma once

#include "evflex/solver/problem.hpp"
#include "evflex/solver/report.hpp"

namespace evflex::solver {

struct ConicOptions {
  int max_iter = 300;
  double feas_tol = 1e-8;  // relative primal and dual residuals
  double gap_tol = 1e-8;   // absolute and relative duality gap
  bool verbose = false;
};

/// Interior-point solver for linear and second-order-cone programs in the
/// homogeneous self-dual embedding, with Nesterov-Todd scaling and
/// Mehrotra predictor-corrector steps.
///
/// Accepted rows: purely linear rows with any bounds, and disc rows
/// Σ cᵢ·xᵢ² ≤ u with every cᵢ > 0, no linear part and no lower bound.
/// Variables with equal bounds are substituted out before the solve.
///
/// Throws std::invalid_argument for rows outside that class. Reports
/// Infeasible or Unbounded from certificates of the embedding, naming the
/// row families that carry the certificate.
SolveReport solve_conic(const ProblemSpec& spec, const ConicOptions& options = {});

}  // namespace evflex::solver
