#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

namespace evflex::solver {

/// Symmetric sparse system with a fixed pattern, factorized by LDLᵀ without
/// pivoting. Intended for quasi-definite KKT matrices; inertia is read off the
/// diagonal factor.
class SymmetricKkt {
 public:
  explicit SymmetricKkt(int dimension) : dim_(dimension) {}

  int dimension() const { return dim_; }

  /// Registers entry (row, col) of the lower triangle (row ≥ col is enforced
  /// by swapping) and returns a slot handle. Must be called before finalize.
  std::size_t declare(int row, int col);
  void finalize();

  void clear_values() { values_.setZero(); }
  void add(std::size_t slot, double value) { values_[slot] += value; }
  double value(std::size_t slot) const { return values_[slot]; }

  /// Loads the values into the matrix, adds `diagonal_shift` to each diagonal
  /// entry and factorizes. Returns false on breakdown.
  bool factorize(const Eigen::VectorXd& diagonal_shift);

  /// Number of positive and negative pivots of the last factorization.
  int positive_pivots() const { return positive_; }
  int negative_pivots() const { return negative_; }

  /// Solves with the factorization, refining against the matrix without the
  /// diagonal shift.
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs, int refinement_steps = 3) const;

  /// Product with the unshifted matrix.
  Eigen::VectorXd multiply(const Eigen::VectorXd& v) const;

 private:
  int dim_;
  std::vector<Eigen::Triplet<double>> pattern_;
  std::vector<std::size_t> diagonal_slot_;
  Eigen::SparseMatrix<double> matrix_;
  Eigen::VectorXd values_;
  Eigen::VectorXd shift_;
  std::vector<std::size_t> slot_offset_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower,
                        Eigen::AMDOrdering<int>>
      ldlt_;
  bool analyzed_ = false;
  int positive_ = 0;
  int negative_ = 0;
};

}  // namespace evflex::solver
