#include "evflex/solver/kkt.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace evflex::solver {

std::size_t SymmetricKkt::declare(int row, int col) {
  if (analyzed_) throw std::logic_error("KKT pattern already finalized");
  if (row < col) std::swap(row, col);
  pattern_.emplace_back(row, col, 0.0);
  return pattern_.size() - 1;
}

void SymmetricKkt::finalize() {
  diagonal_slot_.resize(dim_);
  for (int i = 0; i < dim_; ++i) diagonal_slot_[i] = declare(i, i);
  matrix_.resize(dim_, dim_);
  matrix_.setFromTriplets(pattern_.begin(), pattern_.end());
  matrix_.makeCompressed();
  slot_offset_.resize(pattern_.size());
  const double* base = matrix_.valuePtr();
  for (std::size_t k = 0; k < pattern_.size(); ++k) {
    slot_offset_[k] = static_cast<std::size_t>(
        &matrix_.coeffRef(pattern_[k].row(), pattern_[k].col()) - base);
  }
  values_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(pattern_.size()));
  shift_ = Eigen::VectorXd::Zero(dim_);
  ldlt_.analyzePattern(matrix_);
  analyzed_ = true;
}

bool SymmetricKkt::factorize(const Eigen::VectorXd& diagonal_shift) {
  double* vals = matrix_.valuePtr();
  std::fill(vals, vals + matrix_.nonZeros(), 0.0);
  for (std::size_t k = 0; k < slot_offset_.size(); ++k) {
    vals[slot_offset_[k]] += values_[static_cast<Eigen::Index>(k)];
  }
  shift_ = diagonal_shift;
  for (int i = 0; i < dim_; ++i) vals[slot_offset_[diagonal_slot_[i]]] += shift_[i];
  ldlt_.factorize(matrix_);
  positive_ = 0;
  negative_ = 0;
  if (ldlt_.info() != Eigen::Success) return false;
  const Eigen::VectorXd& d = ldlt_.vectorD();
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (!std::isfinite(d[i])) return false;
    if (d[i] > 0.0) {
      ++positive_;
    } else if (d[i] < 0.0) {
      ++negative_;
    }
  }
  return true;
}

Eigen::VectorXd SymmetricKkt::multiply(const Eigen::VectorXd& v) const {
  Eigen::VectorXd out = matrix_.selfadjointView<Eigen::Lower>() * v;
  out -= shift_.cwiseProduct(v);
  return out;
}

Eigen::VectorXd SymmetricKkt::solve(const Eigen::VectorXd& rhs,
                                    int refinement_steps) const {
  Eigen::VectorXd x = ldlt_.solve(rhs);
  const double scale = std::max(1.0, rhs.lpNorm<Eigen::Infinity>());
  Eigen::VectorXd r = rhs - multiply(x);
  double norm = r.lpNorm<Eigen::Infinity>();
  for (int k = 0; k < refinement_steps && norm > 1e-14 * scale; ++k) {
    Eigen::VectorXd trial = x + ldlt_.solve(r);
    Eigen::VectorXd r_trial = rhs - multiply(trial);
    const double trial_norm = r_trial.lpNorm<Eigen::Infinity>();
    // Stop once refinement no longer helps (singular unshifted system).
    if (!(trial_norm < norm)) break;
    x = std::move(trial);
    r = std::move(r_trial);
    norm = trial_norm;
  }
  return x;
}

}  // namespace evflex::solver
