#include "evflex/solver/conic.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "evflex/solver/kkt.hpp"

namespace evflex::solver {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kStaticReg = 1e-8;
constexpr double kStepFraction = 0.99;
constexpr int kRefinement = 5;
constexpr double kInaccurateTol = 1e-6;     // residuals
constexpr double kInaccurateGapTol = 5e-5;  // relative gap

// Origin of a row of A or G, for duals and certificates.
struct RowTag {
  int source = -1;   // spec constraint, or -1 for a variable bound
  double sign = 1.0;
};

struct SocBlock {
  int start;
  int size;
  int source;
};

// Nesterov-Todd scaling of one second-order cone.
struct SocScaling {
  double eta = 1.0;
  VectorXd w;  // normalized scaling point, w0² − ‖w1‖² = 1
};

double soc_residual(const double* u, int k) {
  double t = 0.0;
  for (int i = 1; i < k; ++i) t += u[i] * u[i];
  return u[0] - std::sqrt(t);
}

double soc_jnorm2(const double* u, int k) {
  double t = 0.0;
  for (int i = 1; i < k; ++i) t += u[i] * u[i];
  const double n = std::sqrt(t);
  return (u[0] - n) * (u[0] + n);
}

// Bilinear form u0·v0 − u1ᵀv1.
double soc_jdot(const double* u, const double* v, int k) {
  double t = u[0] * v[0];
  for (int i = 1; i < k; ++i) t -= u[i] * v[i];
  return t;
}

class ConeProgram {
 public:
  ConeProgram(const ProblemSpec& spec, const ConicOptions& options)
      : spec_(spec), opt_(options) {}
  SolveReport run();

 private:
  void build();
  void equilibrate();
  bool strictly_interior(const VectorXd& u) const;
  void declare_kkt();
  void load_kkt(bool identity_scaling);
  VectorXd solve_kkt(const VectorXd& rhs) const;

  // Cone algebra on vectors laid out as [LP | SOC blocks].
  double max_step(const VectorXd& u, const VectorXd& du) const;
  VectorXd apply_w(const VectorXd& v) const;
  VectorXd apply_winv(const VectorXd& v) const;
  VectorXd jordan(const VectorXd& u, const VectorXd& v) const;
  VectorXd jordan_div(const VectorXd& lam, const VectorXd& v) const;
  double min_cone_margin(const VectorXd& u) const;
  void shift_into_cone(VectorXd& u) const;
  void add_identity(VectorXd& u, double t) const;
  void update_scaling();

  std::vector<std::string> certificate_families(bool primal_infeasible) const;
  SolveReport finish(SolveStatus status, int iter, const std::string& msg);

  const ProblemSpec& spec_;
  ConicOptions opt_;
  std::chrono::steady_clock::time_point start_;

  std::vector<int> col_of_var_;
  std::vector<double> fixed_value_;
  int n_ = 0, p_ = 0, m_ = 0, lp_ = 0;
  std::vector<SocBlock> socs_;
  Eigen::SparseMatrix<double> A_, G_;
  VectorXd b_, h_, c_;
  double obj_constant_ = 0.0;
  std::vector<RowTag> a_tags_, g_tags_;
  std::string trivial_infeasible_;

  std::unique_ptr<SymmetricKkt> kkt_;
  std::vector<std::size_t> a_slots_, g_slots_, lp_slots_;
  std::vector<std::vector<std::size_t>> soc_slots_;
  VectorXd shift_;
  VectorXd row_scale_, col_scale_;  // equilibration, [A rows | G rows] and columns

  VectorXd lp_w_;  // LP scaling sqrt(s/z)
  std::vector<SocScaling> soc_w_;
  VectorXd lambda_;

  VectorXd x_, y_, z_, s_;
  double tau_ = 1.0, kappa_ = 1.0;
  double pcost_ = 0.0, dcost_ = 0.0, gap_ = 0.0;
};

void ConeProgram::build() {
  const int nv = static_cast<int>(spec_.variable_count());
  col_of_var_.assign(nv, -1);
  fixed_value_.assign(nv, 0.0);
  for (int j = 0; j < nv; ++j) {
    if (spec_.lower[j] == spec_.upper[j]) {
      fixed_value_[j] = spec_.lower[j];
    } else {
      col_of_var_[j] = n_++;
    }
  }
  const double sense = spec_.sense == Sense::Maximize ? -1.0 : 1.0;
  c_ = VectorXd::Zero(n_);
  for (int j = 0; j < nv; ++j) {
    if (col_of_var_[j] >= 0) {
      c_[col_of_var_[j]] = sense * spec_.objective[j];
    } else {
      obj_constant_ += sense * spec_.objective[j] * fixed_value_[j];
    }
  }

  using Trip = Eigen::Triplet<double>;
  std::vector<Trip> at, glp, gsoc;
  std::vector<double> bv, hlp, hsoc;
  std::vector<RowTag> lp_tags, soc_tags;

  auto add_lp = [&](const std::vector<std::pair<int, double>>& terms, double rhs, RowTag tag) {
    const int r = static_cast<int>(hlp.size());
    for (const auto& [col, v] : terms) glp.emplace_back(r, col, v);
    hlp.push_back(rhs);
    lp_tags.push_back(tag);
  };
  auto fail_constant = [&](int source) {
    if (!trivial_infeasible_.empty()) return;
    const int fam = spec_.constraints[source].family;
    trivial_infeasible_ = static_cast<std::size_t>(fam) < spec_.family_names.size()
                              ? spec_.family_names[fam]
                              : "family_" + std::to_string(fam);
  };

  for (int j = 0; j < nv; ++j) {
    const int col = col_of_var_[j];
    if (col < 0) continue;
    if (std::isfinite(spec_.lower[j])) add_lp({{col, -1.0}}, -spec_.lower[j], {-1, -1.0});
    if (std::isfinite(spec_.upper[j])) add_lp({{col, 1.0}}, spec_.upper[j], {-1, 1.0});
  }

  for (std::size_t i = 0; i < spec_.constraints.size(); ++i) {
    const Constraint& con = spec_.constraints[i];
    const int src = static_cast<int>(i);
    if (con.nonlinear) {
      throw std::invalid_argument("solve_conic: row " + std::to_string(i) +
                                  " has a nonlinear term");
    }
    if (!con.squares.empty()) {
      if (!con.linear.empty() || std::isfinite(con.lower) || !std::isfinite(con.upper)) {
        throw std::invalid_argument("solve_conic: row " + std::to_string(i) +
                                    " is not of the form sum c*x^2 <= u");
      }
      double rhs = con.upper;
      std::vector<std::pair<int, double>> free;
      for (const auto& t : con.squares) {
        if (!(t.coef > 0.0)) {
          throw std::invalid_argument("solve_conic: row " + std::to_string(i) +
                                      " has a non-positive square coefficient");
        }
        const int col = col_of_var_[t.var];
        if (col < 0) {
          rhs -= t.coef * fixed_value_[t.var] * fixed_value_[t.var];
        } else {
          free.emplace_back(col, std::sqrt(t.coef));
        }
      }
      if (rhs < -1e-12) {
        fail_constant(src);
        continue;
      }
      if (free.empty()) continue;
      const int base = static_cast<int>(hsoc.size());
      hsoc.push_back(std::sqrt(std::max(rhs, 0.0)));
      soc_tags.push_back({src, 1.0});
      for (std::size_t k = 0; k < free.size(); ++k) {
        gsoc.emplace_back(base + 1 + static_cast<int>(k), free[k].first, -free[k].second);
        hsoc.push_back(0.0);
        soc_tags.push_back({src, 1.0});
      }
      socs_.push_back({base, static_cast<int>(free.size()) + 1, src});
      continue;
    }
    double constant = 0.0;
    std::vector<std::pair<int, double>> terms;
    for (const auto& t : con.linear) {
      const int col = col_of_var_[t.var];
      if (col < 0) {
        constant += t.coef * fixed_value_[t.var];
      } else {
        terms.emplace_back(col, t.coef);
      }
    }
    if (terms.empty()) {
      const double tol = 1e-9 * std::max(1.0, std::abs(constant));
      if (constant < con.lower - tol || constant > con.upper + tol) fail_constant(src);
      continue;
    }
    if (con.lower == con.upper) {
      const int r = static_cast<int>(bv.size());
      for (const auto& [col, v] : terms) at.emplace_back(r, col, v);
      bv.push_back(con.lower - constant);
      a_tags_.push_back({src, 1.0});
      continue;
    }
    if (std::isfinite(con.lower)) {
      std::vector<std::pair<int, double>> neg;
      for (const auto& [col, v] : terms) neg.emplace_back(col, -v);
      add_lp(neg, -(con.lower - constant), {src, -1.0});
    }
    if (std::isfinite(con.upper)) add_lp(terms, con.upper - constant, {src, 1.0});
  }

  p_ = static_cast<int>(bv.size());
  lp_ = static_cast<int>(hlp.size());
  m_ = lp_ + static_cast<int>(hsoc.size());
  for (SocBlock& blk : socs_) blk.start += lp_;
  for (const auto& t : gsoc) glp.emplace_back(t.row() + lp_, t.col(), t.value());

  A_.resize(p_, n_);
  A_.setFromTriplets(at.begin(), at.end());
  G_.resize(m_, n_);
  G_.setFromTriplets(glp.begin(), glp.end());
  b_ = Eigen::Map<VectorXd>(bv.data(), p_);
  h_.resize(m_);
  for (int i = 0; i < lp_; ++i) h_[i] = hlp[i];
  for (std::size_t i = 0; i < hsoc.size(); ++i) h_[lp_ + static_cast<int>(i)] = hsoc[i];
  g_tags_ = std::move(lp_tags);
  g_tags_.insert(g_tags_.end(), soc_tags.begin(), soc_tags.end());
  equilibrate();
}

void ConeProgram::equilibrate() {
  row_scale_ = VectorXd::Ones(p_ + m_);
  col_scale_ = VectorXd::Ones(n_);
  for (int pass = 0; pass < 20; ++pass) {
    VectorXd rmax = VectorXd::Zero(p_ + m_), cmax = VectorXd::Zero(n_);
    for (int k = 0; k < A_.outerSize(); ++k) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(A_, k); it; ++it) {
        const double v = std::abs(it.value());
        rmax[it.row()] = std::max(rmax[it.row()], v);
        cmax[it.col()] = std::max(cmax[it.col()], v);
      }
    }
    for (int k = 0; k < G_.outerSize(); ++k) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(G_, k); it; ++it) {
        const double v = std::abs(it.value());
        rmax[p_ + it.row()] = std::max(rmax[p_ + it.row()], v);
        cmax[it.col()] = std::max(cmax[it.col()], v);
      }
    }
    // A cone keeps one scale for all of its rows.
    for (const SocBlock& blk : socs_) {
      const double mx = rmax.segment(p_ + blk.start, blk.size).maxCoeff();
      rmax.segment(p_ + blk.start, blk.size).setConstant(mx);
    }
    double spread = 0.0;
    VectorXd dr(p_ + m_), dc(n_);
    for (int i = 0; i < p_ + m_; ++i) {
      dr[i] = rmax[i] > 0.0 ? 1.0 / std::sqrt(rmax[i]) : 1.0;
      dr[i] = std::clamp(dr[i] * row_scale_[i], 1e-4, 1e4) / row_scale_[i];
      if (rmax[i] > 0.0) spread = std::max(spread, std::abs(1.0 - rmax[i]));
    }
    for (int j = 0; j < n_; ++j) {
      dc[j] = cmax[j] > 0.0 ? 1.0 / std::sqrt(cmax[j]) : 1.0;
      dc[j] = std::clamp(dc[j] * col_scale_[j], 1e-4, 1e4) / col_scale_[j];
      if (cmax[j] > 0.0) spread = std::max(spread, std::abs(1.0 - cmax[j]));
    }
    if (spread < 0.1) break;
    A_ = dr.head(p_).asDiagonal() * A_ * dc.asDiagonal();
    G_ = dr.tail(m_).asDiagonal() * G_ * dc.asDiagonal();
    row_scale_ = row_scale_.cwiseProduct(dr);
    col_scale_ = col_scale_.cwiseProduct(dc);
  }
  b_ = b_.cwiseProduct(row_scale_.head(p_));
  h_ = h_.cwiseProduct(row_scale_.tail(m_));
  c_ = c_.cwiseProduct(col_scale_);
}

bool ConeProgram::strictly_interior(const VectorXd& u) const {
  for (int i = 0; i < lp_; ++i) {
    if (!(u[i] > 0.0)) return false;
  }
  for (const SocBlock& blk : socs_) {
    const double* a = u.data() + blk.start;
    if (!(a[0] > 0.0) || !(soc_jnorm2(a, blk.size) > 0.0)) return false;
  }
  return true;
}

void ConeProgram::declare_kkt() {
  const int dim = n_ + p_ + m_;
  kkt_ = std::make_unique<SymmetricKkt>(dim);
  Eigen::SparseMatrix<double, Eigen::RowMajor> a(A_), g(G_);
  for (int r = 0; r < p_; ++r) {
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(a, r); it; ++it) {
      a_slots_.push_back(kkt_->declare(n_ + r, static_cast<int>(it.col())));
    }
  }
  for (int r = 0; r < m_; ++r) {
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(g, r); it; ++it) {
      g_slots_.push_back(kkt_->declare(n_ + p_ + r, static_cast<int>(it.col())));
    }
  }
  for (int i = 0; i < lp_; ++i) lp_slots_.push_back(kkt_->declare(n_ + p_ + i, n_ + p_ + i));
  for (const SocBlock& blk : socs_) {
    std::vector<std::size_t> slots;
    for (int r = 0; r < blk.size; ++r) {
      for (int q = 0; q <= r; ++q) {
        slots.push_back(kkt_->declare(n_ + p_ + blk.start + r, n_ + p_ + blk.start + q));
      }
    }
    soc_slots_.push_back(std::move(slots));
  }
  kkt_->finalize();
  shift_.resize(dim);
  shift_.head(n_).setConstant(kStaticReg);
  shift_.tail(p_ + m_).setConstant(-kStaticReg);
}

void ConeProgram::load_kkt(bool identity_scaling) {
  kkt_->clear_values();
  Eigen::SparseMatrix<double, Eigen::RowMajor> a(A_), g(G_);
  std::size_t k = 0;
  for (int r = 0; r < p_; ++r) {
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(a, r); it; ++it) {
      kkt_->add(a_slots_[k++], it.value());
    }
  }
  k = 0;
  for (int r = 0; r < m_; ++r) {
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(g, r); it; ++it) {
      kkt_->add(g_slots_[k++], it.value());
    }
  }
  for (int i = 0; i < lp_; ++i) {
    const double w = identity_scaling ? 1.0 : lp_w_[i];
    kkt_->add(lp_slots_[i], -w * w);
  }
  for (std::size_t c = 0; c < socs_.size(); ++c) {
    const int sz = socs_[c].size;
    MatrixXd w2 = MatrixXd::Identity(sz, sz);
    if (!identity_scaling) {
      const SocScaling& sc = soc_w_[c];
      const double w0 = sc.w[0];
      const VectorXd w1 = sc.w.tail(sz - 1);
      MatrixXd w(sz, sz);
      w(0, 0) = w0;
      w.block(0, 1, 1, sz - 1) = w1.transpose();
      w.block(1, 0, sz - 1, 1) = w1;
      w.block(1, 1, sz - 1, sz - 1) =
          MatrixXd::Identity(sz - 1, sz - 1) + w1 * w1.transpose() / (1.0 + w0);
      w *= sc.eta;
      w2 = w * w;
    }
    std::size_t s = 0;
    for (int r = 0; r < sz; ++r) {
      for (int q = 0; q <= r; ++q) kkt_->add(soc_slots_[c][s++], -w2(r, q));
    }
  }
  for (double reg = kStaticReg; reg <= 1e-3; reg *= 100.0) {
    shift_.head(n_).setConstant(reg);
    shift_.tail(p_ + m_).setConstant(-reg);
    if (kkt_->factorize(shift_)) return;
  }
  throw std::runtime_error("conic KKT factorization failed");
}

VectorXd ConeProgram::solve_kkt(const VectorXd& rhs) const { return kkt_->solve(rhs, kRefinement); }

double ConeProgram::max_step(const VectorXd& u, const VectorXd& du) const {
  double alpha = 1e30;
  for (int i = 0; i < lp_; ++i) {
    if (du[i] < 0.0) alpha = std::min(alpha, -u[i] / du[i]);
  }
  for (const SocBlock& blk : socs_) {
    const double* a = u.data() + blk.start;
    const double* d = du.data() + blk.start;
    // J(u + t·d) = ju + 2t·jud + t²·jd; find its smallest positive root.
    const double ju = soc_jnorm2(a, blk.size);
    const double jd = soc_jnorm2(d, blk.size);
    const double jud = soc_jdot(a, d, blk.size);
    double t = 1e30;
    if (std::abs(jd) < 1e-300) {
      if (jud < 0.0) t = -ju / (2.0 * jud);
    } else {
      const double disc = jud * jud - ju * jd;
      if (disc >= 0.0) {
        const double sq = std::sqrt(disc);
        // Stable roots of jd·t² + 2·jud·t + ju.
        const double qq = -(jud + std::copysign(sq, jud));
        const double r1 = qq / jd;
        const double r2 = qq != 0.0 ? ju / qq : 1e30;
        for (double r : {r1, r2}) {
          if (r > 0.0) t = std::min(t, r);
        }
      }
    }
    if (d[0] < 0.0) t = std::min(t, -a[0] / d[0]);
    alpha = std::min(alpha, t);
  }
  return alpha;
}

VectorXd ConeProgram::apply_w(const VectorXd& v) const {
  VectorXd out(m_);
  for (int i = 0; i < lp_; ++i) out[i] = lp_w_[i] * v[i];
  for (std::size_t c = 0; c < socs_.size(); ++c) {
    const SocBlock& blk = socs_[c];
    const SocScaling& sc = soc_w_[c];
    const int k = blk.size;
    const double w0 = sc.w[0];
    const auto w1 = sc.w.tail(k - 1);
    const auto v1 = v.segment(blk.start + 1, k - 1);
    const double v0 = v[blk.start];
    const double wv = w1.dot(v1);
    out[blk.start] = sc.eta * (w0 * v0 + wv);
    out.segment(blk.start + 1, k - 1) = sc.eta * (v0 * w1 + v1 + (wv / (1.0 + w0)) * w1);
  }
  return out;
}

VectorXd ConeProgram::apply_winv(const VectorXd& v) const {
  VectorXd out(m_);
  for (int i = 0; i < lp_; ++i) out[i] = v[i] / lp_w_[i];
  for (std::size_t c = 0; c < socs_.size(); ++c) {
    const SocBlock& blk = socs_[c];
    const SocScaling& sc = soc_w_[c];
    const int k = blk.size;
    const double w0 = sc.w[0];
    const auto w1 = sc.w.tail(k - 1);
    const auto v1 = v.segment(blk.start + 1, k - 1);
    const double v0 = v[blk.start];
    const double wv = w1.dot(v1);
    out[blk.start] = (w0 * v0 - wv) / sc.eta;
    out.segment(blk.start + 1, k - 1) = (-v0 * w1 + v1 + (wv / (1.0 + w0)) * w1) / sc.eta;
  }
  return out;
}

VectorXd ConeProgram::jordan(const VectorXd& u, const VectorXd& v) const {
  VectorXd out(m_);
  for (int i = 0; i < lp_; ++i) out[i] = u[i] * v[i];
  for (const SocBlock& blk : socs_) {
    const int k = blk.size;
    out[blk.start] = u.segment(blk.start, k).dot(v.segment(blk.start, k));
    out.segment(blk.start + 1, k - 1) = u[blk.start] * v.segment(blk.start + 1, k - 1) +
                                        v[blk.start] * u.segment(blk.start + 1, k - 1);
  }
  return out;
}

VectorXd ConeProgram::jordan_div(const VectorXd& lam, const VectorXd& v) const {
  VectorXd out(m_);
  for (int i = 0; i < lp_; ++i) out[i] = v[i] / lam[i];
  for (const SocBlock& blk : socs_) {
    const int k = blk.size;
    const double l0 = lam[blk.start];
    const auto l1 = lam.segment(blk.start + 1, k - 1);
    const double v0 = v[blk.start];
    const auto v1 = v.segment(blk.start + 1, k - 1);
    const double x0 = (l0 * v0 - l1.dot(v1)) / soc_jnorm2(lam.data() + blk.start, k);
    out[blk.start] = x0;
    out.segment(blk.start + 1, k - 1) = (v1 - x0 * l1) / l0;
  }
  return out;
}

double ConeProgram::min_cone_margin(const VectorXd& u) const {
  double r = 1e30;
  for (int i = 0; i < lp_; ++i) r = std::min(r, u[i]);
  for (const SocBlock& blk : socs_) r = std::min(r, soc_residual(u.data() + blk.start, blk.size));
  return r;
}

void ConeProgram::add_identity(VectorXd& u, double t) const {
  for (int i = 0; i < lp_; ++i) u[i] += t;
  for (const SocBlock& blk : socs_) u[blk.start] += t;
}

void ConeProgram::shift_into_cone(VectorXd& u) const {
  const double r = min_cone_margin(u);
  if (r < 1.0) add_identity(u, 1.0 - r);
}

void ConeProgram::update_scaling() {
  lp_w_.resize(lp_);
  for (int i = 0; i < lp_; ++i) lp_w_[i] = std::sqrt(s_[i] / z_[i]);
  soc_w_.resize(socs_.size());
  for (std::size_t c = 0; c < socs_.size(); ++c) {
    const SocBlock& blk = socs_[c];
    const int k = blk.size;
    const double sn = std::sqrt(soc_jnorm2(s_.data() + blk.start, k));
    const double zn = std::sqrt(soc_jnorm2(z_.data() + blk.start, k));
    const VectorXd sb = s_.segment(blk.start, k) / sn;
    const VectorXd zb = z_.segment(blk.start, k) / zn;
    const double gamma = std::sqrt(0.5 * (1.0 + sb.dot(zb)));
    VectorXd w(k);
    w[0] = (sb[0] + zb[0]) / (2.0 * gamma);
    w.tail(k - 1) = (sb.tail(k - 1) - zb.tail(k - 1)) / (2.0 * gamma);
    soc_w_[c] = {std::sqrt(sn / zn), w};
  }
  lambda_ = apply_w(z_);
}

std::vector<std::string> ConeProgram::certificate_families(bool primal_infeasible) const {
  // Rows with a significant share of bᵀy + hᵀz, most negative first.
  if (!primal_infeasible) return {"objective"};
  std::map<int, double> weight;
  for (int i = 0; i < p_; ++i) weight[a_tags_[i].source] += b_[i] * y_[i];
  for (int i = 0; i < m_; ++i) weight[g_tags_[i].source] += h_[i] * z_[i];
  double largest = 0.0;
  for (const auto& [src, w] : weight) largest = std::max(largest, std::abs(w));
  std::vector<std::pair<double, int>> order;
  for (const auto& [src, w] : weight) {
    if (std::abs(w) > 1e-6 * largest) order.push_back({w, src});
  }
  std::sort(order.begin(), order.end());
  std::vector<std::string> names;
  for (const auto& [w, src] : order) {
    std::string name = "variable_bounds";
    if (src >= 0) {
      const int fam = spec_.constraints[src].family;
      name = static_cast<std::size_t>(fam) < spec_.family_names.size()
                 ? spec_.family_names[fam]
                 : "family_" + std::to_string(fam);
    }
    if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
  }
  return names;
}

SolveReport ConeProgram::finish(SolveStatus status, int iter, const std::string& msg) {
  SolveReport rep;
  rep.status = status;
  rep.iterations = iter;
  rep.message = msg;
  const int nv = static_cast<int>(spec_.variable_count());
  rep.primal.assign(nv, 0.0);
  const double scale = (status == SolveStatus::Optimal || status == SolveStatus::IterationLimit ||
                        status == SolveStatus::NumericalFailure) &&
                               tau_ > 0.0
                           ? 1.0 / tau_
                           : 1.0;
  for (int j = 0; j < nv; ++j) {
    const int col = col_of_var_[j];
    rep.primal[j] = col < 0 ? fixed_value_[j] : x_.size() > 0 ? x_[col] * col_scale_[col] * scale : 0.0;
  }
  rep.objective = evaluate_objective(spec_, rep.primal);
  rep.row_duals.assign(spec_.constraints.size(), 0.0);
  for (int i = 0; i < p_ && y_.size() > 0; ++i) {
    rep.row_duals[a_tags_[i].source] += a_tags_[i].sign * y_[i] * row_scale_[i] * scale;
  }
  for (int i = 0; i < lp_ && z_.size() > 0; ++i) {
    if (g_tags_[i].source >= 0) {
      rep.row_duals[g_tags_[i].source] += g_tags_[i].sign * z_[i] * row_scale_[p_ + i] * scale;
    }
  }
  for (const SocBlock& blk : socs_) {
    if (z_.size() > 0) rep.row_duals[blk.source] = z_[blk.start] * row_scale_[p_ + blk.start] * scale;
  }
  rep.max_violation = max_violation(spec_, rep.primal).max_absolute;
  rep.duality_gap = gap_;
  if (status == SolveStatus::Infeasible) rep.infeasible_families = certificate_families(true);
  if (status == SolveStatus::Unbounded) rep.infeasible_families = certificate_families(false);
  rep.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  return rep;
}

SolveReport ConeProgram::run() {
  start_ = std::chrono::steady_clock::now();
  spec_.validate();
  build();
  if (!trivial_infeasible_.empty()) {
    SolveReport rep = finish(SolveStatus::Infeasible, 0, "constant row violated");
    rep.infeasible_families = {trivial_infeasible_};
    return rep;
  }
  if (n_ == 0 && p_ == 0 && m_ == 0) return finish(SolveStatus::Optimal, 0, "trivial");

  declare_kkt();
  const int dim = n_ + p_ + m_;

  // Initial point from two regularized least-squares systems.
  load_kkt(true);
  VectorXd rhs = VectorXd::Zero(dim);
  rhs.segment(n_, p_) = b_;
  rhs.tail(m_) = h_;
  VectorXd sol = solve_kkt(rhs);
  x_ = sol.head(n_);
  s_ = -sol.tail(m_);
  shift_into_cone(s_);
  rhs.setZero();
  rhs.head(n_) = -c_;
  sol = solve_kkt(rhs);
  y_ = sol.segment(n_, p_);
  z_ = sol.tail(m_);
  shift_into_cone(z_);
  tau_ = 1.0;
  kappa_ = 1.0;

  const double nb = std::max(1.0, b_.norm());
  const double nh = std::max(1.0, h_.norm());
  const double nc = std::max(1.0, c_.norm());
  const double degree = lp_ + static_cast<double>(socs_.size());
  bool near_optimal = false;
  auto stop = [&](int iter, const std::string& why) {
    if (near_optimal) return finish(SolveStatus::Optimal, iter, "converged to reduced accuracy");
    return finish(iter == opt_.max_iter ? SolveStatus::IterationLimit : SolveStatus::NumericalFailure,
                  iter, why);
  };

  for (int iter = 0; iter <= opt_.max_iter; ++iter) {
    const VectorXd aty = A_.transpose() * y_ + G_.transpose() * z_;
    const VectorXd ax = A_ * x_;
    const VectorXd gxs = G_ * x_ + s_;
    const double cx = c_.dot(x_), by = b_.dot(y_), hz = h_.dot(z_);
    const VectorXd r1 = aty + c_ * tau_;
    const VectorXd r2 = ax - b_ * tau_;
    const VectorXd r3 = gxs - h_ * tau_;
    const double r4 = kappa_ + cx + by + hz;

    const double pres = std::max(r2.norm() / nb, r3.norm() / nh) / tau_;
    const double dres = r1.norm() / nc / tau_;
    pcost_ = cx / tau_ + obj_constant_;
    dcost_ = -(by + hz) / tau_ + obj_constant_;
    const double abs_gap = s_.dot(z_) / (tau_ * tau_);
    gap_ = std::abs(pcost_ - dcost_) / std::max(1.0, std::abs(pcost_));
    const double rel_gap = abs_gap / std::max(1.0, std::min(std::abs(pcost_), std::abs(dcost_)));
    if (opt_.verbose) {
      std::fprintf(stderr, "it %3d pcost %.9e dcost %.9e gap %.2e pres %.2e dres %.2e k/t %.2e\n",
                   iter, pcost_, dcost_, abs_gap, pres, dres, kappa_ / tau_);
    }
    if (pres < opt_.feas_tol && dres < opt_.feas_tol &&
        (abs_gap < opt_.gap_tol || rel_gap < opt_.gap_tol)) {
      return finish(SolveStatus::Optimal, iter, "converged");
    }
    if (kappa_ > tau_) {
      const double yz = by + hz;
      if (yz < 0.0 && aty.norm() <= opt_.feas_tol * -yz * nc) {
        return finish(SolveStatus::Infeasible, iter, "primal infeasibility certificate");
      }
      if (cx < 0.0 && std::max(ax.norm(), gxs.norm()) <= opt_.feas_tol * -cx * std::max(nb, nh)) {
        return finish(SolveStatus::Unbounded, iter, "dual infeasibility certificate");
      }
    }
    near_optimal = pres < kInaccurateTol && dres < kInaccurateTol &&
                   (abs_gap < kInaccurateTol || rel_gap < kInaccurateGapTol);
    if (iter == opt_.max_iter) break;

    update_scaling();
    try {
      load_kkt(false);
    } catch (const std::runtime_error& e) {
      return stop(iter, e.what());
    }
    const double mu = (s_.dot(z_) + tau_ * kappa_) / (degree + 1.0);

    rhs.head(n_) = -c_;
    rhs.segment(n_, p_) = b_;
    rhs.tail(m_) = h_;
    const VectorXd u1 = solve_kkt(rhs);
    const VectorXd wz1 = apply_w(u1.tail(m_));
    const double qu1 = -wz1.squaredNorm();

    auto direction = [&](double sigma, const VectorXd& ds_target, double dk_target,
                         VectorXd& dx, VectorXd& dy, VectorXd& dz, VectorXd& ds, double& dt,
                         double& dk) {
      const double f = 1.0 - sigma;
      const VectorXd lam_div = jordan_div(lambda_, ds_target);
      const VectorXd wl = apply_w(lam_div);
      VectorXd r(dim);
      r.head(n_) = -f * r1;
      r.segment(n_, p_) = -f * r2;
      r.tail(m_) = -f * r3 - wl;
      const VectorXd u2 = solve_kkt(r);
      const double qu2 = c_.dot(u2.head(n_)) + b_.dot(u2.segment(n_, p_)) + h_.dot(u2.tail(m_));
      dt = (-f * r4 - dk_target / tau_ - qu2) / (qu1 - kappa_ / tau_);
      const VectorXd d = u2 + dt * u1;
      dx = d.head(n_);
      dy = d.segment(n_, p_);
      dz = d.tail(m_);
      ds = wl - apply_w(apply_w(dz));
      dk = (dk_target - kappa_ * dt) / tau_;
    };
    auto step_length = [&](const VectorXd& dz, const VectorXd& ds, double dt, double dk) {
      double a = std::min(max_step(s_, ds), max_step(z_, dz));
      if (dt < 0.0) a = std::min(a, -tau_ / dt);
      if (dk < 0.0) a = std::min(a, -kappa_ / dk);
      return a;
    };

    VectorXd dx, dy, dz, ds;
    double dt = 0.0, dk = 0.0;
    const VectorXd ll = jordan(lambda_, lambda_);
    direction(0.0, -ll, -kappa_ * tau_, dx, dy, dz, ds, dt, dk);
    const double alpha_aff = std::min(1.0, step_length(dz, ds, dt, dk));
    const double sigma = std::pow(1.0 - alpha_aff, 3);

    VectorXd e_sigma = VectorXd::Zero(m_);
    add_identity(e_sigma, sigma * mu);
    const VectorXd corr = jordan(apply_winv(ds), apply_w(dz));
    const double dk_target = -kappa_ * tau_ - dk * dt + sigma * mu;
    direction(sigma, -ll - corr + e_sigma, dk_target, dx, dy, dz, ds, dt, dk);
    double alpha = std::min(1.0, kStepFraction * step_length(dz, ds, dt, dk));
    for (int back = 0; back < 60 && alpha > 1e-12; ++back) {
      if (strictly_interior(s_ + alpha * ds) && strictly_interior(z_ + alpha * dz)) break;
      alpha *= 0.8;
    }
    if (!(alpha > 1e-12) || !dx.allFinite()) {
      return stop(iter, "step length collapsed");
    }
    x_ += alpha * dx;
    y_ += alpha * dy;
    z_ += alpha * dz;
    s_ += alpha * ds;
    tau_ += alpha * dt;
    kappa_ += alpha * dk;
  }
  return stop(opt_.max_iter, "iteration limit reached");
}

}  // namespace

SolveReport solve_conic(const ProblemSpec& spec, const ConicOptions& options) {
  ConeProgram prog(spec, options);
  return prog.run();
}

}  // namespace evflex::solver
