#include "evflex/solver/nlp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <numeric>
#include <utility>

#include <Eigen/Dense>

#include "evflex/solver/kkt.hpp"

namespace evflex::solver {

namespace {

using Eigen::VectorXd;

constexpr double kBoundPush = 1e-2;
constexpr double kKappaSigma = 1e10;
constexpr double kPrimalReg = 1e-8;
constexpr double kDualReg = 1e-8;
constexpr double kMaxScaling = 100.0;

// Filter line-search constants.
constexpr double kGammaTheta = 1e-5;
constexpr double kGammaPhi = 1e-8;
constexpr double kGammaAlpha = 0.05;
constexpr double kEtaPhi = 1e-8;
constexpr double kSwitchDelta = 1.0;
constexpr double kSTheta = 1.1;
constexpr double kSPhi = 2.3;

struct Row {
  int source = -1;       // spec constraint, or -1 for a fixed-variable row
  int fixed_var = -1;
  bool equality = true;
  double lower = 0.0;
  double upper = 0.0;
  int slack = -1;        // index within z of the slack, or -1
  double scale = 1.0;
  std::vector<int> cols;  // unique x columns
  std::vector<int> linear_pos, square_pos, nonlinear_pos;
  std::size_t value_offset = 0;  // into jac_values_
  std::size_t nl_offset = 0;     // into nl_grad_
};

struct Block {
  std::vector<int> vars;
  Eigen::MatrixXd hessian;
  bool scaled = false;
  std::vector<std::size_t> slots;  // lower-triangle slots, row-major (p > q)
};

class InteriorPoint {
 public:
  InteriorPoint(const ProblemSpec& spec, const NlpOptions& options)
      : spec_(spec), opt_(options) {}

  SolveReport run();

 private:
  void setup();
  void initial_point();
  double objective(const VectorXd& z) const;
  void evaluate(const VectorXd& z, VectorXd& c, bool jacobian);
  double barrier(const VectorXd& z) const;
  VectorXd barrier_gradient(const VectorXd& z, bool with_objective) const;
  VectorXd jt_times(const VectorXd& y) const;
  bool compute_step(const VectorXd& grad_phi, VectorXd& dz, VectorXd& dy);
  void update_bfgs(const VectorXd& x_old, const std::vector<double>& nl_old);
  double optimality_error(double mu, double* stationarity = nullptr) const;
  bool acceptable_to_filter(double theta, double phi) const;
  std::vector<std::string> violated_families() const;
  SolveReport finish(SolveStatus status, int iter, const std::string& msg);

  const ProblemSpec& spec_;
  NlpOptions opt_;
  std::chrono::steady_clock::time_point start_;

  int n_ = 0;  // x variables
  int N_ = 0;  // x + slacks
  int m_ = 0;  // rows
  std::vector<Row> rows_;
  VectorXd lo_, hi_;  // bounds on z
  std::vector<int> lower_idx_, upper_idx_;
  double obj_scale_ = 1.0;
  double obj_sign_ = 1.0;

  std::vector<double> jac_values_;
  std::vector<double> nl_grad_;
  std::vector<std::size_t> jac_slot_;  // KKT slot per jac value
  std::vector<std::size_t> slack_slot_;  // per row, -1 when none
  std::vector<std::size_t> diag_slot_;
  std::vector<Block> blocks_;
  std::vector<int> block_of_var_;
  std::vector<std::pair<int, double>> square_curv_;  // (row, coef) per var list
  std::vector<std::vector<std::pair<int, double>>> squares_by_var_;
  std::unique_ptr<SymmetricKkt> kkt_;
  double hessian_shift_ = 0.0;
  VectorXd step_rhs_;  // primal part of the last step's right-hand side

  VectorXd z_, y_, zl_, zu_, c_;
  double mu_ = 0.1;
  std::vector<std::pair<double, double>> filter_;
  double theta_max_ = 0.0, theta_min_ = 0.0;
};

void InteriorPoint::setup() {
  n_ = static_cast<int>(spec_.variable_count());
  obj_sign_ = spec_.sense == Sense::Maximize ? -1.0 : 1.0;

  std::vector<double> xlo(spec_.lower), xhi(spec_.upper);
  // Fixed variables become equality rows; the barrier never sees them.
  for (int j = 0; j < n_; ++j) {
    if (xlo[j] == xhi[j]) {
      Row r;
      r.fixed_var = j;
      r.lower = r.upper = xlo[j];
      r.cols = {j};
      rows_.push_back(r);
      xlo[j] = -kInf;
      xhi[j] = kInf;
    }
  }
  int slacks = 0;
  for (std::size_t i = 0; i < spec_.constraints.size(); ++i) {
    const Constraint& c = spec_.constraints[i];
    if (!std::isfinite(c.lower) && !std::isfinite(c.upper)) continue;
    Row r;
    r.source = static_cast<int>(i);
    r.lower = c.lower;
    r.upper = c.upper;
    r.equality = c.lower == c.upper;
    if (!r.equality) r.slack = n_ + slacks++;
    std::vector<int> cols;
    for (const auto& t : c.linear) cols.push_back(t.var);
    for (const auto& t : c.squares) cols.push_back(t.var);
    if (c.nonlinear) cols.insert(cols.end(), c.nonlinear->vars.begin(), c.nonlinear->vars.end());
    std::sort(cols.begin(), cols.end());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
    auto pos = [&](int v) {
      return static_cast<int>(std::lower_bound(cols.begin(), cols.end(), v) - cols.begin());
    };
    for (const auto& t : c.linear) r.linear_pos.push_back(pos(t.var));
    for (const auto& t : c.squares) r.square_pos.push_back(pos(t.var));
    if (c.nonlinear) {
      for (int v : c.nonlinear->vars) r.nonlinear_pos.push_back(pos(v));
    }
    r.cols = std::move(cols);
    rows_.push_back(std::move(r));
  }
  m_ = static_cast<int>(rows_.size());
  N_ = n_ + slacks;

  lo_.resize(N_);
  hi_.resize(N_);
  for (int j = 0; j < n_; ++j) {
    lo_[j] = xlo[j];
    hi_[j] = xhi[j];
  }
  for (const Row& r : rows_) {
    if (r.slack >= 0) {
      lo_[r.slack] = r.lower;
      hi_[r.slack] = r.upper;
    }
  }
  for (int i = 0; i < N_; ++i) {
    if (std::isfinite(lo_[i])) lower_idx_.push_back(i);
    if (std::isfinite(hi_[i])) upper_idx_.push_back(i);
  }

  std::size_t nj = 0, nnl = 0;
  for (Row& r : rows_) {
    r.value_offset = nj;
    nj += r.cols.size();
    r.nl_offset = nnl;
    nnl += r.nonlinear_pos.size();
  }
  jac_values_.assign(nj, 0.0);
  nl_grad_.assign(nnl, 0.0);

  // Curvature blocks: connected components of nonlinear-term supports.
  std::vector<int> parent(n_);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  std::vector<char> in_nl(n_, 0);
  for (const Row& r : rows_) {
    if (r.source < 0) continue;
    const auto& nl = spec_.constraints[r.source].nonlinear;
    if (!nl) continue;
    for (int v : nl->vars) in_nl[v] = 1;
    for (std::size_t k = 1; k < nl->vars.size(); ++k) {
      int a = find(nl->vars[0]), b = find(nl->vars[k]);
      if (a != b) parent[a] = b;
    }
  }
  block_of_var_.assign(n_, -1);
  std::map<int, int> root_block;
  for (int j = 0; j < n_; ++j) {
    if (!in_nl[j]) continue;
    const int root = find(j);
    auto [it, inserted] = root_block.try_emplace(root, static_cast<int>(blocks_.size()));
    if (inserted) blocks_.emplace_back();
    block_of_var_[j] = it->second;
    blocks_[it->second].vars.push_back(j);
  }
  for (Block& b : blocks_) {
    const auto k = static_cast<Eigen::Index>(b.vars.size());
    b.hessian = Eigen::MatrixXd::Identity(k, k);
  }

  squares_by_var_.assign(n_, {});
  for (int i = 0; i < m_; ++i) {
    const Row& r = rows_[i];
    if (r.source < 0) continue;
    for (const auto& t : spec_.constraints[r.source].squares) {
      squares_by_var_[t.var].push_back({i, t.coef});
    }
  }

  // KKT pattern.
  kkt_ = std::make_unique<SymmetricKkt>(N_ + m_);
  diag_slot_.resize(N_);
  for (int i = 0; i < N_; ++i) diag_slot_[i] = kkt_->declare(i, i);
  for (Block& b : blocks_) {
    for (std::size_t p = 0; p < b.vars.size(); ++p) {
      for (std::size_t q = 0; q < p; ++q) {
        b.slots.push_back(kkt_->declare(b.vars[p], b.vars[q]));
      }
    }
  }
  jac_slot_.resize(nj);
  slack_slot_.assign(m_, static_cast<std::size_t>(-1));
  for (int i = 0; i < m_; ++i) {
    const Row& r = rows_[i];
    for (std::size_t k = 0; k < r.cols.size(); ++k) {
      jac_slot_[r.value_offset + k] = kkt_->declare(N_ + i, r.cols[k]);
    }
    if (r.slack >= 0) slack_slot_[i] = kkt_->declare(N_ + i, r.slack);
  }
  kkt_->finalize();

  double cmax = 0.0;
  for (double v : spec_.objective) cmax = std::max(cmax, std::abs(v));
  obj_scale_ = cmax > kMaxScaling ? kMaxScaling / cmax : 1.0;
}

double InteriorPoint::objective(const VectorXd& z) const {
  double f = 0.0;
  for (int j = 0; j < n_; ++j) f += spec_.objective[j] * z[j];
  return obj_sign_ * obj_scale_ * f;
}

void InteriorPoint::evaluate(const VectorXd& z, VectorXd& c, bool jacobian) {
  c.resize(m_);
  std::vector<double> local, grad;
  for (int i = 0; i < m_; ++i) {
    const Row& r = rows_[i];
    double* jv = jacobian ? &jac_values_[r.value_offset] : nullptr;
    if (jv) std::fill(jv, jv + r.cols.size(), 0.0);
    double g = 0.0;
    if (r.source < 0) {
      g = z[r.fixed_var];
      if (jv) jv[0] = 1.0;
    } else {
      const Constraint& con = spec_.constraints[r.source];
      for (std::size_t k = 0; k < con.linear.size(); ++k) {
        g += con.linear[k].coef * z[con.linear[k].var];
        if (jv) jv[r.linear_pos[k]] += con.linear[k].coef;
      }
      for (std::size_t k = 0; k < con.squares.size(); ++k) {
        const double x = z[con.squares[k].var];
        g += con.squares[k].coef * x * x;
        if (jv) jv[r.square_pos[k]] += 2.0 * con.squares[k].coef * x;
      }
      if (con.nonlinear) {
        const auto& nl = *con.nonlinear;
        local.resize(nl.vars.size());
        grad.assign(nl.vars.size(), 0.0);
        for (std::size_t k = 0; k < nl.vars.size(); ++k) local[k] = z[nl.vars[k]];
        g += nl.eval(local, grad);
        if (jv) {
          for (std::size_t k = 0; k < nl.vars.size(); ++k) {
            jv[r.nonlinear_pos[k]] += grad[k];
            nl_grad_[r.nl_offset + k] = grad[k];
          }
        }
      }
    }
    const double target = r.slack >= 0 ? z[r.slack] : r.lower;
    c[i] = r.scale * (g - target);
    if (jv) {
      for (std::size_t k = 0; k < r.cols.size(); ++k) jv[k] *= r.scale;
    }
  }
}

double InteriorPoint::barrier(const VectorXd& z) const {
  double phi = objective(z);
  for (int i : lower_idx_) phi -= mu_ * std::log(z[i] - lo_[i]);
  for (int i : upper_idx_) phi -= mu_ * std::log(hi_[i] - z[i]);
  return phi;
}

VectorXd InteriorPoint::barrier_gradient(const VectorXd& z, bool with_objective) const {
  VectorXd g = VectorXd::Zero(N_);
  if (with_objective) {
    for (int j = 0; j < n_; ++j) g[j] = obj_sign_ * obj_scale_ * spec_.objective[j];
  }
  for (int i : lower_idx_) g[i] -= mu_ / (z[i] - lo_[i]);
  for (int i : upper_idx_) g[i] += mu_ / (hi_[i] - z[i]);
  return g;
}

VectorXd InteriorPoint::jt_times(const VectorXd& y) const {
  VectorXd out = VectorXd::Zero(N_);
  for (int i = 0; i < m_; ++i) {
    const Row& r = rows_[i];
    for (std::size_t k = 0; k < r.cols.size(); ++k) {
      out[r.cols[k]] += jac_values_[r.value_offset + k] * y[i];
    }
    if (r.slack >= 0) out[r.slack] -= r.scale * y[i];
  }
  return out;
}

bool InteriorPoint::compute_step(const VectorXd& grad_phi, VectorXd& dz, VectorXd& dy) {
  VectorXd diag = VectorXd::Zero(N_);
  for (int i : lower_idx_) diag[i] += zl_[i] / (z_[i] - lo_[i]);
  for (int i : upper_idx_) diag[i] += zu_[i] / (hi_[i] - z_[i]);
  for (int j = 0; j < n_; ++j) {
    for (const auto& [row, coef] : squares_by_var_[j]) {
      diag[j] += std::max(0.0, 2.0 * coef * y_[row] * rows_[row].scale);
    }
  }

  VectorXd shift(N_ + m_);
  shift.head(N_).setConstant(kPrimalReg);
  shift.tail(m_).setConstant(-kDualReg);

  double delta = 0.0;
  for (int attempt = 0; attempt < 30; ++attempt) {
    kkt_->clear_values();
    for (int i = 0; i < N_; ++i) kkt_->add(diag_slot_[i], diag[i] + delta);
    for (const Block& b : blocks_) {
      std::size_t s = 0;
      for (std::size_t p = 0; p < b.vars.size(); ++p) {
        kkt_->add(diag_slot_[b.vars[p]], b.hessian(p, p));
        for (std::size_t q = 0; q < p; ++q) kkt_->add(b.slots[s++], b.hessian(p, q));
      }
    }
    for (std::size_t k = 0; k < jac_values_.size(); ++k) kkt_->add(jac_slot_[k], jac_values_[k]);
    for (int i = 0; i < m_; ++i) {
      if (rows_[i].slack >= 0) kkt_->add(slack_slot_[i], -rows_[i].scale);
    }
    const bool ok = kkt_->factorize(shift);
    if (ok && kkt_->positive_pivots() == N_ && kkt_->negative_pivots() == m_) {
      hessian_shift_ = delta;
      VectorXd rhs(N_ + m_);
      rhs.head(N_) = -(grad_phi + jt_times(y_));
      rhs.tail(m_) = -c_;
      step_rhs_ = rhs.head(N_);
      VectorXd sol = kkt_->solve(rhs);
      if (!sol.allFinite()) return false;
      dz = sol.head(N_);
      dy = sol.tail(m_);
      return true;
    }
    delta = delta == 0.0 ? std::max(1e-4, hessian_shift_ / 3.0) : delta * 8.0;
    if (delta > 1e20) break;
  }
  return false;
}

void InteriorPoint::update_bfgs(const VectorXd& x_old, const std::vector<double>& nl_old) {
  std::vector<VectorXd> yv(blocks_.size());
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    yv[b] = VectorXd::Zero(static_cast<Eigen::Index>(blocks_[b].vars.size()));
  }
  std::vector<std::vector<int>> local_index(blocks_.size());
  // Position of each variable inside its block.
  std::vector<int> pos(n_, -1);
  for (const Block& b : blocks_) {
    for (std::size_t p = 0; p < b.vars.size(); ++p) pos[b.vars[p]] = static_cast<int>(p);
  }
  for (int i = 0; i < m_; ++i) {
    const Row& r = rows_[i];
    if (r.source < 0 || r.nonlinear_pos.empty()) continue;
    const auto& vars = spec_.constraints[r.source].nonlinear->vars;
    const double w = y_[i] * r.scale;
    for (std::size_t k = 0; k < vars.size(); ++k) {
      const int v = vars[k];
      yv[block_of_var_[v]][pos[v]] += w * (nl_grad_[r.nl_offset + k] - nl_old[r.nl_offset + k]);
    }
  }
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    Block& blk = blocks_[b];
    VectorXd s(static_cast<Eigen::Index>(blk.vars.size()));
    for (std::size_t p = 0; p < blk.vars.size(); ++p) s[p] = z_[blk.vars[p]] - x_old[blk.vars[p]];
    const double ss = s.squaredNorm();
    if (ss < 1e-24) continue;
    const VectorXd& yy = yv[b];
    double sy = s.dot(yy);
    if (!blk.scaled && sy > 1e-16) {
      const double gamma = std::clamp(yy.squaredNorm() / sy, 1e-6, 1e8);
      blk.hessian *= gamma;
      blk.scaled = true;
    }
    VectorXd bs = blk.hessian * s;
    const double sbs = s.dot(bs);
    if (sbs <= 1e-20 * ss) continue;
    VectorXd r = yy;
    if (sy < 0.2 * sbs) {
      const double theta = 0.8 * sbs / (sbs - sy);
      r = theta * yy + (1.0 - theta) * bs;
    }
    const double sr = s.dot(r);
    if (!(sr > 0.0)) continue;
    blk.hessian += -bs * bs.transpose() / sbs + r * r.transpose() / sr;
  }
}

double InteriorPoint::optimality_error(double mu, double* stationarity) const {
  VectorXd rd = barrier_gradient(z_, true);
  // barrier_gradient includes −μ/(z−l); stationarity uses the multipliers.
  for (int j = 0; j < n_; ++j) rd[j] = obj_sign_ * obj_scale_ * spec_.objective[j];
  for (int j = n_; j < N_; ++j) rd[j] = 0.0;
  rd += jt_times(y_);
  double zsum = 0.0;
  for (int i : lower_idx_) {
    rd[i] -= zl_[i];
    zsum += std::abs(zl_[i]);
  }
  for (int i : upper_idx_) {
    rd[i] += zu_[i];
    zsum += std::abs(zu_[i]);
  }
  const double nb = static_cast<double>(lower_idx_.size() + upper_idx_.size());
  const double sd = std::max(kMaxScaling, (y_.lpNorm<1>() + zsum) / std::max(1.0, m_ + nb)) / kMaxScaling;
  const double sc = std::max(kMaxScaling, zsum / std::max(1.0, nb)) / kMaxScaling;
  double comp = 0.0;
  for (int i : lower_idx_) comp = std::max(comp, std::abs((z_[i] - lo_[i]) * zl_[i] - mu));
  for (int i : upper_idx_) comp = std::max(comp, std::abs((hi_[i] - z_[i]) * zu_[i] - mu));
  const double stat = rd.lpNorm<Eigen::Infinity>() / sd;
  if (stationarity) *stationarity = stat;
  return std::max({stat, m_ > 0 ? c_.lpNorm<Eigen::Infinity>() : 0.0, comp / sc});
}

bool InteriorPoint::acceptable_to_filter(double theta, double phi) const {
  for (const auto& [ft, fp] : filter_) {
    if (theta >= ft && phi >= fp) return false;
  }
  return true;
}

void InteriorPoint::initial_point() {
  z_ = VectorXd::Zero(N_);
  for (int j = 0; j < n_; ++j) {
    if (!spec_.initial.empty()) z_[j] = spec_.initial[j];
  }
  // Row scaling from the gradient at the unprojected start.
  auto push_inside = [](double v, double l, double u) {
    if (std::isfinite(l) && std::isfinite(u)) {
      const double pl = std::min(kBoundPush * std::max(1.0, std::abs(l)), kBoundPush * (u - l));
      const double pu = std::min(kBoundPush * std::max(1.0, std::abs(u)), kBoundPush * (u - l));
      return std::clamp(v, l + pl, u - pu);
    }
    if (std::isfinite(l)) return std::max(v, l + kBoundPush * std::max(1.0, std::abs(l)));
    if (std::isfinite(u)) return std::min(v, u - kBoundPush * std::max(1.0, std::abs(u)));
    return v;
  };
  for (int j = 0; j < n_; ++j) z_[j] = push_inside(z_[j], lo_[j], hi_[j]);

  for (Row& r : rows_) r.scale = 1.0;
  VectorXd g;
  evaluate(z_, g, true);
  for (int i = 0; i < m_; ++i) {
    Row& r = rows_[i];
    double norm = 0.0;
    for (std::size_t k = 0; k < r.cols.size(); ++k) {
      norm = std::max(norm, std::abs(jac_values_[r.value_offset + k]));
    }
    r.scale = 1.0 / std::max(1.0, norm);
    if (r.slack >= 0) {
      // c = g − s with s = 0 at this point, so c holds g(x0).
      z_[r.slack] = push_inside(g[i], lo_[r.slack], hi_[r.slack]);
    }
  }
  y_ = VectorXd::Zero(m_);
  zl_ = VectorXd::Zero(N_);
  zu_ = VectorXd::Zero(N_);
  for (int i : lower_idx_) zl_[i] = 1.0;
  for (int i : upper_idx_) zu_[i] = 1.0;
}

std::vector<std::string> InteriorPoint::violated_families() const {
  std::map<int, double> worst;
  for (int i = 0; i < m_; ++i) {
    const double v = std::abs(c_[i]);
    if (v <= opt_.feas_tol) continue;
    const int fam = rows_[i].source < 0 ? -1 : spec_.constraints[rows_[i].source].family;
    worst[fam] = std::max(worst[fam], v);
  }
  std::vector<std::pair<double, int>> order;
  for (const auto& [fam, v] : worst) order.push_back({-v, fam});
  std::sort(order.begin(), order.end());
  std::vector<std::string> names;
  for (const auto& [v, fam] : order) {
    if (fam < 0) {
      names.push_back("fixed_variable");
    } else if (static_cast<std::size_t>(fam) < spec_.family_names.size()) {
      names.push_back(spec_.family_names[fam]);
    } else {
      names.push_back("family_" + std::to_string(fam));
    }
  }
  return names;
}

SolveReport InteriorPoint::finish(SolveStatus status, int iter, const std::string& msg) {
  SolveReport rep;
  rep.status = status;
  rep.iterations = iter;
  rep.message = msg;
  rep.primal.assign(z_.data(), z_.data() + n_);
  rep.objective = evaluate_objective(spec_, rep.primal);
  rep.row_duals.assign(spec_.constraints.size(), 0.0);
  for (int i = 0; i < m_; ++i) {
    if (rows_[i].source >= 0) {
      rep.row_duals[rows_[i].source] = obj_sign_ * y_[i] * rows_[i].scale / obj_scale_;
    }
  }
  rep.max_violation = max_violation(spec_, rep.primal).max_absolute;
  rep.kkt_residual = optimality_error(0.0);
  if (status == SolveStatus::Infeasible) rep.infeasible_families = violated_families();
  rep.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  return rep;
}

SolveReport InteriorPoint::run() {
  start_ = std::chrono::steady_clock::now();
  spec_.validate();
  setup();
  initial_point();

  mu_ = 0.1;
  evaluate(z_, c_, true);
  double theta = c_.lpNorm<1>();
  theta_max_ = 1e4 * std::max(1.0, theta);
  theta_min_ = 1e-4 * std::max(1.0, theta);
  const double mu_min = std::min(opt_.feas_tol, opt_.opt_tol) / 10.0;

  bool restoring = false;
  double theta_restore_start = 0.0;
  int restore_iters = 0;
  VectorXd x_prev;
  std::vector<double> nl_prev;
  bool have_prev = false;

  for (int iter = 0; iter < opt_.max_iter; ++iter) {
    if (have_prev) update_bfgs(x_prev, nl_prev);

    const double err0 = optimality_error(0.0);
    if (opt_.verbose) {
      Eigen::Index worst_row = 0;
      if (m_ > 0) c_.cwiseAbs().maxCoeff(&worst_row);
      std::fprintf(stderr, "it %4d  mu %.2e  theta %.3e  err %.3e  f %.8e  row %ld%s\n", iter, mu_,
                   c_.lpNorm<Eigen::Infinity>(), err0, objective(z_) / obj_scale_,
                   static_cast<long>(m_ > 0 ? rows_[worst_row].source : -1), restoring ? "  R" : "");
    }
    if (!restoring && err0 <= opt_.opt_tol && (m_ == 0 || c_.lpNorm<Eigen::Infinity>() <= opt_.feas_tol)) {
      std::vector<double> x(z_.data(), z_.data() + n_);
      if (max_violation(spec_, x).max_absolute <= opt_.feas_tol) {
        return finish(SolveStatus::Optimal, iter, "converged");
      }
    }

    if (!restoring) {
      while (mu_ > mu_min && optimality_error(mu_) <= 10.0 * mu_) {
        mu_ = std::max(mu_min, std::min(0.2 * mu_, std::pow(mu_, 1.5)));
        filter_.clear();
      }
    }

    const VectorXd grad_phi = barrier_gradient(z_, !restoring);
    VectorXd dz, dy;
    if (!compute_step(grad_phi, dz, dy)) {
      return finish(SolveStatus::NumericalFailure, iter, "KKT factorization failed");
    }
    const double tau = std::max(0.99, 1.0 - mu_);

    VectorXd dzl, dzu;
    double alpha_dual = 1.0;
    auto bound_duals = [&](const VectorXd& d) {
      dzl = VectorXd::Zero(N_);
      dzu = VectorXd::Zero(N_);
      alpha_dual = 1.0;
      for (int i : lower_idx_) {
        const double gap = z_[i] - lo_[i];
        dzl[i] = mu_ / gap - zl_[i] - zl_[i] / gap * d[i];
        if (dzl[i] < 0.0) alpha_dual = std::min(alpha_dual, -tau * zl_[i] / dzl[i]);
      }
      for (int i : upper_idx_) {
        const double gap = hi_[i] - z_[i];
        dzu[i] = mu_ / gap - zu_[i] + zu_[i] / gap * d[i];
        if (dzu[i] < 0.0) alpha_dual = std::min(alpha_dual, -tau * zu_[i] / dzu[i]);
      }
    };
    auto primal_max = [&](const VectorXd& d) {
      double a = 1.0;
      for (int i : lower_idx_) {
        if (d[i] < 0.0) a = std::min(a, -tau * (z_[i] - lo_[i]) / d[i]);
      }
      for (int i : upper_idx_) {
        if (d[i] > 0.0) a = std::min(a, tau * (hi_[i] - z_[i]) / d[i]);
      }
      return a;
    };
    const double alpha_max = primal_max(dz);

    theta = m_ > 0 ? c_.lpNorm<1>() : 0.0;
    const double phi = barrier(z_);
    const double slope = grad_phi.dot(dz);
    double alpha_min;
    if (restoring) {
      alpha_min = 1e-12;
    } else if (slope < 0.0) {
      alpha_min = kGammaTheta;
      alpha_min = std::min(alpha_min, kGammaPhi * theta / -slope);
      if (theta <= theta_min_) {
        alpha_min = std::min(alpha_min, kSwitchDelta * std::pow(theta, kSTheta) / std::pow(-slope, kSPhi));
      }
      alpha_min *= kGammaAlpha;
    } else {
      alpha_min = kGammaAlpha * kGammaTheta;
    }
    alpha_min = std::min(alpha_min, 1e-3);

    double alpha = alpha_max;
    bool accepted = false;
    bool augment = false;
    VectorXd z_trial, c_trial;
    double theta_trial = 0.0, phi_trial = 0.0;
    auto acceptable = [&](double a) {
      augment = false;
      if (restoring) return theta_trial <= (1.0 - 1e-4 * a) * theta;
      if (theta_trial > theta_max_ || !acceptable_to_filter(theta_trial, phi_trial)) return false;
      const bool switching = slope < 0.0 && a * std::pow(-slope, kSPhi) > kSwitchDelta * std::pow(theta, kSTheta);
      if (theta <= theta_min_ && switching) return phi_trial <= phi + kEtaPhi * a * slope;
      augment = theta_trial <= (1.0 - kGammaTheta) * theta || phi_trial <= phi - kGammaPhi * theta;
      return augment;
    };
    VectorXd step = dz;
    while (alpha >= alpha_min * alpha_max || (restoring && alpha >= 1e-12)) {
      z_trial = z_ + alpha * dz;
      evaluate(z_trial, c_trial, false);
      theta_trial = m_ > 0 ? c_trial.lpNorm<1>() : 0.0;
      phi_trial = barrier(z_trial);
      if (!std::isfinite(theta_trial) || !std::isfinite(phi_trial)) {
        alpha *= 0.5;
        continue;
      }
      if (acceptable(alpha)) {
        accepted = true;
        break;
      }
      if (!restoring && alpha == alpha_max && theta_trial >= theta) {
        // Second-order correction of the full step.
        VectorXd c_soc = alpha * c_ + c_trial;
        double theta_prev = theta_trial;
        for (int k = 0; k < 4 && !accepted; ++k) {
          VectorXd rhs(N_ + m_);
          rhs.head(N_) = step_rhs_;
          rhs.tail(m_) = -c_soc;
          const VectorXd sol = kkt_->solve(rhs);
          if (!sol.allFinite()) break;
          const VectorXd d_soc = sol.head(N_);
          const double a_soc = primal_max(d_soc);
          z_trial = z_ + a_soc * d_soc;
          evaluate(z_trial, c_trial, false);
          theta_trial = m_ > 0 ? c_trial.lpNorm<1>() : 0.0;
          phi_trial = barrier(z_trial);
          if (!std::isfinite(theta_trial) || !std::isfinite(phi_trial)) break;
          if (acceptable(alpha)) {
            accepted = true;
            step = d_soc;
            alpha = a_soc;
            dy = sol.tail(m_);
            break;
          }
          if (theta_trial > 0.99 * theta_prev) break;
          theta_prev = theta_trial;
          c_soc = a_soc * c_soc + c_trial;
        }
        if (accepted) break;
      }
      alpha *= 0.5;
    }
    bound_duals(step);

    if (!accepted) {
      if (restoring) {
        const std::string msg = "feasibility restoration failed to reduce infeasibility";
        if (theta > opt_.feas_tol) return finish(SolveStatus::Infeasible, iter, msg);
        return finish(SolveStatus::NumericalFailure, iter, msg);
      }
      restoring = true;
      y_.setZero();
      theta_restore_start = theta;
      restore_iters = 0;
      have_prev = false;
      continue;
    }

    if (augment) filter_.push_back({(1.0 - kGammaTheta) * theta, phi - kGammaPhi * theta});

    x_prev = z_.head(n_);
    nl_prev = nl_grad_;
    have_prev = true;
    z_ = z_trial;
    if (!restoring) y_ += alpha * dy;
    const double alpha_z = restoring ? std::min(alpha, alpha_dual) : alpha_dual;
    zl_ += alpha_z * dzl;
    zu_ += alpha_z * dzu;
    for (int i : lower_idx_) {
      const double gap = z_[i] - lo_[i];
      zl_[i] = std::clamp(zl_[i], mu_ / (kKappaSigma * gap), kKappaSigma * mu_ / gap);
    }
    for (int i : upper_idx_) {
      const double gap = hi_[i] - z_[i];
      zu_[i] = std::clamp(zu_[i], mu_ / (kKappaSigma * gap), kKappaSigma * mu_ / gap);
    }
    evaluate(z_, c_, true);

    if (restoring) {
      ++restore_iters;
      const double th = c_.lpNorm<1>();
      if (th <= 0.9 * theta_restore_start && acceptable_to_filter(th, barrier(z_))) {
        restoring = false;
        y_.setZero();
      } else if (restore_iters > 200) {
        return finish(SolveStatus::Infeasible, iter, "feasibility restoration stalled");
      }
    }
  }
  return finish(SolveStatus::IterationLimit, opt_.max_iter, "iteration limit reached");
}

}  // namespace

SolveReport solve_nlp(const ProblemSpec& spec, const NlpOptions& options) {
  InteriorPoint ip(spec, options);
  return ip.run();
}

}  // namespace evflex::solver
