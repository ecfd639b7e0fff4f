#include "covsteer/sdp.hpp"

#include "covsteer/error.hpp"

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace covsteer::sdp {

// ---------------------------------------------------------------------------
// Affine

Affine::Affine(Index rows, Index cols)
    : constant_(Mat::Zero(rows, cols)), terms_(static_cast<std::size_t>(rows * cols)) {}

Affine::Affine(const Mat& constant)
    : constant_(constant), terms_(static_cast<std::size_t>(constant.size())) {}

void Affine::add_term(Index r, Index c, int var, double coef) {
  if (coef != 0.0) terms_[idx(r, c)].push_back({var, coef});
}

Affine Affine::transpose() const {
  Affine out(cols(), rows());
  out.constant_ = constant_.transpose();
  for (Index r = 0; r < rows(); ++r) {
    for (Index c = 0; c < cols(); ++c) out.terms_[out.idx(c, r)] = terms_[idx(r, c)];
  }
  return out;
}

Affine Affine::block(Index r, Index c, Index nr, Index nc) const {
  if (r < 0 || c < 0 || r + nr > rows() || c + nc > cols()) {
    throw DimensionError("Affine::block out of range");
  }
  Affine out(nr, nc);
  out.constant_ = constant_.block(r, c, nr, nc);
  for (Index i = 0; i < nr; ++i) {
    for (Index j = 0; j < nc; ++j) out.terms_[out.idx(i, j)] = terms_[idx(r + i, c + j)];
  }
  return out;
}

Affine Affine::trace() const {
  if (rows() != cols()) throw DimensionError("Affine::trace of non-square expression");
  Affine out(1, 1);
  for (Index i = 0; i < rows(); ++i) {
    out.constant_(0, 0) += constant_(i, i);
    const auto& t = terms_[idx(i, i)];
    out.terms_[0].insert(out.terms_[0].end(), t.begin(), t.end());
  }
  out.compress();
  return out;
}

Affine Affine::blocks(const std::vector<std::vector<Affine>>& grid) {
  if (grid.empty() || grid[0].empty()) return Affine(0, 0);
  std::vector<Index> heights, widths;
  for (const auto& row : grid) {
    if (row.size() != grid[0].size()) throw DimensionError("Affine::blocks: ragged grid");
    heights.push_back(row[0].rows());
  }
  for (const auto& cell : grid[0]) widths.push_back(cell.cols());
  Index total_r = 0, total_c = 0;
  for (Index h : heights) total_r += h;
  for (Index w : widths) total_c += w;
  Affine out(total_r, total_c);
  Index r0 = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    Index c0 = 0;
    for (std::size_t j = 0; j < grid[i].size(); ++j) {
      const Affine& cell = grid[i][j];
      if (cell.rows() != heights[i] || cell.cols() != widths[j]) {
        throw DimensionError("Affine::blocks: block shapes do not conform");
      }
      out.constant_.block(r0, c0, cell.rows(), cell.cols()) = cell.constant_;
      for (Index r = 0; r < cell.rows(); ++r) {
        for (Index c = 0; c < cell.cols(); ++c) {
          out.terms_[out.idx(r0 + r, c0 + c)] = cell.terms_[cell.idx(r, c)];
        }
      }
      c0 += widths[j];
    }
    r0 += heights[i];
  }
  return out;
}

Mat Affine::evaluate(const Vec& y) const {
  Mat out = constant_;
  for (Index r = 0; r < rows(); ++r) {
    for (Index c = 0; c < cols(); ++c) {
      for (const Term& t : terms_[idx(r, c)]) out(r, c) += t.coef * y(t.var);
    }
  }
  return out;
}

namespace {

bool same_terms(std::vector<Affine::Term> a, std::vector<Affine::Term> b, double tol) {
  auto by_var = [](const Affine::Term& x, const Affine::Term& y) { return x.var < y.var; };
  std::sort(a.begin(), a.end(), by_var);
  std::sort(b.begin(), b.end(), by_var);
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && a[i].var < b[j].var)) {
      if (std::abs(a[i].coef) > tol) return false;
      ++i;
    } else if (i == a.size() || b[j].var < a[i].var) {
      if (std::abs(b[j].coef) > tol) return false;
      ++j;
    } else {
      if (std::abs(a[i].coef - b[j].coef) > tol * (1.0 + std::abs(a[i].coef))) return false;
      ++i;
      ++j;
    }
  }
  return true;
}

}  // namespace

bool Affine::is_symmetric(double tol) const {
  if (rows() != cols()) return false;
  for (Index r = 0; r < rows(); ++r) {
    for (Index c = r + 1; c < cols(); ++c) {
      if (std::abs(constant_(r, c) - constant_(c, r)) > tol * (1.0 + std::abs(constant_(r, c)))) {
        return false;
      }
      if (!same_terms(terms_[idx(r, c)], terms_[idx(c, r)], tol)) return false;
    }
  }
  return true;
}

void Affine::compress() {
  for (auto& list : terms_) {
    if (list.size() < 2) {
      if (list.size() == 1 && list[0].coef == 0.0) list.clear();
      continue;
    }
    std::sort(list.begin(), list.end(), [](const Term& a, const Term& b) { return a.var < b.var; });
    std::size_t w = 0;
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (w > 0 && list[w - 1].var == list[i].var) {
        list[w - 1].coef += list[i].coef;
      } else {
        list[w++] = list[i];
      }
    }
    list.resize(w);
    list.erase(std::remove_if(list.begin(), list.end(), [](const Term& t) { return t.coef == 0.0; }),
               list.end());
  }
}

Affine& Affine::operator+=(const Affine& o) {
  if (o.rows() != rows() || o.cols() != cols()) throw DimensionError("Affine: shape mismatch in +");
  constant_ += o.constant_;
  for (std::size_t i = 0; i < terms_.size(); ++i) {
    terms_[i].insert(terms_[i].end(), o.terms_[i].begin(), o.terms_[i].end());
  }
  compress();
  return *this;
}

Affine& Affine::operator-=(const Affine& o) {
  if (o.rows() != rows() || o.cols() != cols()) throw DimensionError("Affine: shape mismatch in -");
  constant_ -= o.constant_;
  for (std::size_t i = 0; i < terms_.size(); ++i) {
    for (const Term& t : o.terms_[i]) terms_[i].push_back({t.var, -t.coef});
  }
  compress();
  return *this;
}

Affine& Affine::operator*=(double s) {
  constant_ *= s;
  for (auto& list : terms_) {
    for (Term& t : list) t.coef *= s;
  }
  if (s == 0.0) compress();
  return *this;
}

Affine operator*(const Mat& m, const Affine& a) {
  if (m.cols() != a.rows()) throw DimensionError("Mat * Affine: inner dimensions differ");
  Affine out(m.rows(), a.cols());
  out.constant_ = m * a.constant_;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      auto& dst = out.terms_[out.idx(i, j)];
      for (Index t = 0; t < m.cols(); ++t) {
        const double f = m(i, t);
        if (f == 0.0) continue;
        for (const auto& term : a.terms_[a.idx(t, j)]) dst.push_back({term.var, f * term.coef});
      }
    }
  }
  out.compress();
  return out;
}

Affine operator*(const Affine& a, const Mat& m) {
  if (a.cols() != m.rows()) throw DimensionError("Affine * Mat: inner dimensions differ");
  Affine out(a.rows(), m.cols());
  out.constant_ = a.constant_ * m;
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      auto& dst = out.terms_[out.idx(i, j)];
      for (Index t = 0; t < a.cols(); ++t) {
        const double f = m(t, j);
        if (f == 0.0) continue;
        for (const auto& term : a.terms_[a.idx(i, t)]) dst.push_back({term.var, f * term.coef});
      }
    }
  }
  out.compress();
  return out;
}

Affine trace_product(const Mat& q, const Affine& x) {
  if (q.cols() != x.rows() || q.rows() != x.cols()) {
    throw DimensionError("trace_product: shapes do not conform");
  }
  Affine out(1, 1);
  Mat c(1, 1);
  c(0, 0) = (q * x.constant()).trace();
  out += Affine(c);
  for (Index i = 0; i < q.rows(); ++i) {
    for (Index t = 0; t < q.cols(); ++t) {
      const double f = q(i, t);
      if (f == 0.0) continue;
      for (const auto& term : x.terms(t, i)) out.add_term(0, 0, term.var, f * term.coef);
    }
  }
  out.compress();
  return out;
}

// ---------------------------------------------------------------------------
// Problem

Affine Problem::declare(const std::string& name, VarKind kind, Index rows, Index cols) {
  if (rows <= 0 || cols <= 0) throw DimensionError("variable '" + name + "' must have positive size");
  if (by_name_.count(name)) throw Error("duplicate variable name '" + name + "'");
  VarInfo v{name, kind, rows, cols, num_scalars_, 0};
  Affine e(rows, cols);
  int next = num_scalars_;
  if (kind == VarKind::symmetric) {
    for (Index r = 0; r < rows; ++r) {
      for (Index c = r; c < cols; ++c) {
        e.add_term(r, c, next, 1.0);
        if (c != r) e.add_term(c, r, next, 1.0);
        ++next;
      }
    }
  } else {
    for (Index r = 0; r < rows; ++r) {
      for (Index c = 0; c < cols; ++c) e.add_term(r, c, next++, 1.0);
    }
  }
  v.count = next - num_scalars_;
  num_scalars_ = next;
  by_name_[name] = vars_.size();
  vars_.push_back(v);
  return e;
}

Affine Problem::add_symmetric(const std::string& name, Index dim) {
  return declare(name, VarKind::symmetric, dim, dim);
}

Affine Problem::add_matrix(const std::string& name, Index rows, Index cols) {
  return declare(name, VarKind::matrix, rows, cols);
}

Affine Problem::add_scalar(const std::string& name) { return declare(name, VarKind::scalar, 1, 1); }

void Problem::check_vars(const Affine& e, const char* what) const {
  for (Index r = 0; r < e.rows(); ++r) {
    for (Index c = 0; c < e.cols(); ++c) {
      for (const auto& t : e.terms(r, c)) {
        if (t.var < 0 || t.var >= num_scalars_) {
          throw Error(std::string(what) + ": expression references an undeclared variable");
        }
      }
    }
  }
}

void Problem::add_equality(const Affine& lhs, const Mat& rhs, std::string label) {
  if (lhs.rows() != rhs.rows() || lhs.cols() != rhs.cols()) {
    throw DimensionError("add_equality: lhs and rhs shapes differ");
  }
  require_finite(rhs, "add_equality");
  check_vars(lhs, "add_equality");
  equalities_.push_back({lhs, rhs, std::move(label)});
}

void Problem::add_psd(const Affine& expr, std::string label) {
  if (expr.rows() != expr.cols()) throw DimensionError("add_psd: expression must be square");
  if (!expr.is_symmetric(1e-12)) throw Error("add_psd: expression '" + label + "' is not symmetric");
  check_vars(expr, "add_psd");
  psd_.push_back({expr, std::move(label)});
}

void Problem::set_objective(const Affine& expr) {
  if (expr.rows() != 1 || expr.cols() != 1) throw DimensionError("set_objective: expression must be 1x1");
  check_vars(expr, "set_objective");
  objective_ = expr;
}

const VarInfo& Problem::variable(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw Error("unknown variable '" + name + "'");
  return vars_[it->second];
}

Mat Problem::value_of(const VarInfo& v, const Vec& y) const {
  Mat out(v.rows, v.cols);
  int k = v.offset;
  if (v.kind == VarKind::symmetric) {
    for (Index r = 0; r < v.rows; ++r) {
      for (Index c = r; c < v.cols; ++c) {
        out(r, c) = y(k);
        out(c, r) = y(k);
        ++k;
      }
    }
  } else {
    for (Index r = 0; r < v.rows; ++r) {
      for (Index c = 0; c < v.cols; ++c) out(r, c) = y(k++);
    }
  }
  return out;
}

namespace {

const char* kind_name(VarKind k) {
  switch (k) {
    case VarKind::symmetric: return "symmetric";
    case VarKind::matrix: return "matrix";
    case VarKind::scalar: return "scalar";
  }
  return "?";
}

void dump_terms(std::ostream& os, const Affine& e, Index r, Index c) {
  os << std::setprecision(17) << e.constant()(r, c);
  auto terms = e.terms(r, c);
  std::sort(terms.begin(), terms.end(), [](const auto& a, const auto& b) { return a.var < b.var; });
  for (const auto& t : terms) os << (t.coef < 0 ? " - " : " + ") << std::abs(t.coef) << "*y" << t.var;
}

}  // namespace

std::string Problem::dump() const {
  std::ostringstream os;
  os << "variables " << vars_.size() << " scalars " << num_scalars_ << "\n";
  for (const auto& v : vars_) {
    os << "var " << v.name << " " << kind_name(v.kind) << " " << v.rows << "x" << v.cols << " y["
       << v.offset << ".." << v.offset + v.count - 1 << "]\n";
  }
  os << "minimize ";
  dump_terms(os, objective_, 0, 0);
  os << "\n";
  for (std::size_t i = 0; i < equalities_.size(); ++i) {
    const auto& eq = equalities_[i];
    for (Index r = 0; r < eq.lhs.rows(); ++r) {
      for (Index c = 0; c < eq.lhs.cols(); ++c) {
        os << "eq " << i << " " << eq.label << " (" << r << "," << c << "): ";
        dump_terms(os, eq.lhs, r, c);
        os << " = " << eq.rhs(r, c) << "\n";
      }
    }
  }
  for (std::size_t i = 0; i < psd_.size(); ++i) {
    const auto& b = psd_[i];
    os << "psd " << i << " " << b.label << " dim " << b.expr.rows() << ":";
    for (Index r = 0; r < b.expr.rows(); ++r) {
      for (Index c = r; c < b.expr.cols(); ++c) {
        os << " [" << r << "," << c << "] ";
        dump_terms(os, b.expr, r, c);
      }
    }
    os << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Standard form

ConicForm to_conic(const Problem& p) {
  ConicForm f;
  const int n = p.num_scalars();
  f.c = Vec::Zero(n);
  f.c0 = p.objective().constant()(0, 0);
  for (const auto& t : p.objective().terms(0, 0)) f.c(t.var) += t.coef;

  Index rows = 0;
  for (const auto& eq : p.equalities()) rows += eq.lhs.size();
  f.a = Mat::Zero(rows, n);
  f.b = Vec::Zero(rows);
  Index row = 0;
  for (const auto& eq : p.equalities()) {
    for (Index r = 0; r < eq.lhs.rows(); ++r) {
      for (Index c = 0; c < eq.lhs.cols(); ++c) {
        for (const auto& t : eq.lhs.terms(r, c)) f.a(row, t.var) += t.coef;
        f.b(row) = eq.rhs(r, c) - eq.lhs.constant()(r, c);
        ++row;
      }
    }
  }

  for (const auto& blk : p.psd_blocks()) {
    LmiBlock b;
    b.dim = blk.expr.rows();
    b.constant = 0.5 * (blk.expr.constant() + blk.expr.constant().transpose());
    std::unordered_map<int, std::size_t> local;
    for (Index r = 0; r < b.dim; ++r) {
      for (Index c = r; c < b.dim; ++c) {
        for (const auto& t : blk.expr.terms(r, c)) {
          auto [it, inserted] = local.try_emplace(t.var, b.vars.size());
          if (inserted) {
            b.vars.push_back(t.var);
            b.coeffs.emplace_back();
          }
          b.coeffs[it->second].push_back({static_cast<int>(r), static_cast<int>(c), t.coef});
        }
      }
    }
    f.blocks.push_back(std::move(b));
  }
  return f;
}

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::unbounded: return "unbounded";
    case SolveStatus::numerical_failure: return "numerical_failure";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Interior-point method

namespace {

// <F, X> for sparse symmetric F stored by upper triangle; X need not be symmetric.
double inner(const std::vector<SymEntry>& f, const Mat& x) {
  double s = 0.0;
  for (const auto& e : f) {
    s += e.row == e.col ? e.value * x(e.row, e.col) : e.value * (x(e.row, e.col) + x(e.col, e.row));
  }
  return s;
}

Mat apply_block(const LmiBlock& b, const Vec& y) {
  Mat out = Mat::Zero(b.dim, b.dim);
  for (std::size_t k = 0; k < b.vars.size(); ++k) {
    const double v = y(b.vars[k]);
    if (v == 0.0) continue;
    for (const auto& e : b.coeffs[k]) {
      out(e.row, e.col) += v * e.value;
      if (e.row != e.col) out(e.col, e.row) += v * e.value;
    }
  }
  return out;
}

void adjoint_add(const LmiBlock& b, const Mat& x, Vec& out) {
  for (std::size_t k = 0; k < b.vars.size(); ++k) out(b.vars[k]) += inner(b.coeffs[k], x);
}

// Largest alpha with x + alpha * dx still PSD (x positive definite).
double max_step(const Mat& x, const Mat& dx) {
  Eigen::LLT<Mat> llt(x);
  if (llt.info() != Eigen::Success) return 0.0;
  const Mat& l = llt.matrixL();
  Mat q = llt.matrixL().solve(dx);
  q = llt.matrixL().solve(q.transpose()).transpose();
  (void)l;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (q + q.transpose()), Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff();
  return lmin >= 0 ? std::numeric_limits<double>::infinity() : -1.0 / lmin;
}

double frob_inner(const Mat& a, const Mat& b) { return (a.array() * b.array()).sum(); }

struct Direction {
  Vec dy;
  Vec dnu;
  std::vector<Mat> dx;
  std::vector<Mat> dz;
};

// Optimality residual with the complementarity written as (SX + XS)/2 = 0,
// S = F(y) being the slack and X the dual block.
struct KktResidual {
  Vec primal;               // b - A y
  Vec dual;                 // c - A^T nu - F^*(X)
  std::vector<Mat> comp;    // (S X + X S) / 2
  std::vector<Mat> slack;   // S

  double norm() const {
    double s = primal.squaredNorm() + dual.squaredNorm();
    for (const auto& c : comp) s += c.squaredNorm();
    return std::sqrt(s);
  }
};

KktResidual kkt_residual(const ConicForm& form, const Mat& a, const Vec& b, const Vec& y, const Vec& nu,
                         const std::vector<Mat>& x) {
  KktResidual r;
  r.primal = a.rows() > 0 ? Vec(b - a * y) : Vec::Zero(0);
  r.dual = form.c;
  if (a.rows() > 0) r.dual -= a.transpose() * nu;
  Vec aty = Vec::Zero(form.c.size());
  for (std::size_t j = 0; j < form.blocks.size(); ++j) {
    const auto& blk = form.blocks[j];
    adjoint_add(blk, x[j], aty);
    Mat s = blk.constant + apply_block(blk, y);
    r.comp.push_back(0.5 * (s * x[j] + x[j] * s));
    r.slack.push_back(std::move(s));
  }
  r.dual -= aty;
  return r;
}

// Newton steps on the symmetrized optimality system, started from a
// near-optimal interior point. Near a strictly complementary, nondegenerate
// solution the Jacobian is nonsingular and the iterate lands on the optimum
// to working precision, which the path-following iterates (whose distance to
// the optimum scales with the square root of the gap) do not. Returns false
// and leaves the arguments untouched if no step helps.
bool polish(const ConicForm& form, const Mat& a, const Vec& b, Vec& y, Vec& nu, std::vector<Mat>& x,
            int max_steps) {
  const Index p = form.c.size();
  const Index m = a.rows();
  const std::size_t nb = form.blocks.size();
  std::vector<Index> off(nb);
  Index nunk = p + m;
  for (std::size_t j = 0; j < nb; ++j) {
    off[j] = nunk;
    const Index d = form.blocks[j].dim;
    nunk += d * (d + 1) / 2;
  }
  // Upper-triangle index of (r, c) inside block j.
  auto widx = [&](std::size_t j, Index r, Index c) {
    if (r > c) std::swap(r, c);
    const Index d = form.blocks[j].dim;
    return off[j] + r * d - r * (r - 1) / 2 + (c - r);
  };

  Vec y1 = y, nu1 = nu;
  std::vector<Mat> x1 = x;
  KktResidual res = kkt_residual(form, a, b, y1, nu1, x1);
  const double start = res.norm();
  double best = start;
  bool improved = false;

  for (int step = 0; step < max_steps; ++step) {
    std::vector<Eigen::Triplet<double>> trip;
    Vec rhs(nunk);
    Index row = 0;
    // A dy = b - A y
    for (Index i = 0; i < m; ++i, ++row) {
      for (Index k = 0; k < p; ++k) {
        if (a(i, k) != 0.0) trip.emplace_back(row, k, a(i, k));
      }
      rhs(row) = res.primal(i);
    }
    // A^T dnu + F^*(dX) = dual residual
    const Index dual_row0 = row;
    for (Index k = 0; k < p; ++k) {
      for (Index i = 0; i < m; ++i) {
        if (a(i, k) != 0.0) trip.emplace_back(dual_row0 + k, p + i, a(i, k));
      }
      rhs(dual_row0 + k) = res.dual(k);
    }
    for (std::size_t j = 0; j < nb; ++j) {
      const auto& blk = form.blocks[j];
      for (std::size_t k = 0; k < blk.vars.size(); ++k) {
        for (const auto& e : blk.coeffs[k]) {
          trip.emplace_back(dual_row0 + blk.vars[k], widx(j, e.row, e.col),
                            e.row == e.col ? e.value : 2.0 * e.value);
        }
      }
    }
    row += p;
    // (dS X + X dS + S dX + dX S) / 2 = -(S X + X S) / 2
    for (std::size_t j = 0; j < nb; ++j) {
      const auto& blk = form.blocks[j];
      const Index d = blk.dim;
      const Mat& s = res.slack[j];
      const Index row0 = row;
      for (Index r = 0; r < d; ++r) {
        for (Index c = r; c < d; ++c, ++row) {
          rhs(row) = -res.comp[j](r, c);
          for (Index l = 0; l < d; ++l) {
            if (s(r, l) != 0.0) trip.emplace_back(row, widx(j, l, c), 0.5 * s(r, l));
            if (s(l, c) != 0.0) trip.emplace_back(row, widx(j, r, l), 0.5 * s(l, c));
          }
        }
      }
      Mat g(d, d);
      for (std::size_t k = 0; k < blk.vars.size(); ++k) {
        g.setZero();
        for (const auto& e : blk.coeffs[k]) {
          g.row(e.row) += e.value * x1[j].row(e.col);
          if (e.row != e.col) g.row(e.col) += e.value * x1[j].row(e.row);
        }
        // g = F_k X, so F_k X + X F_k = g + g^T.
        Index rr = row0;
        for (Index r = 0; r < d; ++r) {
          for (Index c = r; c < d; ++c, ++rr) {
            const double v = 0.5 * (g(r, c) + g(c, r));
            if (v != 0.0) trip.emplace_back(rr, blk.vars[k], v);
          }
        }
      }
    }

    Eigen::SparseMatrix<double> jac(nunk, nunk);
    jac.setFromTriplets(trip.begin(), trip.end());
    jac.makeCompressed();
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(jac);
    if (lu.info() != Eigen::Success) break;
    Vec delta = lu.solve(rhs);
    if (lu.info() != Eigen::Success || !delta.allFinite()) break;
    // One refinement pass against the assembled Jacobian.
    delta += Vec(lu.solve(rhs - jac * delta));
    if (!delta.allFinite()) break;

    Vec y2 = y1 + delta.head(p);
    Vec nu2 = nu1 + delta.segment(p, m);
    std::vector<Mat> x2 = x1;
    for (std::size_t j = 0; j < nb; ++j) {
      const Index d = form.blocks[j].dim;
      for (Index r = 0; r < d; ++r) {
        for (Index c = r; c < d; ++c) {
          x2[j](r, c) += delta(widx(j, r, c));
          x2[j](c, r) = x2[j](r, c);
        }
      }
    }
    KktResidual res2 = kkt_residual(form, a, b, y2, nu2, x2);
    const double n2 = res2.norm();
    if (!(n2 < best)) break;
    bool cone_ok = true;
    for (std::size_t j = 0; j < nb && cone_ok; ++j) {
      const double sc = 1.0 + res2.slack[j].cwiseAbs().maxCoeff();
      const double xc = 1.0 + x2[j].cwiseAbs().maxCoeff();
      cone_ok = min_eig(SymMat(res2.slack[j])) >= -1e-10 * sc && min_eig(SymMat(x2[j])) >= -1e-10 * xc;
    }
    if (!cone_ok) break;
    y1 = std::move(y2);
    nu1 = std::move(nu2);
    x1 = std::move(x2);
    res = std::move(res2);
    best = n2;
    improved = true;
    if (best <= 1e-15 * (1.0 + start)) break;
  }
  if (improved) {
    y = y1;
    nu = nu1;
    x = x1;
  }
  return improved;
}

}  // namespace

RawResult InteriorPointSolver::solve(const ConicForm& form) {
  RawResult res;
  const Index p = form.c.size();
  const double tol = opts_.tol;

  // Equality preprocessing: keep an independent subset of rows, check
  // consistency, and compute a least-squares starting point.
  Mat a;
  Vec b;
  Vec y0 = Vec::Zero(p);
  if (form.a.rows() > 0) {
    const double amax = form.a.cwiseAbs().maxCoeff();
    Eigen::ColPivHouseholderQR<Mat> qr(form.a.transpose());
    qr.setThreshold(1e-12 * std::max(1.0, static_cast<double>(std::max(form.a.rows(), p))));
    const Index rank = amax > 0 ? qr.rank() : 0;
    a.resize(rank, p);
    b.resize(rank);
    for (Index i = 0; i < rank; ++i) {
      const Index row = qr.colsPermutation().indices()(i);
      a.row(i) = form.a.row(row);
      b(i) = form.b(row);
    }
    if (rank > 0) {
      y0 = a.completeOrthogonalDecomposition().solve(b);
    }
    const double viol = (form.a * y0 - form.b).cwiseAbs().maxCoeff();
    if (viol > 1e-8 * (1.0 + form.b.cwiseAbs().maxCoeff())) {
      res.status = SolveStatus::infeasible;
      res.y = y0;
      res.message = "inconsistent equality constraints";
      return res;
    }
  } else {
    a.resize(0, p);
    b.resize(0);
  }
  const Index m = a.rows();

  if (form.blocks.empty()) {
    // Pure equality-constrained linear objective.
    res.y = y0;
    Vec w = m > 0 ? Vec(a.transpose().completeOrthogonalDecomposition().solve(form.c)) : Vec::Zero(0);
    const Vec rc = m > 0 ? Vec(form.c - a.transpose() * w) : form.c;
    if (rc.size() > 0 && rc.norm() > 1e-10 * (1.0 + form.c.norm())) {
      res.status = SolveStatus::unbounded;
      res.message = "objective not constant on the affine feasible set";
      return res;
    }
    res.status = SolveStatus::optimal;
    res.primal_objective = form.c.dot(y0) + form.c0;
    res.dual_objective = res.primal_objective;
    return res;
  }

  const std::size_t nb = form.blocks.size();
  Index ntot = 0;
  double normf0 = 0.0, normfi = 0.0;
  Vec fnorm = Vec::Zero(p);
  for (const auto& blk : form.blocks) {
    ntot += blk.dim;
    normf0 = std::max(normf0, blk.constant.norm());
    for (std::size_t k = 0; k < blk.vars.size(); ++k) {
      double s = 0;
      for (const auto& e : blk.coeffs[k]) s += (e.row == e.col ? 1.0 : 2.0) * e.value * e.value;
      fnorm(blk.vars[k]) += s;
    }
  }
  fnorm = fnorm.cwiseSqrt();
  normfi = fnorm.size() ? fnorm.maxCoeff() : 0.0;
  double xi = std::max(10.0, std::sqrt(static_cast<double>(ntot)));
  for (Index i = 0; i < p; ++i) {
    xi = std::max(xi, std::sqrt(static_cast<double>(ntot)) * (1.0 + std::abs(form.c(i))) / (1.0 + fnorm(i)));
  }
  const double eta = std::max({10.0, std::sqrt(static_cast<double>(ntot)), normf0, normfi});

  Vec y = y0;
  Vec nu = Vec::Zero(m);
  std::vector<Mat> x(nb), z(nb), w(nb);
  for (std::size_t j = 0; j < nb; ++j) {
    const Index d = form.blocks[j].dim;
    x[j] = xi * Mat::Identity(d, d);
    z[j] = eta * Mat::Identity(d, d);
  }

  const double bnorm = 1.0 + (m > 0 ? b.norm() : 0.0) + normf0;
  const double cnorm = 1.0 + form.c.norm();
  const double y0norm = y0.norm();

  Mat mm(p, p);
  std::vector<Mat> rz(nb);

  // Best iterate seen so far, used to recover when the path-following
  // iteration breaks down close to the optimum.
  struct Snapshot {
    double score = std::numeric_limits<double>::infinity();
    Vec y, nu;
    std::vector<Mat> x;
  } best;
  auto fail = [&](const char* why) {
    res.status = SolveStatus::numerical_failure;
    res.message = why;
    if (opts_.polish_steps <= 0 || !(best.score <= 1e3 * tol)) return res;
    Vec yb = best.y, nub = best.nu;
    std::vector<Mat> xb = best.x;
    if (!polish(form, a, b, yb, nub, xb, std::max(opts_.polish_steps, 5))) return res;
    const KktResidual r = kkt_residual(form, a, b, yb, nub, xb);
    double f0x_p = 0.0;
    for (std::size_t j = 0; j < nb; ++j) f0x_p += frob_inner(form.blocks[j].constant, xb[j]);
    const double pobj = form.c.dot(yb);
    const double dobj = (m > 0 ? b.dot(nub) : 0.0) - f0x_p;
    const double relgap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
    if (relgap <= tol && r.primal.norm() / bnorm <= tol && r.dual.norm() / cnorm <= tol) {
      res.status = SolveStatus::optimal;
      res.y = yb;
      res.primal_objective = pobj + form.c0;
      res.dual_objective = dobj + form.c0;
      res.message = std::string("polished after ") + why;
    }
    return res;
  };

  for (int it = 0; it < opts_.max_iters; ++it) {
    res.iterations = it;
    // Residuals.
    Vec rp = m > 0 ? Vec(b - a * y) : Vec::Zero(0);
    Vec aty = Vec::Zero(p);
    double xz = 0.0, f0x = 0.0, rznorm2 = 0.0;
    for (std::size_t j = 0; j < nb; ++j) {
      const auto& blk = form.blocks[j];
      rz[j] = blk.constant + apply_block(blk, y) - z[j];
      rznorm2 += rz[j].squaredNorm();
      adjoint_add(blk, x[j], aty);
      xz += frob_inner(x[j], z[j]);
      f0x += frob_inner(blk.constant, x[j]);
    }
    const Vec atnu = m > 0 ? Vec(a.transpose() * nu) : Vec::Zero(p);
    const Vec rd = form.c - atnu - aty;
    const double mu = xz / static_cast<double>(ntot);
    const double pobj = form.c.dot(y);
    const double dobj = (m > 0 ? b.dot(nu) : 0.0) - f0x;
    const double denom = 1.0 + std::abs(pobj) + std::abs(dobj);
    const double relgap = std::max(std::abs(pobj - dobj), xz) / denom;
    const double pinf = (rp.norm() + std::sqrt(rznorm2)) / bnorm;
    const double dinf = rd.norm() / cnorm;
    res.primal_objective = pobj + form.c0;
    res.dual_objective = dobj + form.c0;
    res.y = y;

    if (opts_.verbose) {
      std::cerr << std::scientific << std::setprecision(3) << "ipm " << it << " pobj " << pobj
                << " dobj " << dobj << " gap " << relgap << " pinf " << pinf << " dinf " << dinf
                << " mu " << mu;
      double cmin = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < nb; ++j) {
        Eigen::LLT<Mat> lx(x[j]);
        Mat lz = Mat(lx.matrixL()).transpose() * z[j] * Mat(lx.matrixL());
        Eigen::SelfAdjointEigenSolver<Mat> es(lz, Eigen::EigenvaluesOnly);
        cmin = std::min(cmin, es.eigenvalues().minCoeff());
      }
      std::cerr << " center " << cmin / mu << "\n";
    }
    if (!std::isfinite(pobj) || !std::isfinite(dobj) || !std::isfinite(mu)) {
      res.status = SolveStatus::numerical_failure;
      res.message = "non-finite iterate";
      return res;
    }
    const double score = std::max({relgap, pinf, dinf});
    if (score < best.score) best = Snapshot{score, y, nu, x};
    if (relgap <= tol && pinf <= tol && dinf <= tol) {
      res.status = SolveStatus::optimal;
      if (opts_.polish_steps > 0 && polish(form, a, b, y, nu, x, opts_.polish_steps)) {
        res.y = y;
        double f0x_p = 0.0;
        for (std::size_t j = 0; j < nb; ++j) f0x_p += frob_inner(form.blocks[j].constant, x[j]);
        res.primal_objective = form.c.dot(y) + form.c0;
        res.dual_objective = (m > 0 ? b.dot(nu) : 0.0) - f0x_p + form.c0;
        res.message = "polished";
      }
      return res;
    }

    // Infeasibility certificates.
    if (it >= 3) {
      const double ray = dobj;
      const double ray_res = (atnu + aty).norm();
      if (ray > 0 && ray_res <= opts_.infeasibility_tol * ray) {
        res.status = SolveStatus::infeasible;
        res.message = "dual ray certifies primal infeasibility";
        return res;
      }
      const Vec d = y - y0;
      const double cd = form.c.dot(d);
      if (cd < 0 && d.norm() > 1e6 * (1.0 + y0norm)) {
        const double eqv = m > 0 ? (a * d).norm() : 0.0;
        double lmin = std::numeric_limits<double>::infinity();
        for (const auto& blk : form.blocks) {
          Eigen::SelfAdjointEigenSolver<Mat> es(apply_block(blk, d), Eigen::EigenvaluesOnly);
          lmin = std::min(lmin, es.eigenvalues().minCoeff());
        }
        if (eqv <= opts_.infeasibility_tol * std::abs(cd) && lmin >= -opts_.infeasibility_tol * std::abs(cd)) {
          res.status = SolveStatus::unbounded;
          res.message = "primal ray certifies unboundedness";
          return res;
        }
      }
    }

    // Schur complement matrix M_ik = <F_i, X F_k Z^{-1}>.
    for (std::size_t j = 0; j < nb; ++j) {
      Eigen::LLT<Mat> llt(z[j]);
      if (llt.info() != Eigen::Success) {
        return fail("slack matrix lost definiteness");
      }
      w[j] = llt.solve(Mat::Identity(z[j].rows(), z[j].cols()));
    }
    mm.setZero();
    for (std::size_t j = 0; j < nb; ++j) {
      const auto& blk = form.blocks[j];
      const Index d = blk.dim;
      Mat g(d, d);
      for (std::size_t k = 0; k < blk.vars.size(); ++k) {
        g.setZero();
        for (const auto& e : blk.coeffs[k]) {
          g.noalias() += e.value * x[j].col(e.row) * w[j].row(e.col);
          if (e.row != e.col) g.noalias() += e.value * x[j].col(e.col) * w[j].row(e.row);
        }
        const int col = blk.vars[k];
        for (std::size_t l = 0; l < blk.vars.size(); ++l) mm(blk.vars[l], col) += inner(blk.coeffs[l], g);
      }
    }
    mm = 0.5 * (mm + mm.transpose()).eval();
    const double dmax = std::max(1.0, mm.diagonal().cwiseAbs().maxCoeff());
    double reg = 1e-14 * dmax;
    Eigen::LLT<Mat> mllt;
    for (int attempt = 0; attempt < 6; ++attempt) {
      Mat mr = mm;
      mr.diagonal().array() += reg;
      mllt.compute(mr);
      if (mllt.info() == Eigen::Success) break;
      reg *= 100.0;
    }
    if (mllt.info() != Eigen::Success) {
      return fail("Schur complement factorization failed");
    }
    Mat minv_at;
    Eigen::LLT<Mat> sllt;
    if (m > 0) {
      minv_at = mllt.solve(a.transpose());
      Mat s = a * minv_at;
      s = 0.5 * (s + s.transpose()).eval();
      s.diagonal().array() += 1e-14 * std::max(1.0, s.diagonal().cwiseAbs().maxCoeff());
      sllt.compute(s);
      if (sllt.info() != Eigen::Success) {
        return fail("equality Schur complement factorization failed");
      }
    }

    auto direction = [&](double target, const std::vector<Mat>* corr) {
      Direction dir;
      std::vector<Mat> t1(nb);
      Vec h = rd;
      for (std::size_t j = 0; j < nb; ++j) {
        const Index d = form.blocks[j].dim;
        Mat r = target * Mat::Identity(d, d) - x[j] * z[j];
        if (corr) r -= (*corr)[j];
        t1[j] = r * w[j] - x[j] * rz[j] * w[j];
        Vec tmp = Vec::Zero(p);
        adjoint_add(form.blocks[j], t1[j], tmp);
        h -= tmp;
      }
      // Solves M dy - A^T dnu = -h, A dy = rp, refined against the
      // unregularized M since late iterations make M badly conditioned.
      auto kkt = [&](const Vec& r1, const Vec& r2, Vec& dy, Vec& dnu) {
        if (m > 0) {
          const Vec minv_r1 = mllt.solve(r1);
          dnu = sllt.solve(r2 - a * minv_r1);
          dy = minv_r1 + minv_at * dnu;
        } else {
          dnu = Vec::Zero(0);
          dy = mllt.solve(r1);
        }
      };
      kkt(-h, rp, dir.dy, dir.dnu);
      for (int refine = 0; refine < 3; ++refine) {
        Vec e1 = -h - mm * dir.dy;
        if (m > 0) e1 += a.transpose() * dir.dnu;
        const Vec e2 = m > 0 ? Vec(rp - a * dir.dy) : Vec::Zero(0);
        const double err = e1.norm() + e2.norm();
        if (err <= 1e-15 * (1.0 + h.norm() + rp.norm())) break;
        Vec cy, cnu;
        kkt(e1, e2, cy, cnu);
        dir.dy += cy;
        dir.dnu += cnu;
      }
      dir.dx.resize(nb);
      dir.dz.resize(nb);
      for (std::size_t j = 0; j < nb; ++j) {
        dir.dz[j] = apply_block(form.blocks[j], dir.dy) + rz[j];
        Mat dx = t1[j] + x[j] * rz[j] * w[j] - x[j] * dir.dz[j] * w[j];
        dir.dx[j] = 0.5 * (dx + dx.transpose());
      }
      return dir;
    };

    auto steps = [&](const Direction& dir) {
      double ap = std::numeric_limits<double>::infinity();
      double ad = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < nb; ++j) {
        ap = std::min(ap, max_step(z[j], dir.dz[j]));
        ad = std::min(ad, max_step(x[j], dir.dx[j]));
      }
      return std::pair{ap, ad};
    };

    // Predictor.
    const Direction aff = direction(0.0, nullptr);
    auto [ap_aff, ad_aff] = steps(aff);
    ap_aff = std::min(1.0, ap_aff);
    ad_aff = std::min(1.0, ad_aff);
    double xz_aff = 0.0;
    for (std::size_t j = 0; j < nb; ++j) {
      xz_aff += frob_inner(x[j] + ad_aff * aff.dx[j], z[j] + ap_aff * aff.dz[j]);
    }
    const double mu_aff = xz_aff / static_cast<double>(ntot);
    const double sigma = std::clamp(std::pow(std::max(mu_aff, 0.0) / mu, 3.0), 0.0, 1.0);

    // Corrector.
    std::vector<Mat> corr(nb);
    for (std::size_t j = 0; j < nb; ++j) corr[j] = aff.dx[j] * aff.dz[j];
    const Direction dir = direction(sigma * mu, &corr);
    auto [ap, ad] = steps(dir);
    const double gamma = 0.9 + 0.09 * std::min(ap_aff, ad_aff);
    ap = std::min(1.0, gamma * ap);
    ad = std::min(1.0, gamma * ad);
    if (ap < 1e-12 && ad < 1e-12) {
      return fail("step length collapsed");
    }

    y += ap * dir.dy;
    if (m > 0) nu += ad * dir.dnu;
    for (std::size_t j = 0; j < nb; ++j) {
      z[j] += ap * dir.dz[j];
      z[j] = 0.5 * (z[j] + z[j].transpose()).eval();
      x[j] += ad * dir.dx[j];
      x[j] = 0.5 * (x[j] + x[j].transpose()).eval();
    }
  }
  return fail("iteration limit reached");
}

// ---------------------------------------------------------------------------
// Verification

Residuals verify(const Problem& p, const Vec& y) {
  Residuals r;
  for (const auto& eq : p.equalities()) {
    if (eq.lhs.size() == 0) continue;
    r.primal_eq = std::max(r.primal_eq, (eq.lhs.evaluate(y) - eq.rhs).cwiseAbs().maxCoeff());
  }
  double lmin = std::numeric_limits<double>::infinity();
  for (const auto& blk : p.psd_blocks()) {
    lmin = std::min(lmin, min_eig(SymMat(blk.expr.evaluate(y))));
  }
  r.min_psd_eig = std::isfinite(lmin) ? lmin : 0.0;
  return r;
}

double data_scale(const Problem& p) {
  double s = 0.0;
  auto scan = [&s](const Affine& e) {
    if (e.size() == 0) return;
    s = std::max(s, e.constant().cwiseAbs().maxCoeff());
    for (Index r = 0; r < e.rows(); ++r) {
      for (Index c = 0; c < e.cols(); ++c) {
        for (const auto& t : e.terms(r, c)) s = std::max(s, std::abs(t.coef));
      }
    }
  };
  for (const auto& eq : p.equalities()) {
    scan(eq.lhs);
    if (eq.rhs.size()) s = std::max(s, eq.rhs.cwiseAbs().maxCoeff());
  }
  for (const auto& blk : p.psd_blocks()) scan(blk.expr);
  return 1.0 + s;
}

const Mat& Solution::at(const std::string& name) const {
  auto it = values.find(name);
  if (it == values.end()) throw Error("solution has no variable '" + name + "'");
  return it->second;
}

Solution solve(const Problem& p, SolverAdapter& adapter) {
  Solution sol;
  sol.scale = data_scale(p);
  RawResult raw;
  try {
    raw = adapter.solve(to_conic(p));
  } catch (const std::exception& e) {
    sol.status = SolveStatus::numerical_failure;
    sol.message = std::string("adapter failure: ") + e.what();
    return sol;
  }
  sol.status = raw.status;
  sol.iterations = raw.iterations;
  sol.message = raw.message;
  if (raw.y.size() != p.num_scalars()) {
    if (sol.status == SolveStatus::optimal) {
      sol.status = SolveStatus::numerical_failure;
      sol.message = "adapter returned a solution of the wrong size";
    }
    return sol;
  }
  for (const auto& v : p.variables()) sol.values[v.name] = p.value_of(v, raw.y);
  sol.objective_value = p.objective().evaluate(raw.y)(0, 0);
  sol.residuals = verify(p, raw.y);
  if (sol.status == SolveStatus::optimal) {
    if (!(sol.residuals.primal_eq <= 1e-6 * sol.scale) || !(sol.residuals.min_psd_eig >= -1e-7 * sol.scale)) {
      std::ostringstream os;
      os << "verification failed: primal_eq " << sol.residuals.primal_eq << " min_psd_eig "
         << sol.residuals.min_psd_eig;
      sol.status = SolveStatus::numerical_failure;
      sol.message = os.str();
    }
  }
  return sol;
}

}  // namespace covsteer::sdp
