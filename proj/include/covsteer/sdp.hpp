#pragma once

// Small dense semidefinite-programming toolkit: an affine matrix-expression
// builder, a problem container, and a solver-adapter interface with a
// primal-dual interior-point backend.
//
// Problems have the form
//
//   minimize    c^T y
//   subject to  A y = b
//               F_j(y) = F_j0 + sum_i y_i F_ji  >= 0   (each PSD block j)
//
// where y collects every scalar degree of freedom of the declared variables.
// Symmetric variables contribute their upper triangle only.

#include "covsteer/matlib.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace covsteer::sdp {

/// Matrix whose entries are affine functions of the problem scalars.
class Affine {
 public:
  struct Term {
    int var;
    double coef;
  };

  Affine() = default;
  /// Zero expression of the given shape.
  Affine(Index rows, Index cols);
  /// Constant expression.
  explicit Affine(const Mat& constant);

  Index rows() const { return constant_.rows(); }
  Index cols() const { return constant_.cols(); }
  Index size() const { return constant_.size(); }

  const Mat& constant() const { return constant_; }
  const std::vector<Term>& terms(Index r, Index c) const { return terms_[idx(r, c)]; }

  /// Adds coef * y[var] to entry (r, c).
  void add_term(Index r, Index c, int var, double coef);

  Affine transpose() const;
  Affine block(Index r, Index c, Index nr, Index nc) const;
  /// 1x1 expression tr(this).
  Affine trace() const;

  /// Assembles a block matrix; every row of blocks must agree in height and
  /// every column in width.
  static Affine blocks(const std::vector<std::vector<Affine>>& grid);

  Mat evaluate(const Vec& y) const;

  /// True when (r, c) and (c, r) carry identical constants and coefficients.
  bool is_symmetric(double tol = 0.0) const;

  /// Merges repeated variables and drops zero coefficients.
  void compress();

  Affine& operator+=(const Affine& o);
  Affine& operator-=(const Affine& o);
  Affine& operator*=(double s);

  friend Affine operator+(Affine a, const Affine& b) { return a += b; }
  friend Affine operator-(Affine a, const Affine& b) { return a -= b; }
  friend Affine operator-(Affine a) { return a *= -1.0; }
  friend Affine operator*(double s, Affine a) { return a *= s; }
  friend Affine operator+(Affine a, const Mat& b) { return a += Affine(b); }
  friend Affine operator-(Affine a, const Mat& b) { return a -= Affine(b); }
  friend Affine operator*(const Mat& m, const Affine& a);
  friend Affine operator*(const Affine& a, const Mat& m);

 private:
  std::size_t idx(Index r, Index c) const { return static_cast<std::size_t>(r * cols() + c); }

  Mat constant_;
  std::vector<std::vector<Term>> terms_;
};

/// tr(Q X) for a constant Q and affine X, as a 1x1 expression.
Affine trace_product(const Mat& q, const Affine& x);

enum class VarKind { symmetric, matrix, scalar };

struct VarInfo {
  std::string name;
  VarKind kind;
  Index rows;
  Index cols;
  int offset;  // first scalar index
  int count;   // number of scalars
};

struct Equality {
  Affine lhs;
  Mat rhs;
  std::string label;
};

struct PsdBlock {
  Affine expr;
  std::string label;
};

class Problem {
 public:
  Affine add_symmetric(const std::string& name, Index dim);
  Affine add_matrix(const std::string& name, Index rows, Index cols);
  Affine add_scalar(const std::string& name);

  /// lhs == rhs entrywise.
  void add_equality(const Affine& lhs, const Mat& rhs, std::string label = {});
  /// expr >= 0 in the semidefinite order; expr must be symmetric.
  void add_psd(const Affine& expr, std::string label = {});
  /// Minimizes a 1x1 expression.
  void set_objective(const Affine& expr);

  int num_scalars() const { return num_scalars_; }
  const std::vector<VarInfo>& variables() const { return vars_; }
  const VarInfo& variable(const std::string& name) const;
  const std::vector<Equality>& equalities() const { return equalities_; }
  const std::vector<PsdBlock>& psd_blocks() const { return psd_; }
  const Affine& objective() const { return objective_; }

  /// Reassembles the matrix value of a declared variable from the scalars.
  Mat value_of(const VarInfo& v, const Vec& y) const;

  /// Human-readable listing: variable table, objective, then one constraint
  /// per line in declaration order.
  std::string dump() const;

 private:
  Affine declare(const std::string& name, VarKind kind, Index rows, Index cols);
  void check_vars(const Affine& e, const char* what) const;

  std::vector<VarInfo> vars_;
  std::map<std::string, std::size_t> by_name_;
  int num_scalars_ = 0;
  std::vector<Equality> equalities_;
  std::vector<PsdBlock> psd_;
  Affine objective_{Mat::Zero(1, 1)};
};

// ---------------------------------------------------------------------------
// Solver-facing standard form.

struct SymEntry {
  int row;  // row <= col
  int col;
  double value;
};

struct LmiBlock {
  Index dim = 0;
  Mat constant;
  std::vector<int> vars;                       // global scalar indices
  std::vector<std::vector<SymEntry>> coeffs;   // coeffs[k] multiplies y[vars[k]]
};

struct ConicForm {
  Vec c;
  double c0 = 0.0;
  Mat a;  // equality rows
  Vec b;
  std::vector<LmiBlock> blocks;
};

ConicForm to_conic(const Problem& p);

enum class SolveStatus { optimal, infeasible, unbounded, numerical_failure };

const char* to_string(SolveStatus s);

struct RawResult {
  SolveStatus status = SolveStatus::numerical_failure;
  Vec y;
  int iterations = 0;
  double primal_objective = 0.0;
  double dual_objective = 0.0;
  std::string message;
};

class SolverAdapter {
 public:
  virtual ~SolverAdapter() = default;
  virtual RawResult solve(const ConicForm& form) = 0;
  virtual std::string name() const = 0;
};

struct IpmOptions {
  double tol = 1e-8;       // relative gap and feasibility tolerance
  int max_iters = 150;
  double infeasibility_tol = 1e-8;
  bool verbose = false;
  int polish_steps = 3;    // Newton steps on the optimality system after convergence
};

/// Infeasible-start primal-dual path-following method (HKM search direction,
/// Mehrotra predictor-corrector) on the form above.
class InteriorPointSolver : public SolverAdapter {
 public:
  explicit InteriorPointSolver(IpmOptions opts = {}) : opts_(opts) {}
  RawResult solve(const ConicForm& form) override;
  std::string name() const override { return "hkm-ipm"; }
  const IpmOptions& options() const { return opts_; }

 private:
  IpmOptions opts_;
};

struct Residuals {
  double primal_eq = 0.0;    // max |lhs - rhs| over all equalities
  double min_psd_eig = 0.0;  // min eigenvalue over all PSD blocks
};

struct Solution {
  SolveStatus status = SolveStatus::numerical_failure;
  std::map<std::string, Mat> values;
  double objective_value = 0.0;
  Residuals residuals;
  double scale = 1.0;  // 1 + max data magnitude
  int iterations = 0;
  std::string message;

  bool optimal() const { return status == SolveStatus::optimal; }
  const Mat& at(const std::string& name) const;
};

/// Residuals recomputed from the problem expressions, not from solver output.
Residuals verify(const Problem& p, const Vec& y);

/// Data magnitude used to scale the verification thresholds.
double data_scale(const Problem& p);

/// Solves `p` with `adapter`. An optimal report is downgraded to
/// numerical_failure when the independent verification fails
/// (primal_eq > 1e-6 * scale or min_psd_eig < -1e-7 * scale).
Solution solve(const Problem& p, SolverAdapter& adapter);

}  // namespace covsteer::sdp
