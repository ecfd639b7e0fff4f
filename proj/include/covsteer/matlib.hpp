#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace covsteer {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

/// Symmetric matrix. Construction symmetrizes with (M + M^T) / 2 and rejects
/// non-finite entries, so downstream eigenvalue checks never see drift.
class SymMat {
 public:
  SymMat() = default;
  explicit SymMat(const Mat& m);

  static SymMat identity(Index n) { return SymMat(Mat::Identity(n, n)); }
  static SymMat zero(Index n) { return SymMat(Mat::Zero(n, n)); }
  static SymMat scaled_identity(Index n, double s) { return SymMat(s * Mat::Identity(n, n)); }

  Index dim() const { return m_.rows(); }
  const Mat& mat() const { return m_; }
  operator const Mat&() const { return m_; }  // NOLINT(google-explicit-constructor)
  double operator()(Index i, Index j) const { return m_(i, j); }

  friend bool operator==(const SymMat& a, const SymMat& b) {
    return a.m_.rows() == b.m_.rows() && a.m_.cols() == b.m_.cols() && a.m_ == b.m_;
  }

 private:
  Mat m_;
};

/// Throws DomainError if any entry is NaN or infinite.
void require_finite(const Mat& m, const char* what);

/// Block Hankel matrix of `signal` with `depth` block rows and `width`
/// columns starting at sample `start`. Block (r, c) is signal[start + r + c].
Mat hankel(std::span<const Vec> signal, Index start, Index depth, Index width);

/// Default singular-value cutoff, max(rows, cols) * eps * sigma_max.
double default_rank_tol(const Mat& m);

/// Moore-Penrose pseudoinverse. Singular values below `rtol * sigma_max` are
/// dropped; a negative `rtol` selects max(rows, cols) * eps.
Mat pinv(const Mat& m, double rtol = -1.0);

/// Number of singular values above the same cutoff used by pinv.
Index numerical_rank(const Mat& m, double rtol = -1.0);

/// Orthogonal projector I - S^+ S onto the null space of S.
SymMat consistency_projector(const Mat& s, double rtol = -1.0);

Mat kron(const Mat& a, const Mat& b);

/// Regularized lower incomplete gamma function P(a, x).
double regularized_gamma_p(double a, double x);

double chi2_cdf(int dof, double x);

/// Inverse CDF of the chi-square distribution; throws DomainError for
/// q outside [0, 1) or dof < 1.
double chi2_quantile(int dof, double q);

Vec eigenvalues(const SymMat& m);
double min_eig(const SymMat& m);
double max_eig(const SymMat& m);

/// min_eig(m) >= -tol * (1 + max |eig|).
bool is_psd(const SymMat& m, double tol = 1e-9);

/// Principal square root of a PSD matrix; throws DomainError when the input
/// has an eigenvalue below -1e-12 * (1 + max |eig|).
SymMat sqrtm_psd(const SymMat& m);

/// Induced two-norm (largest singular value).
double spectral_norm(const Mat& m);

/// Stacks vectors as columns of an (dim x count) matrix.
Mat columns(std::span<const Vec> vs);

/// Splits a matrix into its columns.
std::vector<Vec> split_columns(const Mat& m);

}  // namespace covsteer
