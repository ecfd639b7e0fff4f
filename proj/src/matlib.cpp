#include "covsteer/matlib.hpp"

#include "covsteer/error.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace covsteer {

SymMat::SymMat(const Mat& m) {
  if (m.rows() != m.cols()) {
    std::ostringstream os;
    os << "SymMat requires a square matrix, got " << m.rows() << "x" << m.cols();
    throw DimensionError(os.str());
  }
  require_finite(m, "SymMat");
  m_ = 0.5 * (m + m.transpose());
}

void require_finite(const Mat& m, const char* what) {
  if (!m.allFinite()) {
    throw DomainError(std::string(what) + ": non-finite entry");
  }
}

Mat hankel(std::span<const Vec> signal, Index start, Index depth, Index width) {
  if (depth < 1 || width < 1 || start < 0) {
    throw DimensionError("hankel: depth and width must be positive");
  }
  const auto needed = static_cast<std::size_t>(start + depth + width - 1);
  if (needed > signal.size()) {
    std::ostringstream os;
    os << "hankel: requires " << needed << " samples, signal has " << signal.size();
    throw DimensionError(os.str());
  }
  const Index sigma = signal[0].size();
  Mat h(sigma * depth, width);
  for (Index r = 0; r < depth; ++r) {
    for (Index c = 0; c < width; ++c) {
      const Vec& z = signal[static_cast<std::size_t>(start + r + c)];
      if (z.size() != sigma) {
        throw DimensionError("hankel: samples have inconsistent dimension");
      }
      h.block(r * sigma, c, sigma, 1) = z;
    }
  }
  return h;
}

double default_rank_tol(const Mat& m) {
  return static_cast<double>(std::max(m.rows(), m.cols())) *
         std::numeric_limits<double>::epsilon();
}

namespace {

double cutoff(const Vec& sv, const Mat& m, double rtol) {
  if (rtol < 0) rtol = default_rank_tol(m);
  const double smax = sv.size() > 0 ? sv(0) : 0.0;
  return rtol * smax;
}

}  // namespace

Mat pinv(const Mat& m, double rtol) {
  if (m.size() == 0) {
    return Mat(m.cols(), m.rows());
  }
  Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec& sv = svd.singularValues();
  const double cut = cutoff(sv, m, rtol);
  Vec inv = Vec::Zero(sv.size());
  for (Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cut && sv(i) > 0) inv(i) = 1.0 / sv(i);
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

Index numerical_rank(const Mat& m, double rtol) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<Mat> svd(m);
  const Vec& sv = svd.singularValues();
  const double cut = cutoff(sv, m, rtol);
  Index r = 0;
  for (Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cut && sv(i) > 0) ++r;
  }
  return r;
}

SymMat consistency_projector(const Mat& s, double rtol) {
  const Index t = s.cols();
  // Built from the right singular vectors so that the result is an exact
  // projector up to rounding, rather than I - pinv(S) * S.
  Eigen::JacobiSVD<Mat> svd(s, Eigen::ComputeFullV);
  const Vec& sv = svd.singularValues();
  const double cut = cutoff(sv, s, rtol);
  Index r = 0;
  for (Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cut && sv(i) > 0) ++r;
  }
  const Mat null_basis = svd.matrixV().rightCols(t - r);
  return SymMat(null_basis * null_basis.transpose());
}

Mat kron(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

double regularized_gamma_p(double a, double x) {
  if (a <= 0) throw DomainError("regularized_gamma_p: a must be positive");
  if (x <= 0) return 0.0;
  return boost::math::gamma_p(a, x);
}

double chi2_cdf(int dof, double x) {
  if (dof < 1) throw DomainError("chi2_cdf: dof must be >= 1");
  return regularized_gamma_p(0.5 * dof, 0.5 * x);
}

double chi2_quantile(int dof, double q) {
  if (dof < 1) throw DomainError("chi2_quantile: dof must be >= 1");
  if (!(q >= 0.0) || q >= 1.0) throw DomainError("chi2_quantile: q must lie in [0, 1)");
  if (q == 0.0) return 0.0;

  double lo = 0.0;
  double hi = std::max(1.0, static_cast<double>(dof));
  while (chi2_cdf(dof, hi) < q) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) throw DomainError("chi2_quantile: q too close to 1");
  }
  // Safeguarded Newton: bisect whenever the Newton step leaves the bracket.
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 500; ++it) {
    const double f = chi2_cdf(dof, x) - q;
    if (f == 0.0) return x;
    if (f < 0) lo = x; else hi = x;
    // d/dx P(k, x/2) = gamma_p_derivative(k, x/2) / 2
    const double pdf = 0.5 * boost::math::gamma_p_derivative(0.5 * dof, 0.5 * x);
    double next = pdf > 0 ? x - f / pdf : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= 1e-15 * std::max(1.0, x) || hi - lo <= 1e-15 * std::max(1.0, hi)) {
      return next;
    }
    x = next;
  }
  return x;
}

Vec eigenvalues(const SymMat& m) {
  if (m.dim() == 0) return Vec();
  Eigen::SelfAdjointEigenSolver<Mat> es(m.mat(), Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

double min_eig(const SymMat& m) {
  const Vec ev = eigenvalues(m);
  return ev.size() ? ev.minCoeff() : 0.0;
}

double max_eig(const SymMat& m) {
  const Vec ev = eigenvalues(m);
  return ev.size() ? ev.maxCoeff() : 0.0;
}

bool is_psd(const SymMat& m, double tol) {
  const Vec ev = eigenvalues(m);
  if (ev.size() == 0) return true;
  return ev.minCoeff() >= -tol * (1.0 + ev.cwiseAbs().maxCoeff());
}

SymMat sqrtm_psd(const SymMat& m) {
  if (m.dim() == 0) return m;
  Eigen::SelfAdjointEigenSolver<Mat> es(m.mat());
  Vec ev = es.eigenvalues();
  const double scale = 1.0 + ev.cwiseAbs().maxCoeff();
  if (ev.minCoeff() < -1e-12 * scale) {
    throw DomainError("sqrtm_psd: matrix is indefinite");
  }
  ev = ev.cwiseMax(0.0).cwiseSqrt();
  return SymMat(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
}

double spectral_norm(const Mat& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues()(0);
}

Mat columns(std::span<const Vec> vs) {
  if (vs.empty()) return Mat();
  Mat out(vs[0].size(), static_cast<Index>(vs.size()));
  for (std::size_t k = 0; k < vs.size(); ++k) {
    if (vs[k].size() != out.rows()) throw DimensionError("columns: inconsistent vector sizes");
    out.col(static_cast<Index>(k)) = vs[k];
  }
  return out;
}

std::vector<Vec> split_columns(const Mat& m) {
  std::vector<Vec> out;
  out.reserve(static_cast<std::size_t>(m.cols()));
  for (Index k = 0; k < m.cols(); ++k) out.emplace_back(m.col(k));
  return out;
}

}  // namespace covsteer
