#pragma once

// Shared test fixtures and oracles that do not depend on library code.

#include "covsteer/matlib.hpp"
#include "covsteer/sysdata.hpp"

#include <cmath>
#include <random>

namespace fixtures {

using covsteer::GaussianMoments;
using covsteer::LtiSystem;
using covsteer::Mat;
using covsteer::SymMat;
using covsteer::Vec;

/// Double integrator with unit sampling time and D = noise * I.
inline LtiSystem double_integrator(double noise = 0.1) {
  LtiSystem s;
  s.a = (Mat(2, 2) << 1, 1, 0, 1).finished();
  s.b = (Mat(2, 1) << 0, 1).finished();
  s.d = noise * Mat::Identity(2, 2);
  return s;
}

inline GaussianMoments experiment_init() {
  return {(Vec(2) << 30, 1).finished(), SymMat(Vec((Vec(2) << 1, 0.5).finished()).asDiagonal().toDenseMatrix())};
}

inline GaussianMoments experiment_target() {
  return {(Vec(2) << -10, 0).finished(), SymMat::scaled_identity(2, 0.5)};
}

inline GaussianMoments point(const Vec& x) { return {x, SymMat::zero(x.size())}; }

inline Mat random_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> n01;
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * n01(rng);
  }
  return m;
}

/// Chi-square CDF from closed forms: Poisson tail sum for even dof, erf for dof = 1.
inline double chi2_cdf_closed(int dof, double x) {
  if (dof == 1) return std::erf(std::sqrt(0.5 * x));
  const double h = 0.5 * x;
  double term = 1.0, sum = 1.0;
  for (int i = 1; i < dof / 2; ++i) {
    term *= h / i;
    sum += term;
  }
  return 1.0 - std::exp(-h) * sum;
}

/// Quantile by bisection on chi2_cdf_closed (dof = 1 or even).
inline double bisect_quantile(int dof, double q) {
  double lo = 0.0, hi = 1.0;
  while (chi2_cdf_closed(dof, hi) < q) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (chi2_cdf_closed(dof, mid) < q ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace fixtures
