#pragma once

// Maximum-likelihood estimation of the noise realization behind a dataset and
// the chi-square bounds on its estimation error.

#include "covsteer/error.hpp"
#include "covsteer/matlib.hpp"
#include "covsteer/sdp.hpp"
#include "covsteer/sysdata.hpp"

#include <optional>
#include <string>
#include <vector>

namespace covsteer {

enum class SigmaSource { known, estimated };

const char* to_string(SigmaSource s);

struct NoiseEstimate {
  Mat xi_hat;      // n x T
  SymMat sigma_xi;
  SigmaSource sigma_source = SigmaSource::known;
  double delta = 0.0;
  double rho = 0.0;
};

struct CcpOptions {
  int max_iters = 50;
  double rel_tol = 1e-7;       // stop when the relative objective decrease falls below this
  double sigma_floor = 1e-6;   // Sigma >= floor * I inside every convex subproblem
  /// When set, Sigma is held at this value and a single convex program is solved.
  std::optional<SymMat> known_sigma;
};

struct CcpReport {
  int iterations = 0;
  std::vector<double> objective_trace;  // DC objective after each iterate
  bool converged = false;
  double final_slack_gap = 0.0;  // ||U - Xi^T Sigma^{-1} Xi||_F
  bool floor_active = false;     // Sigma iterate sat on the floor
  std::string message;
};

/// Estimation failure; carries the CCP report up to the failing iterate.
class EstimationError : public Error {
 public:
  EstimationError(const std::string& what, CcpReport report) : Error(what), report_(std::move(report)) {}
  const CcpReport& report() const { return report_; }

 private:
  CcpReport report_;
};

/// X1 * Gamma, the closed-form most likely realization.
Mat mle_noise_analytic(const HankelData& h);

/// DC program over (Xi, Sigma, U) solved by the convex-concave procedure, or
/// a single convex program when opts.known_sigma is set. The returned
/// estimate has delta = 0 and rho = 0; see attach_bound.
std::pair<NoiseEstimate, CcpReport> mle_noise_dc(const HankelData& h, sdp::SolverAdapter& solver,
                                                 const CcpOptions& opts = {});

/// (S^+ S) kron Sigma_xi.
SymMat error_covariance(const HankelData& h, const SymMat& sigma_xi);

/// sqrt(chi2_{nT, 1-delta}) / sqrt(lambda_min(Sigma_Delta^{-1})); throws
/// DomainError for singular Sigma_Delta or delta outside (0, 1).
double uq_bound_general(const SymMat& sigma_delta, Index n, Index horizon, double delta);

/// ||Sigma_xi^{1/2}|| * sqrt(chi2_{nT, 1-delta}).
double uq_bound_mle(const SymMat& sigma_xi, Index n, Index horizon, double delta);

/// Sets delta and rho (via uq_bound_mle) on an estimate for horizon T.
void attach_bound(NoiseEstimate& est, Index horizon, double delta);

/// ||(X1 - Xi) Gamma||_F.
double consistency_residual(const HankelData& h, const Mat& xi);

}  // namespace covsteer
