#pragma once

// Covariance steering synthesis: nominal and robust data-driven programs, the
// model-based baseline, data-driven mean steering, and exact evaluation of a
// recovered policy on a given system.

#include "covsteer/error.hpp"
#include "covsteer/estimate.hpp"
#include "covsteer/matlib.hpp"
#include "covsteer/policy.hpp"
#include "covsteer/sdp.hpp"
#include "covsteer/sysdata.hpp"

#include <cstdint>
#include <vector>

namespace covsteer {

struct SteeringSpec {
  int horizon = 0;          // N
  std::vector<SymMat> q;    // Q_0..Q_{N-1}, PSD
  std::vector<SymMat> r;    // R_0..R_{N-1}, PD
  GaussianMoments init;     // (mu_i, Sigma_i)
  GaussianMoments terminal; // (mu_f, Sigma_f)

  /// Same weights at every step.
  static SteeringSpec uniform(int horizon, const SymMat& q, const SymMat& r, GaussianMoments init,
                              GaussianMoments terminal);

  /// Throws DimensionError / DomainError when the fields do not describe an
  /// n-state, m-input problem with Sigma_i, Sigma_f, R_k > 0 and Q_k >= 0.
  void validate(Index n, Index m) const;
};

/// Pieces of the uncertain covariance LMI at one step. For a noise
/// realization error dxi (n x T), the true block is
///   g_hat + r_blk^T dxi l + l^T dxi^T r_blk.
struct RobustLmiParts {
  SymMat g_hat;  // [[Sigma_{k+1} - Sigma_xi, (X1 - Xi_hat) S_k], [*, Sigma_k]]
  Mat l;         // [0_{T,n}, -S_k]
  Mat r_blk;     // [I_n, 0_n]
  double rho = 0.0;

  SymMat perturbed(const Mat& dxi) const;
};

/// Nominal data-driven covariance steering. Requires rank [U; X] = n + m.
Policy solve_ddcs(const HankelData& h, const NoiseEstimate& est, const SteeringSpec& spec,
                  sdp::SolverAdapter& solver);

/// Robust data-driven covariance steering at radius est.rho. On
/// infeasibility throws SynthesisError carrying the largest feasible radius
/// found by bisection.
Policy solve_rddcs(const HankelData& h, const NoiseEstimate& est, const SteeringSpec& spec,
                   sdp::SolverAdapter& solver);

struct MeanPlan {
  std::vector<Vec> means;        // mu_0..mu_N
  std::vector<Vec> feedforward;  // v_0..v_{N-1}
  double cost = 0.0;
  double kkt_residual = 0.0;     // max-abs residual of the KKT system
};

/// Equality-constrained QP for the mean under mu_{k+1} = F_mu mu_k + F_v v_k.
MeanPlan solve_mean_qp(const Mat& f_mu, const Mat& f_v, const SteeringSpec& spec);

/// [F_v, F_mu] = (X1 - Xi_hat) [U; X]^+.
std::pair<Mat, Mat> data_driven_model(const HankelData& h, const Mat& xi_hat);

/// Mean steering with the data-driven model built from the estimate.
MeanPlan solve_mean(const HankelData& h, const NoiseEstimate& est, const SteeringSpec& spec);

/// Model-based covariance and mean steering on a known (A, B, D D^T).
Policy solve_mbcs(const LtiSystem& sys, const SteeringSpec& spec, sdp::SolverAdapter& solver);

/// Uncertain-LMI data at step k of a data-driven policy.
RobustLmiParts robust_lmi_parts(const HankelData& h, const NoiseEstimate& est, const Policy& policy,
                                int k, double rho);

/// Smallest eigenvalue of the perturbed LMI over `samples` random dxi with
/// spectral norm rho, minimized over all steps.
double certify_robust(const std::vector<RobustLmiParts>& parts, int samples, std::uint64_t seed);

struct EvaluationReport {
  std::vector<Vec> means;
  std::vector<SymMat> covs;
  double terminal_mean_error = 0.0;  // ||mu_N - mu_f||
  double terminal_cov_slack = 0.0;   // min eig(Sigma_f - Sigma_N)
  double cost_mean = 0.0;
  double cost_cov = 0.0;
  std::vector<double> planned_gap;   // ||Sigma_k^planned - Sigma_k||_F

  bool covariance_ok(double tol = 1e-6) const { return terminal_cov_slack >= -tol; }
};

/// Exact moment propagation of the policy on `sys`.
EvaluationReport evaluate_policy(const LtiSystem& sys, const Policy& policy, const SteeringSpec& spec);

}  // namespace covsteer
