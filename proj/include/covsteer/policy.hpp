#pragma once

#include "covsteer/matlib.hpp"

#include <string>
#include <vector>

namespace covsteer {

enum class PolicyMode { dd, rdd, mb };

const char* to_string(PolicyMode m);
/// Throws Error for anything other than "dd", "rdd" or "mb".
PolicyMode parse_policy_mode(const std::string& s);

/// Per-step synthesis byproducts. Data-driven modes fill s (T x n) and the
/// recovered g = s * Sigma_k^{-1}; mb fills s with P_k = K_k Sigma_k.
struct StepAux {
  Mat s;
  Mat y;               // S_k Sigma_k^{-1} S_k^T (data-driven) or the input-covariance slack (mb)
  Mat g;
  double lambda = 0.0; // robust multiplier, rdd only
  double input_cov_gap = 0.0;  // ||W_k - (U S_k) Sigma_k^{-1} (U S_k)^T||_F
};

/// Control law u_k = K_k (x_k - mu_k) + v_k with planned means mu_k.
struct Policy {
  PolicyMode mode = PolicyMode::dd;
  std::vector<Mat> gains;          // K_0..K_{N-1}, m x n
  std::vector<Vec> feedforward;    // v_0..v_{N-1}
  std::vector<Vec> planned_means;  // mu_0..mu_N
  std::vector<SymMat> planned_covs;  // Sigma_0..Sigma_N
  std::vector<StepAux> aux;
  double cost_mean = 0.0;
  double cost_cov = 0.0;
  double rho = 0.0;

  int horizon() const { return static_cast<int>(gains.size()); }
  Index n() const { return planned_means.empty() ? 0 : planned_means.front().size(); }
  Index m() const { return feedforward.empty() ? 0 : feedforward.front().size(); }
};

}  // namespace covsteer
