#pragma once

// Ground-truth simulation, data collection and Hankel assembly.

#include "covsteer/matlib.hpp"
#include "covsteer/policy.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace covsteer {

/// x_{k+1} = A x_k + B u_k + D w_k, w_k ~ N(0, I_d).
struct LtiSystem {
  Mat a;
  Mat b;
  Mat d;

  Index n() const { return a.rows(); }
  Index m() const { return b.cols(); }
  /// Throws DimensionError on inconsistent shapes.
  void validate() const;
  SymMat noise_cov() const { return SymMat(d * d.transpose()); }
};

struct GaussianMoments {
  Vec mean;
  SymMat cov;
};

/// Collected experiment record. true_noise is ground truth for validation
/// and is never read by the estimators.
struct Dataset {
  std::vector<Vec> inputs;  // u_0..u_{T-1}
  std::vector<Vec> states;  // x_0..x_T
  std::optional<std::vector<Vec>> true_noise;  // xi_k = D w_k
  std::uint64_t seed = 0;

  Index horizon() const { return static_cast<Index>(inputs.size()); }
  Index n() const { return states.empty() ? 0 : states.front().size(); }
  Index m() const { return inputs.empty() ? 0 : inputs.front().size(); }
  /// Throws DimensionError unless states.size() == inputs.size() + 1 and all
  /// vectors have consistent sizes.
  void validate() const;
};

struct HankelData {
  Mat u0;  // m x T
  Mat x0;  // n x T
  Mat x1;  // n x T
  Mat s;   // [u0; x0]
  SymMat gamma;  // I - s^+ s
  Index rank_s = 0;

  Index n() const { return x0.rows(); }
  Index m() const { return u0.rows(); }
  Index horizon() const { return s.cols(); }
  /// rank [U; X] = n + m.
  bool full_rank() const { return rank_s == n() + m(); }
};

/// Independent generator stream for (seed, stream); identical arguments give
/// identical streams.
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0);

/// Draws N(mean, cov) samples; cov may be singular.
class GaussianSampler {
 public:
  explicit GaussianSampler(const GaussianMoments& g);
  Vec draw(std::mt19937_64& rng) const;

 private:
  Vec mean_;
  Mat factor_;
};

/// Runs the system for inputs.size() steps from x_0 ~ x0_dist.
Dataset simulate(const LtiSystem& sys, const GaussianMoments& x0_dist, std::span<const Vec> inputs,
                 std::uint64_t seed);

/// i.i.d. N(0, amplitude^2 I_m) inputs.
std::vector<Vec> excitation_input(Index m, Index horizon, double amplitude, std::uint64_t seed);

HankelData build_hankel(const Dataset& data, double pinv_tol = -1.0);

/// rank of the depth-`order` Hankel matrix equals dim * order.
bool is_persistently_exciting(std::span<const Vec> signal, Index order, double rtol = -1.0);

struct RolloutStats {
  std::vector<Vec> sample_means;
  std::vector<SymMat> sample_covs;
  std::vector<Vec> exact_means;
  std::vector<SymMat> exact_covs;
  std::vector<std::vector<Vec>> trajectories;  // first few trials, for plotting
};

/// Exact closed-loop moments under u_k = K_k (x_k - mu_k) + v_k, where mu_k
/// are the policy's planned means.
void propagate_moments(const LtiSystem& sys, const Policy& policy, const GaussianMoments& x0_dist,
                       std::vector<Vec>& means, std::vector<SymMat>& covs);

/// Monte Carlo rollouts plus exact propagation. Trial i draws from
/// make_rng(seed, i), so results do not depend on evaluation order.
RolloutStats monte_carlo_closed_loop(const LtiSystem& sys, const Policy& policy,
                                     const GaussianMoments& x0_dist, int trials, std::uint64_t seed,
                                     int keep_trajectories = 20);

}  // namespace covsteer
