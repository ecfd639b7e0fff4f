#include "covsteer/sysdata.hpp"

#include "covsteer/error.hpp"

#include <sstream>

namespace covsteer {

void LtiSystem::validate() const {
  if (a.rows() == 0 || a.rows() != a.cols()) throw DimensionError("LtiSystem: A must be square and nonempty");
  if (b.rows() != a.rows() || b.cols() == 0) throw DimensionError("LtiSystem: B must have n rows");
  if (d.rows() != a.rows()) throw DimensionError("LtiSystem: D must have n rows");
  require_finite(a, "LtiSystem A");
  require_finite(b, "LtiSystem B");
  require_finite(d, "LtiSystem D");
}

void Dataset::validate() const {
  if (inputs.empty()) throw DimensionError("Dataset: no inputs");
  if (states.size() != inputs.size() + 1) {
    std::ostringstream os;
    os << "Dataset: expected " << inputs.size() + 1 << " states, found " << states.size();
    throw DimensionError(os.str());
  }
  const Index nn = n(), mm = m();
  for (const auto& u : inputs) {
    if (u.size() != mm) throw DimensionError("Dataset: inconsistent input dimension");
  }
  for (const auto& x : states) {
    if (x.size() != nn) throw DimensionError("Dataset: inconsistent state dimension");
  }
  if (true_noise) {
    if (true_noise->size() != inputs.size()) throw DimensionError("Dataset: true_noise length differs from T");
    for (const auto& xi : *true_noise) {
      if (xi.size() != nn) throw DimensionError("Dataset: inconsistent noise dimension");
    }
  }
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

GaussianSampler::GaussianSampler(const GaussianMoments& g) : mean_(g.mean) {
  if (g.cov.dim() != g.mean.size()) throw DimensionError("GaussianMoments: mean and cov sizes differ");
  factor_ = sqrtm_psd(g.cov).mat();
}

Vec GaussianSampler::draw(std::mt19937_64& rng) const {
  std::normal_distribution<double> n01;
  Vec z(mean_.size());
  for (Index i = 0; i < z.size(); ++i) z(i) = n01(rng);
  return mean_ + factor_ * z;
}

Dataset simulate(const LtiSystem& sys, const GaussianMoments& x0_dist, std::span<const Vec> inputs,
                 std::uint64_t seed) {
  sys.validate();
  if (x0_dist.mean.size() != sys.n()) throw DimensionError("simulate: x0 distribution has wrong dimension");
  auto rng = make_rng(seed, 0);
  std::normal_distribution<double> n01;
  const GaussianSampler x0(x0_dist);

  Dataset out;
  out.seed = seed;
  out.states.reserve(inputs.size() + 1);
  out.states.push_back(x0.draw(rng));
  std::vector<Vec> noise;
  for (const Vec& u : inputs) {
    if (u.size() != sys.m()) throw DimensionError("simulate: input has wrong dimension");
    Vec w(sys.d.cols());
    for (Index i = 0; i < w.size(); ++i) w(i) = n01(rng);
    Vec xi = sys.d * w;
    out.states.push_back(sys.a * out.states.back() + sys.b * u + xi);
    noise.push_back(std::move(xi));
    out.inputs.push_back(u);
  }
  out.true_noise = std::move(noise);
  return out;
}

std::vector<Vec> excitation_input(Index m, Index horizon, double amplitude, std::uint64_t seed) {
  auto rng = make_rng(seed, 1);
  std::normal_distribution<double> n01;
  std::vector<Vec> u(static_cast<std::size_t>(horizon), Vec::Zero(m));
  for (auto& v : u) {
    for (Index i = 0; i < m; ++i) v(i) = amplitude * n01(rng);
  }
  return u;
}

HankelData build_hankel(const Dataset& data, double pinv_tol) {
  data.validate();
  const Index t = data.horizon();
  HankelData h;
  h.u0 = hankel(data.inputs, 0, 1, t);
  h.x0 = hankel(data.states, 0, 1, t);
  h.x1 = hankel(data.states, 1, 1, t);
  h.s.resize(h.u0.rows() + h.x0.rows(), t);
  h.s << h.u0, h.x0;
  h.gamma = consistency_projector(h.s, pinv_tol);
  h.rank_s = numerical_rank(h.s, pinv_tol);
  return h;
}

bool is_persistently_exciting(std::span<const Vec> signal, Index order, double rtol) {
  const auto len = static_cast<Index>(signal.size());
  if (order < 1 || len < order) return false;
  const Mat z = hankel(signal, 0, order, len - order + 1);
  return numerical_rank(z, rtol) == z.rows();
}

void propagate_moments(const LtiSystem& sys, const Policy& policy, const GaussianMoments& x0_dist,
                       std::vector<Vec>& means, std::vector<SymMat>& covs) {
  sys.validate();
  const int horizon = policy.horizon();
  if (policy.n() != sys.n() || policy.m() != sys.m()) {
    throw DimensionError("propagate_moments: policy and system dimensions differ");
  }
  const Mat noise = sys.noise_cov();
  means.assign(1, x0_dist.mean);
  covs.assign(1, x0_dist.cov);
  for (int k = 0; k < horizon; ++k) {
    const Mat& kk = policy.gains[k];
    const Mat acl = sys.a + sys.b * kk;
    const Vec& mu = means.back();
    means.push_back(sys.a * mu + sys.b * (kk * (mu - policy.planned_means[k]) + policy.feedforward[k]));
    covs.emplace_back(acl * covs.back().mat() * acl.transpose() + noise);
  }
}

RolloutStats monte_carlo_closed_loop(const LtiSystem& sys, const Policy& policy,
                                     const GaussianMoments& x0_dist, int trials, std::uint64_t seed,
                                     int keep_trajectories) {
  if (trials < 1) throw DomainError("monte_carlo_closed_loop: trials must be >= 1");
  RolloutStats st;
  propagate_moments(sys, policy, x0_dist, st.exact_means, st.exact_covs);
  const int horizon = policy.horizon();
  const Index n = sys.n();
  const GaussianSampler x0(x0_dist);

  std::vector<Vec> sum(horizon + 1, Vec::Zero(n));
  std::vector<Mat> outer(horizon + 1, Mat::Zero(n, n));
  std::normal_distribution<double> n01;
  std::vector<Vec> traj(horizon + 1);
  for (int i = 0; i < trials; ++i) {
    auto rng = make_rng(seed, static_cast<std::uint64_t>(i));
    traj[0] = x0.draw(rng);
    for (int k = 0; k < horizon; ++k) {
      const Vec u = policy.gains[k] * (traj[k] - policy.planned_means[k]) + policy.feedforward[k];
      Vec w(sys.d.cols());
      for (Index j = 0; j < w.size(); ++j) w(j) = n01(rng);
      traj[k + 1] = sys.a * traj[k] + sys.b * u + sys.d * w;
    }
    // Accumulate deviations from the exact mean for a stable covariance estimate.
    for (int k = 0; k <= horizon; ++k) {
      const Vec dev = traj[k] - st.exact_means[k];
      sum[k] += dev;
      outer[k] += dev * dev.transpose();
    }
    if (i < keep_trajectories) st.trajectories.push_back(traj);
  }
  for (int k = 0; k <= horizon; ++k) {
    const Vec mean_dev = sum[k] / trials;
    st.sample_means.push_back(st.exact_means[k] + mean_dev);
    const double denom = trials > 1 ? trials - 1.0 : 1.0;
    st.sample_covs.emplace_back((outer[k] - trials * mean_dev * mean_dev.transpose()) / denom);
  }
  return st;
}

}  // namespace covsteer
