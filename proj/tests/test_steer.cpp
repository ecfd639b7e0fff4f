#include "doctest.h"

#include "covsteer/steer.hpp"
#include "fixtures.hpp"

#include <random>

using namespace covsteer;
using namespace fixtures;

namespace {

sdp::InteriorPointSolver& solver() {
  static sdp::InteriorPointSolver ipm;
  return ipm;
}

SteeringSpec experiment_spec() {
  return SteeringSpec::uniform(10, SymMat::zero(2), SymMat::identity(1), experiment_init(), experiment_target());
}

struct Instance {
  LtiSystem sys;
  Dataset data;
  HankelData h;
};

Instance experiment_instance(std::uint64_t seed, double amplitude = 3.0) {
  Instance in{double_integrator(), {}, {}};
  in.data = simulate(in.sys, experiment_init(), excitation_input(1, 15, amplitude, seed), seed);
  in.h = build_hankel(in.data);
  return in;
}

// Estimate that knows the true noise realization.
NoiseEstimate oracle_estimate(const Instance& in) {
  return NoiseEstimate{columns(*in.data.true_noise), in.sys.noise_cov(), SigmaSource::known, 0.0, 0.0};
}

NoiseEstimate analytic_estimate(const Instance& in, double delta = 0.001) {
  NoiseEstimate est{mle_noise_analytic(in.h), in.sys.noise_cov(), SigmaSource::known, 0.0, 0.0};
  attach_bound(est, in.h.horizon(), delta);
  return est;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST_CASE("steering spec validation") {
  SteeringSpec s = experiment_spec();
  CHECK_NOTHROW(s.validate(2, 1));
  CHECK_THROWS_AS(s.validate(3, 1), DimensionError);
  s.r[3] = SymMat::zero(1);
  CHECK_THROWS_AS(s.validate(2, 1), DomainError);
  s = experiment_spec();
  s.terminal.cov = SymMat::zero(2);
  CHECK_THROWS_AS(s.validate(2, 1), DomainError);
  s = experiment_spec();
  s.q.pop_back();
  CHECK_THROWS_AS(s.validate(2, 1), DimensionError);
}

TEST_CASE("model-based steering on a scalar system matches the one-step hand solution") {
  // x+ = x + u + xi with Var(xi) = q. Reaching Sigma_f < Sigma_0 + q needs
  // (1 + K)^2 Sigma_0 + q = Sigma_f; the cheapest gain is the root nearest 0.
  const double s0 = 2.0, q = 0.1, sf = 1.0;
  LtiSystem sys{Mat::Identity(1, 1), Mat::Identity(1, 1), Mat::Constant(1, 1, std::sqrt(q))};
  const auto spec = SteeringSpec::uniform(1, SymMat::zero(1), SymMat::identity(1),
                                          GaussianMoments{Vec::Zero(1), SymMat::scaled_identity(1, s0)},
                                          GaussianMoments{Vec::Zero(1), SymMat::scaled_identity(1, sf)});
  const Policy p = solve_mbcs(sys, spec, solver());
  const double k = -1.0 + std::sqrt((sf - q) / s0);
  CHECK(p.gains[0](0, 0) == doctest::Approx(k).epsilon(1e-6));
  CHECK(p.cost_cov == doctest::Approx(k * k * s0).epsilon(1e-6));
  const auto rep = evaluate_policy(sys, p, spec);
  CHECK(std::abs(rep.terminal_cov_slack) <= 1e-6);
}

TEST_CASE("model-based steering without control authority is infeasible") {
  LtiSystem sys = double_integrator();
  sys.b.setZero();
  CHECK_THROWS_AS(solve_mbcs(sys, experiment_spec(), solver()), SynthesisError);
}

TEST_CASE("model-based steering on the experiment system") {
  const LtiSystem sys = double_integrator();
  const SteeringSpec spec = experiment_spec();
  const Policy p = solve_mbcs(sys, spec, solver());
  CHECK(p.mode == PolicyMode::mb);
  CHECK(p.planned_covs.front() == spec.init.cov);
  CHECK(p.planned_covs.back() == spec.terminal.cov);
  CHECK(p.planned_means.front() == spec.init.mean);
  CHECK(p.planned_means.back() == spec.terminal.mean);
  const auto rep = evaluate_policy(sys, p, spec);
  CHECK(rep.terminal_cov_slack >= -1e-6);
  CHECK(rep.terminal_mean_error <= 1e-8);
  // Planned covariances bound the realized ones from above; with input
  // energy as the only cost the terminal bound is attained.
  for (int k = 0; k <= 10; ++k) CHECK(min_eig(SymMat(p.planned_covs[k].mat() - rep.covs[k].mat())) >= -1e-7);
  CHECK(std::abs(rep.terminal_cov_slack) <= 1e-6);
  CHECK(rep.planned_gap.front() == 0.0);
  for (const auto& a : p.aux) CHECK(a.input_cov_gap <= 1e-5);
  CHECK(rep.cost_cov <= p.cost_cov + 1e-7);
  CHECK(rep.cost_mean == doctest::Approx(p.cost_mean).epsilon(1e-8));
}

TEST_CASE("zero policy evaluation is the open-loop recursion") {
  const LtiSystem sys = double_integrator();
  const SteeringSpec spec = experiment_spec();
  Policy p;
  p.gains.assign(10, Mat::Zero(1, 2));
  p.feedforward.assign(10, Vec::Zero(1));
  p.planned_means.assign(11, Vec::Zero(2));
  p.planned_covs.assign(11, SymMat::identity(2));
  const auto rep = evaluate_policy(sys, p, spec);
  const auto mc = monte_carlo_closed_loop(sys, p, spec.init, 10, 1);
  for (int k = 0; k <= 10; ++k) {
    CHECK(rep.covs[k] == mc.exact_covs[k]);
    CHECK(rep.means[k] == mc.exact_means[k]);
  }
  Mat sig = spec.init.cov;
  for (int k = 0; k < 10; ++k) sig = sys.a * sig * sys.a.transpose() + sys.d * sys.d.transpose();
  CHECK((rep.covs.back().mat() - sig).norm() <= 1e-12 * sig.norm());
  CHECK(rep.cost_cov == 0.0);  // Q = 0 and K = 0
}

TEST_CASE("mean steering") {
  SUBCASE("exact noise recovers the model and reaches the target") {
    const Instance in = experiment_instance(7, 1.0);
    const SteeringSpec spec = experiment_spec();
    const auto [fv, fmu] = data_driven_model(in.h, columns(*in.data.true_noise));
    CHECK((fmu - in.sys.a).norm() <= 1e-9);
    CHECK((fv - in.sys.b).norm() <= 1e-9);
    const MeanPlan plan = solve_mean(in.h, oracle_estimate(in), spec);
    CHECK(plan.kkt_residual <= 1e-8);
    Vec mu = spec.init.mean;
    for (int k = 0; k < 10; ++k) mu = in.sys.a * mu + in.sys.b * plan.feedforward[k];
    CHECK((mu - spec.terminal.mean).norm() <= 1e-8);

    // Oracle for Q = 0: minimum-energy transfer v = R^-1 C^T (C R^-1 C^T)^-1 (mu_f - A^N mu_0)
    // with C = [A^{N-1} B, ..., B] and R = I.
    Mat c(2, 10);
    Mat power = Mat::Identity(2, 2);
    for (int k = 9; k >= 0; --k) {
      c.col(k) = power * in.sys.b;
      power = in.sys.a * power;
    }
    const Vec target = spec.terminal.mean - power * spec.init.mean;
    const Vec v = c.transpose() * (c * c.transpose()).ldlt().solve(target);
    for (int k = 0; k < 10; ++k) CHECK(std::abs(plan.feedforward[k](0) - v(k)) <= 1e-8 * (1.0 + v.norm()));
    CHECK(plan.cost == doctest::Approx(v.squaredNorm()).epsilon(1e-10));
  }
  SUBCASE("zero boundary means give the zero plan") {
    const Instance in = experiment_instance(3);
    SteeringSpec spec = SteeringSpec::uniform(6, SymMat::identity(2), SymMat::scaled_identity(1, 2.0),
                                              GaussianMoments{Vec::Zero(2), SymMat::identity(2)},
                                              GaussianMoments{Vec::Zero(2), SymMat::identity(2)});
    const MeanPlan plan = solve_mean(in.h, analytic_estimate(in), spec);
    for (const auto& v : plan.feedforward) CHECK(v.norm() <= 1e-12);
    for (const auto& mu : plan.means) CHECK(mu.norm() <= 1e-12);
  }
  SUBCASE("unreachable target") {
    const Mat a = Mat::Identity(2, 2);
    const Mat b = (Mat(2, 1) << 1, 0).finished();
    const auto spec = SteeringSpec::uniform(4, SymMat::zero(2), SymMat::identity(1), experiment_init(), experiment_target());
    CHECK_THROWS_AS(solve_mean_qp(a, b, spec), SynthesisError);
  }
}

TEST_CASE("data-driven steering with the true noise equals model-based steering") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 10; ++trial) {
    LtiSystem sys{random_mat(rng, 2, 2, 0.6), random_mat(rng, 2, 1), 0.1 * Mat::Identity(2, 2)};
    const Dataset d = simulate(sys, GaussianMoments{Vec::Zero(2), SymMat::identity(2)},
                               excitation_input(1, 12, 1.0, 300 + trial), 300 + trial);
    const HankelData h = build_hankel(d);
    REQUIRE(h.full_rank());
    const auto spec = SteeringSpec::uniform(5, SymMat::identity(2), SymMat::identity(1),
                                            GaussianMoments{Vec::Ones(2), SymMat::identity(2)},
                                            GaussianMoments{Vec::Zero(2), SymMat::scaled_identity(2, 0.5)});
    const NoiseEstimate est{columns(*d.true_noise), sys.noise_cov(), SigmaSource::known, 0.0, 0.0};
    const Policy dd = solve_ddcs(h, est, spec, solver());
    const Policy mb = solve_mbcs(sys, spec, solver());
    CHECK(rel(dd.cost_cov, mb.cost_cov) <= 1e-4);
    for (int k = 0; k <= 5; ++k) {
      const Mat diff = (dd.planned_covs[k].mat() - mb.planned_covs[k].mat()).cwiseAbs();
      const Mat scale = mb.planned_covs[k].mat().cwiseAbs().cwiseMax(1e-3);
      CHECK((diff.array() / scale.array()).maxCoeff() <= 1e-4);
    }
    CHECK(rel(dd.cost_mean, mb.cost_mean) <= 1e-6);
  }
}

TEST_CASE("data-driven policy recovery identities") {
  const Instance in = experiment_instance(5);
  const NoiseEstimate est = analytic_estimate(in);
  const Policy p = solve_ddcs(in.h, est, experiment_spec(), solver());
  CHECK(p.mode == PolicyMode::dd);
  const Mat f = in.h.x1 - est.xi_hat;
  for (int k = 0; k < p.horizon(); ++k) {
    const StepAux& a = p.aux[k];
    const Mat& sig = p.planned_covs[k].mat();
    CHECK((in.h.x0 * a.s - sig).norm() <= 1e-6 * sig.norm());
    Mat want(3, 2);
    want << p.gains[k], Mat::Identity(2, 2);
    CHECK((in.h.s * a.g - want).norm() <= 1e-6 * want.norm());
    CHECK((p.gains[k] - in.h.u0 * a.s * sig.inverse()).norm() <= 1e-6 * (1.0 + p.gains[k].norm()));
    CHECK(min_eig(SymMat(a.y - a.s * sig.inverse() * a.s.transpose())) >= -1e-7);
    // Relaxed dynamics hold at the planned covariances.
    const Mat lower = f * a.s * sig.inverse() * a.s.transpose() * f.transpose() + est.sigma_xi.mat();
    CHECK(min_eig(SymMat(p.planned_covs[k + 1].mat() - lower)) >= -1e-7);
  }
  // Row-space parametrization: S_k carries no component the data cannot see.
  for (const auto& a : p.aux) CHECK((in.h.gamma.mat() * a.s).norm() <= 1e-9);
}

TEST_CASE("data-driven synthesis needs full-rank data") {
  const Dataset d = simulate(double_integrator(0.0), point((Vec(2) << 1, 2).finished()),
                             excitation_input(1, 15, 0.0, 1), 1);
  const HankelData h = build_hankel(d);
  const NoiseEstimate est{Mat::Zero(2, 15), SymMat::scaled_identity(2, 0.01), SigmaSource::known, 0.0, 0.0};
  CHECK_THROWS_AS(solve_ddcs(h, est, experiment_spec(), solver()), PreconditionError);
}

TEST_CASE("robust lmi parts reconstruct the perturbed block") {
  const Instance in = experiment_instance(2);
  const NoiseEstimate est = analytic_estimate(in);
  const Policy p = solve_rddcs(in.h, est, experiment_spec(), solver());
  std::mt19937_64 rng(8);
  for (int k = 0; k < p.horizon(); ++k) {
    const RobustLmiParts parts = robust_lmi_parts(in.h, est, p, k, est.rho);
    CHECK((parts.r_blk.transpose() * parts.r_blk - Mat(Vec((Vec(4) << 1, 1, 0, 0).finished()).asDiagonal())).norm() == 0.0);
    for (int t = 0; t < 5; ++t) {
      const Mat dxi = random_mat(rng, 2, 15);
      Mat direct(4, 4);
      const Mat fs = (in.h.x1 - est.xi_hat - dxi) * p.aux[k].s;
      direct << p.planned_covs[k + 1].mat() - est.sigma_xi.mat(), fs, fs.transpose(), p.planned_covs[k].mat();
      CHECK((parts.perturbed(dxi).mat() - direct).norm() <= 1e-12 * (1.0 + direct.norm()));
    }
  }
}

TEST_CASE("robust steering reduces to nominal at zero radius and is monotone in the radius") {
  const Instance in = experiment_instance(4);
  const SteeringSpec spec = experiment_spec();
  NoiseEstimate est = analytic_estimate(in);
  const double rho_star = est.rho;
  const Policy dd = solve_ddcs(in.h, est, spec, solver());
  std::vector<double> costs;
  for (double r : {0.0, 0.5 * rho_star, rho_star}) {
    est.rho = r;
    costs.push_back(solve_rddcs(in.h, est, spec, solver()).cost_cov);
  }
  CHECK(rel(costs[0], dd.cost_cov) <= 1e-6);
  CHECK(costs[1] >= costs[0] - 1e-7 * std::abs(costs[0]));
  CHECK(costs[2] >= costs[1] - 1e-7 * std::abs(costs[1]));
}

TEST_CASE("robust policy survives sampled perturbations") {
  for (std::uint64_t seed : {1u, 6u}) {
    const Instance in = experiment_instance(seed);
    const NoiseEstimate est = analytic_estimate(in);
    const Policy p = solve_rddcs(in.h, est, experiment_spec(), solver());
    CHECK(p.mode == PolicyMode::rdd);
    CHECK(p.rho == est.rho);
    std::vector<RobustLmiParts> parts;
    for (int k = 0; k < p.horizon(); ++k) {
      parts.push_back(robust_lmi_parts(in.h, est, p, k, est.rho));
      CHECK(p.aux[k].lambda >= -1e-9);
    }
    CHECK(certify_robust(parts, 2000, seed) >= -1e-7);
    // The realized estimation error is inside the ball, so the true system meets the target.
    CHECK(spectral_norm(columns(*in.data.true_noise) - est.xi_hat) <= est.rho);
    const auto rep = evaluate_policy(in.sys, p, experiment_spec());
    CHECK(rep.covariance_ok());
  }
}

TEST_CASE("robust steering reports the largest feasible radius when infeasible") {
  const Instance in = experiment_instance(3, 1.0);
  NoiseEstimate est = analytic_estimate(in);
  est.rho = 50.0;
  try {
    solve_rddcs(in.h, est, experiment_spec(), solver());
    FAIL("expected a SynthesisError");
  } catch (const SynthesisError& e) {
    const double lo = e.largest_feasible_rho();
    REQUIRE(lo >= 0.0);
    CHECK(lo < 50.0);
    est.rho = lo;
    CHECK_NOTHROW(solve_rddcs(in.h, est, experiment_spec(), solver()));
  }
}
