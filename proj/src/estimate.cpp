#include "covsteer/estimate.hpp"

#include <cmath>
#include <sstream>

namespace covsteer {

const char* to_string(SigmaSource s) { return s == SigmaSource::known ? "known" : "estimated"; }

Mat mle_noise_analytic(const HankelData& h) { return h.x1 * h.gamma.mat(); }

double consistency_residual(const HankelData& h, const Mat& xi) {
  return ((h.x1 - xi) * h.gamma.mat()).norm();
}

namespace {

constexpr double kInitEps = 1e-6;

double log_det(const Mat& m) {
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

// 0.5 tr U + (T/2) log det Sigma
double dc_objective(const Mat& u, const Mat& sigma, Index horizon) {
  return 0.5 * u.trace() + 0.5 * static_cast<double>(horizon) * log_det(sigma);
}

struct Iterate {
  Mat xi;
  Mat sigma;
  Mat u;
};

// Orthonormal basis of the range of the consistency projector. Stating the
// equality against it drops the redundant rows of Xi Gamma = X1 Gamma.
Mat projector_range(const HankelData& h) {
  Eigen::SelfAdjointEigenSolver<Mat> es(h.gamma.mat());
  const Index keep = (es.eigenvalues().array() > 0.5).count();
  return es.eigenvectors().rightCols(keep);
}

// One convex subproblem. With `sigma_lin` set, Sigma is a variable and the
// log-det term is replaced by its tangent at sigma_lin; otherwise Sigma is
// the constant `sigma_fixed`. Variables are scaled by s (Sigma = s Sigma~,
// Xi = sqrt(s) Xi~), a congruence that leaves the epigraph block unchanged
// and keeps the program well conditioned for small noise levels.
Iterate solve_subproblem(const HankelData& h, sdp::SolverAdapter& solver, const Mat* sigma_lin,
                         const Mat& sigma_fixed, double floor, std::string& failure) {
  const Index n = h.n(), t = h.horizon();
  const Mat& ref = sigma_lin ? *sigma_lin : sigma_fixed;
  double scale = ref.trace() / static_cast<double>(n);
  if (!(scale > 0.0)) scale = 1.0;
  const double root = std::sqrt(scale);

  sdp::Problem p;
  const sdp::Affine xi = p.add_matrix("Xi", n, t);
  const sdp::Affine u = p.add_symmetric("U", t);
  sdp::Affine sigma(Mat(sigma_fixed / scale));
  if (sigma_lin) {
    sigma = p.add_symmetric("Sigma", n);
    p.add_psd(sigma - Mat((floor / scale) * Mat::Identity(n, n)), "Sigma floor");
  }
  const Mat range = projector_range(h);
  if (range.cols() > 0) p.add_equality(xi * range, Mat(h.x1 * range / root), "consistency");
  p.add_psd(sdp::Affine::blocks({{sigma, xi}, {xi.transpose(), u}}), "likelihood epigraph");
  sdp::Affine obj = 0.5 * u.trace();
  if (sigma_lin) {
    const Mat inv = Eigen::LLT<Mat>(*sigma_lin).solve(Mat::Identity(n, n));
    obj += (0.5 * static_cast<double>(t) * scale) * sdp::trace_product(inv, sigma);
  }
  p.set_objective(obj);

  const sdp::Solution sol = sdp::solve(p, solver);
  if (!sol.optimal()) {
    std::ostringstream os;
    os << "convex subproblem returned " << sdp::to_string(sol.status);
    if (!sol.message.empty()) os << " (" << sol.message << ")";
    failure = os.str();
    return {};
  }
  Iterate it;
  it.xi = root * sol.at("Xi");
  it.u = sol.at("U");
  it.sigma = sigma_lin ? Mat(scale * sol.at("Sigma")) : sigma_fixed;
  return it;
}

double slack_gap(const Iterate& it) {
  Eigen::LDLT<Mat> ldlt(it.sigma);
  return (it.u - it.xi.transpose() * ldlt.solve(it.xi)).norm();
}

}  // namespace

std::pair<NoiseEstimate, CcpReport> mle_noise_dc(const HankelData& h, sdp::SolverAdapter& solver,
                                                 const CcpOptions& opts) {
  const Index n = h.n(), t = h.horizon();
  CcpReport report;
  std::string failure;

  if (opts.known_sigma) {
    const SymMat& sig = *opts.known_sigma;
    if (sig.dim() != n) throw DimensionError("mle_noise_dc: known Sigma has wrong dimension");
    if (!is_psd(sig)) throw DomainError("mle_noise_dc: known Sigma is not PSD");
    const Iterate it = solve_subproblem(h, solver, nullptr, sig.mat(), 0.0, failure);
    if (!failure.empty()) {
      report.message = failure;
      throw EstimationError("mle_noise_dc: " + failure, report);
    }
    report.iterations = 1;
    report.objective_trace.push_back(0.5 * it.u.trace());
    report.converged = true;
    report.final_slack_gap = slack_gap(it);
    NoiseEstimate est{it.xi, sig, SigmaSource::known, 0.0, 0.0};
    return {est, report};
  }

  // Joint estimation: log det Sigma needs Sigma > 0, which in turn needs the
  // residual directions X1 Gamma to span the state space.
  Iterate cur;
  cur.xi = mle_noise_analytic(h);
  const Mat resid_cov = cur.xi * cur.xi.transpose() / static_cast<double>(t);
  const Mat x1g = h.x1 * h.gamma.mat() * h.x1.transpose();
  if (numerical_rank(x1g) < n && h.gamma.mat().trace() > 0.5) {
    report.message = "consistency residual does not span the state space; noise covariance is singular";
    throw EstimationError("mle_noise_dc: joint estimation requires a nonsingular noise covariance", report);
  }
  cur.sigma = resid_cov + kInitEps * Mat::Identity(n, n);
  cur.u = cur.xi.transpose() * Eigen::LLT<Mat>(cur.sigma).solve(cur.xi);
  double prev = dc_objective(cur.u, cur.sigma, t);

  for (int k = 0; k < opts.max_iters; ++k) {
    Iterate next = solve_subproblem(h, solver, &cur.sigma, cur.sigma, opts.sigma_floor, failure);
    if (!failure.empty()) {
      report.message = failure;
      throw EstimationError("mle_noise_dc: iterate " + std::to_string(k) + ": " + failure, report);
    }
    const double obj = dc_objective(next.u, next.sigma, t);
    report.iterations = k + 1;
    report.objective_trace.push_back(obj);
    cur = std::move(next);
    const double decrease = prev - obj;
    prev = obj;
    if (decrease < opts.rel_tol * std::max(1.0, std::abs(obj))) {
      report.converged = true;
      break;
    }
  }
  report.final_slack_gap = slack_gap(cur);
  report.floor_active = min_eig(SymMat(cur.sigma)) <= opts.sigma_floor * (1.0 + 1e-3);
  if (report.floor_active) report.message = "noise covariance estimate sits on the floor";
  NoiseEstimate est{cur.xi, SymMat(cur.sigma), SigmaSource::estimated, 0.0, 0.0};
  return {est, report};
}

SymMat error_covariance(const HankelData& h, const SymMat& sigma_xi) {
  if (sigma_xi.dim() != h.n()) throw DimensionError("error_covariance: Sigma_xi has wrong dimension");
  const Mat proj = Mat::Identity(h.horizon(), h.horizon()) - h.gamma.mat();
  return SymMat(kron(proj, sigma_xi));
}

namespace {

void check_delta(double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw DomainError("risk level delta must lie in (0, 1)");
}

}  // namespace

double uq_bound_general(const SymMat& sigma_delta, Index n, Index horizon, double delta) {
  check_delta(delta);
  if (sigma_delta.dim() != n * horizon) throw DimensionError("uq_bound_general: Sigma_Delta must be nT x nT");
  const Vec ev = eigenvalues(sigma_delta);
  const double top = ev.cwiseAbs().maxCoeff();
  if (ev.minCoeff() <= 1e-12 * top || top == 0.0) {
    throw DomainError("uq_bound_general: Sigma_Delta is singular; use uq_bound_mle");
  }
  const double lmin_inv = (1.0 / ev.array()).minCoeff();
  const double q = chi2_quantile(static_cast<int>(n * horizon), 1.0 - delta);
  return std::sqrt(q) / std::sqrt(lmin_inv);
}

double uq_bound_mle(const SymMat& sigma_xi, Index n, Index horizon, double delta) {
  check_delta(delta);
  if (sigma_xi.dim() != n) throw DimensionError("uq_bound_mle: Sigma_xi has wrong dimension");
  const double root_norm = spectral_norm(sqrtm_psd(sigma_xi));
  return root_norm * std::sqrt(chi2_quantile(static_cast<int>(n * horizon), 1.0 - delta));
}

void attach_bound(NoiseEstimate& est, Index horizon, double delta) {
  est.delta = delta;
  est.rho = uq_bound_mle(est.sigma_xi, est.sigma_xi.dim(), horizon, delta);
}

}  // namespace covsteer
