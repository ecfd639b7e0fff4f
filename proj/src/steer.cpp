#include "covsteer/steer.hpp"

#include <cmath>
#include <optional>
#include <sstream>

namespace covsteer {

SteeringSpec SteeringSpec::uniform(int horizon, const SymMat& q, const SymMat& r, GaussianMoments init,
                                   GaussianMoments terminal) {
  SteeringSpec s;
  s.horizon = horizon;
  s.q.assign(static_cast<std::size_t>(std::max(horizon, 0)), q);
  s.r.assign(static_cast<std::size_t>(std::max(horizon, 0)), r);
  s.init = std::move(init);
  s.terminal = std::move(terminal);
  return s;
}

void SteeringSpec::validate(Index n, Index m) const {
  if (horizon < 1) throw DomainError("SteeringSpec: horizon must be positive");
  if (q.size() != static_cast<std::size_t>(horizon) || r.size() != static_cast<std::size_t>(horizon)) {
    throw DimensionError("SteeringSpec: need one Q_k and one R_k per step");
  }
  for (const auto& qk : q) {
    if (qk.dim() != n) throw DimensionError("SteeringSpec: Q_k must be n x n");
    if (!is_psd(qk)) throw DomainError("SteeringSpec: Q_k must be PSD");
  }
  for (const auto& rk : r) {
    if (rk.dim() != m) throw DimensionError("SteeringSpec: R_k must be m x m");
    if (!(min_eig(rk) > 0.0)) throw DomainError("SteeringSpec: R_k must be positive definite");
  }
  for (const GaussianMoments* g : {&init, &terminal}) {
    if (g->mean.size() != n || g->cov.dim() != n) throw DimensionError("SteeringSpec: boundary moments must be n-dimensional");
    if (!(min_eig(g->cov) > 0.0)) throw DomainError("SteeringSpec: boundary covariances must be positive definite");
  }
}

SymMat RobustLmiParts::perturbed(const Mat& dxi) const {
  const Mat cross = r_blk.transpose() * dxi * l;
  return SymMat(g_hat.mat() + cross + cross.transpose());
}

namespace {

constexpr double kSigmaFloor = 1e-8;

// Covariance program shared by every mode. The dynamics enter through
// (F_mu Sigma_k + F_v M_k), where M_k is the input-state cross term: U S_k
// in the data-driven programs and P_k = K_k Sigma_k in the model-based one.
struct CovModel {
  Mat f_mu;
  Mat f_v;
  Mat sigma_xi;
  const Mat* s_pinv = nullptr;  // [U; X]^+, set for the robust program
  double rho = 0.0;
  bool robust = false;
};

struct CovSolution {
  std::vector<Mat> sigma;  // Sigma_0..Sigma_N
  std::vector<Mat> m;
  std::vector<Mat> w;
  std::vector<double> lambda;
  double cost = 0.0;
};

std::string step_name(const char* base, int k) { return std::string(base) + "_" + std::to_string(k); }

// lambda * I_dim for a 1x1 expression lambda.
sdp::Affine times_identity(const sdp::Affine& scalar, Index dim) {
  sdp::Affine out(Mat::Zero(dim, dim));
  for (Index i = 0; i < dim; ++i) {
    for (const auto& t : scalar.terms(0, 0)) out.add_term(i, i, t.var, t.coef);
  }
  return out;
}

std::optional<CovSolution> solve_covariance(const CovModel& model, const SteeringSpec& spec, sdp::SolverAdapter& solver,
                                            std::string& failure) {
  const int horizon = spec.horizon;
  const Index n = model.f_mu.rows(), m = model.f_v.cols();
  sdp::Problem p;
  std::vector<sdp::Affine> sig(static_cast<std::size_t>(horizon + 1));
  sig[0] = sdp::Affine(spec.init.cov.mat());
  sig[static_cast<std::size_t>(horizon)] = sdp::Affine(spec.terminal.cov.mat());
  for (int k = 1; k < horizon; ++k) {
    sig[static_cast<std::size_t>(k)] = p.add_symmetric(step_name("Sigma", k), n);
    p.add_psd(sig[static_cast<std::size_t>(k)] - Mat(kSigmaFloor * Mat::Identity(n, n)), step_name("floor", k));
  }

  sdp::Affine obj(Mat::Zero(1, 1));
  for (int k = 0; k < horizon; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    const sdp::Affine mk = p.add_matrix(step_name("M", k), m, n);
    const sdp::Affine wk = p.add_symmetric(step_name("W", k), m);
    p.add_psd(sdp::Affine::blocks({{sig[uk], mk.transpose()}, {mk, wk}}), step_name("input covariance", k));

    const sdp::Affine dyn = model.f_mu * sig[uk] + model.f_v * mk;
    sdp::Affine top = sig[uk + 1] - model.sigma_xi;
    if (!model.robust) {
      p.add_psd(sdp::Affine::blocks({{top, dyn}, {dyn.transpose(), sig[uk]}}), step_name("dynamics", k));
    } else {
      const Mat& sp = *model.s_pinv;
      const Index t = sp.rows();
      const sdp::Affine lam = p.add_scalar(step_name("lambda", k));
      const sdp::Affine sk = sp.leftCols(m) * mk + sp.rightCols(n) * sig[uk];
      // rho * L(S_k) = rho * [0_{T,n}, -S_k]
      const sdp::Affine rl = sdp::Affine::blocks({{sdp::Affine(Mat::Zero(t, n)), -model.rho * sk}});
      top -= times_identity(lam, n);
      const sdp::Affine inner = sdp::Affine::blocks({{top, dyn}, {dyn.transpose(), sig[uk]}});
      p.add_psd(sdp::Affine::blocks({{times_identity(lam, t), rl}, {rl.transpose(), inner}}),
                step_name("robust dynamics", k));
    }
    obj += sdp::trace_product(spec.q[uk].mat(), sig[uk]) + sdp::trace_product(spec.r[uk].mat(), wk);
  }
  p.set_objective(obj);

  const sdp::Solution sol = sdp::solve(p, solver);
  if (!sol.optimal()) {
    std::ostringstream os;
    os << "covariance program returned " << sdp::to_string(sol.status);
    if (!sol.message.empty()) os << " (" << sol.message << ")";
    failure = os.str();
    return std::nullopt;
  }
  CovSolution out;
  out.sigma.push_back(spec.init.cov.mat());
  for (int k = 1; k < horizon; ++k) out.sigma.push_back(sol.at(step_name("Sigma", k)));
  out.sigma.push_back(spec.terminal.cov.mat());
  for (int k = 0; k < horizon; ++k) {
    out.m.push_back(sol.at(step_name("M", k)));
    out.w.push_back(sol.at(step_name("W", k)));
    out.lambda.push_back(model.robust ? sol.at(step_name("lambda", k))(0, 0) : 0.0);
  }
  out.cost = sol.objective_value;
  return out;
}

void check_data(const HankelData& h, const NoiseEstimate& est, const SteeringSpec& spec) {
  if (!h.full_rank()) {
    std::ostringstream os;
    os << "data-driven synthesis needs rank [U; X] = n + m = " << h.n() + h.m() << ", found " << h.rank_s;
    throw PreconditionError(os.str());
  }
  if (est.xi_hat.rows() != h.n() || est.xi_hat.cols() != h.horizon() || est.sigma_xi.dim() != h.n()) {
    throw DimensionError("noise estimate does not match the dataset dimensions");
  }
  spec.validate(h.n(), h.m());
}

Mat solve_right(const Mat& lhs, const Mat& sigma) {
  // lhs * sigma^{-1} for symmetric positive definite sigma
  return Eigen::LDLT<Mat>(sigma).solve(lhs.transpose()).transpose();
}

Policy assemble_data_driven(const HankelData& h, const NoiseEstimate& est, const SteeringSpec& spec,
                            const CovSolution& cov, PolicyMode mode, double rho) {
  const Mat sp = pinv(h.s);
  Policy pol;
  pol.mode = mode;
  pol.rho = rho;
  pol.cost_cov = cov.cost;
  for (const auto& s : cov.sigma) pol.planned_covs.emplace_back(s);
  for (int k = 0; k < spec.horizon; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    const Mat& sig = cov.sigma[uk];
    Mat stacked(h.m() + h.n(), h.n());
    stacked << cov.m[uk], sig;
    StepAux aux;
    aux.s = sp * stacked;
    aux.g = solve_right(aux.s, sig);
    aux.y = aux.g * aux.s.transpose();
    aux.lambda = cov.lambda[uk];
    const Mat us = h.u0 * aux.s;
    aux.input_cov_gap = (cov.w[uk] - solve_right(us, sig) * us.transpose()).norm();
    pol.gains.push_back(h.u0 * aux.g);
    pol.aux.push_back(std::move(aux));
  }
  const MeanPlan mean = solve_mean(h, est, spec);
  pol.planned_means = mean.means;
  pol.feedforward = mean.feedforward;
  pol.cost_mean = mean.cost;
  return pol;
}

CovModel data_driven_cov_model(const HankelData& h, const NoiseEstimate& est) {
  auto [fv, fmu] = data_driven_model(h, est.xi_hat);
  CovModel model;
  model.f_mu = std::move(fmu);
  model.f_v = std::move(fv);
  model.sigma_xi = est.sigma_xi.mat();
  return model;
}

}  // namespace

std::pair<Mat, Mat> data_driven_model(const HankelData& h, const Mat& xi_hat) {
  const Mat f = (h.x1 - xi_hat) * pinv(h.s);
  return {f.leftCols(h.m()), f.rightCols(h.n())};
}

Policy solve_ddcs(const HankelData& h, const NoiseEstimate& est, const SteeringSpec& spec, sdp::SolverAdapter& solver) {
  check_data(h, est, spec);
  std::string failure;
  const auto cov = solve_covariance(data_driven_cov_model(h, est), spec, solver, failure);
  if (!cov) throw SynthesisError("solve_ddcs: " + failure);
  return assemble_data_driven(h, est, spec, *cov, PolicyMode::dd, 0.0);
}

Policy solve_rddcs(const HankelData& h, const NoiseEstimate& est, const SteeringSpec& spec, sdp::SolverAdapter& solver) {
  check_data(h, est, spec);
  if (!(est.rho >= 0.0) || !std::isfinite(est.rho)) throw DomainError("solve_rddcs: radius must be finite and nonnegative");
  const Mat sp = pinv(h.s);
  CovModel model = data_driven_cov_model(h, est);
  model.s_pinv = &sp;
  model.robust = true;
  model.rho = est.rho;
  std::string failure;
  if (auto cov = solve_covariance(model, spec, solver, failure)) {
    return assemble_data_driven(h, est, spec, *cov, PolicyMode::rdd, est.rho);
  }

  // Diagnostic: largest radius that still admits a solution.
  std::string ignored;
  model.rho = 0.0;
  double lo = -1.0;
  if (solve_covariance(model, spec, solver, ignored)) {
    lo = 0.0;
    double hi = est.rho;
    for (int it = 0; it < 20 && hi - lo > 1e-4 * est.rho; ++it) {
      model.rho = 0.5 * (lo + hi);
      if (solve_covariance(model, spec, solver, ignored)) {
        lo = model.rho;
      } else {
        hi = model.rho;
      }
    }
  }
  std::ostringstream os;
  os << "solve_rddcs: " << failure << " at rho = " << est.rho;
  if (lo >= 0.0) {
    os << "; largest feasible rho found is " << lo;
  } else {
    os << "; the nominal program is infeasible as well";
  }
  throw SynthesisError(os.str(), lo);
}

MeanPlan solve_mean_qp(const Mat& f_mu, const Mat& f_v, const SteeringSpec& spec) {
  const Index n = f_mu.rows(), m = f_v.cols();
  const Index horizon = spec.horizon;
  const Index nmu = n * (horizon + 1), nz = nmu + m * horizon, nc = n * (horizon + 2);
  auto mu_at = [&](Index k) { return n * k; };
  auto v_at = [&](Index k) { return nmu + m * k; };

  Mat kkt = Mat::Zero(nz + nc, nz + nc);
  Vec rhs = Vec::Zero(nz + nc);
  for (Index k = 0; k < horizon; ++k) {
    kkt.block(mu_at(k), mu_at(k), n, n) = 2.0 * spec.q[static_cast<std::size_t>(k)].mat();
    kkt.block(v_at(k), v_at(k), m, m) = 2.0 * spec.r[static_cast<std::size_t>(k)].mat();
  }
  Mat c = Mat::Zero(nc, nz);
  Vec d = Vec::Zero(nc);
  c.block(0, mu_at(0), n, n).setIdentity();
  d.head(n) = spec.init.mean;
  c.block(n, mu_at(horizon), n, n).setIdentity();
  d.segment(n, n) = spec.terminal.mean;
  for (Index k = 0; k < horizon; ++k) {
    const Index row = 2 * n + n * k;
    c.block(row, mu_at(k + 1), n, n).setIdentity();
    c.block(row, mu_at(k), n, n) = -f_mu;
    c.block(row, v_at(k), n, m) = -f_v;
  }
  kkt.block(0, nz, nz, nc) = c.transpose();
  kkt.block(nz, 0, nc, nz) = c;
  rhs.tail(nc) = d;

  Eigen::FullPivLU<Mat> lu(kkt);
  if (!lu.isInvertible()) {
    throw SynthesisError("mean steering: KKT system is singular (terminal mean unreachable under the model)");
  }
  Vec sol = lu.solve(rhs);
  sol += lu.solve(rhs - kkt * sol);

  MeanPlan plan;
  plan.kkt_residual = (kkt * sol - rhs).cwiseAbs().maxCoeff();
  for (Index k = 0; k <= horizon; ++k) plan.means.push_back(sol.segment(mu_at(k), n));
  for (Index k = 0; k < horizon; ++k) plan.feedforward.push_back(sol.segment(v_at(k), m));
  // Boundary values are exact by definition.
  plan.means.front() = spec.init.mean;
  plan.means.back() = spec.terminal.mean;
  for (Index k = 0; k < horizon; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    plan.cost += plan.means[uk].dot(spec.q[uk].mat() * plan.means[uk]) +
                 plan.feedforward[uk].dot(spec.r[uk].mat() * plan.feedforward[uk]);
  }
  return plan;
}

MeanPlan solve_mean(const HankelData& h, const NoiseEstimate& est, const SteeringSpec& spec) {
  check_data(h, est, spec);
  const auto [fv, fmu] = data_driven_model(h, est.xi_hat);
  return solve_mean_qp(fmu, fv, spec);
}

Policy solve_mbcs(const LtiSystem& sys, const SteeringSpec& spec, sdp::SolverAdapter& solver) {
  sys.validate();
  spec.validate(sys.n(), sys.m());
  CovModel model;
  model.f_mu = sys.a;
  model.f_v = sys.b;
  model.sigma_xi = sys.noise_cov().mat();
  std::string failure;
  const auto cov = solve_covariance(model, spec, solver, failure);
  if (!cov) throw SynthesisError("solve_mbcs: " + failure);

  Policy pol;
  pol.mode = PolicyMode::mb;
  pol.cost_cov = cov->cost;
  for (const auto& s : cov->sigma) pol.planned_covs.emplace_back(s);
  for (int k = 0; k < spec.horizon; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    StepAux aux;
    aux.s = cov->m[uk];
    aux.y = cov->w[uk];
    aux.g = solve_right(aux.s, cov->sigma[uk]);
    aux.input_cov_gap = (aux.y - aux.g * aux.s.transpose()).norm();
    pol.gains.push_back(aux.g);
    pol.aux.push_back(std::move(aux));
  }
  const MeanPlan mean = solve_mean_qp(sys.a, sys.b, spec);
  pol.planned_means = mean.means;
  pol.feedforward = mean.feedforward;
  pol.cost_mean = mean.cost;
  return pol;
}

RobustLmiParts robust_lmi_parts(const HankelData& h, const NoiseEstimate& est, const Policy& policy, int k,
                                double rho) {
  if (policy.mode == PolicyMode::mb) throw PreconditionError("robust_lmi_parts: needs a data-driven policy");
  if (k < 0 || k >= policy.horizon()) throw DomainError("robust_lmi_parts: step out of range");
  const Index n = h.n(), t = h.horizon();
  const auto uk = static_cast<std::size_t>(k);
  const Mat& s = policy.aux[uk].s;
  const Mat fs = (h.x1 - est.xi_hat) * s;
  Mat g(2 * n, 2 * n);
  g << policy.planned_covs[uk + 1].mat() - est.sigma_xi.mat(), fs, fs.transpose(), policy.planned_covs[uk].mat();
  RobustLmiParts parts;
  parts.g_hat = SymMat(g);
  parts.l = Mat::Zero(t, 2 * n);
  parts.l.rightCols(n) = -s;
  parts.r_blk = Mat::Zero(n, 2 * n);
  parts.r_blk.leftCols(n).setIdentity();
  parts.rho = rho;
  return parts;
}

double certify_robust(const std::vector<RobustLmiParts>& parts, int samples, std::uint64_t seed) {
  if (parts.empty()) return std::numeric_limits<double>::infinity();
  auto rng = make_rng(seed, 0x5eed);
  std::normal_distribution<double> n01;
  const Index n = parts.front().r_blk.rows(), t = parts.front().l.rows();
  double worst = std::numeric_limits<double>::infinity();
  for (int i = 0; i < samples; ++i) {
    Mat dxi(n, t);
    for (Index r = 0; r < n; ++r) {
      for (Index c = 0; c < t; ++c) dxi(r, c) = n01(rng);
    }
    const double norm = spectral_norm(dxi);
    for (const auto& p : parts) {
      worst = std::min(worst, min_eig(p.perturbed(dxi * (p.rho / norm))));
    }
  }
  return worst;
}

EvaluationReport evaluate_policy(const LtiSystem& sys, const Policy& policy, const SteeringSpec& spec) {
  sys.validate();
  if (policy.horizon() != spec.horizon || policy.n() != sys.n() || policy.m() != sys.m()) {
    throw DimensionError("evaluate_policy: policy does not match the system or steering spec");
  }
  EvaluationReport rep;
  propagate_moments(sys, policy, spec.init, rep.means, rep.covs);
  rep.terminal_mean_error = (rep.means.back() - spec.terminal.mean).norm();
  rep.terminal_cov_slack = min_eig(SymMat(spec.terminal.cov.mat() - rep.covs.back().mat()));
  for (int k = 0; k < spec.horizon; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    const Mat& kk = policy.gains[uk];
    const Vec u = kk * (rep.means[uk] - policy.planned_means[uk]) + policy.feedforward[uk];
    rep.cost_mean += rep.means[uk].dot(spec.q[uk].mat() * rep.means[uk]) + u.dot(spec.r[uk].mat() * u);
    rep.cost_cov += (spec.q[uk].mat() * rep.covs[uk].mat()).trace() +
                    (spec.r[uk].mat() * kk * rep.covs[uk].mat() * kk.transpose()).trace();
  }
  for (std::size_t k = 0; k < rep.covs.size(); ++k) {
    rep.planned_gap.push_back((policy.planned_covs[k].mat() - rep.covs[k].mat()).norm());
  }
  return rep;
}

}  // namespace covsteer
