#include "covsteer/experiment.hpp"

#include "covsteer/serialize.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace covsteer {

using jsonio::json;

const char* to_string(EstimatorKind e) { return e == EstimatorKind::analytic ? "analytic" : "dc-joint"; }

EstimatorKind parse_estimator(const std::string& s) {
  if (s == "analytic") return EstimatorKind::analytic;
  if (s == "dc-joint") return EstimatorKind::dc_joint;
  throw ConfigError("unknown estimator '" + s + "' (expected analytic or dc-joint)");
}

LtiSystem ExperimentConfig::true_system() const {
  LtiSystem s = system;
  if (delta_a.size() > 0) s.a += delta_a;
  if (delta_b.size() > 0) s.b += delta_b;
  if (delta_d.size() > 0) s.d += delta_d;
  return s;
}

void ExperimentConfig::validate() const {
  try {
    system.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("system: ") + e.what());
  }
  const Index n = system.n(), m = system.m();
  auto shape = [](const Mat& d, Index r, Index c, const char* what) {
    if (d.size() > 0 && (d.rows() != r || d.cols() != c)) throw ConfigError(std::string(what) + " has the wrong shape");
  };
  shape(delta_a, n, n, "perturbation dA");
  shape(delta_b, n, m, "perturbation dB");
  shape(delta_d, n, system.d.cols(), "perturbation dD");
  try {
    steering.validate(n, m);
  } catch (const Error& e) {
    throw ConfigError(std::string("steering: ") + e.what());
  }
  if (data_horizon < 1) throw ConfigError("data horizon T must be positive");
  if (!(excitation >= 0.0) || !std::isfinite(excitation)) throw ConfigError("excitation amplitude must be finite and >= 0");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  if (trials < 1) throw ConfigError("trials must be at least 1");
  if (known_sigma && (known_sigma->dim() != n || !is_psd(*known_sigma))) {
    throw ConfigError("known_sigma must be an n x n PSD matrix");
  }
  if (collect_init && (collect_init->mean.size() != n || collect_init->cov.dim() != n || !is_psd(collect_init->cov))) {
    throw ConfigError("collect_init must be n-dimensional with a PSD covariance");
  }
}

std::vector<std::string> ExperimentConfig::warnings() const {
  std::vector<std::string> out;
  const Index n = system.n(), m = system.m();
  const Index pe_len = (m + 1) * (n + 1) - 1;
  if (data_horizon < pe_len) {
    std::ostringstream os;
    os << "data horizon T = " << data_horizon << " is below (m+1)(n+1)-1 = " << pe_len
       << "; persistency of excitation cannot hold";
    out.push_back(os.str());
  }
  if (excitation == 0.0) out.emplace_back("excitation amplitude is zero; the input carries no information");
  return out;
}

ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  c.preset = name;
  c.system.a = (Mat(2, 2) << 1, 1, 0, 1).finished();
  c.system.b = (Mat(2, 1) << 0, 1).finished();
  c.system.d = 0.1 * Mat::Identity(2, 2);
  const GaussianMoments init{(Vec(2) << 30, 1).finished(), SymMat((Mat(2, 2) << 1, 0, 0, 0.5).finished())};
  const GaussianMoments terminal{(Vec(2) << -10, 0).finished(), SymMat::scaled_identity(2, 0.5)};
  c.steering = SteeringSpec::uniform(10, SymMat::zero(2), SymMat::identity(1), init, terminal);
  c.data_horizon = 15;
  c.delta = 0.001;
  if (name == "double-integrator" || name == "fig1a") return c;
  if (name == "fig1b") {
    const double tau = 0.05;
    c.delta_a = (Mat(2, 2) << 0, tau, 0, 0).finished();
    c.delta_b = (Mat(2, 1) << 0, tau).finished();
    return c;
  }
  if (name == "fig3") {
    c.delta_d = 0.2 * Mat::Identity(2, 2);
    c.estimator = EstimatorKind::dc_joint;
    return c;
  }
  if (name == "coverage") {
    c.delta = 0.1;
    c.trials = 1000;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

namespace {

json moments_json(const GaussianMoments& g) {
  return {{"mean", jsonio::from_vec(g.mean)}, {"cov", jsonio::from_mat(g.cov)}};
}

GaussianMoments moments_from(const json& j, const std::string& what) {
  return {jsonio::to_vec(jsonio::field(j, "mean"), what + ".mean"), jsonio::to_sym(jsonio::field(j, "cov"), what + ".cov")};
}

json weights_json(const std::vector<SymMat>& w) {
  bool uniform = true;
  for (const auto& x : w) uniform = uniform && x == w.front();
  if (uniform && !w.empty()) return jsonio::from_mat(w.front());
  json out = json::array();
  for (const auto& x : w) out.push_back(jsonio::from_mat(x));
  return out;
}

// A single matrix is repeated over the horizon; a list must have N entries.
std::vector<SymMat> weights_from(const json& j, int horizon, const std::string& what) {
  if (!j.is_array() || j.empty()) throw FormatError(what + ": expected a matrix or a list of matrices");
  const bool list = j[0].is_array() && !j[0].empty() && j[0][0].is_array();
  std::vector<SymMat> out;
  if (!list) return std::vector<SymMat>(static_cast<std::size_t>(horizon), jsonio::to_sym(j, what));
  for (const auto& e : j) out.push_back(jsonio::to_sym(e, what));
  if (static_cast<int>(out.size()) != horizon) throw FormatError(what + ": need one matrix per step");
  return out;
}

// Number s means s times the leading-diagonal identity of the given shape.
Mat perturbation_from(const json& j, Index rows, Index cols, const std::string& what) {
  if (j.is_number()) return j.get<double>() * Mat::Identity(rows, cols);
  return jsonio::to_mat(j, what);
}

void resize_weights(std::vector<SymMat>& w, int horizon) {
  if (!w.empty()) w.resize(static_cast<std::size_t>(horizon), w.front());
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  try {
    const json j = jsonio::parse(text);
    if (!j.is_object()) throw FormatError("config must be a JSON object");
    static const char* known[] = {"preset", "system", "T", "excitation", "collect_init", "steering", "estimator",
                                  "known_sigma", "mode", "delta", "trials", "seed", "perturbation", "out"};
    for (const auto& [key, value] : j.items()) {
      if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
        throw ConfigError("unknown config field '" + key + "'");
      }
    }
    ExperimentConfig c = preset_config(j.value("preset", std::string("double-integrator")));
    if (j.contains("system")) {
      const json& s = j.at("system");
      if (s.contains("A")) c.system.a = jsonio::to_mat(s.at("A"), "system.A");
      if (s.contains("B")) c.system.b = jsonio::to_mat(s.at("B"), "system.B");
      if (s.contains("D")) c.system.d = jsonio::to_mat(s.at("D"), "system.D");
    }
    if (j.contains("T")) c.data_horizon = j.at("T").get<Index>();
    if (j.contains("excitation")) c.excitation = jsonio::number(j.at("excitation"), "excitation");
    if (j.contains("collect_init")) c.collect_init = moments_from(j.at("collect_init"), "collect_init");
    if (j.contains("steering")) {
      const json& s = j.at("steering");
      if (s.contains("N")) c.steering.horizon = s.at("N").get<int>();
      if (c.steering.horizon < 1) throw ConfigError("steering.N must be positive");
      resize_weights(c.steering.q, c.steering.horizon);
      resize_weights(c.steering.r, c.steering.horizon);
      if (s.contains("Q")) c.steering.q = weights_from(s.at("Q"), c.steering.horizon, "steering.Q");
      if (s.contains("R")) c.steering.r = weights_from(s.at("R"), c.steering.horizon, "steering.R");
      if (s.contains("init")) c.steering.init = moments_from(s.at("init"), "steering.init");
      if (s.contains("terminal")) c.steering.terminal = moments_from(s.at("terminal"), "steering.terminal");
    }
    if (j.contains("estimator")) c.estimator = parse_estimator(j.at("estimator").get<std::string>());
    if (j.contains("known_sigma")) c.known_sigma = jsonio::to_sym(j.at("known_sigma"), "known_sigma");
    if (j.contains("mode")) c.mode = parse_policy_mode(j.at("mode").get<std::string>());
    if (j.contains("delta")) c.delta = jsonio::number(j.at("delta"), "delta");
    if (j.contains("trials")) c.trials = j.at("trials").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("perturbation")) {
      const json& p = j.at("perturbation");
      const Index n = c.system.n(), m = c.system.m(), d = c.system.d.cols();
      if (p.contains("dA")) c.delta_a = perturbation_from(p.at("dA"), n, n, "perturbation.dA");
      if (p.contains("dB")) c.delta_b = perturbation_from(p.at("dB"), n, m, "perturbation.dB");
      if (p.contains("dD")) c.delta_d = perturbation_from(p.at("dD"), n, d, "perturbation.dD");
    }
    if (j.contains("out")) c.out_dir = j.at("out").get<std::string>();
    c.validate();
    return c;
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["preset"] = c.preset;
  j["system"] = {{"A", jsonio::from_mat(c.system.a)}, {"B", jsonio::from_mat(c.system.b)}, {"D", jsonio::from_mat(c.system.d)}};
  j["T"] = c.data_horizon;
  j["excitation"] = c.excitation;
  if (c.collect_init) j["collect_init"] = moments_json(*c.collect_init);
  j["steering"] = {{"N", c.steering.horizon},
                   {"Q", weights_json(c.steering.q)},
                   {"R", weights_json(c.steering.r)},
                   {"init", moments_json(c.steering.init)},
                   {"terminal", moments_json(c.steering.terminal)}};
  j["estimator"] = to_string(c.estimator);
  if (c.known_sigma) j["known_sigma"] = jsonio::from_mat(*c.known_sigma);
  j["mode"] = to_string(c.mode);
  j["delta"] = c.delta;
  j["trials"] = c.trials;
  j["seed"] = c.seed;
  json p = json::object();
  if (c.delta_a.size() > 0) p["dA"] = jsonio::from_mat(c.delta_a);
  if (c.delta_b.size() > 0) p["dB"] = jsonio::from_mat(c.delta_b);
  if (c.delta_d.size() > 0) p["dD"] = jsonio::from_mat(c.delta_d);
  j["perturbation"] = std::move(p);
  j["out"] = c.out_dir;
  return jsonio::dump(j);
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : config_to_json(cfg)) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

Dataset collect(const ExperimentConfig& cfg, CollectReport* report) {
  const LtiSystem truth = cfg.true_system();
  const auto inputs = excitation_input(truth.m(), cfg.data_horizon, cfg.excitation, cfg.seed);
  Dataset d = simulate(truth, cfg.data_init(), inputs, cfg.seed);
  if (report) {
    const HankelData h = build_hankel(d);
    report->rank_s = h.rank_s;
    report->required_rank = h.n() + h.m();
    report->assumption_ok = h.full_rank();
    report->input_pe = is_persistently_exciting(d.inputs, h.n() + 1);
  }
  return d;
}

EstimateOutcome estimate(const ExperimentConfig& cfg, const Dataset& data, sdp::SolverAdapter& solver) {
  data.validate();
  if (data.n() != cfg.system.n() || data.m() != cfg.system.m()) {
    throw DataQualityError("dataset dimensions do not match the configured system");
  }
  const HankelData h = build_hankel(data);
  EstimateOutcome out;
  if (cfg.estimator == EstimatorKind::analytic) {
    out.estimate = NoiseEstimate{mle_noise_analytic(h), cfg.assumed_noise_cov(), SigmaSource::known, 0.0, 0.0};
  } else {
    auto [est, rep] = mle_noise_dc(h, solver);
    out.estimate = std::move(est);
    out.ccp = std::move(rep);
  }
  attach_bound(out.estimate, h.horizon(), cfg.delta);
  return out;
}

Policy synthesize(const ExperimentConfig& cfg, const Dataset& data, const NoiseEstimate& est,
                  sdp::SolverAdapter& solver) {
  if (cfg.mode == PolicyMode::mb) return solve_mbcs(cfg.system, cfg.steering, solver);
  const HankelData h = build_hankel(data);
  if (!h.full_rank()) {
    std::ostringstream os;
    os << "rank [U; X] = " << h.rank_s << " < n + m = " << h.n() + h.m() << " (Assumption 1 violated)";
    throw DataQualityError(os.str());
  }
  return cfg.mode == PolicyMode::dd ? solve_ddcs(h, est, cfg.steering, solver) : solve_rddcs(h, est, cfg.steering, solver);
}

ValidationOutcome validate(const ExperimentConfig& cfg, const Policy& policy, int keep_trajectories) {
  const LtiSystem truth = cfg.true_system();
  ValidationOutcome out;
  out.exact = evaluate_policy(truth, policy, cfg.steering);
  // Offset keeps Monte Carlo streams apart from the data-collection streams.
  out.monte_carlo = monte_carlo_closed_loop(truth, policy, cfg.steering.init, cfg.trials,
                                            cfg.seed + 0x9e3779b97f4a7c15ull, keep_trajectories);
  out.pass = out.exact.covariance_ok(1e-6);
  return out;
}

std::string RunManifest::to_json(bool include_timings) const {
  json j;
  j["config_hash"] = config_hash;
  j["command"] = command;
  j["outputs"] = outputs;
  if (include_timings) j["timings"] = timings;
  j["statuses"] = statuses;
  j["metrics"] = metrics;
  return jsonio::dump(j);
}

RunManifest RunManifest::from_json(const std::string& text) {
  const json j = jsonio::parse(text);
  RunManifest m;
  try {
    m.config_hash = jsonio::field(j, "config_hash").get<std::string>();
    m.command = jsonio::field(j, "command").get<std::string>();
    m.outputs = jsonio::field(j, "outputs").get<std::map<std::string, std::string>>();
    if (j.contains("timings")) m.timings = j.at("timings").get<std::map<std::string, double>>();
    m.statuses = jsonio::field(j, "statuses").get<std::map<std::string, std::string>>();
    m.metrics = jsonio::field(j, "metrics").get<std::map<std::string, double>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return m;
}

CoverageResult coverage_study(const ExperimentConfig& cfg, int runs) {
  CoverageResult r;
  r.runs = runs;
  r.rho = uq_bound_mle(cfg.assumed_noise_cov(), cfg.system.n(), cfg.data_horizon, cfg.delta);
  ExperimentConfig c = cfg;
  for (int i = 0; i < runs; ++i) {
    c.seed = cfg.seed + static_cast<std::uint64_t>(i);
    const Dataset d = collect(c);
    const HankelData h = build_hankel(d);
    const double err = spectral_norm(columns(*d.true_noise) - mle_noise_analytic(h));
    r.errors.push_back(err);
    r.covered += err <= r.rho;
  }
  return r;
}

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

ScenarioSummary run_coverage(const ExperimentConfig& cfg, RunManifest m, std::ostream& log) {
  const auto t0 = clock_type::now();
  const CoverageResult r = coverage_study(cfg, cfg.trials);
  m.timings["coverage"] = seconds_since(t0);
  std::ostringstream csv;
  csv << std::setprecision(17) << "seed,error,rho,covered\n";
  for (int i = 0; i < r.runs; ++i) {
    const double e = r.errors[static_cast<std::size_t>(i)];
    csv << cfg.seed + static_cast<std::uint64_t>(i) << "," << e << "," << r.rho << "," << (e <= r.rho) << "\n";
  }
  const auto path = std::filesystem::path(cfg.out_dir) / "coverage.csv";
  write_file(path, csv.str());
  m.outputs["coverage_csv"] = path.string();
  const double freq = static_cast<double>(r.covered) / r.runs;
  m.metrics["coverage.runs"] = r.runs;
  m.metrics["coverage.covered"] = r.covered;
  m.metrics["coverage.frequency"] = freq;
  m.metrics["coverage.rho"] = r.rho;
  const bool ok = freq >= 1.0 - cfg.delta;
  m.statuses["coverage"] = ok ? "PASS" : "FAIL";
  log << "coverage: " << r.covered << "/" << r.runs << " = " << fmt(freq) << " (rho = " << fmt(r.rho)
      << ", delta = " << cfg.delta << ") " << (ok ? "PASS" : "FAIL") << "\n";
  return {std::move(m), exit_ok};
}

}  // namespace

ScenarioSummary reproduce(const std::string& figure, const ExperimentConfig& cfg, sdp::SolverAdapter& solver,
                          std::ostream& log) {
  cfg.validate();
  RunManifest m;
  m.config_hash = config_hash(cfg);
  m.command = "reproduce " + figure;
  const std::filesystem::path out(cfg.out_dir);
  auto save = [&](const std::string& label, const std::string& name, const std::string& text) {
    write_file(out / name, text);
    m.outputs[label] = (out / name).string();
  };
  save("config", "config.json", config_to_json(cfg));
  for (const auto& w : cfg.warnings()) log << "warning: " << w << "\n";

  ScenarioSummary summary;
  if (figure == "coverage") {
    summary = run_coverage(cfg, std::move(m), log);
  } else if (figure == "fig1a" || figure == "fig1b" || figure == "fig3") {
    auto t0 = clock_type::now();
    CollectReport cr;
    const Dataset data = collect(cfg, &cr);
    m.timings["collect"] = seconds_since(t0);
    save("dataset", "dataset.json", to_json(data));
    m.metrics["data.rank_s"] = static_cast<double>(cr.rank_s);
    log << "collect: rank [U; X] = " << cr.rank_s << " (need " << cr.required_rank << ")\n";
    if (!cr.assumption_ok) {
      log << "warning: Assumption 1 violated\n";
      m.statuses["collect"] = "rank deficient";
      summary.exit_code = exit_data_quality;
    } else {
      m.statuses["collect"] = "ok";
    }

    t0 = clock_type::now();
    const EstimateOutcome est = estimate(cfg, data, solver);
    m.timings["estimate"] = seconds_since(t0);
    save("estimate", "estimate.json", to_json(est.estimate));
    m.metrics["estimate.rho"] = est.estimate.rho;
    m.metrics["estimate.sigma_norm"] = spectral_norm(est.estimate.sigma_xi);
    if (est.ccp) {
      m.metrics["estimate.ccp_iterations"] = est.ccp->iterations;
      m.statuses["estimate"] = est.ccp->converged ? "converged" : "iteration limit";
    } else {
      m.statuses["estimate"] = "closed form";
    }
    if (data.true_noise) {
      m.metrics["estimate.error"] = spectral_norm(columns(*data.true_noise) - est.estimate.xi_hat);
    }
    log << "estimate: " << to_string(cfg.estimator) << ", ||Sigma_xi|| = " << fmt(spectral_norm(est.estimate.sigma_xi))
        << ", rho = " << fmt(est.estimate.rho) << "\n";

    std::vector<SvgPanel> panels;
    const PolicyMode dd_mode = cfg.mode == PolicyMode::mb ? PolicyMode::rdd : cfg.mode;
    for (PolicyMode mode : {PolicyMode::mb, dd_mode}) {
      const std::string tag = to_string(mode);
      ExperimentConfig c = cfg;
      c.mode = mode;
      t0 = clock_type::now();
      Policy policy;
      try {
        policy = synthesize(c, data, est.estimate, solver);
      } catch (const SynthesisError& e) {
        m.timings["synthesize." + tag] = seconds_since(t0);
        m.statuses["synthesize." + tag] = "infeasible";
        if (e.largest_feasible_rho() >= 0.0) m.metrics[tag + ".largest_feasible_rho"] = e.largest_feasible_rho();
        log << tag << ": synthesis failed: " << e.what() << "\n";
        summary.exit_code = exit_synthesis;
        continue;
      } catch (const DataQualityError& e) {
        m.statuses["synthesize." + tag] = "rank deficient";
        log << tag << ": " << e.what() << "\n";
        continue;
      }
      m.timings["synthesize." + tag] = seconds_since(t0);
      m.statuses["synthesize." + tag] = "optimal";
      save("policy." + tag, "policy_" + tag + ".json", to_json(policy));

      t0 = clock_type::now();
      const ValidationOutcome v = validate(cfg, policy);
      m.timings["validate." + tag] = seconds_since(t0);
      const std::string prefix = figure + "_" + tag;
      save(tag + ".moments", prefix + "_moments.csv", moments_csv(v.exact.means, v.exact.covs));
      save(tag + ".planned", prefix + "_planned.csv", moments_csv(policy.planned_means, policy.planned_covs));
      save(tag + ".mc_moments", prefix + "_mc_moments.csv",
           moments_csv(v.monte_carlo.sample_means, v.monte_carlo.sample_covs));
      save(tag + ".trajectories", prefix + "_trajectories.csv", trajectories_csv(v.monte_carlo.trajectories));
      m.metrics[tag + ".terminal_mean_error"] = v.exact.terminal_mean_error;
      m.metrics[tag + ".terminal_cov_slack"] = v.exact.terminal_cov_slack;
      m.metrics[tag + ".cost_mean"] = v.exact.cost_mean;
      m.metrics[tag + ".cost_cov"] = v.exact.cost_cov;
      m.statuses["validate." + tag] = v.pass ? "PASS" : "FAIL";
      log << tag << ": terminal covariance slack " << fmt(v.exact.terminal_cov_slack) << ", terminal mean error "
          << fmt(v.exact.terminal_mean_error) << "  " << (v.pass ? "PASS" : "FAIL") << "\n";
      panels.push_back({figure + " " + tag, v.exact.means, v.exact.covs, v.monte_carlo.trajectories, cfg.steering.terminal});
    }
    save("target", figure + "_target.csv",
         moments_csv({cfg.steering.terminal.mean}, {cfg.steering.terminal.cov}, cfg.steering.horizon));
    save("svg", figure + ".svg", steering_svg(panels));
    summary.manifest = std::move(m);
  } else {
    throw ConfigError("unknown figure '" + figure + "' (expected fig1a, fig1b, fig3 or coverage)");
  }
  write_file(out / "manifest.json", summary.manifest.to_json());
  summary.manifest.outputs["manifest"] = (out / "manifest.json").string();
  return summary;
}

}  // namespace covsteer
