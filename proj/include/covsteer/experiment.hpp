#pragma once

// Experiment configuration and the pipeline stages behind the command line:
// collect -> estimate -> synthesize -> validate, plus the scenario presets
// of the double-integrator study.

#include "covsteer/error.hpp"
#include "covsteer/estimate.hpp"
#include "covsteer/policy.hpp"
#include "covsteer/sdp.hpp"
#include "covsteer/steer.hpp"
#include "covsteer/sysdata.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace covsteer {

/// Invalid configuration (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Collected data unusable for synthesis (exit code 3).
class DataQualityError : public Error {
 public:
  using Error::Error;
};

/// Exit-code taxonomy of the command line tool.
enum ExitCode : int {
  exit_ok = 0,
  exit_config = 2,
  exit_data_quality = 3,
  exit_estimation = 4,
  exit_synthesis = 5,
  exit_validation = 6,
};

enum class EstimatorKind { analytic, dc_joint };

const char* to_string(EstimatorKind e);
/// Throws ConfigError for anything other than "analytic" or "dc-joint".
EstimatorKind parse_estimator(const std::string& s);

struct ExperimentConfig {
  std::string preset;  // informational; "double-integrator" or a scenario name
  LtiSystem system;    // nominal model
  Index data_horizon = 15;
  double excitation = 3.0;                    // input standard deviation
  std::optional<GaussianMoments> collect_init;  // defaults to steering.init
  SteeringSpec steering;
  EstimatorKind estimator = EstimatorKind::analytic;
  std::optional<SymMat> known_sigma;  // analytic estimator; defaults to the nominal D D^T
  PolicyMode mode = PolicyMode::rdd;
  double delta = 0.001;
  int trials = 1000;
  std::uint64_t seed = 7;
  // Perturbations of the true system; empty means zero.
  Mat delta_a, delta_b, delta_d;
  std::string out_dir = "out";

  /// Nominal model plus perturbations.
  LtiSystem true_system() const;
  const GaussianMoments& data_init() const { return collect_init ? *collect_init : steering.init; }
  SymMat assumed_noise_cov() const { return known_sigma ? *known_sigma : system.noise_cov(); }
  /// Throws ConfigError on inconsistent or out-of-range fields.
  void validate() const;
  /// Warnings that do not stop a run (e.g. a horizon too short for
  /// persistency of excitation).
  std::vector<std::string> warnings() const;
};

/// "double-integrator", "fig1a", "fig1b", "fig3" or "coverage". Throws
/// ConfigError for unknown names.
ExperimentConfig preset_config(const std::string& name);

/// Config from JSON text. A "preset" field selects the starting point; every
/// other field present overrides it. Throws ConfigError.
ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);

/// 16 hex digits of a 64-bit FNV-1a hash of the canonical config JSON.
std::string config_hash(const ExperimentConfig& cfg);

struct CollectReport {
  Index rank_s = 0;
  Index required_rank = 0;
  bool input_pe = false;  // input persistently exciting of order n + 1
  bool assumption_ok = false;  // rank [U; X] = n + m
};

/// Simulates the true system under i.i.d. Gaussian excitation. Deterministic
/// in cfg.seed.
Dataset collect(const ExperimentConfig& cfg, CollectReport* report = nullptr);

struct EstimateOutcome {
  NoiseEstimate estimate;
  std::optional<CcpReport> ccp;  // dc-joint only
};

/// Throws DataQualityError on rank-deficient data and EstimationError when
/// the estimator fails.
EstimateOutcome estimate(const ExperimentConfig& cfg, const Dataset& data, sdp::SolverAdapter& solver);

/// Data-driven modes use the data and estimate; mb uses the nominal model
/// and ignores both. Throws SynthesisError.
Policy synthesize(const ExperimentConfig& cfg, const Dataset& data, const NoiseEstimate& est,
                  sdp::SolverAdapter& solver);

struct ValidationOutcome {
  EvaluationReport exact;  // on the true system
  RolloutStats monte_carlo;
  bool pass = false;       // min_eig(Sigma_f - Sigma_N) >= -1e-6
};

/// Exact propagation and cfg.trials Monte Carlo rollouts on the true system.
/// Throws DimensionError when the policy does not fit the system.
ValidationOutcome validate(const ExperimentConfig& cfg, const Policy& policy, int keep_trajectories = 20);

/// One row of stage bookkeeping, serialized into the run manifest.
struct RunManifest {
  std::string config_hash;
  std::string command;
  std::map<std::string, std::string> outputs;      // label -> file path
  std::map<std::string, double> timings;           // seconds per stage
  std::map<std::string, std::string> statuses;     // solver / stage statuses
  std::map<std::string, double> metrics;           // summary numbers

  /// JSON text; timings are omitted when include_timings is false so that
  /// manifests from identical inputs compare equal.
  std::string to_json(bool include_timings = true) const;
  static RunManifest from_json(const std::string& text);
};

struct ScenarioSummary {
  RunManifest manifest;
  int exit_code = exit_ok;
};

/// Runs one reproduction scenario ("fig1a", "fig1b", "fig3", "coverage")
/// end to end, writing CSV, SVG and JSON artifacts plus manifest.json into
/// cfg.out_dir. Messages go to `log`.
ScenarioSummary reproduce(const std::string& figure, const ExperimentConfig& cfg, sdp::SolverAdapter& solver,
                          std::ostream& log);

struct CoverageResult {
  int runs = 0;
  int covered = 0;
  double rho = 0.0;
  std::vector<double> errors;  // ||Xi_true - Xi_hat|| per seed
};

/// Empirical coverage of the bound over `runs` seeds starting at cfg.seed,
/// with the analytic estimate and the assumed noise covariance.
CoverageResult coverage_study(const ExperimentConfig& cfg, int runs);

}  // namespace covsteer
