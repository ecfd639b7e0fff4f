// Command line front end: collect, estimate, synthesize, validate, reproduce.

#include "covsteer/experiment.hpp"
#include "covsteer/serialize.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>

using namespace covsteer;
namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> mode;
  std::optional<std::string> estimator;
  std::optional<double> delta;
  std::optional<int> trials;
  bool oracle = false;
  std::string dataset, estimate, policy, figure;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "experiment config JSON");
  app->add_option("--seed", f.seed, "random seed");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--mode", f.mode, "controller: dd, rdd or mb");
  app->add_option("--estimator", f.estimator, "noise estimator: analytic or dc-joint");
  app->add_option("--delta", f.delta, "confidence parameter in (0, 1)");
  app->add_option("--trials", f.trials, "Monte Carlo trials (coverage: number of datasets)");
}

ExperimentConfig load_config(const Flags& f, const std::string& default_preset) {
  ExperimentConfig c = f.config.empty() ? preset_config(default_preset) : config_from_json(read_file(f.config));
  if (f.seed) c.seed = *f.seed;
  if (f.out) c.out_dir = *f.out;
  if (f.mode) {
    try {
      c.mode = parse_policy_mode(*f.mode);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  if (f.estimator) c.estimator = parse_estimator(*f.estimator);
  if (f.delta) c.delta = *f.delta;
  if (f.trials) c.trials = *f.trials;
  c.validate();
  for (const auto& w : c.warnings()) std::cerr << "warning: " << w << "\n";
  return c;
}

fs::path in_out(const ExperimentConfig& c, const std::string& given, const std::string& name) {
  return given.empty() ? fs::path(c.out_dir) / name : fs::path(given);
}

void finish(RunManifest& m, const ExperimentConfig& c, const std::string& stage) {
  const fs::path path = fs::path(c.out_dir) / (stage + "_manifest.json");
  write_file(path, m.to_json());
}

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

RunManifest start(const ExperimentConfig& c, const std::string& command) {
  RunManifest m;
  m.config_hash = config_hash(c);
  m.command = command;
  return m;
}

int cmd_collect(const Flags& f) {
  const ExperimentConfig c = load_config(f, "double-integrator");
  RunManifest m = start(c, "collect");
  const auto t0 = std::chrono::steady_clock::now();
  CollectReport rep;
  const Dataset d = collect(c, &rep);
  m.timings["collect"] = since(t0);
  const fs::path path = fs::path(c.out_dir) / "dataset.json";
  write_file(path, to_json(d));
  m.outputs["dataset"] = path.string();
  m.metrics["data.rank_s"] = static_cast<double>(rep.rank_s);
  std::cout << "dataset: " << path.string() << "\n"
            << "rank [U; X] = " << rep.rank_s << " (need n + m = " << rep.required_rank << ")\n"
            << "input persistently exciting of order n + 1: " << (rep.input_pe ? "yes" : "no") << "\n";
  m.statuses["collect"] = rep.assumption_ok ? "ok" : "rank deficient";
  finish(m, c, "collect");
  if (!rep.assumption_ok) {
    std::cerr << "warning: Assumption 1 violated (rank [U; X] < n + m)\n";
    return exit_data_quality;
  }
  return exit_ok;
}

int cmd_estimate(const Flags& f) {
  const ExperimentConfig c = load_config(f, "double-integrator");
  RunManifest m = start(c, "estimate");
  const Dataset d = dataset_from_json(read_file(in_out(c, f.dataset, "dataset.json")));
  static sdp::InteriorPointSolver solver;
  const auto t0 = std::chrono::steady_clock::now();
  const EstimateOutcome out = estimate(c, d, solver);
  m.timings["estimate"] = since(t0);
  const fs::path path = fs::path(c.out_dir) / "estimate.json";
  write_file(path, to_json(out.estimate));
  m.outputs["estimate"] = path.string();
  m.metrics["estimate.rho"] = out.estimate.rho;
  std::cout << std::setprecision(6) << "estimate: " << path.string() << "\n"
            << "estimator " << to_string(c.estimator) << ", Sigma_xi " << to_string(out.estimate.sigma_source) << "\n"
            << "Sigma_xi = " << out.estimate.sigma_xi.mat().format(Eigen::IOFormat(6, 0, ", ", "; ", "", "", "[", "]"))
            << "\n"
            << "rho = " << out.estimate.rho << " (delta = " << out.estimate.delta << ")\n";
  if (out.ccp) {
    std::cout << "CCP iterations " << out.ccp->iterations << (out.ccp->converged ? " (converged)" : " (limit)") << "\n";
    for (std::size_t i = 0; i < out.ccp->objective_trace.size(); ++i) {
      std::cout << "  " << i << "  " << std::setprecision(12) << out.ccp->objective_trace[i] << "\n";
    }
    m.metrics["estimate.ccp_iterations"] = out.ccp->iterations;
    m.statuses["estimate"] = out.ccp->converged ? "converged" : "iteration limit";
  } else {
    m.statuses["estimate"] = "closed form";
  }
  if (f.oracle) {
    if (!d.true_noise) {
      std::cerr << "--oracle: dataset carries no true noise\n";
    } else {
      const double err = spectral_norm(columns(*d.true_noise) - out.estimate.xi_hat);
      m.metrics["estimate.error"] = err;
      std::cout << std::setprecision(6) << "||Xi_true - Xi_hat|| = " << err << " vs rho = " << out.estimate.rho
                << (err <= out.estimate.rho ? "  (covered)" : "  (not covered)") << "\n";
    }
  }
  finish(m, c, "estimate");
  return exit_ok;
}

int cmd_synthesize(const Flags& f) {
  const ExperimentConfig c = load_config(f, "double-integrator");
  RunManifest m = start(c, "synthesize");
  const Dataset d = dataset_from_json(read_file(in_out(c, f.dataset, "dataset.json")));
  NoiseEstimate est;
  if (c.mode != PolicyMode::mb) est = estimate_from_json(read_file(in_out(c, f.estimate, "estimate.json")));
  static sdp::InteriorPointSolver solver;
  const auto t0 = std::chrono::steady_clock::now();
  const std::string tag = to_string(c.mode);
  Policy p;
  try {
    p = synthesize(c, d, est, solver);
  } catch (const SynthesisError& e) {
    m.statuses["synthesize." + tag] = "infeasible";
    if (e.largest_feasible_rho() >= 0.0) {
      m.metrics[tag + ".largest_feasible_rho"] = e.largest_feasible_rho();
      std::cerr << "largest feasible rho: " << e.largest_feasible_rho() << "\n";
    }
    finish(m, c, "synthesize");
    throw;
  }
  m.timings["synthesize." + tag] = since(t0);
  const fs::path path = fs::path(c.out_dir) / ("policy_" + tag + ".json");
  write_file(path, to_json(p));
  m.outputs["policy"] = path.string();
  m.statuses["synthesize." + tag] = "optimal";
  m.metrics[tag + ".cost_cov"] = p.cost_cov;
  m.metrics[tag + ".cost_mean"] = p.cost_mean;
  double gap = 0.0;
  for (const auto& a : p.aux) gap = std::max(gap, a.input_cov_gap);
  m.metrics[tag + ".max_input_cov_gap"] = gap;
  std::cout << std::setprecision(6) << "policy: " << path.string() << "\n"
            << "mode " << tag << ", covariance cost " << p.cost_cov << ", mean cost " << p.cost_mean << ", rho "
            << p.rho << "\n"
            << "planned Sigma_N = " << p.planned_covs.back().mat().format(Eigen::IOFormat(6, 0, ", ", "; ", "", "", "[", "]"))
            << "\nmax relaxation gap " << gap << "\n";
  finish(m, c, "synthesize");
  return exit_ok;
}

int cmd_validate(const Flags& f) {
  const ExperimentConfig c = load_config(f, "double-integrator");
  RunManifest m = start(c, "validate");
  const std::string tag = to_string(c.mode);
  const Policy p = policy_from_json(read_file(in_out(c, f.policy, "policy_" + tag + ".json")));
  const auto t0 = std::chrono::steady_clock::now();
  const ValidationOutcome v = validate(c, p);
  m.timings["validate"] = since(t0);
  const fs::path dir(c.out_dir);
  const std::string prefix = "validate_" + std::string(to_string(p.mode));
  auto save = [&](const std::string& label, const std::string& name, const std::string& text) {
    write_file(dir / name, text);
    m.outputs[label] = (dir / name).string();
  };
  save("moments", prefix + "_moments.csv", moments_csv(v.exact.means, v.exact.covs));
  save("mc_moments", prefix + "_mc_moments.csv", moments_csv(v.monte_carlo.sample_means, v.monte_carlo.sample_covs));
  save("trajectories", prefix + "_trajectories.csv", trajectories_csv(v.monte_carlo.trajectories));
  save("target", prefix + "_target.csv",
       moments_csv({c.steering.terminal.mean}, {c.steering.terminal.cov}, c.steering.horizon));
  save("svg", prefix + ".svg",
       steering_svg({{to_string(p.mode), v.exact.means, v.exact.covs, v.monte_carlo.trajectories, c.steering.terminal}}));
  m.metrics["terminal_mean_error"] = v.exact.terminal_mean_error;
  m.metrics["terminal_cov_slack"] = v.exact.terminal_cov_slack;
  m.statuses["validate"] = v.pass ? "PASS" : "FAIL";
  std::cout << std::setprecision(6) << "terminal mean error " << v.exact.terminal_mean_error << "\n"
            << "min_eig(Sigma_f - Sigma_N) = " << v.exact.terminal_cov_slack << "\n"
            << (v.pass ? "PASS" : "FAIL") << "\n";
  finish(m, c, "validate");
  return exit_ok;
}

int cmd_reproduce(Flags f) {
  if (!f.out) f.out = "out/" + f.figure;
  const ExperimentConfig c = load_config(f, f.figure == "coverage" || f.figure.rfind("fig", 0) == 0 ? f.figure : "");
  static sdp::InteriorPointSolver solver;
  const ScenarioSummary s = reproduce(f.figure, c, solver, std::cout);
  std::cout << "manifest: " << (fs::path(c.out_dir) / "manifest.json").string() << "\n";
  return s.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data-driven covariance steering from noisy input/state data"};
  app.require_subcommand(1);
  Flags f;
  auto* collect_cmd = app.add_subcommand("collect", "simulate the true system and write a dataset");
  auto* estimate_cmd = app.add_subcommand("estimate", "estimate the noise realization and its bound");
  auto* synth_cmd = app.add_subcommand("synthesize", "synthesize a steering policy");
  auto* validate_cmd = app.add_subcommand("validate", "evaluate a policy on the true system");
  auto* repro_cmd = app.add_subcommand("reproduce", "run a full scenario: fig1a, fig1b, fig3 or coverage");
  for (auto* sub : {collect_cmd, estimate_cmd, synth_cmd, validate_cmd, repro_cmd}) add_common(sub, f);
  estimate_cmd->add_option("--dataset", f.dataset, "dataset JSON (default <out>/dataset.json)");
  estimate_cmd->add_flag("--oracle", f.oracle, "compare against the stored true noise");
  synth_cmd->add_option("--dataset", f.dataset, "dataset JSON (default <out>/dataset.json)");
  synth_cmd->add_option("--estimate", f.estimate, "estimate JSON (default <out>/estimate.json)");
  validate_cmd->add_option("--policy", f.policy, "policy JSON (default <out>/policy_<mode>.json)");
  repro_cmd->add_option("figure", f.figure, "fig1a, fig1b, fig3 or coverage")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_config;
  }

  try {
    if (collect_cmd->parsed()) return cmd_collect(f);
    if (estimate_cmd->parsed()) return cmd_estimate(f);
    if (synth_cmd->parsed()) return cmd_synthesize(f);
    if (validate_cmd->parsed()) return cmd_validate(f);
    return cmd_reproduce(f);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_config;
  } catch (const FormatError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return exit_config;
  } catch (const DataQualityError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return exit_data_quality;
  } catch (const PreconditionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return exit_data_quality;
  } catch (const EstimationError& e) {
    std::cerr << "estimation failed: " << e.what() << " (" << e.report().iterations << " CCP iterations: "
              << e.report().message << ")\n";
    return exit_estimation;
  } catch (const SynthesisError& e) {
    std::cerr << "synthesis failed: " << e.what() << "\n";
    return exit_synthesis;
  } catch (const DimensionError& e) {
    std::cerr << "dimension mismatch: " << e.what() << "\n";
    return exit_validation;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
