// nioc: cost recovery from noisy expert trajectories.
//
//   nioc simulate --system linear --M 256 --out run
//   nioc estimate run/dataset.csv --out run
//   nioc solve run/moments.json --out run
//   nioc experiment --config sweep.ini
//   nioc oracle --system linear --out run

#include "nioc/pipeline.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

namespace {

std::pair<int, int> parse_degree_pair(const std::string& s) {
  const auto sep = s.find_first_of(":,-");
  if (sep == std::string::npos) throw CLI::ValidationError("--sweep-degrees", "expected d_psi:d_V, got '" + s + "'");
  try {
    return {std::stoi(s.substr(0, sep)), std::stoi(s.substr(sep + 1))};
  } catch (const std::exception&) {
    throw CLI::ValidationError("--sweep-degrees", "expected d_psi:d_V, got '" + s + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inverse optimal control from noisy trajectories"};
  app.set_config("--config", "", "Key/value config file; flags override its values");
  app.require_subcommand(1);
  app.fallthrough();

  nioc::ExperimentConfig cfg;
  std::string mode = "sos";
  std::string out = ".";
  std::vector<std::string> degree_pairs;

  app.add_option("--system", cfg.system, "System preset")->check(CLI::IsMember({"linear", "temperature"}));
  app.add_option("--seed", cfg.seed, "Base seed");
  app.add_option("--trials", cfg.trials, "Independent trials")->check(CLI::PositiveNumber);
  app.add_option("--M", cfg.M, "Trajectories per trial")->check(CLI::Range(2, 1 << 30));
  app.add_option("--N", cfg.N, "Trajectory length (0: system default)")->check(CLI::NonNegativeNumber);
  app.add_option("--dpsi,--d_psi", cfg.d_psi, "Degree of the joint basis (0: system default)");
  app.add_option("--dv,--d_V", cfg.d_V, "Degree of the value basis (0: system default)");
  app.add_option("--mode,--nonneg_mode", mode, "Nonnegativity constraint")->check(CLI::IsMember({"sos", "grid"}));
  app.add_flag("--oracle", cfg.oracle, "Attach oracle-moment diagnostics");
  app.add_option("--out,--output_dir", out, "Output directory");
  app.add_option("--alpha", cfg.alpha, "Discount factor");
  app.add_option("--obs-noise,--obs_noise_std", cfg.obs_noise_std, "Observation noise std");
  app.add_option("--lambda", cfg.lambda, "GMM weight ridge");
  app.add_option("--beta-ell,--beta_ell", cfg.beta_ell, "l1 bound on the cost coefficients");
  app.add_option("--beta-V,--beta_V", cfg.beta_V, "l1 bound on the value coefficients");
  app.add_option("--grid-points,--grid_points", cfg.grid_points, "Grid points per axis in grid mode");
  app.add_option("--oracle-M,--oracle_M", cfg.oracle_M, "Noise-free trajectories for oracle moments");
  app.add_option("--vi-points,--vi_state_points", cfg.vi_state_points, "Value-iteration grid points per state axis");
  app.add_option("--threads", cfg.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--theta", cfg.theta, "Cost coefficients (sampled when omitted)");
  app.add_option("--sweep-M,--sweep_M", cfg.sweep_M, "Sweep over M");
  app.add_option("--sweep-degrees,--sweep_degrees", degree_pairs, "Sweep over d_psi:d_V pairs");

  auto* simulate = app.add_subcommand("simulate", "Generate a noisy dataset");
  std::string dataset;
  auto* estimate = app.add_subcommand("estimate", "Deconvolved moments from a dataset");
  estimate->add_option("dataset", dataset, "Dataset CSV")->required()->check(CLI::ExistingFile);
  std::string moments;
  auto* solve = app.add_subcommand("solve", "Solve the IOC program for a moments file");
  solve->add_option("moments", moments, "Moments JSON")->required()->check(CLI::ExistingFile);
  auto* experiment = app.add_subcommand("experiment", "Repeated trials with aggregate errors");
  auto* oracle = app.add_subcommand("oracle", "Value-iteration ground-truth moments");

  CLI11_PARSE(app, argc, argv);

  try {
    cfg.mode = nioc::nonneg_mode_from_string(mode);
    cfg.output_dir = out;
    for (const auto& s : degree_pairs) cfg.sweep_degrees.push_back(parse_degree_pair(s));

    std::filesystem::path written;
    if (*simulate)
      written = nioc::cmd_simulate(cfg);
    else if (*estimate)
      written = nioc::cmd_estimate(dataset, cfg);
    else if (*solve)
      written = nioc::cmd_solve(moments, cfg);
    else if (*experiment)
      written = nioc::cmd_experiment(cfg);
    else if (*oracle)
      written = nioc::cmd_oracle(cfg);
    std::printf("%s\n", written.string().c_str());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
