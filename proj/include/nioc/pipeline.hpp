#pragma once

#include "nioc/expert.hpp"
#include "nioc/ioc.hpp"
#include "nioc/moments.hpp"
#include "nioc/simulate.hpp"
#include "nioc/systems.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nioc {

struct ExperimentConfig {
  std::string system = "linear";
  int trials = 20;
  int M = 256;
  int N = 0;  // 0: system default (linear 10, temperature 4)
  double alpha = 0.9;
  double obs_noise_std = 0.05;
  int d_psi = 0;  // 0: system default (linear 2, temperature 6)
  int d_V = 0;    // 0: system default (2)
  double lambda = 1e-4;
  std::uint64_t seed = 1;
  NonnegMode mode = NonnegMode::sos;
  int grid_points = 11;
  double beta_ell = 10.0;
  double beta_V = 100.0;
  std::filesystem::path output_dir = ".";
  int threads = 1;
  /// Cost parameters for single-run commands; drawn from the seed when empty.
  std::vector<double> theta;
  std::vector<int> sweep_M;
  std::vector<std::pair<int, int>> sweep_degrees;
  bool oracle = false;
  /// Noise-free trajectories behind oracle moments.
  int oracle_M = 4096;
  /// Value-iteration grid for the oracle command.
  int vi_state_points = 41;
  int vi_action_points = 41;
  double vi_tol = 1e-8;

  /// Fills system-dependent defaults and validates.
  ExperimentConfig resolved() const;
};

/// Model preset with the configured discount.
SystemModel make_configured_system(const ExperimentConfig& cfg);

/// Independent stream seed for trial `trial`.
std::uint64_t trial_seed(std::uint64_t seed, std::size_t trial);

/// Uniform [0,1] coefficients, returned with unit 2-norm.
Vec sample_cost(const SystemModel& model, Rng& rng);

/// Discounted LQR for the linear preset, MPC (horizon 64) otherwise.
Policy make_expert(const SystemModel& model, const Vec& theta, std::string* name = nullptr);

struct Estimate {
  PolyBasis basis;
  ApproxMatrices approx;
  DeconvMatrix phi_nu;
  DeconvMatrix phi_nux;
  GmmSolution gmm;
};

/// Deconvolution plus GMM on the first `samples.obs.rows()` trajectories.
Estimate estimate_moments(const SystemModel& model, const SampleMoments& samples, int d_psi,
                          int d_V, double obs_noise_std, double lambda);

Estimate estimate_moments(const SystemModel& model, const ObservedDataset& ds, int d_psi, int d_V,
                          double obs_noise_std, double lambda, int threads = 1);

struct TrialResult {
  int trial = 0;
  int M = 0;
  int d_psi = 0;
  int d_V = 0;
  Vec true_theta;  // unit norm
  Vec est_theta;   // unit norm
  double error_2norm = 0.0;
  Vec error_per_coeff;  // est - true
  double objective = 0.0;
  IocStatus status = IocStatus::numerical_failure;
  std::string message;
  double seconds = 0.0;
  std::optional<Lemma41Report> lemma41;
  std::optional<Lemma42Report> lemma42;

  bool ok() const { return status == IocStatus::optimal; }
};

struct SweepPoint {
  int M = 0;
  int d_psi = 0;
  int d_V = 0;
};

/// Runs every sweep point of one trial on a shared dataset (generated once
/// with the largest M; smaller M use its prefix).
std::vector<TrialResult> run_trial(const ExperimentConfig& cfg, int trial,
                                   const std::vector<SweepPoint>& points);

struct PointSummary {
  SweepPoint point;
  int n_ok = 0;
  int n_failed = 0;
  double mean_error = 0.0;
  double std_error = 0.0;
  Vec mean_signed;
  Vec std_signed;
};

PointSummary summarize(const SweepPoint& point, const std::vector<TrialResult>& results);

/// Equal-width bins spanning the 1st to 99th percentile.
nlohmann::json histogram(std::vector<double> values, int bins = 20);

struct ExperimentResult {
  std::vector<SweepPoint> points;
  std::vector<std::vector<TrialResult>> results;  // [point][trial]
  std::vector<PointSummary> summaries;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Subcommands. Each writes its outputs below cfg.output_dir and returns the
// main output path.
std::filesystem::path cmd_simulate(const ExperimentConfig& cfg);
std::filesystem::path cmd_estimate(const std::filesystem::path& dataset, const ExperimentConfig& cfg);
std::filesystem::path cmd_solve(const std::filesystem::path& moments, const ExperimentConfig& cfg);
std::filesystem::path cmd_experiment(const ExperimentConfig& cfg);
std::filesystem::path cmd_oracle(const ExperimentConfig& cfg);

nlohmann::json to_json(const ExperimentConfig& cfg);
nlohmann::json to_json(const TrialResult& r);

}  // namespace nioc
