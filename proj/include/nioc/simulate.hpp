#pragma once

#include "nioc/expert.hpp"
#include "nioc/systems.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace nioc {

struct Trajectory {
  std::vector<Vec> states;   // N + 1
  std::vector<Vec> actions;  // N + 1; the last action is unused by the moments
  std::size_t clipped_steps = 0;

  std::size_t length() const { return states.size(); }
};

/// x0 ~ init (clipped to the state box), a_t = policy(x_t), x_{t+1} = step(...).
Trajectory rollout(const SystemModel& model, const Policy& policy, const TruncatedGaussian& init,
                   int N, Rng& rng);

/// Rows y_t = (x_t, a_t) + v_t. Observations are not clipped.
Mat corrupt(const Trajectory& traj, const NoiseModel& obs_noise, Rng& rng);

/// Stacked clean pairs (x_t, a_t), one row per time step.
Mat clean_pairs(const Trajectory& traj);

struct DatasetMeta {
  std::string system;
  double alpha = 0.9;
  int N = 0;
  int M = 0;
  std::uint64_t seed = 0;
  double obs_noise_std = 0.0;
  double proc_noise_std = 0.0;
  std::string policy;
  /// True cost parameters when known (written as "theta_ell").
  std::vector<double> theta_ell;
};

struct ObservedDataset {
  DatasetMeta meta;
  std::vector<Mat> observations;  // M matrices of shape (N + 1) x (n_x + n_a)

  std::size_t dimension() const {
    return observations.empty() ? 0 : static_cast<std::size_t>(observations.front().cols());
  }
  /// Throws std::invalid_argument when the meta data disagree with the tensor.
  void validate() const;
};

/// Seed of the stream for trajectory i.
inline std::uint64_t trajectory_seed(std::uint64_t seed, std::size_t i) { return seed + i; }

struct GeneratedData {
  ObservedDataset dataset;
  std::vector<Trajectory> trajectories;
};

/// M trajectories, trajectory i drawn from its own stream seeded with
/// seed + i, so the output does not depend on `threads`.
GeneratedData generate_dataset(const SystemModel& model, const Policy& policy,
                               const NoiseModel& obs_noise, int N, int M, std::uint64_t seed,
                               int threads = 1);

/// Sidecar path "<stem>.meta.json" next to a dataset CSV.
std::filesystem::path meta_path_for(const std::filesystem::path& csv);

void save_dataset(const ObservedDataset& ds, const std::filesystem::path& csv);
ObservedDataset load_dataset(const std::filesystem::path& csv);

/// Run `fn(i)` for i in [0, n) on up to `threads` workers.
void parallel_indices(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace nioc
