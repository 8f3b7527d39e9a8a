#pragma once

#include "nioc/polybasis.hpp"

#include <random>
#include <string>
#include <utility>
#include <vector>

namespace nioc {

using Rng = std::mt19937_64;

/// Sparse polynomial in `num_vars` variables.
struct Polynomial {
  std::size_t num_vars = 0;
  std::vector<std::pair<MultiIndex, double>> terms;

  Polynomial() = default;
  explicit Polynomial(std::size_t vars) : num_vars(vars) {}

  Polynomial& add(std::vector<int> exponents, double coefficient);
  int degree() const;
  double operator()(std::span<const double> point) const;

  /// Coefficients against the monomials of `set` (which must contain every
  /// term of this polynomial).
  Vec coefficients(const MultiIndexSet& set) const;
};

/// Independent-component Gaussian truncated to [mean - bound, mean + bound]
/// on every axis.
struct TruncatedGaussian {
  Vec mean;
  Vec std;
  double bound = 0.0;

  TruncatedGaussian() = default;
  TruncatedGaussian(Vec mean_, Vec std_, double bound_);
  static TruncatedGaussian isotropic(std::size_t dimension, double std, double bound);
  std::size_t dimension() const { return static_cast<std::size_t>(mean.size()); }
};

Vec sample_truncated_gaussian(const TruncatedGaussian& dist, Rng& rng);

/// Raw moments E[z^k], k = 0..max_k, of a N(mean, std^2) variable truncated
/// symmetrically at mean +- bound (bound = +inf for the untruncated case).
std::vector<double> normal_moments_1d(double mean, double std, double bound, int max_k);

enum class NoiseKind { gaussian, truncated_gaussian };

/// Known observation (or process) noise distribution with exact moments up
/// to `max_degree`.
class NoiseModel {
 public:
  static NoiseModel gaussian(Vec mean, Vec std, int max_degree);
  static NoiseModel isotropic_gaussian(std::size_t dimension, double std, int max_degree);
  static NoiseModel truncated(const TruncatedGaussian& dist, int max_degree);

  NoiseKind kind() const { return kind_; }
  std::size_t dimension() const { return static_cast<std::size_t>(mean_.size()); }
  int max_degree() const { return max_degree_; }
  const Vec& mean() const { return mean_; }
  const Vec& std() const { return std_; }
  double bound() const { return bound_; }

  /// E[v^d]; throws when |d| exceeds max_degree.
  double moment(const MultiIndex& d) const;
  /// E[v_axis^k].
  double moment_1d(std::size_t axis, int k) const;

  /// Marginal over the first `count` components.
  NoiseModel marginal(std::size_t count) const;
  Vec sample(Rng& rng) const;

 private:
  NoiseModel(NoiseKind kind, Vec mean, Vec std, double bound, int max_degree);

  NoiseKind kind_;
  Vec mean_;
  Vec std_;
  double bound_;
  int max_degree_;
  std::vector<std::vector<double>> table_;  // per axis, k = 0..max_degree
};

double noise_moment(const NoiseModel& model, const MultiIndex& d);

/// Box with strictly ordered bounds.
struct BoxSpace : Box {
  BoxSpace() = default;
  explicit BoxSpace(Box box);
  BoxSpace(Vec lo_, Vec hi_) : BoxSpace(Box(std::move(lo_), std::move(hi_))) {}
  Vec clip(const Vec& point, bool* clipped = nullptr) const;
};

struct CostParams {
  Vec theta_ell;

  CostParams() = default;
  explicit CostParams(Vec theta);
  Vec normalized() const;
};

/// Polynomial-drift MDP with additive truncated-Gaussian process noise and a
/// linear-in-parameters polynomial cost.
struct SystemModel {
  std::string name;
  std::size_t n_x = 0;
  std::size_t n_a = 0;
  BoxSpace state_space;
  BoxSpace action_space;
  std::vector<Polynomial> drift;          // n_x polynomials over (x, a)
  TruncatedGaussian process_noise;
  std::vector<Polynomial> cost_features;  // n_ell polynomials over (x, a)
  double discount = 0.9;
  TruncatedGaussian initial_state;
  /// Cap on |r| * deg(drift) for conditional expectations.
  int expansion_degree_cap = 64;

  std::size_t n_ell() const { return cost_features.size(); }
  std::size_t n_eta() const { return n_x + n_a; }
  Box joint_space() const { return Box::product(state_space, action_space); }
  int drift_degree() const;

  Vec drift_at(const Vec& x, const Vec& a) const;
  Vec features_at(const Vec& x, const Vec& a) const;
  double cost_at(const CostParams& cost, const Vec& x, const Vec& a) const;

  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;

  /// Per-axis process-noise moments E[w_j^k], k <= max_k.
  std::vector<std::vector<double>> process_moments(int max_k) const;
};

/// drift(x, a) + process noise, clipped into the state box. `clipped` reports
/// whether clipping was applied.
Vec step(const SystemModel& model, const Vec& x, const Vec& a, Rng& rng,
         bool* clipped = nullptr);

/// Exact E[(drift(x,a) + w)^r] for a state multi-index r (no clipping).
double conditional_poly_expectation(const SystemModel& model, const MultiIndex& r_index,
                                    const Vec& x, const Vec& a);

/// Same for every index of `set` (dimension n_x).
Vec conditional_poly_expectations(const SystemModel& model, const MultiIndexSet& set,
                                  const Vec& x, const Vec& a);

struct TemperatureConstants {
  double heat_capacity = 500.0;
  double emissivity = 0.9;
  double stefan_boltzmann = 5.67e-8;
  double area = 0.1;
  double convection = 10.0;
  double ambient = 293.0;
  double dt = 1.0;
  double temp_offset = 300.0;
  double temp_scale = 100.0;
  double power_scale = 1000.0;
};

/// Coefficients (a_0..a_4, b) of the normalized temperature drift
/// x' = sum_i a_i x^i + b u.
std::pair<std::vector<double>, double> temperature_coefficients(
    const TemperatureConstants& c = {});

/// One physical-space step T' = T + dt/C (P - hA(T - T_env) - eps sigma A (T^4 - T_env^4)).
double temperature_physical_step(double temperature, double power,
                                 const TemperatureConstants& c = {});

SystemModel make_linear_system();
SystemModel make_temperature_system();
/// Preset by name ("linear" or "temperature").
SystemModel make_system(const std::string& name);

}  // namespace nioc
