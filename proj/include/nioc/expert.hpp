#pragma once

#include "nioc/systems.hpp"

#include <functional>
#include <vector>

namespace nioc {

/// State-feedback policy x -> a.
using Policy = std::function<Vec(const Vec&)>;

/// Linear dynamics x' = A x + B a extracted from a polynomial drift of degree
/// at most one with no constant term; throws otherwise.
struct LinearDynamics {
  Mat A;
  Mat B;
};
LinearDynamics linear_dynamics(const SystemModel& model);

/// Cost x'Qx + 2 x'S a + a'R a extracted from a purely quadratic cost.
struct QuadraticCost {
  Mat Q;
  Mat R;
  Mat S;
};
QuadraticCost quadratic_cost(const SystemModel& model, const CostParams& cost);

struct LqrPolicy {
  Mat P;
  Mat K;
  double discount = 0.0;
  int iterations = 0;

  /// Unconstrained feedback -K x.
  Vec feedback(const Vec& x) const { return -K * x; }
};

/// Fixed-point iteration of the discounted Riccati map started from P = Q.
/// Throws std::invalid_argument for R not positive definite and
/// std::runtime_error when the iteration does not converge.
LqrPolicy solve_discounted_riccati(const SystemModel& model, const CostParams& cost,
                                   double tol = 1e-12, int max_iterations = 100000);

/// One application of the discounted Riccati map.
Mat riccati_map(const LinearDynamics& dyn, const QuadraticCost& cost, double discount,
                const Mat& P);

/// -K x clipped into the action box.
Policy lqr_expert(const SystemModel& model, const LqrPolicy& lqr);

struct MpcPolicy {
  int horizon = 64;
  double discount = 0.9;
  CostParams cost;
  /// Grid size per action coordinate for the constant-sequence seed.
  int seed_points = 9;
  int max_iterations = 300;
  /// Projected-gradient stopping tolerance.
  double tolerance = 1e-10;
};

/// First action of the certainty-equivalent horizon problem. The action
/// sequence is seeded with the best constant sequence on a coarse grid and
/// refined by projected L-BFGS with adjoint gradients.
Vec mpc_action(const MpcPolicy& policy, const SystemModel& model, const Vec& x);

/// Discounted cost of an action sequence along the noise-free, clipped rollout.
double mpc_sequence_cost(const MpcPolicy& policy, const SystemModel& model, const Vec& x,
                         const std::vector<Vec>& actions);

Policy mpc_expert(const SystemModel& model, MpcPolicy policy);

/// Tensor grids covering the state and action boxes.
struct ValueGrids {
  std::vector<std::vector<double>> state_axes;
  std::vector<std::vector<double>> action_axes;

  static ValueGrids uniform(const SystemModel& model, int state_points, int action_points);
};

std::vector<double> uniform_axis(double lo, double hi, int count);

struct ValueIterationOptions {
  double tol = 1e-8;
  int max_iterations = 20000;
  /// Gauss-Legendre nodes per noise axis.
  int noise_order = 5;
  /// Quadrature window half-width in noise standard deviations (capped by the
  /// truncation bound).
  double noise_window = 5.0;
  int threads = 1;
};

class GridValueFunction {
 public:
  GridValueFunction(std::vector<std::vector<double>> state_axes, std::vector<Vec> actions,
                    Vec values, double discount);

  const std::vector<std::vector<double>>& state_axes() const { return state_axes_; }
  const std::vector<Vec>& actions() const { return actions_; }
  const Vec& values() const { return values_; }
  double discount() const { return discount_; }
  std::size_t num_states() const { return static_cast<std::size_t>(values_.size()); }
  Vec state_node(std::size_t flat_index) const;

  /// Multilinear interpolation; the point is clipped into the grid first.
  double operator()(const Vec& x) const;

  double residual = 0.0;
  int iterations = 0;
  std::vector<double> residual_history;

 private:
  std::vector<std::vector<double>> state_axes_;
  std::vector<Vec> actions_;
  Vec values_;
  double discount_;
};

/// Iterates V <- T V on the grid until the sup-norm change drops below tol.
/// Throws std::runtime_error if the iteration cap is hit.
GridValueFunction value_iteration(const SystemModel& model, const CostParams& cost,
                                  const ValueGrids& grids,
                                  const ValueIterationOptions& options = {});

/// argmin over the action grid of l(x,a) + alpha E[V(x')]; ties go to the
/// smallest action index.
Vec greedy_policy(const GridValueFunction& V, const SystemModel& model, const CostParams& cost,
                  const Vec& x, const ValueIterationOptions& options = {});

/// psi(x,a) = l(x,a) + alpha E[V(x')] - V(x).
double bellman_slack(const GridValueFunction& V, const SystemModel& model,
                     const CostParams& cost, const Vec& x, const Vec& a,
                     const ValueIterationOptions& options = {});

Policy greedy_expert(const SystemModel& model, const CostParams& cost, GridValueFunction V,
                     ValueIterationOptions options = {});

}  // namespace nioc
