#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace nioc {

/// Standard-form conic program
///
///   min <C, X>  s.t.  <A_i, X> = b_i,  X in R^l_+ x S^{n_1}_+ x ... x S^{n_k}_+
///
/// with dual  max b'y  s.t.  sum_i y_i A_i + Z = C,  Z in the same cone.
struct ConicProblem {
  std::size_t lp_dim = 0;
  std::vector<std::size_t> sdp_dims;
  Eigen::VectorXd c_lp;
  std::vector<Eigen::MatrixXd> c_sdp;
  Eigen::MatrixXd A_lp;                            // m x lp_dim
  std::vector<std::vector<Eigen::MatrixXd>> A_sdp;  // [block][row], symmetric
  Eigen::VectorXd b;

  ConicProblem(std::size_t lp, std::vector<std::size_t> sdp, std::size_t rows);
  std::size_t rows() const { return static_cast<std::size_t>(b.size()); }

  /// Adds `value` to the symmetric pair (r, c), (c, r) of block `k` in row
  /// `row`, so that <A, X> picks up value * (X_rc + X_cr) off the diagonal.
  void add_sdp_entry(std::size_t row, std::size_t k, std::size_t r, std::size_t c, double value);
};

struct ConicSettings {
  double tolerance = 1e-8;
  int max_iterations = 200;
  /// Fraction of the distance to the cone boundary taken per step.
  double step_fraction = 0.95;
  /// Per-iteration progress on stderr.
  bool verbose = false;
};

enum class ConicStatus { optimal, primal_infeasible, dual_infeasible, max_iterations, numerical_error };

std::string to_string(ConicStatus s);

struct ConicResult {
  ConicStatus status = ConicStatus::numerical_error;
  Eigen::VectorXd x_lp;
  std::vector<Eigen::MatrixXd> X;
  Eigen::VectorXd y;
  Eigen::VectorXd z_lp;
  std::vector<Eigen::MatrixXd> Z;
  double primal_objective = 0.0;
  double dual_objective = 0.0;
  double primal_residual = 0.0;  // relative
  double dual_residual = 0.0;    // relative
  double gap = 0.0;              // relative
  int iterations = 0;
  /// Normalized Farkas ray (b'y = 1, A'y <= 0) when primal infeasible.
  Eigen::VectorXd certificate;
};

/// Infeasible-start primal-dual interior-point method (HKM direction,
/// Mehrotra predictor-corrector).
ConicResult solve_conic(const ConicProblem& problem, const ConicSettings& settings = {});

}  // namespace nioc
