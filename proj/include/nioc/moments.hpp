#pragma once

#include "nioc/polybasis.hpp"
#include "nioc/simulate.hpp"
#include "nioc/systems.hpp"

#include "json.hpp"

namespace nioc {

/// Moments in the monomial basis of `basis` (graded lex, zero index first).
struct MomentVector {
  MultiIndexSet basis;
  Vec values;

  MomentVector(MultiIndexSet basis_, Vec values_);
  /// values without the leading zero-order entry.
  Vec plus() const { return values.tail(values.size() - 1); }
};

nlohmann::json to_json(const MomentVector& m);
MomentVector moment_vector_from_json(const nlohmann::json& j);

/// Noise deconvolution matrix: entry (d, d') = C(d, d') E[v^(d - d')] for
/// d' <= d componentwise, zero otherwise. Lower triangular, unit diagonal.
struct DeconvMatrix {
  Mat matrix;
  MultiIndexSet index_set;
};

DeconvMatrix build_deconv_matrix(const MultiIndexSet& index_set, const NoiseModel& noise);

/// (1 - alpha) / (1 - alpha^N).
double discount_normalizer(double alpha, int N);

/// Per-trajectory discounted sample moments: rows of `obs` are m_i^obs over
/// y_0..y_{N-1}; rows of `obs_xplus` are m_i^{obs,x+} over the states of
/// y_1..y_N.
struct SampleMoments {
  Mat obs;
  Mat obs_xplus;
  double gamma = 1.0;
};

SampleMoments sample_moment_vectors(const ObservedDataset& ds, const MultiIndexSet& psi,
                                    const MultiIndexSet& r, int threads = 1);

/// First M trajectories only.
SampleMoments head(const SampleMoments& s, std::size_t M);

struct GmmProblem {
  Mat Phi;        // (D_psi - 1 + D_V - 1) x (D_psi - 1)
  Mat b;          // one row per trajectory
  Vec b_bias;     // the subtracted zero-order column
  double lambda = 1e-4;
  std::size_t block_static = 0;
  std::size_t block_dynamic = 0;
};

/// `G2_mono` maps psi-monomial moments to r moments: D_psi x D_V with
/// Q*r ~ G2_mono' phi_mono.
GmmProblem stack_gmm_problem(const SampleMoments& samples, const DeconvMatrix& phi_nu,
                             const DeconvMatrix& phi_nux, const Mat& G2_mono, double lambda);

/// Biased (1/M) sample covariance of the rows of `b`; M >= 2.
Mat estimate_covariance(const Mat& b);

/// (blkdiag(Sigma_11, Sigma_22) + lambda I)^{-1}.
Mat build_weight(const Mat& sigma, std::size_t block_static, std::size_t block_dynamic,
                 double lambda);

struct GmmDiagnostics {
  double sigma_min_Phi = 0.0;
  double sigma_max_W = 0.0;
  double sigma_min_W = 0.0;
  double misspec_residual_norm = 0.0;
  double condition_W = 0.0;
};

struct GmmSolution {
  Vec m_hat_plus;
  MomentVector m_hat;
  Mat W;
  double objective = 0.0;
  GmmDiagnostics diagnostics;
};

/// Closed-form weighted least squares through a whitened QR factorization.
/// Throws std::runtime_error when Phi is rank deficient.
GmmSolution solve_gmm(const GmmProblem& problem, const MultiIndexSet& psi);

/// argmin ||bbar - Phi m||_W^2 for a fixed positive definite W.
Vec weighted_least_squares(const Mat& Phi, const Mat& W, const Vec& bbar);

/// Moments of the expert's discounted occupation measure from noise-free
/// trajectories. `m_xplus` averages the exact conditional expectations
/// E[r(x') | x_t, a_t] instead of r(x_{t+1}).
struct OracleMoments {
  MomentVector m;
  Vec m_xplus;
  std::size_t trajectories = 0;
};

OracleMoments oracle_moments(const SystemModel& model, const Policy& policy, int N, int M,
                             std::uint64_t seed, const MultiIndexSet& psi,
                             const MultiIndexSet& r, int threads = 1);

/// Same estimator from trajectories already in memory.
OracleMoments oracle_moments_from(const SystemModel& model,
                                  const std::vector<Trajectory>& trajectories,
                                  const MultiIndexSet& psi, const MultiIndexSet& r);

/// sup over a tensor grid of |E[r_i(x') | eta] - (G2' phi(eta))_i|. G2 is
/// expressed against `basis`.
double dynamics_misspecification(const SystemModel& model, const PolyBasis& basis,
                                 const MultiIndexSet& r, const Mat& G2, int points_per_axis);

struct Lemma41Report {
  double lhs = 0.0;       // ||m_bar_plus - m_tilde_plus||_2
  double rhs = 0.0;       // C * sup misspecification
  double constant = 0.0;  // C
  double sup_misspec = 0.0;
  double floor = 0.0;     // floating-point allowance added to rhs
  bool holds = false;
  Vec m_tilde_plus;
};

/// Population estimator limit m_tilde for the oracle measure and weight W,
/// compared against the error bound constant built from W, Phi_nux and Phi.
Lemma41Report lemma41_diagnostic(const OracleMoments& oracle, const DeconvMatrix& phi_nu,
                                 const DeconvMatrix& phi_nux, const Mat& G2_mono, const Mat& W,
                                 double sup_misspec);

nlohmann::json to_json(const GmmDiagnostics& d);
nlohmann::json to_json(const Lemma41Report& r);

}  // namespace nioc
