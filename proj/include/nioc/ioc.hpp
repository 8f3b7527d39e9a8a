#pragma once

#include "nioc/conic.hpp"
#include "nioc/moments.hpp"
#include "nioc/polybasis.hpp"
#include "nioc/systems.hpp"

#include "json.hpp"

#include <string>
#include <utility>
#include <vector>

namespace nioc {

/// Node-evaluation approximations in the Lagrange basis phi:
///   features ~ H' phi,  r(P_x eta) = G1' phi,  E[r(x') | eta] ~ G2' phi.
struct ApproxMatrices {
  Mat H;   // D_psi x n_ell
  Mat G1;  // D_psi x D_V
  Mat G2;  // D_psi x D_V
  Vec d;   // integrals of phi over the joint box
  PolyBasis basis_psi;
  MultiIndexSet basis_r;

  /// G2 against the monomials of basis_psi (B' G2).
  Mat G2_mono() const;
};

ApproxMatrices build_approx_matrices(const SystemModel& model, const PolyBasis& basis_psi,
                                     int d_V);

/// Lagrange basis of degree d_psi on the joint space X x A.
PolyBasis joint_lagrange_basis(const SystemModel& model, int d_psi);

enum class NonnegMode { sos, grid };

std::string to_string(NonnegMode mode);
NonnegMode nonneg_mode_from_string(const std::string& s);

struct IocSettings {
  double beta_ell = 10.0;
  double beta_V = 100.0;
  NonnegMode mode = NonnegMode::sos;
  /// Points per axis of the tensor grid in grid mode.
  int grid_points = 11;
  ConicSettings solver;
};

struct IocProgram {
  Mat Xi;        // D_psi x (n_ell + D_V), [H, alpha G2 - G1]
  Vec d;
  Vec m_hat;     // in the phi basis
  std::size_t n_ell = 0;
  PolyBasis basis_psi;
  IocSettings settings;

  std::size_t num_theta() const { return static_cast<std::size_t>(Xi.cols()); }
};

/// `m_hat` holds monomial moments; it is mapped to the Lagrange basis with
/// the change-of-basis matrix (m_phi = B m_mono).
IocProgram assemble_program(const ApproxMatrices& A, const MomentVector& m_hat, double alpha,
                            const IocSettings& settings = {});

/// Layout of the conic encoding, kept for reading a solution back.
struct ConicLayout {
  std::size_t n_theta = 0;
  std::size_t slack_ell = 0;
  std::size_t slack_V = 0;
  std::size_t slack_d = 0;
  std::size_t first_nonneg_row = 3;
  std::size_t sdp_blocks = 0;
};

/// Coefficients of T_a(u) T_b(u) in the tensor Chebyshev basis.
std::vector<std::pair<MultiIndex, double>> chebyshev_product(const MultiIndex& a,
                                                             const MultiIndex& b);

/// Maps basis coefficients to tensor Chebyshev coefficients on the domain
/// scaled to [-1, 1]^n (rows follow the basis index set).
Mat chebyshev_coefficients(const PolyBasis& basis);

/// theta = p - n with p, n >= 0; l1 bounds, the normalization d' theta_psi >= 1
/// and nonnegativity of theta_psi' phi on the box (SOS certificate with
/// multipliers g_k = (hi_k - z_k)(z_k - lo_k), or sampled on a grid).
ConicProblem encode_nonnegativity(const IocProgram& program, ConicLayout* layout = nullptr);

/// Feasibility problem for a Putinar certificate of p >= 0 on the basis
/// domain, p given by its coefficients in `basis`. The LP part holds the
/// scalar multipliers (degree <= 2), the first block the Gram matrix of
/// sigma_0 and the remaining blocks those of sigma_k.
ConicProblem sos_certificate_problem(const PolyBasis& basis, const Vec& coefficients);

enum class IocStatus { optimal, infeasible, numerical_failure };
std::string to_string(IocStatus s);

struct IocSolution {
  IocStatus status = IocStatus::numerical_failure;
  Vec theta_psi;
  Vec theta_ell;
  Vec theta_ell_normalized;
  Vec theta_V;
  double objective = 0.0;
  bool ell_bound_active = false;
  bool V_bound_active = false;
  /// Constraint families carrying the infeasibility certificate.
  std::vector<std::string> infeasible_families;
  std::string solver_status;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double gap = 0.0;
};

IocSolution solve_ioc(const IocProgram& program);

/// theta_ell' <features, mu> + theta_V' (alpha m_xplus - <r, mu>) with
/// monomial moments `m_mono` over the psi index set.
double slackness_report(const SystemModel& model, const Vec& theta_ell, const Vec& theta_V,
                        const MomentVector& m_mono, const MultiIndexSet& r, const Vec& m_xplus);

struct Lemma42Report {
  double lhs = 0.0;  // |(theta*_psi - theta_hat_psi)' m_bar|
  double rhs = 0.0;  // 2 ||m_bar - m_hat||_inf ||Xi||_1 (beta_V + beta_ell)
  double floor = 0.0;
  bool holds = false;
};

/// Moments are in the phi basis; `star` is solved with m_bar, `hat` with m_hat.
Lemma42Report lemma42_check(const IocProgram& program, const IocSolution& star,
                            const IocSolution& hat, const Vec& m_bar, const Vec& m_hat);

/// Maximum absolute column sum.
double matrix_l1_norm(const Mat& A);

nlohmann::json to_json(const IocSolution& s);
nlohmann::json to_json(const Lemma42Report& r);

}  // namespace nioc
