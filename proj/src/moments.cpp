#include "nioc/moments.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nioc {

MomentVector::MomentVector(MultiIndexSet basis_, Vec values_)
    : basis(std::move(basis_)), values(std::move(values_)) {
  if (static_cast<std::size_t>(values.size()) != basis.size())
    throw std::invalid_argument("MomentVector: value count does not match the basis");
}

nlohmann::json to_json(const MomentVector& m) {
  return {{"basis",
           {{"dim", m.basis.dimension()}, {"degree", m.basis.max_degree()}, {"order", "grlex-rightmost"}}},
          {"values", std::vector<double>(m.values.data(), m.values.data() + m.values.size())}};
}

MomentVector moment_vector_from_json(const nlohmann::json& j) {
  const auto& b = j.at("basis");
  if (b.at("order").get<std::string>() != "grlex-rightmost")
    throw std::invalid_argument("moment vector: unsupported basis order");
  MultiIndexSet set(b.at("dim").get<std::size_t>(), b.at("degree").get<int>());
  const auto v = j.at("values").get<std::vector<double>>();
  return MomentVector(std::move(set), Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
}

DeconvMatrix build_deconv_matrix(const MultiIndexSet& set, const NoiseModel& noise) {
  if (noise.dimension() != set.dimension())
    throw std::invalid_argument("build_deconv_matrix: noise dimension mismatch");
  if (noise.max_degree() < set.max_degree())
    throw std::invalid_argument("build_deconv_matrix: noise moments only to degree " +
                                std::to_string(noise.max_degree()) + ", need " +
                                std::to_string(set.max_degree()));
  const auto D = static_cast<Eigen::Index>(set.size());
  Mat phi = Mat::Zero(D, D);
  for (Eigen::Index i = 0; i < D; ++i) {
    const MultiIndex& d = set[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j <= i; ++j) {
      const MultiIndex& dp = set[static_cast<std::size_t>(j)];
      if (!d.dominates(dp)) continue;
      phi(i, j) = static_cast<double>(multi_binomial(d, dp)) * noise.moment(d - dp);
    }
    if (phi(i, i) != 1.0) throw std::logic_error("build_deconv_matrix: diagonal entry is not one");
  }
  return {phi, set};
}

double discount_normalizer(double alpha, int N) {
  if (N < 1) throw std::invalid_argument("discount_normalizer: N must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("discount_normalizer: alpha in (0,1)");
  return (1.0 - alpha) / (1.0 - std::pow(alpha, N));
}

SampleMoments sample_moment_vectors(const ObservedDataset& ds, const MultiIndexSet& psi,
                                    const MultiIndexSet& r, int threads) {
  ds.validate();
  if (psi.dimension() != ds.dimension())
    throw std::invalid_argument("sample_moment_vectors: psi basis dimension " +
                                std::to_string(psi.dimension()) + " != observation width " +
                                std::to_string(ds.dimension()));
  if (r.dimension() >= psi.dimension())
    throw std::invalid_argument("sample_moment_vectors: state basis must be lower-dimensional");
  const int N = ds.meta.N;
  const double alpha = ds.meta.alpha;
  SampleMoments out;
  out.gamma = discount_normalizer(alpha, N);
  const auto M = static_cast<Eigen::Index>(ds.observations.size());
  out.obs.resize(M, static_cast<Eigen::Index>(psi.size()));
  out.obs_xplus.resize(M, static_cast<Eigen::Index>(r.size()));
  const auto nx = static_cast<Eigen::Index>(r.dimension());
  parallel_indices(static_cast<std::size_t>(M), threads, [&](std::size_t i) {
    const Mat& y = ds.observations[i];
    Vec acc = Vec::Zero(static_cast<Eigen::Index>(psi.size()));
    Vec acc_x = Vec::Zero(static_cast<Eigen::Index>(r.size()));
    double w = out.gamma;
    for (int t = 0; t < N; ++t, w *= alpha) {
      const Vec row = y.row(t).transpose();
      acc += w * psi.eval_monomials(std::span<const double>(row.data(), row.size()));
      const Vec next = y.row(t + 1).head(nx).transpose();
      acc_x += w * r.eval_monomials(std::span<const double>(next.data(), next.size()));
    }
    // The discount weights sum to one.
    acc[0] = 1.0;
    acc_x[0] = 1.0;
    out.obs.row(static_cast<Eigen::Index>(i)) = acc.transpose();
    out.obs_xplus.row(static_cast<Eigen::Index>(i)) = acc_x.transpose();
  });
  return out;
}

SampleMoments head(const SampleMoments& s, std::size_t M) {
  if (M > static_cast<std::size_t>(s.obs.rows())) throw std::out_of_range("SampleMoments::head");
  const auto m = static_cast<Eigen::Index>(M);
  return {s.obs.topRows(m), s.obs_xplus.topRows(m), s.gamma};
}

GmmProblem stack_gmm_problem(const SampleMoments& samples, const DeconvMatrix& phi_nu,
                             const DeconvMatrix& phi_nux, const Mat& G2_mono, double lambda) {
  const Eigen::Index Dp = phi_nu.matrix.rows();
  const Eigen::Index Dv = phi_nux.matrix.rows();
  if (G2_mono.rows() != Dp || G2_mono.cols() != Dv)
    throw std::invalid_argument("stack_gmm_problem: G2 must be D_psi x D_V");
  if (samples.obs.cols() != Dp || samples.obs_xplus.cols() != Dv)
    throw std::invalid_argument("stack_gmm_problem: sample moment width mismatch");
  if (lambda < 0.0) throw std::invalid_argument("stack_gmm_problem: lambda must be >= 0");
  const Mat F = phi_nux.matrix * G2_mono.transpose();  // D_V x D_psi

  GmmProblem p;
  p.lambda = lambda;
  p.block_static = static_cast<std::size_t>(Dp - 1);
  p.block_dynamic = static_cast<std::size_t>(Dv - 1);
  const Eigen::Index rows = (Dp - 1) + (Dv - 1);
  p.Phi.resize(rows, Dp - 1);
  p.Phi.topRows(Dp - 1) = phi_nu.matrix.bottomRightCorner(Dp - 1, Dp - 1);
  p.Phi.bottomRows(Dv - 1) = F.bottomRightCorner(Dv - 1, Dp - 1);
  p.b_bias.resize(rows);
  p.b_bias.head(Dp - 1) = phi_nu.matrix.col(0).tail(Dp - 1);
  p.b_bias.tail(Dv - 1) = F.col(0).tail(Dv - 1);
  const Eigen::Index M = samples.obs.rows();
  p.b.resize(M, rows);
  p.b.leftCols(Dp - 1) = samples.obs.rightCols(Dp - 1);
  p.b.rightCols(Dv - 1) = samples.obs_xplus.rightCols(Dv - 1);
  p.b.rowwise() -= p.b_bias.transpose();
  return p;
}

Mat estimate_covariance(const Mat& b) {
  if (b.rows() < 2) throw std::invalid_argument("estimate_covariance: need at least two samples");
  const Vec mean = b.colwise().mean().transpose();
  const Mat centered = b.rowwise() - mean.transpose();
  Mat sigma = centered.transpose() * centered / static_cast<double>(b.rows());
  return 0.5 * (sigma + sigma.transpose());
}

namespace {

Mat block_regularized(const Mat& sigma, std::size_t b1, std::size_t b2, double lambda) {
  const auto n1 = static_cast<Eigen::Index>(b1), n2 = static_cast<Eigen::Index>(b2);
  if (sigma.rows() != n1 + n2 || sigma.cols() != n1 + n2)
    throw std::invalid_argument("build_weight: covariance size does not match the blocks");
  Mat S = Mat::Zero(n1 + n2, n1 + n2);
  S.topLeftCorner(n1, n1) = sigma.topLeftCorner(n1, n1);
  S.bottomRightCorner(n2, n2) = sigma.bottomRightCorner(n2, n2);
  S.diagonal().array() += lambda;
  return S;
}

}  // namespace

Mat build_weight(const Mat& sigma, std::size_t b1, std::size_t b2, double lambda) {
  const Mat S = block_regularized(sigma, b1, b2, lambda);
  Eigen::LLT<Mat> llt(S);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("build_weight: regularized covariance is not positive definite");
  Mat W = llt.solve(Mat::Identity(S.rows(), S.cols()));
  return 0.5 * (W + W.transpose());
}

namespace {

void check_rank(const Eigen::JacobiSVD<Mat>& svd) {
  const Vec& s = svd.singularValues();
  const double smin = s.size() ? s[s.size() - 1] : 0.0;
  if (!(smin > 1e-12))
    throw std::runtime_error("GMM matrix Phi is rank deficient: smallest singular value " +
                             std::to_string(smin));
}

}  // namespace

GmmSolution solve_gmm(const GmmProblem& p, const MultiIndexSet& psi) {
  if (static_cast<std::size_t>(p.Phi.cols()) + 1 != psi.size())
    throw std::invalid_argument("solve_gmm: basis size mismatch");
  const Eigen::JacobiSVD<Mat> svd(p.Phi);
  check_rank(svd);

  const Mat sigma = estimate_covariance(p.b);
  const Mat S = block_regularized(sigma, p.block_static, p.block_dynamic, p.lambda);
  Eigen::LLT<Mat> llt(S);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("solve_gmm: regularized covariance is not positive definite");
  const Vec bbar = p.b.colwise().mean().transpose();
  // ||f||_W^2 = ||L^{-1} f||^2 with S = L L'.
  const Mat A = llt.matrixL().solve(p.Phi);
  const Vec c = llt.matrixL().solve(bbar);
  const Vec m_plus = A.colPivHouseholderQr().solve(c);

  Vec m(static_cast<Eigen::Index>(psi.size()));
  m << 1.0, m_plus;
  GmmSolution sol{m_plus, MomentVector(psi, m), Mat(), 0.0, {}};
  sol.W = llt.solve(Mat::Identity(S.rows(), S.cols()));
  sol.W = 0.5 * (sol.W + sol.W.transpose());
  sol.objective = (c - A * m_plus).squaredNorm();

  const Eigen::SelfAdjointEigenSolver<Mat> es(S, Eigen::EigenvaluesOnly);
  const Vec& ev = es.eigenvalues();
  sol.diagnostics.sigma_min_Phi = svd.singularValues()[svd.singularValues().size() - 1];
  sol.diagnostics.sigma_max_W = 1.0 / ev[0];
  sol.diagnostics.sigma_min_W = 1.0 / ev[ev.size() - 1];
  sol.diagnostics.condition_W = ev[ev.size() - 1] / ev[0];
  const Vec resid = bbar - p.Phi * m_plus;
  sol.diagnostics.misspec_residual_norm =
      resid.tail(static_cast<Eigen::Index>(p.block_dynamic)).norm();
  return sol;
}

Vec weighted_least_squares(const Mat& Phi, const Mat& W, const Vec& bbar) {
  Eigen::LLT<Mat> llt(W);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("weighted_least_squares: W must be positive definite");
  const Mat U = llt.matrixU();  // W = U'U
  return (U * Phi).colPivHouseholderQr().solve(U * bbar);
}

OracleMoments oracle_moments_from(const SystemModel& model,
                                  const std::vector<Trajectory>& trajectories,
                                  const MultiIndexSet& psi, const MultiIndexSet& r) {
  if (trajectories.empty()) throw std::invalid_argument("oracle_moments: no trajectories");
  if (psi.dimension() != model.n_eta() || r.dimension() != model.n_x)
    throw std::invalid_argument("oracle_moments: basis dimension mismatch");
  Vec m = Vec::Zero(static_cast<Eigen::Index>(psi.size()));
  Vec mx = Vec::Zero(static_cast<Eigen::Index>(r.size()));
  for (const auto& traj : trajectories) {
    const int N = static_cast<int>(traj.length()) - 1;
    const double gamma = discount_normalizer(model.discount, N);
    double w = gamma;
    for (int t = 0; t < N; ++t, w *= model.discount) {
      const auto& x = traj.states[static_cast<std::size_t>(t)];
      const auto& a = traj.actions[static_cast<std::size_t>(t)];
      Vec eta(x.size() + a.size());
      eta << x, a;
      m += w * psi.eval_monomials(std::span<const double>(eta.data(), eta.size()));
      mx += w * conditional_poly_expectations(model, r, x, a);
    }
  }
  const double M = static_cast<double>(trajectories.size());
  m /= M;
  mx /= M;
  m[0] = 1.0;
  mx[0] = 1.0;
  return {MomentVector(psi, m), mx, trajectories.size()};
}

OracleMoments oracle_moments(const SystemModel& model, const Policy& policy, int N, int M,
                             std::uint64_t seed, const MultiIndexSet& psi, const MultiIndexSet& r,
                             int threads) {
  if (M < 1) throw std::invalid_argument("oracle_moments: M must be >= 1");
  std::vector<Trajectory> trajs(static_cast<std::size_t>(M));
  parallel_indices(trajs.size(), threads, [&](std::size_t i) {
    Rng rng(trajectory_seed(seed, i));
    trajs[i] = rollout(model, policy, model.initial_state, N, rng);
  });
  return oracle_moments_from(model, trajs, psi, r);
}

double dynamics_misspecification(const SystemModel& model, const PolyBasis& basis,
                                 const MultiIndexSet& r, const Mat& G2, int points_per_axis) {
  if (points_per_axis < 2) throw std::invalid_argument("dynamics_misspecification: need >= 2 points");
  if (basis.dimension() != model.n_eta() || static_cast<std::size_t>(G2.rows()) != basis.size() ||
      static_cast<std::size_t>(G2.cols()) != r.size())
    throw std::invalid_argument("dynamics_misspecification: shape mismatch");
  const Box box = model.joint_space();
  const std::size_t n = model.n_eta();
  std::vector<int> idx(n, 0);
  double sup = 0.0;
  Vec eta(static_cast<Eigen::Index>(n));
  while (true) {
    for (std::size_t d = 0; d < n; ++d) {
      const auto k = static_cast<Eigen::Index>(d);
      eta[k] = box.lo[k] + (box.hi[k] - box.lo[k]) * idx[d] / (points_per_axis - 1);
    }
    const Vec x = eta.head(static_cast<Eigen::Index>(model.n_x));
    const Vec a = eta.tail(static_cast<Eigen::Index>(model.n_a));
    const Vec exact = conditional_poly_expectations(model, r, x, a);
    const Vec approx = G2.transpose() * eval_basis(basis, eta);
    sup = std::max(sup, (exact - approx).cwiseAbs().maxCoeff());
    std::size_t d = n;
    while (d-- > 0) {
      if (++idx[d] < points_per_axis) break;
      idx[d] = 0;
    }
    if (d == static_cast<std::size_t>(-1)) break;
  }
  return sup;
}

Lemma41Report lemma41_diagnostic(const OracleMoments& oracle, const DeconvMatrix& phi_nu,
                                 const DeconvMatrix& phi_nux, const Mat& G2_mono, const Mat& W,
                                 double sup_misspec) {
  const Eigen::Index Dp = phi_nu.matrix.rows();
  const Eigen::Index Dv = phi_nux.matrix.rows();
  const Mat F = phi_nux.matrix * G2_mono.transpose();
  Mat Phi(Dp - 1 + Dv - 1, Dp - 1);
  Phi.topRows(Dp - 1) = phi_nu.matrix.bottomRightCorner(Dp - 1, Dp - 1);
  Phi.bottomRows(Dv - 1) = F.bottomRightCorner(Dv - 1, Dp - 1);
  // Population mean of b under the oracle measure.
  Vec bbar(Phi.rows());
  bbar.head(Dp - 1) = (phi_nu.matrix * oracle.m.values).tail(Dp - 1) - phi_nu.matrix.col(0).tail(Dp - 1);
  bbar.tail(Dv - 1) = (phi_nux.matrix * oracle.m_xplus).tail(Dv - 1) - F.col(0).tail(Dv - 1);

  Lemma41Report rep;
  rep.m_tilde_plus = weighted_least_squares(Phi, W, bbar);
  const Vec m_plus = oracle.m.plus();
  rep.lhs = (m_plus - rep.m_tilde_plus).norm();

  const Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (W + W.transpose()), Eigen::EigenvaluesOnly);
  const double wmin = es.eigenvalues()[0];
  const double wmax = es.eigenvalues()[es.eigenvalues().size() - 1];
  const Eigen::JacobiSVD<Mat> svd_x(phi_nux.matrix);
  const Eigen::JacobiSVD<Mat> svd_phi(Phi);
  check_rank(svd_phi);
  const double smin_phi = svd_phi.singularValues()[svd_phi.singularValues().size() - 1];
  rep.constant = 2.0 * std::sqrt(wmax * static_cast<double>(Dv)) * svd_x.singularValues()[0] /
                 (std::sqrt(wmin) * smin_phi);
  rep.sup_misspec = sup_misspec;
  rep.rhs = rep.constant * sup_misspec;
  // Round-off in the weighted solve when the misspecification vanishes.
  rep.floor = 1e-9 * std::max(1.0, m_plus.norm());
  rep.holds = rep.lhs <= rep.rhs + rep.floor;
  return rep;
}

nlohmann::json to_json(const GmmDiagnostics& d) {
  return {{"sigma_min_Phi", d.sigma_min_Phi},
          {"sigma_max_W", d.sigma_max_W},
          {"sigma_min_W", d.sigma_min_W},
          {"condition_W", d.condition_W},
          {"misspec_residual_norm", d.misspec_residual_norm}};
}

nlohmann::json to_json(const Lemma41Report& r) {
  return {{"lhs", r.lhs},
          {"rhs", r.rhs},
          {"constant", r.constant},
          {"sup_misspecification", r.sup_misspec},
          {"floor", r.floor},
          {"holds", r.holds}};
}

}  // namespace nioc
