#include "doctest.h"
#include "oracles.hpp"

#include "nioc/ioc.hpp"
#include "nioc/moments.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace nioc;

namespace {

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

Policy lqr_policy(const SystemModel& m) {
  return lqr_expert(m, solve_discounted_riccati(m, CostParams(vec({0.5, 0.5, 0.7}))));
}

// E[(p + v)^d] for independent gaussian v, by tensor Gauss-Hermite quadrature.
double noisy_point_moment(const Vec& p, const Vec& sigma, const MultiIndex& d) {
  const oracle::Rule gh = oracle::gauss_hermite(12);
  double out = 1.0;
  for (std::size_t k = 0; k < d.dimension(); ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < gh.nodes.size(); ++i)
      s += gh.weights[i] * std::pow(p[static_cast<Eigen::Index>(k)] + sigma[static_cast<Eigen::Index>(k)] * gh.nodes[i], d[k]);
    out *= s;
  }
  return out;
}

// Pure deconvolution problem: N = 1 and no dynamics block.
GmmProblem static_problem(const Mat& obs, const DeconvMatrix& phi, std::size_t n_x, double lambda) {
  SampleMoments s;
  s.obs = obs;
  s.obs_xplus = Mat::Ones(obs.rows(), 1);
  const MultiIndexSet r0(n_x, 0);
  const DeconvMatrix phi_x = build_deconv_matrix(r0, NoiseModel::isotropic_gaussian(n_x, 0.0, 0));
  Mat G2 = Mat::Zero(obs.cols(), 1);
  G2(0, 0) = 1.0;
  return stack_gmm_problem(s, phi, phi_x, G2, lambda);
}

}  // namespace

TEST_CASE("deconvolution matrix entries") {
  const MultiIndexSet s(1, 2);
  const DeconvMatrix D = build_deconv_matrix(s, NoiseModel::isotropic_gaussian(1, 0.05, 2));
  Mat expect(3, 3);
  expect << 1, 0, 0, 0, 1, 0, 0.0025, 0, 1;
  CHECK((D.matrix - expect).cwiseAbs().maxCoeff() <= 1e-15);

  // entry (d, d') = C(d, d') E[v^(d - d')], checked by quadrature on a 2-D set
  const Vec sig = vec({0.1, 0.3});
  const MultiIndexSet t(2, 4);
  const DeconvMatrix E = build_deconv_matrix(t, NoiseModel::gaussian(Vec::Zero(2), sig, 4));
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = 0; j < t.size(); ++j) {
      double want = 0.0;
      if (t[i].dominates(t[j]))
        want = static_cast<double>(multi_binomial(t[i], t[j])) * noisy_point_moment(Vec::Zero(2), sig, t[i] - t[j]);
      CHECK(std::abs(E.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - want) <= 1e-14);
    }
}

TEST_CASE("deconvolution matrices are unit lower triangular") {
  std::vector<NoiseModel> models;
  for (std::size_t n = 1; n <= 3; ++n) {
    models.push_back(NoiseModel::isotropic_gaussian(n, 0.05, 8));
    models.push_back(NoiseModel::isotropic_gaussian(n, 0.7, 8));
    models.push_back(NoiseModel::truncated(TruncatedGaussian::isotropic(n, 0.2, 0.3), 8));
    models.push_back(NoiseModel::gaussian(Vec::LinSpaced(static_cast<Eigen::Index>(n), -0.2, 0.3),
                                          Vec::LinSpaced(static_cast<Eigen::Index>(n), 0.01, 0.5), 8));
  }
  for (const NoiseModel& m : models)
    for (int d = 0; d <= 8; ++d) {
      const DeconvMatrix D = build_deconv_matrix(MultiIndexSet(m.dimension(), d), m);
      CHECK(D.matrix.diagonal().isOnes(0.0));
      CHECK(D.matrix.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().isZero(0.0));
      CHECK(D.matrix.determinant() == doctest::Approx(1.0));
    }
  for (std::size_t n = 1; n <= 3; ++n)
    for (int d = 0; d <= 8; ++d) {
      const DeconvMatrix Z = build_deconv_matrix(MultiIndexSet(n, d), NoiseModel::isotropic_gaussian(n, 0.0, 8));
      CHECK(Z.matrix.isIdentity(0.0));
    }
}

TEST_CASE("inverting the deconvolution of a point mass recovers its monomials") {
  const Vec sig = vec({0.05, 0.2});
  const MultiIndexSet s(2, 6);
  const DeconvMatrix D = build_deconv_matrix(s, NoiseModel::gaussian(Vec::Zero(2), sig, 6));
  for (const Vec& p : {vec({0.3, -0.7}), vec({1.0, 1.0}), vec({-0.05, 0.4})}) {
    Vec noisy(static_cast<Eigen::Index>(s.size()));
    for (std::size_t i = 0; i < s.size(); ++i) noisy[static_cast<Eigen::Index>(i)] = noisy_point_moment(p, sig, s[i]);
    const Vec clean = D.matrix.triangularView<Eigen::Lower>().solve(noisy);
    const Vec mono = s.eval_monomials(std::span<const double>(p.data(), 2));
    CHECK((clean - mono).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("population identity E[m_obs] = Phi m_bar on a discrete distribution") {
  // eta uniform on four atoms, v gaussian; degree 6 in two dimensions
  const std::vector<Vec> atoms = {vec({0.2, -0.5}), vec({-0.8, 0.1}), vec({0.6, 0.6}), vec({0.0, -0.9})};
  const Vec sig = vec({0.05, 0.1});
  const MultiIndexSet s(2, 6);
  const NoiseModel noise = NoiseModel::gaussian(Vec::Zero(2), sig, 6);
  const DeconvMatrix D = build_deconv_matrix(s, noise);
  Vec m_bar = Vec::Zero(static_cast<Eigen::Index>(s.size()));
  for (const Vec& a : atoms) m_bar += s.eval_monomials(std::span<const double>(a.data(), 2)) / 4.0;

  Rng rng(2024);
  std::uniform_int_distribution<int> pick(0, 3);
  const int M = 100000;
  Vec sum = Vec::Zero(m_bar.size()), sq = Vec::Zero(m_bar.size());
  for (int i = 0; i < M; ++i) {
    const Vec y = atoms[static_cast<std::size_t>(pick(rng))] + noise.sample(rng);
    const Vec phi = s.eval_monomials(std::span<const double>(y.data(), 2));
    sum += phi;
    sq += phi.cwiseProduct(phi);
  }
  const Vec mean = sum / M;
  const Vec se = ((sq / M - mean.cwiseProduct(mean)) / M).cwiseSqrt();
  const Vec target = D.matrix * m_bar;
  int outside = 0;
  for (Eigen::Index i = 0; i < mean.size(); ++i)
    if (std::abs(mean[i] - target[i]) > 4.0 * se[i] + 1e-15) ++outside;
  CHECK(outside == 0);
}

TEST_CASE("discount normalizer and sample moments") {
  CHECK(discount_normalizer(0.9, 10) == doctest::Approx(0.1 / (1.0 - std::pow(0.9, 10))));
  double geo = 0.0;
  for (int t = 0; t < 10; ++t) geo += std::pow(0.9, t);
  CHECK(discount_normalizer(0.9, 10) == doctest::Approx(1.0 / geo).epsilon(1e-14));
  CHECK(discount_normalizer(0.9, 10) == doctest::Approx(0.1534).epsilon(1e-3));
  CHECK(discount_normalizer(0.5, 1) == 1.0);

  ObservedDataset ds;
  ds.meta.system = "linear";
  ds.meta.alpha = 0.9;
  ds.meta.N = 1;
  ds.meta.M = 2;
  Mat a(2, 3), b(2, 3);
  a << 0.1, 0.2, 0.3, 9.0, 9.0, 9.0;
  b << -0.4, 0.5, 0.0, 1.0, -1.0, 0.5;
  ds.observations = {a, b};
  const MultiIndexSet psi(3, 2), r(2, 2);
  const SampleMoments s1 = sample_moment_vectors(ds, psi, r);
  CHECK(s1.gamma == 1.0);
  const Vec y0 = a.row(0).transpose();
  CHECK((s1.obs.row(0).transpose() - psi.eval_monomials(std::span<const double>(y0.data(), 3))).norm() <= 1e-15);
  const Vec x1 = b.row(1).head(2).transpose();
  CHECK((s1.obs_xplus.row(1).transpose() - r.eval_monomials(std::span<const double>(x1.data(), 2))).norm() <= 1e-15);

  // constant observations give the monomials of that point
  ds.meta.N = 10;
  ds.meta.M = 1;
  Mat c(11, 3);
  c.rowwise() = vec({0.3, -0.6, 0.9}).transpose();
  ds.observations = {c};
  const SampleMoments s2 = sample_moment_vectors(ds, psi, r);
  const Vec p = c.row(0).transpose();
  CHECK((s2.obs.row(0).transpose() - psi.eval_monomials(std::span<const double>(p.data(), 3))).cwiseAbs().maxCoeff() <= 1e-14);

  // direct discounted sum
  Mat d = Mat::Random(11, 3);
  ds.observations = {d};
  const SampleMoments s3 = sample_moment_vectors(ds, psi, r);
  Vec direct = Vec::Zero(static_cast<Eigen::Index>(psi.size()));
  for (int t = 0; t < 10; ++t) {
    const Vec y = d.row(t).transpose();
    direct += std::pow(0.9, t) * psi.eval_monomials(std::span<const double>(y.data(), 3));
  }
  direct *= discount_normalizer(0.9, 10);
  CHECK((s3.obs.row(0).transpose() - direct).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK(head(s3, 1).obs.rows() == 1);
}

TEST_CASE("stacking shapes") {
  const SystemModel lin = make_linear_system();
  const NoiseModel obs = NoiseModel::isotropic_gaussian(3, 0.05, 4);
  const GeneratedData g = generate_dataset(lin, lqr_policy(lin), obs, 10, 20, 3);
  const MultiIndexSet psi(3, 4), r(2, 2);
  const PolyBasis basis = joint_lagrange_basis(lin, 4);
  const ApproxMatrices A = build_approx_matrices(lin, basis, 2);
  const SampleMoments s = sample_moment_vectors(g.dataset, psi, r);
  const GmmProblem p = stack_gmm_problem(s, build_deconv_matrix(psi, obs), build_deconv_matrix(r, obs.marginal(2)),
                                         A.G2_mono(), 1e-4);
  CHECK(p.Phi.rows() == static_cast<Eigen::Index>(psi.size() - 1 + r.size() - 1));
  CHECK(p.Phi.cols() == static_cast<Eigen::Index>(psi.size() - 1));
  CHECK(p.b.rows() == 20);
  CHECK(p.block_static == psi.size() - 1);
  CHECK(p.block_dynamic == r.size() - 1);

  const GmmProblem q = static_problem(s.obs, build_deconv_matrix(psi, obs), 2, 1e-4);
  CHECK(q.block_dynamic == 0);
  CHECK(q.Phi.rows() == static_cast<Eigen::Index>(psi.size() - 1));
}

TEST_CASE("covariance estimate") {
  Mat same(5, 3);
  same.rowwise() = vec({1.0, 2.0, 3.0}).transpose();
  CHECK(estimate_covariance(same).isZero(0.0));

  Mat two(2, 3);
  two << 1, 0, 0, -1, 0, 0;
  Mat e1 = Mat::Zero(3, 3);
  e1(0, 0) = 1.0;
  CHECK((estimate_covariance(two) - e1).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK_THROWS(estimate_covariance(Mat::Zero(1, 3)));

  // Gaussian samples: error shrinks like 1/sqrt(M)
  Mat L(3, 3);
  L << 1.0, 0.0, 0.0, 0.5, 0.8, 0.0, -0.3, 0.2, 0.4;
  const Mat truth = L * L.transpose();
  Rng rng(6);
  std::normal_distribution<double> n01;
  std::vector<double> logM, logErr;
  for (int M : {1000, 10000, 100000}) {
    double err = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      Mat b(M, 3);
      for (int i = 0; i < M; ++i) {
        const Vec z = vec({n01(rng), n01(rng), n01(rng)});
        b.row(i) = (L * z).transpose();
      }
      err += (estimate_covariance(b) - truth).norm() / 20.0;
    }
    logM.push_back(std::log(M));
    logErr.push_back(std::log(err));
  }
  CHECK(oracle::slope(logM, logErr) == doctest::Approx(-0.5).epsilon(0.2));
}

TEST_CASE("weight matrix") {
  const double lambda = 1e-4;
  const Mat W = build_weight(Mat::Identity(5, 5), 3, 2, lambda);
  CHECK((W - Mat::Identity(5, 5) / (1.0 + lambda)).cwiseAbs().maxCoeff() <= 1e-12);
  const Mat W0 = build_weight(Mat::Zero(5, 5), 3, 2, lambda);
  CHECK((W0 - Mat::Identity(5, 5) / lambda).cwiseAbs().maxCoeff() <= 1e-6);

  // off-diagonal blocks are dropped and the spectrum is bounded by 1/lambda
  Rng rng(1);
  std::normal_distribution<double> n01;
  for (int t = 0; t < 10; ++t) {
    Mat B(6, 6);
    for (auto& x : B.reshaped()) x = n01(rng);
    const Mat S = B * B.transpose();
    const Mat Wt = build_weight(S, 4, 2, 0.1);
    Mat blk = Mat::Zero(6, 6);
    blk.topLeftCorner(4, 4) = S.topLeftCorner(4, 4);
    blk.bottomRightCorner(2, 2) = S.bottomRightCorner(2, 2);
    blk += 0.1 * Mat::Identity(6, 6);
    CHECK((Wt * blk - Mat::Identity(6, 6)).cwiseAbs().maxCoeff() <= 1e-10);
    Eigen::SelfAdjointEigenSolver<Mat> es(Wt);
    CHECK(es.eigenvalues().maxCoeff() <= 1.0 / 0.1 + 1e-9);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("weighted least squares and GMM solve") {
  Rng rng(12);
  std::normal_distribution<double> n01;
  SUBCASE("identity design returns the mean") {
    const Vec bbar = vec({0.3, -1.2, 4.0});
    CHECK((weighted_least_squares(Mat::Identity(3, 3), Mat::Identity(3, 3), bbar) - bbar).norm() <= 1e-14);
    GmmProblem p;
    p.Phi = Mat::Identity(3, 3);
    p.b = Mat(40, 3);
    for (auto& x : p.b.reshaped()) x = n01(rng);
    p.b_bias = Vec::Zero(3);
    p.lambda = 1e-4;
    p.block_static = 3;
    p.block_dynamic = 0;
    const GmmSolution s = solve_gmm(p, MultiIndexSet(1, 3));
    CHECK((s.m_hat_plus - p.b.colwise().mean().transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(s.m_hat.values[0] == 1.0);
  }
  SUBCASE("normal equations and optimality") {
    Mat Phi(6, 3), W0(6, 6);
    for (auto& x : Phi.reshaped()) x = n01(rng);
    for (auto& x : W0.reshaped()) x = n01(rng);
    const Mat W = W0 * W0.transpose() + Mat::Identity(6, 6);
    const Vec bbar = vec({1, 2, 3, 4, 5, 6});
    const Vec m = weighted_least_squares(Phi, W, bbar);
    const Vec direct = (Phi.transpose() * W * Phi).ldlt().solve(Phi.transpose() * W * bbar);
    CHECK((m - direct).cwiseAbs().maxCoeff() <= 1e-10);
    auto obj = [&](const Vec& v) { return (bbar - Phi * v).dot(W * (bbar - Phi * v)); };
    for (int t = 0; t < 20; ++t) {
      Vec d(3);
      for (auto& x : d) x = 0.1 * n01(rng);
      CHECK(obj(m) <= obj(m + d));
    }
  }
  SUBCASE("rank deficiency is reported") {
    GmmProblem p;
    p.Phi = Mat::Zero(3, 2);
    p.Phi(0, 0) = 1.0;
    p.b = Mat::Ones(5, 3);
    p.b_bias = Vec::Zero(3);
    p.block_static = 3;
    CHECK_THROWS_AS(solve_gmm(p, MultiIndexSet(1, 2)), std::runtime_error);
  }
}

TEST_CASE("noiseless data with exact dynamics recovers the empirical moments") {
  SystemModel lin = make_linear_system();
  lin.process_noise = TruncatedGaussian::isotropic(2, 0.0, 0.1);
  const NoiseModel none = NoiseModel::isotropic_gaussian(3, 0.0, 2);
  const GeneratedData g = generate_dataset(lin, lqr_policy(lin), none, 10, 50, 17);
  std::size_t clipped = 0;
  for (const auto& t : g.trajectories) clipped += t.clipped_steps;
  REQUIRE(clipped == 0);
  const MultiIndexSet psi(3, 2), r(2, 2);
  const ApproxMatrices A = build_approx_matrices(lin, joint_lagrange_basis(lin, 2), 2);
  const SampleMoments s = sample_moment_vectors(g.dataset, psi, r);
  const GmmProblem p =
      stack_gmm_problem(s, build_deconv_matrix(psi, none), build_deconv_matrix(r, none.marginal(2)), A.G2_mono(), 1e-4);
  const GmmSolution sol = solve_gmm(p, psi);
  const Vec empirical = s.obs.colwise().mean().transpose();
  CHECK((sol.m_hat.values - empirical).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK(sol.objective <= 1e-16);

  // permuting the trajectories leaves the estimate unchanged
  GmmProblem q = p;
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(p.b.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937 rng(5);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t i = 0; i < perm.size(); ++i) q.b.row(static_cast<Eigen::Index>(i)) = p.b.row(perm[i]);
  CHECK((solve_gmm(q, psi).m_hat.values - sol.m_hat.values).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("GMM estimate is permutation invariant on noisy data") {
  const SystemModel lin = make_linear_system();
  const NoiseModel obs = NoiseModel::isotropic_gaussian(3, 0.05, 2);
  const GeneratedData g = generate_dataset(lin, lqr_policy(lin), obs, 10, 64, 8);
  const MultiIndexSet psi(3, 2), r(2, 2);
  const ApproxMatrices A = build_approx_matrices(lin, joint_lagrange_basis(lin, 2), 2);
  const GmmProblem p = stack_gmm_problem(sample_moment_vectors(g.dataset, psi, r), build_deconv_matrix(psi, obs),
                                         build_deconv_matrix(r, obs.marginal(2)), A.G2_mono(), 1e-4);
  GmmProblem q = p;
  q.b = p.b.colwise().reverse();
  const GmmSolution a = solve_gmm(p, psi), b = solve_gmm(q, psi);
  CHECK((a.m_hat.values - b.m_hat.values).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(a.diagnostics.sigma_min_Phi > 0.0);
  CHECK(a.diagnostics.sigma_max_W <= 1.0 / 1e-4 * (1.0 + 1e-9));
}

TEST_CASE("deconvolution error shrinks with M") {
  const std::vector<Vec> atoms = {vec({0.5}), vec({-0.3}), vec({0.1})};
  const MultiIndexSet s(1, 4);
  const NoiseModel noise = NoiseModel::isotropic_gaussian(1, 0.1, 4);
  const DeconvMatrix D = build_deconv_matrix(s, noise);
  Vec m_bar = Vec::Zero(5);
  for (const Vec& a : atoms) m_bar += s.eval_monomials(std::span<const double>(a.data(), 1)) / 3.0;
  Rng rng(77);
  std::uniform_int_distribution<int> pick(0, 2);
  std::vector<double> err;
  for (int M : {100, 10000}) {
    double e = 0.0;
    for (int rep = 0; rep < 30; ++rep) {
      Mat obs(M, 5);
      for (int i = 0; i < M; ++i) {
        const Vec y = atoms[static_cast<std::size_t>(pick(rng))] + noise.sample(rng);
        obs.row(i) = s.eval_monomials(std::span<const double>(y.data(), 1)).transpose();
      }
      const GmmSolution sol = solve_gmm(static_problem(obs, D, 1, 1e-4), s);
      e += (sol.m_hat.values - m_bar).cwiseAbs().maxCoeff() / 30.0;
    }
    err.push_back(e);
  }
  // a hundredfold increase in M cuts the error roughly tenfold
  CHECK(err[1] < err[0] / 5.0);
  CHECK(err[1] > err[0] / 20.0);
}

TEST_CASE("moment vector JSON") {
  const MultiIndexSet s(2, 2);
  const MomentVector m(s, Vec::LinSpaced(6, 1.0, 0.0));
  const nlohmann::json j = to_json(m);
  CHECK(j["basis"]["dim"] == 2);
  CHECK(j["basis"]["degree"] == 2);
  CHECK(j["basis"]["order"] == "grlex-rightmost");
  const MomentVector back = moment_vector_from_json(j);
  CHECK(back.values == m.values);
  CHECK(back.basis.size() == 6);
  CHECK(m.plus().size() == 5);
  nlohmann::json bad = j;
  bad["basis"]["order"] = "lex";
  CHECK_THROWS(moment_vector_from_json(bad));
  bad = j;
  bad["values"].push_back(1.0);
  CHECK_THROWS(moment_vector_from_json(bad));
}

TEST_CASE("oracle moments and the consistency bound") {
  const SystemModel lin = make_linear_system();
  const Policy pi = lqr_policy(lin);
  const MultiIndexSet psi(3, 2), r(2, 2);
  const OracleMoments o = oracle_moments(lin, pi, 10, 2000, 3, psi, r);
  CHECK(o.trajectories == 2000);
  CHECK(o.m.values[0] == doctest::Approx(1.0));
  // the same estimator on trajectories held in memory
  const NoiseModel none = NoiseModel::isotropic_gaussian(3, 0.0, 2);
  const GeneratedData g = generate_dataset(lin, pi, none, 10, 50, 3);
  const OracleMoments from = oracle_moments_from(lin, g.trajectories, psi, r);
  const SampleMoments s = sample_moment_vectors(g.dataset, psi, r);
  CHECK((from.m.values - s.obs.colwise().mean().transpose()).cwiseAbs().maxCoeff() <= 1e-12);

  const ApproxMatrices A = build_approx_matrices(lin, joint_lagrange_basis(lin, 2), 2);
  const NoiseModel obs = NoiseModel::isotropic_gaussian(3, 0.05, 2);
  const DeconvMatrix Pn = build_deconv_matrix(psi, obs), Px = build_deconv_matrix(r, obs.marginal(2));
  const GeneratedData noisy = generate_dataset(lin, pi, obs, 10, 128, 4);
  const GmmSolution sol =
      solve_gmm(stack_gmm_problem(sample_moment_vectors(noisy.dataset, psi, r), Pn, Px, A.G2_mono(), 1e-4), psi);
  const double sup = dynamics_misspecification(lin, A.basis_psi, r, A.G2, 11);
  CHECK(sup <= 1e-8);
  const Lemma41Report rep = lemma41_diagnostic(o, Pn, Px, A.G2_mono(), sol.W, sup);
  CHECK(std::isfinite(rep.constant));
  CHECK(rep.constant > 0.0);
  CHECK(rep.holds);
  CHECK(rep.lhs <= rep.rhs + rep.floor);
}
