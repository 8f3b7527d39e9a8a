#include "nioc/conic.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace nioc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

ConicProblem::ConicProblem(std::size_t lp, std::vector<std::size_t> sdp, std::size_t rows)
    : lp_dim(lp), sdp_dims(std::move(sdp)) {
  const auto m = static_cast<Eigen::Index>(rows);
  c_lp = VectorXd::Zero(static_cast<Eigen::Index>(lp));
  A_lp = MatrixXd::Zero(m, static_cast<Eigen::Index>(lp));
  b = VectorXd::Zero(m);
  for (std::size_t n : sdp_dims) {
    const auto k = static_cast<Eigen::Index>(n);
    c_sdp.push_back(MatrixXd::Zero(k, k));
    A_sdp.emplace_back(rows, MatrixXd::Zero(k, k));
  }
}

void ConicProblem::add_sdp_entry(std::size_t row, std::size_t k, std::size_t r, std::size_t c,
                                 double value) {
  MatrixXd& A = A_sdp.at(k).at(row);
  const auto i = static_cast<Eigen::Index>(r), j = static_cast<Eigen::Index>(c);
  A(i, j) += value;
  if (i != j) A(j, i) += value;
}

std::string to_string(ConicStatus s) {
  switch (s) {
    case ConicStatus::optimal: return "optimal";
    case ConicStatus::primal_infeasible: return "primal_infeasible";
    case ConicStatus::dual_infeasible: return "dual_infeasible";
    case ConicStatus::max_iterations: return "max_iterations";
    case ConicStatus::numerical_error: return "numerical_error";
  }
  return "unknown";
}

namespace {

// Block-diagonal point in the cone: an LP vector plus symmetric blocks.
struct Point {
  VectorXd lp;
  std::vector<MatrixXd> sdp;

  double dot(const Point& o) const {
    double v = lp.dot(o.lp);
    for (std::size_t k = 0; k < sdp.size(); ++k) v += (sdp[k].array() * o.sdp[k].array()).sum();
    return v;
  }
  double norm() const { return std::sqrt(dot(*this)); }
  void axpy(double a, const Point& o) {
    lp += a * o.lp;
    for (std::size_t k = 0; k < sdp.size(); ++k) sdp[k] += a * o.sdp[k];
  }
  void symmetrize() {
    for (auto& S : sdp) S = 0.5 * (S + S.transpose());
  }
};

class Operator {
 public:
  explicit Operator(const ConicProblem& p) : p_(p) {}

  VectorXd apply(const Point& X) const {
    VectorXd out = p_.A_lp * X.lp;
    for (std::size_t k = 0; k < X.sdp.size(); ++k)
      for (std::size_t i = 0; i < p_.rows(); ++i)
        out[static_cast<Eigen::Index>(i)] += (p_.A_sdp[k][i].array() * X.sdp[k].array()).sum();
    return out;
  }

  // A' y
  Point adjoint(const VectorXd& y) const {
    Point out{p_.A_lp.transpose() * y, {}};
    for (std::size_t k = 0; k < p_.sdp_dims.size(); ++k) {
      const auto n = static_cast<Eigen::Index>(p_.sdp_dims[k]);
      MatrixXd S = MatrixXd::Zero(n, n);
      for (std::size_t i = 0; i < p_.rows(); ++i) S += y[static_cast<Eigen::Index>(i)] * p_.A_sdp[k][i];
      out.sdp.push_back(std::move(S));
    }
    return out;
  }

  Point cost() const { return {p_.c_lp, p_.c_sdp}; }

 private:
  const ConicProblem& p_;
};

// Largest step t with X + t dX still in the cone (infinity when unbounded).
double max_step(const Point& X, const Point& dX) {
  double t = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < X.lp.size(); ++i)
    if (dX.lp[i] < 0.0) t = std::min(t, -X.lp[i] / dX.lp[i]);
  for (std::size_t k = 0; k < X.sdp.size(); ++k) {
    Eigen::LLT<MatrixXd> llt(X.sdp[k]);
    if (llt.info() != Eigen::Success) return 0.0;
    const MatrixXd L = llt.matrixL();
    MatrixXd W = L.triangularView<Eigen::Lower>().solve(dX.sdp[k]);
    W = L.triangularView<Eigen::Lower>().solve(W.transpose()).transpose();
    W = 0.5 * (W + W.transpose());
    const double lmin = Eigen::SelfAdjointEigenSolver<MatrixXd>(W, Eigen::EigenvaluesOnly).eigenvalues()[0];
    if (lmin < 0.0) t = std::min(t, -1.0 / lmin);
  }
  return t;
}

// Smallest eigenvalue over all blocks (LP entries count as 1x1 blocks).
double min_eigenvalue(const Point& S) {
  double v = std::numeric_limits<double>::infinity();
  if (S.lp.size()) v = S.lp.minCoeff();
  for (const auto& B : S.sdp)
    v = std::min(v, Eigen::SelfAdjointEigenSolver<MatrixXd>(0.5 * (B + B.transpose()),
                                                           Eigen::EigenvaluesOnly).eigenvalues()[0]);
  return v;
}

// Cholesky factor of the Schur complement. Pivots that collapse under
// round-off (the matrix becomes nearly singular as free directions open up
// near the optimum) are replaced by a huge value, which zeroes the matching
// component of the solution instead of perturbing the whole system.
class SchurFactor {
 public:
  // Cholesky, falling back to pivoted LDL' when M has lost definiteness to
  // rounding near the optimum.
  explicit SchurFactor(const MatrixXd& M) : llt_(M) {
    if (llt_.info() == Eigen::Success) return;
    ldlt_.compute(M);
    use_ldlt_ = true;
    const VectorXd D = ldlt_.vectorD();
    const double tol = 1e-14 * D.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < D.size(); ++i)
      if (!(D[i] > tol)) ++skipped_;
  }

  VectorXd solve(const VectorXd& b) const { return use_ldlt_ ? VectorXd(ldlt_.solve(b)) : VectorXd(llt_.solve(b)); }
  int skipped() const { return skipped_; }

 private:
  Eigen::LLT<MatrixXd> llt_;
  Eigen::LDLT<MatrixXd> ldlt_;
  bool use_ldlt_ = false;
  int skipped_ = 0;
};

}  // namespace

ConicResult solve_conic(const ConicProblem& p, const ConicSettings& settings) {
  const std::size_t m = p.rows();
  const std::size_t nb = p.sdp_dims.size();
  if (static_cast<std::size_t>(p.A_lp.rows()) != m || static_cast<std::size_t>(p.A_lp.cols()) != p.lp_dim ||
      static_cast<std::size_t>(p.c_lp.size()) != p.lp_dim || p.A_sdp.size() != nb || p.c_sdp.size() != nb)
    throw std::invalid_argument("solve_conic: inconsistent problem dimensions");
  const Operator A(p);
  const Point C = A.cost();
  const double norm_b = p.b.norm();
  const double norm_c = C.norm();
  double nu = static_cast<double>(p.lp_dim);
  for (std::size_t n : p.sdp_dims) nu += static_cast<double>(n);
  if (nu == 0.0) throw std::invalid_argument("solve_conic: empty cone");

  // Starting point scaled to the data.
  auto row_norm = [&](std::size_t i, std::size_t block) {
    if (block == nb) return p.A_lp.row(static_cast<Eigen::Index>(i)).norm();
    return p.A_sdp[block][i].norm();
  };
  Point X, Z;
  auto init_scale = [&](std::size_t block, double n, double c_norm, double& xi, double& zeta) {
    xi = std::max(10.0, std::sqrt(n));
    zeta = std::max({10.0, std::sqrt(n), c_norm});
    for (std::size_t i = 0; i < m; ++i) {
      const double an = row_norm(i, block);
      xi = std::max(xi, n * (1.0 + std::abs(p.b[static_cast<Eigen::Index>(i)])) / (1.0 + an));
      zeta = std::max(zeta, an);
    }
  };
  {
    double xi, zeta;
    init_scale(nb, static_cast<double>(p.lp_dim), p.c_lp.norm(), xi, zeta);
    X.lp = VectorXd::Constant(static_cast<Eigen::Index>(p.lp_dim), xi);
    Z.lp = VectorXd::Constant(static_cast<Eigen::Index>(p.lp_dim), zeta);
    for (std::size_t k = 0; k < nb; ++k) {
      const auto n = static_cast<Eigen::Index>(p.sdp_dims[k]);
      init_scale(k, static_cast<double>(n), p.c_sdp[k].norm(), xi, zeta);
      X.sdp.push_back(xi * MatrixXd::Identity(n, n));
      Z.sdp.push_back(zeta * MatrixXd::Identity(n, n));
    }
  }
  VectorXd y = VectorXd::Zero(static_cast<Eigen::Index>(m));

  ConicResult res;
  auto finish = [&](ConicStatus s, int it) {
    res.status = s;
    res.iterations = it;
    res.x_lp = X.lp;
    res.X = X.sdp;
    res.y = y;
    res.z_lp = Z.lp;
    res.Z = Z.sdp;
    return res;
  };

  for (int it = 0; it <= settings.max_iterations; ++it) {
    const VectorXd rp = p.b - A.apply(X);
    Point Rd = C;
    Rd.axpy(-1.0, A.adjoint(y));
    Rd.axpy(-1.0, Z);
    const double pobj = C.dot(X);
    const double dobj = p.b.dot(y);
    const double xz = X.dot(Z);
    const double mu = xz / nu;
    res.primal_objective = pobj;
    res.dual_objective = dobj;
    res.primal_residual = rp.norm() / (1.0 + norm_b);
    res.dual_residual = Rd.norm() / (1.0 + norm_c);
    res.gap = std::max(std::abs(pobj - dobj), xz) / (1.0 + std::abs(pobj) + std::abs(dobj));
    if (settings.verbose)
      std::fprintf(stderr, "%3d pobj % .9e dobj % .9e relp %.2e reld %.2e gap %.2e mu %.2e\n", it, pobj,
                   dobj, res.primal_residual, res.dual_residual, res.gap, mu);
    if (!std::isfinite(pobj) || !std::isfinite(dobj)) return finish(ConicStatus::numerical_error, it);
    if (res.primal_residual < settings.tolerance && res.dual_residual < settings.tolerance &&
        res.gap < settings.tolerance)
      return finish(ConicStatus::optimal, it);

    // Farkas rays: b'y > 0 with A'y <= 0 proves primal infeasibility;
    // <C,X> < 0 with A(X) = 0, X in the cone proves dual infeasibility.
    if (dobj > 0.0) {
      const VectorXd ray = y / dobj;
      Point S = A.adjoint(ray);
      const double scale = std::max(1.0, S.norm());
      for (auto& B : S.sdp) B = -B;
      S.lp = -S.lp;
      if (min_eigenvalue(S) >= -1e-9 * scale && dobj > 1e3 * (1.0 + std::abs(pobj))) {
        res.certificate = ray;
        return finish(ConicStatus::primal_infeasible, it);
      }
    }
    if (pobj < 0.0 && -pobj > 1e3 * (1.0 + std::abs(dobj))) {
      Point ray = X;
      ray.lp /= -pobj;
      for (auto& B : ray.sdp) B /= -pobj;
      if (A.apply(ray).norm() <= 1e-8 * std::max(1.0, ray.norm()))
        return finish(ConicStatus::dual_infeasible, it);
    }
    if (it == settings.max_iterations) break;

    // Schur complement M_ij = tr(A_i X A_j Z^-1) (+ LP diagonal scaling).
    std::vector<MatrixXd> Zinv(nb);
    for (std::size_t k = 0; k < nb; ++k) {
      Eigen::LLT<MatrixXd> llt(Z.sdp[k]);
      if (llt.info() != Eigen::Success) return finish(ConicStatus::numerical_error, it);
      Zinv[k] = llt.solve(MatrixXd::Identity(Z.sdp[k].rows(), Z.sdp[k].cols()));
      Zinv[k] = 0.5 * (Zinv[k] + Zinv[k].transpose());
    }
    const VectorXd zinv = Z.lp.cwiseInverse();
    const VectorXd dlp = X.lp.cwiseProduct(zinv);
    MatrixXd M = p.A_lp * dlp.asDiagonal() * p.A_lp.transpose();
    for (std::size_t k = 0; k < nb; ++k) {
      for (std::size_t j = 0; j < m; ++j) {
        if (p.A_sdp[k][j].squaredNorm() == 0.0) continue;
        const MatrixXd T = X.sdp[k] * p.A_sdp[k][j] * Zinv[k];
        for (std::size_t i = 0; i <= j; ++i) {
          const double v = (p.A_sdp[k][i].array() * T.array()).sum();
          M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += v;
          if (i != j) M(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) += v;
        }
      }
    }
    M = 0.5 * (M + M.transpose());
    const SchurFactor schur(M);
    const int reg = schur.skipped();

    // Newton direction for complementarity target sigma*mu and corrector term.
    auto direction = [&](double target, const Point* corr, Point& dX, VectorXd& dy, Point& dZ) {
      Point G;
      G.lp = target * zinv - X.lp;
      for (std::size_t k = 0; k < nb; ++k) G.sdp.push_back(target * Zinv[k] - X.sdp[k]);
      if (corr) G.axpy(1.0, *corr);
      Point K;
      K.lp = X.lp.cwiseProduct(Rd.lp).cwiseProduct(zinv);
      for (std::size_t k = 0; k < nb; ++k) K.sdp.push_back(X.sdp[k] * Rd.sdp[k] * Zinv[k]);
      const VectorXd rhs = rp - A.apply(G) + A.apply(K);
      dy = schur.solve(rhs);
      auto recover = [&] {
        dZ = Rd;
        dZ.axpy(-1.0, A.adjoint(dy));
        dX = G;
        dX.lp -= X.lp.cwiseProduct(dZ.lp).cwiseProduct(zinv);
        for (std::size_t k = 0; k < nb; ++k) {
          const MatrixXd T = X.sdp[k] * dZ.sdp[k] * Zinv[k];
          dX.sdp[k] -= 0.5 * (T + T.transpose());
        }
        dX.symmetrize();
        dZ.symmetrize();
      };
      recover();
      // Iterative refinement against the primal Newton equation A(dX) = r_p.
      double err_norm = (rp - A.apply(dX)).norm();
      for (int pass = 0; pass < 3 && err_norm > 1e-14 * (1.0 + norm_b); ++pass) {
        const VectorXd keep = dy;
        dy += schur.solve(rp - A.apply(dX));
        recover();
        const double next = (rp - A.apply(dX)).norm();
        if (!(next < err_norm)) {
          dy = keep;
          recover();
          break;
        }
        err_norm = next;
      }
    };

    Point dXa, dZa;
    VectorXd dya;
    direction(0.0, nullptr, dXa, dya, dZa);
    const double ap_a = std::min(1.0, max_step(X, dXa));
    const double ad_a = std::min(1.0, max_step(Z, dZa));
    Point Xa = X, Za = Z;
    Xa.axpy(ap_a, dXa);
    Za.axpy(ad_a, dZa);
    const double mu_aff = Xa.dot(Za) / nu;
    const double sigma = std::clamp(std::pow(std::max(mu_aff, 0.0) / mu, 3.0), 0.0, 1.0);

    Point corr;
    corr.lp = -dXa.lp.cwiseProduct(dZa.lp).cwiseProduct(zinv);
    for (std::size_t k = 0; k < nb; ++k) {
      const MatrixXd T = dXa.sdp[k] * dZa.sdp[k] * Zinv[k];
      corr.sdp.push_back(-0.5 * (T + T.transpose()));
    }
    Point dX, dZ;
    VectorXd dy;
    direction(sigma * mu, &corr, dX, dy, dZ);
    const double ap = std::min(1.0, settings.step_fraction * max_step(X, dX));
    const double ad = std::min(1.0, settings.step_fraction * max_step(Z, dZ));
    if (!(ap > 1e-12) && !(ad > 1e-12)) return finish(ConicStatus::numerical_error, it);
    if (settings.verbose)
      std::fprintf(stderr, "    ap %.3f ad %.3f sigma %.2e |A dX - rp| %.2e |dX| %.2e skipped %d\n", ap, ad, sigma,
                   (A.apply(dX) - rp).norm(), dX.norm(), reg);
    X.axpy(ap, dX);
    y += ad * dy;
    Z.axpy(ad, dZ);
    X.symmetrize();
    Z.symmetrize();
  }
  return finish(ConicStatus::max_iterations, settings.max_iterations);
}

}  // namespace nioc
