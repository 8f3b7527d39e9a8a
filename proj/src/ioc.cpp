#include "nioc/ioc.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>

namespace nioc {

Mat ApproxMatrices::G2_mono() const { return basis_psi.change().matrix().transpose() * G2; }

PolyBasis joint_lagrange_basis(const SystemModel& model, int d_psi) {
  return PolyBasis::lagrange(MultiIndexSet(model.n_eta(), d_psi), model.joint_space());
}

ApproxMatrices build_approx_matrices(const SystemModel& model, const PolyBasis& basis_psi,
                                     int d_V) {
  if (basis_psi.kind() != BasisKind::lagrange)
    throw std::invalid_argument("build_approx_matrices: basis_psi must be a Lagrange basis");
  if (basis_psi.dimension() != model.n_eta())
    throw std::invalid_argument("build_approx_matrices: basis dimension must be n_x + n_a");
  if (d_V < 0 || d_V > basis_psi.index_set().max_degree())
    throw std::invalid_argument("build_approx_matrices: need 0 <= d_V <= d_psi");
  MultiIndexSet r(model.n_x, d_V);
  const auto D = static_cast<Eigen::Index>(basis_psi.size());
  const auto DV = static_cast<Eigen::Index>(r.size());
  Mat H(D, static_cast<Eigen::Index>(model.n_ell()));
  Mat G1(D, DV), G2(D, DV);
  const auto nx = static_cast<Eigen::Index>(model.n_x);
  const auto na = static_cast<Eigen::Index>(model.n_a);
  for (Eigen::Index j = 0; j < D; ++j) {
    const Vec& eta = basis_psi.nodes()[static_cast<std::size_t>(j)];
    const Vec x = eta.head(nx), a = eta.tail(na);
    H.row(j) = model.features_at(x, a).transpose();
    G1.row(j) = r.eval_monomials(std::span<const double>(x.data(), x.size())).transpose();
    G2.row(j) = conditional_poly_expectations(model, r, x, a).transpose();
  }
  return ApproxMatrices{H, G1, G2, integrate_basis_over_box(basis_psi, basis_psi.domain()),
                        basis_psi, r};
}

std::string to_string(NonnegMode mode) { return mode == NonnegMode::sos ? "sos" : "grid"; }

NonnegMode nonneg_mode_from_string(const std::string& s) {
  if (s == "sos") return NonnegMode::sos;
  if (s == "grid") return NonnegMode::grid;
  throw std::invalid_argument("unknown nonnegativity mode '" + s + "' (expected sos or grid)");
}

std::string to_string(IocStatus s) {
  switch (s) {
    case IocStatus::optimal: return "optimal";
    case IocStatus::infeasible: return "infeasible";
    case IocStatus::numerical_failure: return "numerical_failure";
  }
  return "unknown";
}

IocProgram assemble_program(const ApproxMatrices& A, const MomentVector& m_hat, double alpha,
                            const IocSettings& settings) {
  const MultiIndexSet& psi = A.basis_psi.index_set();
  if (m_hat.basis.dimension() != psi.dimension() || m_hat.basis.max_degree() != psi.max_degree())
    throw std::invalid_argument("assemble_program: moment basis (dim " +
                                std::to_string(m_hat.basis.dimension()) + ", degree " +
                                std::to_string(m_hat.basis.max_degree()) +
                                ") does not match the psi basis");
  if (!(settings.beta_ell > 0.0 && settings.beta_V > 0.0))
    throw std::invalid_argument("assemble_program: l1 bounds must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("assemble_program: alpha in (0,1)");
  Mat Xi(A.H.rows(), A.H.cols() + A.G2.cols());
  Xi << A.H, alpha * A.G2 - A.G1;
  return IocProgram{Xi,
                    A.d,
                    A.basis_psi.change().matrix() * m_hat.values,
                    static_cast<std::size_t>(A.H.cols()),
                    A.basis_psi,
                    settings};
}

namespace {

int ceil_half(int k) { return k <= 0 ? 0 : (k + 1) / 2; }

std::vector<Vec> tensor_grid(const Box& box, int points) {
  const std::size_t n = box.dimension();
  std::vector<std::vector<double>> axes(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double lo = box.lo[static_cast<Eigen::Index>(i)], hi = box.hi[static_cast<Eigen::Index>(i)];
    for (int k = 0; k < points; ++k)
      axes[i].push_back(points == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * k / (points - 1));
  }
  std::vector<Vec> out;
  std::vector<std::size_t> idx(n, 0);
  while (true) {
    Vec p(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) p[static_cast<Eigen::Index>(i)] = axes[i][idx[i]];
    out.push_back(std::move(p));
    std::size_t i = n;
    while (i > 0 && ++idx[i - 1] == axes[i - 1].size()) idx[--i] = 0;
    if (i == 0) break;
  }
  return out;
}

double chebyshev_t(int k, double u) {
  if (k == 0) return 1.0;
  double prev = 1.0, cur = u;
  for (int j = 1; j < k; ++j) {
    const double next = 2.0 * u * cur - prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

}  // namespace

std::vector<std::pair<MultiIndex, double>> chebyshev_product(const MultiIndex& a,
                                                             const MultiIndex& b) {
  // T_a T_b = prod_k (T_{a_k + b_k} + T_{|a_k - b_k|}) / 2
  const std::size_t n = a.dimension();
  std::vector<std::pair<MultiIndex, double>> out;
  std::vector<int> e(n);
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    double w = 1.0;
    for (std::size_t k = 0; k < n; ++k) {
      e[k] = (mask >> k) & 1U ? std::abs(a[k] - b[k]) : a[k] + b[k];
      w *= 0.5;
    }
    MultiIndex m(e);
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == m; });
    if (it == out.end())
      out.emplace_back(std::move(m), w);
    else
      it->second += w;
  }
  return out;
}

Mat chebyshev_coefficients(const PolyBasis& basis) {
  const MultiIndexSet& set = basis.index_set();
  const Box& box = basis.domain();
  const std::size_t D = set.size();
  std::vector<Vec> pts = basis.nodes();
  if (pts.size() != D) pts = PolyBasis::lagrange(set, box).nodes();
  Mat V(D, D), E(D, D);
  for (std::size_t j = 0; j < D; ++j) {
    const Vec u = ((2.0 * pts[j] - box.lo - box.hi).array() / (box.hi - box.lo).array()).matrix();
    for (std::size_t a = 0; a < D; ++a) {
      double t = 1.0;
      for (std::size_t k = 0; k < set.dimension(); ++k)
        t *= chebyshev_t(set[a][k], u[static_cast<Eigen::Index>(k)]);
      V(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(a)) = t;
    }
    E.row(static_cast<Eigen::Index>(j)) = eval_basis(basis, pts[j]).transpose();
  }
  return V.fullPivLu().solve(E);
}

namespace {

// Putinar certificate p = sigma_0 + sum_k sigma_k g_k for a degree-d
// polynomial on a box, written in the tensor Chebyshev basis T_a(u) of the
// box scaled to [-1, 1]^n (monomial Gram matrices are too ill-conditioned
// beyond degree 6). One coefficient row per index of degree <= 2 ceil(d/2).
struct SosShape {
  MultiIndexSet rows;
  MultiIndexSet gram0;
  MultiIndexSet gramk;

  SosShape(std::size_t n, int d)
      : rows(n, 2 * ceil_half(d)), gram0(n, ceil_half(d)), gramk(n, std::max(0, ceil_half(d - 2))) {}

  // Constant multipliers are LP scalars instead of 1x1 blocks.
  bool scalar_multipliers() const { return gramk.size() == 1; }
  std::size_t lp_count(std::size_t n) const { return scalar_multipliers() ? n : 0; }
  std::vector<std::size_t> blocks(std::size_t n) const {
    std::vector<std::size_t> b{gram0.size()};
    if (!scalar_multipliers()) b.insert(b.end(), n, gramk.size());
    return b;
  }
};

// Subtracts the Chebyshev coefficients of the certificate from rows
// first_row + position(a).
void add_sos_terms(ConicProblem& P, const SosShape& shape, const Box& box, std::size_t first_row,
                   std::size_t first_lp, std::size_t first_block) {
  const std::size_t n = shape.rows.dimension();
  auto row_of = [&](const MultiIndex& a) { return first_row + shape.rows.position(a); };
  // sigma_0 = T' Q0 T
  for (std::size_t i = 0; i < shape.gram0.size(); ++i)
    for (std::size_t j = i; j < shape.gram0.size(); ++j)
      for (const auto& [a, w] : chebyshev_product(shape.gram0[i], shape.gram0[j]))
        P.add_sdp_entry(row_of(a), first_block, i, j, -w);
  // sigma_k g_k with g_k = (hi - z_k)(z_k - lo) = h_k^2 (T_0 - T_2)(u_k) / 2
  const MultiIndexSet& gk = shape.gramk;
  for (std::size_t k = 0; k < n; ++k) {
    const auto ki = static_cast<Eigen::Index>(k);
    const double half = 0.5 * (box.hi[ki] - box.lo[ki]);
    const double scale = 0.5 * half * half;
    for (std::size_t i = 0; i < gk.size(); ++i)
      for (std::size_t j = i; j < gk.size(); ++j)
        for (const auto& [a, w] : chebyshev_product(gk[i], gk[j])) {
          std::vector<int> up = a.exponents(), down = a.exponents();
          up[k] = a[k] + 2;
          down[k] = std::abs(a[k] - 2);
          const std::pair<MultiIndex, double> terms[3] = {
              {a, scale * w}, {MultiIndex(up), -0.5 * scale * w}, {MultiIndex(down), -0.5 * scale * w}};
          for (const auto& [b, coef] : terms) {
            const auto row = row_of(b);
            if (shape.scalar_multipliers())
              P.A_lp(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(first_lp + k)) -= coef;
            else
              P.add_sdp_entry(row, first_block + 1 + k, i, j, -coef);
          }
        }
  }
}

}  // namespace

ConicProblem encode_nonnegativity(const IocProgram& program, ConicLayout* layout) {
  const MultiIndexSet& psi = program.basis_psi.index_set();
  const std::size_t n = psi.dimension();
  const int d = psi.max_degree();
  const std::size_t nt = program.num_theta();
  const Eigen::Index nti = static_cast<Eigen::Index>(nt);
  const Box& box = program.basis_psi.domain();
  const bool grid = program.settings.mode == NonnegMode::grid;

  ConicLayout lay;
  lay.n_theta = nt;
  lay.slack_ell = 2 * nt;
  lay.slack_V = 2 * nt + 1;
  lay.slack_d = 2 * nt + 2;
  std::size_t lp = 2 * nt + 3;
  std::size_t rows = 3;

  std::vector<Vec> points;
  std::optional<SosShape> shape;
  std::vector<std::size_t> sdp;
  if (grid) {
    if (program.settings.grid_points < 2) throw std::invalid_argument("grid mode needs >= 2 points per axis");
    points = tensor_grid(box, program.settings.grid_points);
    rows += points.size();
    lp += points.size();
  } else {
    shape.emplace(n, d);
    rows += shape->rows.size();
    lp += shape->lp_count(n);
    sdp = shape->blocks(n);
  }
  lay.sdp_blocks = sdp.size();

  ConicProblem P(lp, sdp, rows);
  // objective m_hat' Xi (p - n)
  const Vec c = program.Xi.transpose() * program.m_hat;
  P.c_lp.head(nti) = c;
  P.c_lp.segment(nti, nti) = -c;

  const auto ne = static_cast<Eigen::Index>(program.n_ell);
  P.A_lp.row(0).head(ne).setOnes();
  P.A_lp.row(0).segment(nti, ne).setOnes();
  P.A_lp(0, static_cast<Eigen::Index>(lay.slack_ell)) = 1.0;
  P.b[0] = program.settings.beta_ell;
  P.A_lp.row(1).segment(ne, nti - ne).setOnes();
  P.A_lp.row(1).segment(nti + ne, nti - ne).setOnes();
  P.A_lp(1, static_cast<Eigen::Index>(lay.slack_V)) = 1.0;
  P.b[1] = program.settings.beta_V;
  const Vec dn = program.Xi.transpose() * program.d;
  P.A_lp.row(2).head(nti) = dn.transpose();
  P.A_lp.row(2).segment(nti, nti) = -dn.transpose();
  P.A_lp(2, static_cast<Eigen::Index>(lay.slack_d)) = -1.0;
  P.b[2] = 1.0;

  if (grid) {
    for (std::size_t s = 0; s < points.size(); ++s) {
      const auto row = static_cast<Eigen::Index>(3 + s);
      const Vec v = program.Xi.transpose() * eval_basis(program.basis_psi, points[s]);
      P.A_lp.row(row).head(nti) = v.transpose();
      P.A_lp.row(row).segment(nti, nti) = -v.transpose();
      P.A_lp(row, static_cast<Eigen::Index>(2 * nt + 3 + s)) = -1.0;
    }
  } else {
    const Mat coeffs = chebyshev_coefficients(program.basis_psi) * program.Xi;
    for (std::size_t i = 0; i < psi.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(3 + shape->rows.position(psi[i]));
      const Vec v = coeffs.row(static_cast<Eigen::Index>(i)).transpose();
      P.A_lp.row(row).head(nti) = v.transpose();
      P.A_lp.row(row).segment(nti, nti) = -v.transpose();
    }
    add_sos_terms(P, *shape, box, 3, 2 * nt + 3, 0);
  }
  if (layout) *layout = lay;
  return P;
}

ConicProblem sos_certificate_problem(const PolyBasis& basis, const Vec& coefficients) {
  if (static_cast<std::size_t>(coefficients.size()) != basis.size())
    throw std::invalid_argument("sos_certificate_problem: coefficient count does not match the basis");
  const std::size_t n = basis.dimension();
  const SosShape shape(n, basis.index_set().max_degree());
  ConicProblem P(shape.lp_count(n), shape.blocks(n), shape.rows.size());
  const Vec cheb = chebyshev_coefficients(basis) * coefficients;
  for (std::size_t i = 0; i < basis.size(); ++i)
    P.b[static_cast<Eigen::Index>(shape.rows.position(basis.index_set()[i]))] = -cheb[static_cast<Eigen::Index>(i)];
  add_sos_terms(P, shape, basis.domain(), 0, 0, 0);
  return P;
}

IocSolution solve_ioc(const IocProgram& program) {
  ConicLayout lay;
  const ConicProblem P = encode_nonnegativity(program, &lay);
  const ConicResult r = solve_conic(P, program.settings.solver);
  IocSolution s;
  s.solver_status = to_string(r.status);
  s.iterations = r.iterations;
  s.primal_residual = r.primal_residual;
  s.dual_residual = r.dual_residual;
  s.gap = r.gap;
  if (r.status == ConicStatus::primal_infeasible) {
    s.status = IocStatus::infeasible;
    const Vec& y = r.certificate;
    const double scale = y.cwiseAbs().maxCoeff();
    auto significant = [&](Eigen::Index from, Eigen::Index count) {
      return count > 0 && y.segment(from, count).cwiseAbs().maxCoeff() > 1e-6 * scale;
    };
    if (significant(0, 1)) s.infeasible_families.push_back("l1_bound_theta_ell");
    if (significant(1, 1)) s.infeasible_families.push_back("l1_bound_theta_V");
    if (significant(2, 1)) s.infeasible_families.push_back("normalization");
    if (significant(3, y.size() - 3)) s.infeasible_families.push_back("nonnegativity");
    return s;
  }
  if (r.status != ConicStatus::optimal) {
    s.status = IocStatus::numerical_failure;
    return s;
  }
  s.status = IocStatus::optimal;
  const auto nt = static_cast<Eigen::Index>(lay.n_theta);
  const Vec theta = r.x_lp.head(nt) - r.x_lp.segment(nt, nt);
  const auto ne = static_cast<Eigen::Index>(program.n_ell);
  s.theta_ell = theta.head(ne);
  s.theta_V = theta.tail(nt - ne);
  s.theta_psi = program.Xi * theta;
  s.objective = program.m_hat.dot(s.theta_psi);
  const double norm = s.theta_ell.norm();
  s.theta_ell_normalized = norm > 0.0 ? Vec(s.theta_ell / norm) : s.theta_ell;
  s.ell_bound_active = s.theta_ell.lpNorm<1>() >= 0.99 * program.settings.beta_ell;
  s.V_bound_active = s.theta_V.lpNorm<1>() >= 0.99 * program.settings.beta_V;
  return s;
}

double slackness_report(const SystemModel& model, const Vec& theta_ell, const Vec& theta_V,
                        const MomentVector& m_mono, const MultiIndexSet& r, const Vec& m_xplus) {
  if (static_cast<std::size_t>(theta_ell.size()) != model.n_ell() ||
      static_cast<std::size_t>(theta_V.size()) != r.size() || m_xplus.size() != theta_V.size())
    throw std::invalid_argument("slackness_report: dimension mismatch");
  const MultiIndexSet& psi = m_mono.basis;
  double out = 0.0;
  for (std::size_t i = 0; i < model.n_ell(); ++i)
    out += theta_ell[static_cast<Eigen::Index>(i)] * model.cost_features[i].coefficients(psi).dot(m_mono.values);
  for (std::size_t i = 0; i < r.size(); ++i) {
    std::vector<int> e = r[i].exponents();
    e.resize(psi.dimension(), 0);
    const double r_mu = m_mono.values[static_cast<Eigen::Index>(psi.position(MultiIndex(e)))];
    const auto k = static_cast<Eigen::Index>(i);
    out += theta_V[k] * (model.discount * m_xplus[k] - r_mu);
  }
  return out;
}

double matrix_l1_norm(const Mat& A) {
  return A.size() ? A.cwiseAbs().colwise().sum().maxCoeff() : 0.0;
}

Lemma42Report lemma42_check(const IocProgram& program, const IocSolution& star,
                            const IocSolution& hat, const Vec& m_bar, const Vec& m_hat) {
  if (star.status != IocStatus::optimal || hat.status != IocStatus::optimal)
    throw std::invalid_argument("lemma42_check: both programs must be solved to optimality");
  Lemma42Report rep;
  rep.lhs = std::abs((star.theta_psi - hat.theta_psi).dot(m_bar));
  rep.rhs = 2.0 * (m_bar - m_hat).lpNorm<Eigen::Infinity>() * matrix_l1_norm(program.Xi) *
            (program.settings.beta_V + program.settings.beta_ell);
  // Both optima are only solver-accurate.
  rep.floor = 10.0 * program.settings.solver.tolerance *
              (1.0 + std::abs(star.objective) + std::abs(hat.objective));
  rep.holds = rep.lhs <= rep.rhs + rep.floor;
  return rep;
}

nlohmann::json to_json(const IocSolution& s) {
  auto vec = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json j = {{"status", to_string(s.status)},
                      {"objective", s.objective},
                      {"theta_ell", vec(s.theta_ell)},
                      {"theta_ell_normalized", vec(s.theta_ell_normalized)},
                      {"theta_V", vec(s.theta_V)},
                      {"bounds_active", {{"theta_ell", s.ell_bound_active}, {"theta_V", s.V_bound_active}}},
                      {"solver",
                       {{"status", s.solver_status},
                        {"iterations", s.iterations},
                        {"residuals",
                         {{"primal", s.primal_residual}, {"dual", s.dual_residual}, {"gap", s.gap}}}}}};
  if (!s.infeasible_families.empty()) j["infeasible_constraints"] = s.infeasible_families;
  return j;
}

nlohmann::json to_json(const Lemma42Report& r) {
  return {{"lhs", r.lhs}, {"rhs", r.rhs}, {"floor", r.floor}, {"holds", r.holds}};
}

}  // namespace nioc
