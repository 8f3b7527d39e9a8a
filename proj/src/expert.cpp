#include "nioc/expert.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

namespace nioc {

namespace {

// Polynomial map with flattened term storage so the inner loops of MPC and
// value iteration do not allocate.
class FlatPoly {
 public:
  FlatPoly() = default;
  FlatPoly(const std::vector<Polynomial>& polys, std::size_t num_vars) : n_vars_(num_vars) {
    n_out_ = polys.size();
    for (std::size_t k = 0; k < polys.size(); ++k) {
      for (const auto& [idx, c] : polys[k].terms) {
        if (c == 0.0) continue;
        out_.push_back(k);
        coef_.push_back(c);
        for (std::size_t v = 0; v < n_vars_; ++v) {
          exps_.push_back(idx[v]);
          max_deg_ = std::max(max_deg_, idx[v]);
        }
      }
    }
    pow_.assign(n_vars_ * static_cast<std::size_t>(max_deg_ + 1), 1.0);
  }

  std::size_t outputs() const { return n_out_; }

  // Values and the row-major Jacobian (outputs x variables).
  void eval_jacobian(const double* eta, double* out, double* jac) const {
    eval(eta, out);
    const std::size_t stride = static_cast<std::size_t>(max_deg_ + 1);
    std::fill(jac, jac + n_out_ * n_vars_, 0.0);
    for (std::size_t t = 0; t < coef_.size(); ++t) {
      const int* e = exps_.data() + t * n_vars_;
      for (std::size_t w = 0; w < n_vars_; ++w) {
        if (e[w] == 0) continue;
        double term = coef_[t] * e[w];
        for (std::size_t v = 0; v < n_vars_; ++v) {
          const int p = v == w ? e[v] - 1 : e[v];
          if (p) term *= pow_[v * stride + static_cast<std::size_t>(p)];
        }
        jac[out_[t] * n_vars_ + w] += term;
      }
    }
  }

  void eval(const double* eta, double* out) const {
    const std::size_t stride = static_cast<std::size_t>(max_deg_ + 1);
    for (std::size_t v = 0; v < n_vars_; ++v) {
      double* p = pow_.data() + v * stride;
      for (int d = 1; d <= max_deg_; ++d) p[d] = p[d - 1] * eta[v];
    }
    std::fill(out, out + n_out_, 0.0);
    for (std::size_t t = 0; t < coef_.size(); ++t) {
      double term = coef_[t];
      const int* e = exps_.data() + t * n_vars_;
      for (std::size_t v = 0; v < n_vars_; ++v)
        if (e[v]) term *= pow_[v * stride + static_cast<std::size_t>(e[v])];
      out[out_[t]] += term;
    }
  }

 private:
  std::size_t n_vars_ = 0;
  std::size_t n_out_ = 0;
  int max_deg_ = 0;
  std::vector<std::size_t> out_;
  std::vector<double> coef_;
  std::vector<int> exps_;
  mutable std::vector<double> pow_;
};

// theta' features merged into a single polynomial.
Polynomial combined_cost(const SystemModel& model, const CostParams& cost) {
  if (static_cast<std::size_t>(cost.theta_ell.size()) != model.n_ell())
    throw std::invalid_argument("cost parameter length does not match the feature count");
  Polynomial out(model.n_eta());
  for (std::size_t k = 0; k < model.n_ell(); ++k) {
    const double w = cost.theta_ell[static_cast<Eigen::Index>(k)];
    for (const auto& [idx, c] : model.cost_features[k].terms) {
      auto it = std::find_if(out.terms.begin(), out.terms.end(),
                             [&](const auto& t) { return t.first == idx; });
      if (it == out.terms.end())
        out.terms.emplace_back(idx, w * c);
      else
        it->second += w * c;
    }
  }
  return out;
}

template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t t = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), 1, n ? n : 1);
  if (t == 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (n + t - 1) / t;
  for (std::size_t w = 0; w < t; ++w) {
    const std::size_t b = w * chunk, e = std::min(n, b + chunk);
    if (b < e) pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
}

}  // namespace

LinearDynamics linear_dynamics(const SystemModel& model) {
  const auto nx = static_cast<Eigen::Index>(model.n_x);
  const auto na = static_cast<Eigen::Index>(model.n_a);
  LinearDynamics dyn{Mat::Zero(nx, nx), Mat::Zero(nx, na)};
  for (std::size_t i = 0; i < model.n_x; ++i) {
    for (const auto& [idx, c] : model.drift[i].terms) {
      if (c == 0.0) continue;
      if (idx.degree() != 1) throw std::invalid_argument("linear_dynamics: drift is not linear");
      std::size_t v = 0;
      while (idx[v] == 0) ++v;
      const auto row = static_cast<Eigen::Index>(i);
      if (v < model.n_x)
        dyn.A(row, static_cast<Eigen::Index>(v)) += c;
      else
        dyn.B(row, static_cast<Eigen::Index>(v - model.n_x)) += c;
    }
  }
  return dyn;
}

QuadraticCost quadratic_cost(const SystemModel& model, const CostParams& cost) {
  const auto nx = static_cast<Eigen::Index>(model.n_x);
  const auto na = static_cast<Eigen::Index>(model.n_a);
  QuadraticCost qc{Mat::Zero(nx, nx), Mat::Zero(na, na), Mat::Zero(nx, na)};
  for (const auto& [idx, c] : combined_cost(model, cost).terms) {
    if (std::abs(c) <= 1e-14) continue;
    if (idx.degree() != 2) throw std::invalid_argument("quadratic_cost: cost is not a pure quadratic");
    std::vector<std::size_t> vars;
    for (std::size_t v = 0; v < idx.dimension(); ++v)
      for (int e = 0; e < idx[v]; ++e) vars.push_back(v);
    const std::size_t i = vars[0], j = vars[1];
    // Full symmetric matrix over eta = (x, a).
    Mat* target = nullptr;
    Eigen::Index r = 0, s = 0;
    if (j < model.n_x) {
      target = &qc.Q;
      r = static_cast<Eigen::Index>(i);
      s = static_cast<Eigen::Index>(j);
    } else if (i >= model.n_x) {
      target = &qc.R;
      r = static_cast<Eigen::Index>(i - model.n_x);
      s = static_cast<Eigen::Index>(j - model.n_x);
    } else {
      qc.S(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j - model.n_x)) += 0.5 * c;
      continue;
    }
    if (r == s) {
      (*target)(r, r) += c;
    } else {
      (*target)(r, s) += 0.5 * c;
      (*target)(s, r) += 0.5 * c;
    }
  }
  return qc;
}

Mat riccati_map(const LinearDynamics& dyn, const QuadraticCost& cost, double alpha, const Mat& P) {
  const Mat& A = dyn.A;
  const Mat& B = dyn.B;
  const Mat G = cost.R + alpha * B.transpose() * P * B;
  const Mat N = cost.S + alpha * A.transpose() * P * B;
  Mat next = cost.Q + alpha * A.transpose() * P * A - N * G.ldlt().solve(N.transpose());
  return 0.5 * (next + next.transpose());
}

LqrPolicy solve_discounted_riccati(const SystemModel& model, const CostParams& cost, double tol,
                                   int max_iterations) {
  const LinearDynamics dyn = linear_dynamics(model);
  const QuadraticCost qc = quadratic_cost(model, cost);
  if (qc.R.llt().info() != Eigen::Success)
    throw std::invalid_argument("solve_discounted_riccati: R must be positive definite");
  const double alpha = model.discount;
  LqrPolicy out;
  out.discount = alpha;
  Mat P = qc.Q;
  for (int it = 1; it <= max_iterations; ++it) {
    Mat next = riccati_map(dyn, qc, alpha, P);
    const double change = (next - P).cwiseAbs().maxCoeff();
    P = std::move(next);
    if (!P.allFinite()) throw std::runtime_error("solve_discounted_riccati: iteration diverged");
    if (change < tol) {
      out.iterations = it;
      out.P = P;
      const Mat G = qc.R + alpha * dyn.B.transpose() * P * dyn.B;
      out.K = G.ldlt().solve(qc.S.transpose() + alpha * dyn.B.transpose() * P * dyn.A);
      return out;
    }
  }
  throw std::runtime_error("solve_discounted_riccati: no convergence after " +
                           std::to_string(max_iterations) + " iterations");
}

Policy lqr_expert(const SystemModel& model, const LqrPolicy& lqr) {
  return [box = model.action_space, K = lqr.K](const Vec& x) -> Vec { return box.clip(-K * x); };
}

namespace {

// Noise-free clipped rollout of an action sequence with its adjoint gradient.
class MpcProblem {
 public:
  MpcProblem(const MpcPolicy& policy, const SystemModel& model)
      : H_(policy.horizon),
        nx_(model.n_x),
        na_(model.n_a),
        model_(model),
        drift_(model.drift, model.n_eta()),
        cost_(std::vector<Polynomial>{combined_cost(model, policy.cost)}, model.n_eta()) {
    if (policy.horizon < 1) throw std::invalid_argument("MpcPolicy: horizon must be >= 1");
    if (policy.seed_points < 2) throw std::invalid_argument("MpcPolicy: seed_points must be >= 2");
    disc_.resize(static_cast<std::size_t>(H_));
    double a = 1.0;
    for (auto& d : disc_) {
      d = a;
      a *= policy.discount;
    }
    const std::size_t n = model.n_eta();
    eta_.resize(n);
    fjac_.resize(nx_ * n);
    cjac_.resize(n);
    xs_.resize(static_cast<std::size_t>(H_) * nx_);
    clipped_.resize(static_cast<std::size_t>(H_) * nx_);
    lam_.resize(nx_);
    lam_next_.resize(nx_);
  }

  std::size_t size() const { return static_cast<std::size_t>(H_) * na_; }

  double cost(const double* x0, const std::vector<double>& U) { return rollout(x0, U, nullptr); }

  // Cost and gradient; clipped state components carry no sensitivity.
  double cost_grad(const double* x0, const std::vector<double>& U, std::vector<double>& g) {
    const double J = rollout(x0, U, nullptr);
    g.assign(size(), 0.0);
    const std::size_t n = nx_ + na_;
    std::fill(lam_next_.begin(), lam_next_.end(), 0.0);
    for (int k = H_ - 1; k >= 0; --k) {
      const auto ks = static_cast<std::size_t>(k);
      load(xs_.data() + ks * nx_, U.data() + ks * na_);
      double c;
      cost_.eval_jacobian(eta_.data(), &c, cjac_.data());
      std::vector<double> f(nx_);
      drift_.eval_jacobian(eta_.data(), f.data(), fjac_.data());
      // lam_next = dJ/dx_{k+1} (zero past the horizon), masked by clipping.
      for (std::size_t v = 0; v < n; ++v) {
        double acc = disc_[ks] * cjac_[v];
        if (k + 1 < H_)
          for (std::size_t i = 0; i < nx_; ++i)
            if (!clipped_[(ks + 1) * nx_ + i]) acc += fjac_[i * n + v] * lam_next_[i];
        if (v < nx_)
          lam_[v] = acc;
        else
          g[ks * na_ + (v - nx_)] = acc;
      }
      std::swap(lam_, lam_next_);
    }
    return J;
  }

 private:
  void load(const double* x, const double* u) {
    std::copy(x, x + nx_, eta_.begin());
    std::copy(u, u + na_, eta_.begin() + static_cast<std::ptrdiff_t>(nx_));
  }

  double rollout(const double* x0, const std::vector<double>& U, double*) {
    std::copy(x0, x0 + nx_, xs_.begin());
    std::fill(clipped_.begin(), clipped_.begin() + static_cast<std::ptrdiff_t>(nx_), 0);
    double acc = 0.0;
    for (int k = 0; k < H_; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      load(xs_.data() + ks * nx_, U.data() + ks * na_);
      double c;
      cost_.eval(eta_.data(), &c);
      acc += disc_[ks] * c;
      if (k + 1 < H_) {
        double* out = xs_.data() + (ks + 1) * nx_;
        drift_.eval(eta_.data(), out);
        for (std::size_t i = 0; i < nx_; ++i) {
          const auto ii = static_cast<Eigen::Index>(i);
          const double lo = model_.state_space.lo[ii], hi = model_.state_space.hi[ii];
          clipped_[(ks + 1) * nx_ + i] = out[i] < lo || out[i] > hi;
          out[i] = std::clamp(out[i], lo, hi);
        }
      }
    }
    return acc;
  }

  int H_;
  std::size_t nx_, na_;
  const SystemModel& model_;
  FlatPoly drift_;
  FlatPoly cost_;
  std::vector<double> disc_;
  std::vector<double> eta_, fjac_, cjac_, xs_, lam_, lam_next_;
  std::vector<char> clipped_;
};

// Projected limited-memory BFGS on the action box.
// `weight` is a diagonal curvature guess used as the initial inverse-Hessian
// scaling.
void refine_box_lbfgs(MpcProblem& prob, const double* x0, std::vector<double>& U,
                      const std::vector<double>& lo, const std::vector<double>& hi,
                      const std::vector<double>& weight, int max_iterations, double tol) {
  const std::size_t n = U.size();
  constexpr std::size_t memory = 8;
  std::vector<std::vector<double>> S, Y;
  std::vector<double> rho;
  std::vector<double> g, g_new, d(n), U_new(n), q(n), alpha_buf(memory);
  std::vector<char> free(n);
  double J = prob.cost_grad(x0, U, g);
  for (int it = 0; it < max_iterations; ++it) {
    double pg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      pg = std::max(pg, std::abs(std::clamp(U[i] - g[i], lo[i], hi[i]) - U[i]));
      const double room = 1e-12 * (hi[i] - lo[i]);
      free[i] = !((U[i] <= lo[i] + room && g[i] > 0.0) || (U[i] >= hi[i] - room && g[i] < 0.0));
    }
    if (pg < tol) break;

    // Two-loop recursion restricted to the free coordinates.
    for (std::size_t i = 0; i < n; ++i) q[i] = free[i] ? g[i] : 0.0;
    for (std::size_t j = S.size(); j-- > 0;) {
      double a = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (free[i]) a += S[j][i] * q[i];
      a *= rho[j];
      alpha_buf[j] = a;
      for (std::size_t i = 0; i < n; ++i)
        if (free[i]) q[i] -= a * Y[j][i];
    }
    if (!S.empty()) {
      double sy = 0.0, yy = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        sy += S.back()[i] * Y.back()[i];
        yy += Y.back()[i] * Y.back()[i] / weight[i];
      }
      const double gamma = yy > 0.0 ? sy / yy : 1.0;
      for (std::size_t i = 0; i < n; ++i) q[i] *= gamma / weight[i];
    } else {
      double gmax = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (free[i]) gmax = std::max(gmax, std::abs(g[i]) / weight[i]);
      const double scale = gmax > 0.0 ? std::min(1.0, 0.1 / gmax) : 1.0;
      for (std::size_t i = 0; i < n; ++i) q[i] *= scale / weight[i];
    }
    for (std::size_t j = 0; j < S.size(); ++j) {
      double b = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (free[i]) b += Y[j][i] * q[i];
      b *= rho[j];
      for (std::size_t i = 0; i < n; ++i)
        if (free[i]) q[i] += (alpha_buf[j] - b) * S[j][i];
    }
    double slope = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d[i] = free[i] ? -q[i] : 0.0;
      slope += d[i] * g[i];
    }
    if (!(slope < 0.0)) {
      S.clear();
      Y.clear();
      rho.clear();
      for (std::size_t i = 0; i < n; ++i) d[i] = free[i] ? -g[i] : 0.0;
    }

    // Backtracking along the projected path.
    double t = 1.0, J_new = J;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
      double decrease = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        U_new[i] = std::clamp(U[i] + t * d[i], lo[i], hi[i]);
        decrease += g[i] * (U_new[i] - U[i]);
      }
      J_new = prob.cost(x0, U_new);
      if (J_new <= J + 1e-4 * decrease) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    const double J_old = J;
    J = prob.cost_grad(x0, U_new, g_new);
    std::vector<double> s(n), y(n);
    double sy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = U_new[i] - U[i];
      y[i] = g_new[i] - g[i];
      sy += s[i] * y[i];
    }
    U.swap(U_new);
    g.swap(g_new);
    if (sy > 1e-16) {
      if (S.size() == memory) {
        S.erase(S.begin());
        Y.erase(Y.begin());
        rho.erase(rho.begin());
      }
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      rho.push_back(1.0 / sy);
    }
    if (J_old - J <= 1e-16 * (1.0 + std::abs(J))) break;
  }
}

}  // namespace

double mpc_sequence_cost(const MpcPolicy& policy, const SystemModel& model, const Vec& x,
                         const std::vector<Vec>& actions) {
  MpcProblem prob(policy, model);
  if (actions.size() != static_cast<std::size_t>(policy.horizon))
    throw std::invalid_argument("mpc_sequence_cost: need one action per horizon step");
  std::vector<double> U;
  for (const auto& a : actions) U.insert(U.end(), a.data(), a.data() + a.size());
  return prob.cost(x.data(), U);
}

Vec mpc_action(const MpcPolicy& policy, const SystemModel& model, const Vec& x) {
  MpcProblem prob(policy, model);
  const std::size_t na = model.n_a;
  const auto H = static_cast<std::size_t>(policy.horizon);
  std::vector<double> lo(H * na), hi(H * na);
  for (std::size_t k = 0; k < H; ++k)
    for (std::size_t d = 0; d < na; ++d) {
      lo[k * na + d] = model.action_space.lo[static_cast<Eigen::Index>(d)];
      hi[k * na + d] = model.action_space.hi[static_cast<Eigen::Index>(d)];
    }

  // Seed with the best constant sequence on the action grid, one action
  // coordinate at a time.
  std::vector<double> U(H * na);
  for (std::size_t d = 0; d < na; ++d) U[d] = 0.5 * (lo[d] + hi[d]);
  for (std::size_t k = 1; k < H; ++k)
    for (std::size_t d = 0; d < na; ++d) U[k * na + d] = U[d];
  const int S = policy.seed_points;
  for (std::size_t d = 0; d < na; ++d) {
    double best = std::numeric_limits<double>::infinity(), best_u = lo[d];
    for (int s = 0; s < S; ++s) {
      const double u = lo[d] + (hi[d] - lo[d]) * s / (S - 1);
      for (std::size_t k = 0; k < H; ++k) U[k * na + d] = u;
      const double c = prob.cost(x.data(), U);
      if (c < best) {
        best = c;
        best_u = u;
      }
    }
    for (std::size_t k = 0; k < H; ++k) U[k * na + d] = best_u;
  }

  std::vector<double> weight(H * na);
  double disc = 1.0;
  for (std::size_t k = 0; k < H; ++k, disc *= policy.discount)
    for (std::size_t d = 0; d < na; ++d) weight[k * na + d] = disc;
  refine_box_lbfgs(prob, x.data(), U, lo, hi, weight, policy.max_iterations, policy.tolerance);
  Vec a(static_cast<Eigen::Index>(na));
  for (std::size_t d = 0; d < na; ++d) a[static_cast<Eigen::Index>(d)] = U[d];
  return model.action_space.clip(a);
}

Policy mpc_expert(const SystemModel& model, MpcPolicy policy) {
  return [model, policy](const Vec& x) { return mpc_action(policy, model, x); };
}

std::vector<double> uniform_axis(double lo, double hi, int count) {
  if (count < 1) throw std::invalid_argument("uniform_axis: count must be >= 1");
  if (count == 1) return {0.5 * (lo + hi)};
  std::vector<double> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    out[static_cast<std::size_t>(i)] = i == count - 1 ? hi : lo + (hi - lo) * i / (count - 1);
  return out;
}

ValueGrids ValueGrids::uniform(const SystemModel& model, int state_points, int action_points) {
  ValueGrids g;
  for (std::size_t i = 0; i < model.n_x; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    g.state_axes.push_back(uniform_axis(model.state_space.lo[k], model.state_space.hi[k], state_points));
  }
  for (std::size_t i = 0; i < model.n_a; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    g.action_axes.push_back(
        uniform_axis(model.action_space.lo[k], model.action_space.hi[k], action_points));
  }
  return g;
}

namespace {

std::vector<Vec> tensor_points(const std::vector<std::vector<double>>& axes) {
  std::size_t total = 1;
  for (const auto& a : axes) total *= a.size();
  std::vector<Vec> out;
  out.reserve(total);
  std::vector<std::size_t> idx(axes.size(), 0);
  for (std::size_t n = 0; n < total; ++n) {
    Vec p(static_cast<Eigen::Index>(axes.size()));
    for (std::size_t d = 0; d < axes.size(); ++d) p[static_cast<Eigen::Index>(d)] = axes[d][idx[d]];
    out.push_back(std::move(p));
    for (std::size_t d = axes.size(); d-- > 0;) {
      if (++idx[d] < axes[d].size()) break;
      idx[d] = 0;
    }
  }
  return out;
}

struct NoiseNode {
  Vec offset;
  double weight;
};

// Tensor Gauss-Legendre rule for the truncated process noise.
std::vector<NoiseNode> noise_quadrature(const TruncatedGaussian& w, int order, double window) {
  if (order < 1) throw std::invalid_argument("noise_quadrature: order must be >= 1");
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(order, order);
  for (int i = 1; i < order; ++i) J(i, i - 1) = J(i - 1, i) = i / std::sqrt(4.0 * i * i - 1.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  const Vec t = es.eigenvalues();
  const Vec gw = 2.0 * es.eigenvectors().row(0).transpose().array().square();

  std::vector<std::vector<double>> nodes(w.dimension()), weights(w.dimension());
  for (std::size_t d = 0; d < w.dimension(); ++d) {
    const auto k = static_cast<Eigen::Index>(d);
    const double s = w.std[k];
    if (s == 0.0) {
      nodes[d] = {w.mean[k]};
      weights[d] = {1.0};
      continue;
    }
    const double h = std::min(w.bound, window * s);
    double total = 0.0;
    for (int i = 0; i < order; ++i) {
      const double z = h * t[i];
      const double wt = gw[i] * std::exp(-0.5 * z * z / (s * s));
      nodes[d].push_back(w.mean[k] + z);
      weights[d].push_back(wt);
      total += wt;
    }
    for (auto& v : weights[d]) v /= total;
  }
  std::vector<NoiseNode> out;
  for (const Vec& p : tensor_points(nodes)) out.push_back({p, 0.0});
  // Weights in the same tensor order as the nodes.
  std::vector<std::size_t> idx(nodes.size(), 0);
  for (auto& node : out) {
    double wt = 1.0;
    for (std::size_t d = 0; d < nodes.size(); ++d) wt *= weights[d][idx[d]];
    node.weight = wt;
    for (std::size_t d = nodes.size(); d-- > 0;) {
      if (++idx[d] < nodes[d].size()) break;
      idx[d] = 0;
    }
  }
  return out;
}

// Multilinear interpolation weights of x on a tensor grid (last axis fastest).
void interp_weights(const std::vector<std::vector<double>>& axes, const double* x,
                    std::vector<std::pair<std::size_t, double>>& out) {
  const std::size_t n = axes.size();
  std::size_t lo_idx[8];
  double frac[8];
  std::size_t stride[8];
  if (n > 8) throw std::invalid_argument("interpolation supports at most 8 state dimensions");
  std::size_t s = 1;
  for (std::size_t d = n; d-- > 0;) {
    stride[d] = s;
    s *= axes[d].size();
  }
  for (std::size_t d = 0; d < n; ++d) {
    const auto& a = axes[d];
    if (a.size() == 1) {
      lo_idx[d] = 0;
      frac[d] = 0.0;
      continue;
    }
    const double v = std::clamp(x[d], a.front(), a.back());
    std::size_t i = static_cast<std::size_t>(std::upper_bound(a.begin(), a.end(), v) - a.begin());
    i = std::clamp<std::size_t>(i, 1, a.size() - 1) - 1;
    lo_idx[d] = i;
    frac[d] = (v - a[i]) / (a[i + 1] - a[i]);
  }
  out.clear();
  for (std::size_t corner = 0; corner < (std::size_t{1} << n); ++corner) {
    double w = 1.0;
    std::size_t flat = 0;
    for (std::size_t d = 0; d < n; ++d) {
      const bool up = (corner >> d) & 1U;
      if (up && axes[d].size() == 1) {
        w = 0.0;
        break;
      }
      w *= up ? frac[d] : 1.0 - frac[d];
      flat += (lo_idx[d] + (up ? 1 : 0)) * stride[d];
    }
    if (w != 0.0) out.emplace_back(flat, w);
  }
}

struct Lookahead {
  FlatPoly drift;
  FlatPoly cost;
  std::vector<NoiseNode> noise;
  const SystemModel& model;

  Lookahead(const SystemModel& m, const CostParams& c, const ValueIterationOptions& o)
      : drift(m.drift, m.n_eta()),
        cost(std::vector<Polynomial>{combined_cost(m, c)}, m.n_eta()),
        noise(noise_quadrature(m.process_noise, o.noise_order, o.noise_window)),
        model(m) {}

  // Stage cost and the expectation stencil over next-state grid nodes.
  double expand(const std::vector<std::vector<double>>& axes, const Vec& x, const Vec& a,
                std::vector<std::pair<std::size_t, double>>& stencil) const {
    Vec eta(x.size() + a.size());
    eta << x, a;
    double c;
    cost.eval(eta.data(), &c);
    Vec f(static_cast<Eigen::Index>(model.n_x));
    drift.eval(eta.data(), f.data());
    stencil.clear();
    std::vector<std::pair<std::size_t, double>> corners;
    for (const auto& q : noise) {
      const Vec next = model.state_space.clip(f + q.offset);
      interp_weights(axes, next.data(), corners);
      for (const auto& [idx, w] : corners) stencil.emplace_back(idx, w * q.weight);
    }
    std::sort(stencil.begin(), stencil.end());
    std::size_t out = 0;
    for (std::size_t i = 0; i < stencil.size(); ++i) {
      if (out > 0 && stencil[out - 1].first == stencil[i].first)
        stencil[out - 1].second += stencil[i].second;
      else
        stencil[out++] = stencil[i];
    }
    stencil.resize(out);
    return c;
  }
};

}  // namespace

GridValueFunction::GridValueFunction(std::vector<std::vector<double>> state_axes,
                                     std::vector<Vec> actions, Vec values, double discount)
    : state_axes_(std::move(state_axes)),
      actions_(std::move(actions)),
      values_(std::move(values)),
      discount_(discount) {
  std::size_t total = 1;
  for (const auto& a : state_axes_) {
    if (a.empty()) throw std::invalid_argument("GridValueFunction: empty axis");
    if (!std::is_sorted(a.begin(), a.end()))
      throw std::invalid_argument("GridValueFunction: axes must be increasing");
    total *= a.size();
  }
  if (static_cast<std::size_t>(values_.size()) != total)
    throw std::invalid_argument("GridValueFunction: value count does not match the grid");
  if (actions_.empty()) throw std::invalid_argument("GridValueFunction: empty action grid");
}

Vec GridValueFunction::state_node(std::size_t flat) const {
  Vec x(static_cast<Eigen::Index>(state_axes_.size()));
  for (std::size_t d = state_axes_.size(); d-- > 0;) {
    x[static_cast<Eigen::Index>(d)] = state_axes_[d][flat % state_axes_[d].size()];
    flat /= state_axes_[d].size();
  }
  return x;
}

double GridValueFunction::operator()(const Vec& x) const {
  std::vector<std::pair<std::size_t, double>> w;
  interp_weights(state_axes_, x.data(), w);
  double v = 0.0;
  for (const auto& [i, c] : w) v += c * values_[static_cast<Eigen::Index>(i)];
  return v;
}

GridValueFunction value_iteration(const SystemModel& model, const CostParams& cost,
                                  const ValueGrids& grids, const ValueIterationOptions& options) {
  if (!(options.tol > 0.0)) throw std::invalid_argument("value_iteration: tol must be > 0");
  if (grids.state_axes.size() != model.n_x || grids.action_axes.size() != model.n_a)
    throw std::invalid_argument("value_iteration: grid dimension mismatch");
  const std::vector<Vec> states = tensor_points(grids.state_axes);
  const std::vector<Vec> actions = tensor_points(grids.action_axes);
  const std::size_t ns = states.size(), na = actions.size();
  const Lookahead look(model, cost, options);

  // Precompute stage costs and expectation stencils (CSR over (state, action)).
  std::vector<double> stage(ns * na);
  std::vector<std::size_t> offsets(ns * na + 1, 0);
  std::vector<std::size_t> cols;
  std::vector<double> vals;
  {
    std::vector<std::pair<std::size_t, double>> st;
    for (std::size_t i = 0; i < ns; ++i)
      for (std::size_t j = 0; j < na; ++j) {
        stage[i * na + j] = look.expand(grids.state_axes, states[i], actions[j], st);
        for (const auto& [c, w] : st) {
          cols.push_back(c);
          vals.push_back(w);
        }
        offsets[i * na + j + 1] = cols.size();
      }
  }

  const double alpha = model.discount;
  Vec V = Vec::Zero(static_cast<Eigen::Index>(ns));
  Vec next(static_cast<Eigen::Index>(ns));
  std::vector<double> history;
  for (int it = 1; it <= options.max_iterations; ++it) {
    parallel_for(ns, options.threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < na; ++j) {
          const std::size_t r = i * na + j;
          double ev = 0.0;
          for (std::size_t p = offsets[r]; p < offsets[r + 1]; ++p)
            ev += vals[p] * V[static_cast<Eigen::Index>(cols[p])];
          best = std::min(best, stage[r] + alpha * ev);
        }
        next[static_cast<Eigen::Index>(i)] = best;
      }
    });
    const double change = (next - V).cwiseAbs().maxCoeff();
    history.push_back(change);
    V.swap(next);
    if (change < options.tol) {
      GridValueFunction out(grids.state_axes, actions, V, alpha);
      out.residual = change;
      out.iterations = it;
      out.residual_history = std::move(history);
      return out;
    }
  }
  throw std::runtime_error("value_iteration: iteration cap of " +
                           std::to_string(options.max_iterations) + " exceeded");
}

Vec greedy_policy(const GridValueFunction& V, const SystemModel& model, const CostParams& cost,
                  const Vec& x, const ValueIterationOptions& options) {
  const Lookahead look(model, cost, options);
  std::vector<std::pair<std::size_t, double>> st;
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_j = 0;
  for (std::size_t j = 0; j < V.actions().size(); ++j) {
    double q = look.expand(V.state_axes(), x, V.actions()[j], st);
    double ev = 0.0;
    for (const auto& [c, w] : st) ev += w * V.values()[static_cast<Eigen::Index>(c)];
    q += V.discount() * ev;
    if (q < best) {
      best = q;
      best_j = j;
    }
  }
  return V.actions()[best_j];
}

double bellman_slack(const GridValueFunction& V, const SystemModel& model, const CostParams& cost,
                     const Vec& x, const Vec& a, const ValueIterationOptions& options) {
  const Lookahead look(model, cost, options);
  std::vector<std::pair<std::size_t, double>> st;
  const double c = look.expand(V.state_axes(), x, a, st);
  double ev = 0.0;
  for (const auto& [i, w] : st) ev += w * V.values()[static_cast<Eigen::Index>(i)];
  return c + V.discount() * ev - V(x);
}

Policy greedy_expert(const SystemModel& model, const CostParams& cost, GridValueFunction V,
                     ValueIterationOptions options) {
  return [model, cost, V = std::move(V), options](const Vec& x) {
    return greedy_policy(V, model, cost, x, options);
  };
}

}  // namespace nioc
