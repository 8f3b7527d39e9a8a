#include "nioc/systems.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace nioc {

Polynomial& Polynomial::add(std::vector<int> exponents, double coefficient) {
  if (exponents.size() != num_vars) throw std::invalid_argument("Polynomial::add: arity mismatch");
  terms.emplace_back(MultiIndex(std::move(exponents)), coefficient);
  return *this;
}

int Polynomial::degree() const {
  int d = 0;
  for (const auto& [idx, c] : terms)
    if (c != 0.0) d = std::max(d, idx.degree());
  return d;
}

double Polynomial::operator()(std::span<const double> point) const {
  double v = 0.0;
  for (const auto& [idx, c] : terms) v += c * idx.eval(point);
  return v;
}

Vec Polynomial::coefficients(const MultiIndexSet& set) const {
  Vec out = Vec::Zero(static_cast<Eigen::Index>(set.size()));
  for (const auto& [idx, c] : terms) out[static_cast<Eigen::Index>(set.position(idx))] += c;
  return out;
}

TruncatedGaussian::TruncatedGaussian(Vec mean_, Vec std_, double bound_)
    : mean(std::move(mean_)), std(std::move(std_)), bound(bound_) {
  if (mean.size() != std.size()) throw std::invalid_argument("TruncatedGaussian: size mismatch");
  for (Eigen::Index i = 0; i < std.size(); ++i)
    if (!(std[i] >= 0.0)) throw std::invalid_argument("TruncatedGaussian: std must be >= 0");
  if (!(bound > 0.0)) throw std::invalid_argument("TruncatedGaussian: bound must be > 0");
}

TruncatedGaussian TruncatedGaussian::isotropic(std::size_t dimension, double s, double bound) {
  const auto n = static_cast<Eigen::Index>(dimension);
  return TruncatedGaussian(Vec::Zero(n), Vec::Constant(n, s), bound);
}

Vec sample_truncated_gaussian(const TruncatedGaussian& dist, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec out(dist.mean.size());
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const double s = dist.std[i];
    if (s == 0.0) {
      out[i] = dist.mean[i];
      continue;
    }
    double z;
    do {
      z = s * normal(rng);
    } while (std::abs(z) > dist.bound);
    out[i] = dist.mean[i] + z;
  }
  return out;
}

std::vector<double> normal_moments_1d(double mean, double s, double bound, int max_k) {
  if (max_k < 0) throw std::invalid_argument("normal_moments_1d: max_k < 0");
  std::vector<double> out(static_cast<std::size_t>(max_k + 1));
  if (s == 0.0) {
    double p = 1.0;
    for (int k = 0; k <= max_k; ++k, p *= mean) out[static_cast<std::size_t>(k)] = p;
    return out;
  }
  // Standardized moments on [-c, c].
  std::vector<double> z(static_cast<std::size_t>(max_k + 1), 0.0);
  z[0] = 1.0;
  const double c = bound / s;
  const bool truncated = std::isfinite(c);
  const double mass = truncated ? std::erf(c / std::numbers::sqrt2) : 1.0;
  const double log_pdf_c = truncated ? -0.5 * c * c - 0.5 * std::log(2.0 * std::numbers::pi) : 0.0;
  for (int k = 2; k <= max_k; k += 2) {
    double v = (k - 1) * z[static_cast<std::size_t>(k - 2)];
    if (truncated) {
      // 2 c^{k-1} pdf(c) / mass, evaluated in log space.
      const double log_term = (k - 1) * std::log(c) + log_pdf_c;
      v -= 2.0 * std::exp(log_term) / mass;
    }
    z[static_cast<std::size_t>(k)] = v;
  }
  for (int k = 0; k <= max_k; ++k) {
    double acc = 0.0;
    for (int j = 0; j <= k; j += 2)
      acc += static_cast<double>(binomial(k, j)) * std::pow(mean, k - j) * std::pow(s, j) *
             z[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(k)] = acc;
  }
  return out;
}

NoiseModel::NoiseModel(NoiseKind kind, Vec mean, Vec s, double bound, int max_degree)
    : kind_(kind), mean_(std::move(mean)), std_(std::move(s)), bound_(bound), max_degree_(max_degree) {
  if (mean_.size() != std_.size()) throw std::invalid_argument("NoiseModel: size mismatch");
  if (max_degree_ < 0) throw std::invalid_argument("NoiseModel: max_degree < 0");
  for (Eigen::Index i = 0; i < std_.size(); ++i)
    if (!(std_[i] >= 0.0)) throw std::invalid_argument("NoiseModel: std must be >= 0");
  table_.reserve(static_cast<std::size_t>(mean_.size()));
  for (Eigen::Index i = 0; i < mean_.size(); ++i)
    table_.push_back(normal_moments_1d(mean_[i], std_[i], bound_, max_degree_));
}

NoiseModel NoiseModel::gaussian(Vec mean, Vec s, int max_degree) {
  return NoiseModel(NoiseKind::gaussian, std::move(mean), std::move(s),
                    std::numeric_limits<double>::infinity(), max_degree);
}

NoiseModel NoiseModel::isotropic_gaussian(std::size_t dimension, double s, int max_degree) {
  const auto n = static_cast<Eigen::Index>(dimension);
  return gaussian(Vec::Zero(n), Vec::Constant(n, s), max_degree);
}

NoiseModel NoiseModel::truncated(const TruncatedGaussian& dist, int max_degree) {
  return NoiseModel(NoiseKind::truncated_gaussian, dist.mean, dist.std, dist.bound, max_degree);
}

double NoiseModel::moment_1d(std::size_t axis, int k) const {
  if (axis >= table_.size()) throw std::out_of_range("NoiseModel: axis out of range");
  if (k < 0 || k > max_degree_)
    throw std::out_of_range("NoiseModel: moment degree exceeds max_degree");
  return table_[axis][static_cast<std::size_t>(k)];
}

double NoiseModel::moment(const MultiIndex& d) const {
  if (d.dimension() != dimension()) throw std::invalid_argument("NoiseModel: dimension mismatch");
  if (d.degree() > max_degree_)
    throw std::out_of_range("NoiseModel: moment degree " + std::to_string(d.degree()) +
                            " exceeds max_degree " + std::to_string(max_degree_));
  double v = 1.0;
  for (std::size_t j = 0; j < d.dimension(); ++j) v *= table_[j][static_cast<std::size_t>(d[j])];
  return v;
}

NoiseModel NoiseModel::marginal(std::size_t count) const {
  if (count == 0 || count > dimension()) throw std::invalid_argument("NoiseModel: bad marginal");
  const auto n = static_cast<Eigen::Index>(count);
  return NoiseModel(kind_, mean_.head(n), std_.head(n), bound_, max_degree_);
}

Vec NoiseModel::sample(Rng& rng) const {
  if (kind_ == NoiseKind::truncated_gaussian)
    return sample_truncated_gaussian(TruncatedGaussian(mean_, std_, bound_), rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec out(mean_.size());
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = mean_[i] + std_[i] * normal(rng);
  return out;
}

double noise_moment(const NoiseModel& model, const MultiIndex& d) { return model.moment(d); }

BoxSpace::BoxSpace(Box box) : Box(std::move(box)) {
  for (Eigen::Index i = 0; i < lo.size(); ++i)
    if (!(lo[i] < hi[i])) throw std::invalid_argument("BoxSpace: requires lo < hi");
}

Vec BoxSpace::clip(const Vec& point, bool* clipped) const {
  Vec out = point.cwiseMax(lo).cwiseMin(hi);
  if (clipped) *clipped = !(out.array() == point.array()).all();
  return out;
}

CostParams::CostParams(Vec theta) : theta_ell(std::move(theta)) {
  if (!theta_ell.allFinite()) throw std::invalid_argument("CostParams: non-finite entry");
}

Vec CostParams::normalized() const {
  const double n = theta_ell.norm();
  if (n == 0.0) throw std::domain_error("CostParams: cannot normalize a zero vector");
  return theta_ell / n;
}

int SystemModel::drift_degree() const {
  int d = 0;
  for (const auto& p : drift) d = std::max(d, p.degree());
  return d;
}

namespace {

Vec joint(const Vec& x, const Vec& a) {
  Vec eta(x.size() + a.size());
  eta << x, a;
  return eta;
}

}  // namespace

Vec SystemModel::drift_at(const Vec& x, const Vec& a) const {
  const Vec eta = joint(x, a);
  Vec out(static_cast<Eigen::Index>(n_x));
  for (std::size_t i = 0; i < n_x; ++i)
    out[static_cast<Eigen::Index>(i)] = drift[i](std::span<const double>(eta.data(), eta.size()));
  return out;
}

Vec SystemModel::features_at(const Vec& x, const Vec& a) const {
  const Vec eta = joint(x, a);
  Vec out(static_cast<Eigen::Index>(cost_features.size()));
  for (std::size_t i = 0; i < cost_features.size(); ++i)
    out[static_cast<Eigen::Index>(i)] =
        cost_features[i](std::span<const double>(eta.data(), eta.size()));
  return out;
}

double SystemModel::cost_at(const CostParams& cost, const Vec& x, const Vec& a) const {
  return cost.theta_ell.dot(features_at(x, a));
}

void SystemModel::validate() const {
  if (n_x == 0 || n_a == 0) throw std::invalid_argument("SystemModel: empty state or action");
  if (state_space.dimension() != n_x || action_space.dimension() != n_a)
    throw std::invalid_argument("SystemModel: box dimension mismatch");
  if (drift.size() != n_x) throw std::invalid_argument("SystemModel: drift arity mismatch");
  for (const auto& p : drift) {
    if (p.num_vars != n_eta()) throw std::invalid_argument("SystemModel: drift variable count");
    for (const auto& [idx, c] : p.terms)
      if (!std::isfinite(c)) throw std::invalid_argument("SystemModel: non-finite drift coefficient");
  }
  for (const auto& p : cost_features)
    if (p.num_vars != n_eta()) throw std::invalid_argument("SystemModel: feature variable count");
  if (!(discount > 0.0 && discount < 1.0))
    throw std::invalid_argument("SystemModel: discount must lie in (0, 1)");
  if (process_noise.dimension() != n_x)
    throw std::invalid_argument("SystemModel: process noise dimension mismatch");
  if (initial_state.dimension() != n_x)
    throw std::invalid_argument("SystemModel: initial distribution dimension mismatch");
}

std::vector<std::vector<double>> SystemModel::process_moments(int max_k) const {
  std::vector<std::vector<double>> out;
  out.reserve(n_x);
  for (std::size_t j = 0; j < n_x; ++j) {
    const auto k = static_cast<Eigen::Index>(j);
    out.push_back(normal_moments_1d(process_noise.mean[k], process_noise.std[k],
                                    process_noise.bound, max_k));
  }
  return out;
}

Vec step(const SystemModel& model, const Vec& x, const Vec& a, Rng& rng, bool* clipped) {
  constexpr double slack = 1e-9;
  if (!model.state_space.contains(std::span<const double>(x.data(), x.size()), slack))
    throw std::invalid_argument("step: state outside the state box");
  if (!model.action_space.contains(std::span<const double>(a.data(), a.size()), slack))
    throw std::invalid_argument("step: action outside the action box");
  Vec next = model.drift_at(x, a) + sample_truncated_gaussian(model.process_noise, rng);
  return model.state_space.clip(next, clipped);
}

namespace {

void check_expansion(const SystemModel& model, int r_degree) {
  const int deg = r_degree * std::max(1, model.drift_degree());
  if (deg > model.expansion_degree_cap || r_degree > model.expansion_degree_cap)
    throw std::overflow_error("conditional_poly_expectation: expansion degree " +
                              std::to_string(deg) + " exceeds cap " +
                              std::to_string(model.expansion_degree_cap));
}

// E[(f + w)^k] for a scalar component with known moments of w.
double shifted_power_expectation(double f, int k, const std::vector<double>& w) {
  double acc = 0.0;
  double fp = 1.0;
  for (int j = 0; j <= k; ++j, fp *= f)
    acc += static_cast<double>(binomial(k, j)) * fp * w[static_cast<std::size_t>(k - j)];
  return acc;
}

}  // namespace

double conditional_poly_expectation(const SystemModel& model, const MultiIndex& r_index,
                                    const Vec& x, const Vec& a) {
  if (r_index.dimension() != model.n_x)
    throw std::invalid_argument("conditional_poly_expectation: index dimension mismatch");
  check_expansion(model, r_index.degree());
  const Vec f = model.drift_at(x, a);
  const auto w = model.process_moments(r_index.degree());
  // Components of w are independent, so the expectation factorizes per axis.
  double v = 1.0;
  for (std::size_t j = 0; j < model.n_x; ++j)
    v *= shifted_power_expectation(f[static_cast<Eigen::Index>(j)], r_index[j], w[j]);
  return v;
}

Vec conditional_poly_expectations(const SystemModel& model, const MultiIndexSet& set,
                                  const Vec& x, const Vec& a) {
  if (set.dimension() != model.n_x)
    throw std::invalid_argument("conditional_poly_expectations: index dimension mismatch");
  check_expansion(model, set.max_degree());
  const Vec f = model.drift_at(x, a);
  const int p = set.max_degree();
  const auto w = model.process_moments(p);
  std::vector<std::vector<double>> per_axis(model.n_x);
  for (std::size_t j = 0; j < model.n_x; ++j)
    for (int k = 0; k <= p; ++k)
      per_axis[j].push_back(shifted_power_expectation(f[static_cast<Eigen::Index>(j)], k, w[j]));
  Vec out(static_cast<Eigen::Index>(set.size()));
  for (std::size_t i = 0; i < set.size(); ++i) {
    double v = 1.0;
    for (std::size_t j = 0; j < model.n_x; ++j) v *= per_axis[j][static_cast<std::size_t>(set[i][j])];
    out[static_cast<Eigen::Index>(i)] = v;
  }
  return out;
}

std::pair<std::vector<double>, double> temperature_coefficients(const TemperatureConstants& c) {
  // T = offset + scale x, P = power_scale u.
  const double k = c.dt / (c.heat_capacity * c.temp_scale);
  const double rad = c.emissivity * c.stefan_boltzmann * c.area;
  const double conv = c.convection * c.area;
  std::vector<double> a(5, 0.0);
  a[1] = 1.0;
  // Convection: -k * conv * (scale x + offset - ambient).
  a[0] -= k * conv * (c.temp_offset - c.ambient);
  a[1] -= k * conv * c.temp_scale;
  // Radiation: -k * rad * ((offset + scale x)^4 - ambient^4).
  for (int i = 0; i <= 4; ++i)
    a[static_cast<std::size_t>(i)] -= k * rad * static_cast<double>(binomial(4, i)) *
                                      std::pow(c.temp_offset, 4 - i) * std::pow(c.temp_scale, i);
  a[0] += k * rad * std::pow(c.ambient, 4);
  const double b = k * c.power_scale;
  return {a, b};
}

double temperature_physical_step(double t, double p, const TemperatureConstants& c) {
  const double losses = c.convection * c.area * (t - c.ambient) +
                        c.emissivity * c.stefan_boltzmann * c.area *
                            (std::pow(t, 4) - std::pow(c.ambient, 4));
  return t + c.dt / c.heat_capacity * (p - losses);
}

SystemModel make_linear_system() {
  SystemModel m;
  m.name = "linear";
  m.n_x = 2;
  m.n_a = 1;
  m.state_space = BoxSpace(Box::symmetric(2, 1.0));
  m.action_space = BoxSpace(Box::symmetric(1, 1.0));
  // x1' = x1 + 0.1 x2 ; x2' = x2 + 0.1 u
  Polynomial p1(3), p2(3);
  p1.add({1, 0, 0}, 1.0).add({0, 1, 0}, 0.1);
  p2.add({0, 1, 0}, 1.0).add({0, 0, 1}, 0.1);
  m.drift = {p1, p2};
  m.process_noise = TruncatedGaussian::isotropic(2, 0.01, 0.1);
  Polynomial f1(3), f2(3), f3(3);
  f1.add({2, 0, 0}, 1.0);
  f2.add({0, 2, 0}, 1.0);
  f3.add({0, 0, 2}, 1.0);
  m.cost_features = {f1, f2, f3};
  m.discount = 0.9;
  m.initial_state = TruncatedGaussian::isotropic(2, 0.3, 0.9);
  m.validate();
  return m;
}

SystemModel make_temperature_system() {
  SystemModel m;
  m.name = "temperature";
  m.n_x = 1;
  m.n_a = 1;
  m.state_space = BoxSpace(Box::symmetric(1, 1.0));
  m.action_space = BoxSpace(Box::symmetric(1, 1.0));
  const auto [a, b] = temperature_coefficients();
  Polynomial p(2);
  for (int i = 0; i <= 4; ++i) p.add({i, 0}, a[static_cast<std::size_t>(i)]);
  p.add({0, 1}, b);
  m.drift = {p};
  m.process_noise = TruncatedGaussian::isotropic(1, 0.01, 0.1);
  // (x - 0.75)^2 and (u + 1)^2
  constexpr double x_ref = 0.75;
  constexpr double u_ref = -1.0;
  Polynomial f1(2), f2(2);
  f1.add({2, 0}, 1.0).add({1, 0}, -2.0 * x_ref).add({0, 0}, x_ref * x_ref);
  f2.add({0, 2}, 1.0).add({0, 1}, -2.0 * u_ref).add({0, 0}, u_ref * u_ref);
  m.cost_features = {f1, f2};
  m.discount = 0.9;
  m.initial_state = TruncatedGaussian::isotropic(1, 0.3, 0.9);
  m.validate();
  return m;
}

SystemModel make_system(const std::string& name) {
  if (name == "linear") return make_linear_system();
  if (name == "temperature") return make_temperature_system();
  throw std::invalid_argument("unknown system preset '" + name + "'");
}

}  // namespace nioc
