#include "nioc/polybasis.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace nioc {

MultiIndex::MultiIndex(std::vector<int> exponents) : exponents_(std::move(exponents)) {
  for (int e : exponents_) {
    if (e < 0) throw std::invalid_argument("MultiIndex: negative exponent");
    degree_ += e;
  }
}

MultiIndex MultiIndex::zero(std::size_t dimension) {
  return MultiIndex(std::vector<int>(dimension, 0));
}

bool MultiIndex::dominates(const MultiIndex& other) const {
  if (other.dimension() != dimension())
    throw std::invalid_argument("MultiIndex: dimension mismatch");
  for (std::size_t i = 0; i < exponents_.size(); ++i)
    if (other.exponents_[i] > exponents_[i]) return false;
  return true;
}

MultiIndex MultiIndex::operator-(const MultiIndex& other) const {
  if (!dominates(other)) throw std::invalid_argument("MultiIndex: negative difference");
  std::vector<int> e(exponents_);
  for (std::size_t i = 0; i < e.size(); ++i) e[i] -= other.exponents_[i];
  return MultiIndex(std::move(e));
}

MultiIndex MultiIndex::operator+(const MultiIndex& other) const {
  if (other.dimension() != dimension())
    throw std::invalid_argument("MultiIndex: dimension mismatch");
  std::vector<int> e(exponents_);
  for (std::size_t i = 0; i < e.size(); ++i) e[i] += other.exponents_[i];
  return MultiIndex(std::move(e));
}

std::strong_ordering MultiIndex::operator<=>(const MultiIndex& other) const {
  if (auto c = degree_ <=> other.degree_; c != 0) return c;
  return exponents_ <=> other.exponents_;
}

double MultiIndex::eval(std::span<const double> point) const {
  if (point.size() != exponents_.size())
    throw std::invalid_argument("MultiIndex::eval: dimension mismatch");
  double v = 1.0;
  for (std::size_t i = 0; i < exponents_.size(); ++i)
    for (int k = 0; k < exponents_[i]; ++k) v *= point[i];
  return v;
}

std::string MultiIndex::to_string() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < exponents_.size(); ++i) os << (i ? "," : "") << exponents_[i];
  os << ')';
  return os.str();
}

namespace {

// Appends all exponent vectors with the given total degree, lexicographically
// ascending (first coordinate most significant).
void append_degree(std::vector<int>& prefix, std::size_t dimension, int remaining,
                   std::vector<MultiIndex>& out) {
  if (prefix.size() + 1 == dimension) {
    prefix.push_back(remaining);
    out.emplace_back(prefix);
    prefix.pop_back();
    return;
  }
  for (int e = 0; e <= remaining; ++e) {
    prefix.push_back(e);
    append_degree(prefix, dimension, remaining - e, out);
    prefix.pop_back();
  }
}

}  // namespace

MultiIndexSet::MultiIndexSet(std::size_t dimension, int max_degree)
    : dimension_(dimension), max_degree_(max_degree) {
  if (dimension == 0) throw std::invalid_argument("MultiIndexSet: dimension must be >= 1");
  if (max_degree < 0) throw std::invalid_argument("MultiIndexSet: max_degree must be >= 0");
  indices_.reserve(binomial(static_cast<int>(dimension) + max_degree, max_degree));
  std::vector<int> prefix;
  for (int k = 0; k <= max_degree; ++k) append_degree(prefix, dimension, k, indices_);
}

std::size_t MultiIndexSet::position(const MultiIndex& d) const {
  auto it = std::lower_bound(indices_.begin(), indices_.end(), d);
  if (it == indices_.end() || !(*it == d))
    throw std::out_of_range("MultiIndexSet: index " + d.to_string() + " not in set");
  return static_cast<std::size_t>(it - indices_.begin());
}

bool MultiIndexSet::contains(const MultiIndex& d) const {
  if (d.dimension() != dimension_) return false;
  return std::binary_search(indices_.begin(), indices_.end(), d);
}

Vec MultiIndexSet::eval_monomials(std::span<const double> point) const {
  if (point.size() != dimension_)
    throw std::invalid_argument("eval_monomials: dimension mismatch");
  // Power table avoids recomputing products per index.
  const int p = max_degree_;
  std::vector<double> powers(dimension_ * static_cast<std::size_t>(p + 1));
  for (std::size_t j = 0; j < dimension_; ++j) {
    powers[j * (p + 1)] = 1.0;
    for (int k = 1; k <= p; ++k) powers[j * (p + 1) + k] = powers[j * (p + 1) + k - 1] * point[j];
  }
  Vec out(indices_.size());
  for (std::size_t i = 0; i < indices_.size(); ++i) {
    double v = 1.0;
    for (std::size_t j = 0; j < dimension_; ++j) v *= powers[j * (p + 1) + indices_[i][j]];
    out[static_cast<Eigen::Index>(i)] = v;
  }
  return out;
}

MultiIndexSet enumerate_indices(std::size_t dimension, int max_degree) {
  return MultiIndexSet(dimension, max_degree);
}

std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
  return r;
}

std::uint64_t multi_binomial(const MultiIndex& d, const MultiIndex& d_prime) {
  if (d.dimension() != d_prime.dimension())
    throw std::invalid_argument("multi_binomial: dimension mismatch");
  std::uint64_t r = 1;
  for (std::size_t j = 0; j < d.dimension(); ++j) {
    if (d_prime[j] > d[j]) return 0;
    r *= binomial(d[j], d_prime[j]);
  }
  return r;
}

Box::Box(Vec lo_, Vec hi_) : lo(std::move(lo_)), hi(std::move(hi_)) {
  if (lo.size() != hi.size()) throw std::invalid_argument("Box: bound size mismatch");
  for (Eigen::Index i = 0; i < lo.size(); ++i)
    if (!(lo[i] <= hi[i])) throw std::invalid_argument("Box: lo must not exceed hi");
}

Box Box::symmetric(std::size_t dimension, double half_width) {
  const auto n = static_cast<Eigen::Index>(dimension);
  return Box(Vec::Constant(n, -half_width), Vec::Constant(n, half_width));
}

bool Box::contains(std::span<const double> point, double slack) const {
  if (point.size() != dimension()) return false;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    if (point[i] < lo[k] - slack || point[i] > hi[k] + slack) return false;
  }
  return true;
}

Box Box::product(const Box& first, const Box& second) {
  Vec lo(first.lo.size() + second.lo.size());
  Vec hi(lo.size());
  lo << first.lo, second.lo;
  hi << first.hi, second.hi;
  return Box(std::move(lo), std::move(hi));
}

BasisChangeMatrix::BasisChangeMatrix(Mat matrix, double condition_number)
    : matrix_(std::move(matrix)), condition_(condition_number) {
  if (matrix_.rows() != matrix_.cols())
    throw std::invalid_argument("BasisChangeMatrix: matrix must be square");
  if (!std::isfinite(condition_))
    throw std::runtime_error("BasisChangeMatrix: singular change of basis");
}

PolyBasis::PolyBasis(BasisKind kind, MultiIndexSet index_set, Box domain,
                     std::vector<Vec> nodes, BasisChangeMatrix change)
    : kind_(kind),
      index_set_(std::move(index_set)),
      domain_(std::move(domain)),
      nodes_(std::move(nodes)),
      change_(std::move(change)) {}

PolyBasis PolyBasis::monomial(MultiIndexSet index_set, Box domain) {
  if (domain.dimension() != index_set.dimension())
    throw std::invalid_argument("PolyBasis: domain dimension mismatch");
  const auto n = static_cast<Eigen::Index>(index_set.size());
  return PolyBasis(BasisKind::monomial, std::move(index_set), std::move(domain), {},
                   BasisChangeMatrix(Mat::Identity(n, n), 1.0));
}

std::vector<double> chebyshev_lobatto(int count, double lo, double hi) {
  if (count < 1) throw std::invalid_argument("chebyshev_lobatto: count must be >= 1");
  if (count == 1) return {0.5 * (lo + hi)};
  std::vector<double> pts(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    // Ascending order: -cos(pi k / (count-1)).
    const double t = -std::cos(std::numbers::pi * k / (count - 1));
    pts[static_cast<std::size_t>(k)] = 0.5 * (lo + hi) + 0.5 * (hi - lo) * t;
  }
  // Pin the midpoint exactly for odd counts.
  if (count % 2 == 1) pts[static_cast<std::size_t>(count / 2)] = 0.5 * (lo + hi);
  return pts;
}

namespace {

BasisChangeMatrix lagrange_change(const MultiIndexSet& set, const std::vector<Vec>& nodes,
                                  double max_condition) {
  const auto n = static_cast<Eigen::Index>(set.size());
  Mat vander(n, n);  // row j: monomials at node j
  for (Eigen::Index j = 0; j < n; ++j) {
    const Vec& p = nodes[static_cast<std::size_t>(j)];
    vander.row(j) = set.eval_monomials(std::span<const double>(p.data(), p.size())).transpose();
  }
  Eigen::JacobiSVD<Mat> svd(vander);
  const auto& s = svd.singularValues();
  const double smin = s[n - 1];
  const double cond = smin > 0 ? s[0] / smin : std::numeric_limits<double>::infinity();
  if (!(cond <= max_condition)) {
    std::ostringstream os;
    os << "Lagrange basis: Vandermonde condition number " << cond << " exceeds " << max_condition;
    throw std::runtime_error(os.str());
  }
  // phi(eta_j) = B * mono(eta_j) = e_j  =>  B * vander^T = I.
  Mat b = vander.transpose().partialPivLu().inverse();
  return BasisChangeMatrix(std::move(b), cond);
}

}  // namespace

PolyBasis PolyBasis::lagrange_on_nodes(MultiIndexSet index_set, Box domain,
                                       std::vector<Vec> nodes,
                                       const PolyBasisOptions& options) {
  if (domain.dimension() != index_set.dimension())
    throw std::invalid_argument("PolyBasis: domain dimension mismatch");
  if (nodes.size() != index_set.size())
    throw std::invalid_argument("PolyBasis: node count must equal basis size");
  for (const Vec& p : nodes)
    if (static_cast<std::size_t>(p.size()) != index_set.dimension())
      throw std::invalid_argument("PolyBasis: node dimension mismatch");
  auto change = lagrange_change(index_set, nodes, options.max_condition);
  return PolyBasis(BasisKind::lagrange, std::move(index_set), std::move(domain),
                   std::move(nodes), std::move(change));
}

PolyBasis PolyBasis::lagrange(MultiIndexSet index_set, Box domain,
                              const PolyBasisOptions& options) {
  const std::size_t dim = index_set.dimension();
  if (domain.dimension() != dim) throw std::invalid_argument("PolyBasis: domain dimension mismatch");
  const int per_axis = index_set.max_degree() + 1;

  std::vector<std::vector<double>> axes(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    const auto k = static_cast<Eigen::Index>(j);
    axes[j] = chebyshev_lobatto(per_axis, domain.lo[k], domain.hi[k]);
  }
  std::size_t total = 1;
  for (std::size_t j = 0; j < dim; ++j) total *= axes[j].size();

  std::vector<Vec> candidates;
  candidates.reserve(total);
  std::vector<std::size_t> counter(dim, 0);
  for (std::size_t c = 0; c < total; ++c) {
    Vec p(static_cast<Eigen::Index>(dim));
    for (std::size_t j = 0; j < dim; ++j) p[static_cast<Eigen::Index>(j)] = axes[j][counter[j]];
    candidates.push_back(std::move(p));
    for (std::size_t j = dim; j-- > 0;) {
      if (++counter[j] < axes[j].size()) break;
      counter[j] = 0;
    }
  }

  const auto rows = static_cast<Eigen::Index>(index_set.size());
  Mat vander(rows, static_cast<Eigen::Index>(total));  // columns: candidates
  for (std::size_t c = 0; c < total; ++c)
    vander.col(static_cast<Eigen::Index>(c)) = index_set.eval_monomials(
        std::span<const double>(candidates[c].data(), candidates[c].size()));

  Eigen::ColPivHouseholderQR<Mat> qr(vander);
  if (qr.rank() < rows)
    throw std::runtime_error("PolyBasis: candidate grid is not unisolvent");
  std::vector<std::size_t> picked;
  picked.reserve(index_set.size());
  for (Eigen::Index i = 0; i < rows; ++i)
    picked.push_back(static_cast<std::size_t>(qr.colsPermutation().indices()[i]));
  // Keep nodes in grid order so the basis is independent of pivot ordering.
  std::sort(picked.begin(), picked.end());
  std::vector<Vec> nodes;
  nodes.reserve(picked.size());
  for (std::size_t c : picked) nodes.push_back(candidates[c]);
  return lagrange_on_nodes(std::move(index_set), std::move(domain), std::move(nodes), options);
}

Vec eval_basis(const PolyBasis& basis, std::span<const double> point) {
  if (point.size() != basis.dimension())
    throw std::invalid_argument("eval_basis: point dimension mismatch");
  Vec mono = basis.index_set().eval_monomials(point);
  if (basis.kind() == BasisKind::monomial) return mono;
  return basis.change().matrix() * mono;
}

Vec integrate_monomials_over_box(const MultiIndexSet& index_set, const Box& domain) {
  if (domain.dimension() != index_set.dimension())
    throw std::invalid_argument("integrate: domain dimension mismatch");
  Vec out(static_cast<Eigen::Index>(index_set.size()));
  for (std::size_t i = 0; i < index_set.size(); ++i) {
    double v = 1.0;
    for (std::size_t j = 0; j < index_set.dimension(); ++j) {
      const auto k = static_cast<Eigen::Index>(j);
      const int e = index_set[i][j] + 1;
      v *= (std::pow(domain.hi[k], e) - std::pow(domain.lo[k], e)) / e;
    }
    out[static_cast<Eigen::Index>(i)] = v;
  }
  return out;
}

Vec integrate_basis_over_box(const PolyBasis& basis, const Box& domain) {
  Vec mono = integrate_monomials_over_box(basis.index_set(), domain);
  if (basis.kind() == BasisKind::monomial) return mono;
  return basis.change().matrix() * mono;
}

const BasisChangeMatrix& change_of_basis(const PolyBasis& basis) { return basis.change(); }

}  // namespace nioc
