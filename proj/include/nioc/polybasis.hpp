#pragma once

#include <Eigen/Dense>

#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace nioc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Exponent vector of a monomial. Entries are non-negative.
class MultiIndex {
 public:
  MultiIndex() = default;
  explicit MultiIndex(std::vector<int> exponents);

  static MultiIndex zero(std::size_t dimension);

  std::size_t dimension() const { return exponents_.size(); }
  int degree() const { return degree_; }
  int operator[](std::size_t i) const { return exponents_[i]; }
  const std::vector<int>& exponents() const { return exponents_; }

  /// True when every component of `other` is <= the matching component here.
  bool dominates(const MultiIndex& other) const;
  MultiIndex operator-(const MultiIndex& other) const;
  MultiIndex operator+(const MultiIndex& other) const;

  /// Graded lexicographic order: total degree first, then plain lexicographic
  /// comparison with the first coordinate most significant (the rightmost
  /// exponent varies fastest when enumerating).
  std::strong_ordering operator<=>(const MultiIndex& other) const;
  bool operator==(const MultiIndex& other) const = default;

  double eval(std::span<const double> point) const;
  std::string to_string() const;

 private:
  std::vector<int> exponents_;
  int degree_ = 0;
};

/// All multi-indices of a given dimension with total degree <= max_degree,
/// in graded lexicographic order. The zero index is always first.
class MultiIndexSet {
 public:
  MultiIndexSet(std::size_t dimension, int max_degree);

  std::size_t dimension() const { return dimension_; }
  int max_degree() const { return max_degree_; }
  std::size_t size() const { return indices_.size(); }
  const MultiIndex& operator[](std::size_t i) const { return indices_[i]; }
  const std::vector<MultiIndex>& indices() const { return indices_; }
  auto begin() const { return indices_.begin(); }
  auto end() const { return indices_.end(); }

  /// Position of `d` in the set; throws std::out_of_range when absent.
  std::size_t position(const MultiIndex& d) const;
  bool contains(const MultiIndex& d) const;

  /// Monomial evaluations eta^d for every d, in set order.
  Vec eval_monomials(std::span<const double> point) const;

 private:
  std::size_t dimension_;
  int max_degree_;
  std::vector<MultiIndex> indices_;
};

MultiIndexSet enumerate_indices(std::size_t dimension, int max_degree);

std::uint64_t binomial(int n, int k);

/// Product of componentwise binomial coefficients C(d_j, d'_j); zero when any
/// d'_j exceeds d_j.
std::uint64_t multi_binomial(const MultiIndex& d, const MultiIndex& d_prime);

/// Axis-aligned box [lo, hi].
struct Box {
  Vec lo;
  Vec hi;

  Box() = default;
  Box(Vec lo_, Vec hi_);
  static Box symmetric(std::size_t dimension, double half_width);

  std::size_t dimension() const { return static_cast<std::size_t>(lo.size()); }
  bool contains(std::span<const double> point, double slack = 0.0) const;
  /// Cartesian product of two boxes (used for X x A).
  static Box product(const Box& first, const Box& second);
};

/// Matrix B with phi = B * phi_mono. Construction fails when B is singular
/// or its condition number exceeds the configured threshold.
class BasisChangeMatrix {
 public:
  BasisChangeMatrix(Mat matrix, double condition_number);

  const Mat& matrix() const { return matrix_; }
  double condition_number() const { return condition_; }

 private:
  Mat matrix_;
  double condition_;
};

enum class BasisKind { monomial, lagrange };

struct PolyBasisOptions {
  double max_condition = 1e12;
};

/// Polynomial basis of total degree <= d on a box. For the Lagrange kind the
/// basis is cardinal on its nodes.
class PolyBasis {
 public:
  static PolyBasis monomial(MultiIndexSet index_set, Box domain);

  /// Lagrange basis whose nodes are a unisolvent subset of the tensor
  /// Chebyshev-Gauss-Lobatto grid, picked by column-pivoted QR of the
  /// candidate Vandermonde matrix.
  static PolyBasis lagrange(MultiIndexSet index_set, Box domain,
                            const PolyBasisOptions& options = {});

  /// Lagrange basis on caller-supplied nodes (one per index-set element).
  static PolyBasis lagrange_on_nodes(MultiIndexSet index_set, Box domain,
                                     std::vector<Vec> nodes,
                                     const PolyBasisOptions& options = {});

  BasisKind kind() const { return kind_; }
  const MultiIndexSet& index_set() const { return index_set_; }
  const Box& domain() const { return domain_; }
  const std::vector<Vec>& nodes() const { return nodes_; }
  std::size_t size() const { return index_set_.size(); }
  std::size_t dimension() const { return index_set_.dimension(); }
  const BasisChangeMatrix& change() const { return change_; }

 private:
  PolyBasis(BasisKind kind, MultiIndexSet index_set, Box domain,
            std::vector<Vec> nodes, BasisChangeMatrix change);

  BasisKind kind_;
  MultiIndexSet index_set_;
  Box domain_;
  std::vector<Vec> nodes_;
  BasisChangeMatrix change_;
};

Vec eval_basis(const PolyBasis& basis, std::span<const double> point);
inline Vec eval_basis(const PolyBasis& basis, const Vec& point) {
  return eval_basis(basis, std::span<const double>(point.data(), point.size()));
}

/// Exact integrals of the monomials of `index_set` over `domain`.
Vec integrate_monomials_over_box(const MultiIndexSet& index_set, const Box& domain);

/// Exact integral of every basis element over `domain`.
Vec integrate_basis_over_box(const PolyBasis& basis, const Box& domain);

const BasisChangeMatrix& change_of_basis(const PolyBasis& basis);

/// Chebyshev-Gauss-Lobatto points on [lo, hi]; `count` >= 1.
std::vector<double> chebyshev_lobatto(int count, double lo, double hi);

}  // namespace nioc
