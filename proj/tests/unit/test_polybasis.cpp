#include "doctest.h"
#include "oracles.hpp"

#include "nioc/polybasis.hpp"

#include <algorithm>
#include <random>

using namespace nioc;

namespace {

MultiIndex mi(std::vector<int> e) { return MultiIndex(std::move(e)); }

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST_CASE("enumerate_indices small cases") {
  const auto s1 = enumerate_indices(1, 2);
  REQUIRE(s1.size() == 3);
  CHECK(s1[0] == mi({0}));
  CHECK(s1[1] == mi({1}));
  CHECK(s1[2] == mi({2}));

  const auto s2 = enumerate_indices(2, 1);
  REQUIRE(s2.size() == 3);
  CHECK(s2[0] == mi({0, 0}));
  CHECK(s2[1] == mi({0, 1}));
  CHECK(s2[2] == mi({1, 0}));

  CHECK(enumerate_indices(2, 2).size() == 6);
}

TEST_CASE("cardinality is binomial(n + d, d)") {
  for (std::size_t n = 1; n <= 4; ++n)
    for (int d = 0; d <= 10; ++d) {
      // count by brute force over the cube {0..d}^n
      std::size_t count = 0;
      std::vector<int> e(n, 0);
      while (true) {
        int sum = 0;
        for (int v : e) sum += v;
        if (sum <= d) ++count;
        std::size_t k = 0;
        while (k < n && ++e[k] > d) e[k++] = 0;
        if (k == n) break;
      }
      CHECK(MultiIndexSet(n, d).size() == count);
      CHECK(binomial(static_cast<int>(n) + d, d) == count);
    }
}

TEST_CASE("graded lex is a strict total order and the set is sorted") {
  const MultiIndexSet s(3, 5);
  CHECK(s[0] == MultiIndex::zero(3));
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      const bool lt = s[i] < s[j], gt = s[j] < s[i];
      if (i == j)
        CHECK((!lt && !gt));
      else
        CHECK(lt != gt);
      if (i < j) {
        CHECK(lt);
        CHECK(s[i].degree() <= s[j].degree());
      }
    }
  std::vector<MultiIndex> v = s.indices();
  std::mt19937 rng(3);
  std::shuffle(v.begin(), v.end(), rng);
  std::sort(v.begin(), v.end());
  CHECK(v == s.indices());
  std::sort(v.begin(), v.end());
  CHECK(v == s.indices());
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(s.position(s[i]) == i);
  CHECK_THROWS_AS((void)s.position(mi({6, 0, 0})), std::out_of_range);
}

TEST_CASE("multi_binomial") {
  CHECK(multi_binomial(mi({2, 1}), mi({1, 1})) == 2);
  CHECK(multi_binomial(mi({3, 2}), mi({3, 2})) == 1);
  CHECK(multi_binomial(mi({3, 0}), mi({1, 1})) == 0);
  CHECK(multi_binomial(mi({4, 3}), mi({2, 1})) == 6 * 3);
}

TEST_CASE("eval_basis for monomials") {
  const Box box = Box::symmetric(1, 1.0);
  const PolyBasis b = PolyBasis::monomial(MultiIndexSet(1, 2), box);
  const Vec v = eval_basis(b, vec({0.5}));
  CHECK(v[0] == doctest::Approx(1.0));
  CHECK(v[1] == doctest::Approx(0.5));
  CHECK(v[2] == doctest::Approx(0.25));

  const PolyBasis c = PolyBasis::monomial(MultiIndexSet(2, 0), Box::symmetric(2, 1.0));
  const Vec w = eval_basis(c, vec({0.3, -7.0}));
  REQUIRE(w.size() == 1);
  CHECK(w[0] == 1.0);
}

TEST_CASE("lagrange basis is cardinal on its nodes") {
  for (std::size_t n = 1; n <= 3; ++n)
    for (int d = 1; d <= 4; ++d) {
      const Box box(Vec::Constant(static_cast<Eigen::Index>(n), -2.0), Vec::Constant(static_cast<Eigen::Index>(n), 3.0));
      const PolyBasis b = PolyBasis::lagrange(MultiIndexSet(n, d), box);
      REQUIRE(b.nodes().size() == b.size());
      for (std::size_t j = 0; j < b.size(); ++j) {
        const Vec v = eval_basis(b, b.nodes()[j]);
        for (Eigen::Index i = 0; i < v.size(); ++i)
          CHECK(v[i] == doctest::Approx(i == static_cast<Eigen::Index>(j) ? 1.0 : 0.0).epsilon(1e-9));
        CHECK(box.contains(std::span<const double>(b.nodes()[j].data(), n)));
      }
    }
}

TEST_CASE("integrate_basis_over_box") {
  const PolyBasis m = PolyBasis::monomial(MultiIndexSet(1, 2), Box::symmetric(1, 1.0));
  const Vec I = integrate_basis_over_box(m, Box::symmetric(1, 1.0));
  CHECK(I[0] == doctest::Approx(2.0));
  CHECK(I[1] == doctest::Approx(0.0));
  CHECK(I[2] == doctest::Approx(2.0 / 3.0));

  const Box flat(vec({0.5, -1.0}), vec({0.5, 1.0}));
  const Vec z = integrate_basis_over_box(PolyBasis::monomial(MultiIndexSet(2, 3), flat), flat);
  CHECK(z.cwiseAbs().maxCoeff() == 0.0);

  // three Chebyshev-Lobatto nodes on [-1, 1]: sum of integrals is the box
  // volume, and each integral equals B times the monomial integrals
  const Box unit = Box::symmetric(1, 1.0);
  const std::vector<double> cgl = chebyshev_lobatto(3, -1.0, 1.0);
  std::vector<Vec> nodes;
  for (double x : cgl) nodes.push_back(vec({x}));
  const PolyBasis lag = PolyBasis::lagrange_on_nodes(MultiIndexSet(1, 2), unit, nodes);
  const Vec Il = integrate_basis_over_box(lag, unit);
  CHECK(Il.sum() == doctest::Approx(2.0));
  Mat V(3, 3);
  for (int j = 0; j < 3; ++j)
    for (int a = 0; a < 3; ++a) V(j, a) = std::pow(cgl[static_cast<std::size_t>(j)], a);
  const Vec mono = vec({2.0, 0.0, 2.0 / 3.0});
  const Vec expect = V.transpose().inverse() * mono;
  for (int i = 0; i < 3; ++i) CHECK(Il[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  // Clenshaw-Curtis weights for 3 points
  CHECK(Il[0] == doctest::Approx(1.0 / 3.0));
  CHECK(Il[1] == doctest::Approx(4.0 / 3.0));
}

TEST_CASE("integrals agree with tensor Gauss-Legendre quadrature") {
  const Box box(vec({-1.0, 0.0, 2.0}), vec({0.5, 2.0, 2.5}));
  const MultiIndexSet set(3, 6);
  const Vec I = integrate_monomials_over_box(set, box);
  std::vector<oracle::Rule> rules;
  for (int k = 0; k < 3; ++k) rules.push_back(oracle::gauss_legendre(8, box.lo[k], box.hi[k]));
  Vec Q = Vec::Zero(static_cast<Eigen::Index>(set.size()));
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      for (std::size_t k = 0; k < 8; ++k) {
        const double p[3] = {rules[0].nodes[i], rules[1].nodes[j], rules[2].nodes[k]};
        const double w = rules[0].weights[i] * rules[1].weights[j] * rules[2].weights[k];
        Q += w * set.eval_monomials(p);
      }
  CHECK((I - Q).cwiseAbs().maxCoeff() <= 1e-10);

  // Lagrange basis on the unit cube, where B is well scaled
  const Box cube = Box::symmetric(3, 1.0);
  const PolyBasis lag = PolyBasis::lagrange(set, cube);
  const Vec Il = integrate_basis_over_box(lag, cube);
  const oracle::Rule gl = oracle::gauss_legendre(8);
  Vec Ql = Vec::Zero(static_cast<Eigen::Index>(set.size()));
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      for (std::size_t k = 0; k < 8; ++k) {
        const double p[3] = {gl.nodes[i], gl.nodes[j], gl.nodes[k]};
        Ql += gl.weights[i] * gl.weights[j] * gl.weights[k] * eval_basis(lag, p);
      }
  CHECK((Il - Ql).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("change_of_basis") {
  const Box unit = Box::symmetric(1, 1.0);
  const PolyBasis m = PolyBasis::monomial(MultiIndexSet(2, 3), Box::symmetric(2, 1.0));
  CHECK(change_of_basis(m).matrix().isIdentity(0.0));

  const PolyBasis two = PolyBasis::lagrange_on_nodes(MultiIndexSet(1, 1), unit, {vec({-1.0}), vec({1.0})});
  const Mat& B = change_of_basis(two).matrix();
  CHECK(B(0, 0) == doctest::Approx(0.5));
  CHECK(B(0, 1) == doctest::Approx(-0.5));
  CHECK(B(1, 0) == doctest::Approx(0.5));
  CHECK(B(1, 1) == doctest::Approx(0.5));

  const PolyBasis lag = PolyBasis::lagrange(MultiIndexSet(2, 6), Box::symmetric(2, 1.0));
  const Mat& L = change_of_basis(lag).matrix();
  CHECK((L.inverse() * L - Mat::Identity(L.rows(), L.cols())).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK(change_of_basis(lag).condition_number() >= 1.0);
}

TEST_CASE("lagrange evaluation equals B times monomials") {
  std::mt19937_64 rng(11);
  for (std::size_t n = 1; n <= 2; ++n)
    for (int d = 1; d <= 10; ++d) {
      const Box box = Box::symmetric(n, 1.0);
      const MultiIndexSet set(n, d);
      const PolyBasis lag = PolyBasis::lagrange(set, box);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      for (int t = 0; t < 5; ++t) {
        Vec p(static_cast<Eigen::Index>(n));
        for (auto& x : p) x = u(rng);
        const Vec direct = eval_basis(lag, p);
        const Vec via = lag.change().matrix() * set.eval_monomials(std::span<const double>(p.data(), n));
        CHECK((direct - via).cwiseAbs().maxCoeff() <= 1e-8);
        CHECK(direct.sum() == doctest::Approx(1.0).epsilon(1e-8));
      }
    }
}

TEST_CASE("degenerate nodes are rejected") {
  const Box unit = Box::symmetric(1, 1.0);
  CHECK_THROWS(PolyBasis::lagrange_on_nodes(MultiIndexSet(1, 1), unit, {vec({0.2}), vec({0.2})}));
  PolyBasisOptions strict;
  strict.max_condition = 1.0;
  CHECK_THROWS(PolyBasis::lagrange(MultiIndexSet(1, 4), unit, strict));
}

TEST_CASE("chebyshev_lobatto") {
  const auto p = chebyshev_lobatto(5, -2.0, 2.0);
  REQUIRE(p.size() == 5);
  std::vector<double> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted.front() == doctest::Approx(-2.0));
  CHECK(sorted.back() == doctest::Approx(2.0));
  CHECK(sorted[2] == doctest::Approx(0.0));
  CHECK(sorted[3] == doctest::Approx(2.0 * std::cos(std::numbers::pi / 4.0)));
}
