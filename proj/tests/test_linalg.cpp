#include <doctest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "sgld/linalg.hpp"

using namespace sgld::linalg;

namespace {

double reconstruction_error(const SymMatrix& a, const EigenDecomp& ed) {
  const SymMatrix back = ed.reconstruct();
  return frobenius_distance(a, back) / std::max(a.frobenius_norm(), 1e-300);
}

double orthogonality_residual(const EigenDecomp& ed) {
  double worst = 0.0;
  for (int i = 0; i < ed.dim; ++i)
    for (int j = 0; j < ed.dim; ++j) {
      double dot = 0.0;
      for (int k = 0; k < ed.dim; ++k) dot += ed.basis_at(k, i) * ed.basis_at(k, j);
      worst += (dot - (i == j ? 1.0 : 0.0)) * (dot - (i == j ? 1.0 : 0.0));
    }
  return std::sqrt(worst);
}

}  // namespace

TEST_CASE("SymMatrix validates symmetry and finiteness") {
  CHECK_THROWS_AS(SymMatrix(2, {1.0, 2.0, 3.0, 4.0}), std::invalid_argument);
  CHECK_THROWS_AS(SymMatrix(2, {1.0, std::numeric_limits<double>::quiet_NaN(), 0.0, 1.0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(SymMatrix(2, {1.0, 2.0, 2.0}), std::invalid_argument);
  const SymMatrix ok(2, {1.0, 2.0, 2.0, 4.0});
  CHECK(ok.trace() == doctest::Approx(5.0));
}

TEST_CASE("sym_eigen: identity eigenvalues are all one") {
  const SymMatrix a = SymMatrix::identity(3);
  const EigenDecomp ed = sym_eigen(a);
  for (double lambda : ed.eigenvalues) CHECK(lambda == doctest::Approx(1.0));
  CHECK(reconstruction_error(a, ed) < 1e-9);
  CHECK(orthogonality_residual(ed) < 1e-10);
}

TEST_CASE("sym_eigen: already-diagonal matrix keeps axes up to sign") {
  const SymMatrix a = SymMatrix::diagonal(std::vector<double>{4.0, 1.0});
  const EigenDecomp ed = sym_eigen(a);
  CHECK(ed.eigenvalues[0] == doctest::Approx(4.0));
  CHECK(ed.eigenvalues[1] == doctest::Approx(1.0));
  CHECK(std::abs(ed.basis_at(0, 0)) == doctest::Approx(1.0));
  CHECK(std::abs(ed.basis_at(1, 1)) == doctest::Approx(1.0));
}

TEST_CASE("sym_eigen: random 3x3 matches the closed-form cubic roots") {
  Rng rng(41);
  for (int trial = 0; trial < 25; ++trial) {
    const SymMatrix a = oracles::random_symmetric(3, rng);
    const EigenDecomp ed = sym_eigen(a);
    const auto expected = oracles::sym3_eigenvalues(a);
    for (int i = 0; i < 3; ++i)
      CHECK(std::abs(ed.eigenvalues[static_cast<std::size_t>(i)] - expected[static_cast<std::size_t>(i)]) < 1e-9);
    CHECK(reconstruction_error(a, ed) < 1e-9);
    CHECK(orthogonality_residual(ed) < 1e-10);
  }
}

TEST_CASE("sym_eigen: deterministic for a fixed input") {
  Rng rng(7);
  const SymMatrix a = oracles::random_symmetric(5, rng);
  const EigenDecomp first = sym_eigen(a);
  const EigenDecomp second = sym_eigen(a);
  CHECK(first.eigenvalues == second.eigenvalues);
  CHECK(first.basis == second.basis);
}

TEST_CASE("sym_eigen: rejects nonpositive tolerance") {
  CHECK_THROWS_AS(sym_eigen(SymMatrix::identity(2), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(sym_eigen(SymMatrix::identity(2), -2.0), std::invalid_argument);
}

TEST_CASE("psd_sqrt: identity and diagonal closed forms") {
  CHECK(frobenius_distance(psd_sqrt(SymMatrix::identity(3)), SymMatrix::identity(3)) < 1e-12);
  const SymMatrix root = psd_sqrt(SymMatrix::diagonal(std::vector<double>{4.0, 9.0}));
  CHECK(root(0, 0) == doctest::Approx(2.0));
  CHECK(root(1, 1) == doctest::Approx(3.0));
  CHECK(root(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("psd_sqrt: multiply-back on random PSD input") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const SymMatrix a = oracles::random_psd(4, rng);
    const SymMatrix b = psd_sqrt(a);
    SymMatrix bb(4);
    const auto prod = mat_mul(b, b);
    for (int i = 0; i < 4; ++i)
      for (int j = i; j < 4; ++j) bb.set(i, j, prod[static_cast<std::size_t>(i) * 4 + j]);
    CHECK(frobenius_distance(bb, a) < 1e-8 * std::max(a.frobenius_norm(), 1.0));
    // shared eigenbasis: sqrt(A) commutes with A
    CHECK(commutator_norm(b, a) < 1e-9 * std::max(a.frobenius_norm(), 1.0));
  }
}

TEST_CASE("psd_sqrt: materially negative eigenvalue is a domain error") {
  const SymMatrix indefinite = SymMatrix::diagonal(std::vector<double>{1.0, -0.5});
  CHECK_THROWS_AS(psd_sqrt(indefinite), std::domain_error);
}

TEST_CASE("sample_gaussian: zero covariance returns the mean exactly") {
  Rng rng(3);
  const EigenDecomp cov = sym_eigen(SymMatrix(3));
  const std::vector<double> mean{1.0, -2.0, 0.5};
  CHECK(sample_gaussian(mean, cov, rng) == mean);
}

TEST_CASE("sample_gaussian: identity covariance variance check") {
  Rng rng(123);
  const EigenDecomp cov = sym_eigen(SymMatrix::identity(3));
  const std::vector<double> mean{0.0, 0.0, 0.0};
  const int draws = 100000;
  std::vector<double> sum(3, 0.0);
  std::vector<double> sum_sq(3, 0.0);
  for (int i = 0; i < draws; ++i) {
    const auto x = sample_gaussian(mean, cov, rng);
    for (int j = 0; j < 3; ++j) {
      sum[static_cast<std::size_t>(j)] += x[static_cast<std::size_t>(j)];
      sum_sq[static_cast<std::size_t>(j)] += x[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j)];
    }
  }
  for (int j = 0; j < 3; ++j) {
    const double mean_j = sum[static_cast<std::size_t>(j)] / draws;
    const double var_j = sum_sq[static_cast<std::size_t>(j)] / draws - mean_j * mean_j;
    CHECK(var_j > 0.97);
    CHECK(var_j < 1.03);
  }
}

TEST_CASE("sample_gaussian: rank-deficient direction stays at the mean") {
  Rng rng(5);
  const EigenDecomp cov = sym_eigen(SymMatrix::diagonal(std::vector<double>{4.0, 0.0}));
  const std::vector<double> mean{0.25, -1.5};
  for (int i = 0; i < 50; ++i) {
    const auto x = sample_gaussian(mean, cov, rng);
    CHECK(x[1] == mean[1]);
  }
}

TEST_CASE("sample_gaussian: negative eigenvalue rejected") {
  Rng rng(5);
  EigenDecomp cov = sym_eigen(SymMatrix::identity(2));
  cov.eigenvalues[1] = -0.5;
  CHECK_THROWS_AS(sample_gaussian(std::vector<double>{0.0, 0.0}, cov, rng), std::domain_error);
}

TEST_CASE("sample_gaussian: affine equivariance for scaled identity") {
  const double c = 2.7;
  Rng rng_a(99);
  Rng rng_b(99);
  const EigenDecomp cov = sym_eigen(SymMatrix::identity(4).scaled(c));
  const std::vector<double> mean{1.0, 2.0, 3.0, 4.0};
  const auto sample = sample_gaussian(mean, cov, rng_a);
  for (int i = 0; i < 4; ++i) {
    const double expected = mean[static_cast<std::size_t>(i)] + std::sqrt(c) * rng_b.gaussian();
    CHECK(sample[static_cast<std::size_t>(i)] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("condition_number basics") {
  CHECK(condition_number(SymMatrix::identity(3)) == doctest::Approx(1.0));
  CHECK(condition_number(SymMatrix::diagonal(std::vector<double>{4.0, 1.0})) == doctest::Approx(4.0));
  CHECK_THROWS_AS(condition_number(SymMatrix(2)), std::domain_error);

  Rng rng(17);
  const SymMatrix a = oracles::random_psd(5, rng, 0.1);
  const EigenDecomp ed = sym_eigen(a);
  CHECK(condition_number(a) == doctest::Approx(ed.eigenvalues.front() / ed.eigenvalues.back()));
}

TEST_CASE("Rng: identical seeds give identical streams, split streams differ") {
  Rng a(2024);
  Rng b(2024);
  for (int i = 0; i < 64; ++i) CHECK(a.next() == b.next());
  Rng c = Rng(2024).split(1);
  Rng d = Rng(2024).split(2);
  CHECK(c.next() != d.next());
}

TEST_CASE("Rng::below is in range and unbiased enough") {
  Rng rng(5150);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) ++counts[static_cast<std::size_t>(rng.below(5))];
  for (int count : counts) {
    CHECK(count > 9500);
    CHECK(count < 10500);
  }
}
