#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "sgld/bound.hpp"
#include "sgld/noise.hpp"

using namespace sgld;
using bound::GaussianStep;
using linalg::Rng;
using linalg::SymMatrix;

namespace {

std::vector<double> mean_of(const std::vector<std::vector<double>>& rows, std::span<const int> subset) {
  std::vector<double> out(rows.front().size(), 0.0);
  for (int idx : subset)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += rows[static_cast<std::size_t>(idx)][j];
  for (double& x : out) x /= static_cast<double>(subset.size());
  return out;
}

SymMatrix single_draw_cov(const std::vector<std::vector<double>>& rows) {
  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(rows.front().size());
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  for (const auto& row : rows)
    for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += row[static_cast<std::size_t>(j)] / n;
  SymMatrix cov(d);
  for (int a = 0; a < d; ++a)
    for (int b = a; b < d; ++b) {
      double acc = 0.0;
      for (const auto& row : rows)
        acc += (row[static_cast<std::size_t>(a)] - mean[static_cast<std::size_t>(a)]) *
               (row[static_cast<std::size_t>(b)] - mean[static_cast<std::size_t>(b)]) / n;
      cov.set(a, b, acc);
    }
  return cov;
}

// Exhaustive (V, J) average of the one-step KL between the leave-one-out
// prior conditional and the SGLD posterior conditional, for per-sample
// gradients `rows`. J is identified with its excluded index.
double enumerate_fixed_prior_kl(const std::vector<std::vector<double>>& rows, const SymMatrix& noise_cov,
                                double sigma_t, double eta, int batch) {
  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(rows.front().size());
  const SymMatrix prior_cov = SymMatrix::identity(d).scaled(sigma_t);
  double total = 0.0;
  int cases = 0;
  for (int excluded = 0; excluded < n; ++excluded) {
    std::vector<int> j_set;
    for (int i = 0; i < n; ++i)
      if (i != excluded) j_set.push_back(i);
    oracles::for_each_subset(n, batch, [&](std::span<const int> v) {
      const std::vector<double> posterior_drift = mean_of(rows, v);

      std::vector<int> kept;
      for (int idx : v)
        if (idx != excluded) kept.push_back(idx);
      std::vector<double> prior_drift(static_cast<std::size_t>(d), 0.0);
      if (static_cast<int>(kept.size()) == batch) {
        prior_drift = posterior_drift;
      } else {
        if (!kept.empty()) {
          const auto kept_mean = mean_of(rows, kept);
          for (int j = 0; j < d; ++j)
            prior_drift[static_cast<std::size_t>(j)] +=
                (static_cast<double>(batch - 1) / batch) * kept_mean[static_cast<std::size_t>(j)];
        }
        const auto j_mean = mean_of(rows, j_set);
        for (int j = 0; j < d; ++j)
          prior_drift[static_cast<std::size_t>(j)] += j_mean[static_cast<std::size_t>(j)] / batch;
      }

      GaussianStep prior{prior_drift, prior_cov};
      GaussianStep posterior{posterior_drift, noise_cov};
      for (double& x : prior.mean) x *= -eta;
      for (double& x : posterior.mean) x *= -eta;
      total += bound::kl_gaussian(prior, posterior);
      ++cases;
    });
  }
  return total / cases;
}

}  // namespace

TEST_CASE("kl_gaussian: identical Gaussians and the isotropic mean gap") {
  Rng rng(3);
  const SymMatrix cov = oracles::random_psd(3, rng, 0.2);
  const GaussianStep p{{0.1, -0.2, 0.3}, cov};
  CHECK(bound::kl_gaussian(p, p) == doctest::Approx(0.0).epsilon(1e-12));

  const SymMatrix eye = SymMatrix::identity(2);
  const GaussianStep a{{0.0, 0.0}, eye};
  const GaussianStep b{{0.6, -0.8}, eye};
  CHECK(bound::kl_gaussian(a, b) == doctest::Approx(0.5 * (0.36 + 0.64)).epsilon(1e-12));
}

TEST_CASE("kl_gaussian: matches a Monte Carlo cross-entropy estimate within 1%") {
  const SymMatrix cov_p = SymMatrix::diagonal(std::vector<double>{1.0, 2.0});
  const SymMatrix cov_q = SymMatrix::diagonal(std::vector<double>{2.0, 1.0});
  const GaussianStep p{{0.0, 0.0}, cov_p};
  const GaussianStep q{{1.0, 0.0}, cov_q};
  const double exact = bound::kl_gaussian(p, q);

  // E_P[ln p - ln q] accumulated over draws from P
  const auto ed_p = linalg::sym_eigen(cov_p);
  auto log_density = [](const std::vector<double>& x, const GaussianStep& g, const SymMatrix& cov) {
    double quad = 0.0;
    double logdet = 0.0;
    for (int i = 0; i < cov.dim(); ++i) {
      const double diff = x[static_cast<std::size_t>(i)] - g.mean[static_cast<std::size_t>(i)];
      quad += diff * diff / cov(i, i);  // both covariances are diagonal here
      logdet += std::log(cov(i, i));
    }
    return -0.5 * (quad + logdet);
  };
  Rng rng(2024);
  const int draws = 1000000;
  double acc = 0.0;
  for (int i = 0; i < draws; ++i) {
    const auto x = linalg::sample_gaussian(p.mean, ed_p, rng);
    acc += log_density(x, p, cov_p) - log_density(x, q, cov_q);
  }
  const double mc = acc / draws;
  CHECK(std::abs(mc - exact) < 0.01 * exact);
}

TEST_CASE("kl_gaussian: nonnegative on randomized instances, zero only at equality") {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const int d = 2 + static_cast<int>(rng.below(3));
    const SymMatrix cov_p = oracles::random_psd(d, rng, 0.2);
    const SymMatrix cov_q = oracles::random_psd(d, rng, 0.2);
    std::vector<double> mp(static_cast<std::size_t>(d));
    std::vector<double> mq(static_cast<std::size_t>(d));
    for (double& x : mp) x = rng.gaussian();
    for (double& x : mq) x = rng.gaussian();
    const double kl = bound::kl_gaussian({mp, cov_p}, {mq, cov_q});
    CHECK(kl >= -1e-12);
  }
}

TEST_CASE("kl_gaussian: singular q beyond the floor is a domain error") {
  const SymMatrix singular = SymMatrix::diagonal(std::vector<double>{1.0, 0.0});
  const GaussianStep p{{0.0, 0.0}, SymMatrix::identity(2)};
  const GaussianStep q{{0.0, 0.0}, singular};
  CHECK_THROWS_AS(bound::kl_gaussian(p, q, 0.0), std::domain_error);
  CHECK(bound::kl_gaussian(p, q, 0.5) > 0.0);  // floored: fine
}

TEST_CASE("sampling_constant: arithmetic and monotonicity") {
  CHECK(bound::sampling_constant(2, 1) == doctest::Approx(2.0));
  CHECK(bound::sampling_constant(4, 2) == doctest::Approx((1.0 / 8.0) * (16.0 / 9.0)));
  CHECK_THROWS_AS(bound::sampling_constant(1, 1), std::domain_error);

  double previous = bound::sampling_constant(3, 2);
  for (int n = 4; n <= 40; ++n) {
    const double value = bound::sampling_constant(n, 2);
    CHECK(value < previous);
    previous = value;
  }
}

TEST_CASE("sampling_constant: exhaustive two-step sampling identity (N=4, b=2)") {
  // points z_i in R^2; U of size b, V of size N-1 enumerated exhaustively
  const int n = 4;
  const int b = 2;
  std::vector<std::vector<double>> z = {{0.3, -1.2}, {1.7, 0.4}, {-0.5, 0.9}, {0.8, 0.1}};
  const SymMatrix cov = single_draw_cov(z);

  SymMatrix lhs(2);
  int u_count = 0;
  oracles::for_each_subset(n, b, [&](std::span<const int> u) {
    ++u_count;
    for (int excluded = 0; excluded < n; ++excluded) {
      // V = [n] minus excluded; U cap V^c = {excluded} when excluded in U
      bool hit = false;
      for (int idx : u) hit = hit || idx == excluded;
      if (!hit) continue;
      std::vector<int> v_set;
      for (int i = 0; i < n; ++i)
        if (i != excluded) v_set.push_back(i);
      const auto mean_v = mean_of(z, v_set);
      const auto& z_excluded = z[static_cast<std::size_t>(excluded)];
      for (int a = 0; a < 2; ++a)
        for (int c = a; c < 2; ++c)
          lhs.set(a, c, lhs(a, c) + (1.0 / (b * b)) *
                                        (mean_v[static_cast<std::size_t>(a)] - z_excluded[static_cast<std::size_t>(a)]) *
                                        (mean_v[static_cast<std::size_t>(c)] - z_excluded[static_cast<std::size_t>(c)]));
    }
  });
  const int total_cases = u_count * n;
  const double constant = bound::sampling_constant(n, b);
  for (int a = 0; a < 2; ++a)
    for (int c = 0; c < 2; ++c)
      CHECK(std::abs(lhs(a, c) / total_cases - constant * cov(a, c)) < 1e-12);
}

TEST_CASE("step_kl_fixed_prior: exact zero and scalar reduction") {
  const double sigma = 0.3;
  const SymMatrix noise_cov = SymMatrix::identity(3).scaled(sigma);
  CHECK(std::abs(bound::step_kl_fixed_prior(noise_cov, SymMatrix(3), sigma, 0.1, 10, 2)) < 1e-12);

  // scalar case: noise sI, grad cov gI
  const double s = 0.7;
  const double g = 0.4;
  const double eta = 0.12;
  const int n = 20;
  const int b = 4;
  const int d = 3;
  const double expected = 0.5 * (d * sigma / s + d * std::log(s) - d - d * std::log(sigma)) +
                          0.5 * eta * eta * bound::sampling_constant(n, b) * d * g / s;
  const double actual = bound::step_kl_fixed_prior(SymMatrix::identity(d).scaled(s),
                                                   SymMatrix::identity(d).scaled(g), sigma, eta, n, b);
  CHECK(actual == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("step_kl_fixed_prior: equals the exhaustive (V,J) enumeration") {
  Rng rng(11);
  const int n = 4;
  const int b = 2;
  const int d = 2;
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(d)));
  for (auto& row : rows)
    for (double& x : row) x = rng.gaussian();

  const SymMatrix noise_cov = oracles::random_psd(d, rng, 0.3);
  const double sigma_t = 0.6;
  const double eta = 0.15;

  const double closed = bound::step_kl_fixed_prior(noise_cov, single_draw_cov(rows), sigma_t, eta, n, b);
  const double enumerated = enumerate_fixed_prior_kl(rows, noise_cov, sigma_t, eta, b);
  CHECK(std::abs(closed - enumerated) < 1e-9);
}

TEST_CASE("step_kl_greedy: miss is zero, identity closed form, grid argmin") {
  const SymMatrix eye = SymMatrix::identity(2);
  CHECK(bound::step_kl_greedy(eye, eye, 0.1, 10, 2, false) == 0.0);

  const double eta = 0.2;
  const int n = 10;
  const int b = 2;
  const int d = 2;
  const double expected = 0.5 * eta * eta * n * d / (b * (n - 1.0) * (n - 1.0));
  CHECK(bound::step_kl_greedy(eye, eye, eta, n, b, true) == doctest::Approx(expected).epsilon(1e-12));

  // argmin over the trace-c diagonal family sits at greedy_optimal_cov
  const SymMatrix pop = SymMatrix::diagonal(std::vector<double>{4.0, 1.0});
  const double c = 3.0;
  double best_t = -1.0;
  double best_value = 1e300;
  for (int i = 1; i < 1000; ++i) {
    const double t = i / 1000.0;
    const SymMatrix candidate = SymMatrix::diagonal(std::vector<double>{c * t, c * (1.0 - t)});
    const double value = bound::step_kl_greedy(candidate, pop, eta, n, b, true);
    if (value < best_value) {
      best_value = value;
      best_t = t;
    }
  }
  const SymMatrix greedy = noise::greedy_optimal_cov(pop, c);
  CHECK(std::abs(c * best_t - greedy(0, 0)) <= c * 1e-3 + 1e-9);
}

TEST_CASE("fixed-prior optimality: random trace-preserving perturbations do not improve A_t") {
  Rng rng(13);
  const int d = 3;
  const SymMatrix emp = oracles::random_psd(d, rng, 0.1);
  const double sigma_t = 1.0;
  const double eta = 0.1;
  const int n = 100;
  const int b = 10;
  const double c = 2.0;
  const auto [opt, report] = noise::fixed_prior_optimal_cov(emp, sigma_t, eta, n, b, c);
  const double base_value = bound::step_kl_fixed_prior(opt, emp, sigma_t, eta, n, b);

  for (int direction = 0; direction < 20; ++direction) {
    SymMatrix perturb(d);
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j) perturb.set(i, j, rng.gaussian());
    const double shift = perturb.trace() / d;  // traceless so the budget is preserved
    for (int i = 0; i < d; ++i) perturb.set(i, i, perturb(i, i) - shift);
    const double norm = perturb.frobenius_norm();

    for (double magnitude : {1e-4, 1e-3, 1e-2}) {
      SymMatrix candidate = opt;
      for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j)
          candidate.set(i, j, opt(i, j) + magnitude * c / d * perturb(i, j) / norm);
      const auto ed = linalg::sym_eigen(candidate);
      if (ed.eigenvalues.back() <= 0.0) continue;  // left the PD cone; not a valid comparison
      const double value = bound::step_kl_fixed_prior(candidate, emp, sigma_t, eta, n, b);
      CHECK(value >= base_value - 1e-10);
    }
  }
}

TEST_CASE("BoundLedger and accumulate_bound") {
  bound::BoundLedger ledger(0.0, 1.0);
  CHECK(bound::accumulate_bound(ledger) == 0.0);

  ledger.add(1, 0.32, bound::KlVariant::kGreedy);
  CHECK(bound::accumulate_bound(ledger) == doctest::Approx(std::sqrt(0.16)).epsilon(1e-12));

  // doubling every term scales the bound by sqrt(2)
  bound::BoundLedger doubled(0.0, 1.0);
  doubled.add(1, 0.64, bound::KlVariant::kGreedy);
  CHECK(bound::accumulate_bound(doubled) ==
        doctest::Approx(std::sqrt(2.0) * bound::accumulate_bound(ledger)).epsilon(1e-12));

  // monotone in added terms
  double previous = bound::accumulate_bound(ledger);
  for (int t = 2; t <= 5; ++t) {
    ledger.add(t, 0.05 * t, bound::KlVariant::kGreedy);
    const double value = bound::accumulate_bound(ledger);
    CHECK(value >= previous);
    previous = value;
  }

  CHECK_THROWS_AS(ledger.add(9, -1.0, bound::KlVariant::kGreedy), std::invalid_argument);
}

TEST_CASE("gen_error_measured") {
  const std::vector<double> train{0.5, 0.4, 0.3};
  CHECK(bound::gen_error_measured(train, train) == std::vector<double>{0.0, 0.0, 0.0});
  const std::vector<double> test{0.8, 0.7, 0.6};
  const auto diff = bound::gen_error_measured(train, test);
  for (double x : diff) CHECK(x == doctest::Approx(0.3));
  CHECK_THROWS_AS(bound::gen_error_measured(train, std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("enumeration equivalence across small (N, b, d) combinations") {
  Rng rng(17);
  for (int n = 3; n <= 5; ++n) {
    for (int b = 1; b <= 2; ++b) {
      for (int d = 1; d <= 3; ++d) {
        std::vector<std::vector<double>> rows(static_cast<std::size_t>(n),
                                              std::vector<double>(static_cast<std::size_t>(d)));
        for (auto& row : rows)
          for (double& x : row) x = rng.gaussian();
        const SymMatrix noise_cov = oracles::random_psd(d, rng, 0.4);
        const double sigma_t = 0.8;
        const double eta = 0.1;
        const double closed = bound::step_kl_fixed_prior(noise_cov, single_draw_cov(rows), sigma_t, eta, n, b);
        const double enumerated = enumerate_fixed_prior_kl(rows, noise_cov, sigma_t, eta, b);
        CHECK(std::abs(closed - enumerated) < 1e-9);
      }
    }
  }
}
