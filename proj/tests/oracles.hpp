#pragma once

// Test-only oracles, independent of the solver paths they check: a
// closed-form 3x3 symmetric eigenvalue solver, a projected-gradient
// minimizer for the trace-constrained KL objective, finite differences,
// and subset enumeration.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "sgld/linalg.hpp"

namespace oracles {

using sgld::linalg::EigenDecomp;
using sgld::linalg::Rng;
using sgld::linalg::SymMatrix;

// Roots of the characteristic polynomial of a symmetric 3x3 matrix by the
// trigonometric method, descending.
inline std::array<double, 3> sym3_eigenvalues(const SymMatrix& a) {
  if (a.dim() != 3) throw std::invalid_argument("sym3_eigenvalues: need a 3x3 matrix");
  const double p1 = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
  if (p1 == 0.0) {
    std::array<double, 3> diag{a(0, 0), a(1, 1), a(2, 2)};
    std::sort(diag.begin(), diag.end(), std::greater<>());
    return diag;
  }
  const double q = a.trace() / 3.0;
  double p2 = 2.0 * p1;
  for (int i = 0; i < 3; ++i) p2 += (a(i, i) - q) * (a(i, i) - q);
  const double p = std::sqrt(p2 / 6.0);

  // B = (A - qI)/p, r = det(B)/2 clamped into acos range.
  auto b = [&](int i, int j) { return (a(i, j) - (i == j ? q : 0.0)) / p; };
  const double det_b = b(0, 0) * (b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1)) -
                       b(0, 1) * (b(1, 0) * b(2, 2) - b(1, 2) * b(2, 0)) +
                       b(0, 2) * (b(1, 0) * b(2, 1) - b(1, 1) * b(2, 0));
  const double r = std::clamp(det_b / 2.0, -1.0, 1.0);
  const double phi = std::acos(r) / 3.0;

  const double e1 = q + 2.0 * p * std::cos(phi);
  const double e3 = q + 2.0 * p * std::cos(phi + 2.0 * M_PI / 3.0);
  const double e2 = 3.0 * q - e1 - e3;
  std::array<double, 3> out{e1, e2, e3};
  std::sort(out.begin(), out.end(), std::greater<>());
  return out;
}

// Euclidean projection of v onto {x : x_i >= floor, sum x_i = c}.
inline std::vector<double> simplex_project(std::vector<double> v, double c, double floor) {
  const std::size_t n = v.size();
  const double budget = c - floor * static_cast<double>(n);
  if (budget < 0.0) throw std::invalid_argument("simplex_project: infeasible floor");
  for (double& x : v) x -= floor;
  std::vector<double> u = v;
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  int rho = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cumulative += u[i];
    const double candidate = (cumulative - budget) / static_cast<double>(i + 1);
    if (u[i] - candidate > 0.0) {
      rho = static_cast<int>(i + 1);
      theta = candidate;
    }
  }
  (void)rho;
  for (double& x : v) x = std::max(x - theta, 0.0) + floor;
  return v;
}

// Projected-gradient minimizer of f(G) = tr(G^-1 B) + ln det G over
// {G symmetric PSD, tr G = c}, with Armijo backtracking. Projection happens
// in G's own eigenbasis (exact Frobenius projection onto the spectral
// simplex). Returns the achieved objective value.
struct PgdResult {
  SymMatrix minimizer{1};
  double objective = 0.0;
};

inline double trace_kl_objective(const SymMatrix& g, const SymMatrix& b) {
  const EigenDecomp ed = sgld::linalg::sym_eigen(g);
  double value = 0.0;
  for (int j = 0; j < g.dim(); ++j) {
    const std::vector<double> u = ed.column(j);
    const std::vector<double> bu = b.matvec(u);
    double quad = 0.0;
    for (int i = 0; i < g.dim(); ++i) quad += u[static_cast<std::size_t>(i)] * bu[static_cast<std::size_t>(i)];
    const double lambda = ed.eigenvalues[static_cast<std::size_t>(j)];
    if (lambda <= 0.0) return std::numeric_limits<double>::infinity();
    value += quad / lambda + std::log(lambda);
  }
  return value;
}

inline PgdResult projected_gradient_trace_kl(const SymMatrix& b, double c, int max_iters = 20000) {
  const int d = b.dim();
  const double floor = 1e-10 * c / d;

  auto project = [&](const SymMatrix& m) {
    const EigenDecomp ed = sgld::linalg::sym_eigen(m);
    const std::vector<double> lambdas = simplex_project(ed.eigenvalues, c, floor);
    return ed.reconstruct_with(lambdas);
  };

  SymMatrix g = SymMatrix::identity(d).scaled(c / d);
  double value = trace_kl_objective(g, b);
  double step = 0.5;

  for (int iter = 0; iter < max_iters; ++iter) {
    // grad f = -G^-1 B G^-1 + G^-1, assembled in G's eigenbasis.
    const EigenDecomp ed = sgld::linalg::sym_eigen(g);
    const int dim = g.dim();
    std::vector<double> inv_l(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim; ++i)
      inv_l[static_cast<std::size_t>(i)] = 1.0 / std::max(ed.eigenvalues[static_cast<std::size_t>(i)], floor);
    // M = U^T B U; grad (in basis) = diag(inv_l) - diag(inv_l) M diag(inv_l)
    std::vector<double> m(static_cast<std::size_t>(dim) * dim, 0.0);
    for (int r = 0; r < dim; ++r) {
      const std::vector<double> u = ed.column(r);
      const std::vector<double> bu = b.matvec(u);
      for (int s = 0; s < dim; ++s) {
        const std::vector<double> v = ed.column(s);
        double acc = 0.0;
        for (int i = 0; i < dim; ++i) acc += v[static_cast<std::size_t>(i)] * bu[static_cast<std::size_t>(i)];
        m[static_cast<std::size_t>(r) * dim + s] = acc;
      }
    }
    SymMatrix grad(dim);
    for (int r = 0; r < dim; ++r)
      for (int s = r; s < dim; ++s) {
        double acc = -inv_l[static_cast<std::size_t>(r)] * m[static_cast<std::size_t>(r) * dim + s] *
                     inv_l[static_cast<std::size_t>(s)];
        if (r == s) acc += inv_l[static_cast<std::size_t>(r)];
        // rotate back: grad = U X U^T, assembled entrywise below
        grad.set(r, s, acc);
      }
    // rotate the basis-space gradient back to coordinates
    SymMatrix grad_coords(dim);
    for (int i = 0; i < dim; ++i)
      for (int j = i; j < dim; ++j) {
        double acc = 0.0;
        for (int r = 0; r < dim; ++r)
          for (int s = 0; s < dim; ++s)
            acc += ed.basis_at(i, r) * grad(r, s) * ed.basis_at(j, s);
        grad_coords.set(i, j, acc);
      }

    bool moved = false;
    while (step > 1e-18) {
      SymMatrix candidate = g;
      for (int i = 0; i < dim; ++i)
        for (int j = i; j < dim; ++j) candidate.set(i, j, g(i, j) - step * grad_coords(i, j));
      candidate = project(candidate);
      const double cand_value = trace_kl_objective(candidate, b);
      if (cand_value < value - 1e-16) {
        const double delta = sgld::linalg::frobenius_distance(candidate, g);
        g = candidate;
        value = cand_value;
        moved = true;
        step *= 1.3;
        if (delta < 1e-13 * c) return {g, value};
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  return {g, value};
}

// Central finite-difference gradient of a scalar function.
inline std::vector<double> fd_gradient(const std::function<double(std::span<const double>)>& fn,
                                       std::span<const double> params, double h) {
  std::vector<double> shifted(params.begin(), params.end());
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = shifted[i];
    shifted[i] = saved + h;
    const double plus = fn(shifted);
    shifted[i] = saved - h;
    const double minus = fn(shifted);
    shifted[i] = saved;
    grad[i] = (plus - minus) / (2.0 * h);
  }
  return grad;
}

// Calls fn for every size-k subset of {0..n-1} in lexicographic order.
inline void for_each_subset(int n, int k, const std::function<void(std::span<const int>)>& fn) {
  std::vector<int> indices(static_cast<std::size_t>(k));
  std::iota(indices.begin(), indices.end(), 0);
  if (k == 0) {
    fn({});
    return;
  }
  for (;;) {
    fn(indices);
    int i = k - 1;
    while (i >= 0 && indices[static_cast<std::size_t>(i)] == n - k + i) --i;
    if (i < 0) break;
    ++indices[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < k; ++j)
      indices[static_cast<std::size_t>(j)] = indices[static_cast<std::size_t>(j - 1)] + 1;
  }
}

inline SymMatrix random_psd(int dim, Rng& rng, double ridge = 0.0) {
  std::vector<double> m(static_cast<std::size_t>(dim) * dim);
  for (double& x : m) x = rng.gaussian();
  SymMatrix out(dim);
  for (int i = 0; i < dim; ++i)
    for (int j = i; j < dim; ++j) {
      double acc = i == j ? ridge : 0.0;
      for (int k = 0; k < dim; ++k)
        acc += m[static_cast<std::size_t>(k) * dim + i] * m[static_cast<std::size_t>(k) * dim + j];
      out.set(i, j, acc / dim);
    }
  return out;
}

inline SymMatrix random_symmetric(int dim, Rng& rng) {
  SymMatrix out(dim);
  for (int i = 0; i < dim; ++i)
    for (int j = i; j < dim; ++j) out.set(i, j, rng.gaussian());
  return out;
}

inline int binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  long result = 1;
  for (int i = 0; i < k; ++i) result = result * (n - i) / (i + 1);
  return static_cast<int>(result);
}

}  // namespace oracles

#include "sgld/models.hpp"

namespace oracles {

// Per-sample quadratics l_i(w) = 0.5 w^T A w + g_i^T w: exact smoothness
// constant lambda_max(A), per-sample gradient covariance Cov(g_i).
inline sgld::models::SampleProblem quadratic_problem(const SymMatrix& a,
                                                     std::vector<std::vector<double>> offsets) {
  auto shared_a = std::make_shared<SymMatrix>(a);
  auto shared_offsets = std::make_shared<std::vector<std::vector<double>>>(std::move(offsets));
  sgld::models::SampleProblem problem;
  problem.count = static_cast<int>(shared_offsets->size());
  problem.dim = a.dim();
  problem.loss = [shared_a, shared_offsets](std::span<const double> w, int i) {
    const auto aw = shared_a->matvec(w);
    double value = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j)
      value += 0.5 * w[j] * aw[j] + (*shared_offsets)[static_cast<std::size_t>(i)][j] * w[j];
    return value;
  };
  problem.loss_grad = [shared_a, shared_offsets](std::span<const double> w, int i, std::span<double> grad) {
    const auto aw = shared_a->matvec(w);
    double value = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      grad[j] = aw[j] + (*shared_offsets)[static_cast<std::size_t>(i)][j];
      value += 0.5 * w[j] * aw[j] + (*shared_offsets)[static_cast<std::size_t>(i)][j] * w[j];
    }
    return value;
  };
  return problem;
}

inline std::vector<std::vector<double>> random_offsets(int count, int dim, Rng& rng) {
  std::vector<std::vector<double>> offsets(static_cast<std::size_t>(count),
                                           std::vector<double>(static_cast<std::size_t>(dim)));
  for (auto& row : offsets)
    for (double& x : row) x = rng.gaussian();
  return offsets;
}

}  // namespace oracles
