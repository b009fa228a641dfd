#include "sgld/gradstats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace sgld::gradstats {

namespace {

HutchinsonEstimate summarize_probes(const std::vector<double>& values) {
  HutchinsonEstimate est;
  est.probes = static_cast<int>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / est.probes;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var = est.probes > 1 ? var / (est.probes - 1) : 0.0;
  est.value = mean;
  est.std_error = std::sqrt(var / est.probes);
  return est;
}

}  // namespace

std::vector<double> GradCovariance::apply(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != dim) throw std::invalid_argument("GradCovariance::apply: size mismatch");
  std::vector<double> coeffs(static_cast<std::size_t>(sample_count));
  for (int i = 0; i < sample_count; ++i) {
    const auto row = centered_row(i);
    double acc = 0.0;
    for (int j = 0; j < dim; ++j) acc += row[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j)];
    coeffs[static_cast<std::size_t>(i)] = acc;
  }
  std::vector<double> out(static_cast<std::size_t>(dim), 0.0);
  for (int i = 0; i < sample_count; ++i) {
    const double c = coeffs[static_cast<std::size_t>(i)];
    if (c == 0.0) continue;
    const auto row = centered_row(i);
    for (int j = 0; j < dim; ++j) out[static_cast<std::size_t>(j)] += c * row[static_cast<std::size_t>(j)];
  }
  return out;
}

GradBatch per_sample_grads(const models::SampleProblem& problem, std::span<const double> params) {
  std::vector<int> all(static_cast<std::size_t>(problem.count));
  std::iota(all.begin(), all.end(), 0);
  return per_sample_grads(problem, params, all);
}

GradBatch per_sample_grads(const models::SampleProblem& problem, std::span<const double> params,
                           std::span<const int> indices) {
  if (static_cast<int>(params.size()) != problem.dim)
    throw std::invalid_argument("per_sample_grads: parameter dimension mismatch");
  GradBatch batch;
  batch.count = static_cast<int>(indices.size());
  batch.dim = problem.dim;
  if (batch.count < 1) throw std::invalid_argument("per_sample_grads: need at least one sample");
  batch.rows.resize(static_cast<std::size_t>(batch.count) * batch.dim);
  for (int i = 0; i < batch.count; ++i) {
    std::span<double> row{batch.rows.data() + static_cast<std::size_t>(i) * batch.dim,
                          static_cast<std::size_t>(batch.dim)};
    problem.loss_grad(params, indices[static_cast<std::size_t>(i)], row);
    for (double g : row)
      if (!std::isfinite(g)) throw std::runtime_error("per_sample_grads: non-finite gradient entry");
  }
  return batch;
}

GradCovariance empirical_grad_cov(const GradBatch& batch, int dense_cap) {
  if (batch.count < 1) throw std::invalid_argument("empirical_grad_cov: empty batch");
  GradCovariance cov;
  cov.sample_count = batch.count;
  cov.dim = batch.dim;
  cov.mean.assign(static_cast<std::size_t>(batch.dim), 0.0);
  for (int i = 0; i < batch.count; ++i) {
    const auto row = batch.row(i);
    for (int j = 0; j < batch.dim; ++j) cov.mean[static_cast<std::size_t>(j)] += row[static_cast<std::size_t>(j)];
  }
  for (double& m : cov.mean) m /= batch.count;

  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(batch.count));
  cov.centered.resize(static_cast<std::size_t>(batch.count) * batch.dim);
  double trace = 0.0;
  for (int i = 0; i < batch.count; ++i) {
    const auto row = batch.row(i);
    double* out = cov.centered.data() + static_cast<std::size_t>(i) * batch.dim;
    for (int j = 0; j < batch.dim; ++j) {
      const double centered = (row[static_cast<std::size_t>(j)] - cov.mean[static_cast<std::size_t>(j)]) * inv_sqrt_n;
      out[j] = centered;
      trace += centered * centered;
    }
  }
  cov.trace = trace;

  if (batch.dim <= dense_cap) {
    linalg::SymMatrix dense(batch.dim);
    for (int a = 0; a < batch.dim; ++a)
      for (int b = a; b < batch.dim; ++b) {
        double acc = 0.0;
        for (int i = 0; i < batch.count; ++i)
          acc += cov.centered[static_cast<std::size_t>(i) * batch.dim + a] *
                 cov.centered[static_cast<std::size_t>(i) * batch.dim + b];
        dense.set(a, b, acc);
      }
    cov.dense = std::move(dense);
  }
  return cov;
}

TopkEigen topk_eigen(const GradCovariance& cov, int k) {
  const int limit = std::min(cov.sample_count, cov.dim);
  if (k < 1 || k > limit) throw std::invalid_argument("topk_eigen: k out of range");

  TopkEigen out;
  out.eigenvalues.resize(static_cast<std::size_t>(k));
  out.vectors.resize(static_cast<std::size_t>(k));
  // Relative to the top eigenvalue: round-off ghosts in the Gram matrix must
  // not be mapped back (their directions come out unnormalized).
  const double zero_tol = 1e-14 * std::max(cov.trace, 1.0);

  // Both Gram forms of the centered factor share the nonzero spectrum;
  // decompose the smaller one.
  if (cov.dim <= cov.sample_count) {
    linalg::SymMatrix dense(cov.dim);
    if (cov.dense.has_value()) {
      dense = *cov.dense;
    } else {
      for (int a = 0; a < cov.dim; ++a)
        for (int b = a; b < cov.dim; ++b) {
          double acc = 0.0;
          for (int i = 0; i < cov.sample_count; ++i)
            acc += cov.centered[static_cast<std::size_t>(i) * cov.dim + a] *
                   cov.centered[static_cast<std::size_t>(i) * cov.dim + b];
          dense.set(a, b, acc);
        }
    }
    const linalg::EigenDecomp ed = linalg::sym_eigen(dense);
    for (int j = 0; j < k; ++j) {
      out.eigenvalues[static_cast<std::size_t>(j)] = std::max(ed.eigenvalues[static_cast<std::size_t>(j)], 0.0);
      out.vectors[static_cast<std::size_t>(j)] = ed.column(j);
    }
    return out;
  }

  linalg::SymMatrix gram(cov.sample_count);
  for (int i = 0; i < cov.sample_count; ++i) {
    const auto ri = cov.centered_row(i);
    for (int j = i; j < cov.sample_count; ++j) {
      const auto rj = cov.centered_row(j);
      double acc = 0.0;
      for (int a = 0; a < cov.dim; ++a) acc += ri[static_cast<std::size_t>(a)] * rj[static_cast<std::size_t>(a)];
      gram.set(i, j, acc);
    }
  }
  const linalg::EigenDecomp ed = linalg::sym_eigen(gram);
  const double ghost_tol = std::max(zero_tol, 1e-12 * std::max(ed.eigenvalues.front(), 0.0));

  for (int j = 0; j < k; ++j) {
    const double lambda = ed.eigenvalues[static_cast<std::size_t>(j)];
    auto& v = out.vectors[static_cast<std::size_t>(j)];
    v.assign(static_cast<std::size_t>(cov.dim), 0.0);
    if (lambda <= ghost_tol) {
      out.eigenvalues[static_cast<std::size_t>(j)] = 0.0;
      continue;
    }
    out.eigenvalues[static_cast<std::size_t>(j)] = lambda;
    // map the Gram eigenvector back: v = factor^T u / sqrt(lambda)
    const double inv_root = 1.0 / std::sqrt(lambda);
    for (int i = 0; i < cov.sample_count; ++i) {
      const double u = ed.basis_at(i, j);
      if (u == 0.0) continue;
      const auto row = cov.centered_row(i);
      for (int a = 0; a < cov.dim; ++a) v[static_cast<std::size_t>(a)] += inv_root * u * row[static_cast<std::size_t>(a)];
    }
    // guard the scale against round-off in the Gram spectrum
    double norm_sq = 0.0;
    for (double x : v) norm_sq += x * x;
    if (norm_sq > 0.0) {
      const double inv_norm = 1.0 / std::sqrt(norm_sq);
      for (double& x : v) x *= inv_norm;
    }
  }
  return out;
}

double eigen_ratio(const GradCovariance& cov, int i, int j) {
  if (i < 1 || j <= i) throw std::invalid_argument("eigen_ratio: need 1 <= i < j");
  const int limit = std::min(cov.sample_count, cov.dim);
  if (j > limit) throw std::invalid_argument("eigen_ratio: j exceeds available eigenpairs");
  const TopkEigen top = topk_eigen(cov, j);
  const double num = top.eigenvalues[static_cast<std::size_t>(i - 1)];
  const double den = top.eigenvalues[static_cast<std::size_t>(j - 1)];
  if (den <= 0.0) return std::numeric_limits<double>::infinity();
  return num / den;
}

HessianTraces hessian_trace_hutchinson(const models::SampleProblem& problem,
                                       std::span<const double> params, const GradCovariance& cov,
                                       int probes, double fd_step, linalg::Rng& rng) {
  if (probes < 1) throw std::invalid_argument("hessian_trace_hutchinson: probes must be positive");
  const int d = problem.dim;
  if (static_cast<int>(params.size()) != d)
    throw std::invalid_argument("hessian_trace_hutchinson: parameter dimension mismatch");
  if (fd_step <= 0.0) {
    double max_abs = 0.0;
    for (double w : params) max_abs = std::max(max_abs, std::abs(w));
    fd_step = 1e-3 * (1.0 + max_abs);
  }

  std::vector<double> shifted(params.begin(), params.end());
  auto hessian_quadratic = [&](std::span<const double> v) {
    // v^T H v via central differences of the mean gradient along v.
    for (int i = 0; i < d; ++i) shifted[static_cast<std::size_t>(i)] = params[static_cast<std::size_t>(i)] + fd_step * v[static_cast<std::size_t>(i)];
    const std::vector<double> plus = mean_grad(problem, shifted);
    for (int i = 0; i < d; ++i) shifted[static_cast<std::size_t>(i)] = params[static_cast<std::size_t>(i)] - fd_step * v[static_cast<std::size_t>(i)];
    const std::vector<double> minus = mean_grad(problem, shifted);
    double acc = 0.0;
    for (int i = 0; i < d; ++i) {
      const double hv = (plus[static_cast<std::size_t>(i)] - minus[static_cast<std::size_t>(i)]) / (2.0 * fd_step);
      if (!std::isfinite(hv)) throw std::runtime_error("hessian_trace_hutchinson: non-finite probe");
      acc += v[static_cast<std::size_t>(i)] * hv;
    }
    return acc;
  };

  std::vector<double> rademacher_vals(static_cast<std::size_t>(probes));
  std::vector<double> cov_vals(static_cast<std::size_t>(probes));
  std::vector<double> v(static_cast<std::size_t>(d));
  std::vector<double> z(static_cast<std::size_t>(cov.sample_count));
  for (int p = 0; p < probes; ++p) {
    for (double& x : v) x = (rng.next() & 1u) ? 1.0 : -1.0;
    rademacher_vals[static_cast<std::size_t>(p)] = hessian_quadratic(v);

    // v ~ N(0, cov) through the factor: v = factor^T z with z standard normal.
    for (double& x : z) x = rng.gaussian();
    std::fill(v.begin(), v.end(), 0.0);
    for (int i = 0; i < cov.sample_count; ++i) {
      const double zi = z[static_cast<std::size_t>(i)];
      const auto row = cov.centered_row(i);
      for (int a = 0; a < d; ++a) v[static_cast<std::size_t>(a)] += zi * row[static_cast<std::size_t>(a)];
    }
    cov_vals[static_cast<std::size_t>(p)] = hessian_quadratic(v);
  }

  HessianTraces traces;
  traces.hessian_trace = summarize_probes(rademacher_vals);
  traces.hessian_cov_trace = summarize_probes(cov_vals);
  return traces;
}

GradCovariance population_cov_estimate(const models::SampleProblem& pool_problem,
                                       std::span<const double> params, int dense_cap) {
  if (pool_problem.count < 1) throw std::invalid_argument("population_cov_estimate: empty pool");
  return empirical_grad_cov(per_sample_grads(pool_problem, params), dense_cap);
}

double mean_loss(const models::SampleProblem& problem, std::span<const double> params) {
  double acc = 0.0;
  for (int i = 0; i < problem.count; ++i) acc += problem.loss(params, i);
  return acc / problem.count;
}

std::vector<double> mean_grad(const models::SampleProblem& problem, std::span<const double> params) {
  std::vector<int> all(static_cast<std::size_t>(problem.count));
  std::iota(all.begin(), all.end(), 0);
  return mean_grad(problem, params, all);
}

std::vector<double> mean_grad(const models::SampleProblem& problem, std::span<const double> params,
                              std::span<const int> indices) {
  if (indices.empty()) throw std::invalid_argument("mean_grad: empty index set");
  std::vector<double> acc(static_cast<std::size_t>(problem.dim), 0.0);
  std::vector<double> grad(static_cast<std::size_t>(problem.dim));
  for (int idx : indices) {
    problem.loss_grad(params, idx, grad);
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += grad[j];
  }
  const double inv = 1.0 / static_cast<double>(indices.size());
  for (double& x : acc) x *= inv;
  return acc;
}

}  // namespace sgld::gradstats
