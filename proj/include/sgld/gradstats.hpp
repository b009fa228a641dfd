#pragma once

#include <optional>
#include <span>
#include <vector>

#include "sgld/linalg.hpp"
#include "sgld/models.hpp"

// Per-sample gradient collection and the spectral statistics the noise
// designs need: the single-draw covariance, a population proxy, top-k
// eigenpairs through the Gram trick, and Hutchinson Hessian-trace estimates.

namespace sgld::gradstats {

struct GradBatch {
  int count = 0;
  int dim = 0;
  std::vector<double> rows;  // count x dim, row i = gradient of sample i

  std::span<const double> row(int i) const {
    return {rows.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
};

// Covariance over a uniform single draw from the batch (1/n normalization),
// kept in factored form: row i of the centered factor is (g_i - mean)/sqrt(n),
// so factor^T * factor is the covariance. A dense matrix is materialized only
// below dense_cap.
struct GradCovariance {
  static constexpr int kDenseCap = 2048;

  int sample_count = 0;
  int dim = 0;
  std::vector<double> mean;
  std::vector<double> centered;  // sample_count x dim
  double trace = 0.0;
  std::optional<linalg::SymMatrix> dense;

  std::span<const double> centered_row(int i) const {
    return {centered.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
  // covariance * x through the factor; works at any dimension.
  std::vector<double> apply(std::span<const double> x) const;
};

struct TopkEigen {
  std::vector<double> eigenvalues;           // descending; floored at zero
  // Unit vectors paired with the eigenvalues. When the decomposition runs
  // through the small Gram side (n < d) a vanished eigenvalue has no
  // recoverable direction and its vector is all zeros.
  std::vector<std::vector<double>> vectors;
};

GradBatch per_sample_grads(const models::SampleProblem& problem, std::span<const double> params);
GradBatch per_sample_grads(const models::SampleProblem& problem, std::span<const double> params,
                           std::span<const int> indices);

GradCovariance empirical_grad_cov(const GradBatch& batch, int dense_cap = GradCovariance::kDenseCap);

// Top-k eigenpairs of factor^T factor obtained from the small Gram matrix
// factor * factor^T; requires 1 <= k <= min(n, d).
TopkEigen topk_eigen(const GradCovariance& cov, int k);

// lambda_i / lambda_j with 1-based spectral indices i < j; +inf when
// lambda_j is not positive.
double eigen_ratio(const GradCovariance& cov, int i, int j);

struct HutchinsonEstimate {
  double value = 0.0;
  double std_error = 0.0;
  int probes = 0;
};

// Rademacher-probe estimate of tr(H) plus a tr(H * cov) estimate with probes
// drawn through the covariance factor. Hessian-vector products use central
// differences of the full mean gradient; fd_step <= 0 selects the default
// 1e-3 * (1 + max|params|).
struct HessianTraces {
  HutchinsonEstimate hessian_trace;
  HutchinsonEstimate hessian_cov_trace;
};

HessianTraces hessian_trace_hutchinson(const models::SampleProblem& problem,
                                       std::span<const double> params, const GradCovariance& cov,
                                       int probes, double fd_step, linalg::Rng& rng);

// Empirical gradient covariance over a held-out pool; the project's
// population-covariance proxy.
GradCovariance population_cov_estimate(const models::SampleProblem& pool_problem,
                                       std::span<const double> params,
                                       int dense_cap = GradCovariance::kDenseCap);

// Mean loss / mean gradient helpers shared by the training loops.
double mean_loss(const models::SampleProblem& problem, std::span<const double> params);
std::vector<double> mean_grad(const models::SampleProblem& problem, std::span<const double> params);
std::vector<double> mean_grad(const models::SampleProblem& problem, std::span<const double> params,
                              std::span<const int> indices);

}  // namespace sgld::gradstats
