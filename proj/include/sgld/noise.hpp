#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sgld/gradstats.hpp"
#include "sgld/linalg.hpp"

// Construction of every noise covariance the experiments compare under a
// fixed-trace constraint: trace-matched isotropic and empirical-covariance
// shapes, the square-root covariances, and the KL-optimal covariance for a
// fixed isotropic-noise prior (solved by Lagrange-multiplier bisection).

namespace sgld::noise {

// How the per-refresh trace budget c_t is resolved against the current
// gradient statistics.
struct TraceBudget {
  enum class Mode { kAbsolute, kScaleOfSqrtCov, kScaleOfCov };

  Mode mode = Mode::kScaleOfSqrtCov;
  double value = 1.0;

  static TraceBudget absolute(double c) { return {Mode::kAbsolute, c}; }
  static TraceBudget scale_of_sqrt_cov(double scale) { return {Mode::kScaleOfSqrtCov, scale}; }
  static TraceBudget scale_of_cov(double scale) { return {Mode::kScaleOfCov, scale}; }
};

enum class Structure {
  kIsotropic,
  kIsoTraceMatched,
  kIsoHessianMatched,
  kEmpiricalCov,
  kSqrtEmpiricalCov,
  kSqrtPopulationCov,
  kFixedPriorOptimal,
};

struct NoiseSpec {
  Structure structure = Structure::kIsoTraceMatched;
  TraceBudget budget;
  double isotropic_sigma = 1.0;  // per-coordinate variance for kIsotropic
  double prior_sigma = 1e-4;     // sigma_t of the reference prior for kFixedPriorOptimal
  int refresh_period_epochs = 10;
  double eigen_floor_rel = 1e-10;
  // Resolve the relative budget once at the first noise refresh and keep the
  // resulting trace for the rest of the run (the covariance shape is still
  // re-estimated every refresh). Keeps compared runs at exactly equal trace
  // and removes the noise -> larger gradients -> larger budget feedback.
  // When false the budget is re-resolved against the current statistics at
  // every refresh.
  bool freeze_budget = true;
};

struct SolverReport {
  double multiplier = 0.0;     // <= 0
  double kkt_residual = 0.0;   // max_i |beta_i - alpha_i + multiplier * alpha_i^2|
  int bisection_iters = 0;
  double objective = 0.0;      // tr(G^-1 B) + ln det G at the solution
};

// (c / tr(S)) * S; eigenvectors unchanged. Throws std::domain_error on
// nonpositive trace.
linalg::SymMatrix scale_to_trace(const linalg::SymMatrix& s, double c);

// Eigenvalue-level core of the trace-constrained solver: minimizes
// sum(beta_i / alpha_i + ln alpha_i) over alpha > 0 with sum(alpha) = c.
// Betas must already be floored positive; requires c <= sum(beta).
struct EigenSolve {
  std::vector<double> alphas;
  SolverReport report;
};
EigenSolve solve_trace_kl_eigen(std::span<const double> betas, double c, double tol = 1e-12);

// Minimizes tr(G^-1 B) + ln det G over positive-definite G with tr(G) = c.
// The solution shares B's eigenbasis; its eigenvalues come from the
// multiplier equation solved by bracket-doubling bisection on (-inf, 0].
std::pair<linalg::SymMatrix, SolverReport> solve_trace_kl_optimal(const linalg::SymMatrix& b,
                                                                  double c, double tol = 1e-12);

// (c / tr(sqrt(pop_cov))) * sqrt(pop_cov): the greedy-prior optimal shape.
linalg::SymMatrix greedy_optimal_cov(const linalg::SymMatrix& pop_cov, double c);

// Optimal covariance against the fixed isotropic-noise prior: solves the
// trace-KL problem for B = sigma_t*I + (eta^2/(N*b)) * (N/(N-1))^2 * emp_cov.
// Requires c <= d * sigma_t.
std::pair<linalg::SymMatrix, SolverReport> fixed_prior_optimal_cov(const linalg::SymMatrix& emp_cov,
                                                                   double sigma_t, double eta,
                                                                   int data_count, int batch,
                                                                   double c, double tol = 1e-12);

// Per-coordinate variance tr(H * cov) / tr(H) for the Hessian-matched
// isotropic baseline; the caller forms scale * I.
double iso_hessian_matched_scale(double hess_cov_trace, double hessian_trace);

// Eigenvalues (clamped at zero) and their directions as count x dim rows.
// This is the working spectral form of a gradient covariance: complete below
// the dense cap, the paper-style rank-k truncation above it.
struct CovSpectrum {
  int dim = 0;
  std::vector<double> values;
  std::vector<double> directions;

  int count() const { return static_cast<int>(values.size()); }
  std::span<const double> direction(int k) const {
    return {directions.data() + static_cast<std::size_t>(k) * dim, static_cast<std::size_t>(dim)};
  }
  double value_sum() const;
  double sqrt_sum() const;
};

CovSpectrum cov_spectrum(const gradstats::GradCovariance& cov, int topk);

// Statistics a realization may need; pointers reference the caller's
// per-refresh state and must outlive the call.
struct StatsBundle {
  int dim = 0;
  const gradstats::GradCovariance* emp_cov = nullptr;
  const gradstats::GradCovariance* pop_cov = nullptr;
  // Optional precomputed spectra; avoids repeated eigendecompositions when
  // the caller already holds them.
  const CovSpectrum* emp_spectrum = nullptr;
  const CovSpectrum* pop_spectrum = nullptr;
  std::optional<double> hessian_trace;
  std::optional<double> hess_cov_trace;
  // Training constants needed by the fixed-prior solve.
  double eta = 0.0;
  int data_count = 0;
  int batch = 0;
  int topk = 100;  // spectral truncation above the dense cap
};

// Realized noise covariance in spiked form: spike_values on the orthonormal
// rows of `directions`, iso_level on the complement. Covers dense output
// (full set of directions) and the rank-k truncation used above the dense
// cap with one sampling/inversion code path.
struct NoiseModel {
  int dim = 0;
  double iso_level = 0.0;
  std::vector<double> spike_values;
  std::vector<double> directions;  // k x dim row-major
  double trace = 0.0;

  int spike_count() const { return static_cast<int>(spike_values.size()); }
  std::span<const double> direction(int k) const {
    return {directions.data() + static_cast<std::size_t>(k) * dim, static_cast<std::size_t>(dim)};
  }

  bool is_zero() const;
  std::vector<double> sample(linalg::Rng& rng) const;
  linalg::SymMatrix to_dense() const;

  // Inverse-weighted quantities for the bound formulas; eigenvalues are
  // floored at `floor` before inverting.
  double trace_inverse(double floor) const;
  double log_det(double floor) const;
  // tr(Sigma^-1 * cov) for a factored gradient covariance.
  double trace_inv_times(const gradstats::GradCovariance& cov, double floor) const;
  // tr(Sigma^-1 * spectrum): the covariance enters through its (possibly
  // truncated) spectral form.
  double trace_inv_times(const CovSpectrum& spectrum, double floor) const;

  static NoiseModel isotropic(int dim, double per_coordinate_variance);
  static NoiseModel zero(int dim);
};

// Budget resolution per structure; the Hessian-matched baseline resolves to
// its own matched trace d * tr(H cov)/tr(H) regardless of the budget field.
double resolve_budget(const NoiseSpec& spec, const StatsBundle& stats);

// Builds the covariance for the requested structure with trace equal to the
// resolved budget. Missing statistics raise std::invalid_argument.
NoiseModel realize_noise(const NoiseSpec& spec, const StatsBundle& stats);

std::string structure_name(Structure s);

}  // namespace sgld::noise
