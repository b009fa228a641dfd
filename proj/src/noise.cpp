#include "sgld/noise.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace sgld::noise {

double CovSpectrum::value_sum() const { return std::accumulate(values.begin(), values.end(), 0.0); }

double CovSpectrum::sqrt_sum() const {
  double s = 0.0;
  for (double v : values) s += std::sqrt(std::max(v, 0.0));
  return s;
}

CovSpectrum cov_spectrum(const gradstats::GradCovariance& cov, int topk) {
  // Below the dense cap the whole nonzero spectrum is kept; above it the
  // rank-k truncation stands in for the covariance.
  const int k = cov.dense.has_value() ? std::min(cov.sample_count, cov.dim)
                                      : std::min({cov.sample_count, cov.dim, topk});
  const gradstats::TopkEigen top = gradstats::topk_eigen(cov, k);
  CovSpectrum spec;
  spec.dim = cov.dim;
  spec.values = top.eigenvalues;
  spec.directions.resize(static_cast<std::size_t>(k) * cov.dim);
  for (int j = 0; j < k; ++j)
    std::copy(top.vectors[static_cast<std::size_t>(j)].begin(), top.vectors[static_cast<std::size_t>(j)].end(),
              spec.directions.begin() + static_cast<std::size_t>(j) * cov.dim);
  return spec;
}

namespace {

const gradstats::GradCovariance& require_emp(const StatsBundle& stats, const char* who) {
  if (stats.emp_cov == nullptr)
    throw std::invalid_argument(std::string(who) + ": empirical gradient covariance not supplied");
  return *stats.emp_cov;
}

double resolve_with_spectrum(const NoiseSpec& spec, const StatsBundle& stats,
                             const CovSpectrum* emp_spectrum) {
  if (spec.structure == Structure::kIsoHessianMatched) {
    if (!stats.hessian_trace || !stats.hess_cov_trace)
      throw std::invalid_argument("realize_noise: Hessian traces required for the Hessian-matched baseline");
    return stats.dim * iso_hessian_matched_scale(*stats.hess_cov_trace, *stats.hessian_trace);
  }
  switch (spec.budget.mode) {
    case TraceBudget::Mode::kAbsolute:
      if (!(spec.budget.value > 0.0) || !std::isfinite(spec.budget.value))
        throw std::invalid_argument("trace budget must be positive and finite");
      return spec.budget.value;
    case TraceBudget::Mode::kScaleOfCov: {
      if (!(spec.budget.value > 0.0)) throw std::invalid_argument("trace budget scale must be positive");
      // fully converged gradients resolve to a zero budget (no noise)
      return spec.budget.value * require_emp(stats, "resolve_budget").trace;
    }
    case TraceBudget::Mode::kScaleOfSqrtCov: {
      double root_sum;
      if (emp_spectrum != nullptr) {
        root_sum = emp_spectrum->sqrt_sum();
      } else if (stats.emp_spectrum != nullptr) {
        root_sum = stats.emp_spectrum->sqrt_sum();
      } else {
        root_sum = cov_spectrum(require_emp(stats, "resolve_budget"), stats.topk).sqrt_sum();
      }
      if (!(spec.budget.value > 0.0)) throw std::invalid_argument("trace budget scale must be positive");
      return spec.budget.value * root_sum;
    }
  }
  throw std::invalid_argument("unknown trace budget mode");
}

}  // namespace

linalg::SymMatrix scale_to_trace(const linalg::SymMatrix& s, double c) {
  const double t = s.trace();
  if (!(t > 0.0)) throw std::domain_error("scale_to_trace: input trace is not positive");
  if (!(c > 0.0)) throw std::invalid_argument("scale_to_trace: target trace must be positive");
  return s.scaled(c / t);
}

EigenSolve solve_trace_kl_eigen(std::span<const double> betas, double c, double tol) {
  if (betas.empty()) throw std::invalid_argument("solve_trace_kl_eigen: empty spectrum");
  if (!(tol > 0.0)) throw std::invalid_argument("solve_trace_kl_eigen: tol must be positive");
  double beta_sum = 0.0;
  for (double b : betas) {
    if (!(b > 0.0)) throw std::domain_error("solve_trace_kl_eigen: spectrum must be positive");
    beta_sum += b;
  }
  if (!(c > 0.0)) throw std::invalid_argument("solve_trace_kl_eigen: target trace must be positive");
  if (c > beta_sum * (1.0 + 1e-12))
    throw std::domain_error("solve_trace_kl_eigen: target trace exceeds tr(B)");

  EigenSolve out;
  out.alphas.assign(betas.begin(), betas.end());

  auto finish = [&](double multiplier, int iters) {
    out.report.multiplier = multiplier;
    out.report.bisection_iters = iters;
    double kkt = 0.0;
    double objective = 0.0;
    for (std::size_t i = 0; i < out.alphas.size(); ++i) {
      const double alpha = out.alphas[i];
      const double beta = betas[i];
      kkt = std::max(kkt, std::abs(beta - alpha + multiplier * alpha * alpha));
      objective += beta / alpha + std::log(alpha);
    }
    out.report.kkt_residual = kkt;
    out.report.objective = objective;
  };

  // Equality case: the multiplier limit is zero and alpha_i = beta_i.
  if (c >= beta_sum * (1.0 - 1e-13)) {
    finish(0.0, 0);
    return out;
  }

  const auto eval = [&](double lambda) {
    double s = 0.0;
    for (double b : betas) s += 2.0 * b / (1.0 + std::sqrt(1.0 - 4.0 * lambda * b));
    return s;
  };

  double lo = -1.0;
  int doublings = 0;
  while (eval(lo) > c) {
    lo *= 2.0;
    if (++doublings > 2000) throw std::runtime_error("solve_trace_kl_eigen: bracket doubling failed");
  }
  double hi = 0.0;

  constexpr int kMaxIters = 200;
  double mid = lo;
  double fmid = eval(mid);
  int iter = 0;
  for (; iter < kMaxIters; ++iter) {
    mid = 0.5 * (lo + hi);
    fmid = eval(mid);
    if (std::abs(fmid - c) < tol * c) break;
    if (fmid < c)
      lo = mid;
    else
      hi = mid;
  }
  if (std::abs(fmid - c) >= tol * c && iter == kMaxIters)
    throw std::runtime_error("solve_trace_kl_eigen: bisection did not converge in 200 iterations");

  for (std::size_t i = 0; i < betas.size(); ++i)
    out.alphas[i] = 2.0 * betas[i] / (1.0 + std::sqrt(1.0 - 4.0 * mid * betas[i]));
  finish(mid, iter);
  return out;
}

std::pair<linalg::SymMatrix, SolverReport> solve_trace_kl_optimal(const linalg::SymMatrix& b,
                                                                  double c, double tol) {
  const double trace_b = b.trace();
  if (c > trace_b * (1.0 + 1e-12))
    throw std::domain_error("solve_trace_kl_optimal: target trace exceeds tr(B)");
  const linalg::EigenDecomp ed = linalg::sym_eigen(b);
  if (ed.eigenvalues.back() < -1e-10 * std::abs(trace_b))
    throw std::domain_error("solve_trace_kl_optimal: B is not positive definite");
  const double floor = std::max(1e-10 * std::abs(trace_b), 1e-12);
  std::vector<double> betas(ed.eigenvalues.size());
  for (std::size_t i = 0; i < betas.size(); ++i) betas[i] = std::max(ed.eigenvalues[i], floor);

  EigenSolve solved = solve_trace_kl_eigen(betas, c, tol);
  return {ed.reconstruct_with(solved.alphas), solved.report};
}

linalg::SymMatrix greedy_optimal_cov(const linalg::SymMatrix& pop_cov, double c) {
  const linalg::SymMatrix root = linalg::psd_sqrt(pop_cov);
  const double t = root.trace();
  if (!(t > 0.0)) throw std::domain_error("greedy_optimal_cov: covariance square root has zero trace");
  return scale_to_trace(root, c);
}

std::pair<linalg::SymMatrix, SolverReport> fixed_prior_optimal_cov(const linalg::SymMatrix& emp_cov,
                                                                   double sigma_t, double eta,
                                                                   int data_count, int batch,
                                                                   double c, double tol) {
  if (!(sigma_t > 0.0)) throw std::domain_error("fixed_prior_optimal_cov: sigma_t must be positive");
  if (data_count < 2) throw std::domain_error("fixed_prior_optimal_cov: need at least two samples");
  if (batch < 1 || batch > data_count)
    throw std::invalid_argument("fixed_prior_optimal_cov: batch size out of range");
  const int d = emp_cov.dim();
  if (c > d * sigma_t * (1.0 + 1e-12))
    throw std::domain_error("fixed_prior_optimal_cov: budget exceeds d * sigma_t");

  const double ratio = static_cast<double>(data_count) / (data_count - 1);
  const double s = eta * eta / (static_cast<double>(data_count) * batch) * ratio * ratio;
  const linalg::SymMatrix b = emp_cov.scaled(s).plus_scaled_identity(sigma_t);
  return solve_trace_kl_optimal(b, c, tol);
}

double iso_hessian_matched_scale(double hess_cov_trace, double hessian_trace) {
  if (hessian_trace == 0.0)
    throw std::domain_error("iso_hessian_matched_scale: Hessian trace is zero");
  return hess_cov_trace / hessian_trace;
}

bool NoiseModel::is_zero() const { return trace == 0.0; }

std::vector<double> NoiseModel::sample(linalg::Rng& rng) const {
  std::vector<double> z(static_cast<std::size_t>(dim));
  for (double& x : z) x = rng.gaussian();

  const double iso_root = std::sqrt(std::max(iso_level, 0.0));
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim; ++i) out[static_cast<std::size_t>(i)] = iso_root * z[static_cast<std::size_t>(i)];
  for (int k = 0; k < spike_count(); ++k) {
    const auto dir = direction(k);
    double coeff = 0.0;
    for (int i = 0; i < dim; ++i) coeff += dir[static_cast<std::size_t>(i)] * z[static_cast<std::size_t>(i)];
    const double gain = (std::sqrt(std::max(spike_values[static_cast<std::size_t>(k)], 0.0)) - iso_root) * coeff;
    if (gain == 0.0) continue;
    for (int i = 0; i < dim; ++i) out[static_cast<std::size_t>(i)] += gain * dir[static_cast<std::size_t>(i)];
  }
  return out;
}

linalg::SymMatrix NoiseModel::to_dense() const {
  linalg::SymMatrix out(dim);
  for (int i = 0; i < dim; ++i) out.set(i, i, iso_level);
  for (int a = 0; a < dim; ++a)
    for (int b = a; b < dim; ++b) {
      double acc = out(a, b);
      for (int k = 0; k < spike_count(); ++k) {
        const auto dir = direction(k);
        acc += (spike_values[static_cast<std::size_t>(k)] - iso_level) * dir[static_cast<std::size_t>(a)] *
               dir[static_cast<std::size_t>(b)];
      }
      out.set(a, b, acc);
    }
  return out;
}

double NoiseModel::trace_inverse(double floor) const {
  double total = 0.0;
  for (double v : spike_values) {
    const double f = std::max(v, floor);
    if (!(f > 0.0)) throw std::domain_error("NoiseModel::trace_inverse: singular beyond floor");
    total += 1.0 / f;
  }
  if (spike_count() < dim) {
    const double f = std::max(iso_level, floor);
    if (!(f > 0.0)) throw std::domain_error("NoiseModel::trace_inverse: singular beyond floor");
    total += static_cast<double>(dim - spike_count()) / f;
  }
  return total;
}

double NoiseModel::log_det(double floor) const {
  double total = 0.0;
  for (double v : spike_values) {
    const double f = std::max(v, floor);
    if (!(f > 0.0)) throw std::domain_error("NoiseModel::log_det: singular beyond floor");
    total += std::log(f);
  }
  if (spike_count() < dim) {
    const double f = std::max(iso_level, floor);
    if (!(f > 0.0)) throw std::domain_error("NoiseModel::log_det: singular beyond floor");
    total += static_cast<double>(dim - spike_count()) * std::log(f);
  }
  return total;
}

double NoiseModel::trace_inv_times(const gradstats::GradCovariance& cov, double floor) const {
  if (cov.dim != dim) throw std::invalid_argument("NoiseModel::trace_inv_times: dimension mismatch");
  const bool complete = spike_count() == dim;
  const double iso_f = std::max(iso_level, floor);
  if (!complete && !(iso_f > 0.0))
    throw std::domain_error("NoiseModel::trace_inv_times: singular beyond floor");
  std::vector<double> inv_spike(spike_values.size());
  for (std::size_t k = 0; k < spike_values.size(); ++k) {
    const double f = std::max(spike_values[k], floor);
    if (!(f > 0.0)) throw std::domain_error("NoiseModel::trace_inv_times: singular beyond floor");
    inv_spike[k] = 1.0 / f;
  }

  double total = 0.0;
  for (int r = 0; r < cov.sample_count; ++r) {
    const auto row = cov.centered_row(r);
    if (complete) {
      for (int k = 0; k < spike_count(); ++k) {
        const auto dir = direction(k);
        double coeff = 0.0;
        for (int i = 0; i < dim; ++i) coeff += dir[static_cast<std::size_t>(i)] * row[static_cast<std::size_t>(i)];
        total += inv_spike[static_cast<std::size_t>(k)] * coeff * coeff;
      }
    } else {
      double norm_sq = 0.0;
      for (double x : row) norm_sq += x * x;
      double in_span = 0.0;
      double spiked = 0.0;
      for (int k = 0; k < spike_count(); ++k) {
        const auto dir = direction(k);
        double coeff = 0.0;
        for (int i = 0; i < dim; ++i) coeff += dir[static_cast<std::size_t>(i)] * row[static_cast<std::size_t>(i)];
        in_span += coeff * coeff;
        spiked += inv_spike[static_cast<std::size_t>(k)] * coeff * coeff;
      }
      // round-off can push the complement mass slightly negative
      total += std::max(norm_sq - in_span, 0.0) / iso_f + spiked;
    }
  }
  return total;
}

double NoiseModel::trace_inv_times(const CovSpectrum& spectrum, double floor) const {
  if (spectrum.dim != dim) throw std::invalid_argument("NoiseModel::trace_inv_times: dimension mismatch");
  const bool complete = spike_count() == dim;
  const double iso_f = std::max(iso_level, floor);
  if (!complete && !(iso_f > 0.0))
    throw std::domain_error("NoiseModel::trace_inv_times: singular beyond floor");
  std::vector<double> inv_spike(spike_values.size());
  for (std::size_t k = 0; k < spike_values.size(); ++k) {
    const double f = std::max(spike_values[k], floor);
    if (!(f > 0.0)) throw std::domain_error("NoiseModel::trace_inv_times: singular beyond floor");
    inv_spike[k] = 1.0 / f;
  }

  double total = 0.0;
  for (int j = 0; j < spectrum.count(); ++j) {
    const double weight = spectrum.values[static_cast<std::size_t>(j)];
    if (weight == 0.0) continue;
    const auto v = spectrum.direction(j);
    double in_span = 0.0;
    double spiked = 0.0;
    for (int k = 0; k < spike_count(); ++k) {
      const auto dir = direction(k);
      double coeff = 0.0;
      for (int i = 0; i < dim; ++i) coeff += dir[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)];
      in_span += coeff * coeff;
      spiked += inv_spike[static_cast<std::size_t>(k)] * coeff * coeff;
    }
    double norm_sq = 0.0;
    for (double x : v) norm_sq += x * x;
    if (complete) {
      total += weight * spiked;
    } else {
      total += weight * (std::max(norm_sq - in_span, 0.0) / iso_f + spiked);
    }
  }
  return total;
}

NoiseModel NoiseModel::isotropic(int dim, double per_coordinate_variance) {
  NoiseModel m;
  m.dim = dim;
  m.iso_level = per_coordinate_variance;
  m.trace = per_coordinate_variance * dim;
  return m;
}

NoiseModel NoiseModel::zero(int dim) { return isotropic(dim, 0.0); }

double resolve_budget(const NoiseSpec& spec, const StatsBundle& stats) {
  return resolve_with_spectrum(spec, stats, stats.emp_spectrum);
}

NoiseModel realize_noise(const NoiseSpec& spec, const StatsBundle& stats) {
  if (stats.dim < 1) throw std::invalid_argument("realize_noise: dimension must be positive");
  const int d = stats.dim;

  // Holders keep lazily computed spectra alive for the duration of the call.
  std::optional<CovSpectrum> emp_holder;
  std::optional<CovSpectrum> pop_holder;
  auto emp_spectrum = [&]() -> const CovSpectrum& {
    if (stats.emp_spectrum != nullptr) return *stats.emp_spectrum;
    if (!emp_holder) emp_holder = cov_spectrum(require_emp(stats, "realize_noise"), stats.topk);
    return *emp_holder;
  };
  auto pop_spectrum = [&]() -> const CovSpectrum& {
    if (stats.pop_spectrum != nullptr) return *stats.pop_spectrum;
    if (stats.pop_cov == nullptr)
      throw std::invalid_argument("realize_noise: population covariance proxy not supplied");
    if (!pop_holder) pop_holder = cov_spectrum(*stats.pop_cov, stats.topk);
    return *pop_holder;
  };

  auto spiked_from = [&](const CovSpectrum& spectrum, std::vector<double> spikes, double c) {
    double spike_sum = 0.0;
    for (double v : spikes) spike_sum += v;
    // A frozen budget can outlive the structure: with fully converged
    // gradients the shape is undefined and the trace-preserving fallback is
    // isotropic noise at the same budget.
    if (!(spike_sum > 0.0)) return NoiseModel::isotropic(d, c / d);
    const double factor = c / spike_sum;
    NoiseModel model;
    model.dim = d;
    model.iso_level = 0.0;
    model.spike_values = std::move(spikes);
    for (double& v : model.spike_values) v *= factor;
    model.directions = spectrum.directions;
    model.trace = 0.0;
    for (double v : model.spike_values) model.trace += v;
    return model;
  };

  switch (spec.structure) {
    case Structure::kIsotropic:
    case Structure::kIsoTraceMatched: {
      const double c = resolve_with_spectrum(spec, stats, nullptr);
      return c > 0.0 ? NoiseModel::isotropic(d, c / d) : NoiseModel::zero(d);
    }
    case Structure::kIsoHessianMatched: {
      if (!stats.hessian_trace || !stats.hess_cov_trace)
        throw std::invalid_argument("realize_noise: Hessian traces required for the Hessian-matched baseline");
      const double scale = iso_hessian_matched_scale(*stats.hess_cov_trace, *stats.hessian_trace);
      if (!(scale > 0.0)) throw std::domain_error("realize_noise: Hessian-matched scale is not positive");
      return NoiseModel::isotropic(d, scale);
    }
    case Structure::kEmpiricalCov: {
      const CovSpectrum& spectrum = emp_spectrum();
      const double c = resolve_with_spectrum(spec, stats, &spectrum);
      if (c <= 0.0) return NoiseModel::zero(d);
      return spiked_from(spectrum, spectrum.values, c);
    }
    case Structure::kSqrtEmpiricalCov: {
      const CovSpectrum& spectrum = emp_spectrum();
      const double c = resolve_with_spectrum(spec, stats, &spectrum);
      if (c <= 0.0) return NoiseModel::zero(d);
      std::vector<double> roots(spectrum.values.size());
      for (std::size_t i = 0; i < roots.size(); ++i) roots[i] = std::sqrt(std::max(spectrum.values[i], 0.0));
      return spiked_from(spectrum, std::move(roots), c);
    }
    case Structure::kSqrtPopulationCov: {
      const double c = resolve_with_spectrum(spec, stats, nullptr);
      if (c <= 0.0) return NoiseModel::zero(d);
      const CovSpectrum& spectrum = pop_spectrum();
      std::vector<double> roots(spectrum.values.size());
      for (std::size_t i = 0; i < roots.size(); ++i) roots[i] = std::sqrt(std::max(spectrum.values[i], 0.0));
      return spiked_from(spectrum, std::move(roots), c);
    }
    case Structure::kFixedPriorOptimal: {
      if (!(spec.prior_sigma > 0.0))
        throw std::domain_error("realize_noise: prior sigma must be positive");
      if (stats.data_count < 2 || stats.batch < 1 || stats.batch > stats.data_count)
        throw std::invalid_argument("realize_noise: fixed-prior solve needs data_count and batch");
      const CovSpectrum& spectrum = emp_spectrum();
      const double c = resolve_with_spectrum(spec, stats, &spectrum);
      if (c > d * spec.prior_sigma * (1.0 + 1e-12))
        throw std::domain_error("realize_noise: budget exceeds d * prior_sigma");
      const double ratio = static_cast<double>(stats.data_count) / (stats.data_count - 1);
      const double s = stats.eta * stats.eta / (static_cast<double>(stats.data_count) * stats.batch) * ratio * ratio;

      const int k = static_cast<int>(spectrum.values.size());
      std::vector<double> betas(static_cast<std::size_t>(d), spec.prior_sigma);
      for (int i = 0; i < k; ++i)
        betas[static_cast<std::size_t>(i)] = spec.prior_sigma + s * spectrum.values[static_cast<std::size_t>(i)];
      const EigenSolve solved = solve_trace_kl_eigen(betas, c);

      NoiseModel model;
      model.dim = d;
      model.spike_values.assign(solved.alphas.begin(), solved.alphas.begin() + k);
      model.directions = spectrum.directions;
      model.iso_level = k < d ? solved.alphas[static_cast<std::size_t>(k)] : 0.0;
      model.trace = 0.0;
      for (double v : solved.alphas) model.trace += v;
      return model;
    }
  }
  throw std::invalid_argument("realize_noise: unknown structure");
}

std::string structure_name(Structure s) {
  switch (s) {
    case Structure::kIsotropic: return "isotropic";
    case Structure::kIsoTraceMatched: return "iso_trace_matched";
    case Structure::kIsoHessianMatched: return "iso_hessian_matched";
    case Structure::kEmpiricalCov: return "empirical_cov";
    case Structure::kSqrtEmpiricalCov: return "sqrt_empirical_cov";
    case Structure::kSqrtPopulationCov: return "sqrt_population_cov";
    case Structure::kFixedPriorOptimal: return "fixed_prior_optimal";
  }
  return "unknown";
}

}  // namespace sgld::noise
