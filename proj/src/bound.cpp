#include "sgld/bound.hpp"

#include <cmath>
#include <stdexcept>

namespace sgld::bound {

namespace {

struct FlooredSpectral {
  linalg::EigenDecomp decomp;
  std::vector<double> floored;  // eigenvalues clamped at the floor
  double trace_inverse = 0.0;
  double log_det = 0.0;
};

FlooredSpectral floored_eigen(const linalg::SymMatrix& m, double floor, const char* who) {
  FlooredSpectral out;
  out.decomp = linalg::sym_eigen(m);
  out.floored.resize(out.decomp.eigenvalues.size());
  for (std::size_t i = 0; i < out.floored.size(); ++i) {
    const double v = std::max(out.decomp.eigenvalues[i], floor);
    if (!(v > 0.0)) throw std::domain_error(std::string(who) + ": covariance singular beyond floor");
    out.floored[i] = v;
    out.trace_inverse += 1.0 / v;
    out.log_det += std::log(v);
  }
  return out;
}

// u_j^T M u_j summed against inverse eigenvalues: tr(S^-1 M) in S's basis.
double trace_inv_times(const FlooredSpectral& s, const linalg::SymMatrix& m) {
  const int d = s.decomp.dim;
  double total = 0.0;
  for (int j = 0; j < d; ++j) {
    const std::vector<double> u = s.decomp.column(j);
    const std::vector<double> mu = m.matvec(u);
    double quad = 0.0;
    for (int i = 0; i < d; ++i) quad += u[static_cast<std::size_t>(i)] * mu[static_cast<std::size_t>(i)];
    total += quad / s.floored[static_cast<std::size_t>(j)];
  }
  return total;
}

double check_counts(int data_count, int batch) {
  if (data_count < 2) throw std::domain_error("need at least two samples");
  if (batch < 1 || batch > data_count) throw std::invalid_argument("batch size out of range");
  return static_cast<double>(data_count);
}

}  // namespace

double kl_gaussian(const GaussianStep& p, const GaussianStep& q, double floor) {
  const int d = q.cov.dim();
  if (p.cov.dim() != d || static_cast<int>(p.mean.size()) != d || static_cast<int>(q.mean.size()) != d)
    throw std::invalid_argument("kl_gaussian: dimension mismatch");

  const FlooredSpectral qs = floored_eigen(q.cov, floor, "kl_gaussian (q)");
  const FlooredSpectral ps = floored_eigen(p.cov, floor, "kl_gaussian (p)");

  double trace_term = trace_inv_times(qs, p.cov);
  double quad = 0.0;
  for (int j = 0; j < d; ++j) {
    double coeff = 0.0;
    for (int i = 0; i < d; ++i)
      coeff += qs.decomp.basis_at(i, j) * (q.mean[static_cast<std::size_t>(i)] - p.mean[static_cast<std::size_t>(i)]);
    quad += coeff * coeff / qs.floored[static_cast<std::size_t>(j)];
  }
  return 0.5 * (trace_term + quad - d + qs.log_det - ps.log_det);
}

double sampling_constant(int data_count, int batch) {
  const double n = check_counts(data_count, batch);
  const double ratio = n / (n - 1.0);
  return ratio * ratio / (n * batch);
}

double step_kl_fixed_prior_terms(double trace_inverse, double log_det, int dim, double sigma_t,
                                 double eta, int data_count, int batch, double trace_inv_grad_cov) {
  if (!(sigma_t > 0.0)) throw std::domain_error("step_kl_fixed_prior: sigma_t must be positive");
  const double constant = sampling_constant(data_count, batch);
  return 0.5 * (sigma_t * trace_inverse + log_det - dim) - 0.5 * dim * std::log(sigma_t) +
         0.5 * eta * eta * constant * trace_inv_grad_cov;
}

double step_kl_fixed_prior(const linalg::SymMatrix& noise_cov, const linalg::SymMatrix& grad_cov,
                           double sigma_t, double eta, int data_count, int batch) {
  const int d = noise_cov.dim();
  if (grad_cov.dim() != d) throw std::invalid_argument("step_kl_fixed_prior: dimension mismatch");
  const double floor = 1e-10 * std::abs(noise_cov.trace()) / d;
  const FlooredSpectral s = floored_eigen(noise_cov, floor, "step_kl_fixed_prior");
  return step_kl_fixed_prior_terms(s.trace_inverse, s.log_det, d, sigma_t, eta, data_count, batch,
                                   trace_inv_times(s, grad_cov));
}

double step_kl_greedy_term(double trace_inv_pop_cov, double eta, int data_count, int batch) {
  const double n = check_counts(data_count, batch);
  return 0.5 * eta * eta * n / (batch * (n - 1.0) * (n - 1.0)) * trace_inv_pop_cov;
}

double step_kl_greedy(const linalg::SymMatrix& noise_cov, const linalg::SymMatrix& pop_cov,
                      double eta, int data_count, int batch, bool hit) {
  if (!hit) return 0.0;
  const int d = noise_cov.dim();
  if (pop_cov.dim() != d) throw std::invalid_argument("step_kl_greedy: dimension mismatch");
  const double floor = 1e-10 * std::abs(noise_cov.trace()) / d;
  const FlooredSpectral s = floored_eigen(noise_cov, floor, "step_kl_greedy");
  return step_kl_greedy_term(trace_inv_times(s, pop_cov), eta, data_count, batch);
}

void BoundLedger::add(long step, double kl_value, KlVariant variant) {
  if (!(kl_value >= -1e-12))
    throw std::invalid_argument("BoundLedger::add: kl value below the numerical-zero floor");
  entries_.push_back({step, kl_value, variant});
  sum_ += kl_value;
}

double accumulate_bound(const BoundLedger& ledger) {
  const double sum = ledger.sum();
  if (sum < -1e-12) throw std::runtime_error("accumulate_bound: negative accumulated KL");
  const double range = ledger.loss_clip() - ledger.loss_floor();
  return std::sqrt(0.5 * range * range * std::max(sum, 0.0));
}

std::vector<double> gen_error_measured(std::span<const double> train_losses,
                                       std::span<const double> test_losses) {
  if (train_losses.size() != test_losses.size())
    throw std::invalid_argument("gen_error_measured: series length mismatch");
  std::vector<double> out(train_losses.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = test_losses[i] - train_losses[i];
  return out;
}

std::string variant_name(KlVariant variant) {
  switch (variant) {
    case KlVariant::kFixedPrior: return "fixed_prior";
    case KlVariant::kGreedy: return "greedy";
    case KlVariant::kDirect: return "direct";
  }
  return "unknown";
}

}  // namespace sgld::bound
