#pragma once

#include <span>
#include <string>
#include <vector>

#include "sgld/linalg.hpp"

// Gaussian KL divergence, the per-step KL closed forms for the fixed and
// greedy priors, and accumulation of the reversed generalization bound.

namespace sgld::bound {

struct GaussianStep {
  std::vector<double> mean;
  linalg::SymMatrix cov;
};

// 0.5 * (tr(Sq^-1 Sp) + (mq-mp)^T Sq^-1 (mq-mp) - d + ln det Sq - ln det Sp),
// evaluated in q's eigenbasis; both covariances floored at `floor` and must
// be positive definite afterwards.
double kl_gaussian(const GaussianStep& p, const GaussianStep& q, double floor = 0.0);

// (1/(N*b)) * (N/(N-1))^2: the constant tying the squared drift gap between
// the prior and posterior means to the single-draw gradient covariance.
double sampling_constant(int data_count, int batch);

// Expected per-step KL between the isotropic-sigma prior conditional and the
// SGLD posterior conditional, averaged over the minibatch and held-out index:
//   0.5*(sigma*tr(S^-1) + ln det S - d) - (d/2) ln sigma
//     + (eta^2/(2 N b)) * (N/(N-1))^2 * tr(S^-1 Ssd).
// Inverses are floored at 1e-10 * tr/d.
double step_kl_fixed_prior(const linalg::SymMatrix& noise_cov, const linalg::SymMatrix& grad_cov,
                           double sigma_t, double eta, int data_count, int batch);

// Per-step KL contribution under the greedy prior: zero when the minibatch
// misses the held-out sample, otherwise
//   0.5 * (eta^2 * N / (b (N-1)^2)) * tr(S^-1 Spop).
double step_kl_greedy(const linalg::SymMatrix& noise_cov, const linalg::SymMatrix& pop_cov,
                      double eta, int data_count, int batch, bool hit);

// Same closed forms over pre-inverted spectral data, used by the training
// loop where covariances live in spiked form.
double step_kl_fixed_prior_terms(double trace_inverse, double log_det, int dim, double sigma_t,
                                 double eta, int data_count, int batch, double trace_inv_grad_cov);
double step_kl_greedy_term(double trace_inv_pop_cov, double eta, int data_count, int batch);

enum class KlVariant { kFixedPrior, kGreedy, kDirect };

struct BoundEntry {
  long step = 0;
  double kl_value = 0.0;
  KlVariant variant = KlVariant::kDirect;
};

// Per-step KL contributions and their running total. kl values below the
// numerical-zero floor (-1e-12) are rejected.
class BoundLedger {
 public:
  BoundLedger(double loss_floor, double loss_clip) : loss_floor_(loss_floor), loss_clip_(loss_clip) {}

  void add(long step, double kl_value, KlVariant variant);
  double sum() const { return sum_; }
  double loss_floor() const { return loss_floor_; }
  double loss_clip() const { return loss_clip_; }
  std::span<const BoundEntry> entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

 private:
  double loss_floor_;
  double loss_clip_;
  double sum_ = 0.0;
  std::vector<BoundEntry> entries_;
};

// sqrt(((a2-a1)^2 / 2) * sum of kl values); monotone nondecreasing in T.
double accumulate_bound(const BoundLedger& ledger);

// Pointwise test - train series (the measured generalization-error proxy).
std::vector<double> gen_error_measured(std::span<const double> train_losses,
                                       std::span<const double> test_losses);

std::string variant_name(KlVariant variant);

}  // namespace sgld::bound
