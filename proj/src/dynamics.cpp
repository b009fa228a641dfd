#include "sgld/dynamics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace sgld::dynamics {

namespace {

bool contains(std::span<const int> indices, int value) {
  return std::find(indices.begin(), indices.end(), value) != indices.end();
}

void axpy(std::vector<double>& params, double factor, std::span<const double> direction) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i] += factor * direction[i];
}

struct RefreshCache {
  noise::NoiseModel noise_model;
  double eigen_ratio = std::numeric_limits<double>::quiet_NaN();
  double kl_if_hit = 0.0;        // greedy-form per-step value when the batch hits J^c
  double kl_fixed_prior = 0.0;   // A_t closed form at the current statistics
  std::optional<double> frozen_budget;
};

}  // namespace

std::string mode_name(Mode mode) {
  switch (mode) {
    case Mode::kSgd: return "sgd";
    case Mode::kIso: return "iso";
    case Mode::kIsoC: return "iso_c";
    case Mode::kIsoH: return "iso_h";
    case Mode::kEc: return "ec";
    case Mode::kSrec: return "srec";
    case Mode::kFixedPriorOpt: return "fixed_prior_opt";
    case Mode::kPriorChain: return "prior_chain";
    case Mode::kGreedyPriorChain: return "greedy_prior_chain";
  }
  return "unknown";
}

std::optional<Mode> mode_from_name(const std::string& name) {
  for (Mode mode : {Mode::kSgd, Mode::kIso, Mode::kIsoC, Mode::kIsoH, Mode::kEc, Mode::kSrec,
                    Mode::kFixedPriorOpt, Mode::kPriorChain, Mode::kGreedyPriorChain})
    if (mode_name(mode) == name) return mode;
  return std::nullopt;
}

std::vector<int> minibatch_sample(linalg::Rng& rng, int data_count, int batch) {
  if (batch < 1 || batch > data_count) throw std::invalid_argument("minibatch_sample: batch size out of range");
  std::vector<int> indices(static_cast<std::size_t>(data_count));
  std::iota(indices.begin(), indices.end(), 0);
  for (int i = 0; i < batch; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(data_count - i)));
    std::swap(indices[static_cast<std::size_t>(i)], indices[static_cast<std::size_t>(j)]);
  }
  indices.resize(static_cast<std::size_t>(batch));
  return indices;
}

void sgd_step(std::vector<double>& params, const models::SampleProblem& problem, double eta,
              std::span<const int> batch_indices) {
  const std::vector<double> grad = gradstats::mean_grad(problem, params, batch_indices);
  axpy(params, -eta, grad);
  for (double w : params)
    if (!std::isfinite(w)) throw std::runtime_error("sgd_step: parameters diverged to non-finite values");
}

void sgld_step(std::vector<double>& params, const models::SampleProblem& problem, double eta,
               std::span<const int> batch_indices, const noise::NoiseModel& noise_model,
               linalg::Rng& rng) {
  sgd_step(params, problem, eta, batch_indices);
  const std::vector<double> noise_draw = noise_model.sample(rng);
  axpy(params, 1.0, noise_draw);
}

void prior_step(std::vector<double>& params, const models::SampleProblem& problem, double eta,
                std::span<const int> batch_indices, int excluded_index, double sigma_t,
                linalg::Rng& rng) {
  if (excluded_index < 0 || excluded_index >= problem.count)
    throw std::invalid_argument("prior_step: excluded index out of range");
  const int b = static_cast<int>(batch_indices.size());

  if (!contains(batch_indices, excluded_index)) {
    const std::vector<double> grad = gradstats::mean_grad(problem, params, batch_indices);
    axpy(params, -eta, grad);
  } else {
    // Batch hits the held-out sample: weight (b-1)/b on the kept part of the
    // batch and 1/b on the mean gradient over the kept set J. Both terms are
    // evaluated at the pre-step parameters.
    std::vector<int> kept;
    kept.reserve(static_cast<std::size_t>(b));
    for (int idx : batch_indices)
      if (idx != excluded_index) kept.push_back(idx);
    std::vector<int> j_set;
    j_set.reserve(static_cast<std::size_t>(problem.count - 1));
    for (int idx = 0; idx < problem.count; ++idx)
      if (idx != excluded_index) j_set.push_back(idx);
    const std::vector<double> grad_j = gradstats::mean_grad(problem, params, j_set);
    if (!kept.empty()) {
      const std::vector<double> grad_kept = gradstats::mean_grad(problem, params, kept);
      axpy(params, -eta * static_cast<double>(b - 1) / b, grad_kept);
    }
    axpy(params, -eta / b, grad_j);
  }
  const noise::NoiseModel iso = noise::NoiseModel::isotropic(problem.dim, sigma_t);
  axpy(params, 1.0, iso.sample(rng));
  for (double w : params)
    if (!std::isfinite(w)) throw std::runtime_error("prior_step: parameters diverged to non-finite values");
}

void greedy_prior_step(std::vector<double>& params, const models::SampleProblem& problem,
                       const models::SampleProblem& pool_problem, double eta,
                       std::span<const int> batch_indices, int excluded_index,
                       const noise::NoiseModel& noise_model, linalg::Rng& rng) {
  if (pool_problem.count < 1) throw std::invalid_argument("greedy_prior_step: empty pool");
  if (excluded_index < 0 || excluded_index >= problem.count)
    throw std::invalid_argument("greedy_prior_step: excluded index out of range");
  const int b = static_cast<int>(batch_indices.size());

  std::vector<int> kept;
  kept.reserve(static_cast<std::size_t>(b));
  for (int idx : batch_indices)
    if (idx != excluded_index) kept.push_back(idx);
  const int miss = b - static_cast<int>(kept.size());

  std::vector<double> grad_kept;
  if (!kept.empty()) grad_kept = gradstats::mean_grad(problem, params, kept);
  std::vector<double> grad_pool;
  if (miss > 0) grad_pool = gradstats::mean_grad(pool_problem, params);
  if (!grad_kept.empty()) axpy(params, -eta * static_cast<double>(kept.size()) / b, grad_kept);
  if (!grad_pool.empty()) axpy(params, -eta * static_cast<double>(miss) / b, grad_pool);
  axpy(params, 1.0, noise_model.sample(rng));
  for (double w : params)
    if (!std::isfinite(w))
      throw std::runtime_error("greedy_prior_step: parameters diverged to non-finite values");
}

Trajectory run_training(const TrainConfig& config, const models::Dataset& train,
                        const models::Dataset& test, Mode mode, const models::Dataset* pop_pool) {
  if (config.eta <= 0.0) throw std::invalid_argument("run_training: eta must be positive");
  if (config.batch < 1 || config.batch > train.count)
    throw std::invalid_argument("run_training: batch size out of range");
  if (config.steps <= 0 && config.epochs <= 0)
    throw std::invalid_argument("run_training: need a positive step or epoch count");
  const bool wants_pool = mode == Mode::kGreedyPriorChain || !config.pop_proxy_plugin;
  if (wants_pool && pop_pool == nullptr)
    throw std::invalid_argument("run_training: mode requires a population pool");

  const models::SampleProblem problem = models::make_problem(config.model, config.loss, train);
  const models::SampleProblem test_problem = models::make_problem(config.model, config.loss, test);
  models::SampleProblem pool_problem;
  if (pop_pool != nullptr) pool_problem = models::make_problem(config.model, config.loss, *pop_pool);

  const int n = train.count;
  const int b = config.batch;
  const int d = problem.dim;
  const int steps_per_epoch = (n + b - 1) / b;
  const long total_steps = config.steps > 0 ? config.steps
                                            : static_cast<long>(config.epochs) * steps_per_epoch;

  const linalg::Rng base(config.seed);
  linalg::Rng rng_init = base.split(1);
  linalg::Rng rng_batch = base.split(2);
  linalg::Rng rng_noise = base.split(3);
  linalg::Rng rng_j = base.split(4);
  linalg::Rng rng_stats = base.split(5);

  std::vector<double> params = models::init_params(config.model, rng_init);
  const int excluded_index = static_cast<int>(rng_j.below(static_cast<std::uint64_t>(n)));

  noise::NoiseSpec noise_spec = config.noise;
  noise_spec.prior_sigma = config.prior_sigma;
  switch (mode) {
    case Mode::kSgd:
    case Mode::kPriorChain:
      break;  // no realized structure
    case Mode::kIso:
      noise_spec.structure = noise::Structure::kIsoTraceMatched;
      break;
    case Mode::kIsoC:
      noise_spec.structure = noise::Structure::kIsoTraceMatched;
      noise_spec.budget = noise::TraceBudget::scale_of_cov(1.0);
      break;
    case Mode::kIsoH:
      noise_spec.structure = noise::Structure::kIsoHessianMatched;
      break;
    case Mode::kEc:
      noise_spec.structure = noise::Structure::kEmpiricalCov;
      break;
    case Mode::kSrec:
      noise_spec.structure = noise::Structure::kSqrtEmpiricalCov;
      break;
    case Mode::kFixedPriorOpt:
      noise_spec.structure = noise::Structure::kFixedPriorOptimal;
      break;
    case Mode::kGreedyPriorChain:
      noise_spec.structure = noise::Structure::kSqrtPopulationCov;
      break;
  }
  const bool injects_noise = mode != Mode::kSgd;
  const bool tracks_greedy_bound = mode == Mode::kIso || mode == Mode::kIsoC || mode == Mode::kIsoH ||
                                   mode == Mode::kEc || mode == Mode::kSrec;
  const bool tracks_fixed_prior_bound = mode == Mode::kFixedPriorOpt;

  Trajectory trajectory;
  trajectory.ledger = bound::BoundLedger(config.loss.floor, config.loss.clip);
  trajectory.total_steps = total_steps;

  RefreshCache cache;
  cache.noise_model = noise::NoiseModel::zero(d);

  const auto start_time = std::chrono::steady_clock::now();
  const double initial_loss = gradstats::mean_loss(problem, params);
  int divergence_strikes = 0;

  auto refresh = [&]() {
    const gradstats::GradBatch batch_grads = gradstats::per_sample_grads(problem, params);
    const gradstats::GradCovariance emp = gradstats::empirical_grad_cov(batch_grads);
    const noise::CovSpectrum emp_spectrum = noise::cov_spectrum(emp, config.topk);

    gradstats::GradCovariance pop_holder;
    noise::CovSpectrum pop_spectrum_holder;
    const gradstats::GradCovariance* pop = &emp;
    const noise::CovSpectrum* pop_spectrum = &emp_spectrum;
    if (!config.pop_proxy_plugin) {
      pop_holder = gradstats::population_cov_estimate(pool_problem, params);
      pop_spectrum_holder = noise::cov_spectrum(pop_holder, config.topk);
      pop = &pop_holder;
      pop_spectrum = &pop_spectrum_holder;
    }

    noise::StatsBundle stats;
    stats.dim = d;
    stats.emp_cov = &emp;
    stats.pop_cov = pop;
    stats.emp_spectrum = &emp_spectrum;
    stats.pop_spectrum = pop_spectrum;
    stats.eta = config.eta;
    stats.data_count = n;
    stats.batch = b;
    stats.topk = config.topk;
    if (noise_spec.structure == noise::Structure::kIsoHessianMatched && injects_noise) {
      const gradstats::HessianTraces traces = gradstats::hessian_trace_hutchinson(
          problem, params, emp, config.hutchinson_probes, -1.0, rng_stats);
      stats.hessian_trace = traces.hessian_trace.value;
      stats.hess_cov_trace = traces.hessian_cov_trace.value;
    }

    if (mode == Mode::kPriorChain) {
      cache.noise_model = noise::NoiseModel::isotropic(d, config.prior_sigma);
    } else if (injects_noise) {
      noise::NoiseSpec realized_spec = noise_spec;
      if (noise_spec.freeze_budget) {
        if (!cache.frozen_budget) cache.frozen_budget = noise::resolve_budget(noise_spec, stats);
        realized_spec.budget = noise::TraceBudget::absolute(std::max(*cache.frozen_budget, 0.0));
      }
      if (noise_spec.freeze_budget && !(*cache.frozen_budget > 0.0)) {
        cache.noise_model = noise::NoiseModel::zero(d);
      } else if (noise_spec.freeze_budget &&
                 noise_spec.structure == noise::Structure::kIsoHessianMatched) {
        // The Hessian-matched baseline defines its own trace; freezing keeps
        // the per-coordinate scale from the first refresh.
        cache.noise_model = noise::NoiseModel::isotropic(d, *cache.frozen_budget / d);
      } else {
        cache.noise_model = noise::realize_noise(realized_spec, stats);
      }
    }

    // Spectral ratio logged along every trajectory: lambda_1 / lambda_k with
    // k = max(2, d/20), clamped to the available spectrum.
    const int available = std::min(n, d);
    const int ratio_k = std::clamp(std::max(2, d / 20), 2, available);
    if (ratio_k <= emp_spectrum.count()) {
      const double bottom = emp_spectrum.values[static_cast<std::size_t>(ratio_k - 1)];
      cache.eigen_ratio = bottom > 0.0 ? emp_spectrum.values.front() / bottom
                                       : std::numeric_limits<double>::infinity();
    } else {
      cache.eigen_ratio = gradstats::eigen_ratio(emp, 1, ratio_k);
    }

    // The bound sees the population proxy through the same truncated
    // spectral form the noise was designed from. A zero noise model means
    // the run has degenerated to SGD, where the reverse KL is undefined;
    // those steps contribute nothing, matching the SGD mode.
    const double inv_floor = 1e-10 * std::max(cache.noise_model.trace, 0.0) / d;
    if (cache.noise_model.is_zero()) {
      cache.kl_if_hit = 0.0;
      cache.kl_fixed_prior = 0.0;
    } else if (tracks_greedy_bound) {
      const double trace_inv_pop = cache.noise_model.trace_inv_times(*pop_spectrum, inv_floor);
      cache.kl_if_hit = bound::step_kl_greedy_term(trace_inv_pop, config.eta, n, b);
    } else if (tracks_fixed_prior_bound) {
      cache.kl_fixed_prior = bound::step_kl_fixed_prior_terms(
          cache.noise_model.trace_inverse(inv_floor), cache.noise_model.log_det(inv_floor), d,
          config.prior_sigma, config.eta, n, b,
          cache.noise_model.trace_inv_times(emp_spectrum, inv_floor));
    }
  };

  for (long step = 1; step <= total_steps; ++step) {
    const int epoch = static_cast<int>((step - 1) / steps_per_epoch);
    const bool epoch_start = (step - 1) % steps_per_epoch == 0;
    const bool warm = epoch < config.warmup_epochs;
    if (epoch_start && epoch % config.refresh_period_epochs == 0 && !warm) refresh();

    const std::vector<int> batch_indices = minibatch_sample(rng_batch, n, b);
    const bool hit = contains(batch_indices, excluded_index);

    try {
      if (warm) {
        sgd_step(params, problem, config.eta, batch_indices);
      } else {
        switch (mode) {
          case Mode::kSgd:
            sgd_step(params, problem, config.eta, batch_indices);
            break;
          case Mode::kPriorChain:
            prior_step(params, problem, config.eta, batch_indices, excluded_index, config.prior_sigma,
                       rng_noise);
            break;
          case Mode::kGreedyPriorChain:
            greedy_prior_step(params, problem, pool_problem, config.eta, batch_indices, excluded_index,
                              cache.noise_model, rng_noise);
            break;
          default:
            sgld_step(params, problem, config.eta, batch_indices, cache.noise_model, rng_noise);
            break;
        }
      }
    } catch (const std::runtime_error& err) {
      trajectory.failed = true;
      trajectory.failure_reason = err.what();
      break;
    }

    if (!warm && tracks_greedy_bound) {
      const double kl = config.expected_hit ? cache.kl_if_hit * b / n : (hit ? cache.kl_if_hit : 0.0);
      trajectory.ledger.add(step, kl, bound::KlVariant::kGreedy);
    } else if (!warm && tracks_fixed_prior_bound) {
      trajectory.ledger.add(step, cache.kl_fixed_prior, bound::KlVariant::kFixedPrior);
    }

    if (step % config.log_every == 0 || step == total_steps) {
      LogRecord record;
      record.step = step;
      record.epoch = epoch;
      record.train_loss = gradstats::mean_loss(problem, params);
      record.test_loss = gradstats::mean_loss(test_problem, params);
      record.gen_err = record.test_loss - record.train_loss;
      record.bound_estimate = bound::accumulate_bound(trajectory.ledger);
      record.noise_trace = cache.noise_model.trace;
      record.eigen_ratio = cache.eigen_ratio;
      record.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                                 start_time)
                           .count();
      trajectory.records.push_back(record);

      if (record.train_loss > config.divergence_factor * std::max(initial_loss, 1e-12)) {
        if (++divergence_strikes >= config.divergence_patience) {
          trajectory.failed = true;
          trajectory.failure_reason = "train loss exceeded " +
                                      std::to_string(config.divergence_factor) +
                                      "x the initial value for " +
                                      std::to_string(config.divergence_patience) + " consecutive logs";
          break;
        }
      } else {
        divergence_strikes = 0;
      }
    }
  }

  trajectory.final_params = std::move(params);
  return trajectory;
}

DescentCheckResult descent_bound_check(const models::SampleProblem& problem,
                                       std::span<const double> params, double eta, int batch,
                                       const noise::NoiseModel& noise_model, double beta,
                                       int mc_reps, linalg::Rng& rng) {
  if (mc_reps < 1) throw std::invalid_argument("descent_bound_check: mc_reps must be positive");
  const int n = problem.count;
  if (batch < 1 || batch > n) throw std::invalid_argument("descent_bound_check: batch size out of range");

  const double risk0 = gradstats::mean_loss(problem, params);
  const std::vector<double> grad_full = gradstats::mean_grad(problem, params);
  double grad_norm_sq = 0.0;
  for (double g : grad_full) grad_norm_sq += g * g;

  const gradstats::GradCovariance cov =
      gradstats::empirical_grad_cov(gradstats::per_sample_grads(problem, params));
  const double minibatch_factor =
      (batch == n || n == 1) ? 0.0
                             : eta * eta * static_cast<double>(n - batch) /
                                   (static_cast<double>(n - 1) * batch);
  const double rhs = -(1.0 - beta * eta / 2.0) * eta * grad_norm_sq +
                     0.5 * beta * (minibatch_factor * cov.trace + noise_model.trace);

  std::vector<double> trial(params.begin(), params.end());
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int rep = 0; rep < mc_reps; ++rep) {
    const std::vector<int> batch_indices = minibatch_sample(rng, n, batch);
    const std::vector<double> grad = gradstats::mean_grad(problem, params, batch_indices);
    const std::vector<double> noise_draw = noise_model.sample(rng);
    for (std::size_t i = 0; i < trial.size(); ++i)
      trial[i] = params[i] - eta * grad[i] + noise_draw[i];
    const double delta = gradstats::mean_loss(problem, trial) - risk0;
    sum += delta;
    sum_sq += delta * delta;
  }
  DescentCheckResult result;
  result.lhs = sum / mc_reps;
  const double var = mc_reps > 1 ? (sum_sq - sum * sum / mc_reps) / (mc_reps - 1) : 0.0;
  result.lhs_std_error = std::sqrt(std::max(var, 0.0) / mc_reps);
  result.rhs = rhs;
  return result;
}

}  // namespace sgld::dynamics
