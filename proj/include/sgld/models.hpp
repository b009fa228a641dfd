#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sgld/linalg.hpp"

// Small differentiable models with analytic per-sample gradients, a bounded
// cross-entropy loss, and data ingestion (synthetic blobs + IDX files).

namespace sgld::models {

struct Dataset {
  int count = 0;
  int feature_dim = 0;
  int classes = 0;
  std::vector<double> features;  // count x feature_dim, row-major
  std::vector<int> labels;       // values in [0, classes)
  std::string name;

  std::span<const double> row(int i) const {
    return {features.data() + static_cast<std::size_t>(i) * feature_dim,
            static_cast<std::size_t>(feature_dim)};
  }
};

enum class Activation { kTanh, kRelu };

// layer_widths runs input -> hidden... -> classes; a bare logistic regression
// is the two-entry case with no hidden activation applied.
struct ModelSpec {
  std::vector<int> layer_widths;
  Activation activation = Activation::kTanh;

  static ModelSpec logistic_regression(int inputs, int classes);
  static ModelSpec mlp(std::vector<int> widths, Activation act = Activation::kTanh);

  int param_count() const;
  std::string describe() const;
};

// Cross-entropy clipped to [floor, clip]; the clip keeps every reported loss
// bounded, which the trajectory-level bound computations require.
struct LossSpec {
  double clip = 10.0;
  double floor = 0.0;
};

// Uniform per-layer init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
std::vector<double> init_params(const ModelSpec& spec, linalg::Rng& rng);

// min(cross_entropy, clip); always in [0, clip].
double forward_loss(const ModelSpec& spec, std::span<const double> params,
                    std::span<const double> features, int label, const LossSpec& loss);

// Analytic backprop gradient of the unclipped loss; exactly zero when the
// clip is active (the documented subgradient choice). Returns the clipped loss.
double grad_sample(const ModelSpec& spec, std::span<const double> params,
                   std::span<const double> features, int label, const LossSpec& loss,
                   std::span<double> grad_out);

// Uniform interface consumed by gradient statistics and the training loops;
// lets tests substitute synthetic problems (e.g. quadratics) for real models.
struct SampleProblem {
  int count = 0;
  int dim = 0;
  std::function<double(std::span<const double>, int)> loss;
  // Returns the loss; writes the gradient of sample i at params into grad_out.
  std::function<double(std::span<const double>, int, std::span<double>)> loss_grad;
};

SampleProblem make_problem(const ModelSpec& spec, const LossSpec& loss, const Dataset& data);

// Big-endian IDX pair (images magic 0x803, labels magic 0x801); pixels scaled
// to [0,1]. Paths ending in ".gz" are decompressed transparently.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Gaussian blobs around class means arranged on a regular simplex (circle
// fallback when the dimension is too small). Deterministic under the rng.
Dataset synth_blobs(linalg::Rng& rng, int classes, int dim, int n, double spread);

// Uniform subsample without replacement (partial Fisher-Yates order).
Dataset subsample(const Dataset& data, int n, linalg::Rng& rng);

}  // namespace sgld::models
