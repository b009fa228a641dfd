#include "sgld/models.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace sgld::models {

namespace {

double activate(Activation act, double z) {
  return act == Activation::kTanh ? std::tanh(z) : std::max(z, 0.0);
}

double activate_grad(Activation act, double z) {
  if (act == Activation::kTanh) {
    const double t = std::tanh(z);
    return 1.0 - t * t;
  }
  return z > 0.0 ? 1.0 : 0.0;
}

std::vector<double> forward_logits(const ModelSpec& spec, std::span<const double> params,
                                   std::span<const double> features) {
  const auto& widths = spec.layer_widths;
  std::vector<double> current(features.begin(), features.end());
  std::size_t offset = 0;
  for (std::size_t layer = 0; layer + 1 < widths.size(); ++layer) {
    const int in = widths[layer];
    const int out = widths[layer + 1];
    const double* w = params.data() + offset;
    const double* b = w + static_cast<std::size_t>(out) * in;
    std::vector<double> z(static_cast<std::size_t>(out));
    for (int r = 0; r < out; ++r) {
      double acc = b[r];
      const double* row = w + static_cast<std::size_t>(r) * in;
      for (int c = 0; c < in; ++c) acc += row[c] * current[static_cast<std::size_t>(c)];
      z[static_cast<std::size_t>(r)] = acc;
    }
    offset += static_cast<std::size_t>(out) * in + out;
    if (layer + 2 < widths.size())
      for (double& x : z) x = activate(spec.activation, x);
    current = std::move(z);
  }
  return current;
}

double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

void check_dims(const ModelSpec& spec, std::span<const double> params,
                std::span<const double> features) {
  if (spec.layer_widths.size() < 2) throw std::invalid_argument("ModelSpec: need at least two layer widths");
  if (static_cast<int>(features.size()) != spec.layer_widths.front())
    throw std::invalid_argument("model input dimension mismatch");
  if (static_cast<int>(params.size()) != spec.param_count())
    throw std::invalid_argument("parameter vector length mismatch");
}

}  // namespace

ModelSpec ModelSpec::logistic_regression(int inputs, int classes) {
  ModelSpec spec;
  spec.layer_widths = {inputs, classes};
  return spec;
}

ModelSpec ModelSpec::mlp(std::vector<int> widths, Activation act) {
  ModelSpec spec;
  spec.layer_widths = std::move(widths);
  spec.activation = act;
  return spec;
}

int ModelSpec::param_count() const {
  int d = 0;
  for (std::size_t layer = 0; layer + 1 < layer_widths.size(); ++layer) {
    if (layer_widths[layer] <= 0 || layer_widths[layer + 1] <= 0)
      throw std::invalid_argument("ModelSpec: layer widths must be positive");
    d += layer_widths[layer] * layer_widths[layer + 1] + layer_widths[layer + 1];
  }
  return d;
}

std::string ModelSpec::describe() const {
  std::string s = layer_widths.size() == 2 ? "logistic(" : "mlp(";
  for (std::size_t i = 0; i < layer_widths.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(layer_widths[i]);
  }
  if (layer_widths.size() > 2) s += activation == Activation::kTanh ? ",tanh" : ",relu";
  return s + ")";
}

std::vector<double> init_params(const ModelSpec& spec, linalg::Rng& rng) {
  std::vector<double> params(static_cast<std::size_t>(spec.param_count()));
  std::size_t offset = 0;
  for (std::size_t layer = 0; layer + 1 < spec.layer_widths.size(); ++layer) {
    const int in = spec.layer_widths[layer];
    const int out = spec.layer_widths[layer + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    const std::size_t count = static_cast<std::size_t>(out) * in + out;
    for (std::size_t i = 0; i < count; ++i)
      params[offset + i] = bound * (2.0 * rng.uniform() - 1.0);
    offset += count;
  }
  return params;
}

double forward_loss(const ModelSpec& spec, std::span<const double> params,
                    std::span<const double> features, int label, const LossSpec& loss) {
  check_dims(spec, params, features);
  if (label < 0 || label >= spec.layer_widths.back())
    throw std::invalid_argument("label out of range");
  const std::vector<double> logits = forward_logits(spec, params, features);
  const double ce = log_sum_exp(logits) - logits[static_cast<std::size_t>(label)];
  return std::min(ce, loss.clip);
}

double grad_sample(const ModelSpec& spec, std::span<const double> params,
                   std::span<const double> features, int label, const LossSpec& loss,
                   std::span<double> grad_out) {
  check_dims(spec, params, features);
  if (static_cast<int>(grad_out.size()) != spec.param_count())
    throw std::invalid_argument("gradient buffer length mismatch");
  if (label < 0 || label >= spec.layer_widths.back())
    throw std::invalid_argument("label out of range");

  const auto& widths = spec.layer_widths;
  const std::size_t layer_count = widths.size() - 1;

  // Forward pass, keeping per-layer pre-activations.
  std::vector<std::vector<double>> acts;        // acts[l] = input of layer l
  std::vector<std::vector<double>> preacts(layer_count);
  acts.emplace_back(features.begin(), features.end());
  std::size_t offset = 0;
  std::vector<std::size_t> layer_offsets(layer_count);
  for (std::size_t layer = 0; layer < layer_count; ++layer) {
    layer_offsets[layer] = offset;
    const int in = widths[layer];
    const int out = widths[layer + 1];
    const double* w = params.data() + offset;
    const double* b = w + static_cast<std::size_t>(out) * in;
    std::vector<double> z(static_cast<std::size_t>(out));
    for (int r = 0; r < out; ++r) {
      double acc = b[r];
      const double* row = w + static_cast<std::size_t>(r) * in;
      for (int c = 0; c < in; ++c) acc += row[c] * acts[layer][static_cast<std::size_t>(c)];
      z[static_cast<std::size_t>(r)] = acc;
      if (!std::isfinite(acc)) throw std::runtime_error("grad_sample: non-finite pre-activation");
    }
    offset += static_cast<std::size_t>(out) * in + out;
    preacts[layer] = z;
    if (layer + 1 < layer_count) {
      std::vector<double> a(z.size());
      for (std::size_t i = 0; i < z.size(); ++i) a[i] = activate(spec.activation, z[i]);
      acts.push_back(std::move(a));
    }
  }

  const auto& logits = preacts.back();
  const double ce = log_sum_exp(logits) - logits[static_cast<std::size_t>(label)];
  std::fill(grad_out.begin(), grad_out.end(), 0.0);
  if (ce >= loss.clip) return loss.clip;  // clip active: zero subgradient

  // Backward pass: delta on logits is softmax - onehot.
  const double m = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double x : logits) denom += std::exp(x - m);
  std::vector<double> delta(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    delta[i] = std::exp(logits[i] - m) / denom - (static_cast<int>(i) == label ? 1.0 : 0.0);

  for (std::size_t layer = layer_count; layer-- > 0;) {
    const int in = widths[layer];
    const int out = widths[layer + 1];
    const double* w = params.data() + layer_offsets[layer];
    double* gw = grad_out.data() + layer_offsets[layer];
    double* gb = gw + static_cast<std::size_t>(out) * in;
    const auto& input = acts[layer];
    for (int r = 0; r < out; ++r) {
      const double dr = delta[static_cast<std::size_t>(r)];
      gb[r] = dr;
      double* grow = gw + static_cast<std::size_t>(r) * in;
      for (int c = 0; c < in; ++c) grow[c] = dr * input[static_cast<std::size_t>(c)];
    }
    if (layer == 0) break;
    std::vector<double> prev_delta(static_cast<std::size_t>(in), 0.0);
    for (int r = 0; r < out; ++r) {
      const double dr = delta[static_cast<std::size_t>(r)];
      const double* row = w + static_cast<std::size_t>(r) * in;
      for (int c = 0; c < in; ++c) prev_delta[static_cast<std::size_t>(c)] += dr * row[c];
    }
    const auto& z_prev = preacts[layer - 1];
    for (int c = 0; c < in; ++c)
      prev_delta[static_cast<std::size_t>(c)] *= activate_grad(spec.activation, z_prev[static_cast<std::size_t>(c)]);
    delta = std::move(prev_delta);
  }
  return ce;
}

SampleProblem make_problem(const ModelSpec& spec, const LossSpec& loss, const Dataset& data) {
  if (data.feature_dim != spec.layer_widths.front())
    throw std::invalid_argument("make_problem: dataset feature dimension does not match model input");
  if (data.classes > spec.layer_widths.back())
    throw std::invalid_argument("make_problem: dataset has more classes than model outputs");
  SampleProblem problem;
  problem.count = data.count;
  problem.dim = spec.param_count();
  problem.loss = [&spec, loss, &data](std::span<const double> params, int i) {
    return forward_loss(spec, params, data.row(i), data.labels[static_cast<std::size_t>(i)], loss);
  };
  problem.loss_grad = [&spec, loss, &data](std::span<const double> params, int i, std::span<double> grad) {
    return grad_sample(spec, params, data.row(i), data.labels[static_cast<std::size_t>(i)], loss, grad);
  };
  return problem;
}

namespace {

// gzFile reads both gzip and plain files; offsets reported are offsets into
// the decompressed stream.
class IdxReader {
 public:
  explicit IdxReader(const std::string& path) : path_(path), file_(gzopen(path.c_str(), "rb")) {
    if (file_ == nullptr) throw std::runtime_error("load_idx: cannot open " + path);
  }
  ~IdxReader() {
    if (file_ != nullptr) gzclose(file_);
  }
  IdxReader(const IdxReader&) = delete;
  IdxReader& operator=(const IdxReader&) = delete;

  std::uint32_t read_u32() {
    unsigned char buf[4];
    read_exact(buf, 4);
    return (static_cast<std::uint32_t>(buf[0]) << 24) | (static_cast<std::uint32_t>(buf[1]) << 16) |
           (static_cast<std::uint32_t>(buf[2]) << 8) | static_cast<std::uint32_t>(buf[3]);
  }

  void read_exact(unsigned char* out, std::size_t count) {
    const int got = gzread(file_, out, static_cast<unsigned>(count));
    if (got < 0 || static_cast<std::size_t>(got) != count)
      throw std::runtime_error("load_idx: " + path_ + " truncated at offset " + std::to_string(offset_));
    offset_ += count;
  }

  std::size_t offset() const { return offset_; }

 private:
  std::string path_;
  gzFile file_;
  std::size_t offset_ = 0;
};

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  IdxReader images(images_path);
  const std::uint32_t image_magic = images.read_u32();
  if (image_magic != 0x00000803u)
    throw std::runtime_error("load_idx: bad image magic 0x" + std::to_string(image_magic) + " in " +
                             images_path + " at offset 0");
  const std::uint32_t image_count = images.read_u32();
  const std::uint32_t rows = images.read_u32();
  const std::uint32_t cols = images.read_u32();

  IdxReader labels(labels_path);
  const std::uint32_t label_magic = labels.read_u32();
  if (label_magic != 0x00000801u)
    throw std::runtime_error("load_idx: bad label magic 0x" + std::to_string(label_magic) + " in " +
                             labels_path + " at offset 0");
  const std::uint32_t label_count = labels.read_u32();
  if (image_count != label_count)
    throw std::runtime_error("load_idx: image count " + std::to_string(image_count) +
                             " does not match label count " + std::to_string(label_count));

  Dataset data;
  data.count = static_cast<int>(image_count);
  data.feature_dim = static_cast<int>(rows * cols);
  data.name = images_path;
  data.features.resize(static_cast<std::size_t>(data.count) * data.feature_dim);
  data.labels.resize(static_cast<std::size_t>(data.count));

  std::vector<unsigned char> pixel_buf(static_cast<std::size_t>(data.feature_dim));
  for (int i = 0; i < data.count; ++i) {
    images.read_exact(pixel_buf.data(), pixel_buf.size());
    double* out = data.features.data() + static_cast<std::size_t>(i) * data.feature_dim;
    for (std::size_t j = 0; j < pixel_buf.size(); ++j) out[j] = pixel_buf[j] / 255.0;
  }
  int max_label = 0;
  for (int i = 0; i < data.count; ++i) {
    unsigned char label;
    labels.read_exact(&label, 1);
    data.labels[static_cast<std::size_t>(i)] = label;
    max_label = std::max(max_label, static_cast<int>(label));
  }
  data.classes = max_label + 1;
  return data;
}

Dataset synth_blobs(linalg::Rng& rng, int classes, int dim, int n, double spread) {
  if (classes < 2) throw std::invalid_argument("synth_blobs: need at least two classes");
  if (dim < 1) throw std::invalid_argument("synth_blobs: dimension must be positive");
  if (n < classes) throw std::invalid_argument("synth_blobs: need at least one point per class");

  constexpr double kRadius = 4.0;
  std::vector<std::vector<double>> means(static_cast<std::size_t>(classes),
                                         std::vector<double>(static_cast<std::size_t>(dim), 0.0));
  if (dim >= classes) {
    // Regular simplex: centered unit axes.
    for (int c = 0; c < classes; ++c) {
      for (int j = 0; j < classes; ++j)
        means[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] =
            kRadius * ((j == c ? 1.0 : 0.0) - 1.0 / classes);
    }
  } else if (dim >= 2) {
    for (int c = 0; c < classes; ++c) {
      const double angle = 2.0 * 3.14159265358979323846 * c / classes;
      means[static_cast<std::size_t>(c)][0] = kRadius * std::cos(angle);
      means[static_cast<std::size_t>(c)][1] = kRadius * std::sin(angle);
    }
  } else {
    for (int c = 0; c < classes; ++c) means[static_cast<std::size_t>(c)][0] = kRadius * c;
  }

  Dataset data;
  data.count = n;
  data.feature_dim = dim;
  data.classes = classes;
  data.name = "blobs";
  data.features.resize(static_cast<std::size_t>(n) * dim);
  data.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int c = i % classes;
    data.labels[static_cast<std::size_t>(i)] = c;
    double* out = data.features.data() + static_cast<std::size_t>(i) * dim;
    for (int j = 0; j < dim; ++j)
      out[j] = means[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] + spread * rng.gaussian();
  }
  return data;
}

Dataset subsample(const Dataset& data, int n, linalg::Rng& rng) {
  if (n < 1 || n > data.count) throw std::invalid_argument("subsample: n out of range");
  std::vector<int> indices(static_cast<std::size_t>(data.count));
  std::iota(indices.begin(), indices.end(), 0);
  for (int i = 0; i < n; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(data.count - i)));
    std::swap(indices[static_cast<std::size_t>(i)], indices[static_cast<std::size_t>(j)]);
  }
  Dataset out;
  out.count = n;
  out.feature_dim = data.feature_dim;
  out.classes = data.classes;
  out.name = data.name + "/sub" + std::to_string(n);
  out.features.resize(static_cast<std::size_t>(n) * data.feature_dim);
  out.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int src = indices[static_cast<std::size_t>(i)];
    const auto row = data.row(src);
    std::copy(row.begin(), row.end(), out.features.begin() + static_cast<std::size_t>(i) * data.feature_dim);
    out.labels[static_cast<std::size_t>(i)] = data.labels[static_cast<std::size_t>(src)];
  }
  return out;
}

}  // namespace sgld::models
