#include "ftl/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ftl/kernels.hpp"
#include "ftl/rng.hpp"

namespace ftl {

namespace kp = kernels::parallel;

std::string to_string(BackboneKind k) { return k == BackboneKind::toy_cnn ? "toy_cnn" : "external"; }

BackboneKind parse_backbone_kind(const std::string& s) {
  if (s == "toy_cnn") return BackboneKind::toy_cnn;
  if (s == "external") return BackboneKind::external;
  throw ValidationError("backbone must be \"toy_cnn\" or \"external\", got \"" + s + "\"");
}

std::string to_string(FinetuneMode m) { return m == FinetuneMode::full ? "full" : "bitfit"; }

FinetuneMode parse_finetune_mode(const std::string& s) {
  if (s == "full") return FinetuneMode::full;
  if (s == "bitfit") return FinetuneMode::bitfit;
  throw ValidationError("finetune_mode must be \"full\" or \"bitfit\", got \"" + s + "\"");
}

int ModelConfig::category_index(const std::string& name) const {
  auto it = std::find(categories.begin(), categories.end(), name);
  if (it == categories.end()) throw ValidationError("unknown forgery category \"" + name + "\" for this model");
  return static_cast<int>(it - categories.begin());
}

void validate(const ModelConfig& cfg) {
  const auto& b = cfg.backbone;
  if (b.kind == BackboneKind::external) {
    throw ValidationError(
        "backbone \"external\" needs pretrained weights, which are not bundled; use \"toy_cnn\"");
  }
  if (b.image_size < 1 || b.in_channels < 1 || b.embedding_dim < 1 || b.conv_channels.empty()) {
    throw ValidationError("backbone dimensions must be positive");
  }
  for (int c : b.conv_channels) {
    if (c < 1) throw ValidationError("conv channel counts must be positive");
  }
  if (cfg.discriminator_hidden < 1) throw ValidationError("discriminator_hidden must be positive");
  if (cfg.categories.size() < 2 || cfg.categories.front() != "real") {
    throw ValidationError("model categories must start with \"real\" and name at least one forgery family");
  }
}

std::size_t ParameterInfo::count() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
}

std::vector<ParameterInfo> apply_bitfit_mask(std::vector<ParameterInfo> params, FinetuneMode mode) {
  for (auto& p : params) {
    p.trainable = p.role != ParamRole::backbone || mode == FinetuneMode::full || p.is_bias;
  }
  return params;
}

ParameterCount count_parameters(const std::vector<ParameterInfo>& params) {
  ParameterCount c;
  for (const auto& p : params) {
    c.total += p.count();
    if (p.trainable) c.trainable += p.count();
  }
  return c;
}

ImageBatch make_batch(std::span<const Image* const> images) {
  ImageBatch b;
  if (images.empty()) return b;
  const Image& first = *images.front();
  b.batch = static_cast<int>(images.size());
  b.channels = first.channels;
  b.height = first.height;
  b.width = first.width;
  const std::size_t plane = static_cast<std::size_t>(b.height) * b.width;
  b.data.resize(images.size() * b.channels * plane);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    if (img.channels != b.channels || img.height != b.height || img.width != b.width) {
      throw ValidationError("make_batch: images differ in shape");
    }
    for (int c = 0; c < b.channels; ++c) {
      for (int y = 0; y < b.height; ++y) {
        for (int x = 0; x < b.width; ++x) {
          b.data[(n * b.channels + c) * plane + static_cast<std::size_t>(y) * b.width + x] = img.at(y, x, c) / 255.0;
        }
      }
    }
  }
  return b;
}

EmbeddingBatch grl_apply(const EmbeddingBatch& x, const GrlConfig& cfg) {
  if (!(cfg.lambda >= 0.0)) throw ValidationError("GRL lambda must be non-negative");
  return x;
}

Matrix grl_backward(const Matrix& grad, const GrlConfig& cfg) {
  if (!(cfg.lambda >= 0.0)) throw ValidationError("GRL lambda must be non-negative");
  Matrix out = grad;
  for (auto& v : out.data) v *= -cfg.lambda;
  return out;
}

EmbeddingBatch detach(const EmbeddingBatch& x) { return x; }

std::optional<Matrix> route_gradient(GradientGate gate, const Matrix& grad, double lambda) {
  switch (gate) {
    case GradientGate::pass:
      return grad;
    case GradientGate::reverse:
      return grl_backward(grad, GrlConfig{lambda});
    case GradientGate::block:
      break;
  }
  return std::nullopt;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double silu(double z) { return z * sigmoid(z); }

double silu_derivative(double z) {
  const double s = sigmoid(z);
  return s * (1.0 + z * (1.0 - s));
}

namespace {

Parameter make_param(std::string name, std::vector<int> shape, bool is_bias, ParamRole role) {
  Parameter p;
  p.name = std::move(name);
  p.is_bias = is_bias;
  p.role = role;
  const auto n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                 [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
  p.shape = std::move(shape);
  p.value.assign(n, 0.0);
  return p;
}

int conv_out(int size) { return (size + 2 * 1 - 3) / 2 + 1; }

kernels::ConvShape conv_shape(const BackboneConfig& b, std::size_t layer, int batch) {
  kernels::ConvShape s;
  s.batch = batch;
  s.in_channels = layer == 0 ? b.in_channels : b.conv_channels[layer - 1];
  int size = b.image_size;
  for (std::size_t i = 0; i < layer; ++i) size = conv_out(size);
  s.in_height = s.in_width = size;
  s.out_channels = b.conv_channels[layer];
  s.kernel = 3;
  s.stride = 2;
  s.pad = 1;
  return s;
}

void softmax_rows(Matrix& m) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto row = m.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : row) v /= sum;
  }
}

}  // namespace

void Model::build_layout() {
  const auto& b = cfg_.backbone;
  params_.clear();
  conv_w_.clear();
  conv_b_.clear();
  for (std::size_t l = 0; l < b.conv_channels.size(); ++l) {
    const int in = l == 0 ? b.in_channels : b.conv_channels[l - 1];
    const std::string base = "backbone.conv" + std::to_string(l + 1);
    conv_w_.push_back(params_.size());
    params_.push_back(make_param(base + ".weight", {b.conv_channels[l], in, 3, 3}, false, ParamRole::backbone));
    conv_b_.push_back(params_.size());
    params_.push_back(make_param(base + ".bias", {b.conv_channels[l]}, true, ParamRole::backbone));
  }
  const int last = b.conv_channels.back();
  proj_w_ = params_.size();
  params_.push_back(make_param("backbone.proj.weight", {b.embedding_dim, last}, false, ParamRole::backbone));
  proj_b_ = params_.size();
  params_.push_back(make_param("backbone.proj.bias", {b.embedding_dim}, true, ParamRole::backbone));

  det_w_ = params_.size();
  params_.push_back(make_param("detector.weight", {1, b.embedding_dim}, false, ParamRole::detector));
  det_b_ = params_.size();
  params_.push_back(make_param("detector.bias", {1}, true, ParamRole::detector));

  const int h = cfg_.discriminator_hidden;
  const int k = cfg_.num_categories();
  disc1_w_ = params_.size();
  params_.push_back(make_param("discriminator.fc1.weight", {h, b.embedding_dim}, false, ParamRole::discriminator));
  disc1_b_ = params_.size();
  params_.push_back(make_param("discriminator.fc1.bias", {h}, true, ParamRole::discriminator));
  disc2_w_ = params_.size();
  params_.push_back(make_param("discriminator.fc2.weight", {k, h}, false, ParamRole::discriminator));
  disc2_b_ = params_.size();
  params_.push_back(make_param("discriminator.fc2.bias", {k}, true, ParamRole::discriminator));
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  validate(cfg_);
  build_layout();
  Rng rng(seed);
  // LeCun-normal weights, zero biases.
  for (auto& p : params_) {
    if (p.is_bias) continue;
    const int fan_in = p.shape.size() == 4 ? p.shape[1] * p.shape[2] * p.shape[3] : p.shape[1];
    const double scale = std::sqrt(1.0 / fan_in);
    for (auto& v : p.value) v = scale * rng.normal();
  }
}

Model::Model(ModelConfig cfg, std::vector<Parameter> params) : cfg_(std::move(cfg)) {
  validate(cfg_);
  build_layout();
  if (params.size() != params_.size()) {
    throw ValidationError("parameter list has " + std::to_string(params.size()) + " entries, model expects " +
                          std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& want = params_[i];
    const auto& got = params[i];
    if (got.name != want.name || got.shape != want.shape || got.is_bias != want.is_bias || got.role != want.role ||
        got.value.size() != want.value.size()) {
      throw ValidationError("parameter \"" + got.name + "\" does not match the configured model layout (expected \"" +
                            want.name + "\")");
    }
  }
  params_ = std::move(params);
}

std::vector<ParameterInfo> Model::parameter_info() const {
  std::vector<ParameterInfo> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back({p.name, p.shape, p.is_bias, p.trainable, p.role});
  return out;
}

void Model::set_trainable(const std::vector<ParameterInfo>& mask) {
  if (mask.size() != params_.size()) throw ValidationError("trainable mask size mismatch");
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i].name != params_[i].name) throw ValidationError("trainable mask order mismatch at " + mask[i].name);
    params_[i].trainable = mask[i].trainable;
  }
}

Gradients Model::zero_gradients() const {
  Gradients g;
  g.reserve(params_.size());
  for (const auto& p : params_) g.emplace_back(p.value.size(), 0.0);
  return g;
}

EmbeddingBatch Model::embed(const ImageBatch& images, BackboneTape* tape) const {
  const auto& b = cfg_.backbone;
  if (images.channels != b.in_channels || images.height != b.image_size || images.width != b.image_size) {
    throw ValidationError("embed: expected " + std::to_string(b.image_size) + "x" + std::to_string(b.image_size) + "x" +
                          std::to_string(b.in_channels) + " images, got " + std::to_string(images.height) + "x" +
                          std::to_string(images.width) + "x" + std::to_string(images.channels));
  }
  const int n = images.batch;
  BackboneTape local;
  BackboneTape& t = tape ? *tape : local;
  t.input = images;
  for (auto& v : t.input.data) v = 2.0 * v - 1.0;
  t.activations.assign(b.conv_channels.size(), {});
  t.pre_activations.assign(b.conv_channels.size(), {});

  std::span<const double> current = t.input.data;
  for (std::size_t l = 0; l < b.conv_channels.size(); ++l) {
    const auto s = conv_shape(b, l, n);
    auto& out = t.activations[l];
    out.resize(s.output_size());
    auto& pre = t.pre_activations[l];
    pre.resize(s.output_size());
    kp::conv2d_forward(s, current, params_[conv_w_[l]].value, params_[conv_b_[l]].value, pre);
    for (std::size_t k = 0; k < pre.size(); ++k) out[k] = silu(pre[k]);
    current = out;
  }

  const auto last = conv_shape(b, b.conv_channels.size() - 1, n);
  const int c = last.out_channels;
  const int area = last.out_height() * last.out_width();
  t.pooled = Matrix(static_cast<std::size_t>(n), static_cast<std::size_t>(c));
  for (int i = 0; i < n * c; ++i) {
    double sum = 0.0;
    for (int k = 0; k < area; ++k) sum += current[static_cast<std::size_t>(i) * area + k];
    t.pooled.data[i] = sum / area;
  }

  t.raw_embedding = Matrix(static_cast<std::size_t>(n), static_cast<std::size_t>(b.embedding_dim));
  kp::dense_forward({n, c, b.embedding_dim}, t.pooled.data, params_[proj_w_].value, params_[proj_b_].value,
                    t.raw_embedding.data);
  if (!b.normalize_embedding) return t.raw_embedding;

  EmbeddingBatch e = t.raw_embedding;
  t.norms.assign(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    auto row = e.row(static_cast<std::size_t>(i));
    double ss = 0.0;
    for (double v : row) ss += v * v;
    const double norm = std::max(std::sqrt(ss), 1e-12);
    t.norms[i] = norm;
    for (auto& v : row) v /= norm;
  }
  return e;
}

void Model::embed_backward(const BackboneTape& t, const Matrix& grad_embedding, Gradients& grads) const {
  const auto& b = cfg_.backbone;
  const int n = t.input.batch;
  if (grad_embedding.rows != static_cast<std::size_t>(n) ||
      grad_embedding.cols != static_cast<std::size_t>(b.embedding_dim)) {
    throw ValidationError("embed_backward: gradient shape mismatch");
  }
  Matrix g_raw = grad_embedding;
  if (b.normalize_embedding) {
    for (int i = 0; i < n; ++i) {
      const auto y = t.raw_embedding.row(static_cast<std::size_t>(i));
      const double norm = t.norms[i];
      auto g = g_raw.row(static_cast<std::size_t>(i));
      double dot = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) dot += (y[k] / norm) * g[k];
      for (std::size_t k = 0; k < g.size(); ++k) g[k] = (g[k] - (y[k] / norm) * dot) / norm;
    }
  }

  const auto last = conv_shape(b, b.conv_channels.size() - 1, n);
  const int c = last.out_channels;
  const kernels::DenseShape proj{n, c, b.embedding_dim};
  kp::dense_backward_params(proj, t.pooled.data, g_raw.data, grads[proj_w_], grads[proj_b_]);
  std::vector<double> g_pooled(static_cast<std::size_t>(n) * c);
  kp::dense_backward_input(proj, g_raw.data, params_[proj_w_].value, g_pooled);

  const int area = last.out_height() * last.out_width();
  std::vector<double> g_act(last.output_size());
  for (int i = 0; i < n * c; ++i) {
    for (int k = 0; k < area; ++k) g_act[static_cast<std::size_t>(i) * area + k] = g_pooled[i] / area;
  }

  for (std::size_t l = b.conv_channels.size(); l-- > 0;) {
    const auto s = conv_shape(b, l, n);
    const auto& pre = t.pre_activations[l];
    for (std::size_t k = 0; k < g_act.size(); ++k) g_act[k] *= silu_derivative(pre[k]);
    const std::span<const double> input = l == 0 ? std::span<const double>(t.input.data) : t.activations[l - 1];
    kp::conv2d_backward_params(s, input, g_act, grads[conv_w_[l]], grads[conv_b_[l]]);
    if (l == 0) break;
    std::vector<double> g_in(s.input_size());
    kp::conv2d_backward_input(s, g_act, params_[conv_w_[l]].value, g_in);
    g_act = std::move(g_in);
  }
}

void Model::check_dims(const EmbeddingBatch& x, const char* who) const {
  if (x.cols != static_cast<std::size_t>(cfg_.backbone.embedding_dim)) {
    throw ValidationError(std::string(who) + ": embedding dimension " + std::to_string(x.cols) + " != model dimension " +
                          std::to_string(cfg_.backbone.embedding_dim));
  }
}

std::vector<double> Model::detect_logits(const EmbeddingBatch& x) const {
  check_dims(x, "detect");
  std::vector<double> z(x.rows);
  kp::dense_forward({static_cast<int>(x.rows), static_cast<int>(x.cols), 1}, x.data, params_[det_w_].value,
                    params_[det_b_].value, z);
  return z;
}

std::vector<double> Model::detect(const EmbeddingBatch& x) const {
  auto z = detect_logits(x);
  for (auto& v : z) v = sigmoid(v);
  return z;
}

Matrix Model::detect_backward(const EmbeddingBatch& x, std::span<const double> grad_logits, Gradients& grads) const {
  check_dims(x, "detect_backward");
  const kernels::DenseShape s{static_cast<int>(x.rows), static_cast<int>(x.cols), 1};
  kp::dense_backward_params(s, x.data, grad_logits, grads[det_w_], grads[det_b_]);
  Matrix gx(x.rows, x.cols);
  kp::dense_backward_input(s, grad_logits, params_[det_w_].value, gx.data);
  return gx;
}

Matrix Model::discriminate(const EmbeddingBatch& x, DiscriminatorTape* tape) const {
  check_dims(x, "discriminate");
  const int n = static_cast<int>(x.rows);
  const int h = cfg_.discriminator_hidden;
  const int k = cfg_.num_categories();
  Matrix hidden(x.rows, static_cast<std::size_t>(h));
  kp::dense_forward({n, static_cast<int>(x.cols), h}, x.data, params_[disc1_w_].value, params_[disc1_b_].value,
                    hidden.data);
  for (auto& v : hidden.data) v = std::tanh(v);
  Matrix probs(x.rows, static_cast<std::size_t>(k));
  kp::dense_forward({n, h, k}, hidden.data, params_[disc2_w_].value, params_[disc2_b_].value, probs.data);
  softmax_rows(probs);
  if (tape) {
    tape->input = x;
    tape->hidden = hidden;
    tape->probs = probs;
  }
  return probs;
}

Matrix Model::discriminate_backward(const DiscriminatorTape& t, const Matrix& grad_logits, Gradients& grads) const {
  const int n = static_cast<int>(t.input.rows);
  const int d = static_cast<int>(t.input.cols);
  const int h = cfg_.discriminator_hidden;
  const int k = cfg_.num_categories();
  if (grad_logits.rows != t.input.rows || grad_logits.cols != static_cast<std::size_t>(k)) {
    throw ValidationError("discriminate_backward: gradient shape mismatch");
  }
  kp::dense_backward_params({n, h, k}, t.hidden.data, grad_logits.data, grads[disc2_w_], grads[disc2_b_]);
  Matrix g_hidden(t.input.rows, static_cast<std::size_t>(h));
  kp::dense_backward_input({n, h, k}, grad_logits.data, params_[disc2_w_].value, g_hidden.data);
  for (std::size_t i = 0; i < g_hidden.data.size(); ++i) {
    g_hidden.data[i] *= 1.0 - t.hidden.data[i] * t.hidden.data[i];
  }
  kp::dense_backward_params({n, d, h}, t.input.data, g_hidden.data, grads[disc1_w_], grads[disc1_b_]);
  Matrix gx(t.input.rows, t.input.cols);
  kp::dense_backward_input({n, d, h}, g_hidden.data, params_[disc1_w_].value, gx.data);
  return gx;
}

}  // namespace ftl
