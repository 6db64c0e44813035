#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ftl/common.hpp"
#include "ftl/image.hpp"

namespace ftl {

enum class BackboneKind { toy_cnn, external };
enum class FinetuneMode { full, bitfit };

std::string to_string(BackboneKind k);
BackboneKind parse_backbone_kind(const std::string& s);
std::string to_string(FinetuneMode m);
FinetuneMode parse_finetune_mode(const std::string& s);

/// Toy backbone: 3x3 stride-2 convolutions with SiLU, global average pooling, and one
/// affine projection to the embedding.
struct BackboneConfig {
  BackboneKind kind = BackboneKind::toy_cnn;
  int image_size = 32;
  int in_channels = 3;
  std::vector<int> conv_channels{8, 16, 32};
  int embedding_dim = 128;
  bool normalize_embedding = false;

  bool operator==(const BackboneConfig&) const = default;
};

struct ModelConfig {
  BackboneConfig backbone;
  int discriminator_hidden = 64;
  /// Discriminator classes; index 0 is always "real".
  std::vector<std::string> categories{"real", "Deepfakes", "Face2Face", "FaceSwap", "NeuralTextures"};

  int num_categories() const { return static_cast<int>(categories.size()); }
  int category_index(const std::string& name) const;
  bool operator==(const ModelConfig&) const = default;
};

void validate(const ModelConfig& cfg);

enum class ParamRole { backbone, detector, discriminator };

struct Parameter {
  std::string name;
  std::vector<int> shape;
  bool is_bias = false;
  bool trainable = true;
  ParamRole role = ParamRole::backbone;
  std::vector<double> value;

  bool operator==(const Parameter&) const = default;
};

struct ParameterInfo {
  std::string name;
  std::vector<int> shape;
  bool is_bias = false;
  bool trainable = true;
  ParamRole role = ParamRole::backbone;

  std::size_t count() const;
  bool operator==(const ParameterInfo&) const = default;
};

/// full: everything trainable. bitfit: backbone trainable iff bias. Heads always train.
std::vector<ParameterInfo> apply_bitfit_mask(std::vector<ParameterInfo> params, FinetuneMode mode);

struct ParameterCount {
  std::size_t total = 0;
  std::size_t trainable = 0;
};
ParameterCount count_parameters(const std::vector<ParameterInfo>& params);

/// One gradient buffer per model parameter, same order and sizes.
using Gradients = std::vector<std::vector<double>>;

/// NCHW batch of images with values in [0, 1].
struct ImageBatch {
  int batch = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;
};

ImageBatch make_batch(std::span<const Image* const> images);

// Gradient routing between the shared embedding and a head.
//   pass    - ordinary backpropagation
//   reverse - gradient reversal: identity forward, -lambda * gradient backward
//   block   - detachment: identity forward, no gradient upstream
enum class GradientGate { pass, reverse, block };

struct GrlConfig {
  double lambda = 1.0;
};

EmbeddingBatch grl_apply(const EmbeddingBatch& x, const GrlConfig& cfg);
Matrix grl_backward(const Matrix& grad, const GrlConfig& cfg);
EmbeddingBatch detach(const EmbeddingBatch& x);
/// Gradient delivered to the embedding through `gate`; nullopt when blocked.
std::optional<Matrix> route_gradient(GradientGate gate, const Matrix& grad, double lambda);

/// Activations kept from a forward pass for the backward pass.
struct BackboneTape {
  ImageBatch input;                              // centred input
  std::vector<std::vector<double>> pre_activations;  // convolution output of each block
  std::vector<std::vector<double>> activations;      // SiLU of the above
  Matrix pooled;
  Matrix raw_embedding;
  std::vector<double> norms;  // only with normalize_embedding
};

struct DiscriminatorTape {
  Matrix input;
  Matrix hidden;  // tanh activations
  Matrix probs;
};

class Model {
 public:
  /// Fresh model with seeded initialisation.
  Model(ModelConfig cfg, std::uint64_t seed);
  /// Model from stored parameters; names, shapes and roles must match the layout `cfg` implies.
  Model(ModelConfig cfg, std::vector<Parameter> params);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<ParameterInfo> parameter_info() const;
  void set_trainable(const std::vector<ParameterInfo>& mask);
  Gradients zero_gradients() const;

  EmbeddingBatch embed(const ImageBatch& images, BackboneTape* tape = nullptr) const;
  /// Writes the backbone entries of `grads`.
  void embed_backward(const BackboneTape& tape, const Matrix& grad_embedding, Gradients& grads) const;

  /// Detector logits (one per row).
  std::vector<double> detect_logits(const EmbeddingBatch& x) const;
  std::vector<double> detect(const EmbeddingBatch& x) const;
  /// Writes the detector entries of `grads`; returns d(loss)/d(x).
  Matrix detect_backward(const EmbeddingBatch& x, std::span<const double> grad_logits, Gradients& grads) const;

  /// Softmax category probabilities, N x K.
  Matrix discriminate(const EmbeddingBatch& x, DiscriminatorTape* tape = nullptr) const;
  /// Writes the discriminator entries of `grads`; returns d(loss)/d(x).
  Matrix discriminate_backward(const DiscriminatorTape& tape, const Matrix& grad_logits, Gradients& grads) const;

 private:
  void build_layout();
  void check_dims(const EmbeddingBatch& x, const char* who) const;

  ModelConfig cfg_;
  std::vector<Parameter> params_;
  // indices into params_
  std::vector<std::size_t> conv_w_, conv_b_;
  std::size_t proj_w_ = 0, proj_b_ = 0;
  std::size_t det_w_ = 0, det_b_ = 0;
  std::size_t disc1_w_ = 0, disc1_b_ = 0, disc2_w_ = 0, disc2_b_ = 0;
};

double sigmoid(double z);
/// z * sigmoid(z)
double silu(double z);
double silu_derivative(double z);

}  // namespace ftl
