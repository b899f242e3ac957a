#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "padchannel/layers.hpp"

namespace padchannel {

enum class Family { vgg11_bn, vgg16_bn, resnet18, resnet50, tiny_vgg, tiny_resnet };

std::string to_string(Family family);
/// Accepts "vgg11-bn", "vgg16-bn", "resnet18", "resnet50", "tinyvgg", "tinyresnet"
/// (case-insensitive, '_' and '-' interchangeable).
Family parse_family(std::string_view name);
const std::vector<Family>& reference_families();

struct ModelSpec {
  Family family = Family::tiny_resnet;
  bool pad_channel = false;
  std::int64_t num_classes = 1000;
  std::int64_t input_channels = 3;
  std::int64_t input_size = 224;
  PaddingMode padding_mode = PaddingMode::zero;

  /// e.g. "resnet18" or "resnet18-pc"
  std::string id() const;
  void validate() const;
};

// Declarative layer graph. Parameter names are derived from `name`.
namespace node {
struct AttachPadChannel {};
struct Conv {
  std::string name;
  ConvSpec spec;
};
struct BatchNorm {
  std::string name;
  BatchNormSpec spec;
};
struct Relu {};
struct MaxPool {
  std::int64_t kernel, stride, pad;
};
struct AdaptiveAvgPool {
  std::int64_t out_h, out_w;
};
struct GlobalAvgPool {};
struct Flatten {};
struct Linear {
  std::string name;
  std::int64_t in_features, out_features;
};
struct Dropout {
  double p;
};
struct Residual;
}  // namespace node

struct Node;

namespace node {
/// relu(body(x) + shortcut(x)); an empty shortcut is the identity.
struct Residual {
  std::vector<Node> body;
  std::vector<Node> shortcut;
};
}  // namespace node

struct Node {
  std::variant<node::AttachPadChannel, node::Conv, node::BatchNorm, node::Relu, node::MaxPool, node::AdaptiveAvgPool,
               node::GlobalAvgPool, node::Flatten, node::Linear, node::Dropout, node::Residual>
      op;
};

struct Architecture {
  ModelSpec spec;
  std::vector<Node> layers;
};

/// Layer graph for `spec`. Throws IncompatiblePaddingError when PadChannel
/// is combined with any non-zero padding.
Architecture describe(const ModelSpec& spec);

enum class LayerKind { attach_pad_channel, conv, batchnorm, relu, maxpool, avgpool, flatten, linear, dropout, add };

std::string to_string(LayerKind kind);

/// One executed layer with its geometry for a single-image batch.
struct LayerTrace {
  std::string name;
  LayerKind kind;
  Shape input;
  Shape output;
  std::int64_t params = 0;
  bool bias = false;
  std::int64_t kernel_h = 0;
  std::int64_t kernel_w = 0;
};

/// Shape propagation of a (1, C, S, S) input through the graph. Throws
/// ShapeError when the input is too small for the stride stack.
std::vector<LayerTrace> trace(const Architecture& arch, std::int64_t input_size);

/// A realized architecture: named parameters and BatchNorm running stats.
class Model {
 public:
  using NamedVariable = std::pair<std::string, Variable>;
  using NamedTensor = std::pair<std::string, Tensor>;

  const ModelSpec& spec() const { return arch_.spec; }
  const Architecture& architecture() const { return arch_; }
  DType dtype() const { return dtype_; }

  /// Logits (N, num_classes). `rng` drives dropout and is required in
  /// train mode when the graph has dropout layers.
  Variable forward(Tape& tape, const Variable& batch, Mode mode, Rng* rng = nullptr);
  /// Untaped forward.
  Tensor predict(const Tensor& batch, Mode mode = Mode::eval);

  std::vector<NamedVariable>& parameters() { return params_; }
  const std::vector<NamedVariable>& parameters() const { return params_; }
  Variable& parameter(std::string_view name);
  BatchNormState& batchnorm_state(std::string_view layer_name);

  /// Parameters followed by running statistics, in registration order.
  std::vector<NamedTensor> state_dict() const;
  void load_state_dict(const std::vector<NamedTensor>& state);

  Model converted(DType dtype) const;
  void zero_grad();

 private:
  friend Model build_model(const ModelSpec& spec, Rng& rng, DType dtype);

  Variable run(Tape& tape, const std::vector<Node>& layers, Variable x, Mode mode, Rng* rng);

  Architecture arch_;
  DType dtype_ = DType::f32;
  std::vector<NamedVariable> params_;
  std::vector<std::pair<std::string, BatchNormState>> bn_states_;
};

/// Conv weights: Kaiming normal (fan_in). Conv biases: 0. BatchNorm: gamma 1,
/// beta 0. Linear: weight and bias uniform(+-1/sqrt(in)).
Model build_model(const ModelSpec& spec, Rng& rng, DType dtype = DType::f32);

}  // namespace padchannel
