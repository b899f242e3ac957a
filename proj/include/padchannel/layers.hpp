#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "padchannel/autodiff.hpp"
#include "padchannel/rng.hpp"

namespace padchannel {

enum class PaddingMode { zero, reflect, replicate };

std::string to_string(PaddingMode mode);
PaddingMode parse_padding_mode(std::string_view name);

enum class Mode { train, eval };

struct ConvSpec {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel_h = 1;
  std::int64_t kernel_w = 1;
  std::int64_t stride = 1;
  std::int64_t pad = 0;
  PaddingMode padding_mode = PaddingMode::zero;
  bool bias = true;

  void validate() const;
  Shape weight_shape() const { return {out_channels, in_channels, kernel_h, kernel_w}; }
};

struct BatchNormSpec {
  std::int64_t num_features = 1;
  double eps = 1e-5;
  double momentum = 0.1;

  void validate() const;
};

/// Running statistics owned by one BatchNorm layer.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;

  static BatchNormState fresh(std::int64_t num_features, DType dtype);
};

/// Output (N, C, H+2p, W+2p). Reflect mirrors without repeating the edge
/// pixel and needs p < min(H, W); replicate repeats the edge pixel.
Variable pad2d(Tape& tape, const Variable& x, std::int64_t pad, PaddingMode mode, double value = 0.0);

/// X -> [X, 1]: appends an all-ones channel (no gradient flows into it).
Variable attach_pad_channel(Tape& tape, const Variable& x);

/// Cross-correlation. Padding from the ConvSpec is applied first as a separate pad2d.
/// `bias` may be an undefined Variable when spec.bias is false.
Variable conv2d(Tape& tape, const Variable& x, const Variable& weight, const Variable& bias, const ConvSpec& spec);

Variable batchnorm2d(Tape& tape, const Variable& x, const Variable& gamma, const Variable& beta, BatchNormState& state,
                     const BatchNormSpec& spec, Mode mode);

Variable relu(Tape& tape, const Variable& x);
Variable maxpool2d(Tape& tape, const Variable& x, std::int64_t kernel, std::int64_t stride, std::int64_t pad = 0);
Variable adaptive_avgpool2d(Tape& tape, const Variable& x, std::int64_t out_h, std::int64_t out_w);
/// (N, C, H, W) -> (N, C)
Variable global_avgpool(Tape& tape, const Variable& x);
/// (N, ...) -> (N, rest)
Variable flatten(Tape& tape, const Variable& x);
/// x (N, in), weight (out, in), bias (out) or undefined.
Variable linear(Tape& tape, const Variable& x, const Variable& weight, const Variable& bias);
Variable dropout(Tape& tape, const Variable& x, double p, Mode mode, Rng& rng);
/// Mean over the batch of -log softmax(logits)[label]. Returns shape [1].
Variable softmax_cross_entropy(Tape& tape, const Variable& logits, std::span<const int> labels);

/// Row-wise softmax of a (N, K) tensor.
Tensor softmax(const Tensor& logits);

/// Normal(0, 2 / fan_in) with fan_in = product of all dims but the first.
Tensor kaiming_init(const Shape& shape, Rng& rng, DType dtype = DType::f32);

std::int64_t conv_output_dim(std::int64_t input, std::int64_t kernel, std::int64_t stride, std::int64_t pad);

}  // namespace padchannel
