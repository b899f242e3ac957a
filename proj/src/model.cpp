#include "padchannel/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace padchannel {

namespace {

std::string normalized(std::string_view name) {
  std::string out;
  for (char c : name) {
    if (c == '_' || c == '-') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

// VGG feature configs; 0 marks a 2x2 max-pool.
const std::vector<std::int64_t> kVgg11 = {64, 0, 128, 0, 256, 256, 0, 512, 512, 0, 512, 512, 0};
const std::vector<std::int64_t> kVgg16 = {64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0};

// Desk-scale stacks. These are this project's own reduced variants for 32x32
// inputs, not reference architectures.
const std::vector<std::int64_t> kTinyVgg = {16, 0, 32, 0, 32, 0};
constexpr std::int64_t kTinyVggPool = 4;
constexpr std::int64_t kTinyVggHidden = 128;

struct TinyResNetStage {
  std::int64_t channels;
  std::int64_t stride;
};
constexpr std::int64_t kTinyResNetStem = 16;
const std::vector<TinyResNetStage> kTinyResNetStages = {{16, 2}, {32, 2}};

struct Builder {
  const ModelSpec& spec;
  std::int64_t first_conv_in() const { return spec.input_channels + (spec.pad_channel ? 1 : 0); }

  Node conv(std::string name, std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride,
            std::int64_t pad, bool bias) const {
    ConvSpec cs{in, out, k, k, stride, pad, spec.padding_mode, bias};
    return Node{node::Conv{std::move(name), cs}};
  }
  static Node bn(std::string name, std::int64_t features) {
    return Node{node::BatchNorm{std::move(name), BatchNormSpec{features, 1e-5, 0.1}}};
  }
  static Node relu() { return Node{node::Relu{}}; }

  std::vector<Node> vgg(const std::vector<std::int64_t>& cfg, std::int64_t pool, std::int64_t hidden) const {
    std::vector<Node> layers;
    if (spec.pad_channel) layers.push_back(Node{node::AttachPadChannel{}});
    std::int64_t in = first_conv_in();
    int conv_index = 0;
    for (auto v : cfg) {
      if (v == 0) {
        layers.push_back(Node{node::MaxPool{2, 2, 0}});
        continue;
      }
      const auto name = "features.conv" + std::to_string(conv_index);
      layers.push_back(conv(name, in, v, 3, 1, 1, true));
      layers.push_back(bn("features.bn" + std::to_string(conv_index), v));
      layers.push_back(relu());
      in = v;
      ++conv_index;
    }
    layers.push_back(Node{node::AdaptiveAvgPool{pool, pool}});
    layers.push_back(Node{node::Flatten{}});
    layers.push_back(Node{node::Linear{"classifier.fc1", in * pool * pool, hidden}});
    layers.push_back(relu());
    layers.push_back(Node{node::Dropout{0.5}});
    layers.push_back(Node{node::Linear{"classifier.fc2", hidden, hidden}});
    layers.push_back(relu());
    layers.push_back(Node{node::Dropout{0.5}});
    layers.push_back(Node{node::Linear{"classifier.fc3", hidden, spec.num_classes}});
    return layers;
  }

  Node basic_block(const std::string& name, std::int64_t in, std::int64_t width, std::int64_t stride) const {
    node::Residual r;
    r.body.push_back(conv(name + ".conv1", in, width, 3, stride, 1, false));
    r.body.push_back(bn(name + ".bn1", width));
    r.body.push_back(relu());
    r.body.push_back(conv(name + ".conv2", width, width, 3, 1, 1, false));
    r.body.push_back(bn(name + ".bn2", width));
    if (stride != 1 || in != width) {
      r.shortcut.push_back(conv(name + ".downsample.conv", in, width, 1, stride, 0, false));
      r.shortcut.push_back(bn(name + ".downsample.bn", width));
    }
    return Node{std::move(r)};
  }

  // Stride sits on the 3x3 conv (torchvision "v1.5" bottleneck).
  Node bottleneck(const std::string& name, std::int64_t in, std::int64_t width, std::int64_t stride) const {
    const auto out = width * 4;
    node::Residual r;
    r.body.push_back(conv(name + ".conv1", in, width, 1, 1, 0, false));
    r.body.push_back(bn(name + ".bn1", width));
    r.body.push_back(relu());
    r.body.push_back(conv(name + ".conv2", width, width, 3, stride, 1, false));
    r.body.push_back(bn(name + ".bn2", width));
    r.body.push_back(relu());
    r.body.push_back(conv(name + ".conv3", width, out, 1, 1, 0, false));
    r.body.push_back(bn(name + ".bn3", out));
    if (stride != 1 || in != out) {
      r.shortcut.push_back(conv(name + ".downsample.conv", in, out, 1, stride, 0, false));
      r.shortcut.push_back(bn(name + ".downsample.bn", out));
    }
    return Node{std::move(r)};
  }

  std::vector<Node> resnet(const std::vector<int>& blocks, bool use_bottleneck) const {
    std::vector<Node> layers;
    if (spec.pad_channel) layers.push_back(Node{node::AttachPadChannel{}});
    layers.push_back(conv("stem.conv", first_conv_in(), 64, 7, 2, 3, false));
    layers.push_back(bn("stem.bn", 64));
    layers.push_back(relu());
    layers.push_back(Node{node::MaxPool{3, 2, 1}});
    std::int64_t in = 64;
    const std::int64_t widths[] = {64, 128, 256, 512};
    for (std::size_t stage = 0; stage < blocks.size(); ++stage) {
      for (int b = 0; b < blocks[stage]; ++b) {
        const std::int64_t stride = (stage > 0 && b == 0) ? 2 : 1;
        const auto name = "layer" + std::to_string(stage + 1) + "." + std::to_string(b);
        if (use_bottleneck) {
          layers.push_back(bottleneck(name, in, widths[stage], stride));
          in = widths[stage] * 4;
        } else {
          layers.push_back(basic_block(name, in, widths[stage], stride));
          in = widths[stage];
        }
      }
    }
    layers.push_back(Node{node::GlobalAvgPool{}});
    layers.push_back(Node{node::Linear{"fc", in, spec.num_classes}});
    return layers;
  }

  std::vector<Node> tiny_resnet() const {
    std::vector<Node> layers;
    if (spec.pad_channel) layers.push_back(Node{node::AttachPadChannel{}});
    layers.push_back(conv("stem.conv", first_conv_in(), kTinyResNetStem, 3, 1, 1, false));
    layers.push_back(bn("stem.bn", kTinyResNetStem));
    layers.push_back(relu());
    std::int64_t in = kTinyResNetStem;
    for (std::size_t s = 0; s < kTinyResNetStages.size(); ++s) {
      const auto& stage = kTinyResNetStages[s];
      layers.push_back(basic_block("layer" + std::to_string(s + 1) + ".0", in, stage.channels, stage.stride));
      in = stage.channels;
    }
    layers.push_back(Node{node::GlobalAvgPool{}});
    layers.push_back(Node{node::Linear{"fc", in, spec.num_classes}});
    return layers;
  }
};

bool uses_non_zero_padding(const std::vector<Node>& layers) {
  for (const auto& n : layers) {
    if (const auto* c = std::get_if<node::Conv>(&n.op)) {
      if (c->spec.pad > 0 && c->spec.padding_mode != PaddingMode::zero) return true;
    } else if (const auto* r = std::get_if<node::Residual>(&n.op)) {
      if (uses_non_zero_padding(r->body) || uses_non_zero_padding(r->shortcut)) return true;
    }
  }
  return false;
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

}  // namespace

std::string to_string(Family family) {
  switch (family) {
    case Family::vgg11_bn:
      return "vgg11-bn";
    case Family::vgg16_bn:
      return "vgg16-bn";
    case Family::resnet18:
      return "resnet18";
    case Family::resnet50:
      return "resnet50";
    case Family::tiny_vgg:
      return "tinyvgg";
    case Family::tiny_resnet:
      return "tinyresnet";
  }
  return "?";
}

Family parse_family(std::string_view name) {
  const auto key = normalized(name);
  if (key == "vgg11bn") return Family::vgg11_bn;
  if (key == "vgg16bn") return Family::vgg16_bn;
  if (key == "resnet18") return Family::resnet18;
  if (key == "resnet50") return Family::resnet50;
  if (key == "tinyvgg") return Family::tiny_vgg;
  if (key == "tinyresnet") return Family::tiny_resnet;
  throw ArgumentError("unknown architecture '" + std::string(name) + "'");
}

const std::vector<Family>& reference_families() {
  static const std::vector<Family> families = {Family::vgg11_bn, Family::vgg16_bn, Family::resnet18,
                                               Family::resnet50};
  return families;
}

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::attach_pad_channel:
      return "attach_pad_channel";
    case LayerKind::conv:
      return "conv";
    case LayerKind::batchnorm:
      return "batchnorm";
    case LayerKind::relu:
      return "relu";
    case LayerKind::maxpool:
      return "maxpool";
    case LayerKind::avgpool:
      return "avgpool";
    case LayerKind::flatten:
      return "flatten";
    case LayerKind::linear:
      return "linear";
    case LayerKind::dropout:
      return "dropout";
    case LayerKind::add:
      return "add";
  }
  return "?";
}

std::string ModelSpec::id() const { return to_string(family) + (pad_channel ? "-pc" : ""); }

void ModelSpec::validate() const {
  if (num_classes < 1) throw ArgumentError("num_classes must be >= 1");
  if (input_channels < 1) throw ArgumentError("input_channels must be >= 1");
  if (input_size < 1) throw ArgumentError("input_size must be >= 1");
  if (pad_channel && padding_mode != PaddingMode::zero) {
    throw IncompatiblePaddingError("PadChannel is only compatible with zero padding (got " +
                                   to_string(padding_mode) + ")");
  }
}

Architecture describe(const ModelSpec& spec) {
  spec.validate();
  Builder b{spec};
  Architecture arch{spec, {}};
  switch (spec.family) {
    case Family::vgg11_bn:
      arch.layers = b.vgg(kVgg11, 7, 4096);
      break;
    case Family::vgg16_bn:
      arch.layers = b.vgg(kVgg16, 7, 4096);
      break;
    case Family::resnet18:
      arch.layers = b.resnet({2, 2, 2, 2}, false);
      break;
    case Family::resnet50:
      arch.layers = b.resnet({3, 4, 6, 3}, true);
      break;
    case Family::tiny_vgg:
      arch.layers = b.vgg(kTinyVgg, kTinyVggPool, kTinyVggHidden);
      break;
    case Family::tiny_resnet:
      arch.layers = b.tiny_resnet();
      break;
  }
  if (spec.pad_channel && uses_non_zero_padding(arch.layers)) {
    throw IncompatiblePaddingError("PadChannel requires zero padding in every layer");
  }
  return arch;
}

// ---------------------------------------------------------------------------
// Shape trace

namespace {

Shape trace_layers(const std::vector<Node>& layers, Shape shape, std::vector<LayerTrace>& out) {
  for (const auto& n : layers) {
    std::visit(
        overloaded{
            [&](const node::AttachPadChannel&) {
              Shape next = {shape[0], shape[1] + 1, shape[2], shape[3]};
              out.push_back({"attach_pad_channel", LayerKind::attach_pad_channel, shape, next});
              shape = next;
            },
            [&](const node::Conv& c) {
              if (shape.size() != 4 || shape[1] != c.spec.in_channels) {
                throw ShapeError(c.name + ": expects " + std::to_string(c.spec.in_channels) + " input channels, got " +
                                 shape_string(shape));
              }
              const auto oh = conv_output_dim(shape[2], c.spec.kernel_h, c.spec.stride, c.spec.pad);
              const auto ow = conv_output_dim(shape[3], c.spec.kernel_w, c.spec.stride, c.spec.pad);
              if (oh < 1 || ow < 1) throw ShapeError("input size too small: " + c.name + " output would be empty");
              Shape next = {shape[0], c.spec.out_channels, oh, ow};
              const auto params = shape_numel(c.spec.weight_shape()) + (c.spec.bias ? c.spec.out_channels : 0);
              out.push_back({c.name, LayerKind::conv, shape, next, params, c.spec.bias, c.spec.kernel_h,
                             c.spec.kernel_w});
              shape = next;
            },
            [&](const node::BatchNorm& b) {
              out.push_back({b.name, LayerKind::batchnorm, shape, shape, 2 * b.spec.num_features});
            },
            [&](const node::Relu&) { out.push_back({"relu", LayerKind::relu, shape, shape}); },
            [&](const node::MaxPool& p) {
              const auto oh = conv_output_dim(shape[2], p.kernel, p.stride, p.pad);
              const auto ow = conv_output_dim(shape[3], p.kernel, p.stride, p.pad);
              if (oh < 1 || ow < 1) throw ShapeError("input size too small: max-pool output would be empty");
              Shape next = {shape[0], shape[1], oh, ow};
              out.push_back({"maxpool", LayerKind::maxpool, shape, next, 0, false, p.kernel, p.kernel});
              shape = next;
            },
            [&](const node::AdaptiveAvgPool& p) {
              Shape next = {shape[0], shape[1], p.out_h, p.out_w};
              out.push_back({"avgpool", LayerKind::avgpool, shape, next});
              shape = next;
            },
            [&](const node::GlobalAvgPool&) {
              Shape next = {shape[0], shape[1]};
              out.push_back({"avgpool", LayerKind::avgpool, shape, next});
              shape = next;
            },
            [&](const node::Flatten&) {
              Shape next = {shape[0], shape_numel(shape) / shape[0]};
              out.push_back({"flatten", LayerKind::flatten, shape, next});
              shape = next;
            },
            [&](const node::Linear& l) {
              if (shape.size() != 2 || shape[1] != l.in_features) {
                throw ShapeError(l.name + ": expects " + std::to_string(l.in_features) + " features, got " +
                                 shape_string(shape));
              }
              Shape next = {shape[0], l.out_features};
              out.push_back({l.name, LayerKind::linear, shape, next, l.in_features * l.out_features + l.out_features,
                             true});
              shape = next;
            },
            [&](const node::Dropout&) { out.push_back({"dropout", LayerKind::dropout, shape, shape}); },
            [&](const node::Residual& r) {
              Shape main = trace_layers(r.body, shape, out);
              Shape skip = trace_layers(r.shortcut, shape, out);
              if (main != skip) {
                throw ShapeError("residual branch shapes differ: " + shape_string(main) + " vs " + shape_string(skip));
              }
              out.push_back({"add", LayerKind::add, main, main});
              out.push_back({"relu", LayerKind::relu, main, main});
              shape = main;
            },
        },
        n.op);
  }
  return shape;
}

}  // namespace

std::vector<LayerTrace> trace(const Architecture& arch, std::int64_t input_size) {
  if (input_size < 1) throw ShapeError("input size must be >= 1");
  std::vector<LayerTrace> out;
  trace_layers(arch.layers, {1, arch.spec.input_channels, input_size, input_size}, out);
  return out;
}

// ---------------------------------------------------------------------------
// Realized model

namespace {

void realize(const std::vector<Node>& layers, Rng& rng, DType dtype, std::vector<Model::NamedVariable>& params,
             std::vector<std::pair<std::string, BatchNormState>>& bn) {
  for (const auto& n : layers) {
    if (const auto* c = std::get_if<node::Conv>(&n.op)) {
      params.emplace_back(c->name + ".weight", Variable(kaiming_init(c->spec.weight_shape(), rng, dtype), true));
      if (c->spec.bias) params.emplace_back(c->name + ".bias", Variable(Tensor({c->spec.out_channels}, dtype), true));
    } else if (const auto* b = std::get_if<node::BatchNorm>(&n.op)) {
      const auto f = b->spec.num_features;
      params.emplace_back(b->name + ".weight", Variable(fill({f}, 1.0, dtype), true));
      params.emplace_back(b->name + ".bias", Variable(Tensor({f}, dtype), true));
      bn.emplace_back(b->name, BatchNormState::fresh(f, dtype));
    } else if (const auto* l = std::get_if<node::Linear>(&n.op)) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(l->in_features));
      Tensor w({l->out_features, l->in_features}, dtype);
      for (std::int64_t i = 0; i < w.numel(); ++i) w.set(i, rng.uniform(-bound, bound));
      Tensor bias({l->out_features}, dtype);
      for (std::int64_t i = 0; i < bias.numel(); ++i) bias.set(i, rng.uniform(-bound, bound));
      params.emplace_back(l->name + ".weight", Variable(std::move(w), true));
      params.emplace_back(l->name + ".bias", Variable(std::move(bias), true));
    } else if (const auto* r = std::get_if<node::Residual>(&n.op)) {
      realize(r->body, rng, dtype, params, bn);
      realize(r->shortcut, rng, dtype, params, bn);
    }
  }
}

}  // namespace

Model build_model(const ModelSpec& spec, Rng& rng, DType dtype) {
  Model m;
  m.arch_ = describe(spec);
  m.dtype_ = dtype;
  realize(m.arch_.layers, rng, dtype, m.params_, m.bn_states_);
  return m;
}

Variable& Model::parameter(std::string_view name) {
  for (auto& [n, v] : params_) {
    if (n == name) return v;
  }
  throw ArgumentError("no parameter named '" + std::string(name) + "'");
}

BatchNormState& Model::batchnorm_state(std::string_view layer_name) {
  for (auto& [n, s] : bn_states_) {
    if (n == layer_name) return s;
  }
  throw ArgumentError("no batchnorm layer named '" + std::string(layer_name) + "'");
}

Variable Model::forward(Tape& tape, const Variable& batch, Mode mode, Rng* rng) {
  const auto& s = batch.shape();
  if (s.size() != 4 || s[1] != arch_.spec.input_channels) {
    throw ShapeError(arch_.spec.id() + " expects (N, " + std::to_string(arch_.spec.input_channels) +
                     ", H, W) input, got " + shape_string(s));
  }
  if (batch.dtype() != dtype_) throw ShapeError("batch dtype does not match model dtype");
  return run(tape, arch_.layers, batch, mode, rng);
}

Tensor Model::predict(const Tensor& batch, Mode mode) {
  Tape tape(Tape::Recording::off);
  return forward(tape, Variable(batch), mode).value();
}

Variable Model::run(Tape& tape, const std::vector<Node>& layers, Variable x, Mode mode, Rng* rng) {
  for (const auto& n : layers) {
    x = std::visit(
        overloaded{
            [&](const node::AttachPadChannel&) { return attach_pad_channel(tape, x); },
            [&](const node::Conv& c) {
              Variable bias = c.spec.bias ? parameter(c.name + ".bias") : Variable();
              return conv2d(tape, x, parameter(c.name + ".weight"), bias, c.spec);
            },
            [&](const node::BatchNorm& b) {
              return batchnorm2d(tape, x, parameter(b.name + ".weight"), parameter(b.name + ".bias"),
                                 batchnorm_state(b.name), b.spec, mode);
            },
            [&](const node::Relu&) { return relu(tape, x); },
            [&](const node::MaxPool& p) { return maxpool2d(tape, x, p.kernel, p.stride, p.pad); },
            [&](const node::AdaptiveAvgPool& p) { return adaptive_avgpool2d(tape, x, p.out_h, p.out_w); },
            [&](const node::GlobalAvgPool&) { return global_avgpool(tape, x); },
            [&](const node::Flatten&) { return flatten(tape, x); },
            [&](const node::Linear& l) {
              return linear(tape, x, parameter(l.name + ".weight"), parameter(l.name + ".bias"));
            },
            [&](const node::Dropout& d) {
              if (mode == Mode::eval) return x;
              if (rng == nullptr) throw ArgumentError("dropout in train mode needs an Rng");
              return dropout(tape, x, d.p, mode, *rng);
            },
            [&](const node::Residual& r) {
              Variable main = run(tape, r.body, x, mode, rng);
              Variable skip = r.shortcut.empty() ? x : run(tape, r.shortcut, x, mode, rng);
              return relu(tape, add(tape, main, skip));
            },
        },
        n.op);
  }
  return x;
}

std::vector<Model::NamedTensor> Model::state_dict() const {
  std::vector<NamedTensor> out;
  out.reserve(params_.size() + 2 * bn_states_.size());
  for (const auto& [n, v] : params_) out.emplace_back(n, v.value());
  for (const auto& [n, s] : bn_states_) {
    out.emplace_back(n + ".running_mean", s.running_mean);
    out.emplace_back(n + ".running_var", s.running_var);
  }
  return out;
}

void Model::load_state_dict(const std::vector<NamedTensor>& state) {
  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& [n, t] : state) {
      if (n == name) return t;
    }
    throw DataError("state is missing tensor '" + name + "'");
  };
  auto assign = [&](Tensor& dst, const std::string& name) {
    const Tensor& src = find(name);
    if (src.shape() != dst.shape()) {
      throw DataError("tensor '" + name + "' has shape " + shape_string(src.shape()) + ", model expects " +
                      shape_string(dst.shape()));
    }
    dst = src.to(dtype_);
  };
  for (auto& [n, v] : params_) assign(v.mutable_value(), n);
  for (auto& [n, s] : bn_states_) {
    assign(s.running_mean, n + ".running_mean");
    assign(s.running_var, n + ".running_var");
  }
}

Model Model::converted(DType dtype) const {
  Model m;
  m.arch_ = arch_;
  m.dtype_ = dtype;
  for (const auto& [n, v] : params_) m.params_.emplace_back(n, Variable(v.value().to(dtype), true));
  for (const auto& [n, s] : bn_states_) {
    m.bn_states_.emplace_back(n, BatchNormState{s.running_mean.to(dtype), s.running_var.to(dtype)});
  }
  return m;
}

void Model::zero_grad() {
  for (auto& [n, v] : params_) v.zero_grad();
}

}  // namespace padchannel
