#include "padchannel/gradcheck.hpp"

#include <algorithm>
#include <functional>

#include "padchannel/layers.hpp"
#include "padchannel/model.hpp"

namespace padchannel {

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape, DType::f64);
  for (auto& v : t.data<double>()) v = rng.normal();
  return t;
}

// <f(x), r> for a fixed random r, so every output element feeds the loss.
ScalarFn projected(std::function<Variable(Tape&, const Variable&)> layer, Rng& rng, const Shape& out_shape) {
  auto r = Variable(random_tensor(out_shape, rng));
  return [layer = std::move(layer), r](Tape& tape, const Variable& x) { return sum(tape, mul(tape, layer(tape, x), r)); };
}

using Case = std::function<double(Rng&, double eps)>;

Case conv_case(PaddingMode mode, std::int64_t stride, int which) {
  return [=](Rng& rng, double eps) {
    ConvSpec spec{2, 3, 3, 3, stride, 1, mode, true};
    const Shape xs{2, 2, 5, 5};
    Tensor x = random_tensor(xs, rng), w = random_tensor(spec.weight_shape(), rng), b = random_tensor({3}, rng);
    const auto oh = conv_output_dim(5, 3, stride, 1);
    const Shape out{2, 3, oh, oh};
    switch (which) {
      case 0:
        return grad_check(projected([=](Tape& t, const Variable& v) { return conv2d(t, v, Variable(w), Variable(b), spec); }, rng, out), x, eps);
      case 1:
        return grad_check(projected([=](Tape& t, const Variable& v) { return conv2d(t, Variable(x), v, Variable(b), spec); }, rng, out), w, eps);
      default:
        return grad_check(projected([=](Tape& t, const Variable& v) { return conv2d(t, Variable(x), Variable(w), v, spec); }, rng, out), b, eps);
    }
  };
}

Case batchnorm_case(int which) {
  return [=](Rng& rng, double eps) {
    const Shape xs{3, 2, 3, 3};
    Tensor x = random_tensor(xs, rng), g = random_tensor({2}, rng), b = random_tensor({2}, rng);
    BatchNormSpec spec{2, 1e-5, 0.1};
    auto bn = [=](Tape& t, const Variable& in, const Variable& gamma, const Variable& beta) {
      auto state = BatchNormState::fresh(2, DType::f64);
      return batchnorm2d(t, in, gamma, beta, state, spec, Mode::train);
    };
    switch (which) {
      case 0:
        return grad_check(projected([=](Tape& t, const Variable& v) { return bn(t, v, Variable(g), Variable(b)); }, rng, xs), x, eps);
      case 1:
        return grad_check(projected([=](Tape& t, const Variable& v) { return bn(t, Variable(x), v, Variable(b)); }, rng, xs), g, eps);
      default:
        return grad_check(projected([=](Tape& t, const Variable& v) { return bn(t, Variable(x), Variable(g), v); }, rng, xs), b, eps);
    }
  };
}

Case linear_case(int which) {
  return [=](Rng& rng, double eps) {
    Tensor x = random_tensor({3, 4}, rng), w = random_tensor({5, 4}, rng), b = random_tensor({5}, rng);
    const Shape out{3, 5};
    switch (which) {
      case 0:
        return grad_check(projected([=](Tape& t, const Variable& v) { return linear(t, v, Variable(w), Variable(b)); }, rng, out), x, eps);
      case 1:
        return grad_check(projected([=](Tape& t, const Variable& v) { return linear(t, Variable(x), v, Variable(b)); }, rng, out), w, eps);
      default:
        return grad_check(projected([=](Tape& t, const Variable& v) { return linear(t, Variable(x), Variable(w), v); }, rng, out), b, eps);
    }
  };
}

Case unary_case(std::function<Variable(Tape&, const Variable&)> layer, Shape in, Shape out) {
  return [=](Rng& rng, double eps) {
    Tensor x = random_tensor(in, rng);
    return grad_check(projected(layer, rng, out), x, eps);
  };
}

Case cross_entropy_case() {
  return [](Rng& rng, double eps) {
    Tensor x = random_tensor({4, 5}, rng);
    std::vector<int> labels;
    for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng.below(5)));
    return grad_check([labels](Tape& t, const Variable& v) { return softmax_cross_entropy(t, v, labels); }, x, eps);
  };
}

Case tiny_resnet_case(bool pad_channel) {
  return [=](Rng& rng, double eps) {
    ModelSpec spec{Family::tiny_resnet, pad_channel, 3, 3, 8, PaddingMode::zero};
    auto model = std::make_shared<Model>(build_model(spec, rng, DType::f64));
    Tensor x = random_tensor({2, 3, 8, 8}, rng);
    return grad_check(projected([model](Tape& t, const Variable& v) { return model->forward(t, v, Mode::train); }, rng, {2, 3}), x, eps);
  };
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(int trials, std::uint64_t seed, double eps) {
  const std::vector<std::pair<std::string, Case>> cases = {
      {"conv2d zero (input)", conv_case(PaddingMode::zero, 1, 0)},
      {"conv2d zero (weight)", conv_case(PaddingMode::zero, 1, 1)},
      {"conv2d zero (bias)", conv_case(PaddingMode::zero, 1, 2)},
      {"conv2d zero stride 2 (input)", conv_case(PaddingMode::zero, 2, 0)},
      {"conv2d reflect (input)", conv_case(PaddingMode::reflect, 1, 0)},
      {"conv2d reflect (weight)", conv_case(PaddingMode::reflect, 1, 1)},
      {"conv2d replicate (input)", conv_case(PaddingMode::replicate, 1, 0)},
      {"conv2d replicate (weight)", conv_case(PaddingMode::replicate, 1, 1)},
      {"pad2d reflect", unary_case([](Tape& t, const Variable& v) { return pad2d(t, v, 2, PaddingMode::reflect); },
                                   {2, 2, 4, 4}, {2, 2, 8, 8})},
      {"pad2d replicate", unary_case([](Tape& t, const Variable& v) { return pad2d(t, v, 2, PaddingMode::replicate); },
                                     {2, 2, 4, 4}, {2, 2, 8, 8})},
      {"attach_pad_channel", unary_case([](Tape& t, const Variable& v) { return attach_pad_channel(t, v); },
                                        {2, 3, 3, 3}, {2, 4, 3, 3})},
      {"batchnorm2d train (input)", batchnorm_case(0)},
      {"batchnorm2d train (gamma)", batchnorm_case(1)},
      {"batchnorm2d train (beta)", batchnorm_case(2)},
      {"relu", unary_case([](Tape& t, const Variable& v) { return relu(t, v); }, {2, 3, 4, 4}, {2, 3, 4, 4})},
      {"maxpool2d 2/2", unary_case([](Tape& t, const Variable& v) { return maxpool2d(t, v, 2, 2); }, {2, 2, 6, 6},
                                   {2, 2, 3, 3})},
      {"maxpool2d 3/2/1", unary_case([](Tape& t, const Variable& v) { return maxpool2d(t, v, 3, 2, 1); },
                                     {2, 2, 6, 6}, {2, 2, 3, 3})},
      {"adaptive_avgpool2d", unary_case([](Tape& t, const Variable& v) { return adaptive_avgpool2d(t, v, 3, 2); },
                                        {2, 2, 7, 5}, {2, 2, 3, 2})},
      {"global_avgpool", unary_case([](Tape& t, const Variable& v) { return global_avgpool(t, v); }, {2, 3, 4, 4},
                                    {2, 3})},
      {"linear (input)", linear_case(0)},
      {"linear (weight)", linear_case(1)},
      {"linear (bias)", linear_case(2)},
      {"softmax_cross_entropy", cross_entropy_case()},
      {"tinyresnet", tiny_resnet_case(false)},
      {"tinyresnet-pc", tiny_resnet_case(true)},
  };
  Rng root(seed);
  std::vector<GradCheckResult> results;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    Rng rng = root.fork(c);
    GradCheckResult r{cases[c].first, 0.0, trials};
    for (int i = 0; i < trials; ++i) r.max_error = std::max(r.max_error, cases[c].second(rng, eps));
    results.push_back(r);
  }
  return results;
}

}  // namespace padchannel
