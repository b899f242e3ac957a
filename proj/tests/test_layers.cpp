#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "padchannel/layers.hpp"

using namespace padchannel;

namespace {

Tensor random(const Shape& s, Rng& rng, DType dtype = DType::f64) {
  Tensor t(s, DType::f64);
  for (auto& v : t.data<double>()) v = rng.normal();
  return dtype == DType::f64 ? t : t.to(dtype);
}

double at4(const Tensor& t, std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
  return t.item(((n * t.dim(1) + c) * t.dim(2) + h) * t.dim(3) + w);
}

// Source index for a padded coordinate, or -1 for a zero fill.
std::int64_t source_index(std::int64_t i, std::int64_t n, PaddingMode mode) {
  if (i >= 0 && i < n) return i;
  switch (mode) {
    case PaddingMode::zero:
      return -1;
    case PaddingMode::replicate:
      return i < 0 ? 0 : n - 1;
    case PaddingMode::reflect:
      return i < 0 ? -i : 2 * (n - 1) - i;
  }
  return -1;
}

// Direct 7-loop convolution with padding resolved per tap.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor* b, const ConvSpec& s) {
  const auto n = x.dim(0), h = x.dim(2), wd = x.dim(3);
  const auto oh = (h + 2 * s.pad - s.kernel_h) / s.stride + 1;
  const auto ow = (wd + 2 * s.pad - s.kernel_w) / s.stride + 1;
  Tensor out({n, s.out_channels, oh, ow}, DType::f64);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t co = 0; co < s.out_channels; ++co)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t xq = 0; xq < ow; ++xq) {
          double acc = b ? b->item(co) : 0.0;
          for (std::int64_t ci = 0; ci < s.in_channels; ++ci)
            for (std::int64_t ky = 0; ky < s.kernel_h; ++ky)
              for (std::int64_t kx = 0; kx < s.kernel_w; ++kx) {
                const auto sy = source_index(y * s.stride + ky - s.pad, h, s.padding_mode);
                const auto sx = source_index(xq * s.stride + kx - s.pad, wd, s.padding_mode);
                if (sy < 0 || sx < 0) continue;
                acc += at4(x, i, ci, sy, sx) * w.item(((co * s.in_channels + ci) * s.kernel_h + ky) * s.kernel_w + kx);
              }
          out.set(((i * s.out_channels + co) * oh + y) * ow + xq, acc);
        }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.item(i) - b.item(i)));
  return m;
}

Tensor forward(const std::function<Variable(Tape&, const Variable&)>& f, const Tensor& x) {
  Tape t(Tape::Recording::off);
  return f(t, Variable(x)).value();
}

}  // namespace

TEST_CASE("pad2d matches hand-worked rows") {
  auto x = Tensor::from({1, 1, 1, 3}, std::vector<double>{1, 2, 3});
  // Height 1 cannot reflect by 2, so use replicate/zero here and a taller case for reflect.
  auto rep = forward([](Tape& t, const Variable& v) { return pad2d(t, v, 2, PaddingMode::replicate); }, x);
  CHECK(rep.shape() == Shape{1, 1, 5, 7});
  for (int i = 0; i < 7; ++i) CHECK(rep.item(2 * 7 + i) == std::vector<double>{1, 1, 1, 2, 3, 3, 3}[i]);
  auto x3 = Tensor::from({1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto ref = forward([](Tape& t, const Variable& v) { return pad2d(t, v, 2, PaddingMode::reflect); }, x3);
  // Middle row 4 5 6 reflects to 6 5 4 5 6 5 4.
  for (int i = 0; i < 7; ++i) CHECK(ref.item(3 * 7 + i) == std::vector<double>{6, 5, 4, 5, 6, 5, 4}[i]);
  auto zero = forward([](Tape& t, const Variable& v) { return pad2d(t, v, 1, PaddingMode::zero); }, x3);
  CHECK(zero.item(0) == 0.0);
  CHECK(zero.item(6) == 1.0);
  CHECK_THROWS_AS(forward([](Tape& t, const Variable& v) { return pad2d(t, v, 3, PaddingMode::reflect); }, x3),
                  ArgumentError);
}

TEST_CASE("conv2d equals a direct convolution for every padding mode and stride") {
  Rng rng(5);
  for (auto mode : {PaddingMode::zero, PaddingMode::reflect, PaddingMode::replicate}) {
    for (std::int64_t stride : {1, 2}) {
      for (std::int64_t k : {1, 3}) {
        for (bool bias : {true, false}) {
          ConvSpec s{3, 4, k, k, stride, k / 2, mode, bias};
          auto x = random({2, 3, 7, 6}, rng), w = random(s.weight_shape(), rng), b = random({4}, rng);
          Tape t(Tape::Recording::off);
          auto y = conv2d(t, Variable(x), Variable(w), bias ? Variable(b) : Variable(), s).value();
          CHECK(max_abs_diff(y, naive_conv(x, w, bias ? &b : nullptr, s)) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("conv2d in f32 tracks the f64 result") {
  Rng rng(6);
  ConvSpec s{2, 3, 3, 3, 1, 1, PaddingMode::zero, true};
  auto x = random({1, 2, 5, 5}, rng), w = random(s.weight_shape(), rng), b = random({3}, rng);
  Tape t(Tape::Recording::off);
  auto y = conv2d(t, Variable(x.to(DType::f32)), Variable(w.to(DType::f32)), Variable(b.to(DType::f32)), s).value();
  CHECK(max_abs_diff(y.to(DType::f64), naive_conv(x, w, &b, s)) < 1e-4);
}

TEST_CASE("conv2d rejects bad geometry") {
  Rng rng(1);
  Tape t;
  ConvSpec s{1, 1, 5, 5, 1, 0, PaddingMode::zero, false};
  CHECK_THROWS_AS(conv2d(t, Variable(random({1, 1, 3, 3}, rng)), Variable(random(s.weight_shape(), rng)), Variable(), s),
                  ShapeError);
  ConvSpec wrong_c{2, 1, 1, 1};
  CHECK_THROWS_AS(conv2d(t, Variable(random({1, 1, 3, 3}, rng)), Variable(random(wrong_c.weight_shape(), rng)),
                         Variable(random({1}, rng)), wrong_c),
                  ShapeError);
}

TEST_CASE("batchnorm train normalizes with biased variance and updates running stats") {
  Rng rng(2);
  auto x = random({4, 2, 3, 3}, rng);
  auto gamma = Tensor::from({2}, std::vector<double>{1.5, 0.5});
  auto beta = Tensor::from({2}, std::vector<double>{0.1, -0.2});
  auto state = BatchNormState::fresh(2, DType::f64);
  BatchNormSpec spec{2, 1e-5, 0.1};
  Tape t(Tape::Recording::off);
  auto y = batchnorm2d(t, Variable(x), Variable(gamma), Variable(beta), state, spec, Mode::train).value();
  for (std::int64_t c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    const int count = 4 * 9;
    for (std::int64_t n = 0; n < 4; ++n)
      for (std::int64_t i = 0; i < 9; ++i) m += at4(x, n, c, i / 3, i % 3);
    m /= count;
    for (std::int64_t n = 0; n < 4; ++n)
      for (std::int64_t i = 0; i < 9; ++i) v += std::pow(at4(x, n, c, i / 3, i % 3) - m, 2);
    const double biased = v / count, unbiased = v / (count - 1);
    for (std::int64_t n = 0; n < 4; ++n)
      for (std::int64_t i = 0; i < 9; ++i) {
        const double expect = gamma.item(c) * (at4(x, n, c, i / 3, i % 3) - m) / std::sqrt(biased + 1e-5) + beta.item(c);
        CHECK(at4(y, n, c, i / 3, i % 3) == doctest::Approx(expect).epsilon(1e-12));
      }
    CHECK(state.running_mean.item(c) == doctest::Approx(0.1 * m).epsilon(1e-12));
    CHECK(state.running_var.item(c) == doctest::Approx(0.9 + 0.1 * unbiased).epsilon(1e-12));
  }
  // Eval uses the running statistics.
  auto e = batchnorm2d(t, Variable(x), Variable(gamma), Variable(beta), state, spec, Mode::eval).value();
  const double expect0 =
      1.5 * (x.item(0) - state.running_mean.item(0)) / std::sqrt(state.running_var.item(0) + 1e-5) + 0.1;
  CHECK(e.item(0) == doctest::Approx(expect0).epsilon(1e-12));
}

TEST_CASE("batchnorm rejects a single value per channel") {
  Rng rng(2);
  auto state = BatchNormState::fresh(1, DType::f64);
  Tape t;
  CHECK_THROWS_AS(batchnorm2d(t, Variable(random({1, 1, 1, 1}, rng)), Variable(fill({1}, 1, DType::f64)),
                              Variable(fill({1}, 0, DType::f64)), state, BatchNormSpec{1}, Mode::train),
                  ArgumentError);
}

TEST_CASE("max pool picks window maxima") {
  auto x = Tensor::from({1, 1, 4, 4}, std::vector<double>{1, 5, 2, 0, 3, 4, 8, 1, 0, 0, 1, 1, 9, 0, 1, 7});
  auto y = forward([](Tape& t, const Variable& v) { return maxpool2d(t, v, 2, 2); }, x);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.item(0) == 5);
  CHECK(y.item(1) == 8);
  CHECK(y.item(2) == 9);
  CHECK(y.item(3) == 7);
  // Padded 3/2/1 window never picks padding.
  auto neg = fill({1, 1, 4, 4}, -3.0, DType::f64);
  auto z = forward([](Tape& t, const Variable& v) { return maxpool2d(t, v, 3, 2, 1); }, neg);
  for (std::int64_t i = 0; i < z.numel(); ++i) CHECK(z.item(i) == -3.0);
}

TEST_CASE("adaptive average pool uses floor/ceil bins") {
  Rng rng(3);
  auto x = random({2, 2, 7, 5}, rng);
  auto y = forward([](Tape& t, const Variable& v) { return adaptive_avgpool2d(t, v, 3, 2); }, x);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 2; ++c)
      for (std::int64_t i = 0; i < 3; ++i)
        for (std::int64_t j = 0; j < 2; ++j) {
          const auto h0 = (i * 7) / 3, h1 = ((i + 1) * 7 + 2) / 3;
          const auto w0 = (j * 5) / 2, w1 = ((j + 1) * 5 + 1) / 2;
          double s = 0;
          for (auto h = h0; h < h1; ++h)
            for (auto w = w0; w < w1; ++w) s += at4(x, n, c, h, w);
          CHECK(at4(y, n, c, i, j) == doctest::Approx(s / ((h1 - h0) * (w1 - w0))).epsilon(1e-12));
        }
  auto g = forward([](Tape& t, const Variable& v) { return global_avgpool(t, v); }, x);
  CHECK(g.shape() == Shape{2, 2});
}

TEST_CASE("linear is x W^T + b") {
  auto x = Tensor::from({1, 2}, std::vector<double>{1, 2});
  auto w = Tensor::from({3, 2}, std::vector<double>{1, 0, 0, 1, 1, 1});
  auto b = Tensor::from({3}, std::vector<double>{0.5, 0, -1});
  Tape t;
  auto y = linear(t, Variable(x), Variable(w), Variable(b)).value();
  CHECK(y.item(0) == 1.5);
  CHECK(y.item(1) == 2.0);
  CHECK(y.item(2) == 2.0);
}

TEST_CASE("softmax cross-entropy against log-sum-exp") {
  auto logits = Tensor::from({2, 3}, std::vector<double>{1000, 1001, 1002, -1, 0, 3});
  std::vector<int> labels{2, 0};
  Tape t;
  const double l0 = std::log(std::exp(-2.0) + std::exp(-1.0) + 1.0);
  const double l1 = std::log(std::exp(-1.0) + 1.0 + std::exp(3.0)) + 1.0;
  auto loss = softmax_cross_entropy(t, Variable(logits), labels).value().item();
  CHECK(loss == doctest::Approx((l0 + l1) / 2).epsilon(1e-12));
  std::vector<int> bad{3, 0};
  CHECK_THROWS_AS(softmax_cross_entropy(t, Variable(logits), bad), ArgumentError);
  auto p = softmax(logits);
  CHECK(p.item(0) + p.item(1) + p.item(2) == doctest::Approx(1.0));
}

TEST_CASE("dropout scales survivors and is identity in eval") {
  Rng rng(4);
  auto x = fill({1, 1, 100, 100}, 1.0, DType::f64);
  Tape t;
  auto y = dropout(t, Variable(x), 0.5, Mode::train, rng).value();
  double s = 0;
  for (std::int64_t i = 0; i < y.numel(); ++i) {
    CHECK((y.item(i) == 0.0 || y.item(i) == 2.0));
    s += y.item(i);
  }
  CHECK(s / y.numel() == doctest::Approx(1.0).epsilon(0.05));
  CHECK(dropout(t, Variable(x), 0.5, Mode::eval, rng).value() == x);
}

TEST_CASE("kaiming init has variance 2/fan_in") {
  Rng rng(9);
  auto w = kaiming_init({64, 32, 3, 3}, rng, DType::f64);
  double s2 = 0;
  for (std::int64_t i = 0; i < w.numel(); ++i) s2 += w.item(i) * w.item(i);
  CHECK(s2 / w.numel() == doctest::Approx(2.0 / (32 * 9)).epsilon(0.05));
}

TEST_CASE("property: attached channel after zero padding is the extent indicator") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const auto n = 1 + static_cast<std::int64_t>(rng.below(3)), c = 1 + static_cast<std::int64_t>(rng.below(4));
    const auto h = 1 + static_cast<std::int64_t>(rng.below(8)), w = 1 + static_cast<std::int64_t>(rng.below(8));
    auto x = random({n, c, h, w}, rng, DType::f32);
    for (std::int64_t p = 1; p <= 3; ++p) {
      Tape t(Tape::Recording::off);
      auto y = pad2d(t, attach_pad_channel(t, Variable(x)), p, PaddingMode::zero).value();
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t yy = 0; yy < h + 2 * p; ++yy)
          for (std::int64_t xx = 0; xx < w + 2 * p; ++xx) {
            const bool inside = yy >= p && yy < h + p && xx >= p && xx < w + p;
            CHECK(at4(y, i, c, yy, xx) == (inside ? 1.0 : 0.0));
          }
    }
  }
}

TEST_CASE("property: zero-weight bias-one conv then relu then zero padding rebuilds the indicator") {
  Rng rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random({2, 3, 6, 5}, rng, DType::f32);
    ConvSpec s{3, 1, 3, 3, 1, 1, PaddingMode::zero, true};
    Tape t(Tape::Recording::off);
    auto ones = relu(t, conv2d(t, Variable(x), Variable(Tensor(s.weight_shape(), DType::f32)),
                               Variable(fill({1}, 1.0, DType::f32)), s));
    auto emulated = pad2d(t, ones, 2, PaddingMode::zero).value();
    auto reference = slice_channels(pad2d(t, attach_pad_channel(t, Variable(x)), 2, PaddingMode::zero).value(), 3, 4);
    CHECK(emulated == reference);
  }
}
