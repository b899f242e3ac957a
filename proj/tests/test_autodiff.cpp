#include <cmath>

#include "doctest.h"
#include "padchannel/autodiff.hpp"

using namespace padchannel;

namespace {
Tensor vec(std::vector<double> v) {
  const auto n = static_cast<std::int64_t>(v.size());
  return Tensor::from({n}, std::move(v));
}
}  // namespace

TEST_CASE("product rule and fan-out accumulate") {
  Variable a(vec({2.0, -3.0}), true);
  Tape tape;
  // loss = sum(a * a + a) -> d/da = 2a + 1
  auto loss = sum(tape, add(tape, mul(tape, a, a), a));
  backward(loss, tape);
  CHECK(a.grad().item(0) == doctest::Approx(5.0));
  CHECK(a.grad().item(1) == doctest::Approx(-5.0));
  CHECK(tape.size() == 0);
}

TEST_CASE("mean and scale") {
  Variable a(vec({1.0, 2.0, 3.0, 4.0}), true);
  Tape tape;
  auto loss = scale(tape, mean(tape, a), 3.0);
  CHECK(loss.value().item() == doctest::Approx(7.5));
  backward(loss, tape);
  for (int i = 0; i < 4; ++i) CHECK(a.grad().item(i) == doctest::Approx(0.75));
}

TEST_CASE("gradients only flow to tracked leaves") {
  Variable a(vec({1.0}), true), b(vec({5.0}), false);
  Tape tape;
  auto loss = sum(tape, mul(tape, a, b));
  backward(loss, tape);
  CHECK(a.grad().item(0) == 5.0);
  CHECK_FALSE(b.has_grad());
}

TEST_CASE("recording off stores nothing") {
  Variable a(vec({1.0, 2.0}), true);
  Tape tape(Tape::Recording::off);
  auto y = mul(tape, a, a);
  CHECK(tape.size() == 0);
  CHECK(y.value().item(1) == 4.0);
}

TEST_CASE("shape mismatch is an error") {
  Variable a(vec({1.0, 2.0})), b(vec({1.0}));
  Tape tape;
  CHECK_THROWS_AS(add(tape, a, b), ShapeError);
}

TEST_CASE("grad_check agrees on a smooth composite and needs f64") {
  auto f = [](Tape& t, const Variable& x) { return sum(t, mul(t, mul(t, x, x), x)); };
  CHECK(grad_check(f, vec({0.3, -1.2, 2.0})) < 1e-8);
  CHECK_THROWS_AS(grad_check(f, vec({1.0}).to(DType::f32)), ArgumentError);
}

TEST_CASE("grad_check detects a wrong backward") {
  // Forward x*x, backward claims 3x.
  auto bad = [](Tape& t, const Variable& x) {
    Tensor y = x.value();
    for (std::int64_t i = 0; i < y.numel(); ++i) y.set(i, y.item(i) * y.item(i));
    auto out = t.record(y, {x}, [x](const Tensor& g) {
      Tensor gx = x.value();
      for (std::int64_t i = 0; i < gx.numel(); ++i) gx.set(i, 3.0 * x.value().item(i) * g.item(i));
      accumulate(x, gx);
    });
    return sum(t, out);
  };
  CHECK(grad_check(bad, vec({1.0, 2.0})) > 0.1);
}
