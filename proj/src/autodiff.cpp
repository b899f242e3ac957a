#include "padchannel/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace padchannel {

Variable::Variable(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->requires_grad = requires_grad;
  if (requires_grad) node_->grad = Tensor(value.shape(), value.dtype());
  node_->value = std::move(value);
}

const Tensor& Variable::grad() const {
  if (node_->grad.empty()) node_->grad = Tensor(node_->value.shape(), node_->value.dtype());
  return node_->grad;
}

void Variable::zero_grad() {
  if (!node_) return;
  if (node_->leaf && node_->requires_grad) {
    node_->grad = Tensor(node_->value.shape(), node_->value.dtype());
  } else {
    node_->grad = Tensor();
  }
}

void Variable::accumulate_grad(Tensor g) const {
  if (g.shape() != node_->value.shape() || g.dtype() != node_->value.dtype()) {
    throw ShapeError("gradient " + shape_string(g.shape()) + " does not match value " +
                     shape_string(node_->value.shape()));
  }
  if (node_->grad.empty()) {
    node_->grad = std::move(g);
    return;
  }
  visit_dtype(g.dtype(), [&]<class T>(T) {
    auto dst = node_->grad.data<T>();
    auto src = g.data<T>();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  });
}

Variable Tape::record(Tensor output, std::initializer_list<Variable> inputs, BackwardFn fn) {
  const bool track =
      recording_ && std::any_of(inputs.begin(), inputs.end(), [](const Variable& v) { return v.requires_grad(); });
  Variable out(std::move(output), false);
  if (track) {
    out.node_->requires_grad = true;
    out.node_->leaf = false;
    entries_.push_back({out, std::move(fn)});
  }
  return out;
}

void backward(const Variable& loss, Tape& tape) {
  if (!loss.defined() || loss.value().numel() != 1) {
    throw ArgumentError("backward requires a scalar loss");
  }
  if (!loss.requires_grad()) {
    tape.clear();
    return;
  }
  Variable root = loss;
  root.accumulate_grad(fill(loss.shape(), 1.0, loss.dtype()));
  for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) {
    auto& node = *it->output.node_;
    if (node.grad.empty()) continue;
    it->backward(node.grad);
    node.grad = Tensor();
    it->backward = nullptr;
  }
  tape.clear();
}

namespace {

void require_same(const Variable& a, const Variable& b, const char* op) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) {
    throw ShapeError(std::string(op) + ": operand mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <class Fn>
Tensor map_pair(const Tensor& a, const Tensor& b, Fn fn) {
  Tensor out(a.shape(), a.dtype());
  visit_dtype(a.dtype(), [&]<class T>(T) {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = fn(x[i], y[i]);
  });
  return out;
}

Tensor scaled(const Tensor& a, double factor) {
  Tensor out(a.shape(), a.dtype());
  visit_dtype(a.dtype(), [&]<class T>(T) {
    auto x = a.data<T>();
    auto o = out.data<T>();
    const T f = static_cast<T>(factor);
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * f;
  });
  return out;
}

}  // namespace

Variable add(Tape& tape, const Variable& a, const Variable& b) {
  require_same(a, b, "add");
  auto out = map_pair(a.value(), b.value(), [](auto x, auto y) { return x + y; });
  return tape.record(std::move(out), {a, b}, [a, b](const Tensor& g) mutable {
    accumulate(a, g);
    accumulate(b, g);
  });
}

Variable mul(Tape& tape, const Variable& a, const Variable& b) {
  require_same(a, b, "mul");
  auto out = map_pair(a.value(), b.value(), [](auto x, auto y) { return x * y; });
  return tape.record(std::move(out), {a, b}, [a, b](const Tensor& g) mutable {
    if (a.requires_grad()) accumulate(a, map_pair(g, b.value(), [](auto x, auto y) { return x * y; }));
    if (b.requires_grad()) accumulate(b, map_pair(g, a.value(), [](auto x, auto y) { return x * y; }));
  });
}

Variable scale(Tape& tape, const Variable& a, double factor) {
  return tape.record(scaled(a.value(), factor), {a},
                     [a, factor](const Tensor& g) mutable { accumulate(a, scaled(g, factor)); });
}

Variable sum(Tape& tape, const Variable& a) {
  double total = 0.0;
  visit_dtype(a.dtype(), [&]<class T>(T) {
    T acc = 0;
    for (T v : a.value().data<T>()) acc += v;
    total = static_cast<double>(acc);
  });
  return tape.record(fill({1}, total, a.dtype()), {a},
                     [a](const Tensor& g) mutable { accumulate(a, fill(a.shape(), g.item(0), a.dtype())); });
}

Variable mean(Tape& tape, const Variable& a) {
  return scale(tape, sum(tape, a), 1.0 / static_cast<double>(a.value().numel()));
}

Variable reshape(Tape& tape, const Variable& a, Shape shape) {
  auto out = a.value().reshaped(std::move(shape));
  return tape.record(std::move(out), {a},
                     [a](const Tensor& g) mutable { accumulate(a, g.reshaped(a.shape())); });
}

double grad_check(const ScalarFn& f, const Tensor& x, double eps) {
  if (x.dtype() != DType::f64) throw ArgumentError("grad_check requires f64 input");

  Tape tape;
  Variable input(x, true);
  Variable loss = f(tape, input);
  if (!all_finite(loss.value())) throw NumericError("grad_check: non-finite function value");
  backward(loss, tape);
  const Tensor analytic = input.grad();

  double worst = 0.0;
  Tensor probe = x;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double original = probe.item(i);
    auto eval_at = [&](double v) {
      probe.set(i, v);
      Tape quiet(Tape::Recording::off);
      return f(quiet, Variable(probe, false)).value().item();
    };
    const double plus = eval_at(original + eps);
    const double minus = eval_at(original - eps);
    probe.set(i, original);
    const double numeric = (plus - minus) / (2.0 * eps);
    const double a = analytic.item(i);
    if (!std::isfinite(numeric) || !std::isfinite(a)) throw NumericError("grad_check: non-finite gradient");
    const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace padchannel
