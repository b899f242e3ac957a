#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "padchannel/tensor.hpp"

namespace padchannel {

class Tape;

/// Shared handle to a value and its gradient. Copies alias the same node.
class Variable {
 public:
  Variable() = default;
  explicit Variable(Tensor value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  DType dtype() const { return node_->value.dtype(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Zero tensor until something is accumulated.
  const Tensor& grad() const;
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  void zero_grad();
  void accumulate_grad(Tensor g) const;

  bool is(const Variable& other) const { return node_ == other.node_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool leaf = true;
  };
  std::shared_ptr<Node> node_;

  friend class Tape;
  friend void backward(const Variable& loss, Tape& tape);
};

/// Records differentiable operations in execution order.
///
/// A tape with recording off still runs every op forward but never stores
/// closures, which is what evaluation and finite-difference probes use.
class Tape {
 public:
  enum class Recording { on, off };
  using BackwardFn = std::function<void(const Tensor& grad_output)>;

  explicit Tape(Recording recording = Recording::on) : recording_(recording == Recording::on) {}

  bool recording() const { return recording_; }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  /// Wraps `output` in a Variable. When recording and any input needs a
  /// gradient, `fn` is stored and later receives dLoss/dOutput.
  Variable record(Tensor output, std::initializer_list<Variable> inputs, BackwardFn fn);

 private:
  struct Entry {
    Variable output;
    BackwardFn backward;
  };
  bool recording_;
  std::vector<Entry> entries_;

  friend void backward(const Variable& loss, Tape& tape);
};

/// Reverse sweep over `tape`. Leaves hold dLoss/dLeaf afterwards, summed over
/// fan-out. The tape is consumed (cleared).
void backward(const Variable& loss, Tape& tape);

/// Adds `g` into `v`'s gradient if it tracks one.
inline void accumulate(const Variable& v, Tensor g) {
  if (v.requires_grad()) v.accumulate_grad(std::move(g));
}

Variable add(Tape& tape, const Variable& a, const Variable& b);
Variable mul(Tape& tape, const Variable& a, const Variable& b);
Variable scale(Tape& tape, const Variable& a, double factor);
Variable sum(Tape& tape, const Variable& a);
Variable mean(Tape& tape, const Variable& a);
Variable reshape(Tape& tape, const Variable& a, Shape shape);

using ScalarFn = std::function<Variable(Tape&, const Variable&)>;

/// max_i |analytic_i - numeric_i| / max(1, |analytic_i|, |numeric_i|) with
/// central differences of step `eps`. `x` must be f64.
double grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-5);

}  // namespace padchannel
