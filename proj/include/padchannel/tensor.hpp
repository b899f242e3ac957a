#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "padchannel/error.hpp"

namespace padchannel {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::int64_t>;

std::string to_string(DType dtype);
std::string shape_string(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

/// Dense row-major array of rank 1..4. Activations use N,C,H,W.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, DType dtype);  // zero-filled

  static Tensor from(Shape shape, std::vector<float> values);
  static Tensor from(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::int64_t dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  int rank() const { return static_cast<int>(shape_.size()); }
  DType dtype() const { return dtype_; }
  std::int64_t numel() const;
  bool empty() const { return shape_.empty(); }

  template <class T>
  std::span<const T> data() const {
    return std::get<std::vector<T>>(storage_);
  }
  template <class T>
  std::span<T> data() {
    return std::get<std::vector<T>>(storage_);
  }

  /// Element access converted to double, for tests and reporting.
  double item(std::int64_t flat_index) const;
  double item() const;
  void set(std::int64_t flat_index, double value);

  Tensor to(DType dtype) const;
  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor& other) const;

 private:
  Shape shape_;
  DType dtype_ = DType::f32;
  std::variant<std::vector<float>, std::vector<double>> storage_;
};

void validate_shape(const Shape& shape);

/// Calls `fn(T{})` with T = float or double according to `dtype`.
template <class Fn>
decltype(auto) visit_dtype(DType dtype, Fn&& fn) {
  if (dtype == DType::f32) return fn(float{});
  return fn(double{});
}

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

Tensor fill(const Shape& shape, double value, DType dtype = DType::f32);

/// Stacks `b`'s channels after `a`'s. Both rank 4 with equal N, H, W, dtype.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Channels [begin, end) of a rank-4 tensor.
Tensor slice_channels(const Tensor& x, std::int64_t begin, std::int64_t end);

bool all_finite(const Tensor& x);

}  // namespace padchannel
