#include "padchannel/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace padchannel {

std::string to_string(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ')';
  return out.str();
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4) {
    throw ShapeError("tensor rank must be between 1 and 4, got shape " + shape_string(shape));
  }
  for (auto d : shape) {
    if (d < 1) throw ShapeError("invalid shape " + shape_string(shape) + ": dims must be >= 1");
  }
}

Tensor::Tensor(Shape shape, DType dtype) : shape_(std::move(shape)), dtype_(dtype) {
  validate_shape(shape_);
  auto n = static_cast<std::size_t>(shape_numel(shape_));
  if (dtype_ == DType::f32) {
    storage_ = std::vector<float>(n, 0.0f);
  } else {
    storage_ = std::vector<double>(n, 0.0);
  }
}

Tensor Tensor::from(Shape shape, std::vector<float> values) {
  validate_shape(shape);
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("element count does not match shape " + shape_string(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.dtype_ = DType::f32;
  t.storage_ = std::move(values);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  validate_shape(shape);
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("element count does not match shape " + shape_string(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.dtype_ = DType::f64;
  t.storage_ = std::move(values);
  return t;
}

std::int64_t Tensor::numel() const { return shape_.empty() ? 0 : shape_numel(shape_); }

double Tensor::item(std::int64_t i) const {
  return visit_dtype(dtype_, [&]<class T>(T) { return static_cast<double>(data<T>()[static_cast<std::size_t>(i)]); });
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape_string(shape_));
  return item(0);
}

void Tensor::set(std::int64_t i, double value) {
  visit_dtype(dtype_, [&]<class T>(T) { data<T>()[static_cast<std::size_t>(i)] = static_cast<T>(value); });
}

Tensor Tensor::to(DType target) const {
  if (target == dtype_) return *this;
  Tensor out(shape_, target);
  visit_dtype(dtype_, [&]<class S>(S) {
    visit_dtype(target, [&]<class D>(D) {
      auto src = data<S>();
      auto dst = out.data<D>();
      std::transform(src.begin(), src.end(), dst.begin(), [](S v) { return static_cast<D>(v); });
    });
  });
  return out;
}

Tensor Tensor::reshaped(Shape shape) const {
  validate_shape(shape);
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

bool Tensor::operator==(const Tensor& other) const {
  return shape_ == other.shape_ && dtype_ == other.dtype_ && storage_ == other.storage_;
}

Tensor fill(const Shape& shape, double value, DType dtype) {
  Tensor t(shape, dtype);
  visit_dtype(dtype, [&]<class T>(T) {
    auto d = t.data<T>();
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  return t;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4) {
    throw ShapeError("concat_channels expects rank-4 operands, got " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3) || a.dtype() != b.dtype()) {
    throw ShapeError("concat_channels: mismatched operands " + shape_string(a.shape()) + " " + to_string(a.dtype()) +
                     " vs " + shape_string(b.shape()) + " " + to_string(b.dtype()));
  }
  const auto n = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  Tensor out({n, ca + cb, a.dim(2), a.dim(3)}, a.dtype());
  visit_dtype(a.dtype(), [&]<class T>(T) {
    auto src_a = a.data<T>();
    auto src_b = b.data<T>();
    auto dst = out.data<T>();
    for (std::int64_t i = 0; i < n; ++i) {
      auto* o = dst.data() + i * (ca + cb) * plane;
      std::copy_n(src_a.data() + i * ca * plane, ca * plane, o);
      std::copy_n(src_b.data() + i * cb * plane, cb * plane, o + ca * plane);
    }
  });
  return out;
}

Tensor slice_channels(const Tensor& x, std::int64_t begin, std::int64_t end) {
  if (x.rank() != 4 || begin < 0 || end > x.dim(1) || begin >= end) {
    throw ShapeError("slice_channels: bad range [" + std::to_string(begin) + "," + std::to_string(end) + ") for " +
                     shape_string(x.shape()));
  }
  const auto n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3), k = end - begin;
  Tensor out({n, k, x.dim(2), x.dim(3)}, x.dtype());
  visit_dtype(x.dtype(), [&]<class T>(T) {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    for (std::int64_t i = 0; i < n; ++i) {
      std::copy_n(src.data() + (i * c + begin) * plane, k * plane, dst.data() + i * k * plane);
    }
  });
  return out;
}

bool all_finite(const Tensor& x) {
  if (x.empty()) return true;
  return visit_dtype(x.dtype(), [&]<class T>(T) {
    auto d = x.data<T>();
    return std::all_of(d.begin(), d.end(), [](T v) { return std::isfinite(v); });
  });
}

}  // namespace padchannel
