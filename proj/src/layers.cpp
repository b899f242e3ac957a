#include "padchannel/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace padchannel {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_rank4(const Variable& x, const char* op) {
  if (x.value().rank() != 4) {
    throw ShapeError(std::string(op) + " expects an (N,C,H,W) tensor, got " + shape_string(x.shape()));
  }
}

void require_dtype(const Variable& a, const Variable& b, const char* op) {
  if (a.dtype() != b.dtype()) throw ShapeError(std::string(op) + ": dtype mismatch");
}

// Source index along one axis for every padded position; -1 means "fill".
std::vector<std::int64_t> pad_index_map(std::int64_t size, std::int64_t pad, PaddingMode mode) {
  std::vector<std::int64_t> map(static_cast<std::size_t>(size + 2 * pad));
  for (std::int64_t o = 0; o < size + 2 * pad; ++o) {
    std::int64_t i = o - pad;
    if (i < 0 || i >= size) {
      switch (mode) {
        case PaddingMode::zero:
          i = -1;
          break;
        case PaddingMode::reflect:
          i = i < 0 ? -i : 2 * (size - 1) - i;
          break;
        case PaddingMode::replicate:
          i = std::clamp<std::int64_t>(i, 0, size - 1);
          break;
      }
    }
    map[static_cast<std::size_t>(o)] = i;
  }
  return map;
}

}  // namespace

std::string to_string(PaddingMode mode) {
  switch (mode) {
    case PaddingMode::zero:
      return "zero";
    case PaddingMode::reflect:
      return "reflect";
    case PaddingMode::replicate:
      return "replicate";
  }
  return "?";
}

PaddingMode parse_padding_mode(std::string_view name) {
  if (name == "zero" || name == "zeros") return PaddingMode::zero;
  if (name == "reflect") return PaddingMode::reflect;
  if (name == "replicate") return PaddingMode::replicate;
  throw ArgumentError("unknown padding mode '" + std::string(name) + "'");
}

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1) throw ArgumentError("conv channels must be >= 1");
  if (kernel_h < 1 || kernel_w < 1) throw ArgumentError("conv kernel dims must be >= 1");
  if (stride < 1) throw ArgumentError("conv stride must be >= 1");
  if (pad < 0) throw ArgumentError("conv pad must be >= 0");
}

void BatchNormSpec::validate() const {
  if (num_features < 1) throw ArgumentError("batchnorm num_features must be >= 1");
  if (!(eps > 0)) throw ArgumentError("batchnorm eps must be > 0");
  if (!(momentum > 0 && momentum <= 1)) throw ArgumentError("batchnorm momentum must be in (0, 1]");
}

BatchNormState BatchNormState::fresh(std::int64_t num_features, DType dtype) {
  return {Tensor({num_features}, dtype), fill({num_features}, 1.0, dtype)};
}

std::int64_t conv_output_dim(std::int64_t input, std::int64_t kernel, std::int64_t stride, std::int64_t pad) {
  const auto span = input + 2 * pad - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

// ---------------------------------------------------------------------------
// Padding

Variable pad2d(Tape& tape, const Variable& x, std::int64_t pad, PaddingMode mode, double value) {
  require_rank4(x, "pad2d");
  if (pad < 0) throw ArgumentError("pad2d: negative pad");
  const auto n = x.value().dim(0), c = x.value().dim(1), h = x.value().dim(2), w = x.value().dim(3);
  if (mode == PaddingMode::reflect && (pad >= h || pad >= w)) {
    throw ArgumentError("pad2d: reflect padding requires pad < spatial dims (pad " + std::to_string(pad) + ", input " +
                        shape_string(x.shape()) + ")");
  }
  if (pad == 0) return x;

  const auto oh = h + 2 * pad, ow = w + 2 * pad;
  auto rows = pad_index_map(h, pad, mode);
  auto cols = pad_index_map(w, pad, mode);

  Tensor out({n, c, oh, ow}, x.dtype());
  visit_dtype(x.dtype(), [&]<class T>(T) {
    auto src = x.value().data<T>();
    auto dst = out.data<T>();
    const T fill_value = static_cast<T>(value);
    for (std::int64_t plane = 0; plane < n * c; ++plane) {
      const T* s = src.data() + plane * h * w;
      T* d = dst.data() + plane * oh * ow;
      for (std::int64_t r = 0; r < oh; ++r) {
        const auto sr = rows[static_cast<std::size_t>(r)];
        for (std::int64_t q = 0; q < ow; ++q) {
          const auto sc = cols[static_cast<std::size_t>(q)];
          d[r * ow + q] = (sr < 0 || sc < 0) ? fill_value : s[sr * w + sc];
        }
      }
    }
  });

  return tape.record(std::move(out), {x}, [x, rows, cols, n, c, h, w, oh, ow](const Tensor& g) mutable {
    Tensor gx(x.shape(), x.dtype());
    visit_dtype(x.dtype(), [&]<class T>(T) {
      auto src = g.data<T>();
      auto dst = gx.data<T>();
      for (std::int64_t plane = 0; plane < n * c; ++plane) {
        const T* s = src.data() + plane * oh * ow;
        T* d = dst.data() + plane * h * w;
        for (std::int64_t r = 0; r < oh; ++r) {
          const auto sr = rows[static_cast<std::size_t>(r)];
          if (sr < 0) continue;
          for (std::int64_t q = 0; q < ow; ++q) {
            const auto sc = cols[static_cast<std::size_t>(q)];
            if (sc >= 0) d[sr * w + sc] += s[r * ow + q];
          }
        }
      }
    });
    accumulate(x, std::move(gx));
  });
}

Variable attach_pad_channel(Tape& tape, const Variable& x) {
  require_rank4(x, "attach_pad_channel");
  const auto& v = x.value();
  Tensor ones = fill({v.dim(0), 1, v.dim(2), v.dim(3)}, 1.0, v.dtype());
  const auto channels = v.dim(1);
  return tape.record(concat_channels(v, ones), {x},
                     [x, channels](const Tensor& g) mutable { accumulate(x, slice_channels(g, 0, channels)); });
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeometry {
  std::int64_t n, c, h, w, out_c, kh, kw, stride, oh, ow;
  std::int64_t k() const { return c * kh * kw; }
  std::int64_t positions() const { return n * oh * ow; }
};

template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const auto p = g.positions();
  for (std::int64_t ch = 0; ch < g.c; ++ch) {
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        T* row = cols + ((ch * g.kh + i) * g.kw + j) * p;
        for (std::int64_t b = 0; b < g.n; ++b) {
          const T* plane = x + (b * g.c + ch) * g.h * g.w;
          for (std::int64_t r = 0; r < g.oh; ++r) {
            const T* line = plane + (r * g.stride + i) * g.w + j;
            T* o = row + (b * g.oh + r) * g.ow;
            if (g.stride == 1) {
              std::copy_n(line, g.ow, o);
            } else {
              for (std::int64_t q = 0; q < g.ow; ++q) o[q] = line[q * g.stride];
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* cols, const ConvGeometry& g, T* x) {
  const auto p = g.positions();
  for (std::int64_t ch = 0; ch < g.c; ++ch) {
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const T* row = cols + ((ch * g.kh + i) * g.kw + j) * p;
        for (std::int64_t b = 0; b < g.n; ++b) {
          T* plane = x + (b * g.c + ch) * g.h * g.w;
          for (std::int64_t r = 0; r < g.oh; ++r) {
            T* line = plane + (r * g.stride + i) * g.w + j;
            const T* o = row + (b * g.oh + r) * g.ow;
            for (std::int64_t q = 0; q < g.ow; ++q) line[q * g.stride] += o[q];
          }
        }
      }
    }
  }
}

Variable conv2d_valid(Tape& tape, const Variable& x, const Variable& weight, const Variable& bias,
                      std::int64_t stride) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], stride, 0, 0};
  g.oh = conv_output_dim(g.h, g.kh, stride, 0);
  g.ow = conv_output_dim(g.w, g.kw, stride, 0);
  if (g.oh < 1 || g.ow < 1) {
    throw ShapeError("conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                     " does not fit padded input " + shape_string(xs));
  }

  const auto k = g.k(), p = g.positions(), plane = g.oh * g.ow;
  auto cols = std::make_shared<Tensor>(Shape{k, p}, x.dtype());
  Tensor out({g.n, g.out_c, g.oh, g.ow}, x.dtype());

  visit_dtype(x.dtype(), [&]<class T>(T) {
    im2col(x.value().data<T>().data(), g, cols->data<T>().data());
    Eigen::Map<const RowMat<T>> wm(weight.value().data<T>().data(), g.out_c, k);
    Eigen::Map<const RowMat<T>> cm(cols->data<T>().data(), k, p);
    RowMat<T> y = wm * cm;
    auto dst = out.data<T>();
    const T* b = bias.defined() ? bias.value().data<T>().data() : nullptr;
    for (std::int64_t n = 0; n < g.n; ++n) {
      for (std::int64_t co = 0; co < g.out_c; ++co) {
        const T* src = y.data() + co * p + n * plane;
        T* d = dst.data() + (n * g.out_c + co) * plane;
        const T shift = b ? b[co] : T(0);
        for (std::int64_t i = 0; i < plane; ++i) d[i] = src[i] + shift;
      }
    }
  });

  auto backward = [x, weight, bias, g, cols](const Tensor& grad) mutable {
    const auto k = g.k(), p = g.positions(), plane = g.oh * g.ow;
    visit_dtype(grad.dtype(), [&]<class T>(T) {
      RowMat<T> gy(g.out_c, p);
      auto gsrc = grad.data<T>();
      for (std::int64_t n = 0; n < g.n; ++n) {
        for (std::int64_t co = 0; co < g.out_c; ++co) {
          std::copy_n(gsrc.data() + (n * g.out_c + co) * plane, plane, gy.data() + co * p + n * plane);
        }
      }
      Eigen::Map<const RowMat<T>> cm(cols->data<T>().data(), k, p);
      if (weight.requires_grad()) {
        Tensor gw(weight.shape(), weight.dtype());
        Eigen::Map<RowMat<T>>(gw.data<T>().data(), g.out_c, k).noalias() = gy * cm.transpose();
        accumulate(weight, std::move(gw));
      }
      if (bias.defined() && bias.requires_grad()) {
        Tensor gb(bias.shape(), bias.dtype());
        auto d = gb.data<T>();
        for (std::int64_t co = 0; co < g.out_c; ++co) {
          T acc = 0;
          const T* row = gy.data() + co * p;
          for (std::int64_t i = 0; i < p; ++i) acc += row[i];
          d[static_cast<std::size_t>(co)] = acc;
        }
        accumulate(bias, std::move(gb));
      }
      if (x.requires_grad()) {
        Eigen::Map<const RowMat<T>> wm(weight.value().data<T>().data(), g.out_c, k);
        RowMat<T> gcols = wm.transpose() * gy;
        Tensor gx(x.shape(), x.dtype());
        col2im(gcols.data(), g, gx.data<T>().data());
        accumulate(x, std::move(gx));
      }
    });
    cols.reset();
  };

  if (bias.defined()) return tape.record(std::move(out), {x, weight, bias}, std::move(backward));
  return tape.record(std::move(out), {x, weight}, std::move(backward));
}

}  // namespace

Variable conv2d(Tape& tape, const Variable& x, const Variable& weight, const Variable& bias, const ConvSpec& spec) {
  spec.validate();
  require_rank4(x, "conv2d");
  require_dtype(x, weight, "conv2d");
  if (x.shape()[1] != spec.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(x.shape()[1]) + " channels, layer expects " +
                     std::to_string(spec.in_channels));
  }
  if (weight.shape() != spec.weight_shape()) {
    throw ShapeError("conv2d: weight shape " + shape_string(weight.shape()) + " does not match spec " +
                     shape_string(spec.weight_shape()));
  }
  if (spec.bias != bias.defined()) throw ArgumentError("conv2d: bias presence does not match spec");
  if (bias.defined() && bias.shape() != Shape{spec.out_channels}) throw ShapeError("conv2d: bad bias shape");
  const auto oh = conv_output_dim(x.shape()[2], spec.kernel_h, spec.stride, spec.pad);
  const auto ow = conv_output_dim(x.shape()[3], spec.kernel_w, spec.stride, spec.pad);
  if (oh < 1 || ow < 1) {
    throw ShapeError("conv2d: invalid geometry, output would be empty for input " + shape_string(x.shape()));
  }
  Variable padded = pad2d(tape, x, spec.pad, spec.padding_mode);
  return conv2d_valid(tape, padded, weight, bias, spec.stride);
}

// ---------------------------------------------------------------------------
// Batch normalization

Variable batchnorm2d(Tape& tape, const Variable& x, const Variable& gamma, const Variable& beta, BatchNormState& state,
                     const BatchNormSpec& spec, Mode mode) {
  spec.validate();
  require_rank4(x, "batchnorm2d");
  const auto n = x.shape()[0], c = x.shape()[1], plane = x.shape()[2] * x.shape()[3];
  if (c != spec.num_features) {
    throw ShapeError("batchnorm2d: input has " + std::to_string(c) + " channels, layer expects " +
                     std::to_string(spec.num_features));
  }
  const auto count = n * plane;
  if (mode == Mode::train && count < 2) {
    throw ArgumentError("batchnorm2d: degenerate batch, training needs N*H*W >= 2 per channel");
  }

  // Per-channel mean and inverse std used for the normalization.
  std::vector<double> mu(static_cast<std::size_t>(c)), inv_std(static_cast<std::size_t>(c));
  Tensor xhat(x.shape(), x.dtype());
  Tensor out(x.shape(), x.dtype());

  visit_dtype(x.dtype(), [&]<class T>(T) {
    auto src = x.value().data<T>();
    auto rm = state.running_mean.data<T>();
    auto rv = state.running_var.data<T>();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const auto idx = static_cast<std::size_t>(ch);
      if (mode == Mode::train) {
        double s = 0.0;
        for (std::int64_t b = 0; b < n; ++b) {
          const T* p = src.data() + (b * c + ch) * plane;
          for (std::int64_t i = 0; i < plane; ++i) s += p[i];
        }
        const double m = s / static_cast<double>(count);
        double ss = 0.0;
        for (std::int64_t b = 0; b < n; ++b) {
          const T* p = src.data() + (b * c + ch) * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            const double d = p[i] - m;
            ss += d * d;
          }
        }
        const double var = ss / static_cast<double>(count);
        mu[idx] = m;
        inv_std[idx] = 1.0 / std::sqrt(var + spec.eps);
        const double unbiased = ss / static_cast<double>(count - 1);
        rm[idx] = static_cast<T>((1.0 - spec.momentum) * rm[idx] + spec.momentum * m);
        rv[idx] = static_cast<T>((1.0 - spec.momentum) * rv[idx] + spec.momentum * unbiased);
      } else {
        mu[idx] = rm[idx];
        inv_std[idx] = 1.0 / std::sqrt(static_cast<double>(rv[idx]) + spec.eps);
      }
    }
    auto gm = gamma.value().data<T>();
    auto bt = beta.value().data<T>();
    auto xh = xhat.data<T>();
    auto dst = out.data<T>();
    for (std::int64_t b = 0; b < n; ++b) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const auto idx = static_cast<std::size_t>(ch);
        const T m = static_cast<T>(mu[idx]), is = static_cast<T>(inv_std[idx]);
        const auto off = (b * c + ch) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const T v = (src[static_cast<std::size_t>(off + i)] - m) * is;
          xh[static_cast<std::size_t>(off + i)] = v;
          dst[static_cast<std::size_t>(off + i)] = v * gm[idx] + bt[idx];
        }
      }
    }
  });

  const bool training = mode == Mode::train;
  return tape.record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std, n, c, plane, count, training](const Tensor& g) mutable {
        visit_dtype(g.dtype(), [&]<class T>(T) {
          auto gs = g.data<T>();
          auto xh = xhat.data<T>();
          auto gm = gamma.value().data<T>();
          std::vector<double> sum_g(static_cast<std::size_t>(c), 0.0), sum_gx(static_cast<std::size_t>(c), 0.0);
          for (std::int64_t b = 0; b < n; ++b) {
            for (std::int64_t ch = 0; ch < c; ++ch) {
              const auto off = (b * c + ch) * plane;
              double sg = 0.0, sgx = 0.0;
              for (std::int64_t i = 0; i < plane; ++i) {
                const auto j = static_cast<std::size_t>(off + i);
                sg += gs[j];
                sgx += static_cast<double>(gs[j]) * xh[j];
              }
              sum_g[static_cast<std::size_t>(ch)] += sg;
              sum_gx[static_cast<std::size_t>(ch)] += sgx;
            }
          }
          if (gamma.requires_grad()) {
            Tensor gg(gamma.shape(), gamma.dtype());
            auto d = gg.data<T>();
            for (std::int64_t ch = 0; ch < c; ++ch) d[static_cast<std::size_t>(ch)] = static_cast<T>(sum_gx[ch]);
            accumulate(gamma, std::move(gg));
          }
          if (beta.requires_grad()) {
            Tensor gb(beta.shape(), beta.dtype());
            auto d = gb.data<T>();
            for (std::int64_t ch = 0; ch < c; ++ch) d[static_cast<std::size_t>(ch)] = static_cast<T>(sum_g[ch]);
            accumulate(beta, std::move(gb));
          }
          if (!x.requires_grad()) return;
          Tensor gx(x.shape(), x.dtype());
          auto d = gx.data<T>();
          const double inv_count = 1.0 / static_cast<double>(count);
          for (std::int64_t b = 0; b < n; ++b) {
            for (std::int64_t ch = 0; ch < c; ++ch) {
              const auto idx = static_cast<std::size_t>(ch);
              const auto off = (b * c + ch) * plane;
              const double scale = static_cast<double>(gm[idx]) * inv_std[idx];
              if (training) {
                const double mg = sum_g[idx] * inv_count, mgx = sum_gx[idx] * inv_count;
                for (std::int64_t i = 0; i < plane; ++i) {
                  const auto j = static_cast<std::size_t>(off + i);
                  d[j] = static_cast<T>(scale * (gs[j] - mg - xh[j] * mgx));
                }
              } else {
                for (std::int64_t i = 0; i < plane; ++i) {
                  const auto j = static_cast<std::size_t>(off + i);
                  d[j] = static_cast<T>(scale * gs[j]);
                }
              }
            }
          }
          accumulate(x, std::move(gx));
        });
      });
}

// ---------------------------------------------------------------------------
// Activations, pooling, dense layers

Variable relu(Tape& tape, const Variable& x) {
  Tensor out(x.shape(), x.dtype());
  visit_dtype(x.dtype(), [&]<class T>(T) {
    auto s = x.value().data<T>();
    auto d = out.data<T>();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = s[i] > T(0) ? s[i] : T(0);
  });
  return tape.record(std::move(out), {x}, [x](const Tensor& g) mutable {
    Tensor gx(x.shape(), x.dtype());
    visit_dtype(x.dtype(), [&]<class T>(T) {
      auto s = x.value().data<T>();
      auto gs = g.data<T>();
      auto d = gx.data<T>();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = s[i] > T(0) ? gs[i] : T(0);
    });
    accumulate(x, std::move(gx));
  });
}

Variable maxpool2d(Tape& tape, const Variable& x, std::int64_t kernel, std::int64_t stride, std::int64_t pad) {
  require_rank4(x, "maxpool2d");
  if (kernel < 1 || stride < 1 || pad < 0 || 2 * pad > kernel) {
    throw ArgumentError("maxpool2d: need kernel >= 1, stride >= 1 and 0 <= pad <= kernel/2");
  }
  const auto n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const auto oh = conv_output_dim(h, kernel, stride, pad), ow = conv_output_dim(w, kernel, stride, pad);
  if (oh < 1 || ow < 1) throw ShapeError("maxpool2d: window larger than input " + shape_string(x.shape()));

  Tensor out({n, c, oh, ow}, x.dtype());
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(n * c * oh * ow));
  visit_dtype(x.dtype(), [&]<class T>(T) {
    auto s = x.value().data<T>();
    auto d = out.data<T>();
    std::size_t o = 0;
    for (std::int64_t plane = 0; plane < n * c; ++plane) {
      const auto base = plane * h * w;
      for (std::int64_t r = 0; r < oh; ++r) {
        for (std::int64_t q = 0; q < ow; ++q, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t best_idx = -1;
          for (std::int64_t i = 0; i < kernel; ++i) {
            const auto y = r * stride - pad + i;
            if (y < 0 || y >= h) continue;
            for (std::int64_t j = 0; j < kernel; ++j) {
              const auto xx = q * stride - pad + j;
              if (xx < 0 || xx >= w) continue;
              const auto idx = base + y * w + xx;
              const T v = s[static_cast<std::size_t>(idx)];
              if (best_idx < 0 || v > best) {
                best = v;
                best_idx = idx;
              }
            }
          }
          d[o] = best;
          argmax[o] = best_idx;
        }
      }
    }
  });
  return tape.record(std::move(out), {x}, [x, argmax = std::move(argmax)](const Tensor& g) mutable {
    Tensor gx(x.shape(), x.dtype());
    visit_dtype(x.dtype(), [&]<class T>(T) {
      auto gs = g.data<T>();
      auto d = gx.data<T>();
      for (std::size_t o = 0; o < argmax.size(); ++o) d[static_cast<std::size_t>(argmax[o])] += gs[o];
    });
    accumulate(x, std::move(gx));
  });
}

Variable adaptive_avgpool2d(Tape& tape, const Variable& x, std::int64_t out_h, std::int64_t out_w) {
  require_rank4(x, "adaptive_avgpool2d");
  if (out_h < 1 || out_w < 1) throw ArgumentError("adaptive_avgpool2d: output dims must be >= 1");
  const auto n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  auto start = [](std::int64_t i, std::int64_t in, std::int64_t out) { return (i * in) / out; };
  auto end = [](std::int64_t i, std::int64_t in, std::int64_t out) { return ((i + 1) * in + out - 1) / out; };

  Tensor out({n, c, out_h, out_w}, x.dtype());
  visit_dtype(x.dtype(), [&]<class T>(T) {
    auto s = x.value().data<T>();
    auto d = out.data<T>();
    for (std::int64_t plane = 0; plane < n * c; ++plane) {
      for (std::int64_t r = 0; r < out_h; ++r) {
        const auto r0 = start(r, h, out_h), r1 = end(r, h, out_h);
        for (std::int64_t q = 0; q < out_w; ++q) {
          const auto q0 = start(q, w, out_w), q1 = end(q, w, out_w);
          T acc = 0;
          for (auto y = r0; y < r1; ++y)
            for (auto xx = q0; xx < q1; ++xx) acc += s[static_cast<std::size_t>(plane * h * w + y * w + xx)];
          d[static_cast<std::size_t>((plane * out_h + r) * out_w + q)] = acc / static_cast<T>((r1 - r0) * (q1 - q0));
        }
      }
    }
  });
  return tape.record(std::move(out), {x}, [x, n, c, h, w, out_h, out_w, start, end](const Tensor& g) mutable {
    Tensor gx(x.shape(), x.dtype());
    visit_dtype(x.dtype(), [&]<class T>(T) {
      auto gs = g.data<T>();
      auto d = gx.data<T>();
      for (std::int64_t plane = 0; plane < n * c; ++plane) {
        for (std::int64_t r = 0; r < out_h; ++r) {
          const auto r0 = start(r, h, out_h), r1 = end(r, h, out_h);
          for (std::int64_t q = 0; q < out_w; ++q) {
            const auto q0 = start(q, w, out_w), q1 = end(q, w, out_w);
            const T share = gs[static_cast<std::size_t>((plane * out_h + r) * out_w + q)] /
                            static_cast<T>((r1 - r0) * (q1 - q0));
            for (auto y = r0; y < r1; ++y)
              for (auto xx = q0; xx < q1; ++xx) d[static_cast<std::size_t>(plane * h * w + y * w + xx)] += share;
          }
        }
      }
    });
    accumulate(x, std::move(gx));
  });
}

Variable global_avgpool(Tape& tape, const Variable& x) {
  require_rank4(x, "global_avgpool");
  const auto n = x.shape()[0], c = x.shape()[1], plane = x.shape()[2] * x.shape()[3];
  Tensor out({n, c}, x.dtype());
  visit_dtype(x.dtype(), [&]<class T>(T) {
    auto s = x.value().data<T>();
    auto d = out.data<T>();
    for (std::int64_t i = 0; i < n * c; ++i) {
      T acc = 0;
      for (std::int64_t j = 0; j < plane; ++j) acc += s[static_cast<std::size_t>(i * plane + j)];
      d[static_cast<std::size_t>(i)] = acc / static_cast<T>(plane);
    }
  });
  return tape.record(std::move(out), {x}, [x, n, c, plane](const Tensor& g) mutable {
    Tensor gx(x.shape(), x.dtype());
    visit_dtype(x.dtype(), [&]<class T>(T) {
      auto gs = g.data<T>();
      auto d = gx.data<T>();
      for (std::int64_t i = 0; i < n * c; ++i) {
        const T share = gs[static_cast<std::size_t>(i)] / static_cast<T>(plane);
        std::fill_n(d.data() + i * plane, plane, share);
      }
    });
    accumulate(x, std::move(gx));
  });
}

Variable flatten(Tape& tape, const Variable& x) {
  const auto n = x.shape()[0];
  return reshape(tape, x, {n, x.value().numel() / n});
}

Variable linear(Tape& tape, const Variable& x, const Variable& weight, const Variable& bias) {
  if (x.value().rank() != 2 || weight.value().rank() != 2 || x.shape()[1] != weight.shape()[1]) {
    throw ShapeError("linear: input " + shape_string(x.shape()) + " incompatible with weight " +
                     shape_string(weight.shape()));
  }
  require_dtype(x, weight, "linear");
  const auto n = x.shape()[0], in = x.shape()[1], out_f = weight.shape()[0];
  if (bias.defined() && bias.shape() != Shape{out_f}) throw ShapeError("linear: bad bias shape");

  Tensor out({n, out_f}, x.dtype());
  visit_dtype(x.dtype(), [&]<class T>(T) {
    Eigen::Map<const RowMat<T>> xm(x.value().data<T>().data(), n, in);
    Eigen::Map<const RowMat<T>> wm(weight.value().data<T>().data(), out_f, in);
    Eigen::Map<RowMat<T>> om(out.data<T>().data(), n, out_f);
    om.noalias() = xm * wm.transpose();
    if (bias.defined()) {
      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bm(bias.value().data<T>().data(), out_f);
      om.rowwise() += bm;
    }
  });

  auto backward = [x, weight, bias, n, in, out_f](const Tensor& g) mutable {
    visit_dtype(g.dtype(), [&]<class T>(T) {
      Eigen::Map<const RowMat<T>> gm(g.data<T>().data(), n, out_f);
      if (x.requires_grad()) {
        Tensor gx(x.shape(), x.dtype());
        Eigen::Map<const RowMat<T>> wm(weight.value().data<T>().data(), out_f, in);
        Eigen::Map<RowMat<T>>(gx.data<T>().data(), n, in).noalias() = gm * wm;
        accumulate(x, std::move(gx));
      }
      if (weight.requires_grad()) {
        Tensor gw(weight.shape(), weight.dtype());
        Eigen::Map<const RowMat<T>> xm(x.value().data<T>().data(), n, in);
        Eigen::Map<RowMat<T>>(gw.data<T>().data(), out_f, in).noalias() = gm.transpose() * xm;
        accumulate(weight, std::move(gw));
      }
      if (bias.defined() && bias.requires_grad()) {
        Tensor gb(bias.shape(), bias.dtype());
        auto d = gb.data<T>();
        for (std::int64_t j = 0; j < out_f; ++j) {
          T acc = 0;
          for (std::int64_t i = 0; i < n; ++i) acc += gm(i, j);
          d[static_cast<std::size_t>(j)] = acc;
        }
        accumulate(bias, std::move(gb));
      }
    });
  };
  if (bias.defined()) return tape.record(std::move(out), {x, weight, bias}, std::move(backward));
  return tape.record(std::move(out), {x, weight}, std::move(backward));
}

Variable dropout(Tape& tape, const Variable& x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ArgumentError("dropout: p must be in [0, 1)");
  if (mode == Mode::eval || p == 0.0) return x;
  Tensor mask(x.shape(), x.dtype());
  Tensor out(x.shape(), x.dtype());
  visit_dtype(x.dtype(), [&]<class T>(T) {
    auto m = mask.data<T>();
    auto s = x.value().data<T>();
    auto d = out.data<T>();
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = rng.bernoulli(p) ? T(0) : keep_scale;
      d[i] = s[i] * m[i];
    }
  });
  return tape.record(std::move(out), {x}, [x, mask = std::move(mask)](const Tensor& g) mutable {
    Tensor gx(x.shape(), x.dtype());
    visit_dtype(x.dtype(), [&]<class T>(T) {
      auto m = mask.data<T>();
      auto gs = g.data<T>();
      auto d = gx.data<T>();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = gs[i] * m[i];
    });
    accumulate(x, std::move(gx));
  });
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax expects (N, K) logits");
  const auto n = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape(), logits.dtype());
  visit_dtype(logits.dtype(), [&]<class T>(T) {
    auto s = logits.data<T>();
    auto d = out.data<T>();
    for (std::int64_t i = 0; i < n; ++i) {
      const T* row = s.data() + i * k;
      T* o = d.data() + i * k;
      const T mx = *std::max_element(row, row + k);
      T total = 0;
      for (std::int64_t j = 0; j < k; ++j) total += (o[j] = std::exp(row[j] - mx));
      for (std::int64_t j = 0; j < k; ++j) o[j] /= total;
    }
  });
  return out;
}

Variable softmax_cross_entropy(Tape& tape, const Variable& logits, std::span<const int> labels) {
  if (logits.value().rank() != 2) throw ShapeError("softmax_cross_entropy expects (N, K) logits");
  const auto n = logits.shape()[0], k = logits.shape()[1];
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(n));
  }
  for (int label : labels) {
    if (label < 0 || label >= k) {
      throw ArgumentError("invalid label " + std::to_string(label) + " for " + std::to_string(k) + " classes");
    }
  }
  Tensor probs = softmax(logits.value());
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    loss -= std::log(probs.item(i * k + labels[static_cast<std::size_t>(i)]));
  }
  loss /= static_cast<double>(n);
  std::vector<int> owned(labels.begin(), labels.end());
  return tape.record(fill({1}, loss, logits.dtype()), {logits},
                     [logits, probs = std::move(probs), owned = std::move(owned), n, k](const Tensor& g) mutable {
                       Tensor gl = probs;
                       visit_dtype(gl.dtype(), [&]<class T>(T) {
                         auto d = gl.data<T>();
                         const T scale = static_cast<T>(g.item(0) / static_cast<double>(n));
                         for (std::int64_t i = 0; i < n; ++i) d[i * k + owned[static_cast<std::size_t>(i)]] -= T(1);
                         for (auto& v : d) v *= scale;
                       });
                       accumulate(logits, std::move(gl));
                     });
}

Tensor kaiming_init(const Shape& shape, Rng& rng, DType dtype) {
  validate_shape(shape);
  if (shape.size() < 2) throw ShapeError("kaiming_init expects a weight shape of rank >= 2");
  const auto fan_in = shape_numel(shape) / shape[0];
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  Tensor t(shape, dtype);
  for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, stddev * rng.normal());
  return t;
}

}  // namespace padchannel
