#include "padchannel/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

namespace padchannel {

namespace {

void require_image(const Tensor& image) {
  if (image.rank() != 3 || image.dtype() != DType::f32) {
    throw ShapeError("expected a (C, H, W) f32 image, got " + shape_string(image.shape()));
  }
}

}  // namespace

Dataset load_cifar_binary(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open dataset file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    throw DataError(path.string() + ": corrupt file, size " + std::to_string(bytes.size()) +
                    " is not a positive multiple of " + std::to_string(kCifarRecordBytes));
  }
  Dataset data;
  const auto count = bytes.size() / kCifarRecordBytes;
  data.items.reserve(count);
  const auto plane = kCifarSide * kCifarSide;
  for (std::size_t r = 0; r < count; ++r) {
    const auto* rec = reinterpret_cast<const unsigned char*>(bytes.data()) + r * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw DataError(path.string() + ": invalid label " + std::to_string(rec[0]) + " in record " + std::to_string(r));
    }
    std::vector<float> px(static_cast<std::size_t>(3 * plane));
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<float>(rec[1 + i]) / 255.0f;
    data.items.push_back({Tensor::from({3, kCifarSide, kCifarSide}, std::move(px)), rec[0]});
  }
  return data;
}

std::string encode_cifar_binary(const Dataset& dataset) {
  std::string out;
  out.reserve(dataset.size() * kCifarRecordBytes);
  for (const auto& item : dataset.items) {
    if (item.pixels.shape() != Shape{3, kCifarSide, kCifarSide}) {
      throw ArgumentError("CIFAR binary layout needs (3, 32, 32) images, got " + shape_string(item.pixels.shape()));
    }
    if (item.label < 0 || item.label > 255) throw ArgumentError("label does not fit in one byte");
    out.push_back(static_cast<char>(item.label));
    for (float v : item.pixels.data<float>()) {
      const auto q = std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f);
      out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
    }
  }
  return out;
}

void save_cifar_binary(const Dataset& dataset, const std::filesystem::path& path) {
  const auto bytes = encode_cifar_binary(dataset);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("failed writing " + path.string());
}

bool patch_touches_ring(std::int64_t row, std::int64_t col, std::int64_t size) {
  constexpr std::int64_t ring = 2, patch = 3;
  auto touches = [&](std::int64_t a) { return a < ring || a + patch - 1 >= size - ring; };
  return touches(row) || touches(col);
}

Dataset gen_border_task(std::int64_t n, std::int64_t size, Rng& rng) {
  if (size < 8) throw ArgumentError("border task needs size >= 8");
  if (n < 1) throw ArgumentError("border task needs n >= 1");
  Dataset data;
  data.num_classes = 2;
  data.items.reserve(static_cast<std::size_t>(n));
  const auto plane = size * size;
  for (std::int64_t i = 0; i < n; ++i) {
    std::vector<float> px(static_cast<std::size_t>(3 * plane));
    for (auto& v : px) v = static_cast<float>(rng.below(52)) / 255.0f;
    const auto row = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(size - 2)));
    const auto col = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(size - 2)));
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t y = row; y < row + 3; ++y)
        for (std::int64_t x = col; x < col + 3; ++x) px[static_cast<std::size_t>(c * plane + y * size + x)] = 1.0f;
    data.items.push_back({Tensor::from({3, size, size}, std::move(px)), patch_touches_ring(row, col, size) ? 1 : 0});
  }
  return data;
}

std::pair<Dataset, Dataset> split(const Dataset& data, double val_fraction, Rng& rng) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ArgumentError("val_fraction must be in (0, 1)");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(data.size()) * val_fraction));
  Dataset train, val;
  train.num_classes = val.num_classes = data.num_classes;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_val ? val : train).items.push_back(data.items[order[i]]);
  }
  return {std::move(train), std::move(val)};
}

Normalization channel_stats(const Dataset& data) {
  if (data.empty()) throw ArgumentError("channel_stats of an empty dataset");
  std::array<double, 3> sum{}, sq{};
  std::int64_t count = 0;
  for (const auto& item : data.items) {
    require_image(item.pixels);
    const auto plane = item.pixels.dim(1) * item.pixels.dim(2);
    auto px = item.pixels.data<float>();
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::int64_t i = 0; i < plane; ++i) {
        const double v = px[c * static_cast<std::size_t>(plane) + static_cast<std::size_t>(i)];
        sum[c] += v;
        sq[c] += v * v;
      }
    }
    count += plane;
  }
  Normalization norm;
  for (std::size_t c = 0; c < 3; ++c) {
    norm.mean[c] = sum[c] / static_cast<double>(count);
    norm.std[c] = std::sqrt(std::max(sq[c] / static_cast<double>(count) - norm.mean[c] * norm.mean[c], 1e-12));
  }
  return norm;
}

void AugmentConfig::validate() const {
  if (train_crop_size < 1) throw ArgumentError("train crop size must be >= 1");
  if (!(scale_min > 0 && scale_min <= scale_max && scale_max <= 1.0)) {
    throw ArgumentError("crop scale range must satisfy 0 < min <= max <= 1");
  }
  if (!(ratio_min > 0 && ratio_min <= ratio_max)) throw ArgumentError("crop ratio range must satisfy 0 < min <= max");
  if (!(flip_prob >= 0 && flip_prob <= 1)) throw ArgumentError("flip probability must be in [0, 1]");
  if (resize_size < 1 || center_crop_size < 1) throw ArgumentError("eval sizes must be >= 1");
  if (center_crop_size > resize_size) throw ArgumentError("center crop larger than resize size");
  for (double s : normalization.std) {
    if (!(s > 0)) throw ArgumentError("normalization std components must be > 0");
  }
}

Tensor resize_bilinear(const Tensor& image, std::int64_t out_h, std::int64_t out_w) {
  require_image(image);
  const auto c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (out_h == h && out_w == w) return image;
  Tensor out({c, out_h, out_w}, DType::f32);
  auto src = image.data<float>();
  auto dst = out.data<float>();
  auto axis = [](std::int64_t o, std::int64_t in, std::int64_t out_size) {
    double s = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out_size) - 0.5;
    s = std::max(s, 0.0);
    auto i0 = std::min(static_cast<std::int64_t>(s), in - 1);
    auto i1 = std::min(i0 + 1, in - 1);
    return std::tuple{i0, i1, s - static_cast<double>(i0)};
  };
  for (std::int64_t y = 0; y < out_h; ++y) {
    const auto [y0, y1, fy] = axis(y, h, out_h);
    for (std::int64_t x = 0; x < out_w; ++x) {
      const auto [x0, x1, fx] = axis(x, w, out_w);
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const float* p = src.data() + ch * h * w;
        const double top = p[y0 * w + x0] * (1 - fx) + p[y0 * w + x1] * fx;
        const double bottom = p[y1 * w + x0] * (1 - fx) + p[y1 * w + x1] * fx;
        dst[static_cast<std::size_t>((ch * out_h + y) * out_w + x)] = static_cast<float>(top * (1 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

Tensor crop(const Tensor& image, std::int64_t top, std::int64_t left, std::int64_t h, std::int64_t w) {
  require_image(image);
  const auto c = image.dim(0), ih = image.dim(1), iw = image.dim(2);
  if (top < 0 || left < 0 || h < 1 || w < 1 || top + h > ih || left + w > iw) {
    throw ArgumentError("crop window outside image");
  }
  Tensor out({c, h, w}, DType::f32);
  auto src = image.data<float>();
  auto dst = out.data<float>();
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h; ++y)
      std::copy_n(src.data() + (ch * ih + top + y) * iw + left, w, dst.data() + (ch * h + y) * w);
  return out;
}

Tensor center_crop(const Tensor& image, std::int64_t size) {
  require_image(image);
  if (size > image.dim(1) || size > image.dim(2)) throw ArgumentError("center crop larger than image");
  const auto top = (image.dim(1) - size) / 2;
  const auto left = (image.dim(2) - size) / 2;
  return crop(image, top, left, size, size);
}

Tensor hflip(const Tensor& image) {
  require_image(image);
  const auto c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out = image;
  auto dst = out.data<float>();
  for (std::int64_t row = 0; row < c * h; ++row) std::reverse(dst.begin() + row * w, dst.begin() + (row + 1) * w);
  return out;
}

Tensor normalize(const Tensor& image, const Normalization& norm) {
  require_image(image);
  if (image.dim(0) != 3) throw ShapeError("normalize expects 3 channels");
  const auto plane = image.dim(1) * image.dim(2);
  Tensor out = image;
  auto d = out.data<float>();
  for (std::size_t c = 0; c < 3; ++c) {
    const float m = static_cast<float>(norm.mean[c]);
    const float inv = static_cast<float>(1.0 / norm.std[c]);
    for (std::int64_t i = 0; i < plane; ++i) {
      auto& v = d[c * static_cast<std::size_t>(plane) + static_cast<std::size_t>(i)];
      v = (v - m) * inv;
    }
  }
  return out;
}

Tensor augment_train(const LabeledImage& image, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto& px = image.pixels;
  require_image(px);
  const auto h = px.dim(1), w = px.dim(2);
  const double area = static_cast<double>(h * w);

  // torchvision RandomResizedCrop: ten attempts, then a ratio-clamped center crop.
  std::int64_t ch = h, cw = w, top = 0, left = 0;
  bool found = false;
  for (int attempt = 0; attempt < 10 && !found; ++attempt) {
    const double target = area * rng.uniform(cfg.scale_min, cfg.scale_max);
    const double ratio = std::exp(rng.uniform(std::log(cfg.ratio_min), std::log(cfg.ratio_max)));
    const auto tw = static_cast<std::int64_t>(std::lround(std::sqrt(target * ratio)));
    const auto th = static_cast<std::int64_t>(std::lround(std::sqrt(target / ratio)));
    if (tw > 0 && th > 0 && tw <= w && th <= h) {
      top = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(h - th + 1)));
      left = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(w - tw + 1)));
      ch = th;
      cw = tw;
      found = true;
    }
  }
  if (!found) {
    const double in_ratio = static_cast<double>(w) / static_cast<double>(h);
    if (in_ratio < cfg.ratio_min) {
      cw = w;
      ch = std::lround(static_cast<double>(w) / cfg.ratio_min);
    } else if (in_ratio > cfg.ratio_max) {
      ch = h;
      cw = std::lround(static_cast<double>(h) * cfg.ratio_max);
    } else {
      cw = w;
      ch = h;
    }
    top = (h - ch) / 2;
    left = (w - cw) / 2;
  }
  Tensor out = resize_bilinear(crop(px, top, left, ch, cw), cfg.train_crop_size, cfg.train_crop_size);
  if (rng.bernoulli(cfg.flip_prob)) out = hflip(out);
  return normalize(out, cfg.normalization);
}

Tensor augment_eval(const LabeledImage& image, const AugmentConfig& cfg) {
  cfg.validate();
  Tensor resized = resize_bilinear(image.pixels, cfg.resize_size, cfg.resize_size);
  return normalize(center_crop(resized, cfg.center_crop_size), cfg.normalization);
}

Tensor stack(const std::vector<Tensor>& images) {
  if (images.empty()) throw ArgumentError("cannot stack an empty batch");
  const auto& first = images.front().shape();
  if (first.size() != 3) throw ShapeError("stack expects (C, H, W) images");
  const auto per = shape_numel(first);
  Tensor out({static_cast<std::int64_t>(images.size()), first[0], first[1], first[2]}, DType::f32);
  auto dst = out.data<float>();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != first) throw ShapeError("stack: images differ in shape");
    std::copy_n(images[i].data<float>().data(), per, dst.data() + static_cast<std::int64_t>(i) * per);
  }
  return out;
}

}  // namespace padchannel
