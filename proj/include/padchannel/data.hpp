#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "padchannel/rng.hpp"
#include "padchannel/tensor.hpp"

namespace padchannel {

/// (3, S, S) f32 pixels in [0, 1].
struct LabeledImage {
  Tensor pixels;
  int label = 0;
};

struct Dataset {
  std::vector<LabeledImage> items;
  int num_classes = 10;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
};

inline constexpr std::int64_t kCifarSide = 32;
inline constexpr std::int64_t kCifarRecordBytes = 1 + 3 * kCifarSide * kCifarSide;

/// Sequence of 3073-byte records: label byte, then R, G, B planes (32x32,
/// row-major). Bytes map to [0, 1] by /255.
Dataset load_cifar_binary(const std::filesystem::path& path);
/// Inverse of the loader; pixels are quantized with round(v * 255).
void save_cifar_binary(const Dataset& dataset, const std::filesystem::path& path);
std::string encode_cifar_binary(const Dataset& dataset);

/// Boundary-sensitive toy task: uniform background in [0, 0.2] (multiples of
/// 1/255), one 3x3 patch of 1.0 at a uniform position. Label 1 iff the patch
/// touches the outer ring of width 2.
Dataset gen_border_task(std::int64_t n, std::int64_t size, Rng& rng);

/// Anchor (top-left) of the 3x3 patch lies in the width-2 ring test.
bool patch_touches_ring(std::int64_t row, std::int64_t col, std::int64_t size);

/// Deterministic split: the first `round(n * val_fraction)` items after a
/// seeded shuffle become validation.
std::pair<Dataset, Dataset> split(const Dataset& data, double val_fraction, Rng& rng);

struct Normalization {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};
};

/// Per-channel mean and (population) std over a dataset.
Normalization channel_stats(const Dataset& data);

struct AugmentConfig {
  // train
  std::int64_t train_crop_size = 32;
  double scale_min = 0.08;
  double scale_max = 1.0;
  double ratio_min = 3.0 / 4.0;
  double ratio_max = 4.0 / 3.0;
  double flip_prob = 0.5;
  // eval
  std::int64_t resize_size = 36;
  std::int64_t center_crop_size = 32;
  // both
  Normalization normalization;

  void validate() const;
};

/// Square bilinear resize, half-pixel centers (align_corners = false), no
/// antialiasing.
Tensor resize_bilinear(const Tensor& image, std::int64_t out_h, std::int64_t out_w);
Tensor crop(const Tensor& image, std::int64_t top, std::int64_t left, std::int64_t h, std::int64_t w);
Tensor center_crop(const Tensor& image, std::int64_t size);
Tensor hflip(const Tensor& image);
Tensor normalize(const Tensor& image, const Normalization& norm);

/// Random-resized-crop, horizontal flip, normalize.
Tensor augment_train(const LabeledImage& image, const AugmentConfig& cfg, Rng& rng);
/// Resize, center crop, normalize.
Tensor augment_eval(const LabeledImage& image, const AugmentConfig& cfg);

/// Stacks (C, H, W) images into an (N, C, H, W) batch.
Tensor stack(const std::vector<Tensor>& images);

}  // namespace padchannel
