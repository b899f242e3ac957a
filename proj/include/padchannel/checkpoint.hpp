#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "padchannel/tensor.hpp"

namespace padchannel {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Binary layout, all integers little-endian:
///   "PDCH" | version u32 | count u32 |
///   per tensor: name_len u16, UTF-8 name, rank u8, dims u32 x rank,
///               dtype u8 (0 = f32, 1 = f64), raw element bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_tensors(const NamedTensors& tensors);
NamedTensors decode_tensors(const std::string& bytes);

void write_tensor_file(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_tensor_file(const std::filesystem::path& path);

/// Model state plus the epoch and validation accuracy it was taken at.
/// The two scalars travel as f64 tensors "meta.epoch" and "meta.val_top1".
struct Checkpoint {
  NamedTensors state;
  std::int64_t epoch = 0;
  double val_top1 = 0.0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace padchannel
