#include "padchannel/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace padchannel {

namespace {

constexpr char kMagic[4] = {'P', 'D', 'C', 'H'};

template <class U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class U>
  U get_le() {
    need(sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return value;
  }
  std::string take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

template <class T, class Bits>
void put_elements(std::string& out, std::span<const T> values) {
  for (T v : values) put_le(out, std::bit_cast<Bits>(v));
}

}  // namespace

std::string encode_tensors(const NamedTensors& tensors) {
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw ArgumentError("tensor name too long");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(t.rank()));
    for (auto d : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.push_back(static_cast<char>(t.dtype()));
    if (t.dtype() == DType::f32) {
      put_elements<float, std::uint32_t>(out, t.data<float>());
    } else {
      put_elements<double, std::uint64_t>(out, t.data<double>());
    }
  }
  return out;
}

NamedTensors decode_tensors(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(4) != std::string(kMagic, 4)) throw DataError("not a checkpoint file (bad magic)");
  const auto version = in.get_le<std::uint32_t>();
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto count = in.get_le<std::uint32_t>();
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.get_le<std::uint16_t>();
    auto name = in.take(name_len);
    const auto rank = in.get_le<std::uint8_t>();
    if (rank < 1 || rank > 4) throw DataError("tensor '" + name + "' has invalid rank");
    Shape shape;
    for (int r = 0; r < rank; ++r) shape.push_back(in.get_le<std::uint32_t>());
    const auto tag = in.get_le<std::uint8_t>();
    try {
      validate_shape(shape);
    } catch (const ShapeError& e) {
      throw DataError("tensor '" + name + "': " + e.what());
    }
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    if (tag == 0) {
      std::vector<float> v(n);
      for (auto& x : v) x = std::bit_cast<float>(in.get_le<std::uint32_t>());
      out.emplace_back(std::move(name), Tensor::from(shape, std::move(v)));
    } else if (tag == 1) {
      std::vector<double> v(n);
      for (auto& x : v) x = std::bit_cast<double>(in.get_le<std::uint64_t>());
      out.emplace_back(std::move(name), Tensor::from(shape, std::move(v)));
    } else {
      throw DataError("tensor '" + name + "' has unknown dtype tag " + std::to_string(tag));
    }
  }
  if (!in.done()) throw DataError("trailing bytes after last tensor");
  return out;
}

void write_tensor_file(const std::filesystem::path& path, const NamedTensors& tensors) {
  const auto bytes = encode_tensors(tensors);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("failed writing " + path.string());
}

NamedTensors read_tensor_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_tensors(bytes);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  NamedTensors all = checkpoint.state;
  all.emplace_back("meta.epoch", Tensor::from({1}, std::vector<double>{static_cast<double>(checkpoint.epoch)}));
  all.emplace_back("meta.val_top1", Tensor::from({1}, std::vector<double>{checkpoint.val_top1}));
  write_tensor_file(path, all);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Checkpoint cp;
  bool has_epoch = false, has_top1 = false;
  for (auto& [name, t] : read_tensor_file(path)) {
    if (name == "meta.epoch") {
      cp.epoch = static_cast<std::int64_t>(t.item());
      has_epoch = true;
    } else if (name == "meta.val_top1") {
      cp.val_top1 = t.item();
      has_top1 = true;
    } else {
      cp.state.emplace_back(std::move(name), std::move(t));
    }
  }
  if (!has_epoch || !has_top1) throw DataError(path.string() + " lacks checkpoint metadata");
  return cp;
}

}  // namespace padchannel
