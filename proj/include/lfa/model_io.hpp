#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string_view>
#include <stdexcept>
#include <string>
#include <vector>

#include "lfa/network.hpp"

namespace lfa {

// Model container ("LFAM"), all integers little-endian:
//
//   "LFAM" | u16 version | u16 model kind | u8 rank, u32 input dims...
//   u32 layer count
//   per layer: u8 kind tag | u8 activation | u32 filters | u32 kh | u32 kw |
//              f32 dropout rate | u8 tensor count |
//              per tensor: u8 rank, u32 dims..., f32 payload
enum class ModelKind : std::uint16_t { Classifier = 1, Detector = 2 };

inline constexpr std::uint16_t kModelFormatVersion = 1;

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint8_t u8() { need(1); return bytes_[pos_++]; }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + pos_, bytes_.begin() + pos_ + n);
    pos_ += n;
    return s;
  }
  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("truncated binary data");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Writes via a sibling temporary and rename so readers never see a partial file.
inline void write_file_bytes(const std::filesystem::path& path,
                             std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<std::uint8_t> encode_model(const Network<float>& net, ModelKind kind) {
  ByteWriter w;
  w.raw("LFAM");
  w.u16(kModelFormatVersion);
  w.u16(static_cast<std::uint16_t>(kind));
  w.u8(static_cast<std::uint8_t>(net.input_shape().size()));
  for (auto d : net.input_shape()) w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(net.layers().size()));
  auto params = net.parameters();
  std::size_t p = 0;
  for (const auto& spec : net.layers()) {
    w.u8(static_cast<std::uint8_t>(spec.kind));
    w.u8(static_cast<std::uint8_t>(spec.activation));
    w.u32(static_cast<std::uint32_t>(spec.filters));
    w.u32(static_cast<std::uint32_t>(spec.kernel_h));
    w.u32(static_cast<std::uint32_t>(spec.kernel_w));
    w.f32(spec.dropout_rate);
    const std::uint8_t tensors = spec.has_parameters() ? 2 : 0;
    w.u8(tensors);
    for (std::uint8_t t = 0; t < tensors; ++t) {
      const auto& tensor = *params[p++];
      w.u8(static_cast<std::uint8_t>(tensor.rank()));
      for (auto d : tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
      for (float v : tensor.values()) w.f32(v);
    }
  }
  return w.bytes();
}

struct DecodedModel {
  ModelKind kind;
  Network<float> network;
};

inline DecodedModel decode_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.raw(4) != "LFAM") throw std::runtime_error("not an LFAM model file");
  const std::uint16_t version = r.u16();
  if (version != kModelFormatVersion) {
    throw std::runtime_error("unsupported LFAM version " + std::to_string(version));
  }
  const auto kind = static_cast<ModelKind>(r.u16());
  if (kind != ModelKind::Classifier && kind != ModelKind::Detector) {
    throw std::runtime_error("unknown LFAM model kind");
  }
  Shape input(r.u8());
  for (auto& d : input) d = r.u32();
  std::vector<LayerSpec> specs(r.u32());
  std::vector<std::vector<BasicTensor<float>>> tensors(specs.size());
  for (std::size_t l = 0; l < specs.size(); ++l) {
    auto& s = specs[l];
    s.kind = static_cast<LayerKind>(r.u8());
    s.activation = static_cast<Activation>(r.u8());
    s.filters = r.u32();
    s.kernel_h = r.u32();
    s.kernel_w = r.u32();
    s.dropout_rate = r.f32();
    const std::uint8_t count = r.u8();
    for (std::uint8_t t = 0; t < count; ++t) {
      Shape shape(r.u8());
      for (auto& d : shape) d = r.u32();
      std::vector<float> data(shape_product(shape));
      for (auto& v : data) v = r.f32();
      tensors[l].emplace_back(std::move(shape), std::move(data));
    }
  }
  if (!r.done()) throw std::runtime_error("trailing bytes after LFAM model");
  Network<float> net(input, specs);
  auto params = net.parameters();
  std::size_t p = 0;
  for (auto& layer : tensors) {
    for (auto& t : layer) {
      if (p >= params.size() || params[p]->shape() != t.shape()) {
        throw std::runtime_error("LFAM parameter shape does not match layer specs");
      }
      *params[p++] = std::move(t);
    }
  }
  if (p != params.size()) throw std::runtime_error("LFAM model is missing parameters");
  return {kind, std::move(net)};
}

inline void save_model(const std::filesystem::path& path, const Network<float>& net,
                       ModelKind kind) {
  write_file_bytes(path, encode_model(net, kind));
}

inline DecodedModel load_model(const std::filesystem::path& path) {
  return decode_model(read_file_bytes(path));
}

}  // namespace lfa
