#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "npi/binary_io.hpp"
#include "npi/digest.hpp"
#include "npi/tensor.hpp"

// NPIW parameter checkpoints: "NPIW", u32 version, u32 tensor count, then per
// tensor u16 name length, UTF-8 name, u8 rank, u64 dims, f32 payload. All
// integers and floats are little-endian.

namespace npi {

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

inline constexpr std::string_view kCheckpointMagic = "NPIW";
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
std::string encode_checkpoint(const std::vector<std::pair<std::string, Tensor<T>>>& tensors) {
  ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  std::vector<float> buf;
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xffff) throw FormatError("tensor name too long: " + name.substr(0, 32));
    if (t.rank() > 0xff) throw FormatError("tensor rank too large");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.raw(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.u64(d);
    buf.assign(t.data().begin(), t.data().end());
    w.f32s(buf.data(), buf.size());
  }
  return w.take();
}

inline NamedTensors decode_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.raw(4) != kCheckpointMagic) throw FormatError("not an NPIW checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw FormatError("unsupported NPIW version " + std::to_string(version));
  const auto count = r.u32();
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.u16();
    std::string name = r.raw(name_len);
    const auto rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    const auto n = shape_size(shape);
    if (n > r.remaining() / sizeof(float)) throw FormatError("truncated payload for tensor " + name);
    std::vector<float> values(n);
    r.f32s(values.data(), n);
    out.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after NPIW payload");
  return out;
}

template <class T>
void save_checkpoint(const std::string& path, const std::vector<std::pair<std::string, Tensor<T>>>& tensors) {
  write_file(path, encode_checkpoint(tensors));
}

inline NamedTensors load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

inline const Tensor<float>& find_tensor(const NamedTensors& tensors, std::string_view name) {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw FormatError("checkpoint has no tensor named " + std::string(name));
}

inline bool has_tensor(const NamedTensors& tensors, std::string_view name) {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

// Copies checkpoint values into existing parameters, matching by name and
// shape.
template <class T>
void assign_parameters(std::vector<std::pair<std::string, Tensor<T>>>& params, const NamedTensors& source) {
  for (auto& [name, p] : params) {
    const auto& src = find_tensor(source, name);
    if (src.shape() != p.shape()) {
      throw FormatError("shape mismatch for " + name + ": " + shape_str(src.shape()) + " vs " + shape_str(p.shape()));
    }
    auto dst = p.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src[i]);
  }
}

}  // namespace npi
