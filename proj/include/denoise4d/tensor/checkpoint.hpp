#pragma once

// Checkpoint container.
//
//   "D4DCKPT\0"                      8 bytes magic
//   u32 version                      currently 1
//   u32 manifest length, bytes       free-form text (key = value lines)
//   u32 tensor count
//   per tensor: u32 name length, name bytes, u32 rank, u32 dims[rank],
//               float32 values (row-major)
// All integers and floats little endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "denoise4d/error.hpp"
#include "denoise4d/scan_io.hpp"
#include "denoise4d/tensor/tensor.hpp"

namespace denoise4d::nn {

inline constexpr char kCheckpointMagic[8] = {'D', '4', 'D', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string manifest;
  std::vector<NamedArray> tensors;

  const NamedArray* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

inline std::vector<char> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<char> out(kCheckpointMagic, kCheckpointMagic + 8);
  auto put_u32 = [&](std::uint32_t v) {
    const auto at = out.size();
    out.resize(at + 4);
    denoise4d::detail::store_u32_le(out.data() + at, v);
  };
  auto put_bytes = [&](const std::string& s) {
    put_u32(static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  };
  put_u32(ckpt.version);
  put_bytes(ckpt.manifest);
  put_u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.values.size() != numel_of(t.shape)) {
      throw Error(ErrorCode::ShapeMismatch, "checkpoint tensor " + t.name + " value count");
    }
    put_bytes(t.name);
    put_u32(static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(static_cast<std::uint32_t>(d));
    const auto at = out.size();
    out.resize(at + 4 * t.values.size());
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      denoise4d::detail::store_f32_le(out.data() + at + 4 * i, t.values[i]);
    }
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::vector<char>& bytes) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > bytes.size()) throw Error(ErrorCode::MalformedLength, "truncated checkpoint");
  };
  auto get_u32 = [&]() {
    need(4);
    const auto v = denoise4d::detail::load_u32_le(bytes.data() + pos);
    pos += 4;
    return v;
  };
  auto get_bytes = [&]() {
    const auto n = get_u32();
    need(n);
    std::string s(bytes.data() + pos, n);
    pos += n;
    return s;
  };
  need(8);
  if (!std::equal(kCheckpointMagic, kCheckpointMagic + 8, bytes.data())) {
    throw Error(ErrorCode::IoFailure, "not a checkpoint (bad magic)");
  }
  pos = 8;
  Checkpoint ckpt;
  ckpt.version = get_u32();
  if (ckpt.version != kCheckpointVersion) {
    throw Error(ErrorCode::IoFailure, "unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  ckpt.manifest = get_bytes();
  const auto count = get_u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedArray t;
    t.name = get_bytes();
    const auto rank = get_u32();
    for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(static_cast<int>(get_u32()));
    const auto n = numel_of(t.shape);
    need(4 * n);
    t.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.values[i] = denoise4d::detail::load_f32_le(bytes.data() + pos + 4 * i);
    pos += 4 * n;
    ckpt.tensors.push_back(std::move(t));
  }
  if (pos != bytes.size()) throw Error(ErrorCode::MalformedLength, "trailing bytes after checkpoint");
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  denoise4d::detail::write_all(path, encode_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(denoise4d::detail::read_all(path));
}

}  // namespace denoise4d::nn
