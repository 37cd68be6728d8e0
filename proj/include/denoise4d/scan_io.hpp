#pragma once

// KITTI odometry style scan and label files.
//   .bin   : N x {float32 x, y, z, intensity}, little endian
//   .label : N x uint32 class id, little endian (0 = valid, 1 = noise)

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "denoise4d/error.hpp"

namespace denoise4d {

struct Point {
  float x = 0.0f;
  float y = 0.0f;
  float z = 0.0f;
  float intensity = 0.0f;

  float range() const { return std::sqrt(x * x + y * y + z * z); }

  friend bool operator==(const Point&, const Point&) = default;
};

struct PointCloud {
  std::vector<Point> points;
  std::uint64_t frame_id = 0;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

enum Label : std::uint8_t { kValid = 0, kNoise = 1 };

struct LabelMask {
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t count(Label c) const {
    std::size_t n = 0;
    for (auto l : labels) n += (l == c);
    return n;
  }

  friend bool operator==(const LabelMask&, const LabelMask&) = default;
};

/// Maps foreign on-disk class ids onto {valid, noise}.
using LabelRemap = std::map<std::uint32_t, std::uint8_t>;

namespace detail {

inline std::vector<char> read_all(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::NotFound, path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_all(const std::filesystem::path& path, const std::vector<char>& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
}

inline std::uint32_t load_u32_le(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
  return v;
}

inline void store_u32_le(char* p, std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
  std::memcpy(p, &v, 4);
}

inline float load_f32_le(const char* p) { return std::bit_cast<float>(load_u32_le(p)); }
inline void store_f32_le(char* p, float v) { store_u32_le(p, std::bit_cast<std::uint32_t>(v)); }

}  // namespace detail

inline PointCloud read_scan(const std::filesystem::path& path) {
  const auto bytes = detail::read_all(path);
  if (bytes.size() % 16 != 0) {
    throw Error(ErrorCode::MalformedLength,
                path.string() + " has " + std::to_string(bytes.size()) + " bytes, not a multiple of 16");
  }
  PointCloud cloud;
  cloud.points.resize(bytes.size() / 16);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const char* rec = bytes.data() + 16 * i;
    Point& p = cloud.points[i];
    p.x = detail::load_f32_le(rec);
    p.y = detail::load_f32_le(rec + 4);
    p.z = detail::load_f32_le(rec + 8);
    p.intensity = detail::load_f32_le(rec + 12);
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) || !std::isfinite(p.intensity)) {
      throw Error(ErrorCode::NonFiniteValue, path.string() + " point " + std::to_string(i));
    }
  }
  return cloud;
}

inline void write_scan(const PointCloud& cloud, const std::filesystem::path& path) {
  std::vector<char> bytes(cloud.points.size() * 16);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Point& p = cloud.points[i];
    char* rec = bytes.data() + 16 * i;
    detail::store_f32_le(rec, p.x);
    detail::store_f32_le(rec + 4, p.y);
    detail::store_f32_le(rec + 8, p.z);
    detail::store_f32_le(rec + 12, p.intensity);
  }
  detail::write_all(path, bytes);
}

inline LabelMask read_labels(const std::filesystem::path& path,
                             const std::optional<LabelRemap>& remap = std::nullopt) {
  const auto bytes = detail::read_all(path);
  if (bytes.size() % 4 != 0) {
    throw Error(ErrorCode::MalformedLength,
                path.string() + " has " + std::to_string(bytes.size()) + " bytes, not a multiple of 4");
  }
  LabelMask mask;
  mask.labels.resize(bytes.size() / 4);
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    std::uint32_t raw = detail::load_u32_le(bytes.data() + 4 * i);
    if (remap) {
      auto it = remap->find(raw);
      if (it == remap->end()) {
        throw Error(ErrorCode::UnknownClassId, "id " + std::to_string(raw) + " missing from remap table");
      }
      raw = it->second;
    }
    if (raw > 1) {
      throw Error(ErrorCode::UnknownClassId, path.string() + " point " + std::to_string(i) + " has id " +
                                                 std::to_string(raw));
    }
    mask.labels[i] = static_cast<std::uint8_t>(raw);
  }
  return mask;
}

inline void write_labels(const LabelMask& mask, const std::filesystem::path& path) {
  std::vector<char> bytes(mask.labels.size() * 4);
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    detail::store_u32_le(bytes.data() + 4 * i, mask.labels[i]);
  }
  detail::write_all(path, bytes);
}

// Dataset layout: <root>/sequences/<NN>/velodyne/<NNNNNN>.bin and labels/<NNNNNN>.label
inline std::string sequence_name(int sequence) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02d", sequence);
  return buf;
}

inline std::string frame_name(int frame) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", frame);
  return buf;
}

inline std::filesystem::path scan_path(const std::filesystem::path& root, int sequence, int frame) {
  return root / "sequences" / sequence_name(sequence) / "velodyne" / (frame_name(frame) + ".bin");
}

inline std::filesystem::path label_path(const std::filesystem::path& root, int sequence, int frame) {
  return root / "sequences" / sequence_name(sequence) / "labels" / (frame_name(frame) + ".label");
}

/// Sorted sequence ids under <root>/sequences whose names are integers.
inline std::vector<int> list_sequences(const std::filesystem::path& root) {
  std::vector<int> ids;
  const auto dir = root / "sequences";
  if (!std::filesystem::is_directory(dir)) return ids;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_directory()) continue;
    const auto name = entry.path().filename().string();
    if (name.empty() || name.find_first_not_of("0123456789") != std::string::npos) continue;
    ids.push_back(std::stoi(name));
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// Sorted frame ids present in <root>/sequences/<NN>/velodyne.
inline std::vector<int> list_frames(const std::filesystem::path& root, int sequence) {
  std::vector<int> ids;
  const auto dir = root / "sequences" / sequence_name(sequence) / "velodyne";
  if (!std::filesystem::is_directory(dir)) return ids;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".bin") continue;
    const auto stem = entry.path().stem().string();
    if (stem.empty() || stem.find_first_not_of("0123456789") != std::string::npos) continue;
    ids.push_back(std::stoi(stem));
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace denoise4d
