#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "denoise4d/error.hpp"
#include "denoise4d/scan_io.hpp"

namespace denoise4d {

inline constexpr double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }

struct SensorConfig {
  int height = 64;                  // rows (s_h)
  int width = 512;                  // columns (s_w)
  double fov_total = deg2rad(28.16);  // f_v, radians
  double fov_up = deg2rad(64 * 0.44 - 2.0);  // radians; elevation -fov_up maps to the bottom edge

  void validate() const {
    if (height < 1 || width < 1) throw Error(ErrorCode::InvalidConfig, "sensor image size must be >= 1");
    if (!(fov_total > 0.0)) throw Error(ErrorCode::InvalidConfig, "sensor fov_total must be > 0");
    if (!(fov_up >= 0.0 && fov_up <= fov_total)) {
      throw Error(ErrorCode::InvalidConfig, "sensor fov_up must lie in [0, fov_total]");
    }
  }

  /// Elevation of a row center, radians.
  double row_elevation(int row) const { return (1.0 - (row + 0.5) / height) * fov_total - fov_up; }

  /// Azimuth of a column center, radians in (-pi, pi].
  double column_azimuth(int col) const { return std::numbers::pi * (1.0 - 2.0 * (col + 0.5) / width); }

  double horizontal_resolution() const { return 2.0 * std::numbers::pi / width; }

  friend bool operator==(const SensorConfig&, const SensorConfig&) = default;
};

/// 64-beam sensor, 0.44 deg vertical resolution, +2 to -26.16 deg.
/// The projection places elevation -fov_up on the bottom image edge, so the
/// preset stores the extent below the horizon there.
inline SensorConfig sensor_hdl64(int width = 512) {
  return {64, width, deg2rad(64 * 0.44), deg2rad(64 * 0.44 - 2.0)};
}

/// 32-beam sensor, 1.25 deg vertical resolution, +10 to -30 deg.
inline SensorConfig sensor_hdl32(int width = 512) {
  return {32, width, deg2rad(32 * 1.25), deg2rad(30.0)};
}

inline SensorConfig sensor_preset(const std::string& name, int width = 512) {
  if (name == "hdl64" || name == "toy") return sensor_hdl64(width);
  if (name == "hdl32") return sensor_hdl32(width);
  throw Error(ErrorCode::InvalidConfig, "unknown sensor preset '" + name + "'");
}

struct Pixel {
  int u = 0;  // column
  int v = 0;  // row

  friend bool operator==(const Pixel&, const Pixel&) = default;
};

inline Pixel pixel_of(double x, double y, double z, const SensorConfig& cfg) {
  const double r = std::sqrt(x * x + y * y + z * z);
  if (!(r > 0.0)) throw Error(ErrorCode::ZeroRange, "point at the sensor origin has no direction");
  const double uf = 0.5 * (1.0 - std::atan2(y, x) / std::numbers::pi) * cfg.width;
  const double vf = (1.0 - (std::asin(z / r) + cfg.fov_up) / cfg.fov_total) * cfg.height;
  const int u = std::clamp(static_cast<int>(std::floor(uf)), 0, cfg.width - 1);
  const int v = std::clamp(static_cast<int>(std::floor(vf)), 0, cfg.height - 1);
  return {u, v};
}

inline Pixel pixel_of(const Point& p, const SensorConfig& cfg) { return pixel_of(p.x, p.y, p.z, cfg); }

/// Range image with Cartesian channels and per-pixel back-pointers to source points.
///
/// Channel order is (range, x, y, z[, intensity]). Pixels without a return hold
/// range -1 and zeros elsewhere.
struct OrderedPointCloud {
  static constexpr float kInvalidRange = -1.0f;
  enum Channel : int { kRange = 0, kX = 1, kY = 2, kZ = 3, kIntensity = 4 };

  int height = 0;
  int width = 0;
  int channels = 4;
  std::vector<float> data;           // channels x height x width
  std::vector<std::uint8_t> valid;   // height x width
  std::vector<std::int32_t> source;  // winning point per pixel, -1 if empty
  // Owner lists in compressed form: point indices of pixel p are
  // owner_index[owner_offset[p] .. owner_offset[p + 1]), ascending.
  std::vector<std::int32_t> owner_offset;
  std::vector<std::int32_t> owner_index;
  std::vector<std::int32_t> point_pixel;  // pixel per input point, -1 if dropped
  std::size_t dropped = 0;               // zero-range points

  int pixels() const { return height * width; }
  std::size_t num_points() const { return point_pixel.size(); }

  float at(int channel, int row, int col) const {
    return data[(static_cast<std::size_t>(channel) * height + row) * width + col];
  }
  float range(int pixel) const { return data[pixel]; }
  bool is_valid(int pixel) const { return valid[pixel] != 0; }

  std::span<const std::int32_t> owners(int pixel) const {
    return {owner_index.data() + owner_offset[pixel],
            static_cast<std::size_t>(owner_offset[pixel + 1] - owner_offset[pixel])};
  }

  std::span<const float> channel(int c) const {
    return {data.data() + static_cast<std::size_t>(c) * pixels(), static_cast<std::size_t>(pixels())};
  }
};

inline OrderedPointCloud project(const PointCloud& cloud, const SensorConfig& cfg, bool with_intensity = false) {
  cfg.validate();
  OrderedPointCloud opc;
  opc.height = cfg.height;
  opc.width = cfg.width;
  opc.channels = with_intensity ? 5 : 4;
  const int n_pix = opc.pixels();
  opc.data.assign(static_cast<std::size_t>(opc.channels) * n_pix, 0.0f);
  std::fill_n(opc.data.begin(), n_pix, OrderedPointCloud::kInvalidRange);
  opc.valid.assign(n_pix, 0);
  opc.source.assign(n_pix, -1);
  opc.point_pixel.assign(cloud.size(), -1);

  std::vector<double> best_range(n_pix, 0.0);
  std::vector<std::int32_t> counts(n_pix + 1, 0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point& p = cloud.points[i];
    const double r = std::sqrt(double(p.x) * p.x + double(p.y) * p.y + double(p.z) * p.z);
    if (!(r > 0.0)) {
      ++opc.dropped;
      continue;
    }
    const Pixel px = pixel_of(p.x, p.y, p.z, cfg);
    const int idx = px.v * cfg.width + px.u;
    opc.point_pixel[i] = idx;
    ++counts[idx + 1];
    // Ascending scan order makes the strict comparison a lower-index tie-break.
    if (opc.source[idx] < 0 || r < best_range[idx]) {
      opc.source[idx] = static_cast<std::int32_t>(i);
      best_range[idx] = r;
    }
  }

  opc.owner_offset.assign(n_pix + 1, 0);
  for (int p = 0; p < n_pix; ++p) opc.owner_offset[p + 1] = opc.owner_offset[p] + counts[p + 1];
  opc.owner_index.assign(opc.owner_offset[n_pix], 0);
  std::vector<std::int32_t> cursor(opc.owner_offset.begin(), opc.owner_offset.end() - 1);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const int idx = opc.point_pixel[i];
    if (idx >= 0) opc.owner_index[cursor[idx]++] = static_cast<std::int32_t>(i);
  }

  for (int idx = 0; idx < n_pix; ++idx) {
    const int src = opc.source[idx];
    if (src < 0) continue;
    const Point& p = cloud.points[src];
    opc.valid[idx] = 1;
    opc.data[idx] = static_cast<float>(best_range[idx]);
    opc.data[static_cast<std::size_t>(OrderedPointCloud::kX) * n_pix + idx] = p.x;
    opc.data[static_cast<std::size_t>(OrderedPointCloud::kY) * n_pix + idx] = p.y;
    opc.data[static_cast<std::size_t>(OrderedPointCloud::kZ) * n_pix + idx] = p.z;
    if (with_intensity) opc.data[static_cast<std::size_t>(OrderedPointCloud::kIntensity) * n_pix + idx] = p.intensity;
  }
  return opc;
}

/// Pushes a per-pixel class map back to the source points. Points dropped
/// during projection keep the valid class.
inline LabelMask unproject_labels(const OrderedPointCloud& opc, std::span<const std::uint8_t> pixel_pred) {
  if (pixel_pred.size() != static_cast<std::size_t>(opc.pixels())) {
    throw Error(ErrorCode::ShapeMismatch, "prediction map does not match the image size");
  }
  LabelMask mask;
  mask.labels.assign(opc.num_points(), kValid);
  for (std::size_t i = 0; i < opc.num_points(); ++i) {
    const int idx = opc.point_pixel[i];
    if (idx >= 0) mask.labels[i] = pixel_pred[idx];
  }
  return mask;
}

/// Per-pixel training target: class of the winning point, -1 on empty pixels.
inline std::vector<int> pixel_targets(const OrderedPointCloud& opc, const LabelMask& labels) {
  if (labels.size() != opc.num_points()) {
    throw Error(ErrorCode::LengthMismatch, "label count does not match the projected cloud");
  }
  std::vector<int> targets(opc.pixels(), -1);
  for (int idx = 0; idx < opc.pixels(); ++idx) {
    if (opc.source[idx] >= 0) targets[idx] = labels.labels[opc.source[idx]];
  }
  return targets;
}

/// Column window [col0, col0 + cols) of the image. Back-pointers are not carried
/// over; the crop is only suitable as network input.
inline OrderedPointCloud crop_columns(const OrderedPointCloud& opc, int col0, int cols) {
  if (col0 < 0 || cols < 1 || col0 + cols > opc.width) {
    throw Error(ErrorCode::ShapeMismatch, "column crop outside the image");
  }
  OrderedPointCloud out;
  out.height = opc.height;
  out.width = cols;
  out.channels = opc.channels;
  const int n_pix = out.pixels();
  out.data.resize(static_cast<std::size_t>(out.channels) * n_pix);
  out.valid.resize(n_pix);
  out.source.resize(n_pix);
  for (int c = 0; c < opc.channels; ++c) {
    for (int r = 0; r < opc.height; ++r) {
      for (int k = 0; k < cols; ++k) {
        out.data[(static_cast<std::size_t>(c) * out.height + r) * cols + k] = opc.at(c, r, col0 + k);
      }
    }
  }
  for (int r = 0; r < opc.height; ++r) {
    for (int k = 0; k < cols; ++k) {
      out.valid[r * cols + k] = opc.valid[r * opc.width + col0 + k];
      out.source[r * cols + k] = opc.source[r * opc.width + col0 + k];
    }
  }
  out.owner_offset.assign(n_pix + 1, 0);
  return out;
}

}  // namespace denoise4d
