#pragma once

// Windowed nearest-neighbor search over the range channel of an ordered point
// cloud, plus the gathers that feed the kNN convolutions.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "denoise4d/error.hpp"
#include "denoise4d/projection.hpp"

namespace denoise4d {

struct KnnConfig {
  int k = 5;
  int half_rows = 2;  // window spans 2 * half_rows + 1 rows
  int half_cols = 4;  // window spans 2 * half_cols + 1 columns

  int window_size() const { return (2 * half_rows + 1) * (2 * half_cols + 1); }

  void validate() const {
    if (k < 1) throw Error(ErrorCode::InvalidConfig, "knn k must be >= 1");
    if (half_rows < 0 || half_cols < 0) throw Error(ErrorCode::InvalidConfig, "knn window must be >= 0");
    if (k > window_size()) throw Error(ErrorCode::InvalidConfig, "knn k exceeds the window size");
  }

  friend bool operator==(const KnnConfig&, const KnnConfig&) = default;
};

/// Per-pixel neighbor lists, pixel-major: indices[p * k + j] is a linear pixel
/// index (row * width + col) or kNullIndex.
struct NeighborIndexMap {
  static constexpr std::int32_t kNullIndex = -1;

  int height = 0;
  int width = 0;
  int k = 0;
  std::vector<std::int32_t> indices;
  std::vector<std::uint8_t> source_valid;

  int pixels() const { return height * width; }
  std::span<const std::int32_t> neighbors(int pixel) const {
    return {indices.data() + static_cast<std::size_t>(pixel) * k, static_cast<std::size_t>(k)};
  }
};

namespace detail {

// Candidate ordering: range difference, then the anchor's own pixel, then row-major order.
struct KnnCandidate {
  float diff;
  std::int32_t not_anchor;
  std::int32_t index;

  bool operator<(const KnnCandidate& o) const {
    if (diff != o.diff) return diff < o.diff;
    if (not_anchor != o.not_anchor) return not_anchor < o.not_anchor;
    return index < o.index;
  }
};

inline NeighborIndexMap knn_search(const OrderedPointCloud& reference, const OrderedPointCloud& candidates,
                                   const KnnConfig& cfg) {
  cfg.validate();
  if (reference.height != candidates.height || reference.width != candidates.width) {
    throw Error(ErrorCode::ShapeMismatch, "knn search over images of different size");
  }
  const int h = reference.height;
  const int w = reference.width;
  NeighborIndexMap nim;
  nim.height = h;
  nim.width = w;
  nim.k = cfg.k;
  nim.indices.assign(static_cast<std::size_t>(h) * w * cfg.k, NeighborIndexMap::kNullIndex);
  nim.source_valid.assign(static_cast<std::size_t>(h) * w, 0);

  std::vector<KnnCandidate> pool;
  pool.reserve(cfg.window_size());
  for (int row = 0; row < h; ++row) {
    const int r0 = std::max(0, row - cfg.half_rows);
    const int r1 = std::min(h - 1, row + cfg.half_rows);
    for (int col = 0; col < w; ++col) {
      const int anchor = row * w + col;
      if (!reference.is_valid(anchor)) continue;
      nim.source_valid[anchor] = 1;
      const float ref = reference.range(anchor);
      const int c0 = std::max(0, col - cfg.half_cols);
      const int c1 = std::min(w - 1, col + cfg.half_cols);
      pool.clear();
      for (int rr = r0; rr <= r1; ++rr) {
        for (int cc = c0; cc <= c1; ++cc) {
          const int q = rr * w + cc;
          if (!candidates.is_valid(q)) continue;
          pool.push_back({std::fabs(candidates.range(q) - ref), q != anchor, q});
        }
      }
      const int take = std::min<int>(cfg.k, static_cast<int>(pool.size()));
      std::partial_sort(pool.begin(), pool.begin() + take, pool.end());
      std::int32_t* out = nim.indices.data() + static_cast<std::size_t>(anchor) * cfg.k;
      for (int j = 0; j < take; ++j) out[j] = pool[j].index;
      for (int j = take; j < cfg.k; ++j) out[j] = anchor;
    }
  }
  return nim;
}

}  // namespace detail

/// k pixels of the anchor's window with the closest range, anchor first.
/// Deficient windows are padded with the anchor; empty anchors get null rows.
inline NeighborIndexMap knn_spatial(const OrderedPointCloud& opc, const KnnConfig& cfg) {
  return detail::knn_search(opc, opc, cfg);
}

/// Same search, with candidates drawn from the previous scan's window and the
/// reference range taken from the current scan.
inline NeighborIndexMap knn_temporal(const OrderedPointCloud& current, const OrderedPointCloud& previous,
                                     const KnnConfig& cfg) {
  return detail::knn_search(current, previous, cfg);
}

/// Dense k x 3 x H x W field of per-neighbor vectors.
struct MotionField {
  int k = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  int pixels() const { return height * width; }
  float& at(int j, int c, int pixel) { return data[(static_cast<std::size_t>(j) * 3 + c) * pixels() + pixel]; }
  float at(int j, int c, int pixel) const {
    return data[(static_cast<std::size_t>(j) * 3 + c) * pixels() + pixel];
  }
};

/// Anchor minus neighbor, in Cartesian coordinates; zero on rows without a source.
inline MotionField motion_vectors(const OrderedPointCloud& current, const OrderedPointCloud& previous,
                                  const NeighborIndexMap& nim) {
  if (current.height != previous.height || current.width != previous.width || nim.height != current.height ||
      nim.width != current.width) {
    throw Error(ErrorCode::ShapeMismatch, "motion vectors over mismatched images");
  }
  MotionField d;
  d.k = nim.k;
  d.height = nim.height;
  d.width = nim.width;
  const int n_pix = d.pixels();
  d.data.assign(static_cast<std::size_t>(d.k) * 3 * n_pix, 0.0f);
  const auto cx = current.channel(OrderedPointCloud::kX);
  const auto cy = current.channel(OrderedPointCloud::kY);
  const auto cz = current.channel(OrderedPointCloud::kZ);
  const auto px = previous.channel(OrderedPointCloud::kX);
  const auto py = previous.channel(OrderedPointCloud::kY);
  const auto pz = previous.channel(OrderedPointCloud::kZ);
  for (int p = 0; p < n_pix; ++p) {
    if (!nim.source_valid[p]) continue;
    const auto nb = nim.neighbors(p);
    for (int j = 0; j < d.k; ++j) {
      const int q = nb[j];
      if (q == NeighborIndexMap::kNullIndex) continue;
      d.at(j, 0, p) = cx[p] - px[q];
      d.at(j, 1, p) = cy[p] - py[q];
      d.at(j, 2, p) = cz[p] - pz[q];
    }
  }
  return d;
}

/// (x, y, z) -> (r, theta, phi) with theta = acos(z / r), phi = atan2(y, x).
/// Vectors shorter than 1e-9 map to zero.
inline std::array<double, 3> to_spherical(double x, double y, double z) {
  const double r = std::sqrt(x * x + y * y + z * z);
  if (r < 1e-9) return {0.0, 0.0, 0.0};
  const double theta = std::acos(std::clamp(z / r, -1.0, 1.0));
  const double phi = (x == 0.0 && y == 0.0) ? 0.0 : std::atan2(y, x);
  return {r, theta, phi};
}

inline MotionField to_spherical(const MotionField& d) {
  MotionField out = d;
  const int n_pix = d.pixels();
  for (int j = 0; j < d.k; ++j) {
    for (int p = 0; p < n_pix; ++p) {
      const auto s = to_spherical(d.at(j, 0, p), d.at(j, 1, p), d.at(j, 2, p));
      for (int c = 0; c < 3; ++c) out.at(j, c, p) = static_cast<float>(s[c]);
    }
  }
  return out;
}

/// Neighbor features as a (k * C) x H x W block: row j * C + c holds channel c of
/// neighbor j. Null neighbors contribute zeros.
inline std::vector<float> gather_neighbors(const OrderedPointCloud& opc, const NeighborIndexMap& nim,
                                           int channels) {
  if (nim.height != opc.height || nim.width != opc.width) {
    throw Error(ErrorCode::ShapeMismatch, "neighbor map does not match the image");
  }
  if (channels < 1 || channels > opc.channels) throw Error(ErrorCode::ShapeMismatch, "channel count");
  const int n_pix = opc.pixels();
  std::vector<float> out(static_cast<std::size_t>(nim.k) * channels * n_pix, 0.0f);
  for (int p = 0; p < n_pix; ++p) {
    const auto nb = nim.neighbors(p);
    for (int j = 0; j < nim.k; ++j) {
      const int q = nb[j];
      if (q == NeighborIndexMap::kNullIndex) continue;
      for (int c = 0; c < channels; ++c) {
        out[(static_cast<std::size_t>(j) * channels + c) * n_pix + p] =
            opc.data[static_cast<std::size_t>(c) * n_pix + q];
      }
    }
  }
  return out;
}

}  // namespace denoise4d
