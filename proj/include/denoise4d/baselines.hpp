#pragma once

// Classical outlier filters: ROR, SOR, DROR, DSOR, LIOR. Neighbor queries are
// brute force on small clouds and grid-hashed on large ones; both paths
// compute identical squared distances, so the decisions agree exactly.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <unordered_map>
#include <vector>

#include "denoise4d/error.hpp"
#include "denoise4d/scan_io.hpp"

namespace denoise4d {

enum class NeighborSearch { Auto, Brute, Grid };

inline constexpr std::size_t kGridThreshold = 2000;

struct RorParams {
  double radius = 0.3;
};

struct SorParams {
  int k = 5;
  double mult = 1.0;
};

struct DrorParams {
  double alpha_res = 2.0 * std::numbers::pi / 512;  // horizontal angular resolution
  double beta = 3.0;
  double r_min = 0.1;
  int k_min = 3;
};

struct DsorParams {
  int k = 5;
  double mult = 0.01;
  double range_scale = 0.05;
};

struct LiorParams {
  double a = 0.05;   // threshold at zero range
  double b = 30.0;   // m, decay length
  double r_ror = 0.2;

  double threshold(double range) const { return a * std::exp(-range / b); }
};

struct FilterParams {
  RorParams ror;
  SorParams sor;
  DrorParams dror;
  DsorParams dsor;
  LiorParams lior;
  NeighborSearch search = NeighborSearch::Auto;
};

namespace detail {

inline double dist2(const Point& a, const Point& b) {
  const double dx = static_cast<double>(a.x) - b.x, dy = static_cast<double>(a.y) - b.y,
               dz = static_cast<double>(a.z) - b.z;
  return dx * dx + dy * dy + dz * dz;
}

inline bool use_grid(NeighborSearch s, std::size_t n) {
  return s == NeighborSearch::Grid || (s == NeighborSearch::Auto && n > kGridThreshold);
}

/// Uniform voxel hash over the cloud.
class VoxelGrid {
 public:
  VoxelGrid(const PointCloud& cloud, double cell) : cloud_(cloud), cell_(cell) {
    for (std::size_t i = 0; i < cloud.size(); ++i) cells_[key(coord(cloud.points[i]))].push_back(i);
  }

  double cell() const { return cell_; }

  /// Calls fn(j, d2) for every other point within Chebyshev cell distance `reach` of point i.
  template <class Fn>
  void visit(std::size_t i, int reach, Fn&& fn) const {
    const auto c = coord(cloud_.points[i]);
    for (int dx = -reach; dx <= reach; ++dx)
      for (int dy = -reach; dy <= reach; ++dy)
        for (int dz = -reach; dz <= reach; ++dz) visit_cell({c[0] + dx, c[1] + dy, c[2] + dz}, i, fn);
  }

  /// Only the shell of cells at Chebyshev distance exactly `ring`.
  template <class Fn>
  void visit_ring(std::size_t i, int ring, Fn&& fn) const {
    const auto c = coord(cloud_.points[i]);
    for (int dx = -ring; dx <= ring; ++dx)
      for (int dy = -ring; dy <= ring; ++dy)
        for (int dz = -ring; dz <= ring; ++dz) {
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
          visit_cell({c[0] + dx, c[1] + dy, c[2] + dz}, i, fn);
        }
  }

  /// Lower bound on the distance from point i to any point outside the cells within `ring`.
  double ring_clearance(std::size_t i, int ring) const {
    const Point& p = cloud_.points[i];
    const auto c = coord(p);
    double best = std::numeric_limits<double>::infinity();
    const double v[3] = {p.x, p.y, p.z};
    for (int a = 0; a < 3; ++a) {
      const double lo = (c[a] - ring) * cell_, hi = (c[a] + ring + 1) * cell_;
      best = std::min({best, v[a] - lo, hi - v[a]});
    }
    return std::max(0.0, best);
  }

  std::size_t occupied() const { return cells_.size(); }

 private:
  std::array<std::int64_t, 3> coord(const Point& p) const {
    return {static_cast<std::int64_t>(std::floor(p.x / cell_)), static_cast<std::int64_t>(std::floor(p.y / cell_)),
            static_cast<std::int64_t>(std::floor(p.z / cell_))};
  }

  static std::uint64_t key(const std::array<std::int64_t, 3>& c) {
    // 21 bits per axis
    auto f = [](std::int64_t v) { return static_cast<std::uint64_t>(v + (1 << 20)) & 0x1FFFFF; };
    return f(c[0]) << 42 | f(c[1]) << 21 | f(c[2]);
  }

  template <class Fn>
  void visit_cell(const std::array<std::int64_t, 3>& c, std::size_t i, Fn& fn) const {
    const auto it = cells_.find(key(c));
    if (it == cells_.end()) return;
    for (std::size_t j : it->second) {
      if (j == i) continue;
      // distinct cells can share a key only when coordinates wrap; filter them out
      if (coord(cloud_.points[j]) != c) continue;
      fn(j, dist2(cloud_.points[i], cloud_.points[j]));
    }
  }

  const PointCloud& cloud_;
  double cell_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

/// Number of other points within radius[i] of each point i (boundary inclusive).
inline std::vector<int> radius_counts(const PointCloud& cloud, const std::vector<double>& radius, NeighborSearch s,
                                      int stop_at = std::numeric_limits<int>::max()) {
  const std::size_t n = cloud.size();
  std::vector<int> count(n, 0);
  if (!use_grid(s, n)) {
    for (std::size_t i = 0; i < n; ++i) {
      const double r2 = radius[i] * radius[i];
      for (std::size_t j = 0; j < n && count[i] < stop_at; ++j)
        if (j != i && dist2(cloud.points[i], cloud.points[j]) <= r2) ++count[i];
    }
    return count;
  }
  double cell = 0.0;
  for (double r : radius) cell = std::max(cell, r);
  // Cap the cell at 1 m; large radii then scan more cells.
  cell = std::clamp(cell, 1e-3, 1.0);
  VoxelGrid grid(cloud, cell);
  for (std::size_t i = 0; i < n; ++i) {
    const double r2 = radius[i] * radius[i];
    const int reach = static_cast<int>(std::ceil(radius[i] / cell));
    grid.visit(i, reach, [&](std::size_t, double d2) {
      if (d2 <= r2) ++count[i];
    });
    count[i] = std::min(count[i], stop_at);
  }
  return count;
}

/// Mean distance to the k nearest other points; the k smallest distances are
/// summed in ascending order.
inline std::vector<double> mean_knn_distance(const PointCloud& cloud, int k, NeighborSearch s) {
  const std::size_t n = cloud.size();
  if (k < 1) throw Error(ErrorCode::InvalidParams, "k must be >= 1");
  if (n <= static_cast<std::size_t>(k)) {
    throw Error(ErrorCode::TooFewPoints, "need more than k = " + std::to_string(k) + " points, got " + std::to_string(n));
  }
  auto mean_of = [k](std::vector<double>& d2) {
    std::partial_sort(d2.begin(), d2.begin() + k, d2.end());
    double s = 0;
    for (int j = 0; j < k; ++j) s += std::sqrt(d2[j]);
    return s / k;
  };
  std::vector<double> out(n);
  std::vector<double> d2;
  if (!use_grid(s, n)) {
    for (std::size_t i = 0; i < n; ++i) {
      d2.clear();
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) d2.push_back(dist2(cloud.points[i], cloud.points[j]));
      out[i] = mean_of(d2);
    }
    return out;
  }
  // Cell size from the bounding-box density, aiming at a few points per cell.
  double lo[3] = {1e300, 1e300, 1e300}, hi[3] = {-1e300, -1e300, -1e300};
  for (const auto& p : cloud.points) {
    const double v[3] = {p.x, p.y, p.z};
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], v[a]);
      hi[a] = std::max(hi[a], v[a]);
    }
  }
  const double area = std::max({(hi[0] - lo[0]) * (hi[1] - lo[1]), 1e-6});
  const double cell = std::clamp(std::sqrt(area * (k + 1) / static_cast<double>(n)), 0.05, 5.0);
  VoxelGrid grid(cloud, cell);
  for (std::size_t i = 0; i < n; ++i) {
    d2.clear();
    int ring = 0;
    grid.visit_ring(i, 0, [&](std::size_t, double d) { d2.push_back(d); });
    while (true) {
      // The k-th best so far is final once it lies within the searched block.
      if (d2.size() >= static_cast<std::size_t>(k)) {
        std::nth_element(d2.begin(), d2.begin() + (k - 1), d2.end());
        const double kth = d2[k - 1];
        const double clear = grid.ring_clearance(i, ring);
        if (kth <= clear * clear) break;
      }
      ++ring;
      grid.visit_ring(i, ring, [&](std::size_t, double d) { d2.push_back(d); });
      if (ring > 1000000) break;
    }
    out[i] = mean_of(d2);
  }
  return out;
}

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  const double mean = s / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size()))};
}

inline void require_positive(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::InvalidParams, what);
}

}  // namespace detail

/// Noise iff no other point lies within the radius.
inline LabelMask ror(const PointCloud& cloud, const RorParams& p = {}, NeighborSearch s = NeighborSearch::Auto) {
  detail::require_positive(p.radius > 0, "ROR radius must be > 0");
  const auto count = detail::radius_counts(cloud, std::vector<double>(cloud.size(), p.radius), s, 1);
  LabelMask m;
  m.labels.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) m.labels[i] = count[i] == 0 ? kNoise : kValid;
  return m;
}

/// Noise iff the mean k-NN distance exceeds global mean + mult * global std.
inline LabelMask sor(const PointCloud& cloud, const SorParams& p = {}, NeighborSearch s = NeighborSearch::Auto) {
  detail::require_positive(p.k >= 1 && p.mult > 0, "SOR needs k >= 1 and mult > 0");
  const auto d = detail::mean_knn_distance(cloud, p.k, s);
  const auto [mean, stddev] = detail::mean_std(d);
  const double thr = mean + p.mult * stddev;
  LabelMask m;
  m.labels.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) m.labels[i] = d[i] > thr ? kNoise : kValid;
  return m;
}

/// Noise iff fewer than k_min other points lie within max(r_min, beta * range * alpha_res).
inline LabelMask dror(const PointCloud& cloud, const DrorParams& p = {}, NeighborSearch s = NeighborSearch::Auto) {
  detail::require_positive(p.alpha_res > 0 && p.beta > 0 && p.r_min > 0 && p.k_min > 0,
                           "DROR parameters must be > 0");
  std::vector<double> radius(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    radius[i] = std::max(p.r_min, p.beta * static_cast<double>(cloud.points[i].range()) * p.alpha_res);
  }
  const auto count = detail::radius_counts(cloud, radius, s, p.k_min);
  LabelMask m;
  m.labels.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) m.labels[i] = count[i] < p.k_min ? kNoise : kValid;
  return m;
}

/// SOR with the global threshold scaled by range_scale * range(p).
inline LabelMask dsor(const PointCloud& cloud, const DsorParams& p = {}, NeighborSearch s = NeighborSearch::Auto) {
  detail::require_positive(p.k >= 1 && p.mult > 0 && p.range_scale > 0, "DSOR parameters must be > 0");
  const auto d = detail::mean_knn_distance(cloud, p.k, s);
  const auto [mean, stddev] = detail::mean_std(d);
  const double global = mean + p.mult * stddev;
  LabelMask m;
  m.labels.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double thr = global * p.range_scale * static_cast<double>(cloud.points[i].range());
    m.labels[i] = d[i] > thr ? kNoise : kValid;
  }
  return m;
}

/// Low-intensity points are candidates; candidates with a neighbor within r_ror are kept.
inline LabelMask lior(const PointCloud& cloud, const LiorParams& p = {}, NeighborSearch s = NeighborSearch::Auto) {
  detail::require_positive(p.a > 0 && p.b > 0 && p.r_ror > 0, "LIOR parameters must be > 0");
  const auto count = detail::radius_counts(cloud, std::vector<double>(cloud.size(), p.r_ror), s, 1);
  LabelMask m;
  m.labels.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point& q = cloud.points[i];
    const bool candidate = q.intensity < p.threshold(q.range());
    m.labels[i] = candidate && count[i] == 0 ? kNoise : kValid;
  }
  return m;
}

inline const std::vector<std::string>& filter_names() {
  static const std::vector<std::string> names{"ror", "sor", "dror", "dsor", "lior"};
  return names;
}

inline LabelMask run_filter(const std::string& name, const PointCloud& cloud, const FilterParams& p = {}) {
  if (name == "ror") return ror(cloud, p.ror, p.search);
  if (name == "sor") return sor(cloud, p.sor, p.search);
  if (name == "dror") return dror(cloud, p.dror, p.search);
  if (name == "dsor") return dsor(cloud, p.dsor, p.search);
  if (name == "lior") return lior(cloud, p.lior, p.search);
  throw Error(ErrorCode::InvalidConfig, "unknown filter '" + name + "'");
}

}  // namespace denoise4d
