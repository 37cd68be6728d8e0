#pragma once

// Brute-force reference for the windowed neighbor search: scans the whole
// image, keeps window members, fully sorts.

#include <algorithm>
#include <cmath>
#include <tuple>
#include <vector>

#include "denoise4d/knn.hpp"
#include "denoise4d/random.hpp"

namespace denoise4d::test {

inline std::vector<std::int32_t> brute_force_knn(const OrderedPointCloud& ref, const OrderedPointCloud& cand,
                                                 const KnnConfig& cfg, int anchor) {
  const int w = ref.width;
  const int row = anchor / w, col = anchor % w;
  if (!ref.is_valid(anchor)) return std::vector<std::int32_t>(cfg.k, NeighborIndexMap::kNullIndex);
  std::vector<std::tuple<float, int, int>> all;
  for (int q = 0; q < cand.pixels(); ++q) {
    const int r = q / w, c = q % w;
    if (std::abs(r - row) > cfg.half_rows || std::abs(c - col) > cfg.half_cols) continue;
    if (!cand.is_valid(q)) continue;
    all.emplace_back(std::fabs(cand.range(q) - ref.range(anchor)), q == anchor ? 0 : 1, q);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::int32_t> out;
  for (int j = 0; j < cfg.k; ++j) out.push_back(j < static_cast<int>(all.size()) ? std::get<2>(all[j]) : anchor);
  return out;
}

/// Image with the given ranges (<= 0 marks an empty pixel); x = range, y = z = 0.
inline OrderedPointCloud make_opc(int h, int w, const std::vector<float>& ranges) {
  OrderedPointCloud opc;
  opc.height = h;
  opc.width = w;
  opc.channels = 4;
  const int n = h * w;
  opc.data.assign(4 * static_cast<std::size_t>(n), 0.0f);
  opc.valid.assign(n, 0);
  opc.source.assign(n, -1);
  opc.owner_offset.assign(n + 1, 0);
  for (int p = 0; p < n; ++p) {
    if (ranges[p] > 0) {
      opc.valid[p] = 1;
      opc.data[p] = ranges[p];
      opc.data[n + p] = ranges[p];
    } else {
      opc.data[p] = OrderedPointCloud::kInvalidRange;
    }
  }
  return opc;
}

/// Random image: 20% empty pixels, ranges in [1, 50] m, Cartesian channels random.
inline OrderedPointCloud random_opc(Rng& rng, int h, int w) {
  OrderedPointCloud opc;
  opc.height = h;
  opc.width = w;
  opc.channels = 4;
  const int n = h * w;
  opc.data.assign(4 * static_cast<std::size_t>(n), 0.0f);
  opc.valid.assign(n, 0);
  opc.source.assign(n, -1);
  opc.owner_offset.assign(n + 1, 0);
  for (int p = 0; p < n; ++p) {
    if (rng.bernoulli(0.2)) {
      opc.data[p] = OrderedPointCloud::kInvalidRange;
      continue;
    }
    opc.valid[p] = 1;
    // Coarse quantization produces genuine ties that exercise the tie-break.
    opc.data[p] = static_cast<float>(1.0 + std::floor(rng.uniform(0, 49) * 8.0) / 8.0);
    for (int c = 1; c < 4; ++c) opc.data[static_cast<std::size_t>(c) * n + p] = static_cast<float>(rng.uniform(-30, 30));
  }
  return opc;
}

}  // namespace denoise4d::test
