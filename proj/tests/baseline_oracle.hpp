#pragma once

// Direct O(n^2) statements of the five filters.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "denoise4d/baselines.hpp"
#include "denoise4d/random.hpp"

namespace denoise4d::test {

inline double oracle_d2(const Point& a, const Point& b) {
  const double dx = static_cast<double>(a.x) - b.x, dy = static_cast<double>(a.y) - b.y,
               dz = static_cast<double>(a.z) - b.z;
  return dx * dx + dy * dy + dz * dz;
}

inline int oracle_neighbors(const PointCloud& c, std::size_t i, double r) {
  int n = 0;
  for (std::size_t j = 0; j < c.size(); ++j) n += j != i && oracle_d2(c.points[i], c.points[j]) <= r * r;
  return n;
}

inline std::vector<double> oracle_mean_knn(const PointCloud& c, int k) {
  std::vector<double> out;
  for (std::size_t i = 0; i < c.size(); ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < c.size(); ++j)
      if (j != i) d.push_back(oracle_d2(c.points[i], c.points[j]));
    std::sort(d.begin(), d.end());
    double s = 0;
    for (int j = 0; j < k; ++j) s += std::sqrt(d[j]);
    out.push_back(s / k);
  }
  return out;
}

inline double oracle_threshold(const std::vector<double>& d, double mult) {
  double s = 0;
  for (double x : d) s += x;
  const double mean = s / d.size();
  double ss = 0;
  for (double x : d) ss += (x - mean) * (x - mean);
  return mean + mult * std::sqrt(ss / d.size());
}

inline LabelMask oracle_filter(const std::string& name, const PointCloud& c, const FilterParams& p) {
  LabelMask m;
  m.labels.assign(c.size(), kValid);
  if (name == "ror") {
    for (std::size_t i = 0; i < c.size(); ++i) m.labels[i] = oracle_neighbors(c, i, p.ror.radius) == 0;
  } else if (name == "dror") {
    for (std::size_t i = 0; i < c.size(); ++i) {
      const double sr = std::max(p.dror.r_min, p.dror.beta * static_cast<double>(c.points[i].range()) * p.dror.alpha_res);
      m.labels[i] = oracle_neighbors(c, i, sr) < p.dror.k_min;
    }
  } else if (name == "sor") {
    const auto d = oracle_mean_knn(c, p.sor.k);
    const double thr = oracle_threshold(d, p.sor.mult);
    for (std::size_t i = 0; i < c.size(); ++i) m.labels[i] = d[i] > thr;
  } else if (name == "dsor") {
    const auto d = oracle_mean_knn(c, p.dsor.k);
    const double thr = oracle_threshold(d, p.dsor.mult);
    for (std::size_t i = 0; i < c.size(); ++i)
      m.labels[i] = d[i] > thr * p.dsor.range_scale * static_cast<double>(c.points[i].range());
  } else if (name == "lior") {
    for (std::size_t i = 0; i < c.size(); ++i) {
      const Point& q = c.points[i];
      const bool candidate = q.intensity < p.lior.a * std::exp(-q.range() / p.lior.b);
      m.labels[i] = candidate && oracle_neighbors(c, i, p.lior.r_ror) == 0;
    }
  }
  return m;
}

/// Clustered cloud with scattered outliers and low-intensity points, ranges up to ~30 m.
inline PointCloud clustered_cloud(Rng& rng, int n) {
  PointCloud c;
  const int clusters = 1 + static_cast<int>(rng.below(6));
  std::vector<std::array<double, 3>> centers;
  for (int k = 0; k < clusters; ++k) centers.push_back({rng.uniform(-25, 25), rng.uniform(-25, 25), rng.uniform(-2, 3)});
  for (int i = 0; i < n; ++i) {
    Point p;
    if (rng.bernoulli(0.8)) {
      const auto& ctr = centers[rng.below(centers.size())];
      const double spread = rng.uniform(0.2, 1.5);
      p = {static_cast<float>(ctr[0] + rng.normal() * spread), static_cast<float>(ctr[1] + rng.normal() * spread),
           static_cast<float>(ctr[2] + rng.normal() * spread * 0.3), 0.0f};
    } else {
      p = {static_cast<float>(rng.uniform(-30, 30)), static_cast<float>(rng.uniform(-30, 30)),
           static_cast<float>(rng.uniform(-2, 4)), 0.0f};
    }
    p.intensity = static_cast<float>(rng.bernoulli(0.5) ? rng.uniform(0.0, 0.06) : rng.uniform(0.1, 1.0));
    c.points.push_back(p);
  }
  return c;
}

/// Parameters scaled so that each filter flags a non-trivial share of a clustered cloud.
inline FilterParams oracle_params(Rng& rng) {
  FilterParams p;
  p.ror.radius = rng.uniform(0.2, 2.0);
  p.sor = {1 + static_cast<int>(rng.below(8)), rng.uniform(0.2, 2.0)};
  p.dror = {rng.uniform(0.005, 0.05), rng.uniform(1.0, 5.0), rng.uniform(0.05, 0.5), 1 + static_cast<int>(rng.below(5))};
  p.dsor = {1 + static_cast<int>(rng.below(8)), rng.uniform(0.01, 1.0), rng.uniform(0.02, 0.2)};
  p.lior = {rng.uniform(0.02, 0.08), rng.uniform(10, 50), rng.uniform(0.1, 1.5)};
  return p;
}

}  // namespace denoise4d::test
