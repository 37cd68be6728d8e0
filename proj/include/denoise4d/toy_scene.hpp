#pragma once

// Procedural street scenes ray-cast through the sensor's pixel-center beams:
// ground, building facades with gaps, parked cars, poles and bushes made of
// small spheres. The sensor drives along +x.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <vector>

#include "denoise4d/projection.hpp"
#include "denoise4d/random.hpp"
#include "denoise4d/scan_io.hpp"

namespace denoise4d {

struct ToySceneOptions {
  SensorConfig sensor = sensor_hdl64(512);
  int frames = 50;
  double max_range = 80.0;
  double sensor_height = 1.73;
  double range_noise = 0.01;  // m, Gaussian
  double no_return = 0.01;    // probability a beam returns nothing
  double speed_min = 0.5;     // m per frame
  double speed_max = 1.0;
  bool vegetation = true;
};

namespace detail {

struct Ray {
  double ox, oy, oz, dx, dy, dz;
};

struct Box {
  double lo[3], hi[3];
  float reflectivity;

  std::optional<double> hit(const Ray& r) const {
    const double o[3] = {r.ox, r.oy, r.oz}, d[3] = {r.dx, r.dy, r.dz};
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
      if (std::fabs(d[a]) < 1e-12) {
        if (o[a] < lo[a] || o[a] > hi[a]) return std::nullopt;
        continue;
      }
      double ta = (lo[a] - o[a]) / d[a], tb = (hi[a] - o[a]) / d[a];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) return std::nullopt;
    }
    if (t0 <= 1e-9) return std::nullopt;  // origin inside
    return t0;
  }
};

struct Cylinder {  // vertical
  double x, y, radius, z0, z1;
  float reflectivity;

  std::optional<double> hit(const Ray& r) const {
    const double fx = r.ox - x, fy = r.oy - y;
    const double a = r.dx * r.dx + r.dy * r.dy;
    if (a < 1e-12) return std::nullopt;
    const double b = fx * r.dx + fy * r.dy;
    const double c = fx * fx + fy * fy - radius * radius;
    const double disc = b * b - a * c;
    if (disc < 0) return std::nullopt;
    const double t = (-b - std::sqrt(disc)) / a;
    if (t <= 1e-9) return std::nullopt;
    const double z = r.oz + t * r.dz;
    if (z < z0 || z > z1) return std::nullopt;
    return t;
  }
};

struct Sphere {
  double x, y, z, radius;
  float reflectivity;

  std::optional<double> hit(const Ray& r) const {
    const double fx = r.ox - x, fy = r.oy - y, fz = r.oz - z;
    const double b = fx * r.dx + fy * r.dy + fz * r.dz;
    const double c = fx * fx + fy * fy + fz * fz - radius * radius;
    const double disc = b * b - c;
    if (disc < 0) return std::nullopt;
    const double t = -b - std::sqrt(disc);
    if (t <= 1e-9) return std::nullopt;
    return t;
  }
};

struct Bush {
  Sphere bound;
  std::vector<Sphere> leaves;
};

}  // namespace detail

/// Static world plus a sensor trajectory.
class ToyScene {
 public:
  ToyScene(std::uint64_t seed, ToySceneOptions opt) : opt_(std::move(opt)) {
    opt_.sensor.validate();
    Rng rng(seed);
    const double ground = -opt_.sensor_height;
    const double x_lo = -opt_.max_range - 10, x_hi = opt_.frames * opt_.speed_max + opt_.max_range + 10;
    for (int side : {-1, 1}) {
      const double street = rng.uniform(5.0, 11.0);
      double x = x_lo;
      while (x < x_hi) {
        const double len = rng.uniform(8.0, 25.0);
        const double setback = street + rng.uniform(0.0, 3.0);
        const double y0 = side > 0 ? setback : -setback - 8.0;
        boxes_.push_back({{x, y0, ground}, {x + len, y0 + 8.0, ground + rng.uniform(4.0, 12.0)},
                          static_cast<float>(rng.uniform(0.2, 0.9))});
        x += len + (rng.bernoulli(0.6) ? rng.uniform(1.0, 6.0) : 0.0);
      }
      // parked cars
      for (double cx = x_lo; cx < x_hi; cx += rng.uniform(6.0, 20.0)) {
        if (!rng.bernoulli(0.5)) continue;
        const double cy = side * (street - 2.0);
        boxes_.push_back({{cx, cy - 0.9, ground}, {cx + 4.2, cy + 0.9, ground + 1.5},
                          static_cast<float>(rng.uniform(0.4, 0.9))});
      }
      for (double px = x_lo + rng.uniform(0.0, 15.0); px < x_hi; px += rng.uniform(12.0, 25.0)) {
        poles_.push_back({px, side * (street - 0.6), rng.uniform(0.08, 0.15), ground, ground + rng.uniform(4.0, 7.0),
                          static_cast<float>(rng.uniform(0.3, 0.7))});
      }
      if (!opt_.vegetation) continue;
      for (double bx = x_lo + rng.uniform(0.0, 10.0); bx < x_hi; bx += rng.uniform(6.0, 18.0)) {
        detail::Bush bush;
        const double by = side * (street - rng.uniform(0.5, 1.5));
        const double bz = ground + rng.uniform(0.4, 1.2);
        const double extent = rng.uniform(0.6, 1.2);
        bush.bound = {bx, by, bz, extent + 0.4, 0.0f};
        const int leaves = 10 + static_cast<int>(rng.below(20));
        for (int i = 0; i < leaves; ++i) {
          bush.leaves.push_back({bx + rng.uniform(-extent, extent), by + rng.uniform(-extent, extent) * 0.6,
                                 bz + rng.uniform(-extent, extent) * 0.6, rng.uniform(0.08, 0.3),
                                 static_cast<float>(rng.uniform(0.1, 0.3))});
        }
        bushes_.push_back(std::move(bush));
      }
    }
    double x = 0.0;
    for (int f = 0; f < opt_.frames; ++f) {
      trajectory_.push_back({x, 0.3 * std::sin(0.05 * f), 0.02 * std::sin(0.11 * f)});
      x += rng.uniform(opt_.speed_min, opt_.speed_max);
    }
  }

  int frames() const { return opt_.frames; }
  const ToySceneOptions& options() const { return opt_; }

  /// Sensor-frame scan of frame f; beam noise drawn from `seed`.
  PointCloud scan(int f, std::uint64_t seed) const {
    const auto& pose = trajectory_.at(static_cast<std::size_t>(f));
    const double px = pose[0], py = pose[1], yaw = pose[2];
    const double cy = std::cos(yaw), sy = std::sin(yaw);
    Rng rng(seed);
    const auto& s = opt_.sensor;
    const double ground = -opt_.sensor_height;

    // Objects that can be reached from this pose.
    auto near_xy = [&](double x0, double x1, double y0, double y1) {
      const double dx = std::max({x0 - px, 0.0, px - x1}), dy = std::max({y0 - py, 0.0, py - y1});
      return dx * dx + dy * dy <= opt_.max_range * opt_.max_range;
    };
    std::vector<const detail::Box*> boxes;
    for (const auto& b : boxes_)
      if (near_xy(b.lo[0], b.hi[0], b.lo[1], b.hi[1])) boxes.push_back(&b);
    std::vector<const detail::Cylinder*> poles;
    for (const auto& c : poles_)
      if (near_xy(c.x, c.x, c.y, c.y)) poles.push_back(&c);
    std::vector<const detail::Bush*> bushes;
    for (const auto& b : bushes_)
      if (near_xy(b.bound.x, b.bound.x, b.bound.y, b.bound.y)) bushes.push_back(&b);

    PointCloud cloud;
    cloud.frame_id = static_cast<std::uint64_t>(f);
    for (int row = 0; row < s.height; ++row) {
      const double el = s.row_elevation(row);
      for (int col = 0; col < s.width; ++col) {
        const double az = s.column_azimuth(col);
        // sensor frame direction, then world frame
        const double lx = std::cos(el) * std::cos(az), ly = std::cos(el) * std::sin(az), lz = std::sin(el);
        const detail::Ray ray{px, py, 0.0, cy * lx - sy * ly, sy * lx + cy * ly, lz};
        double best = opt_.max_range;
        float refl = 0.0f;
        if (ray.dz < -1e-9) {
          const double t = ground / ray.dz;
          if (t < best) {
            best = t;
            refl = 0.3f;
          }
        }
        auto consider = [&](std::optional<double> t, float r) {
          if (t && *t < best) {
            best = *t;
            refl = r;
          }
        };
        for (const auto* b : boxes) consider(b->hit(ray), b->reflectivity);
        for (const auto* c : poles) consider(c->hit(ray), c->reflectivity);
        for (const auto* b : bushes) {
          if (!b->bound.hit(ray) && !(std::hypot(px - b->bound.x, py - b->bound.y) < b->bound.radius)) continue;
          for (const auto& leaf : b->leaves) consider(leaf.hit(ray), leaf.reflectivity);
        }
        const double noise = rng.normal() * opt_.range_noise;
        const bool dropped = rng.bernoulli(opt_.no_return);
        const double jitter = rng.uniform(-0.05, 0.05);
        if (best >= opt_.max_range || dropped) continue;
        const double r = std::max(0.1, best + noise);
        cloud.points.push_back({static_cast<float>(lx * r), static_cast<float>(ly * r), static_cast<float>(lz * r),
                                static_cast<float>(std::clamp(refl + jitter, 0.0, 1.0))});
      }
    }
    return cloud;
  }

 private:
  ToySceneOptions opt_;
  std::vector<detail::Box> boxes_;
  std::vector<detail::Cylinder> poles_;
  std::vector<detail::Bush> bushes_;
  std::vector<std::array<double, 3>> trajectory_;  // x, y, yaw
};

/// Writes `sequences` clean sequences in KITTI layout under root.
inline void write_toy_dataset(const std::filesystem::path& root, int sequences, const ToySceneOptions& opt,
                              std::uint64_t seed) {
  for (int seq = 0; seq < sequences; ++seq) {
    const ToyScene scene(mix_seed(seed, static_cast<std::uint64_t>(seq)), opt);
    for (int f = 0; f < scene.frames(); ++f) {
      write_scan(scene.scan(f, mix_seed(seed, static_cast<std::uint64_t>(seq), static_cast<std::uint64_t>(f))),
                 scan_path(root, seq, f));
    }
  }
}

}  // namespace denoise4d
