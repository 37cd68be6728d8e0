#include <gtest/gtest.h>

#include <numbers>
#include <set>

#include "denoise4d/projection.hpp"
#include "test_util.hpp"

using namespace denoise4d;

namespace {

SensorConfig square64() {
  SensorConfig cfg;
  cfg.height = 64;
  cfg.width = 64;
  cfg.fov_total = deg2rad(30.0);
  cfg.fov_up = cfg.fov_total / 2;
  return cfg;
}

// Literal scalar transcription of the image-coordinate mapping.
Pixel oracle_pixel(double x, double y, double z, const SensorConfig& cfg) {
  const double norm = std::sqrt(x * x + y * y + z * z);
  double u = 0.5 * (1.0 - std::atan2(y, x) / std::numbers::pi) * cfg.width;
  double v = (1.0 - (std::asin(z / norm) + cfg.fov_up) / cfg.fov_total) * cfg.height;
  int ui = static_cast<int>(std::floor(u));
  int vi = static_cast<int>(std::floor(v));
  if (ui < 0) ui = 0;
  if (ui > cfg.width - 1) ui = cfg.width - 1;
  if (vi < 0) vi = 0;
  if (vi > cfg.height - 1) vi = cfg.height - 1;
  return {ui, vi};
}

}  // namespace

TEST(PixelOf, ImageCenterAndQuarter) {
  const auto cfg = square64();
  EXPECT_EQ(pixel_of(10, 0, 0, cfg), (Pixel{32, 32}));
  EXPECT_EQ(pixel_of(0, 10, 0, cfg).u, 16);
}

TEST(PixelOf, ZeroRangeIsAnError) {
  try {
    pixel_of(0, 0, 0, square64());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroRange);
  }
}

TEST(PixelOf, MatchesScalarOracle) {
  Rng rng(3);
  const auto cfg = sensor_hdl64();
  for (int i = 0; i < 10000; ++i) {
    const double x = rng.uniform(-1, 1), y = rng.uniform(-1, 1), z = rng.uniform(-1, 1);
    if (x == 0 && y == 0 && z == 0) continue;
    ASSERT_EQ(pixel_of(x, y, z, cfg), oracle_pixel(x, y, z, cfg)) << x << " " << y << " " << z;
  }
}

TEST(PixelOf, AzimuthScaleInvariant) {
  Rng rng(4);
  const auto cfg = sensor_hdl64();
  for (int i = 0; i < 2000; ++i) {
    const double x = rng.uniform(-1, 1), y = rng.uniform(-1, 1), z = rng.uniform(-0.2, 0.2);
    const double lambda = rng.uniform(0.01, 100.0);
    EXPECT_EQ(pixel_of(x, y, z, cfg).u, pixel_of(lambda * x, lambda * y, lambda * z, cfg).u);
  }
}

TEST(Project, SinglePoint) {
  PointCloud c;
  c.points = {{3, 4, 0, 0.25f}};
  const auto opc = project(c, square64(), true);
  int valid = 0;
  for (int p = 0; p < opc.pixels(); ++p) valid += opc.is_valid(p);
  EXPECT_EQ(valid, 1);
  const auto px = pixel_of(c.points[0], square64());
  const int idx = px.v * 64 + px.u;
  EXPECT_FLOAT_EQ(opc.range(idx), 5.0f);
  EXPECT_EQ(opc.at(OrderedPointCloud::kX, px.v, px.u), 3.0f);
  EXPECT_EQ(opc.at(OrderedPointCloud::kY, px.v, px.u), 4.0f);
  EXPECT_EQ(opc.at(OrderedPointCloud::kIntensity, px.v, px.u), 0.25f);
  // Sentinel elsewhere.
  EXPECT_EQ(opc.range((idx + 1) % opc.pixels()), OrderedPointCloud::kInvalidRange);
  EXPECT_EQ(opc.at(OrderedPointCloud::kX, 0, (px.u + 1) % 64), 0.0f);
}

TEST(Project, CollisionNearestWins) {
  // Same direction => same pixel by construction.
  const double dx = 0.6, dy = 0.8, dz = 0.0;
  PointCloud c;
  c.points = {{float(9 * dx), float(9 * dy), float(9 * dz), 0.9f}, {float(5 * dx), float(5 * dy), float(5 * dz), 0.1f}};
  const auto opc = project(c, square64());
  const auto px = pixel_of(c.points[0], square64());
  ASSERT_EQ(px, pixel_of(c.points[1], square64()));
  const int idx = px.v * 64 + px.u;
  EXPECT_NEAR(opc.range(idx), 5.0f, 1e-5);
  EXPECT_EQ(opc.source[idx], 1);
  const auto owners = opc.owners(idx);
  EXPECT_EQ(std::vector<std::int32_t>(owners.begin(), owners.end()), (std::vector<std::int32_t>{0, 1}));

  std::vector<std::uint8_t> pred(opc.pixels(), kValid);
  EXPECT_EQ(unproject_labels(opc, pred).count(kNoise), 0u);
  pred[idx] = kNoise;
  EXPECT_EQ(unproject_labels(opc, pred).labels, (std::vector<std::uint8_t>{kNoise, kNoise}));
}

TEST(Project, ZeroRangePointsAreDropped) {
  PointCloud c;
  c.points = {{0, 0, 0, 0}, {1, 0, 0, 0}};
  const auto opc = project(c, square64());
  EXPECT_EQ(opc.dropped, 1u);
  EXPECT_EQ(opc.point_pixel[0], -1);
  EXPECT_EQ(opc.owner_index.size(), 1u);
}

// Property: channels at valid pixels come from input points, ranges are
// consistent, the stored range is the owners' minimum, and owner lists
// partition the input.
TEST(Project, RandomCloudInvariants) {
  Rng rng(11);
  const auto cfg = sensor_hdl64(128);
  for (int trial = 0; trial < 10; ++trial) {
    const auto c = test::random_cloud(rng, 5000);
    const auto opc = project(c, cfg);
    std::vector<int> seen(c.size(), 0);
    for (int p = 0; p < opc.pixels(); ++p) {
      const auto owners = opc.owners(p);
      EXPECT_EQ(opc.is_valid(p), !owners.empty());
      for (auto i : owners) ++seen[i];
      if (!opc.is_valid(p)) {
        EXPECT_EQ(opc.range(p), -1.0f);
        continue;
      }
      const Point& src = c.points[opc.source[p]];
      const int row = p / cfg.width, col = p % cfg.width;
      EXPECT_EQ(opc.at(OrderedPointCloud::kX, row, col), src.x);
      EXPECT_EQ(opc.at(OrderedPointCloud::kY, row, col), src.y);
      EXPECT_EQ(opc.at(OrderedPointCloud::kZ, row, col), src.z);
      const float x = src.x, y = src.y, z = src.z;
      EXPECT_NEAR(opc.range(p), std::sqrt(x * x + y * y + z * z), 1e-5 * opc.range(p));
      float min_r = INFINITY;
      for (auto i : owners) min_r = std::min(min_r, c.points[i].range());
      EXPECT_NEAR(opc.range(p), min_r, 1e-5 * min_r);
    }
    for (int s : seen) EXPECT_EQ(s, 1);
  }
}

TEST(Unproject, MatchesReprojectionLookup) {
  Rng rng(12);
  const auto cfg = sensor_hdl64(256);
  const auto c = test::random_cloud(rng, 8000);
  const auto opc = project(c, cfg);
  std::vector<std::uint8_t> pred(opc.pixels());
  for (auto& v : pred) v = static_cast<std::uint8_t>(rng.below(2));
  const auto mask = unproject_labels(opc, pred);
  ASSERT_EQ(mask.size(), c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto px = oracle_pixel(c.points[i].x, c.points[i].y, c.points[i].z, cfg);
    EXPECT_EQ(mask.labels[i], pred[px.v * cfg.width + px.u]);
  }
}

TEST(Unproject, UniformMapLabelsAllPointsAlike) {
  Rng rng(13);
  const auto c = test::random_cloud(rng, 1000);
  const auto opc = project(c, sensor_hdl64());
  const auto all_noise = unproject_labels(opc, std::vector<std::uint8_t>(opc.pixels(), kNoise));
  EXPECT_EQ(all_noise.count(kNoise), c.size());
  EXPECT_THROW(unproject_labels(opc, std::vector<std::uint8_t>(3, 0)), Error);
}

TEST(SensorConfig, PresetsAndValidation) {
  EXPECT_NEAR(sensor_hdl64().fov_total, deg2rad(64 * 0.44), 1e-12);
  EXPECT_NEAR(sensor_hdl32().fov_total / 32, deg2rad(1.25), 1e-12);
  SensorConfig bad;
  bad.fov_up = bad.fov_total * 2;
  EXPECT_THROW(bad.validate(), Error);
  // Row and column centers land on their own pixels.
  const auto cfg = sensor_hdl64();
  for (int v = 0; v < cfg.height; v += 7)
    for (int u = 0; u < cfg.width; u += 37) {
      const double el = cfg.row_elevation(v), az = cfg.column_azimuth(u);
      EXPECT_EQ(pixel_of(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el), cfg), (Pixel{u, v}));
    }
}

TEST(Project, PixelTargetsFollowWinningPoint) {
  PointCloud c;
  c.points = {{9, 0, 0, 0}, {5, 0, 0, 0}};
  const auto opc = project(c, square64());
  const auto targets = pixel_targets(opc, LabelMask{{kValid, kNoise}});
  int noise = 0, ignored = 0;
  for (int t : targets) {
    noise += t == kNoise;
    ignored += t == -1;
  }
  EXPECT_EQ(noise, 1);
  EXPECT_EQ(ignored, opc.pixels() - 1);
}
