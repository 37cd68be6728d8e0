#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "denoise4d/scan_io.hpp"
#include "test_util.hpp"

using namespace denoise4d;

namespace {

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> le_float(float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  return {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8), static_cast<unsigned char>(u >> 16),
          static_cast<unsigned char>(u >> 24)};
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::InvalidConfig;
}

}  // namespace

TEST(ScanIo, EmptyFileIsEmptyCloud) {
  test::TempDir dir("scan");
  write_bytes(dir.path() / "a.bin", {});
  EXPECT_EQ(read_scan(dir.path() / "a.bin").size(), 0u);
}

TEST(ScanIo, HandEncodedRecord) {
  test::TempDir dir("scan");
  std::vector<unsigned char> bytes;
  for (float f : {1.0f, 2.0f, 3.0f, 0.5f}) {
    const auto b = le_float(f);
    bytes.insert(bytes.end(), b.begin(), b.end());
  }
  // 1.0f is 0x3F800000, little endian on disk.
  EXPECT_EQ(bytes[0], 0x00);
  EXPECT_EQ(bytes[3], 0x3F);
  write_bytes(dir.path() / "a.bin", bytes);
  const auto cloud = read_scan(dir.path() / "a.bin");
  ASSERT_EQ(cloud.size(), 1u);
  EXPECT_EQ(cloud.points[0], (Point{1.0f, 2.0f, 3.0f, 0.5f}));
}

TEST(ScanIo, ErrorPaths) {
  test::TempDir dir("scan");
  write_bytes(dir.path() / "bad.bin", std::vector<unsigned char>(17, 0));
  EXPECT_EQ(code_of([&] { read_scan(dir.path() / "bad.bin"); }), ErrorCode::MalformedLength);
  EXPECT_EQ(code_of([&] { read_scan(dir.path() / "missing.bin"); }), ErrorCode::NotFound);

  std::vector<unsigned char> bytes;
  for (float f : {1.0f, NAN, 3.0f, 0.5f}) {
    const auto b = le_float(f);
    bytes.insert(bytes.end(), b.begin(), b.end());
  }
  write_bytes(dir.path() / "nan.bin", bytes);
  EXPECT_EQ(code_of([&] { read_scan(dir.path() / "nan.bin"); }), ErrorCode::NonFiniteValue);

  write_bytes(dir.path() / "bad.label", std::vector<unsigned char>(6, 0));
  EXPECT_EQ(code_of([&] { read_labels(dir.path() / "bad.label"); }), ErrorCode::MalformedLength);
  write_bytes(dir.path() / "two.label", {2, 0, 0, 0});
  EXPECT_EQ(code_of([&] { read_labels(dir.path() / "two.label"); }), ErrorCode::UnknownClassId);
}

TEST(ScanIo, FileSizes) {
  test::TempDir dir("scan");
  write_scan(PointCloud{}, dir.path() / "zero.bin");
  EXPECT_EQ(std::filesystem::file_size(dir.path() / "zero.bin"), 0u);
  PointCloud two;
  two.points = {{1, 2, 3, 0.1f}, {4, 5, 6, 0.2f}};
  write_scan(two, dir.path() / "two.bin");
  EXPECT_EQ(std::filesystem::file_size(dir.path() / "two.bin"), 32u);
}

TEST(ScanIo, LabelsHandEncodedAndRoundTrip) {
  test::TempDir dir("labels");
  write_bytes(dir.path() / "one.label", {1, 0, 0, 0});
  EXPECT_EQ(read_labels(dir.path() / "one.label").labels, std::vector<std::uint8_t>{kNoise});

  LabelMask m{{0, 1, 1, 0}};
  write_labels(m, dir.path() / "m.label");
  EXPECT_EQ(std::filesystem::file_size(dir.path() / "m.label"), 16u);
  EXPECT_EQ(read_labels(dir.path() / "m.label"), m);
}

TEST(ScanIo, RemapTable) {
  test::TempDir dir("labels");
  write_bytes(dir.path() / "foreign.label", {110, 0, 0, 0, 40, 0, 0, 0});
  const LabelRemap remap{{110, kNoise}, {40, kValid}};
  EXPECT_EQ(read_labels(dir.path() / "foreign.label", remap).labels, (std::vector<std::uint8_t>{kNoise, kValid}));
  EXPECT_EQ(code_of([&] { read_labels(dir.path() / "foreign.label", LabelRemap{{110, kNoise}}); }),
            ErrorCode::UnknownClassId);
}

// Property: arbitrary finite clouds and masks survive a write/read cycle bit-exactly.
TEST(ScanIo, RoundTripProperty) {
  test::TempDir dir("roundtrip");
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = rng.below(300);
    PointCloud c;
    LabelMask m;
    for (std::size_t i = 0; i < n; ++i) {
      // Raw bit patterns, rejecting non-finite ones, cover denormals and signed zeros.
      auto finite = [&] {
        float f;
        do {
          const auto bits = static_cast<std::uint32_t>(rng.next());
          std::memcpy(&f, &bits, 4);
        } while (!std::isfinite(f));
        return f;
      };
      c.points.push_back({finite(), finite(), finite(), static_cast<float>(rng.uniform())});
      m.labels.push_back(static_cast<std::uint8_t>(rng.below(2)));
    }
    write_scan(c, dir.path() / "c.bin");
    write_labels(m, dir.path() / "m.label");
    const auto back = read_scan(dir.path() / "c.bin");
    ASSERT_EQ(back.size(), c.size());
    EXPECT_EQ(std::memcmp(back.points.data(), c.points.data(), n * sizeof(Point)), 0);
    EXPECT_EQ(std::filesystem::file_size(dir.path() / "c.bin"), 16 * n);
    EXPECT_EQ(read_labels(dir.path() / "m.label"), m);
  }
}

TEST(ScanIo, DatasetLayout) {
  test::TempDir dir("layout");
  write_scan(PointCloud{}, scan_path(dir.path(), 3, 12));
  write_scan(PointCloud{}, scan_path(dir.path(), 3, 2));
  write_scan(PointCloud{}, scan_path(dir.path(), 10, 0));
  EXPECT_EQ(scan_path(dir.path(), 3, 12), dir.path() / "sequences/03/velodyne/000012.bin");
  EXPECT_EQ(label_path(dir.path(), 3, 12), dir.path() / "sequences/03/labels/000012.label");
  EXPECT_EQ(list_sequences(dir.path()), (std::vector<int>{3, 10}));
  EXPECT_EQ(list_frames(dir.path(), 3), (std::vector<int>{2, 12}));
}
