#include <gtest/gtest.h>

#include <set>

#include "denoise4d/snowsim.hpp"
#include "denoise4d/toy_scene.hpp"
#include "test_util.hpp"

using namespace denoise4d;

namespace {

ToySceneOptions tiny_scene() {
  ToySceneOptions o;
  o.sensor = sensor_hdl64(128);
  o.frames = 4;
  return o;
}

std::string slurp(const std::filesystem::path& p) {
  const auto bytes = detail::read_all(p);
  return {bytes.begin(), bytes.end()};
}

}  // namespace

TEST(Condition, TableBoundaries) {
  EXPECT_EQ(classify_condition(0.5), ConditionClass::Light);
  EXPECT_EQ(classify_condition(1.4999), ConditionClass::Light);
  EXPECT_EQ(classify_condition(1.5), ConditionClass::Medium);
  EXPECT_EQ(classify_condition(2.5), ConditionClass::Heavy);
  EXPECT_EQ(classify_condition(3.0), ConditionClass::Heavy);
  for (double bad : {0.49, 3.01, std::nan("")}) {
    try {
      classify_condition(bad);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::OutOfRange);
    }
  }
}

TEST(Condition, SubsetMatrix) {
  using C = ConditionClass;
  const std::vector<std::pair<std::string, std::array<bool, 3>>> table{
      {"all", {1, 1, 1}},     {"subset1", {1, 1, 0}}, {"subset2", {1, 0, 1}}, {"subset3", {0, 1, 1}},
      {"subset4", {0, 0, 1}}, {"subset5", {0, 1, 0}}, {"subset6", {1, 0, 0}},
  };
  for (const auto& [name, row] : table) {
    const auto& s = subset_by_name(name);
    EXPECT_EQ(s.includes(C::Light), row[0]) << name;
    EXPECT_EQ(s.includes(C::Medium), row[1]) << name;
    EXPECT_EQ(s.includes(C::Heavy), row[2]) << name;
  }
  EXPECT_THROW(subset_by_name("subset7"), Error);
}

TEST(Condition, SampledRatesStayInSubset) {
  Rng rng(51);
  for (const auto& s : training_subsets()) {
    for (int i = 0; i < 2000; ++i) {
      const double r = sample_rate(s, rng);
      EXPECT_TRUE(s.includes(classify_condition(r))) << s.name << " " << r;
    }
  }
}

TEST(InjectSnow, ZeroInterceptionIsIdentity) {
  Rng rng(52);
  const auto cloud = test::random_cloud(rng, 500);
  SnowModel model;
  model.c = 0.0;
  const auto out = inject_snow(cloud, {0.5, 1.0, 3}, model);
  EXPECT_EQ(out.cloud.points, cloud.points);
  EXPECT_EQ(out.labels.count(kNoise), 0u);
}

TEST(InjectSnow, DeterministicAndLabelsExact) {
  Rng rng(53);
  const auto cloud = test::random_cloud(rng, 2000, 1.0, 60.0);
  const SnowParams p{2.7, 1.3, 99};
  const auto a = inject_snow(cloud, p), b = inject_snow(cloud, p);
  EXPECT_EQ(a.cloud.points, b.cloud.points);
  EXPECT_EQ(a.labels, b.labels);
  ASSERT_EQ(a.cloud.size(), cloud.size());
  EXPECT_GT(a.labels.count(kNoise), 0u);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point& before = cloud.points[i];
    const Point& after = a.cloud.points[i];
    EXPECT_EQ(a.labels.labels[i] == kNoise, !(before == after)) << i;
    if (a.labels.labels[i] != kNoise) continue;
    const double r0 = before.range(), r1 = after.range();
    EXPECT_LE(r1, r0 * (1 + 1e-6));
    EXPECT_GE(r1, std::min(1.5, r0) * (1 - 1e-6));
    EXPECT_LE(after.intensity, 0.1f);
    // same beam: directions agree
    const double cosang = (before.x * after.x + before.y * after.y + before.z * after.z) / (r0 * r1);
    EXPECT_NEAR(cosang, 1.0, 1e-6);
  }
  const auto c = inject_snow(cloud, {2.7, 1.3, 100});
  EXPECT_NE(a.labels, c.labels);
}

TEST(InjectSnow, NoiseFractionGrowsWithRate) {
  Rng rng(54);
  const auto cloud = test::random_cloud(rng, 1000, 1.0, 50.0);
  double previous = -1;
  for (double rate : {0.5, 1.0, 1.5, 2.0, 2.5, 3.0}) {
    double frac = 0;
    for (int f = 0; f < 100; ++f) {
      frac += static_cast<double>(inject_snow(cloud, {rate, 1.5, mix_seed(7, f)}).labels.count(kNoise)) / cloud.size();
    }
    EXPECT_GT(frac, previous) << rate;
    previous = frac;
  }
}

TEST(InjectSnow, HitProbabilityMonotone) {
  for (double range : {0.5, 5.0, 30.0, 80.0}) {
    double last = -1;
    for (double rate = 0.5; rate <= 3.0; rate += 0.25) {
      const double p = hit_probability(rate, range);
      EXPECT_GE(p, last);
      last = p;
    }
  }
  EXPECT_NEAR(hit_probability(2.0, 20.0), 0.15 * 2.0 * (1 - std::exp(-1.0)), 1e-15);
}

TEST(InjectSnow, InvalidParams) {
  const PointCloud c;
  EXPECT_THROW(inject_snow(c, {0.4, 1.5, 0}), Error);
  EXPECT_THROW(inject_snow(c, {1.0, 2.5, 0}), Error);
  SnowModel m;
  m.lambda = 0;
  EXPECT_THROW(inject_snow(c, {1.0, 1.5, 0}, m), Error);
}

TEST(Splits, DefaultRatios) {
  EXPECT_EQ(split_counts(10, {}), (std::array<int, 3>{4, 1, 5}));
  EXPECT_EQ(split_counts(3, {}), (std::array<int, 3>{1, 1, 1}));
  EXPECT_EQ(split_counts(20, {}), (std::array<int, 3>{8, 2, 10}));
  try {
    split_counts(2, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientSequences);
  }
}

TEST(ToyScene, DeterministicAndPlausible) {
  const auto opt = tiny_scene();
  const ToyScene a(5, opt), b(5, opt);
  const auto s0 = a.scan(0, 1), s1 = b.scan(0, 1);
  EXPECT_EQ(s0.points, s1.points);
  EXPECT_GT(s0.size(), 64u * 128 / 2);
  std::size_t ground = 0;
  for (const auto& p : s0.points) {
    EXPECT_LE(p.range(), opt.max_range + 0.1);
    ground += std::fabs(p.z + 1.73f) < 0.05f;
  }
  EXPECT_GT(ground, s0.size() / 10);
  // the sensor moves between frames
  EXPECT_NE(a.scan(1, 1).points, s0.points);
}

TEST(Dataset, BuildSplitsAndManifest) {
  test::TempDir dir("dataset");
  const auto clean = dir.path() / "clean";
  write_toy_dataset(clean, 10, tiny_scene(), 3);
  DatasetOptions opt;
  opt.seed = 17;
  const auto m = build_dataset(clean, dir.path() / "snow", opt);
  EXPECT_EQ(m.entries.size(), 40u);
  std::map<Split, std::set<int>> seqs;
  for (const auto& e : m.entries) seqs[e.split].insert(e.sequence);
  EXPECT_EQ(seqs[Split::Train].size(), 4u);
  EXPECT_EQ(seqs[Split::Val].size(), 1u);
  EXPECT_EQ(seqs[Split::Test].size(), 5u);
  for (auto a : {Split::Train, Split::Val, Split::Test})
    for (auto b : {Split::Train, Split::Val, Split::Test})
      if (a != b)
        for (int s : seqs[a]) EXPECT_FALSE(seqs[b].count(s));

  const auto back = read_manifest(dir.path() / "snow" / kManifestName);
  ASSERT_EQ(back.entries.size(), m.entries.size());
  EXPECT_EQ(back.seed, 17u);
  EXPECT_EQ(back.subset, "all");
  EXPECT_EQ(back.model, m.model);
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = back.entries[i];
    EXPECT_EQ(e.scan, m.entries[i].scan);
    EXPECT_EQ(e.rate, m.entries[i].rate);
    EXPECT_EQ(e.condition, classify_condition(e.rate));
    const auto scan = read_scan(back.scan_file(e));
    const auto labels = read_labels(back.label_file(e));
    EXPECT_EQ(scan.size(), labels.size());
    // labels come from the injector with the recorded seed
    const auto clean_scan = read_scan(scan_path(clean, e.sequence, e.frame));
    const auto redo = inject_snow(clean_scan, {e.rate, e.velocity, e.seed});
    EXPECT_EQ(redo.labels, labels);
  }

  // same seed, same bytes
  build_dataset(clean, dir.path() / "snow2", opt);
  EXPECT_EQ(slurp(dir.path() / "snow" / kManifestName), slurp(dir.path() / "snow2" / kManifestName));
  EXPECT_EQ(slurp(dir.path() / "snow" / back.entries[5].label), slurp(dir.path() / "snow2" / back.entries[5].label));
}

TEST(Dataset, Subset4IsHeavyOnly) {
  test::TempDir dir("subset");
  const auto clean = dir.path() / "clean";
  write_toy_dataset(clean, 3, tiny_scene(), 4);
  DatasetOptions opt;
  opt.subset = "subset4";
  const auto m = build_dataset(clean, dir.path() / "snow", opt);
  for (const auto& e : m.entries) EXPECT_EQ(e.condition, ConditionClass::Heavy);
}

TEST(Dataset, TooFewSequences) {
  test::TempDir dir("few");
  write_toy_dataset(dir.path() / "clean", 2, tiny_scene(), 4);
  try {
    build_dataset(dir.path() / "clean", dir.path() / "snow", {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientSequences);
  }
}

TEST(Dataset, MalformedManifest) {
  test::TempDir dir("bad");
  const auto p = dir.path() / "m.tsv";
  const std::string text = "split\tsequence\tframe\tscan\tlabel\trate\tclass\tvelocity\tseed\ntrain\t0\t0\ta\tb\t1.0\n";
  detail::write_all(p, std::vector<char>(text.begin(), text.end()));
  EXPECT_THROW(read_manifest(p), Error);
  EXPECT_THROW(read_manifest(dir.path() / "missing.tsv"), Error);
}
