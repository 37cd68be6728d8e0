#pragma once

// Stochastic snowfall injection with exact labels, condition classes, the
// training subsets and the sequence-level dataset builder.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "denoise4d/error.hpp"
#include "denoise4d/random.hpp"
#include "denoise4d/scan_io.hpp"

namespace denoise4d {

/// Injection constants shared by every frame.
struct SnowModel {
  double c = 0.15;             // interception scale per unit rate
  double lambda = 20.0;        // m, range saturation length
  double r_min = 1.5;          // m, nearest scatter return
  double intensity_max = 0.1;  // scatter returns are dim

  void validate() const {
    if (!(c >= 0.0) || !(lambda > 0.0) || !(r_min > 0.0) || !(intensity_max >= 0.0)) {
      throw Error(ErrorCode::InvalidParams, "snow model constants must be non-negative (lambda, r_min > 0)");
    }
  }

  friend bool operator==(const SnowModel&, const SnowModel&) = default;
};

struct SnowParams {
  double snowfall_rate = 1.0;      // [0.5, 3.0]
  double terminal_velocity = 1.5;  // m/s, [1.0, 2.0]
  std::uint64_t seed = 0;

  void validate() const {
    if (!(snowfall_rate >= 0.5 && snowfall_rate <= 3.0)) {
      throw Error(ErrorCode::InvalidParams, "snowfall rate must lie in [0.5, 3.0]");
    }
    if (!(terminal_velocity >= 1.0 && terminal_velocity <= 2.0)) {
      throw Error(ErrorCode::InvalidParams, "terminal velocity must lie in [1.0, 2.0]");
    }
  }
};

enum class ConditionClass { Light = 0, Medium = 1, Heavy = 2 };

inline const char* to_string(ConditionClass c) {
  switch (c) {
    case ConditionClass::Light: return "light";
    case ConditionClass::Medium: return "medium";
    case ConditionClass::Heavy: return "heavy";
  }
  return "?";
}

inline ConditionClass condition_from_string(const std::string& s) {
  if (s == "light") return ConditionClass::Light;
  if (s == "medium") return ConditionClass::Medium;
  if (s == "heavy") return ConditionClass::Heavy;
  throw Error(ErrorCode::InvalidConfig, "unknown condition class '" + s + "'");
}

/// Light [0.5, 1.5), Medium [1.5, 2.5), Heavy [2.5, 3.0].
inline ConditionClass classify_condition(double rate) {
  if (!(rate >= 0.5 && rate <= 3.0)) throw Error(ErrorCode::OutOfRange, "snowfall rate outside [0.5, 3.0]");
  if (rate < 1.5) return ConditionClass::Light;
  if (rate < 2.5) return ConditionClass::Medium;
  return ConditionClass::Heavy;
}

/// Rate interval of a class as [lo, hi].
inline std::array<double, 2> rate_interval(ConditionClass c) {
  switch (c) {
    case ConditionClass::Light: return {0.5, 1.5};
    case ConditionClass::Medium: return {1.5, 2.5};
    case ConditionClass::Heavy: return {2.5, 3.0};
  }
  return {0.5, 3.0};
}

struct SubsetSpec {
  std::string name;
  std::array<bool, 3> classes{};  // light, medium, heavy

  bool includes(ConditionClass c) const { return classes[static_cast<int>(c)]; }
};

inline const std::vector<SubsetSpec>& training_subsets() {
  static const std::vector<SubsetSpec> subsets{
      {"all", {true, true, true}},      {"subset1", {true, true, false}}, {"subset2", {true, false, true}},
      {"subset3", {false, true, true}}, {"subset4", {false, false, true}}, {"subset5", {false, true, false}},
      {"subset6", {true, false, false}},
  };
  return subsets;
}

inline const SubsetSpec& subset_by_name(const std::string& name) {
  for (const auto& s : training_subsets())
    if (s.name == name) return s;
  throw Error(ErrorCode::InvalidConfig, "unknown subset '" + name + "'");
}

/// Uniform draw over the union of the subset's rate intervals.
inline double sample_rate(const SubsetSpec& subset, Rng& rng) {
  double total = 0;
  for (int c = 0; c < 3; ++c)
    if (subset.classes[c]) {
      const auto [lo, hi] = rate_interval(static_cast<ConditionClass>(c));
      total += hi - lo;
    }
  if (total <= 0) throw Error(ErrorCode::InvalidConfig, "subset '" + subset.name + "' has no classes");
  double u = rng.uniform() * total;
  for (int c = 0; c < 3; ++c) {
    if (!subset.classes[c]) continue;
    const auto [lo, hi] = rate_interval(static_cast<ConditionClass>(c));
    if (u < hi - lo) return lo + u;
    u -= hi - lo;
  }
  // u landed on the closed upper end through rounding
  for (int c = 2; c >= 0; --c)
    if (subset.classes[c]) return rate_interval(static_cast<ConditionClass>(c))[1];
  return 3.0;
}

/// Interception probability of a beam with the given clear-weather range.
inline double hit_probability(double rate, double range, const SnowModel& model = {}) {
  return std::clamp(model.c * rate * (1.0 - std::exp(-range / model.lambda)), 0.0, 1.0);
}

struct SnowyScan {
  PointCloud cloud;
  LabelMask labels;
};

/// Replaces intercepted returns by scatter returns on the same beam.
inline SnowyScan inject_snow(const PointCloud& clean, const SnowParams& params, const SnowModel& model = {}) {
  params.validate();
  model.validate();
  Rng rng(params.seed);
  SnowyScan out;
  out.cloud.frame_id = clean.frame_id;
  out.cloud.points.reserve(clean.size());
  out.labels.labels.assign(clean.size(), kValid);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const Point& p = clean.points[i];
    const double r = p.range();
    const double u = rng.uniform();
    if (!(r > 0.0) || u >= hit_probability(params.snowfall_rate, r, model)) {
      out.cloud.points.push_back(p);
      continue;
    }
    const double r_new = rng.uniform(std::min(model.r_min, r), r);
    const double s = r_new / r;
    const float intensity = static_cast<float>(rng.uniform(0.0, model.intensity_max));
    out.cloud.points.push_back({static_cast<float>(p.x * s), static_cast<float>(p.y * s), static_cast<float>(p.z * s),
                                intensity});
    out.labels.labels[i] = kNoise;
  }
  return out;
}

// ---------------------------------------------------------------- dataset

enum class Split { Train = 0, Val = 1, Test = 2 };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw Error(ErrorCode::InvalidConfig, "unknown split '" + s + "'");
}

struct SplitRatios {
  double train = 0.4;
  double val = 0.1;
  double test = 0.5;
};

/// Sequence counts per split: nearest-integer train and val shares, each split
/// holding at least one sequence; test takes the remainder.
inline std::array<int, 3> split_counts(int sequences, const SplitRatios& r) {
  if (sequences < 3) {
    throw Error(ErrorCode::InsufficientSequences, "need >= 3 sequences, found " + std::to_string(sequences));
  }
  if (!(r.train > 0 && r.val > 0 && r.test > 0)) throw Error(ErrorCode::InvalidConfig, "split ratios must be > 0");
  const double total = r.train + r.val + r.test;
  int train = std::max(1, static_cast<int>(std::lround(sequences * r.train / total)));
  int val = std::max(1, static_cast<int>(std::lround(sequences * r.val / total)));
  while (train + val > sequences - 1) (train > val ? train : val)--;
  return {train, val, sequences - train - val};
}

struct ManifestEntry {
  Split split = Split::Train;
  int sequence = 0;
  int frame = 0;
  std::string scan;   // relative to the manifest root
  std::string label;  // relative to the manifest root
  double rate = 0.0;
  ConditionClass condition = ConditionClass::Light;
  double velocity = 0.0;
  std::uint64_t seed = 0;
};

struct Manifest {
  std::filesystem::path root;  // directory holding the manifest
  std::string subset = "all";
  std::uint64_t seed = 0;
  SnowModel model;
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> split(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(&e);
    return out;
  }

  std::filesystem::path scan_file(const ManifestEntry& e) const { return root / e.scan; }
  std::filesystem::path label_file(const ManifestEntry& e) const { return root / e.label; }
};

inline constexpr const char* kManifestName = "manifest.tsv";

inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ostringstream os;
  os.precision(17);
  os << "# denoise4d-manifest v1\n"
     << "# subset=" << m.subset << " seed=" << m.seed << " c=" << m.model.c << " lambda=" << m.model.lambda
     << " r_min=" << m.model.r_min << " intensity_max=" << m.model.intensity_max << "\n"
     << "split\tsequence\tframe\tscan\tlabel\trate\tclass\tvelocity\tseed\n";
  for (const auto& e : m.entries) {
    os << to_string(e.split) << '\t' << e.sequence << '\t' << e.frame << '\t' << e.scan << '\t' << e.label << '\t'
       << e.rate << '\t' << to_string(e.condition) << '\t' << e.velocity << '\t' << e.seed << '\n';
  }
  const auto text = os.str();
  detail::write_all(path, std::vector<char>(text.begin(), text.end()));
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::NotFound, "cannot open manifest " + path.string());
  Manifest m;
  m.root = path.parent_path();
  std::string line;
  int line_no = 0;
  auto bad = [&](const std::string& why) {
    return Error(ErrorCode::InvalidConfig, path.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ks(line.substr(1));
      std::string kv;
      while (ks >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const auto key = kv.substr(0, eq), value = kv.substr(eq + 1);
        if (key == "subset") m.subset = value;
        else if (key == "seed") m.seed = std::stoull(value);
        else if (key == "c") m.model.c = std::stod(value);
        else if (key == "lambda") m.model.lambda = std::stod(value);
        else if (key == "r_min") m.model.r_min = std::stod(value);
        else if (key == "intensity_max") m.model.intensity_max = std::stod(value);
      }
      continue;
    }
    if (!header) {
      if (line.rfind("split\t", 0) != 0) throw bad("missing column header");
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, '\t')) f.push_back(cell);
    if (f.size() != 9) throw bad("expected 9 tab-separated fields");
    try {
      ManifestEntry e;
      e.split = split_from_string(f[0]);
      e.sequence = std::stoi(f[1]);
      e.frame = std::stoi(f[2]);
      e.scan = f[3];
      e.label = f[4];
      e.rate = std::stod(f[5]);
      e.condition = condition_from_string(f[6]);
      e.velocity = std::stod(f[7]);
      e.seed = std::stoull(f[8]);
      m.entries.push_back(std::move(e));
    } catch (const std::logic_error&) {
      throw bad("malformed field");
    }
  }
  if (!header) throw bad("empty manifest");
  return m;
}

struct DatasetOptions {
  SplitRatios ratios;
  std::string subset = "all";
  std::uint64_t seed = 0;
  SnowModel model;
};

/// Injects snow into every frame of a clean KITTI-layout tree and writes the
/// snowy scans, labels and manifest under `out`. Sequences are assigned to
/// train/val/test in sorted id order.
inline Manifest build_dataset(const std::filesystem::path& clean_root, const std::filesystem::path& out,
                              const DatasetOptions& opt) {
  const SubsetSpec& subset = subset_by_name(opt.subset);
  opt.model.validate();
  const auto sequences = list_sequences(clean_root);
  const auto counts = split_counts(static_cast<int>(sequences.size()), opt.ratios);
  Manifest m;
  m.root = out;
  m.subset = subset.name;
  m.seed = opt.seed;
  m.model = opt.model;
  for (std::size_t si = 0; si < sequences.size(); ++si) {
    const int seq = sequences[si];
    const Split split = static_cast<int>(si) < counts[0]                ? Split::Train
                        : static_cast<int>(si) < counts[0] + counts[1] ? Split::Val
                                                                        : Split::Test;
    for (int frame : list_frames(clean_root, seq)) {
      const std::uint64_t frame_seed = mix_seed(opt.seed, static_cast<std::uint64_t>(seq), static_cast<std::uint64_t>(frame));
      Rng rng(frame_seed);
      SnowParams params;
      params.snowfall_rate = sample_rate(subset, rng);
      params.terminal_velocity = rng.uniform(1.0, 2.0);
      params.seed = mix_seed(frame_seed, 1);
      auto clean = read_scan(scan_path(clean_root, seq, frame));
      const auto snowy = inject_snow(clean, params, opt.model);
      const auto scan_file = scan_path(out, seq, frame);
      const auto label_file = label_path(out, seq, frame);
      write_scan(snowy.cloud, scan_file);
      write_labels(snowy.labels, label_file);
      ManifestEntry e;
      e.split = split;
      e.sequence = seq;
      e.frame = frame;
      e.scan = std::filesystem::relative(scan_file, out).generic_string();
      e.label = std::filesystem::relative(label_file, out).generic_string();
      e.rate = params.snowfall_rate;
      e.condition = classify_condition(params.snowfall_rate);
      e.velocity = params.terminal_velocity;
      e.seed = params.seed;
      m.entries.push_back(std::move(e));
    }
  }
  write_manifest(m, out / kManifestName);
  return m;
}

}  // namespace denoise4d
