#pragma once

// Run configuration: a flat key = value file with command-line overrides. Every
// known key has a default, so the serialized form is a complete snapshot.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "denoise4d/baselines.hpp"
#include "denoise4d/error.hpp"
#include "denoise4d/network.hpp"
#include "denoise4d/projection.hpp"
#include "denoise4d/snowsim.hpp"
#include "denoise4d/trainer.hpp"

namespace denoise4d {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

template <class V>
std::string to_text(const V& v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

class RunConfig {
 public:
  RunConfig() {
    const NetworkConfig net;
    const TrainConfig train;
    const SnowModel snow;
    const FilterParams f;
    const SplitRatios ratios;
    using detail::to_text;
    values_ = {
        {"sensor.preset", "hdl64"},
        {"sensor.width", "512"},
        {"network.in_channels", to_text(net.in_channels)},
        {"network.knn_k", to_text(net.knn.k)},
        {"network.knn_half_rows", to_text(net.knn.half_rows)},
        {"network.knn_half_cols", to_text(net.knn.half_cols)},
        {"network.base_width", to_text(net.base_width)},
        {"network.bottleneck_width", to_text(net.bottleneck_width)},
        {"network.downsample", to_text(net.downsample)},
        {"network.dropout", to_text(net.dropout)},
        {"network.input_scale", to_text(net.input_scale)},
        {"network.front", to_string(net.front)},
        {"network.temporal", net.temporal ? "true" : "false"},
        {"train.lr0", to_text(train.lr0)},
        {"train.lr_decay", to_text(train.lr_decay)},
        {"train.l2_lambda", to_text(train.l2_lambda)},
        {"train.beta1", to_text(train.beta1)},
        {"train.beta2", to_text(train.beta2)},
        {"train.adam_eps", to_text(train.adam_eps)},
        {"train.augment_prob", to_text(train.augment_prob)},
        {"train.epochs", to_text(train.epochs)},
        {"train.batch_size", to_text(train.batch_size)},
        {"train.crop_width", to_text(train.crop_width)},
        {"train.patience", to_text(train.patience)},
        {"train.target_iou", to_text(train.target_iou)},
        {"train.frames_per_epoch", to_text(train.frames_per_epoch)},
        {"train.max_val_frames", to_text(train.max_val_frames)},
        {"train.seed", to_text(train.seed)},
        {"snow.c", to_text(snow.c)},
        {"snow.lambda", to_text(snow.lambda)},
        {"snow.r_min", to_text(snow.r_min)},
        {"snow.intensity_max", to_text(snow.intensity_max)},
        {"split.train", to_text(ratios.train)},
        {"split.val", to_text(ratios.val)},
        {"split.test", to_text(ratios.test)},
        {"filter.ror.radius", to_text(f.ror.radius)},
        {"filter.sor.k", to_text(f.sor.k)},
        {"filter.sor.mult", to_text(f.sor.mult)},
        {"filter.dror.alpha_res", to_text(f.dror.alpha_res)},
        {"filter.dror.beta", to_text(f.dror.beta)},
        {"filter.dror.r_min", to_text(f.dror.r_min)},
        {"filter.dror.k_min", to_text(f.dror.k_min)},
        {"filter.dsor.k", to_text(f.dsor.k)},
        {"filter.dsor.mult", to_text(f.dsor.mult)},
        {"filter.dsor.range_scale", to_text(f.dsor.range_scale)},
        {"filter.lior.a", to_text(f.lior.a)},
        {"filter.lior.b", to_text(f.lior.b)},
        {"filter.lior.r_ror", to_text(f.lior.r_ror)},
    };
  }

  /// Applies `key = value` lines; '#' starts a comment.
  void merge_text(const std::string& text, const std::string& origin = "config") {
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw Error(ErrorCode::InvalidConfig, origin + ":" + std::to_string(lineno) + ": expected key = value");
      }
      set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
  }

  void merge_file(const std::filesystem::path& path) {
    const auto bytes = detail::read_all(path);
    merge_text(std::string(bytes.begin(), bytes.end()), path.string());
  }

  /// `key=value` override.
  void apply_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidConfig, "override '" + kv + "' is not key=value");
    set(detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
    it->second = value;
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
    return it->second;
  }

  double number(const std::string& key) const {
    const auto& v = get(key);
    std::size_t used = 0;
    double d = 0;
    try {
      d = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty()) throw Error(ErrorCode::InvalidConfig, key + ": '" + v + "' is not a number");
    return d;
  }

  int integer(const std::string& key) const {
    const double d = number(key);
    if (d != static_cast<double>(static_cast<long long>(d))) {
      throw Error(ErrorCode::InvalidConfig, key + ": '" + get(key) + "' is not an integer");
    }
    return static_cast<int>(d);
  }

  std::uint64_t unsigned_integer(const std::string& key) const {
    const auto& v = get(key);
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
      throw Error(ErrorCode::InvalidConfig, key + ": '" + v + "' is not an unsigned integer");
    }
    return std::stoull(v);
  }

  bool boolean(const std::string& key) const {
    const auto& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw Error(ErrorCode::InvalidConfig, key + ": '" + v + "' is not a boolean");
  }

  /// Sorted, complete key = value listing.
  std::string serialize() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  SensorConfig sensor() const {
    auto s = sensor_preset(get("sensor.preset"), integer("sensor.width"));
    s.validate();
    return s;
  }

  NetworkConfig network() const {
    NetworkConfig n;
    n.in_channels = integer("network.in_channels");
    n.knn.k = integer("network.knn_k");
    n.knn.half_rows = integer("network.knn_half_rows");
    n.knn.half_cols = integer("network.knn_half_cols");
    n.base_width = integer("network.base_width");
    n.bottleneck_width = integer("network.bottleneck_width");
    n.downsample = integer("network.downsample");
    n.dropout = number("network.dropout");
    n.input_scale = number("network.input_scale");
    n.front = front_end_from_string(get("network.front"));
    n.temporal = boolean("network.temporal");
    n.validate();
    return n;
  }

  TrainConfig train() const {
    TrainConfig t;
    t.lr0 = number("train.lr0");
    t.lr_decay = number("train.lr_decay");
    t.l2_lambda = number("train.l2_lambda");
    t.beta1 = number("train.beta1");
    t.beta2 = number("train.beta2");
    t.adam_eps = number("train.adam_eps");
    t.augment_prob = number("train.augment_prob");
    t.epochs = integer("train.epochs");
    t.batch_size = integer("train.batch_size");
    t.crop_width = integer("train.crop_width");
    t.patience = integer("train.patience");
    t.target_iou = number("train.target_iou");
    t.frames_per_epoch = integer("train.frames_per_epoch");
    t.max_val_frames = integer("train.max_val_frames");
    t.seed = unsigned_integer("train.seed");
    t.validate();
    return t;
  }

  SnowModel snow() const {
    SnowModel m;
    m.c = number("snow.c");
    m.lambda = number("snow.lambda");
    m.r_min = number("snow.r_min");
    m.intensity_max = number("snow.intensity_max");
    m.validate();
    return m;
  }

  SplitRatios splits() const { return {number("split.train"), number("split.val"), number("split.test")}; }

  FilterParams filters() const {
    FilterParams f;
    f.ror.radius = number("filter.ror.radius");
    f.sor.k = integer("filter.sor.k");
    f.sor.mult = number("filter.sor.mult");
    f.dror.alpha_res = number("filter.dror.alpha_res");
    f.dror.beta = number("filter.dror.beta");
    f.dror.r_min = number("filter.dror.r_min");
    f.dror.k_min = integer("filter.dror.k_min");
    f.dsor.k = integer("filter.dsor.k");
    f.dsor.mult = number("filter.dsor.mult");
    f.dsor.range_scale = number("filter.dsor.range_scale");
    f.lior.a = number("filter.lior.a");
    f.lior.b = number("filter.lior.b");
    f.lior.r_ror = number("filter.lior.r_ror");
    return f;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace denoise4d
