#pragma once

// Optimization loop: Adam with decoupled weight decay, exponential learning-rate
// decay, paired-scan augmentation, best-validation checkpointing.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "denoise4d/error.hpp"
#include "denoise4d/loss_metrics.hpp"
#include "denoise4d/network.hpp"
#include "denoise4d/projection.hpp"
#include "denoise4d/random.hpp"
#include "denoise4d/scan_io.hpp"
#include "denoise4d/snowsim.hpp"
#include "denoise4d/tensor/checkpoint.hpp"

namespace denoise4d {

struct TrainConfig {
  double lr0 = 0.01;
  double lr_decay = 0.01;  // multiplicative, per epoch
  double l2_lambda = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double augment_prob = 0.5;
  int epochs = 100;
  int batch_size = 4;
  int crop_width = 128;  // training column window; 0 trains on full images
  int patience = 0;      // epochs without val improvement before stopping; 0 never stops early
  double target_iou = 0.0;  // stop once val IoU reaches this; 0 disables
  int frames_per_epoch = 0;  // 0 uses every training frame each epoch
  int max_val_frames = 0;    // 0 validates on every val frame
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr0 > 0.0)) throw Error(ErrorCode::InvalidConfig, "lr0 must be > 0");
    if (!(lr_decay >= 0.0 && lr_decay < 1.0)) throw Error(ErrorCode::InvalidConfig, "lr_decay must be in [0, 1)");
    if (!(l2_lambda >= 0.0)) throw Error(ErrorCode::InvalidConfig, "l2_lambda must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw Error(ErrorCode::InvalidConfig, "Adam betas must be in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw Error(ErrorCode::InvalidConfig, "adam_eps must be > 0");
    if (!(augment_prob >= 0.0 && augment_prob <= 1.0)) {
      throw Error(ErrorCode::InvalidConfig, "augment_prob must be in [0, 1]");
    }
    if (epochs < 1 || batch_size < 1) throw Error(ErrorCode::InvalidConfig, "epochs and batch_size must be >= 1");
    if (crop_width < 0 || patience < 0 || frames_per_epoch < 0 || max_val_frames < 0) {
      throw Error(ErrorCode::InvalidConfig, "crop_width, patience and frame limits must be >= 0");
    }
    if (!(target_iou >= 0.0 && target_iou <= 1.0)) throw Error(ErrorCode::InvalidConfig, "target_iou must be in [0, 1]");
  }
};

/// lr0 (1 - lr_decay)^epoch.
inline double lr_at(const TrainConfig& cfg, int epoch) {
  if (epoch < 0) throw Error(ErrorCode::OutOfRange, "negative epoch");
  return cfg.lr0 * std::pow(1.0 - cfg.lr_decay, epoch);
}

// ---------------------------------------------------------------- Adam

template <class T>
struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<T>> m, v;
};

/// One Adam update with bias correction over `params`, followed by decoupled
/// weight decay w -= lr * l2 * w (evaluated on the pre-step weight). Parameters
/// without a gradient buffer are treated as having zero gradient.
template <class T>
void adam_step(std::vector<nn::Tensor<T>*>& params, AdamState<T>& state, double lr, const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.emplace_back(p->numel(), T(0));
      state.v.emplace_back(p->numel(), T(0));
    }
  }
  if (state.m.size() != params.size()) throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match parameters");
  for (auto* p : params) {
    if (!p->has_grad()) continue;
    for (T g : p->grad())
      if (!std::isfinite(g)) throw Error(ErrorCode::NonFiniteGradient, "non-finite gradient");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->data();
    const bool has = params[i]->has_grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = has ? static_cast<double>(params[i]->grad()[j]) : 0.0;
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / bc1, vhat = vj / bc2;
      const double wj = w[j];
      w[j] = static_cast<T>(wj - lr * mhat / (std::sqrt(vhat) + cfg.adam_eps) - lr * cfg.l2_lambda * wj);
    }
  }
}

template <class T>
std::vector<nn::Tensor<T>*> parameter_ptrs(Denoiser<T>& net) {
  std::vector<nn::Tensor<T>*> out;
  for (auto& [name, t] : net.parameters()) out.push_back(&t);
  return out;
}

// ---------------------------------------------------------------- augmentation

struct AugmentPlan {
  bool drop = false, translate = false, rotate = false, flip = false;
  double drop_fraction = 0.0;
  double tx = 0.0, ty = 0.0;
  double angle = 0.0;

  bool identity() const { return !drop && !translate && !rotate && !flip; }
};

/// Each transform independently with probability p; magnitudes drawn only for
/// the chosen ones.
inline AugmentPlan sample_augment(Rng& rng, double p) {
  AugmentPlan a;
  a.drop = rng.bernoulli(p);
  if (a.drop) a.drop_fraction = rng.uniform(0.0, 0.3);
  a.translate = rng.bernoulli(p);
  if (a.translate) {
    a.tx = rng.uniform(-1.0, 1.0);
    a.ty = rng.uniform(-1.0, 1.0);
  }
  a.rotate = rng.bernoulli(p);
  if (a.rotate) a.angle = rng.uniform(-std::numbers::pi, std::numbers::pi);
  a.flip = rng.bernoulli(p);
  return a;
}

/// Rigid part of the plan: rotation about z, then mirror x -> -x, then translation.
inline PointCloud transform_cloud(const PointCloud& cloud, const AugmentPlan& a) {
  PointCloud out = cloud;
  const double c = std::cos(a.angle), s = std::sin(a.angle);
  for (auto& p : out.points) {
    double x = p.x, y = p.y;
    if (a.rotate) {
      const double xr = c * x - s * y;
      y = s * x + c * y;
      x = xr;
    }
    if (a.flip) x = -x;
    if (a.translate) {
      x += a.tx;
      y += a.ty;
    }
    p.x = static_cast<float>(x);
    p.y = static_cast<float>(y);
  }
  return out;
}

struct AugmentedPair {
  PointCloud current;
  PointCloud previous;
  LabelMask labels;
};

/// Applies one shared plan to both scans. Dropped points are chosen
/// independently per scan at the shared fraction; labels follow the current scan.
inline AugmentedPair augment(const PointCloud& current, const PointCloud& previous, const LabelMask& labels,
                             const AugmentPlan& a, Rng& rng) {
  if (labels.size() != current.size()) throw Error(ErrorCode::LengthMismatch, "labels do not match the scan");
  AugmentedPair out;
  if (a.drop) {
    out.current.frame_id = current.frame_id;
    for (std::size_t i = 0; i < current.size(); ++i) {
      if (rng.bernoulli(a.drop_fraction)) continue;
      out.current.points.push_back(current.points[i]);
      out.labels.labels.push_back(labels.labels[i]);
    }
    out.previous.frame_id = previous.frame_id;
    for (const auto& p : previous.points)
      if (!rng.bernoulli(a.drop_fraction)) out.previous.points.push_back(p);
  } else {
    out.current = current;
    out.previous = previous;
    out.labels = labels;
  }
  out.current = transform_cloud(out.current, a);
  out.previous = transform_cloud(out.previous, a);
  return out;
}

inline AugmentedPair augment(const PointCloud& current, const PointCloud& previous, const LabelMask& labels, Rng& rng,
                             double p = 0.5) {
  const auto plan = sample_augment(rng, p);
  return augment(current, previous, labels, plan, rng);
}

// ---------------------------------------------------------------- data

struct Frame {
  PointCloud cloud;
  LabelMask labels;
  const ManifestEntry* entry = nullptr;
  std::size_t previous = 0;  // index of the previous frame in the same split; itself at sequence start
};

/// Loads the frames of one split, sorted by (sequence, frame).
inline std::vector<Frame> load_split(const Manifest& m, Split split, std::size_t limit = 0) {
  auto entries = m.split(split);
  std::stable_sort(entries.begin(), entries.end(), [](const ManifestEntry* a, const ManifestEntry* b) {
    return std::pair(a->sequence, a->frame) < std::pair(b->sequence, b->frame);
  });
  if (limit > 0 && entries.size() > limit) {
    // Evenly spaced subset keeps every sequence represented.
    std::vector<const ManifestEntry*> picked;
    for (std::size_t i = 0; i < limit; ++i) picked.push_back(entries[i * entries.size() / limit]);
    entries = std::move(picked);
  }
  std::vector<Frame> frames;
  std::map<std::pair<int, int>, std::size_t> index;
  for (const auto* e : entries) {
    Frame f;
    f.cloud = read_scan(m.scan_file(*e));
    f.labels = read_labels(m.label_file(*e));
    if (f.labels.size() != f.cloud.size()) {
      throw Error(ErrorCode::MisalignedFrames, "label count differs from scan size for " + e->scan);
    }
    f.entry = e;
    index[{e->sequence, e->frame}] = frames.size();
    frames.push_back(std::move(f));
  }
  // Subsampled splits still pair with the true previous scan when it is loaded.
  std::map<std::pair<int, int>, const ManifestEntry*> all;
  for (const auto& e : m.entries) all[{e.sequence, e.frame}] = &e;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto* e = frames[i].entry;
    const auto it = index.find({e->sequence, e->frame - 1});
    frames[i].previous = it != index.end() ? it->second : i;
    if (it == index.end() && all.count({e->sequence, e->frame - 1})) {
      const auto* pe = all.at({e->sequence, e->frame - 1});
      Frame pf;
      pf.cloud = read_scan(m.scan_file(*pe));
      pf.labels = read_labels(m.label_file(*pe));
      pf.entry = pe;
      pf.previous = frames.size();
      frames[i].previous = frames.size();
      frames.push_back(std::move(pf));
    }
  }
  return frames;
}

// ---------------------------------------------------------------- sensor manifest

inline std::string sensor_manifest(const SensorConfig& s) {
  std::ostringstream os;
  os.precision(17);
  os << "sensor.height = " << s.height << "\n"
     << "sensor.width = " << s.width << "\n"
     << "sensor.fov_total = " << s.fov_total << "\n"
     << "sensor.fov_up = " << s.fov_up << "\n";
  return os.str();
}

/// Sensor block of a checkpoint manifest; nullopt when absent.
inline std::optional<SensorConfig> sensor_from_manifest(const std::string& manifest) {
  std::istringstream is(manifest);
  std::string line;
  SensorConfig s;
  int seen = 0;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    key.erase(key.find_last_not_of(" \t") + 1);
    value.erase(0, value.find_first_not_of(" \t"));
    if (key == "sensor.height") s.height = std::stoi(value), ++seen;
    else if (key == "sensor.width") s.width = std::stoi(value), ++seen;
    else if (key == "sensor.fov_total") s.fov_total = std::stod(value), ++seen;
    else if (key == "sensor.fov_up") s.fov_up = std::stod(value), ++seen;
  }
  if (seen == 0) return std::nullopt;
  s.validate();
  return s;
}

// ---------------------------------------------------------------- training

template <class T>
double train_step(Denoiser<T>& net, AdamState<T>& adam, const std::vector<const NetworkInput*>& batch,
                  std::span<const int> targets, double lr, const TrainConfig& cfg) {
  net.zero_grad();
  const auto loss = total_loss(net.forward(batch), targets);
  const double value = loss.item();
  if (!std::isfinite(value)) throw Error(ErrorCode::DivergenceDetected, "training loss is not finite");
  nn::backward(loss);
  auto params = parameter_ptrs(net);
  adam_step(params, adam, lr, cfg);
  return value;
}

struct FramePrediction {
  MaskedCloud masked;
  double loss = 0.0;  // total loss over the valid pixels
};

/// Eval-mode prediction for one scan pair.
template <class T>
FramePrediction predict(Denoiser<T>& net, const PointCloud& current, const PointCloud& previous,
                        const SensorConfig& sensor, const LabelMask* truth = nullptr) {
  nn::NoGradGuard guard;
  const bool was_training = net.training();
  net.eval();
  const bool intensity = net.config().in_channels == 5;
  const auto cur = project(current, sensor, intensity);
  const auto prev = project(previous, sensor, intensity);
  const auto probs = net.forward(prepare_input(cur, prev, net.config()));
  FramePrediction out;
  out.masked = mask_points(current, cur, probs);
  if (truth) {
    const auto targets = pixel_targets(cur, *truth);
    out.loss = total_loss(probs, std::span<const int>(targets)).item();
  }
  if (was_training) net.train();
  return out;
}

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_iou = 0.0;
};

inline std::string format_log(const std::vector<EpochLog>& log) {
  std::string out = "epoch,lr,train_loss,val_loss,val_iou\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g\n", e.epoch, e.lr, e.train_loss, e.val_loss, e.val_iou);
    out += buf;
  }
  return out;
}

struct FitResult {
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_val_iou = -1.0;
  nn::Checkpoint best;
};

struct ValidationResult {
  double loss = 0.0;
  Confusion confusion;
};

template <class T>
ValidationResult validate_frames(Denoiser<T>& net, const std::vector<Frame>& frames, std::size_t count,
                                 const SensorConfig& sensor) {
  ValidationResult r;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& f = frames[i];
    const auto p = predict(net, f.cloud, frames[f.previous].cloud, sensor, &f.labels);
    r.loss += p.loss;
    r.confusion += confusion(p.masked.mask, f.labels);
  }
  if (count > 0) r.loss /= static_cast<double>(count);
  return r;
}

/// Trains `net` on the train split and keeps the weights with the best
/// validation noise IoU. When `out_dir` is non-empty, writes train_log.csv and
/// best.ckpt there after every epoch.
template <class T>
FitResult fit(Denoiser<T>& net, const Manifest& manifest, const SensorConfig& sensor, const TrainConfig& cfg,
              const std::filesystem::path& out_dir = {}) {
  cfg.validate();
  sensor.validate();
  const int crop = cfg.crop_width == 0 || cfg.crop_width >= sensor.width ? sensor.width : cfg.crop_width;
  if (crop % net.config().downsample != 0) {
    throw Error(ErrorCode::InvalidConfig, "crop_width must be divisible by the downsample factor");
  }
  const auto train = load_split(manifest, Split::Train);
  const auto val = load_split(manifest, Split::Val, static_cast<std::size_t>(cfg.max_val_frames));
  // load_split appends out-of-split predecessors after the split's own frames.
  auto own = [](const std::vector<Frame>& frames, Split s) {
    std::size_t n = 0;
    while (n < frames.size() && frames[n].entry->split == s) ++n;
    return n;
  };
  const std::size_t n_train = own(train, Split::Train);
  const std::size_t n_val = own(val, Split::Val);
  if (n_train == 0) throw Error(ErrorCode::DatasetEmpty, "manifest has no training frames");
  if (n_val == 0) throw Error(ErrorCode::DatasetEmpty, "manifest has no validation frames");

  Rng rng(mix_seed(cfg.seed, 2));
  net.seed_dropout(mix_seed(cfg.seed, 3));
  AdamState<T> adam;
  FitResult result;
  int since_best = 0;
  const bool intensity = net.config().in_channels == 5;
  std::vector<std::size_t> order(n_train);
  for (std::size_t i = 0; i < n_train; ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    rng.shuffle(order.begin(), order.end());
    const std::size_t per_epoch =
        cfg.frames_per_epoch > 0 ? std::min<std::size_t>(cfg.frames_per_epoch, n_train) : n_train;
    net.train();
    double loss_sum = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < per_epoch; start += cfg.batch_size) {
      const std::size_t end = std::min<std::size_t>(start + cfg.batch_size, per_epoch);
      std::vector<NetworkInput> inputs;
      std::vector<int> targets;
      for (std::size_t b = start; b < end; ++b) {
        const auto& f = train[order[b]];
        const auto aug = augment(f.cloud, train[f.previous].cloud, f.labels, rng, cfg.augment_prob);
        const auto cur = project(aug.current, sensor, intensity);
        const auto prev = project(aug.previous, sensor, intensity);
        const auto full_targets = pixel_targets(cur, aug.labels);
        const int col0 = crop == sensor.width ? 0 : static_cast<int>(rng.below(sensor.width - crop + 1));
        auto in = prepare_input(cur, prev, net.config());
        inputs.push_back(crop == sensor.width ? std::move(in) : crop_input(in, col0, crop));
        for (int r = 0; r < sensor.height; ++r) {
          const auto row = full_targets.begin() + static_cast<std::ptrdiff_t>(r) * sensor.width + col0;
          targets.insert(targets.end(), row, row + crop);
        }
      }
      std::vector<const NetworkInput*> batch;
      for (const auto& in : inputs) batch.push_back(&in);
      loss_sum += train_step(net, adam, batch, targets, lr, cfg);
      ++steps;
    }

    const auto v = validate_frames(net, val, n_val, sensor);
    EpochLog e{epoch, lr, loss_sum / steps, v.loss, v.confusion.iou()};
    result.log.push_back(e);
    if (e.val_iou > result.best_val_iou) {
      result.best_val_iou = e.val_iou;
      result.best_epoch = epoch;
      result.best = net.state();
      result.best.manifest += sensor_manifest(sensor);
      since_best = 0;
      if (!out_dir.empty()) nn::save_checkpoint(result.best, out_dir / "best.ckpt");
    } else {
      ++since_best;
    }
    if (!out_dir.empty()) {
      const auto text = format_log(result.log);
      detail::write_all(out_dir / "train_log.csv", std::vector<char>(text.begin(), text.end()));
    }
    if (cfg.target_iou > 0.0 && e.val_iou >= cfg.target_iou) break;
    if (cfg.patience > 0 && since_best >= cfg.patience) break;
  }
  net.load_state(result.best);
  net.eval();
  return result;
}

}  // namespace denoise4d
