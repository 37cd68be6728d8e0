#pragma once

// Two-branch range-image denoiser: spatial and temporal kNN convolutions,
// residual encoders, motion-guided attention fusion, pixel-shuffle decoder with
// a full-resolution spatial skip, and a softmax head.

#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "denoise4d/error.hpp"
#include "denoise4d/knn.hpp"
#include "denoise4d/projection.hpp"
#include "denoise4d/random.hpp"
#include "denoise4d/scan_io.hpp"
#include "denoise4d/tensor/checkpoint.hpp"
#include "denoise4d/tensor/ops.hpp"
#include "denoise4d/tensor/tensor.hpp"

namespace denoise4d {

enum class FrontEnd { Knn, Conv2d };

inline const char* to_string(FrontEnd f) { return f == FrontEnd::Knn ? "knn" : "conv2d"; }

inline FrontEnd front_end_from_string(const std::string& s) {
  if (s == "knn") return FrontEnd::Knn;
  if (s == "conv2d") return FrontEnd::Conv2d;
  throw Error(ErrorCode::InvalidConfig, "unknown front end '" + s + "'");
}

struct NetworkConfig {
  int in_channels = 4;  // (r, x, y, z); 5 adds intensity
  KnnConfig knn{};
  int base_width = 32;
  int bottleneck_width = 160;  // fused half-resolution block; divisible by downsample^2
  int num_classes = 2;
  int downsample = 2;
  double dropout = 0.2;
  double input_scale = 10.0;  // metres per unit for metric input channels
  FrontEnd front = FrontEnd::Knn;
  bool temporal = true;

  void validate() const {
    knn.validate();
    if (in_channels != 4 && in_channels != 5) throw Error(ErrorCode::InvalidConfig, "in_channels must be 4 or 5");
    if (num_classes < 2) throw Error(ErrorCode::InvalidConfig, "num_classes must be >= 2");
    if (base_width < 8) throw Error(ErrorCode::InvalidConfig, "base_width must be >= 8");
    if (downsample < 1) throw Error(ErrorCode::InvalidConfig, "downsample must be >= 1");
    if (bottleneck_width < 1 || bottleneck_width % (downsample * downsample) != 0) {
      throw Error(ErrorCode::InvalidConfig, "bottleneck_width must be a positive multiple of downsample^2");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorCode::InvalidConfig, "dropout must be in [0, 1)");
    if (!(input_scale > 0.0)) throw Error(ErrorCode::InvalidConfig, "input_scale must be > 0");
  }

  int encoder_width() const { return 2 * base_width; }
  int shuffled_width() const { return bottleneck_width / (downsample * downsample); }
  int decoder_in() const { return shuffled_width() + base_width; }

  std::string serialize() const {
    std::ostringstream os;
    os.precision(17);
    os << "network.in_channels = " << in_channels << "\n"
       << "network.knn_k = " << knn.k << "\n"
       << "network.knn_half_rows = " << knn.half_rows << "\n"
       << "network.knn_half_cols = " << knn.half_cols << "\n"
       << "network.base_width = " << base_width << "\n"
       << "network.bottleneck_width = " << bottleneck_width << "\n"
       << "network.num_classes = " << num_classes << "\n"
       << "network.downsample = " << downsample << "\n"
       << "network.dropout = " << dropout << "\n"
       << "network.input_scale = " << input_scale << "\n"
       << "network.front = " << to_string(front) << "\n"
       << "network.temporal = " << (temporal ? "true" : "false") << "\n";
    return os.str();
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

namespace detail {
inline std::size_t res_block_params(std::size_t in, std::size_t out) {
  // three conv paths with BN, 1x1 reduction (+bias), 1x1 skip (+bias)
  return out * in + 2 * out + 9 * out * in + 2 * out + 9 * out * in + 2 * out + 3 * out * out + out + out * in + out;
}
}  // namespace detail

/// Trainable parameter count implied by a configuration (BN running
/// statistics are not parameters).
inline std::size_t parameter_count(const NetworkConfig& cfg) {
  cfg.validate();
  const std::size_t bw = cfg.base_width, enc = cfg.encoder_width(), k = cfg.knn.k, cin = cfg.in_channels;
  std::size_t n = 0;
  if (cfg.front == FrontEnd::Knn) {
    n += bw * k * cin + bw;
    if (cfg.temporal) n += bw * k * 3 + bw;
  } else {
    n += bw * cin * 9 + bw;
    if (cfg.temporal) n += bw * 2 * cin * 9 + bw;
  }
  n += detail::res_block_params(bw, enc);
  if (cfg.temporal) n += detail::res_block_params(bw, enc) + enc * enc + enc;
  n += detail::res_block_params(enc, cfg.bottleneck_width);
  n += detail::res_block_params(cfg.decoder_in(), bw);
  n += cfg.num_classes * bw + cfg.num_classes;
  return n;
}

/// Preprocessed, non-differentiable network input for one scan pair.
struct NetworkInput {
  int height = 0;
  int width = 0;
  std::vector<float> spatial;   // (k * C_in) x H x W for kNN, C_in x H x W for conv2d
  std::vector<float> temporal;  // (3 k) x H x W for kNN, (2 C_in) x H x W for conv2d; empty without temporal
};

/// Runs the kNN searches and builds the scaled front-end features.
inline NetworkInput prepare_input(const OrderedPointCloud& current, const OrderedPointCloud& previous,
                                  const NetworkConfig& cfg) {
  cfg.validate();
  if (current.height != previous.height || current.width != previous.width) {
    throw Error(ErrorCode::ConfigMismatch, "current and previous scans projected with different sensors");
  }
  if (current.channels < cfg.in_channels || previous.channels < cfg.in_channels) {
    throw Error(ErrorCode::ConfigMismatch, "projection lacks channels required by the network");
  }
  NetworkInput in;
  in.height = current.height;
  in.width = current.width;
  const int n_pix = current.pixels();
  const float inv_scale = static_cast<float>(1.0 / cfg.input_scale);
  auto scale_block = [&](std::vector<float>& block, int channels_per_group) {
    // Metric channels (range, x, y, z) are scaled; intensity is already unitless.
    const std::size_t groups = block.size() / (static_cast<std::size_t>(channels_per_group) * n_pix);
    for (std::size_t gi = 0; gi < groups; ++gi)
      for (int c = 0; c < std::min(channels_per_group, 4); ++c) {
        float* p = block.data() + (gi * channels_per_group + c) * n_pix;
        for (int i = 0; i < n_pix; ++i) p[i] *= inv_scale;
      }
  };
  if (cfg.front == FrontEnd::Knn) {
    const auto nim = knn_spatial(current, cfg.knn);
    in.spatial = gather_neighbors(current, nim, cfg.in_channels);
    scale_block(in.spatial, cfg.in_channels);
    if (cfg.temporal) {
      const auto nim_t = knn_temporal(current, previous, cfg.knn);
      auto d = to_spherical(motion_vectors(current, previous, nim_t));
      for (int j = 0; j < d.k; ++j)
        for (int p = 0; p < n_pix; ++p) d.at(j, 0, p) *= inv_scale;
      in.temporal = std::move(d.data);
    }
  } else {
    in.spatial.assign(current.data.begin(), current.data.begin() + static_cast<std::size_t>(cfg.in_channels) * n_pix);
    scale_block(in.spatial, cfg.in_channels);
    if (cfg.temporal) {
      in.temporal = in.spatial;
      std::vector<float> prev(previous.data.begin(),
                              previous.data.begin() + static_cast<std::size_t>(cfg.in_channels) * n_pix);
      scale_block(prev, cfg.in_channels);
      in.temporal.insert(in.temporal.end(), prev.begin(), prev.end());
    }
  }
  return in;
}

/// Column window of a prepared input.
inline NetworkInput crop_input(const NetworkInput& in, int col0, int cols) {
  if (col0 < 0 || cols < 1 || col0 + cols > in.width) throw Error(ErrorCode::ShapeMismatch, "input crop");
  auto crop = [&](const std::vector<float>& block) {
    const std::size_t planes = block.size() / (static_cast<std::size_t>(in.height) * in.width);
    std::vector<float> out(planes * in.height * cols);
    for (std::size_t r = 0; r < planes * in.height; ++r) {
      std::copy_n(block.begin() + r * in.width + col0, cols, out.begin() + r * cols);
    }
    return out;
  };
  NetworkInput out;
  out.height = in.height;
  out.width = cols;
  out.spatial = crop(in.spatial);
  if (!in.temporal.empty()) out.temporal = crop(in.temporal);
  return out;
}

/// Gather + shared linear map + ReLU. `gathered` is B x (k C) x H x W.
template <class T>
nn::Tensor<T> spatial_knn_conv(const nn::Tensor<T>& gathered, const nn::Tensor<T>& weight, const nn::Tensor<T>& bias) {
  return nn::relu(nn::conv2d(gathered, weight, bias));
}

/// Single-image convenience form over an ordered cloud and its spatial neighbor map.
template <class T>
nn::Tensor<T> spatial_knn_conv(const OrderedPointCloud& opc, const NeighborIndexMap& nim, const nn::Tensor<T>& weight,
                               const nn::Tensor<T>& bias) {
  if (weight.rank() != 4 || weight.dim(2) != 1 || weight.dim(3) != 1 || weight.dim(1) % nim.k != 0) {
    throw Error(ErrorCode::ShapeMismatch, "spatial kNN weight must be C_out x (k C_in) x 1 x 1");
  }
  const int channels = weight.dim(1) / nim.k;
  const auto g = gather_neighbors(opc, nim, channels);
  auto x = nn::Tensor<T>::from({1, weight.dim(1), opc.height, opc.width}, std::vector<T>(g.begin(), g.end()));
  return spatial_knn_conv(x, weight, bias);
}

/// Motion vectors (spherical) + shared linear map + ReLU. `motion` is B x 3k x H x W.
template <class T>
nn::Tensor<T> temporal_knn_conv(const nn::Tensor<T>& motion, const nn::Tensor<T>& weight, const nn::Tensor<T>& bias) {
  return nn::relu(nn::conv2d(motion, weight, bias));
}

template <class T>
nn::Tensor<T> temporal_knn_conv(const OrderedPointCloud& current, const OrderedPointCloud& previous,
                                const NeighborIndexMap& nim, const nn::Tensor<T>& weight, const nn::Tensor<T>& bias) {
  if (weight.rank() != 4 || weight.dim(1) != 3 * nim.k) {
    throw Error(ErrorCode::ShapeMismatch, "temporal kNN weight must be C_out x 3k x 1 x 1");
  }
  const auto d = to_spherical(motion_vectors(current, previous, nim));
  auto x = nn::Tensor<T>::from({1, 3 * nim.k, current.height, current.width},
                               std::vector<T>(d.data.begin(), d.data.end()));
  return temporal_knn_conv(x, weight, bias);
}

/// Named trainable tensors of one residual block.
template <class T>
struct ResBlockWeights {
  nn::Tensor<T> p1, p1_gamma, p1_beta;
  nn::Tensor<T> p2, p2_gamma, p2_beta;
  nn::Tensor<T> p3, p3_gamma, p3_beta;
  nn::Tensor<T> reduce, reduce_bias;
  nn::Tensor<T> skip, skip_bias;
  nn::BatchNormStats<T> bn1, bn2, bn3;
};

struct ResBlockOptions {
  bool training = false;
  double dropout = 0.0;
  int pool = 1;  // 1 disables the trailing average pool
};

/// Three parallel paths (1x1; 3x3; 3x3 dilation 2), each BN + ReLU, concatenated
/// and reduced by a 1x1 conv, added to a 1x1 skip projection; optional spatial
/// dropout and average pooling.
template <class T>
nn::Tensor<T> res_block(const nn::Tensor<T>& x, ResBlockWeights<T>& w, const ResBlockOptions& opt, Rng& rng) {
  const nn::Tensor<T> none;
  auto path = [&](const nn::Tensor<T>& kernel, const nn::Tensor<T>& gamma, const nn::Tensor<T>& beta,
                  nn::BatchNormStats<T>& stats, nn::Conv2dOptions conv) {
    return nn::relu(nn::batch_norm(nn::conv2d(x, kernel, none, conv), gamma, beta, stats, opt.training));
  };
  auto a = path(w.p1, w.p1_gamma, w.p1_beta, w.bn1, {1, 0, 1});
  auto b = path(w.p2, w.p2_gamma, w.p2_beta, w.bn2, {1, 1, 1});
  auto c = path(w.p3, w.p3_gamma, w.p3_beta, w.bn3, {1, 2, 2});
  auto merged = nn::conv2d(nn::concat<T>({a, b, c}, 1), w.reduce, w.reduce_bias);
  auto out = nn::add(merged, nn::conv2d(x, w.skip, w.skip_bias));
  out = nn::spatial_dropout(out, opt.dropout, rng, opt.training);
  if (opt.pool > 1) out = nn::avg_pool2d(out, opt.pool, opt.pool);
  return out;
}

/// Motion-guided attention: spatial * sigmoid(1x1 conv(temporal)) + spatial.
template <class T>
nn::Tensor<T> mga_fuse(const nn::Tensor<T>& spatial, const nn::Tensor<T>& temporal, const nn::Tensor<T>& weight,
                       const nn::Tensor<T>& bias) {
  if (spatial.shape() != temporal.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "MGA branches " + nn::shape_str(spatial.shape()) + " vs " +
                                              nn::shape_str(temporal.shape()));
  }
  auto attention = nn::sigmoid(nn::conv2d(temporal, weight, bias));
  return nn::add(nn::mul(spatial, attention), spatial);
}

/// Model weights, BN statistics and mode.
template <class T>
class Denoiser {
 public:
  explicit Denoiser(NetworkConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)), dropout_rng_(mix_seed(seed, 1)) {
    cfg_.validate();
    Rng rng(seed);
    const int bw = cfg_.base_width, enc = cfg_.encoder_width(), k = cfg_.knn.k, cin = cfg_.in_channels;
    if (cfg_.front == FrontEnd::Knn) {
      spatial_front_ = conv_param("front.spatial.weight", bw, k * cin, 1, rng);
      if (cfg_.temporal) temporal_front_ = conv_param("front.temporal.weight", bw, 3 * k, 1, rng);
    } else {
      spatial_front_ = conv_param("front.spatial.weight", bw, cin, 3, rng);
      if (cfg_.temporal) temporal_front_ = conv_param("front.temporal.weight", bw, 2 * cin, 3, rng);
    }
    spatial_front_bias_ = zeros_param("front.spatial.bias", bw);
    if (cfg_.temporal) temporal_front_bias_ = zeros_param("front.temporal.bias", bw);
    make_block("enc_spatial", bw, enc, enc_spatial_, rng);
    if (cfg_.temporal) {
      make_block("enc_temporal", bw, enc, enc_temporal_, rng);
      mga_weight_ = conv_param("mga.weight", enc, enc, 1, rng);
      mga_bias_ = zeros_param("mga.bias", enc);
    }
    make_block("bottleneck", enc, cfg_.bottleneck_width, bottleneck_, rng);
    make_block("decoder", cfg_.decoder_in(), bw, decoder_, rng);
    head_ = conv_param("head.weight", cfg_.num_classes, bw, 1, rng);
    head_bias_ = zeros_param("head.bias", cfg_.num_classes);
  }

  Denoiser(const Denoiser&) = delete;
  Denoiser& operator=(const Denoiser&) = delete;

  const NetworkConfig& config() const { return cfg_; }

  bool training() const { return training_; }
  void train() { training_ = true; }
  void eval() { training_ = false; }

  /// Registration order is fixed by the configuration.
  std::vector<std::pair<std::string, nn::Tensor<T>>>& parameters() { return params_; }
  const std::vector<std::pair<std::string, nn::Tensor<T>>>& parameters() const { return params_; }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  /// Batched forward over prepared inputs sharing one image size; returns
  /// B x num_classes x H x W class probabilities.
  nn::Tensor<T> forward(const std::vector<const NetworkInput*>& batch) {
    if (batch.empty()) throw Error(ErrorCode::ShapeMismatch, "empty batch");
    const int h = batch.front()->height, w = batch.front()->width;
    const int f = cfg_.downsample;
    if (h % f != 0 || w % f != 0) {
      throw Error(ErrorCode::ConfigMismatch, "image size must be divisible by the downsample factor");
    }
    const int bw = cfg_.base_width, k = cfg_.knn.k, cin = cfg_.in_channels;
    const int spatial_ch = cfg_.front == FrontEnd::Knn ? k * cin : cin;
    const int temporal_ch = cfg_.front == FrontEnd::Knn ? 3 * k : 2 * cin;
    auto stack = [&](auto member, int channels) {
      std::vector<T> values;
      values.reserve(batch.size() * static_cast<std::size_t>(channels) * h * w);
      for (const NetworkInput* in : batch) {
        const std::vector<float>& block = in->*member;
        if (in->height != h || in->width != w || block.size() != static_cast<std::size_t>(channels) * h * w) {
          throw Error(ErrorCode::ConfigMismatch, "network input does not match the configuration");
        }
        values.insert(values.end(), block.begin(), block.end());
      }
      return nn::Tensor<T>::from({static_cast<int>(batch.size()), channels, h, w}, std::move(values));
    };

    const ResBlockOptions enc_opt{training_, cfg_.dropout, f};
    nn::Tensor<T> spatial_in = stack(&NetworkInput::spatial, spatial_ch);
    nn::Tensor<T> spatial0 = cfg_.front == FrontEnd::Knn
                                 ? spatial_knn_conv(spatial_in, spatial_front_, spatial_front_bias_)
                                 : nn::relu(nn::conv2d(spatial_in, spatial_front_, spatial_front_bias_, {1, 1, 1}));
    nn::Tensor<T> fused = res_block(spatial0, enc_spatial_, enc_opt, dropout_rng_);
    if (cfg_.temporal) {
      nn::Tensor<T> temporal_in = stack(&NetworkInput::temporal, temporal_ch);
      nn::Tensor<T> temporal0 =
          cfg_.front == FrontEnd::Knn
              ? temporal_knn_conv(temporal_in, temporal_front_, temporal_front_bias_)
              : nn::relu(nn::conv2d(temporal_in, temporal_front_, temporal_front_bias_, {1, 1, 1}));
      auto temporal_enc = res_block(temporal0, enc_temporal_, enc_opt, dropout_rng_);
      fused = mga_fuse(fused, temporal_enc, mga_weight_, mga_bias_);
    }
    auto mid = res_block(fused, bottleneck_, {training_, cfg_.dropout, 1}, dropout_rng_);
    auto up = nn::pixel_shuffle(mid, f);
    auto dec = res_block(nn::concat<T>({up, spatial0}, 1), decoder_, {training_, 0.0, 1}, dropout_rng_);
    (void)bw;
    return nn::softmax(nn::conv2d(dec, head_, head_bias_), 1);
  }

  nn::Tensor<T> forward(const NetworkInput& in) { return forward(std::vector<const NetworkInput*>{&in}); }

  /// Weights and BN statistics as float32 arrays plus a config manifest.
  nn::Checkpoint state() const {
    nn::Checkpoint ckpt;
    ckpt.manifest = cfg_.serialize();
    for (const auto& [name, t] : params_) {
      ckpt.tensors.push_back({name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
    }
    for (const auto& [name, stats] : bn_stats_) {
      const int c = static_cast<int>(stats->mean.size());
      ckpt.tensors.push_back({name + ".running_mean", {c}, std::vector<float>(stats->mean.begin(), stats->mean.end())});
      ckpt.tensors.push_back({name + ".running_var", {c}, std::vector<float>(stats->var.begin(), stats->var.end())});
    }
    return ckpt;
  }

  void load_state(const nn::Checkpoint& ckpt) {
    auto fetch = [&](const std::string& name, std::size_t n) -> const nn::NamedArray& {
      const auto* t = ckpt.find(name);
      if (!t) throw Error(ErrorCode::ConfigMismatch, "checkpoint lacks tensor " + name);
      if (t->values.size() != n) throw Error(ErrorCode::ConfigMismatch, "checkpoint tensor " + name + " has wrong size");
      return *t;
    };
    for (auto& [name, t] : params_) {
      const auto& src = fetch(name, t.numel());
      if (src.shape != t.shape()) throw Error(ErrorCode::ConfigMismatch, "checkpoint tensor " + name + " shape");
      std::copy(src.values.begin(), src.values.end(), t.data().begin());
    }
    for (auto& [name, stats] : bn_stats_) {
      const auto& m = fetch(name + ".running_mean", stats->mean.size());
      const auto& v = fetch(name + ".running_var", stats->var.size());
      std::copy(m.values.begin(), m.values.end(), stats->mean.begin());
      std::copy(v.values.begin(), v.values.end(), stats->var.begin());
    }
  }

  /// Reseeds the dropout stream (training reproducibility).
  void seed_dropout(std::uint64_t seed) { dropout_rng_ = Rng(seed); }

  // Direct access for tests of the individual blocks.
  ResBlockWeights<T>& block(const std::string& name) {
    if (name == "enc_spatial") return enc_spatial_;
    if (name == "enc_temporal") return enc_temporal_;
    if (name == "bottleneck") return bottleneck_;
    if (name == "decoder") return decoder_;
    throw Error(ErrorCode::InvalidConfig, "no block " + name);
  }

 private:
  nn::Tensor<T> add_param(const std::string& name, nn::Tensor<T> t) {
    t.set_requires_grad(true);
    params_.emplace_back(name, t);
    return t;
  }

  nn::Tensor<T> conv_param(const std::string& name, int out, int in, int kernel, Rng& rng) {
    const double stddev = std::sqrt(2.0 / (static_cast<double>(in) * kernel * kernel));
    std::vector<T> v(static_cast<std::size_t>(out) * in * kernel * kernel);
    for (auto& x : v) x = static_cast<T>(rng.normal() * stddev);
    return add_param(name, nn::Tensor<T>::from({out, in, kernel, kernel}, std::move(v)));
  }

  nn::Tensor<T> zeros_param(const std::string& name, int n) { return add_param(name, nn::Tensor<T>::zeros({n})); }
  nn::Tensor<T> ones_param(const std::string& name, int n) { return add_param(name, nn::Tensor<T>::full({n}, T(1))); }

  void make_block(const std::string& prefix, int in, int out, ResBlockWeights<T>& b, Rng& rng) {
    b.p1 = conv_param(prefix + ".path1.weight", out, in, 1, rng);
    b.p1_gamma = ones_param(prefix + ".path1.bn.gamma", out);
    b.p1_beta = zeros_param(prefix + ".path1.bn.beta", out);
    b.p2 = conv_param(prefix + ".path2.weight", out, in, 3, rng);
    b.p2_gamma = ones_param(prefix + ".path2.bn.gamma", out);
    b.p2_beta = zeros_param(prefix + ".path2.bn.beta", out);
    b.p3 = conv_param(prefix + ".path3.weight", out, in, 3, rng);
    b.p3_gamma = ones_param(prefix + ".path3.bn.gamma", out);
    b.p3_beta = zeros_param(prefix + ".path3.bn.beta", out);
    b.reduce = conv_param(prefix + ".reduce.weight", out, 3 * out, 1, rng);
    b.reduce_bias = zeros_param(prefix + ".reduce.bias", out);
    b.skip = conv_param(prefix + ".skip.weight", out, in, 1, rng);
    b.skip_bias = zeros_param(prefix + ".skip.bias", out);
    for (auto* s : {&b.bn1, &b.bn2, &b.bn3}) {
      s->mean.assign(out, T(0));
      s->var.assign(out, T(1));
    }
    bn_stats_.emplace_back(prefix + ".path1.bn", &b.bn1);
    bn_stats_.emplace_back(prefix + ".path2.bn", &b.bn2);
    bn_stats_.emplace_back(prefix + ".path3.bn", &b.bn3);
  }

  NetworkConfig cfg_;
  bool training_ = false;
  Rng dropout_rng_;
  std::vector<std::pair<std::string, nn::Tensor<T>>> params_;
  std::vector<std::pair<std::string, nn::BatchNormStats<T>*>> bn_stats_;

  nn::Tensor<T> spatial_front_, spatial_front_bias_, temporal_front_, temporal_front_bias_;
  ResBlockWeights<T> enc_spatial_, enc_temporal_, bottleneck_, decoder_;
  nn::Tensor<T> mga_weight_, mga_bias_, head_, head_bias_;
};

/// Parses the manifest written by NetworkConfig::serialize.
inline NetworkConfig network_config_from_manifest(const std::string& manifest) {
  NetworkConfig cfg;
  std::istringstream is(manifest);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "network.in_channels") cfg.in_channels = std::stoi(value);
    else if (key == "network.knn_k") cfg.knn.k = std::stoi(value);
    else if (key == "network.knn_half_rows") cfg.knn.half_rows = std::stoi(value);
    else if (key == "network.knn_half_cols") cfg.knn.half_cols = std::stoi(value);
    else if (key == "network.base_width") cfg.base_width = std::stoi(value);
    else if (key == "network.bottleneck_width") cfg.bottleneck_width = std::stoi(value);
    else if (key == "network.num_classes") cfg.num_classes = std::stoi(value);
    else if (key == "network.downsample") cfg.downsample = std::stoi(value);
    else if (key == "network.dropout") cfg.dropout = std::stod(value);
    else if (key == "network.input_scale") cfg.input_scale = std::stod(value);
    else if (key == "network.front") cfg.front = front_end_from_string(value);
    else if (key == "network.temporal") cfg.temporal = value == "true";
  }
  cfg.validate();
  return cfg;
}

/// Argmax class per pixel of a 1 x C x H x W (or C x H x W) probability tensor;
/// ties resolve to the lower class id.
template <class T>
std::vector<std::uint8_t> pixel_argmax(const nn::Tensor<T>& probs, int sample = 0) {
  if (probs.rank() != 4) throw Error(ErrorCode::ShapeMismatch, "expected B x C x H x W probabilities");
  const int c = probs.dim(1);
  const std::size_t plane = static_cast<std::size_t>(probs.dim(2)) * probs.dim(3);
  const T* base = probs.data().data() + static_cast<std::size_t>(sample) * c * plane;
  std::vector<std::uint8_t> out(plane, 0);
  for (std::size_t i = 0; i < plane; ++i) {
    int best = 0;
    for (int k = 1; k < c; ++k)
      if (base[k * plane + i] > base[best * plane + i]) best = k;
    out[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

struct MaskedCloud {
  PointCloud clean;
  PointCloud removed;
  LabelMask mask;
};

/// Removes points whose pixel is classified as noise.
template <class T>
MaskedCloud mask_points(const PointCloud& cloud, const OrderedPointCloud& opc, const nn::Tensor<T>& probs,
                        int sample = 0) {
  if (opc.num_points() != cloud.size()) throw Error(ErrorCode::LengthMismatch, "cloud does not match projection");
  if (probs.rank() != 4 || probs.dim(2) != opc.height || probs.dim(3) != opc.width) {
    throw Error(ErrorCode::ShapeMismatch, "probabilities do not match the projection");
  }
  MaskedCloud out;
  out.mask = unproject_labels(opc, pixel_argmax(probs, sample));
  out.clean.frame_id = cloud.frame_id;
  out.removed.frame_id = cloud.frame_id;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    (out.mask.labels[i] == kNoise ? out.removed : out.clean).points.push_back(cloud.points[i]);
  }
  return out;
}

}  // namespace denoise4d
