#pragma once

// Command-line front end. run_cli() is the whole program; the executable only
// forwards argv and std streams, so tests drive commands in-process.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "denoise4d/baselines.hpp"
#include "denoise4d/config.hpp"
#include "denoise4d/error.hpp"
#include "denoise4d/loss_metrics.hpp"
#include "denoise4d/network.hpp"
#include "denoise4d/projection.hpp"
#include "denoise4d/scan_io.hpp"
#include "denoise4d/snowsim.hpp"
#include "denoise4d/tensor/checkpoint.hpp"
#include "denoise4d/toy_scene.hpp"
#include "denoise4d/trainer.hpp"

namespace denoise4d::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFiniteValue:
    case ErrorCode::NonFiniteGradient:
    case ErrorCode::DivergenceDetected:
    case ErrorCode::ZeroRange:
      return kNumeric;
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidParams:
      return kUsage;
    default:
      return kData;
  }
}

inline constexpr const char* kConfigSnapshot = "run_config.txt";

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  detail::write_all(path, std::vector<char>(text.begin(), text.end()));
}

// ---------------------------------------------------------------- reports

struct ConditionTally {
  int frames = 0;
  std::uint64_t points = 0;
  Confusion confusion;
};

/// Rows per condition class plus an "all" aggregate, in a fixed order.
class Report {
 public:
  void add(const std::string& method, ConditionClass c, const Confusion& conf, std::size_t points) {
    auto& rows = methods_[method];
    if (std::find(order_.begin(), order_.end(), method) == order_.end()) order_.push_back(method);
    for (auto* t : {&rows[to_string(c)], &rows["all"]}) {
      ++t->frames;
      t->points += points;
      t->confusion += conf;
    }
  }

  const ConditionTally* find(const std::string& method, const std::string& condition) const {
    auto m = methods_.find(method);
    if (m == methods_.end()) return nullptr;
    auto it = m->second.find(condition);
    return it == m->second.end() ? nullptr : &it->second;
  }

  std::string csv() const {
    std::string out = "method,condition,frames,points,tp,fp,fn,iou,precision,recall\n";
    char buf[256];
    for (const auto& method : order_) {
      for (const char* cond : {"light", "medium", "heavy", "all"}) {
        const auto* t = find(method, cond);
        if (!t) {
          out += method + "," + cond + ",0,0,0,0,0,,,\n";
          continue;
        }
        const auto& c = t->confusion;
        std::snprintf(buf, sizeof buf, "%s,%s,%d,%llu,%llu,%llu,%llu,%.6f,%.6f,%.6f\n", method.c_str(), cond, t->frames,
                      static_cast<unsigned long long>(t->points), static_cast<unsigned long long>(c.tp),
                      static_cast<unsigned long long>(c.fp), static_cast<unsigned long long>(c.fn), c.iou(),
                      c.precision(), c.recall());
        out += buf;
      }
    }
    return out;
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, std::map<std::string, ConditionTally>> methods_;
};

// ---------------------------------------------------------------- commands

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline RunConfig load_config(const std::string& file, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!file.empty()) cfg.merge_file(file);
  for (const auto& kv : overrides) cfg.apply_override(kv);
  return cfg;
}

inline std::unique_ptr<Denoiser<float>> load_model(const std::filesystem::path& ckpt_path, const SensorConfig& sensor) {
  const auto ckpt = nn::load_checkpoint(ckpt_path);
  auto net = std::make_unique<Denoiser<float>>(network_config_from_manifest(ckpt.manifest), 0);
  net->load_state(ckpt);
  if (const auto trained = sensor_from_manifest(ckpt.manifest); trained && !(*trained == sensor)) {
    throw Error(ErrorCode::ConfigMismatch, "checkpoint was trained for a different sensor configuration");
  }
  net->eval();
  return net;
}

inline ConditionClass condition_of(const ManifestEntry& e) { return e.condition; }

inline Split parse_split(const std::string& s) { return split_from_string(s); }

struct SimulateArgs {
  std::string clean, out, subset = "all";
  std::uint64_t seed = 0;
  int toy_sequences = 0, toy_frames = 50;
};

inline int cmd_simulate(const SimulateArgs& a, const RunConfig& cfg, Streams io) {
  if (a.toy_sequences > 0) {
    ToySceneOptions opt;
    opt.sensor = cfg.sensor();
    opt.frames = a.toy_frames;
    write_toy_dataset(a.clean, a.toy_sequences, opt, mix_seed(a.seed, 0x70));
  }
  DatasetOptions d;
  d.ratios = cfg.splits();
  d.subset = a.subset;
  d.seed = a.seed;
  d.model = cfg.snow();
  const auto m = build_dataset(a.clean, a.out, d);
  write_text(std::filesystem::path(a.out) / kConfigSnapshot, cfg.serialize());
  std::size_t per[3] = {};
  for (const auto& e : m.entries) ++per[static_cast<int>(e.split)];
  io.out << "wrote " << m.entries.size() << " frames (train " << per[0] << ", val " << per[1] << ", test " << per[2]
         << ") to " << (std::filesystem::path(a.out) / kManifestName).string() << "\n";
  return kOk;
}

struct TrainArgs {
  std::string manifest, out, ablate;
  bool dry_run = false;
};

inline NetworkConfig ablated(NetworkConfig n, const std::string& ablate) {
  if (ablate.empty() || ablate == "none") return n;
  if (ablate == "no-temporal") {
    n.temporal = false;
  } else if (ablate == "conv2d-front") {
    n.front = FrontEnd::Conv2d;
  } else if (ablate == "conv2d-no-temporal") {
    n.front = FrontEnd::Conv2d;
    n.temporal = false;
  } else {
    throw Error(ErrorCode::InvalidConfig, "unknown ablation '" + ablate + "'");
  }
  return n;
}

inline int cmd_train(const TrainArgs& a, RunConfig cfg, Streams io) {
  const auto net_cfg = ablated(cfg.network(), a.ablate);
  cfg.set("network.front", to_string(net_cfg.front));
  cfg.set("network.temporal", net_cfg.temporal ? "true" : "false");
  const auto train_cfg = cfg.train();
  const auto sensor = cfg.sensor();
  if (a.dry_run) {
    io.out << "parameters " << parameter_count(net_cfg) << "\n" << cfg.serialize();
    return kOk;
  }
  if (a.manifest.empty() || a.out.empty()) throw CLI::RequiredError("--manifest and --out");
  const auto manifest = read_manifest(a.manifest);
  std::filesystem::create_directories(a.out);
  write_text(std::filesystem::path(a.out) / kConfigSnapshot, cfg.serialize());
  Denoiser<float> net(net_cfg, train_cfg.seed);
  const auto result = fit(net, manifest, sensor, train_cfg, a.out);
  io.out << "parameters " << net.num_parameters() << "\n"
         << "best epoch " << result.best_epoch << " val_iou " << result.best_val_iou << "\n";
  return kOk;
}

struct DenoiseArgs {
  std::string checkpoint, scan, prev, out;
};

inline int cmd_denoise(const DenoiseArgs& a, const RunConfig& cfg, Streams io) {
  auto net = load_model(a.checkpoint, cfg.sensor());
  const auto current = read_scan(a.scan);
  const auto previous = a.prev.empty() ? current : read_scan(a.prev);
  const auto p = predict(*net, current, previous, cfg.sensor());
  const std::filesystem::path out = a.out;
  write_scan(p.masked.clean, out / "clean.bin");
  write_scan(p.masked.removed, out / "removed.bin");
  write_labels(p.masked.mask, out / "pred.label");
  io.out << "kept " << p.masked.clean.size() << " removed " << p.masked.removed.size() << " of " << current.size()
         << "\n";
  return kOk;
}

struct EvalArgs {
  std::string manifest, checkpoint, filter, pred, split = "test", out;
  int limit = 0;
};

/// Frames of one split in (sequence, frame) order, optionally an evenly spaced subset.
inline std::vector<Frame> eval_frames(const Manifest& m, const std::string& split, int limit) {
  auto frames = load_split(m, parse_split(split), static_cast<std::size_t>(std::max(limit, 0)));
  if (frames.empty()) throw Error(ErrorCode::DatasetEmpty, "split '" + split + "' has no frames");
  return frames;
}

inline std::size_t own_count(const std::vector<Frame>& frames, Split s) {
  std::size_t n = 0;
  while (n < frames.size() && frames[n].entry->split == s) ++n;
  return n;
}

inline void finish_report(const Report& r, const std::string& out, Streams io) {
  const auto text = r.csv();
  if (out.empty() || out == "-") {
    io.out << text;
  } else {
    write_text(out, text);
  }
}

inline int cmd_eval(const EvalArgs& a, const RunConfig& cfg, Streams io) {
  const int sources = !a.checkpoint.empty() + !a.filter.empty() + !a.pred.empty();
  if (sources != 1) throw CLI::ValidationError("eval", "give exactly one of --checkpoint, --filter, --pred");
  const auto m = read_manifest(a.manifest);
  const auto frames = eval_frames(m, a.split, a.limit);
  const std::size_t n = own_count(frames, parse_split(a.split));
  Report report;
  if (!a.checkpoint.empty()) {
    auto net = load_model(a.checkpoint, cfg.sensor());
    for (std::size_t i = 0; i < n; ++i) {
      const auto& f = frames[i];
      const auto p = predict(*net, f.cloud, frames[f.previous].cloud, cfg.sensor());
      report.add("network", condition_of(*f.entry), confusion(p.masked.mask, f.labels), f.cloud.size());
    }
  } else if (!a.filter.empty()) {
    const auto params = cfg.filters();
    for (std::size_t i = 0; i < n; ++i) {
      const auto& f = frames[i];
      report.add(a.filter, condition_of(*f.entry), confusion(run_filter(a.filter, f.cloud, params), f.labels),
                 f.cloud.size());
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const auto& f = frames[i];
      const auto path = std::filesystem::path(a.pred) / f.entry->label;
      if (!std::filesystem::exists(path)) throw Error(ErrorCode::MisalignedFrames, "no prediction " + path.string());
      const auto pred = read_labels(path);
      if (pred.size() != f.labels.size()) {
        throw Error(ErrorCode::MisalignedFrames, path.string() + " has " + std::to_string(pred.size()) +
                                                     " labels, scan has " + std::to_string(f.labels.size()));
      }
      report.add("predictions", condition_of(*f.entry), confusion(pred, f.labels), f.cloud.size());
    }
  }
  finish_report(report, a.out, io);
  return kOk;
}

struct BaselineArgs {
  std::string manifest, filter = "all", split = "test", out, labels_out;
  int limit = 0;
};

inline int cmd_baseline(const BaselineArgs& a, const RunConfig& cfg, Streams io) {
  std::vector<std::string> names;
  if (a.filter == "all") {
    names = filter_names();
  } else {
    run_filter(a.filter, PointCloud{}, cfg.filters());  // rejects unknown names early
    names = {a.filter};
  }
  const auto m = read_manifest(a.manifest);
  const auto frames = eval_frames(m, a.split, a.limit);
  const std::size_t n = own_count(frames, parse_split(a.split));
  const auto params = cfg.filters();
  Report report;
  for (const auto& name : names) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto& f = frames[i];
      const auto mask = run_filter(name, f.cloud, params);
      if (!a.labels_out.empty()) write_labels(mask, std::filesystem::path(a.labels_out) / name / f.entry->label);
      report.add(name, condition_of(*f.entry), confusion(mask, f.labels), f.cloud.size());
    }
  }
  finish_report(report, a.out, io);
  return kOk;
}

struct RenderArgs {
  std::string scan, labels, out;
  double max_range = 80.0;
};

/// Binary PGM of the range image: near is bright, empty pixels are black.
inline std::string render_range_pgm(const OrderedPointCloud& opc, double max_range) {
  std::string img = "P5\n" + std::to_string(opc.width) + " " + std::to_string(opc.height) + "\n255\n";
  for (int p = 0; p < opc.pixels(); ++p) {
    unsigned char v = 0;
    if (opc.is_valid(p)) {
      const double t = std::clamp(opc.range(p) / max_range, 0.0, 1.0);
      v = static_cast<unsigned char>(std::lround(40.0 + 215.0 * (1.0 - t)));
    }
    img.push_back(static_cast<char>(v));
  }
  return img;
}

/// Binary PPM: the gray range image with noise-labelled pixels in red.
inline std::string render_overlay_ppm(const OrderedPointCloud& opc, const LabelMask& labels, double max_range) {
  if (labels.size() != opc.num_points()) throw Error(ErrorCode::LengthMismatch, "labels do not match the scan");
  const auto gray = render_range_pgm(opc, max_range);
  const std::size_t header = gray.size() - static_cast<std::size_t>(opc.pixels());
  std::string img = "P6\n" + std::to_string(opc.width) + " " + std::to_string(opc.height) + "\n255\n";
  for (int p = 0; p < opc.pixels(); ++p) {
    const char g = gray[header + p];
    const bool noise = opc.source[p] >= 0 && labels.labels[opc.source[p]] == kNoise;
    if (noise) {
      img.append({static_cast<char>(255), 0, 0});
    } else {
      img.append({g, g, g});
    }
  }
  return img;
}

inline int cmd_render(const RenderArgs& a, const RunConfig& cfg, Streams io) {
  const auto cloud = read_scan(a.scan);
  const auto opc = project(cloud, cfg.sensor());
  write_text(a.out + "_range.pgm", render_range_pgm(opc, a.max_range));
  io.out << "wrote " << a.out << "_range.pgm";
  if (!a.labels.empty()) {
    write_text(a.out + "_overlay.ppm", render_overlay_ppm(opc, read_labels(a.labels), a.max_range));
    io.out << " and " << a.out << "_overlay.ppm";
  }
  io.out << "\n";
  return kOk;
}

struct BenchArgs {
  int repeats = 3;
  std::uint64_t seed = 0;
};

/// Wall-clock timings of each pipeline stage on one synthetic snowy toy scan.
inline int cmd_bench(const BenchArgs& a, const RunConfig& cfg, Streams io) {
  using clock = std::chrono::steady_clock;
  ToySceneOptions opt;
  opt.sensor = cfg.sensor();
  opt.frames = 2;
  const ToyScene scene(a.seed, opt);
  SnowParams sp;
  sp.snowfall_rate = 2.0;
  sp.seed = mix_seed(a.seed, 1);
  const auto prev = scene.scan(0, mix_seed(a.seed, 2));
  const auto snowy = inject_snow(scene.scan(1, mix_seed(a.seed, 3)), sp, cfg.snow());
  const auto net_cfg = cfg.network();
  Denoiser<float> net(net_cfg, 0);
  net.eval();
  auto time = [&](const std::string& name, auto&& fn) {
    double best = 1e300;
    for (int r = 0; r < std::max(a.repeats, 1); ++r) {
      const auto t0 = clock::now();
      fn();
      best = std::min(best, std::chrono::duration<double, std::milli>(clock::now() - t0).count());
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-12s %10.2f ms\n", name.c_str(), best);
    io.out << buf;
  };
  io.out << "points " << snowy.cloud.size() << ", parameters " << net.num_parameters() << "\n";
  OrderedPointCloud cur, pre;
  time("project", [&] { cur = project(snowy.cloud, cfg.sensor()); });
  pre = project(prev, cfg.sensor());
  NetworkInput in;
  time("knn+prepare", [&] { in = prepare_input(cur, pre, net_cfg); });
  time("forward", [&] {
    nn::NoGradGuard g;
    (void)net.forward(in);
  });
  time("denoise", [&] { (void)predict(net, snowy.cloud, prev, cfg.sensor()); });
  const auto params = cfg.filters();
  for (const auto& name : filter_names()) time(name, [&] { (void)run_filter(name, snowy.cloud, params); });
  return kOk;
}

// ---------------------------------------------------------------- entry point

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Streams io{out, err};
  CLI::App app{"LiDAR adverse-weather denoising toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_file;
  std::vector<std::string> overrides;
  app.add_option("--config", config_file, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "override, key=value (repeatable)");

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "inject labelled snow into clean sequences and write a manifest");
  simulate->add_option("--clean", sim.clean, "clean KITTI-layout root")->required();
  simulate->add_option("--out", sim.out, "output dataset root")->required();
  simulate->add_option("--subset", sim.subset, "all or subset1..subset6");
  simulate->add_option("--seed", sim.seed);
  simulate->add_option("--toy-sequences", sim.toy_sequences, "first synthesize this many toy sequences into --clean");
  simulate->add_option("--toy-frames", sim.toy_frames, "frames per toy sequence");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "train the denoiser");
  train->add_option("--manifest", tr.manifest);
  train->add_option("--out", tr.out, "run directory");
  train->add_option("--ablate", tr.ablate, "no-temporal | conv2d-front | conv2d-no-temporal");
  train->add_flag("--dry-run", tr.dry_run, "print the parameter count and resolved config");

  DenoiseArgs dn;
  auto* denoise = app.add_subcommand("denoise", "remove noise points from one scan");
  denoise->add_option("--checkpoint", dn.checkpoint)->required();
  denoise->add_option("--scan", dn.scan)->required();
  denoise->add_option("--prev", dn.prev, "previous scan; defaults to --scan");
  denoise->add_option("--out", dn.out)->required();

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "noise IoU/precision/recall per condition class");
  eval->add_option("--manifest", ev.manifest)->required();
  eval->add_option("--checkpoint", ev.checkpoint);
  eval->add_option("--filter", ev.filter);
  eval->add_option("--pred", ev.pred, "root holding predicted label files at the manifest's label paths");
  eval->add_option("--split", ev.split);
  eval->add_option("--limit", ev.limit, "evenly spaced frame subset");
  eval->add_option("--out", ev.out, "CSV path; stdout when absent");

  BaselineArgs bl;
  auto* baseline = app.add_subcommand("baseline", "evaluate classical outlier filters");
  baseline->add_option("--manifest", bl.manifest)->required();
  baseline->add_option("--filter", bl.filter, "ror | sor | dror | dsor | lior | all");
  baseline->add_option("--split", bl.split);
  baseline->add_option("--limit", bl.limit);
  baseline->add_option("--out", bl.out);
  baseline->add_option("--labels-out", bl.labels_out, "also write per-filter label files under this root");

  RenderArgs rd;
  auto* render = app.add_subcommand("render", "range image (PGM) and label overlay (PPM)");
  render->add_option("--scan", rd.scan)->required();
  render->add_option("--labels", rd.labels);
  render->add_option("--out", rd.out, "output prefix")->required();
  render->add_option("--max-range", rd.max_range);

  BenchArgs bn;
  auto* bench = app.add_subcommand("bench", "time each pipeline stage on a synthetic scan");
  bench->add_option("--repeats", bn.repeats);
  bench->add_option("--seed", bn.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }
  try {
    const auto cfg = load_config(config_file, overrides);
    if (*simulate) return cmd_simulate(sim, cfg, io);
    if (*train) return cmd_train(tr, cfg, io);
    if (*denoise) return cmd_denoise(dn, cfg, io);
    if (*eval) return cmd_eval(ev, cfg, io);
    if (*baseline) return cmd_baseline(bl, cfg, io);
    if (*render) return cmd_render(rd, cfg, io);
    if (*bench) return cmd_bench(bn, cfg, io);
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

}  // namespace denoise4d::cli
