#pragma once

// Training objective (cross-entropy + Lovasz-Softmax) and noise-class metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "denoise4d/error.hpp"
#include "denoise4d/scan_io.hpp"
#include "denoise4d/tensor/tensor.hpp"
#include "denoise4d/tensor/ops.hpp"

namespace denoise4d {

/// Targets equal to this value are excluded from losses.
inline constexpr int kIgnoreTarget = -1;

namespace detail {

// Class-major view of a probability tensor: C x N (rank 2) or B x C x H x W (rank 4).
struct ProbLayout {
  std::size_t batches, classes, inner;

  std::size_t elements() const { return batches * inner; }
  // Flat offset of (element e, class c).
  std::size_t at(std::size_t e, std::size_t c) const {
    const std::size_t b = e / inner, i = e % inner;
    return (b * classes + c) * inner + i;
  }
};

template <class T>
ProbLayout prob_layout(const nn::Tensor<T>& probs, std::size_t n_targets) {
  ProbLayout l{};
  if (probs.rank() == 2) {
    l = {1, static_cast<std::size_t>(probs.dim(0)), static_cast<std::size_t>(probs.dim(1))};
  } else if (probs.rank() == 4) {
    l = {static_cast<std::size_t>(probs.dim(0)), static_cast<std::size_t>(probs.dim(1)),
         static_cast<std::size_t>(probs.dim(2)) * probs.dim(3)};
  } else {
    throw Error(ErrorCode::ShapeMismatch, "probabilities must be C x N or B x C x H x W");
  }
  if (l.elements() != n_targets) {
    throw Error(ErrorCode::ShapeMismatch, "target count " + std::to_string(n_targets) + " vs " +
                                              std::to_string(l.elements()) + " predictions");
  }
  return l;
}

inline void check_target(int t, std::size_t classes) {
  if (t != kIgnoreTarget && (t < 0 || static_cast<std::size_t>(t) >= classes)) {
    throw Error(ErrorCode::ShapeMismatch, "target class " + std::to_string(t) + " out of range");
  }
}

}  // namespace detail

/// Weighted mean of -log p(target) over non-ignored elements, p floored at 1e-12.
template <class T>
nn::Tensor<T> cross_entropy(const nn::Tensor<T>& probs, std::span<const int> targets,
                            std::span<const T> class_weights = {}) {
  const auto l = detail::prob_layout(probs, targets.size());
  if (!class_weights.empty() && class_weights.size() != l.classes) {
    throw Error(ErrorCode::ShapeMismatch, "class weight count");
  }
  constexpr T kFloor = T(1e-12);
  const auto p = probs.data();
  T total = 0, weight_sum = 0;
  for (std::size_t e = 0; e < l.elements(); ++e) {
    const int t = targets[e];
    detail::check_target(t, l.classes);
    if (t == kIgnoreTarget) continue;
    const T w = class_weights.empty() ? T(1) : class_weights[t];
    total -= w * std::log(std::max(p[l.at(e, t)], kFloor));
    weight_sum += w;
  }
  const T loss = weight_sum > 0 ? total / weight_sum : T(0);
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<T> cw(class_weights.begin(), class_weights.end());
  return nn::make_result<T>({1}, {loss}, {probs}, [l, tg = std::move(tg), cw = std::move(cw), weight_sum](nn::Node<T>& self) {
    if (weight_sum <= 0) return;
    auto& g = self.parents[0]->grad_buffer();
    const auto& pv = self.parents[0]->value;
    for (std::size_t e = 0; e < l.elements(); ++e) {
      const int t = tg[e];
      if (t == kIgnoreTarget) continue;
      const std::size_t i = l.at(e, t);
      if (pv[i] <= kFloor) continue;
      const T w = cw.empty() ? T(1) : cw[t];
      g[i] -= self.grad[0] * w / (weight_sum * pv[i]);
    }
  });
}

/// Discrete gradient of the Jaccard loss along ground truth sorted by
/// descending error.
template <class T>
std::vector<T> lovasz_jaccard_gradient(std::span<const std::uint8_t> sorted_fg) {
  const std::size_t n = sorted_fg.size();
  std::vector<T> grad(n);
  T gts = 0;
  for (auto f : sorted_fg) gts += f;
  T cum_fg = 0, cum_bg = 0, prev = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cum_fg += sorted_fg[i];
    cum_bg += 1 - sorted_fg[i];
    const T inter = gts - cum_fg;
    const T uni = gts + cum_bg;
    const T jac = T(1) - inter / uni;
    grad[i] = i == 0 ? jac : jac - prev;
    prev = jac;
  }
  return grad;
}

/// Lovasz extension of the Jaccard loss of one class, evaluated at an error vector.
template <class T>
T lovasz_extension(std::span<const T> errors, std::span<const std::uint8_t> fg) {
  std::vector<std::size_t> order(errors.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return errors[a] > errors[b]; });
  std::vector<std::uint8_t> sorted_fg(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) sorted_fg[i] = fg[order[i]];
  const auto grad = lovasz_jaccard_gradient<T>(sorted_fg);
  T loss = 0;
  for (std::size_t i = 0; i < order.size(); ++i) loss += errors[order[i]] * grad[i];
  return loss;
}

/// Lovasz-Softmax: mean over classes present in the targets of the Lovasz
/// extension applied to per-element errors |[y == c] - p(c)|.
template <class T>
nn::Tensor<T> lovasz_softmax(const nn::Tensor<T>& probs, std::span<const int> targets) {
  const auto l = detail::prob_layout(probs, targets.size());
  std::vector<std::size_t> kept;
  for (std::size_t e = 0; e < l.elements(); ++e) {
    detail::check_target(targets[e], l.classes);
    if (targets[e] != kIgnoreTarget) kept.push_back(e);
  }
  const auto p = probs.data();
  // Per present class: the element order and the gradient weights along it.
  struct ClassTerm {
    std::size_t cls;
    std::vector<std::size_t> order;  // indices into kept, descending error
    std::vector<T> weight;
  };
  std::vector<ClassTerm> terms;
  T loss = 0;
  std::vector<T> errors(kept.size());
  std::vector<std::uint8_t> fg(kept.size());
  for (std::size_t c = 0; c < l.classes; ++c) {
    bool present = false;
    for (std::size_t k = 0; k < kept.size(); ++k) {
      fg[k] = targets[kept[k]] == static_cast<int>(c);
      present = present || fg[k];
      errors[k] = std::fabs(T(fg[k]) - p[l.at(kept[k], c)]);
    }
    if (!present) continue;
    ClassTerm term{c, std::vector<std::size_t>(kept.size()), {}};
    std::iota(term.order.begin(), term.order.end(), std::size_t{0});
    std::stable_sort(term.order.begin(), term.order.end(),
                     [&](std::size_t a, std::size_t b) { return errors[a] > errors[b]; });
    std::vector<std::uint8_t> sorted_fg(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) sorted_fg[i] = fg[term.order[i]];
    term.weight = lovasz_jaccard_gradient<T>(sorted_fg);
    for (std::size_t i = 0; i < kept.size(); ++i) loss += errors[term.order[i]] * term.weight[i];
    terms.push_back(std::move(term));
  }
  const T n_terms = static_cast<T>(terms.size());
  if (!terms.empty()) loss /= n_terms;
  std::vector<int> tg(targets.begin(), targets.end());
  return nn::make_result<T>({1}, {loss}, {probs},
                            [l, kept = std::move(kept), terms = std::move(terms), tg = std::move(tg), n_terms](nn::Node<T>& self) {
                              if (terms.empty()) return;
                              auto& g = self.parents[0]->grad_buffer();
                              const T scale_v = self.grad[0] / n_terms;
                              for (const auto& term : terms) {
                                for (std::size_t i = 0; i < term.order.size(); ++i) {
                                  const std::size_t e = kept[term.order[i]];
                                  const bool is_fg = tg[e] == static_cast<int>(term.cls);
                                  // d|fg - p| / dp = -1 for foreground (p <= 1), +1 otherwise.
                                  g[l.at(e, term.cls)] += (is_fg ? -T(1) : T(1)) * term.weight[i] * scale_v;
                                }
                              }
                            });
}

/// Lovasz-Softmax plus cross-entropy.
template <class T>
nn::Tensor<T> total_loss(const nn::Tensor<T>& probs, std::span<const int> targets) {
  return nn::add(lovasz_softmax(probs, targets), cross_entropy(probs, targets));
}

// ---------------------------------------------------------------- metrics

/// Noise-class confusion counts.
struct Confusion {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }

  double iou() const {
    const auto uni = tp + fp + fn;
    return uni == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(uni);
  }
  double precision() const { return tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp); }
  double recall() const { return tp + fn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn); }

  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

inline Confusion confusion(const LabelMask& pred, const LabelMask& truth) {
  if (pred.size() != truth.size()) {
    throw Error(ErrorCode::LengthMismatch,
                "prediction has " + std::to_string(pred.size()) + " labels, truth " + std::to_string(truth.size()));
  }
  Confusion c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.labels[i] == kNoise;
    const bool t = truth.labels[i] == kNoise;
    c.tp += p && t;
    c.fp += p && !t;
    c.fn += !p && t;
    c.tn += !p && !t;
  }
  return c;
}

/// Per-pixel variant: targets use kIgnoreTarget for empty pixels.
inline Confusion pixel_confusion(std::span<const std::uint8_t> pred, std::span<const int> targets) {
  if (pred.size() != targets.size()) throw Error(ErrorCode::LengthMismatch, "pixel prediction count");
  Confusion c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (targets[i] == kIgnoreTarget) continue;
    const bool p = pred[i] == kNoise;
    const bool t = targets[i] == kNoise;
    c.tp += p && t;
    c.fp += p && !t;
    c.fn += !p && t;
    c.tn += !p && !t;
  }
  return c;
}

/// Jaccard index of the noise class; 1 when neither mask has noise.
inline double iou_noise(const LabelMask& pred, const LabelMask& truth) { return confusion(pred, truth).iou(); }

struct PrecisionRecall {
  double precision;
  double recall;
};

inline PrecisionRecall precision_recall(const LabelMask& pred, const LabelMask& truth) {
  const auto c = confusion(pred, truth);
  return {c.precision(), c.recall()};
}

}  // namespace denoise4d
