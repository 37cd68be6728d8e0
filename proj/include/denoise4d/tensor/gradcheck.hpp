#pragma once

// Central finite-difference gradient checks for any scalar-valued function of
// a set of leaf tensors.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <string>
#include <vector>

#include "denoise4d/random.hpp"
#include "denoise4d/tensor/tensor.hpp"

namespace denoise4d::nn {

struct GradCheckOptions {
  double eps = 1e-5;
  // Denominator floor for the relative error, so exactly-zero gradients are
  // compared absolutely.
  double floor = 1e-6;
  // Entries sampled per leaf; 0 checks every entry.
  std::size_t samples_per_leaf = 0;
  std::uint64_t seed = 0;
  // When > 0, entries whose stencil straddles a kink (ReLU, sort order) are
  // detected from differences at eps and eps / 2 and skipped.
  double kink_tol = 0.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::string worst;

  bool passed(double tol) const { return checked > 0 && max_rel_error < tol; }
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

/// Compares backward() gradients of fn() against central differences. fn must
/// rebuild the graph from the leaves on every call and return a one-element tensor.
template <class Fn>
GradCheckResult gradcheck(Fn&& fn, std::vector<Tensor<double>> leaves, const GradCheckOptions& opt = {}) {
  for (auto& leaf : leaves) leaf.zero_grad();
  const auto root = fn();
  const double f0 = root.item();
  backward(root);
  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves) analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());

  GradCheckResult result;
  Rng rng(opt.seed);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto values = leaves[li].data();
    std::vector<std::size_t> picks;
    if (opt.samples_per_leaf == 0 || opt.samples_per_leaf >= values.size()) {
      for (std::size_t i = 0; i < values.size(); ++i) picks.push_back(i);
    } else {
      for (std::size_t s = 0; s < opt.samples_per_leaf; ++s) picks.push_back(rng.below(values.size()));
    }
    for (std::size_t i : picks) {
      const double saved = values[i];
      values[i] = saved + opt.eps;
      const double up = fn().item();
      values[i] = saved - opt.eps;
      const double down = fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.eps);
      if (opt.kink_tol > 0.0) {
        values[i] = saved + opt.eps / 2;
        const double up2 = fn().item();
        values[i] = saved - opt.eps / 2;
        const double down2 = fn().item();
        values[i] = saved;
        // Smooth f: central differences agree and the one-sided gap shrinks
        // linearly with the step. A kink inside the stencil breaks one of the two.
        const double central_gap = numeric - (up2 - down2) / opt.eps;
        const double gap = (up - 2 * f0 + down) / opt.eps;
        const double gap2 = (up2 - 2 * f0 + down2) / (opt.eps / 2);
        const double scale = std::max({std::fabs(numeric), opt.floor});
        if (std::max(std::fabs(central_gap), std::fabs(gap - 2 * gap2)) / scale > opt.kink_tol) {
          ++result.skipped;
          continue;
        }
      }
      const double err = relative_error(analytic[li][i], numeric, opt.floor);
      ++result.checked;
      if (err > result.max_rel_error || !std::isfinite(err)) {
        result.max_rel_error = std::isfinite(err) ? err : INFINITY;
        char buf[160];
        std::snprintf(buf, sizeof buf, "leaf %zu entry %zu: analytic %.9e numeric %.9e", li, i, analytic[li][i], numeric);
        result.worst = buf;
      }
    }
  }
  return result;
}

}  // namespace denoise4d::nn
