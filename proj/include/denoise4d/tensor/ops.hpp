#pragma once

// Differentiable ops over N x C x H x W tensors (plus a few generic ones).
// Dense products go through Eigen.

// Small products otherwise take Eigen's coefficient-wise path, whose
// vectorized reductions start at an address-dependent offset; always using the
// packed GEMM kernel keeps results independent of heap layout.
#ifndef EIGEN_GEMM_TO_COEFFBASED_THRESHOLD
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#endif
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "denoise4d/random.hpp"
#include "denoise4d/tensor/tensor.hpp"

namespace denoise4d::nn {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::ShapeMismatch, what);
}

template <class T>
void require_nchw(const Tensor<T>& x, const char* op) {
  require(x.defined() && x.rank() == 4, std::string(op) + " expects an N x C x H x W tensor");
}

template <class T>
bool accumulates(const std::shared_ptr<Node<T>>& parent) {
  return parent->requires_grad;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "add " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "mul " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return make_result<T>(a.shape(), std::move(out), {a}, [factor](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  return make_result<T>(x.shape(), std::move(out), {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (self.value[i] > T(0)) g[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.data()[i];
    if (v >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i] * (T(1) - self.value[i]);
  });
}

/// Softmax along one axis.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  detail::require(axis >= 0 && axis < x.rank(), "softmax axis out of range");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  std::vector<T> out(x.numel());
  const auto in = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t s = 0; s < inner; ++s) {
      const std::size_t base = o * n * inner + s;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t c = 0; c < n; ++c) mx = std::max(mx, in[base + c * inner]);
      T sum = 0;
      for (std::size_t c = 0; c < n; ++c) {
        const T e = std::exp(in[base + c * inner] - mx);
        out[base + c * inner] = e;
        sum += e;
      }
      for (std::size_t c = 0; c < n; ++c) out[base + c * inner] /= sum;
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [outer, inner, n](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t s = 0; s < inner; ++s) {
        const std::size_t base = o * n * inner + s;
        T dot = 0;
        for (std::size_t c = 0; c < n; ++c) dot += self.grad[base + c * inner] * self.value[base + c * inner];
        for (std::size_t c = 0; c < n; ++c) {
          const std::size_t i = base + c * inner;
          g[i] += self.value[i] * (self.grad[i] - dot);
        }
      }
    }
  });
}

/// Zeroes whole channels with probability p and rescales survivors by 1 / (1 - p)
/// in training mode; identity otherwise.
template <class T>
Tensor<T> spatial_dropout(const Tensor<T>& x, double p, Rng& rng, bool training) {
  detail::require_nchw(x, "spatial_dropout");
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw Error(ErrorCode::InvalidParams, "dropout probability must be < 1");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  std::vector<T> keep(static_cast<std::size_t>(n) * c);
  const T survivor = T(1.0 / (1.0 - p));
  for (auto& k : keep) k = rng.bernoulli(p) ? T(0) : survivor;
  std::vector<T> out(x.numel());
  for (std::size_t nc = 0; nc < keep.size(); ++nc) {
    for (std::size_t i = 0; i < plane; ++i) out[nc * plane + i] = x.data()[nc * plane + i] * keep[nc];
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [keep = std::move(keep), plane](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t nc = 0; nc < keep.size(); ++nc) {
      for (std::size_t i = 0; i < plane; ++i) g[nc * plane + i] += self.grad[nc * plane + i] * keep[nc];
    }
  });
}

// ---------------------------------------------------------------- reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  return make_result<T>({1}, {s}, {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(std::max<std::size_t>(1, x.numel())));
}

/// Sum of x * w with a constant weight array (random projections in tests).
template <class T>
Tensor<T> weighted_sum(const Tensor<T>& x, const std::vector<T>& weights) {
  detail::require(weights.size() == x.numel(), "weighted_sum weight count");
  T s = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += x.data()[i] * weights[i];
  return make_result<T>({1}, {s}, {x}, [weights](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * weights[i];
  });
}

// ---------------------------------------------------------------- layout

/// Concatenation along an axis.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  detail::require(!xs.empty(), "concat of nothing");
  const Shape& ref = xs.front().shape();
  detail::require(axis >= 0 && axis < static_cast<int>(ref.size()), "concat axis out of range");
  Shape shape = ref;
  shape[axis] = 0;
  for (const auto& x : xs) {
    detail::require(x.rank() == static_cast<int>(ref.size()), "concat rank mismatch");
    for (int i = 0; i < x.rank(); ++i) {
      if (i != axis) detail::require(x.dim(i) == ref[i], "concat " + shape_str(x.shape()) + " vs " + shape_str(ref));
    }
    shape[axis] += x.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= ref[i];
  for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
  const std::size_t out_axis = shape[axis];
  std::vector<T> out(numel_of(shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& x : xs) {
    offsets.push_back(off);
    const std::size_t len = static_cast<std::size_t>(x.dim(axis)) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(x.data().begin() + o * len, len, out.begin() + o * out_axis * inner + off * inner);
    }
    off += x.dim(axis);
  }
  return make_result<T>(shape, std::move(out), xs, [outer, inner, out_axis, offsets](Node<T>& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      const std::size_t len = g.size() / outer;
      for (std::size_t o = 0; o < outer; ++o) {
        const T* src = self.grad.data() + o * out_axis * inner + offsets[k] * inner;
        T* dst = g.data() + o * len;
        for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
      }
    }
  });
}

namespace detail {
// Index of input element feeding output (n, c, y, x) of a pixel shuffle with factor r.
inline std::size_t shuffle_source(int n, int c, int y, int x, int c_in, int h_in, int w_in, int r) {
  const int ci = c * r * r + (y % r) * r + (x % r);
  return ((static_cast<std::size_t>(n) * c_in + ci) * h_in + y / r) * w_in + x / r;
}
}  // namespace detail

/// (N, C r^2, H, W) -> (N, C, H r, W r).
template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
  detail::require_nchw(x, "pixel_shuffle");
  detail::require(r >= 1 && x.dim(1) % (r * r) == 0, "pixel_shuffle channels not divisible by r^2");
  const int n = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int c = c_in / (r * r);
  Shape shape{n, c, h * r, w * r};
  std::vector<std::size_t> src(numel_of(shape));
  std::size_t i = 0;
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h * r; ++y)
        for (int xx = 0; xx < w * r; ++xx) src[i++] = detail::shuffle_source(b, ch, y, xx, c_in, h, w, r);
  std::vector<T> out(src.size());
  for (std::size_t k = 0; k < src.size(); ++k) out[k] = x.data()[src[k]];
  return make_result<T>(shape, std::move(out), {x}, [src = std::move(src)](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t k = 0; k < src.size(); ++k) g[src[k]] += self.grad[k];
  });
}

/// Inverse of pixel_shuffle: (N, C, H r, W r) -> (N, C r^2, H, W).
template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r) {
  detail::require_nchw(x, "pixel_unshuffle");
  detail::require(r >= 1 && x.dim(2) % r == 0 && x.dim(3) % r == 0, "pixel_unshuffle size not divisible by r");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2) / r, w = x.dim(3) / r;
  const int c_out = c * r * r;
  Shape shape{n, c_out, h, w};
  std::vector<std::size_t> dst(x.numel());
  std::size_t i = 0;
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h * r; ++y)
        for (int xx = 0; xx < w * r; ++xx) dst[i++] = detail::shuffle_source(b, ch, y, xx, c_out, h, w, r);
  std::vector<T> out(x.numel());
  for (std::size_t k = 0; k < dst.size(); ++k) out[dst[k]] = x.data()[k];
  return make_result<T>(shape, std::move(out), {x}, [dst = std::move(dst)](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t k = 0; k < dst.size(); ++k) g[k] += self.grad[dst[k]];
  });
}

/// Column window of an N x C x H x W tensor.
template <class T>
Tensor<T> crop_width(const Tensor<T>& x, int col0, int cols) {
  detail::require_nchw(x, "crop_width");
  detail::require(col0 >= 0 && cols >= 1 && col0 + cols <= x.dim(3), "crop_width out of range");
  const std::size_t rows = static_cast<std::size_t>(x.dim(0)) * x.dim(1) * x.dim(2);
  const int w = x.dim(3);
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.data().begin() + r * w + col0, cols, out.begin() + r * cols);
  return make_result<T>({x.dim(0), x.dim(1), x.dim(2), cols}, std::move(out), {x},
                        [rows, w, col0, cols](Node<T>& self) {
                          auto& g = self.parents[0]->grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r)
                            for (int k = 0; k < cols; ++k) g[r * w + col0 + k] += self.grad[r * cols + k];
                        });
}

// ---------------------------------------------------------------- pooling

template <class T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int kernel, int stride) {
  detail::require_nchw(x, "avg_pool2d");
  detail::require(kernel >= 1 && stride >= 1 && x.dim(2) >= kernel && x.dim(3) >= kernel, "avg_pool2d geometry");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;
  const T inv = T(1) / static_cast<T>(kernel * kernel);
  std::vector<T> out(static_cast<std::size_t>(n) * c * ho * wo, T(0));
  const auto in = x.data();
  for (std::size_t plane = 0; plane < static_cast<std::size_t>(n) * c; ++plane) {
    const T* src = in.data() + plane * h * w;
    T* dst = out.data() + plane * ho * wo;
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        T s = 0;
        for (int ky = 0; ky < kernel; ++ky)
          for (int kx = 0; kx < kernel; ++kx) s += src[(oy * stride + ky) * w + ox * stride + kx];
        dst[oy * wo + ox] = s * inv;
      }
  }
  return make_result<T>({n, c, ho, wo}, std::move(out), {x}, [=](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t plane = 0; plane < static_cast<std::size_t>(n) * c; ++plane) {
      T* dst = g.data() + plane * h * w;
      const T* src = self.grad.data() + plane * ho * wo;
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          const T v = src[oy * wo + ox] * inv;
          for (int ky = 0; ky < kernel; ++ky)
            for (int kx = 0; kx < kernel; ++kx) dst[(oy * stride + ky) * w + ox * stride + kx] += v;
        }
    }
  });
}

// ---------------------------------------------------------------- convolution

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

namespace detail {

struct ConvGeometry {
  int c_in, h, w, kh, kw, ho, wo;
  Conv2dOptions opt;

  std::size_t rows() const { return static_cast<std::size_t>(c_in) * kh * kw; }
  std::size_t cols() const { return static_cast<std::size_t>(ho) * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && opt.stride == 1 && opt.padding == 0; }
};

template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t n_cols = g.cols();
  for (int c = 0; c < g.c_in; ++c)
    for (int ky = 0; ky < g.kh; ++ky)
      for (int kx = 0; kx < g.kw; ++kx) {
        T* row = cols + ((static_cast<std::size_t>(c) * g.kh + ky) * g.kw + kx) * n_cols;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.opt.stride - g.opt.padding + ky * g.opt.dilation;
          T* dst = row + static_cast<std::size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(dst, g.wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.opt.stride - g.opt.padding + kx * g.opt.dilation;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
}

template <class T>
void col2im(const T* cols, const ConvGeometry& g, T* x) {
  const std::size_t n_cols = g.cols();
  for (int c = 0; c < g.c_in; ++c)
    for (int ky = 0; ky < g.kh; ++ky)
      for (int kx = 0; kx < g.kw; ++kx) {
        const T* row = cols + ((static_cast<std::size_t>(c) * g.kh + ky) * g.kw + kx) * n_cols;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.opt.stride - g.opt.padding + ky * g.opt.dilation;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * g.wo;
          T* dst = x + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.opt.stride - g.opt.padding + kx * g.opt.dilation;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
}

template <class T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buffer;
  return buffer;
}

}  // namespace detail

/// Cross-correlation with zero padding. weight is C_out x C_in x kh x kw; bias
/// (optional, length C_out) may be an undefined tensor.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dOptions opt = {}) {
  detail::require_nchw(x, "conv2d input");
  detail::require(weight.defined() && weight.rank() == 4, "conv2d weight must be C_out x C_in x kh x kw");
  detail::require(weight.dim(1) == x.dim(1), "conv2d channel mismatch: input " + shape_str(x.shape()) +
                                                 ", weight " + shape_str(weight.shape()));
  detail::require(!bias.defined() || (bias.numel() == static_cast<std::size_t>(weight.dim(0))),
                  "conv2d bias length");
  detail::require(opt.stride >= 1 && opt.dilation >= 1 && opt.padding >= 0, "conv2d options");
  const int n = x.dim(0), c_out = weight.dim(0);
  detail::ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), weight.dim(2), weight.dim(3), 0, 0, opt};
  g.ho = (g.h + 2 * opt.padding - opt.dilation * (g.kh - 1) - 1) / opt.stride + 1;
  g.wo = (g.w + 2 * opt.padding - opt.dilation * (g.kw - 1) - 1) / opt.stride + 1;
  detail::require(g.ho >= 1 && g.wo >= 1, "conv2d output would be empty");

  const std::size_t in_plane = static_cast<std::size_t>(g.c_in) * g.h * g.w;
  const std::size_t out_plane = static_cast<std::size_t>(c_out) * g.cols();
  std::vector<T> out(static_cast<std::size_t>(n) * out_plane);
  ConstMatrixMap<T> wmat(weight.data().data(), c_out, static_cast<Eigen::Index>(g.rows()));
  auto& cols = detail::scratch<T>();
  for (int b = 0; b < n; ++b) {
    const T* xb = x.data().data() + b * in_plane;
    MatrixMap<T> y(out.data() + b * out_plane, c_out, static_cast<Eigen::Index>(g.cols()));
    if (g.pointwise()) {
      y.noalias() = wmat * ConstMatrixMap<T>(xb, g.c_in, static_cast<Eigen::Index>(g.cols()));
    } else {
      cols.resize(g.rows() * g.cols());
      detail::im2col(xb, g, cols.data());
      y.noalias() = wmat * ConstMatrixMap<T>(cols.data(), static_cast<Eigen::Index>(g.rows()),
                                             static_cast<Eigen::Index>(g.cols()));
    }
    if (bias.defined()) {
      for (int o = 0; o < c_out; ++o) y.row(o).array() += bias.data()[o];
    }
  }

  return make_result<T>({n, c_out, g.ho, g.wo}, std::move(out), {x, weight, bias.defined() ? bias : weight},
                        [g, n, c_out, in_plane, out_plane, has_bias = bias.defined()](Node<T>& self) {
                          auto& px = self.parents[0];
                          auto& pw = self.parents[1];
                          auto& pb = self.parents[2];
                          ConstMatrixMap<T> wmat(pw->value.data(), c_out, static_cast<Eigen::Index>(g.rows()));
                          auto& cols = detail::scratch<T>();
                          std::vector<T> dcols;
                          for (int b = 0; b < n; ++b) {
                            ConstMatrixMap<T> dy(self.grad.data() + b * out_plane, c_out,
                                                 static_cast<Eigen::Index>(g.cols()));
                            const T* xb = px->value.data() + b * in_plane;
                            if (pw->requires_grad) {
                              MatrixMap<T> dw(pw->grad_buffer().data(), c_out, static_cast<Eigen::Index>(g.rows()));
                              if (g.pointwise()) {
                                dw.noalias() +=
                                    dy * ConstMatrixMap<T>(xb, g.c_in, static_cast<Eigen::Index>(g.cols())).transpose();
                              } else {
                                cols.resize(g.rows() * g.cols());
                                detail::im2col(xb, g, cols.data());
                                dw.noalias() += dy * ConstMatrixMap<T>(cols.data(), static_cast<Eigen::Index>(g.rows()),
                                                                       static_cast<Eigen::Index>(g.cols()))
                                                         .transpose();
                              }
                            }
                            if (has_bias && pb->requires_grad) {
                              auto& db = pb->grad_buffer();
                              for (int o = 0; o < c_out; ++o) {
                                T acc = 0;
                                for (Eigen::Index j = 0; j < dy.cols(); ++j) acc += dy(o, j);
                                db[o] += acc;
                              }
                            }
                            if (px->requires_grad) {
                              T* dx = px->grad_buffer().data() + b * in_plane;
                              if (g.pointwise()) {
                                MatrixMap<T>(dx, g.c_in, static_cast<Eigen::Index>(g.cols())).noalias() +=
                                    wmat.transpose() * dy;
                              } else {
                                dcols.resize(g.rows() * g.cols());
                                MatrixMap<T>(dcols.data(), static_cast<Eigen::Index>(g.rows()),
                                             static_cast<Eigen::Index>(g.cols()))
                                    .noalias() = wmat.transpose() * dy;
                                detail::col2im(dcols.data(), g, dx);
                              }
                            }
                          }
                        });
}

// ---------------------------------------------------------------- batch norm

/// Running statistics owned by a batch-norm layer.
template <class T>
struct BatchNormStats {
  std::vector<T> mean;
  std::vector<T> var;
};

/// Per-channel normalization over (N, H, W). Training mode normalizes with
/// batch statistics (biased variance) and folds them into the running stats
/// with the given momentum (unbiased variance); eval mode uses running stats.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormStats<T>& stats,
                     bool training, T momentum = T(0.1), T eps = T(1e-5)) {
  detail::require_nchw(x, "batch_norm");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  detail::require(gamma.numel() == static_cast<std::size_t>(c) && beta.numel() == static_cast<std::size_t>(c),
                  "batch_norm affine parameter length");
  detail::require(stats.mean.size() == static_cast<std::size_t>(c) && stats.var.size() == static_cast<std::size_t>(c),
                  "batch_norm running statistics length");
  const std::size_t m = static_cast<std::size_t>(n) * plane;
  std::vector<T> mu(c), inv_std(c);
  const auto in = x.data();
  if (training) {
    for (int ch = 0; ch < c; ++ch) {
      T s = 0;
      for (int b = 0; b < n; ++b) {
        const T* p = in.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const T mean_v = s / static_cast<T>(m);
      T ss = 0;
      for (int b = 0; b < n; ++b) {
        const T* p = in.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) ss += (p[i] - mean_v) * (p[i] - mean_v);
      }
      const T var_v = ss / static_cast<T>(m);
      mu[ch] = mean_v;
      inv_std[ch] = T(1) / std::sqrt(var_v + eps);
      const T unbiased = m > 1 ? ss / static_cast<T>(m - 1) : var_v;
      stats.mean[ch] = (T(1) - momentum) * stats.mean[ch] + momentum * mean_v;
      stats.var[ch] = (T(1) - momentum) * stats.var[ch] + momentum * unbiased;
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mu[ch] = stats.mean[ch];
      inv_std[ch] = T(1) / std::sqrt(stats.var[ch] + eps);
    }
  }
  std::vector<T> out(x.numel());
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
      const T scale_v = gamma.data()[ch] * inv_std[ch];
      const T shift = beta.data()[ch] - mu[ch] * scale_v;
      for (std::size_t i = 0; i < plane; ++i) out[off + i] = in[off + i] * scale_v + shift;
    }
  return make_result<T>(x.shape(), std::move(out), {x, gamma, beta},
                        [=, mu = std::move(mu), inv_std = std::move(inv_std)](Node<T>& self) {
                          auto& px = self.parents[0];
                          auto& pg = self.parents[1];
                          auto& pbeta = self.parents[2];
                          for (int ch = 0; ch < c; ++ch) {
                            T sum_dy = 0, sum_dy_xhat = 0;
                            for (int b = 0; b < n; ++b) {
                              const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
                              for (std::size_t i = 0; i < plane; ++i) {
                                const T xhat = (px->value[off + i] - mu[ch]) * inv_std[ch];
                                sum_dy += self.grad[off + i];
                                sum_dy_xhat += self.grad[off + i] * xhat;
                              }
                            }
                            if (pg->requires_grad) pg->grad_buffer()[ch] += sum_dy_xhat;
                            if (pbeta->requires_grad) pbeta->grad_buffer()[ch] += sum_dy;
                            if (!px->requires_grad) continue;
                            auto& dx = px->grad_buffer();
                            const T g_ch = pg->value[ch];
                            for (int b = 0; b < n; ++b) {
                              const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
                              if (training) {
                                const T k = g_ch * inv_std[ch] / static_cast<T>(m);
                                for (std::size_t i = 0; i < plane; ++i) {
                                  const T xhat = (px->value[off + i] - mu[ch]) * inv_std[ch];
                                  dx[off + i] += k * (static_cast<T>(m) * self.grad[off + i] - sum_dy - xhat * sum_dy_xhat);
                                }
                              } else {
                                for (std::size_t i = 0; i < plane; ++i) dx[off + i] += g_ch * inv_std[ch] * self.grad[off + i];
                              }
                            }
                          }
                        });
}

}  // namespace denoise4d::nn
