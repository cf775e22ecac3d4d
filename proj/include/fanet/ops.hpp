#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "fanet/tensor.hpp"

// Primitive tensor operations with registered backward rules. Feature maps
// are N,C,H,W row-major. Conventions pinned here so downstream numbers are
// stable:
//   - conv2d output extent is floor((H + 2*pad - k) / stride) + 1; a trailing
//     partial stride step is dropped
//   - maxpool2d ties break to the first window element in row-major order
//   - upsample_bilinear2x samples at half-pixel centers ((i+0.5)/2 - 0.5)
//   - batchnorm2d: eps 1e-5, running momentum 0.1, biased variance for
//     normalization, unbiased for the running estimate

namespace fanet {

namespace detail {

// C(m x n) += A(m x k) * B(k x n), row-major.
template <typename T>
inline void gemm_acc(int64_t m, int64_t k, int64_t n, const T* A, const T* B,
                     T* C) {
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = A + i * k;
    T* crow = C + i * n;
    for (int64_t p = 0; p < k; ++p) {
      T a = arow[p];
      const T* brow = B + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  }
}

// C(m x n) += A(m x k) * B^T, with B stored (n x k).
template <typename T>
inline void gemm_nt_acc(int64_t m, int64_t k, int64_t n, const T* A,
                        const T* B, T* C) {
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = A + i * k;
    T* crow = C + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const T* brow = B + j * k;
      T acc = 0;
      for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C(m x n) += A^T * B, with A stored (k x m), B stored (k x n).
template <typename T>
inline void gemm_tn_acc(int64_t m, int64_t k, int64_t n, const T* A,
                        const T* B, T* C) {
  for (int64_t p = 0; p < k; ++p) {
    const T* arow = A + p * m;
    const T* brow = B + p * n;
    for (int64_t i = 0; i < m; ++i) {
      T a = arow[i];
      T* crow = C + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  }
}

template <typename T>
inline void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t k,
                   int64_t stride, int64_t pad, int64_t OH, int64_t OW,
                   T* cols) {
  int64_t row = 0;
  for (int64_t c = 0; c < C; ++c) {
    const T* src = x + c * H * W;
    for (int64_t dy = 0; dy < k; ++dy) {
      for (int64_t dx = 0; dx < k; ++dx, ++row) {
        T* dst = cols + row * OH * OW;
        int64_t idx = 0;
        for (int64_t oy = 0; oy < OH; ++oy) {
          int64_t iy = oy * stride + dy - pad;
          if (iy < 0 || iy >= H) {
            for (int64_t ox = 0; ox < OW; ++ox) dst[idx++] = T(0);
            continue;
          }
          const T* srow = src + iy * W;
          for (int64_t ox = 0; ox < OW; ++ox) {
            int64_t ix = ox * stride + dx - pad;
            dst[idx++] = (ix < 0 || ix >= W) ? T(0) : srow[ix];
          }
        }
      }
    }
  }
}

template <typename T>
inline void col2im_add(const T* cols, int64_t C, int64_t H, int64_t W,
                       int64_t k, int64_t stride, int64_t pad, int64_t OH,
                       int64_t OW, T* x) {
  int64_t row = 0;
  for (int64_t c = 0; c < C; ++c) {
    T* dst = x + c * H * W;
    for (int64_t dy = 0; dy < k; ++dy) {
      for (int64_t dx = 0; dx < k; ++dx, ++row) {
        const T* src = cols + row * OH * OW;
        int64_t idx = 0;
        for (int64_t oy = 0; oy < OH; ++oy) {
          int64_t iy = oy * stride + dy - pad;
          if (iy < 0 || iy >= H) {
            idx += OW;
            continue;
          }
          T* drow = dst + iy * W;
          for (int64_t ox = 0; ox < OW; ++ox, ++idx) {
            int64_t ix = ox * stride + dx - pad;
            if (ix >= 0 && ix < W) drow[ix] += src[idx];
          }
        }
      }
    }
  }
}

template <typename T>
inline void check_same_shape(const char* op, const Tensor<T>& a,
                             const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
inline void check_4d(const char* op, const Tensor<T>& x) {
  if (x.ndim() != 4)
    throw ShapeError(std::string(op) + ": expected N,C,H,W input, got " +
                     shape_str(x.shape()));
}

template <typename T>
inline T stable_sigmoid(T v) {
  if (v >= T(0)) {
    T e = std::exp(-v);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(v);
  return e / (T(1) + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise / linear suite
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("add", a, b);
  std::vector<T> v(a.values().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
  return Tensor<T>::make_op(
      a.shape(), std::move(v), "add", {a, b},
      [a, b](const TensorData<T>& out) {
        accumulate_grad(a, out.grad);
        accumulate_grad(b, out.grad);
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("sub", a, b);
  std::vector<T> v(a.values().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] - b.values()[i];
  return Tensor<T>::make_op(
      a.shape(), std::move(v), "sub", {a, b},
      [a, b](const TensorData<T>& out) {
        accumulate_grad(a, out.grad);
        if (b.requires_grad()) {
          std::vector<T>& g = b.grad();
          for (size_t i = 0; i < g.size(); ++i) g[i] -= out.grad[i];
        }
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("mul", a, b);
  std::vector<T> v(a.values().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
  return Tensor<T>::make_op(
      a.shape(), std::move(v), "mul", {a, b},
      [a, b](const TensorData<T>& out) {
        if (a.requires_grad()) {
          std::vector<T>& g = a.grad();
          for (size_t i = 0; i < g.size(); ++i)
            g[i] += out.grad[i] * b.values()[i];
        }
        if (b.requires_grad()) {
          std::vector<T>& g = b.grad();
          for (size_t i = 0; i < g.size(); ++i)
            g[i] += out.grad[i] * a.values()[i];
        }
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double c) {
  T cc = static_cast<T>(c);
  std::vector<T> v(x.values().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = cc * x.values()[i];
  return Tensor<T>::make_op(
      x.shape(), std::move(v), "scale", {x},
      [x, cc](const TensorData<T>& out) {
        if (x.requires_grad()) {
          std::vector<T>& g = x.grad();
          for (size_t i = 0; i < g.size(); ++i) g[i] += cc * out.grad[i];
        }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> v(x.values().size());
  for (size_t i = 0; i < v.size(); ++i)
    v[i] = x.values()[i] > T(0) ? x.values()[i] : T(0);
  return Tensor<T>::make_op(
      x.shape(), std::move(v), "relu", {x},
      [x](const TensorData<T>& out) {
        if (!x.requires_grad()) return;
        std::vector<T>& g = x.grad();
        for (size_t i = 0; i < g.size(); ++i)
          if (x.values()[i] > T(0)) g[i] += out.grad[i];
      });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> v(x.values().size());
  for (size_t i = 0; i < v.size(); ++i)
    v[i] = detail::stable_sigmoid(x.values()[i]);
  return Tensor<T>::make_op(
      x.shape(), std::move(v), "sigmoid", {x},
      [x](const TensorData<T>& out) {
        if (!x.requires_grad()) return;
        std::vector<T>& g = x.grad();
        for (size_t i = 0; i < g.size(); ++i) {
          T y = out.values[i];
          g[i] += out.grad[i] * y * (T(1) - y);
        }
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.values()) acc += v;
  return Tensor<T>::make_op(
      {1}, {acc}, "sum", {x},
      [x](const TensorData<T>& out) {
        if (!x.requires_grad()) return;
        std::vector<T>& g = x.grad();
        T og = out.grad[0];
        for (size_t i = 0; i < g.size(); ++i) g[i] += og;
      });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> v(static_cast<size_t>(m * n), T(0));
  detail::gemm_acc(m, k, n, a.values().data(), b.values().data(), v.data());
  return Tensor<T>::make_op(
      {m, n}, std::move(v), "matmul", {a, b},
      [a, b, m, k, n](const TensorData<T>& out) {
        if (a.requires_grad())
          detail::gemm_nt_acc(m, n, k, out.grad.data(), b.values().data(),
                              a.grad().data());
        if (b.requires_grad())
          detail::gemm_tn_acc(k, m, n, a.values().data(), out.grad.data(),
                              b.grad().data());
      });
}

template <typename T>
Tensor<T> matvec(const Tensor<T>& a, const Tensor<T>& v) {
  if (a.ndim() != 2 || v.ndim() != 1 || a.dim(1) != v.dim(0))
    throw ShapeError("matvec: incompatible shapes " + shape_str(a.shape()) +
                     " x " + shape_str(v.shape()));
  int64_t m = a.dim(0), k = a.dim(1);
  std::vector<T> y(static_cast<size_t>(m), T(0));
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a.values().data() + i * k;
    T acc = 0;
    for (int64_t p = 0; p < k; ++p) acc += arow[p] * v.values()[p];
    y[static_cast<size_t>(i)] = acc;
  }
  return Tensor<T>::make_op(
      {m}, std::move(y), "matvec", {a, v},
      [a, v, m, k](const TensorData<T>& out) {
        if (a.requires_grad()) {
          std::vector<T>& g = a.grad();
          for (int64_t i = 0; i < m; ++i)
            for (int64_t p = 0; p < k; ++p)
              g[i * k + p] += out.grad[i] * v.values()[p];
        }
        if (v.requires_grad()) {
          std::vector<T>& g = v.grad();
          for (int64_t i = 0; i < m; ++i)
            for (int64_t p = 0; p < k; ++p)
              g[p] += out.grad[i] * a.values()[i * k + p];
        }
      });
}

// Fully connected layer on per-sample feature vectors: y = x W^T with
// x [N, in] and W [out, in]. No bias term.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
  if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(1))
    throw ShapeError("linear: incompatible shapes x " + shape_str(x.shape()) +
                     ", w " + shape_str(w.shape()));
  int64_t n = x.dim(0), in = x.dim(1), out_f = w.dim(0);
  std::vector<T> y(static_cast<size_t>(n * out_f), T(0));
  detail::gemm_nt_acc(n, in, out_f, x.values().data(), w.values().data(),
                      y.data());
  return Tensor<T>::make_op(
      {n, out_f}, std::move(y), "linear", {x, w},
      [x, w, n, in, out_f](const TensorData<T>& out) {
        if (x.requires_grad())
          detail::gemm_acc(n, out_f, in, out.grad.data(), w.values().data(),
                           x.grad().data());
        if (w.requires_grad())
          detail::gemm_tn_acc(out_f, n, in, out.grad.data(), x.values().data(),
                              w.grad().data());
      });
}

// Channel concatenation; the first argument's channels come first.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_4d("concat_channels", a);
  detail::check_4d("concat_channels", b);
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError("concat_channels: shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<T> v(static_cast<size_t>(n * (ca + cb) * hw));
  for (int64_t i = 0; i < n; ++i) {
    std::copy_n(a.values().data() + i * ca * hw, ca * hw,
                v.data() + i * (ca + cb) * hw);
    std::copy_n(b.values().data() + i * cb * hw, cb * hw,
                v.data() + i * (ca + cb) * hw + ca * hw);
  }
  return Tensor<T>::make_op(
      {n, ca + cb, a.dim(2), a.dim(3)}, std::move(v), "concat_channels",
      {a, b}, [a, b, n, ca, cb, hw](const TensorData<T>& out) {
        for (int64_t i = 0; i < n; ++i) {
          const T* og = out.grad.data() + i * (ca + cb) * hw;
          if (a.requires_grad()) {
            T* ga = a.grad().data() + i * ca * hw;
            for (int64_t j = 0; j < ca * hw; ++j) ga[j] += og[j];
          }
          if (b.requires_grad()) {
            T* gb = b.grad().data() + i * cb * hw;
            for (int64_t j = 0; j < cb * hw; ++j) gb[j] += og[ca * hw + j];
          }
        }
      });
}

// Per-channel broadcast multiply: out[n,c,i,j] = x[n,c,i,j] * s[n,c].
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s) {
  detail::check_4d("channel_scale", x);
  if (s.ndim() != 2 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1))
    throw ShapeError("channel_scale: scale shape " + shape_str(s.shape()) +
                     " does not match input " + shape_str(x.shape()));
  int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> v(x.values().size());
  for (int64_t i = 0; i < n * c; ++i) {
    T sc = s.values()[static_cast<size_t>(i)];
    const T* src = x.values().data() + i * hw;
    T* dst = v.data() + i * hw;
    for (int64_t j = 0; j < hw; ++j) dst[j] = sc * src[j];
  }
  return Tensor<T>::make_op(
      x.shape(), std::move(v), "channel_scale", {x, s},
      [x, s, n, c, hw](const TensorData<T>& out) {
        for (int64_t i = 0; i < n * c; ++i) {
          const T* og = out.grad.data() + i * hw;
          if (x.requires_grad()) {
            T sc = s.values()[static_cast<size_t>(i)];
            T* gx = x.grad().data() + i * hw;
            for (int64_t j = 0; j < hw; ++j) gx[j] += sc * og[j];
          }
          if (s.requires_grad()) {
            const T* xs = x.values().data() + i * hw;
            T acc = 0;
            for (int64_t j = 0; j < hw; ++j) acc += og[j] * xs[j];
            s.grad()[static_cast<size_t>(i)] += acc;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Spatial ops
// ---------------------------------------------------------------------------

// 2-D cross-correlation with zero padding. Output extent is
// floor((H + 2*pad - k)/stride) + 1; a trailing partial step is dropped,
// which strided attachments rely on for odd extents.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int64_t stride, int64_t padding) {
  detail::check_4d("conv2d", x);
  if (w.ndim() != 4)
    throw ShapeError("conv2d: weight must be [Cout,Cin,k,k], got " +
                     shape_str(w.shape()));
  int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), ww = x.dim(3);
  int64_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin)
    throw ShapeError("conv2d: input channels " + std::to_string(cin) +
                     " != weight channels " + std::to_string(w.dim(1)) +
                     " (input " + shape_str(x.shape()) + ", weight " +
                     shape_str(w.shape()) + ")");
  if (w.dim(3) != k || (k != 1 && k != 3))
    throw ConfigError("conv2d: kernel must be 1x1 or 3x3, got " +
                      shape_str(w.shape()));
  if (b.ndim() != 1 || b.dim(0) != cout)
    throw ShapeError("conv2d: bias shape " + shape_str(b.shape()) +
                     " != [" + std::to_string(cout) + "]");
  if (stride < 1 || padding < 0)
    throw ConfigError("conv2d: invalid stride/padding " +
                      std::to_string(stride) + "/" + std::to_string(padding));
  int64_t oh = (h + 2 * padding - k) / stride + 1;
  int64_t ow = (ww + 2 * padding - k) / stride + 1;
  if (h + 2 * padding < k || ww + 2 * padding < k || oh < 1 || ow < 1)
    throw ConfigError("conv2d: empty output for input " +
                      shape_str(x.shape()) + ", kernel " +
                      std::to_string(k) + ", stride " + std::to_string(stride) +
                      ", padding " + std::to_string(padding));

  int64_t ckk = cin * k * k, ohw = oh * ow;
  std::vector<T> cols(static_cast<size_t>(ckk * ohw));
  std::vector<T> y(static_cast<size_t>(n * cout * ohw), T(0));
  for (int64_t i = 0; i < n; ++i) {
    detail::im2col(x.values().data() + i * cin * h * ww, cin, h, ww, k, stride,
                   padding, oh, ow, cols.data());
    T* yrow = y.data() + i * cout * ohw;
    detail::gemm_acc(cout, ckk, ohw, w.values().data(), cols.data(), yrow);
    for (int64_t co = 0; co < cout; ++co) {
      T bias = b.values()[static_cast<size_t>(co)];
      T* dst = yrow + co * ohw;
      for (int64_t j = 0; j < ohw; ++j) dst[j] += bias;
    }
  }
  return Tensor<T>::make_op(
      {n, cout, oh, ow}, std::move(y), "conv2d", {x, w, b},
      [x, w, b, n, cin, h, ww, cout, k, stride, padding, oh,
       ow](const TensorData<T>& out) {
        int64_t ckk = cin * k * k, ohw = oh * ow;
        std::vector<T> cols(static_cast<size_t>(ckk * ohw));
        std::vector<T> dcols;
        if (x.requires_grad()) dcols.resize(static_cast<size_t>(ckk * ohw));
        for (int64_t i = 0; i < n; ++i) {
          const T* og = out.grad.data() + i * cout * ohw;
          if (w.requires_grad() || x.requires_grad())
            detail::im2col(x.values().data() + i * cin * h * ww, cin, h, ww, k,
                           stride, padding, oh, ow, cols.data());
          if (w.requires_grad())
            detail::gemm_nt_acc(cout, ohw, ckk, og, cols.data(),
                                w.grad().data());
          if (b.requires_grad()) {
            std::vector<T>& gb = b.grad();
            for (int64_t co = 0; co < cout; ++co) {
              const T* src = og + co * ohw;
              T acc = 0;
              for (int64_t j = 0; j < ohw; ++j) acc += src[j];
              gb[static_cast<size_t>(co)] += acc;
            }
          }
          if (x.requires_grad()) {
            std::fill(dcols.begin(), dcols.end(), T(0));
            detail::gemm_tn_acc(ckk, cout, ohw, w.values().data(), og,
                                dcols.data());
            detail::col2im_add(dcols.data(), cin, h, ww, k, stride, padding,
                               oh, ow, x.grad().data() + i * cin * h * ww);
          }
        }
      });
}

// 2x2 max pooling with stride 2. Gradient routes to the argmax; ties go to
// the first window element in row-major order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x) {
  detail::check_4d("maxpool2d", x);
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("maxpool2d: spatial extents must be even, got " +
                     shape_str(x.shape()));
  int64_t oh = h / 2, ow = w / 2;
  std::vector<T> y(static_cast<size_t>(n * c * oh * ow));
  auto argmax = std::make_shared<std::vector<int64_t>>(y.size());
  int64_t oi = 0;
  for (int64_t p = 0; p < n * c; ++p) {
    const T* plane = x.values().data() + p * h * w;
    for (int64_t oy = 0; oy < oh; ++oy) {
      for (int64_t ox = 0; ox < ow; ++ox, ++oi) {
        int64_t base = (2 * oy) * w + 2 * ox;
        int64_t best = base;
        T bv = plane[base];
        const int64_t cand[3] = {base + 1, base + w, base + w + 1};
        for (int64_t j : cand) {
          if (plane[j] > bv) {
            bv = plane[j];
            best = j;
          }
        }
        y[static_cast<size_t>(oi)] = bv;
        (*argmax)[static_cast<size_t>(oi)] = p * h * w + best;
      }
    }
  }
  return Tensor<T>::make_op(
      {n, c, oh, ow}, std::move(y), "maxpool2d", {x},
      [x, argmax](const TensorData<T>& out) {
        if (!x.requires_grad()) return;
        std::vector<T>& g = x.grad();
        for (size_t i = 0; i < out.grad.size(); ++i)
          g[static_cast<size_t>((*argmax)[i])] += out.grad[i];
      });
}

namespace detail {

// Source indices and weights for one doubled axis, half-pixel convention.
struct LerpAxis {
  std::vector<int64_t> i0, i1;
  std::vector<double> w1;  // weight of i1; i0 gets 1 - w1
};

inline LerpAxis lerp_axis_x2(int64_t in_extent) {
  LerpAxis ax;
  int64_t out_extent = in_extent * 2;
  ax.i0.resize(static_cast<size_t>(out_extent));
  ax.i1.resize(static_cast<size_t>(out_extent));
  ax.w1.resize(static_cast<size_t>(out_extent));
  for (int64_t o = 0; o < out_extent; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    double f = std::floor(src);
    int64_t lo = static_cast<int64_t>(f);
    double w = src - f;
    int64_t hi = lo + 1;
    lo = std::clamp<int64_t>(lo, 0, in_extent - 1);
    hi = std::clamp<int64_t>(hi, 0, in_extent - 1);
    ax.i0[static_cast<size_t>(o)] = lo;
    ax.i1[static_cast<size_t>(o)] = hi;
    ax.w1[static_cast<size_t>(o)] = w;
  }
  return ax;
}

}  // namespace detail

// Bilinear x2 upsampling, half-pixel centers, edge clamped. Backward is the
// transpose of the interpolation.
template <typename T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& x) {
  detail::check_4d("upsample_bilinear2x", x);
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  int64_t oh = 2 * h, ow = 2 * w;
  detail::LerpAxis ay = detail::lerp_axis_x2(h);
  detail::LerpAxis axx = detail::lerp_axis_x2(w);
  std::vector<T> y(static_cast<size_t>(n * c * oh * ow));
  int64_t oi = 0;
  for (int64_t p = 0; p < n * c; ++p) {
    const T* plane = x.values().data() + p * h * w;
    for (int64_t oy = 0; oy < oh; ++oy) {
      const T* r0 = plane + ay.i0[static_cast<size_t>(oy)] * w;
      const T* r1 = plane + ay.i1[static_cast<size_t>(oy)] * w;
      T wy = static_cast<T>(ay.w1[static_cast<size_t>(oy)]);
      for (int64_t ox = 0; ox < ow; ++ox, ++oi) {
        int64_t x0 = axx.i0[static_cast<size_t>(ox)];
        int64_t x1 = axx.i1[static_cast<size_t>(ox)];
        T wx = static_cast<T>(axx.w1[static_cast<size_t>(ox)]);
        T top = r0[x0] + wx * (r0[x1] - r0[x0]);
        T bot = r1[x0] + wx * (r1[x1] - r1[x0]);
        y[static_cast<size_t>(oi)] = top + wy * (bot - top);
      }
    }
  }
  return Tensor<T>::make_op(
      {n, c, oh, ow}, std::move(y), "upsample_bilinear2x", {x},
      [x, n, c, h, w, oh, ow](const TensorData<T>& out) {
        if (!x.requires_grad()) return;
        detail::LerpAxis ay = detail::lerp_axis_x2(h);
        detail::LerpAxis axx = detail::lerp_axis_x2(w);
        std::vector<T>& g = x.grad();
        int64_t oi = 0;
        for (int64_t p = 0; p < n * c; ++p) {
          T* plane = g.data() + p * h * w;
          for (int64_t oy = 0; oy < oh; ++oy) {
            int64_t y0 = ay.i0[static_cast<size_t>(oy)];
            int64_t y1 = ay.i1[static_cast<size_t>(oy)];
            T wy = static_cast<T>(ay.w1[static_cast<size_t>(oy)]);
            for (int64_t ox = 0; ox < ow; ++ox, ++oi) {
              int64_t x0 = axx.i0[static_cast<size_t>(ox)];
              int64_t x1 = axx.i1[static_cast<size_t>(ox)];
              T wx = static_cast<T>(axx.w1[static_cast<size_t>(ox)]);
              T og = out.grad[static_cast<size_t>(oi)];
              plane[y0 * w + x0] += (T(1) - wy) * (T(1) - wx) * og;
              plane[y0 * w + x1] += (T(1) - wy) * wx * og;
              plane[y1 * w + x0] += wy * (T(1) - wx) * og;
              plane[y1 * w + x1] += wy * wx * og;
            }
          }
        }
      });
}

// Squeeze: out[n,c] = mean over the spatial extent of channel c.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  detail::check_4d("global_avg_pool", x);
  int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> y(static_cast<size_t>(n * c));
  for (int64_t i = 0; i < n * c; ++i) {
    const T* plane = x.values().data() + i * hw;
    T acc = 0;
    for (int64_t j = 0; j < hw; ++j) acc += plane[j];
    y[static_cast<size_t>(i)] = acc / static_cast<T>(hw);
  }
  return Tensor<T>::make_op(
      {n, c}, std::move(y), "global_avg_pool", {x},
      [x, n, c, hw](const TensorData<T>& out) {
        if (!x.requires_grad()) return;
        std::vector<T>& g = x.grad();
        T inv = T(1) / static_cast<T>(hw);
        for (int64_t i = 0; i < n * c; ++i) {
          T v = out.grad[static_cast<size_t>(i)] * inv;
          T* plane = g.data() + i * hw;
          for (int64_t j = 0; j < hw; ++j) plane[j] += v;
        }
      });
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = static_cast<T>(0.1);
  T eps = static_cast<T>(1e-5);

  static BatchNormState init(int64_t channels) {
    BatchNormState st;
    st.running_mean.assign(static_cast<size_t>(channels), T(0));
    st.running_var.assign(static_cast<size_t>(channels), T(1));
    return st;
  }
};

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma,
                      const Tensor<T>& beta, BatchNormState<T>& state,
                      bool train) {
  detail::check_4d("batchnorm2d", x);
  int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c ||
      static_cast<int64_t>(state.running_mean.size()) != c)
    throw ShapeError("batchnorm2d: parameter length mismatch for input " +
                     shape_str(x.shape()));
  int64_t m = n * hw;
  auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(c), T(0));
  auto invstd = std::make_shared<std::vector<T>>(static_cast<size_t>(c));
  if (train) {
    if (m < 2)
      throw ConfigError(
          "batchnorm2d: train mode needs at least 2 elements per channel, "
          "got " + std::to_string(m));
    for (int64_t ch = 0; ch < c; ++ch) {
      T acc = 0;
      for (int64_t i = 0; i < n; ++i) {
        const T* plane = x.values().data() + (i * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) acc += plane[j];
      }
      T mu = acc / static_cast<T>(m);
      T var = 0;
      for (int64_t i = 0; i < n; ++i) {
        const T* plane = x.values().data() + (i * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) {
          T d = plane[j] - mu;
          var += d * d;
        }
      }
      var /= static_cast<T>(m);
      (*mean)[static_cast<size_t>(ch)] = mu;
      (*invstd)[static_cast<size_t>(ch)] = T(1) / std::sqrt(var + state.eps);
      state.running_mean[static_cast<size_t>(ch)] =
          (T(1) - state.momentum) * state.running_mean[static_cast<size_t>(ch)] +
          state.momentum * mu;
      state.running_var[static_cast<size_t>(ch)] =
          (T(1) - state.momentum) * state.running_var[static_cast<size_t>(ch)] +
          state.momentum * var * static_cast<T>(m) / static_cast<T>(m - 1);
    }
  } else {
    for (int64_t ch = 0; ch < c; ++ch) {
      (*mean)[static_cast<size_t>(ch)] =
          state.running_mean[static_cast<size_t>(ch)];
      (*invstd)[static_cast<size_t>(ch)] =
          T(1) / std::sqrt(state.running_var[static_cast<size_t>(ch)] +
                           state.eps);
    }
  }

  std::vector<T> y(x.values().size());
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* src = x.values().data() + (i * c + ch) * hw;
      T* dst = y.data() + (i * c + ch) * hw;
      T mu = (*mean)[static_cast<size_t>(ch)];
      T is = (*invstd)[static_cast<size_t>(ch)];
      T ga = gamma.values()[static_cast<size_t>(ch)];
      T be = beta.values()[static_cast<size_t>(ch)];
      for (int64_t j = 0; j < hw; ++j)
        dst[j] = ga * (src[j] - mu) * is + be;
    }
  }
  return Tensor<T>::make_op(
      x.shape(), std::move(y), "batchnorm2d", {x, gamma, beta},
      [x, gamma, beta, mean, invstd, n, c, hw,
       train](const TensorData<T>& out) {
        T mt = static_cast<T>(n * hw);
        for (int64_t ch = 0; ch < c; ++ch) {
          T mu = (*mean)[static_cast<size_t>(ch)];
          T is = (*invstd)[static_cast<size_t>(ch)];
          T ga = gamma.values()[static_cast<size_t>(ch)];
          T sum_dy = 0, sum_dy_xhat = 0;
          for (int64_t i = 0; i < n; ++i) {
            const T* og = out.grad.data() + (i * c + ch) * hw;
            const T* xs = x.values().data() + (i * c + ch) * hw;
            for (int64_t j = 0; j < hw; ++j) {
              sum_dy += og[j];
              sum_dy_xhat += og[j] * (xs[j] - mu) * is;
            }
          }
          if (gamma.requires_grad())
            gamma.grad()[static_cast<size_t>(ch)] += sum_dy_xhat;
          if (beta.requires_grad())
            beta.grad()[static_cast<size_t>(ch)] += sum_dy;
          if (x.requires_grad()) {
            std::vector<T>& gx = x.grad();
            if (train) {
              T mdy = sum_dy / mt;
              T mdyx = sum_dy_xhat / mt;
              for (int64_t i = 0; i < n; ++i) {
                const T* og = out.grad.data() + (i * c + ch) * hw;
                const T* xs = x.values().data() + (i * c + ch) * hw;
                T* g = gx.data() + (i * c + ch) * hw;
                for (int64_t j = 0; j < hw; ++j) {
                  T xhat = (xs[j] - mu) * is;
                  g[j] += ga * is * (og[j] - mdy - xhat * mdyx);
                }
              }
            } else {
              for (int64_t i = 0; i < n; ++i) {
                const T* og = out.grad.data() + (i * c + ch) * hw;
                T* g = gx.data() + (i * c + ch) * hw;
                for (int64_t j = 0; j < hw; ++j) g[j] += ga * is * og[j];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// Mean per-pixel cross entropy over softmax(logits); max-subtracted for
// stability. targets holds one class id per pixel, row-major N,H,W.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits,
                                const std::vector<int32_t>& targets) {
  detail::check_4d("softmax_cross_entropy", logits);
  int64_t n = logits.dim(0), k = logits.dim(1),
          hw = logits.dim(2) * logits.dim(3);
  if (static_cast<int64_t>(targets.size()) != n * hw)
    throw ShapeError("softmax_cross_entropy: " +
                     std::to_string(targets.size()) +
                     " targets for logits " + shape_str(logits.shape()));
  auto probs = std::make_shared<std::vector<T>>(logits.values().size());
  double total = 0;
  for (int64_t i = 0; i < n; ++i) {
    const T* lb = logits.values().data() + i * k * hw;
    T* pb = probs->data() + i * k * hw;
    for (int64_t j = 0; j < hw; ++j) {
      int32_t t = targets[static_cast<size_t>(i * hw + j)];
      if (t < 0 || t >= k)
        throw DataError("softmax_cross_entropy: target id " +
                        std::to_string(t) + " out of range [0, " +
                        std::to_string(k) + ") at pixel " +
                        std::to_string(i * hw + j));
      T mx = lb[j];
      for (int64_t cc = 1; cc < k; ++cc) mx = std::max(mx, lb[cc * hw + j]);
      T denom = 0;
      for (int64_t cc = 0; cc < k; ++cc) {
        T e = std::exp(lb[cc * hw + j] - mx);
        pb[cc * hw + j] = e;
        denom += e;
      }
      for (int64_t cc = 0; cc < k; ++cc) pb[cc * hw + j] /= denom;
      total += std::log(static_cast<double>(denom)) -
               static_cast<double>(lb[t * hw + j] - mx);
    }
  }
  T loss = static_cast<T>(total / static_cast<double>(n * hw));
  auto tgt = std::make_shared<std::vector<int32_t>>(targets);
  return Tensor<T>::make_op(
      {1}, {loss}, "softmax_cross_entropy", {logits},
      [logits, probs, tgt, n, k, hw](const TensorData<T>& out) {
        if (!logits.requires_grad()) return;
        T og = out.grad[0] / static_cast<T>(n * hw);
        std::vector<T>& g = logits.grad();
        for (int64_t i = 0; i < n; ++i) {
          const T* pb = probs->data() + i * k * hw;
          T* gb = g.data() + i * k * hw;
          for (int64_t j = 0; j < hw; ++j) {
            int32_t t = (*tgt)[static_cast<size_t>(i * hw + j)];
            for (int64_t cc = 0; cc < k; ++cc) {
              T delta = (cc == t) ? T(1) : T(0);
              gb[cc * hw + j] += og * (pb[cc * hw + j] - delta);
            }
          }
        }
      });
}

}  // namespace fanet
