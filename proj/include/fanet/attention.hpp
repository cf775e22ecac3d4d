#pragma once

#include <string>
#include <vector>

#include "fanet/init.hpp"
#include "fanet/ops.hpp"
#include "fanet/params.hpp"

// Fastidious excitation and the heads that learn its parameters.
//
// Excitation scales the pixels of channel c that exceed a learned threshold
// g_c by a learned activation s_c and leaves the rest untouched:
//
//   out_c(i,j) = s_c * x_c(i,j)   if x_c(i,j) > g_c   (strictly greater)
//              = x_c(i,j)         otherwise
//
// The indicator is not differentiable in g. Two gradient modes:
//   hard      - the indicator is treated as a constant: gradients flow to x
//               and s only, g receives exactly zero
//   surrogate - straight-through: the forward pass stays hard, the backward
//               pass differentiates m = sigmoid((x - g)/tau) in place of the
//               indicator, so g (and everything producing it) trains
// Both modes produce bit-identical forward values.

namespace fanet {

enum class GradMode { hard, surrogate };

inline const char* grad_mode_name(GradMode m) {
  return m == GradMode::hard ? "hard" : "surrogate";
}

inline GradMode parse_grad_mode(const std::string& s) {
  if (s == "hard") return GradMode::hard;
  if (s == "surrogate") return GradMode::surrogate;
  throw ConfigError("unknown grad mode: " + s);
}

// Per-sample activation/threshold vectors, both sigmoid outputs in (0,1),
// shaped [N, C] for a feature map with C channels.
template <typename T>
struct ExcitationParams {
  Tensor<T> s;
  Tensor<T> g;
};

template <typename T>
Tensor<T> fastidious_excite(const Tensor<T>& x,
                            const ExcitationParams<T>& params, GradMode mode,
                            double tau) {
  detail::check_4d("fastidious_excite", x);
  const Tensor<T>& s = params.s;
  const Tensor<T>& g = params.g;
  if (s.ndim() != 2 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1) ||
      g.shape() != s.shape())
    throw ShapeError("fastidious_excite: params s " + shape_str(s.shape()) +
                     ", g " + shape_str(g.shape()) +
                     " do not match input " + shape_str(x.shape()));
  if (mode == GradMode::surrogate && !(tau > 0))
    throw ConfigError("fastidious_excite: surrogate mode needs tau > 0");

  int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> y(x.values().size());
  for (int64_t i = 0; i < n * c; ++i) {
    T sc = s.values()[static_cast<size_t>(i)];
    T gc = g.values()[static_cast<size_t>(i)];
    const T* src = x.values().data() + i * hw;
    T* dst = y.data() + i * hw;
    for (int64_t j = 0; j < hw; ++j)
      dst[j] = src[j] > gc ? sc * src[j] : src[j];
  }
  T tau_t = static_cast<T>(tau);
  return Tensor<T>::make_op(
      x.shape(), std::move(y), "fastidious_excite", {x, s, g},
      [x, s, g, mode, tau_t, n, c, hw](const TensorData<T>& out) {
        for (int64_t i = 0; i < n * c; ++i) {
          T sc = s.values()[static_cast<size_t>(i)];
          T gc = g.values()[static_cast<size_t>(i)];
          const T* xs = x.values().data() + i * hw;
          const T* og = out.grad.data() + i * hw;
          if (mode == GradMode::hard) {
            if (x.requires_grad()) {
              T* gx = x.grad().data() + i * hw;
              for (int64_t j = 0; j < hw; ++j)
                gx[j] += og[j] * (xs[j] > gc ? sc : T(1));
            }
            if (s.requires_grad()) {
              T acc = 0;
              for (int64_t j = 0; j < hw; ++j)
                if (xs[j] > gc) acc += og[j] * xs[j];
              s.grad()[static_cast<size_t>(i)] += acc;
            }
            // g: indicator treated as constant, no gradient.
          } else {
            T* gx = x.requires_grad() ? x.grad().data() + i * hw : nullptr;
            T acc_s = 0, acc_g = 0;
            for (int64_t j = 0; j < hw; ++j) {
              T m = detail::stable_sigmoid((xs[j] - gc) / tau_t);
              T mprime = m * (T(1) - m) / tau_t;
              T excess = xs[j] * (sc - T(1));  // s*x - x
              if (gx)
                gx[j] += og[j] * (T(1) + m * (sc - T(1)) + mprime * excess);
              acc_s += og[j] * m * xs[j];
              acc_g -= og[j] * mprime * excess;
            }
            if (s.requires_grad())
              s.grad()[static_cast<size_t>(i)] += acc_s;
            if (g.requires_grad())
              g.grad()[static_cast<size_t>(i)] += acc_g;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// FSAM: double-branch bottleneck head computing (S, G) from the map itself.
//   S = sigmoid(W2s . relu(W1s . Z)),  G = sigmoid(W2g . relu(W1g . Z))
// with Z the squeezed (global-average-pooled) input. Bias-free.
// ---------------------------------------------------------------------------

struct FsamConfig {
  int64_t channels = 0;
  int64_t reduction = 3;
  // Bottleneck width; reduction need not divide the channel count evenly.
  int64_t hidden() const { return std::max<int64_t>(1, channels / reduction); }
};

template <typename T>
struct Fsam {
  FsamConfig cfg;
  Tensor<T> w1s, w2s, w1g, w2g;

  static Fsam create(FsamConfig cfg, Rng& rng) {
    Fsam m;
    m.cfg = cfg;
    int64_t c = cfg.channels, h = cfg.hidden();
    m.w1s = kaiming_uniform<T>({h, c}, c, rng);
    m.w2s = kaiming_uniform<T>({c, h}, h, rng);
    m.w1g = kaiming_uniform<T>({h, c}, c, rng);
    m.w2g = kaiming_uniform<T>({c, h}, h, rng);
    return m;
  }

  ExcitationParams<T> forward(const Tensor<T>& x) const {
    if (x.dim(1) != cfg.channels)
      throw ShapeError("fsam: input " + shape_str(x.shape()) +
                       " does not carry " + std::to_string(cfg.channels) +
                       " channels");
    Tensor<T> z = global_avg_pool(x);
    Tensor<T> s = sigmoid(linear(relu(linear(z, w1s)), w2s));
    Tensor<T> g = sigmoid(linear(relu(linear(z, w1g)), w2g));
    return {s, g};
  }

  void register_params(ParamRegistry<T>& reg, const std::string& prefix) const {
    reg.add(prefix + ".w1s", w1s);
    reg.add(prefix + ".w2s", w2s);
    reg.add(prefix + ".w1g", w1g);
    reg.add(prefix + ".w2g", w2g);
  }
};

// ---------------------------------------------------------------------------
// FIAM: computes (S_n, G_n) for every decoder level from the single deepest
// encoder map. A strided conv widens it, the squeeze gives Z_0, then two
// chained FC sequences produce all levels; each matrix product feeds both a
// sigmoid output (the level's S_n or G_n) and a ReLU output (the next
// level's input) - one shared pre-activation.
// ---------------------------------------------------------------------------

struct FiamConfig {
  int64_t in_channels = 0;   // bottleneck channel count C0
  double widen_factor = 1.2;
  std::vector<int64_t> level_channels;  // decoder widths, deepest first

  // Output channels of the strided conv; the factor rounds down.
  int64_t widened() const {
    return static_cast<int64_t>(widen_factor *
                                static_cast<double>(in_channels));
  }
};

template <typename T>
struct Fiam {
  FiamConfig cfg;
  Tensor<T> conv_w, conv_b;
  std::vector<Tensor<T>> ws, wg;  // level n maps dims[n] -> dims[n+1]

  static Fiam create(FiamConfig cfg, Rng& rng) {
    Fiam m;
    m.cfg = cfg;
    int64_t d0 = cfg.widened();
    m.conv_w = kaiming_uniform<T>({d0, cfg.in_channels, 3, 3},
                                  cfg.in_channels * 9, rng);
    m.conv_b = zeros_param<T>({d0});
    int64_t prev = d0;
    for (int64_t d : cfg.level_channels) {
      m.ws.push_back(kaiming_uniform<T>({d, prev}, prev, rng));
      m.wg.push_back(kaiming_uniform<T>({d, prev}, prev, rng));
      prev = d;
    }
    return m;
  }

  // Returns per-level (S_n, G_n), deepest decoder level first.
  std::vector<ExcitationParams<T>> forward(const Tensor<T>& x0) const {
    if (x0.dim(1) != cfg.in_channels)
      throw ShapeError("fiam: bottleneck input " + shape_str(x0.shape()) +
                       " does not carry " + std::to_string(cfg.in_channels) +
                       " channels");
    Tensor<T> widened = relu(conv2d(x0, conv_w, conv_b, 2, 1));
    Tensor<T> z = global_avg_pool(widened);
    Tensor<T> zs = z, zg = z;
    std::vector<ExcitationParams<T>> out;
    out.reserve(ws.size());
    for (size_t i = 0; i < ws.size(); ++i) {
      Tensor<T> pre_s = linear(zs, ws[i]);
      Tensor<T> pre_g = linear(zg, wg[i]);
      out.push_back({sigmoid(pre_s), sigmoid(pre_g)});
      zs = relu(pre_s);
      zg = relu(pre_g);
    }
    return out;
  }

  void register_params(ParamRegistry<T>& reg, const std::string& prefix) const {
    reg.add(prefix + ".conv.w", conv_w);
    reg.add(prefix + ".conv.b", conv_b);
    for (size_t i = 0; i < ws.size(); ++i) {
      reg.add(prefix + ".l" + std::to_string(i + 1) + ".ws", ws[i]);
      reg.add(prefix + ".l" + std::to_string(i + 1) + ".wg", wg[i]);
    }
  }
};

// ---------------------------------------------------------------------------
// SE baseline for the replacement study: thresholdless per-channel scaling,
// single bottleneck branch, applied to every pixel.
// ---------------------------------------------------------------------------

template <typename T>
struct SeBlock {
  FsamConfig cfg;
  Tensor<T> w1, w2;

  static SeBlock create(FsamConfig cfg, Rng& rng) {
    SeBlock m;
    m.cfg = cfg;
    int64_t c = cfg.channels, h = cfg.hidden();
    m.w1 = kaiming_uniform<T>({h, c}, c, rng);
    m.w2 = kaiming_uniform<T>({c, h}, h, rng);
    return m;
  }

  // The per-channel scale vector [N, C].
  Tensor<T> gate(const Tensor<T>& x) const {
    if (x.dim(1) != cfg.channels)
      throw ShapeError("se: input " + shape_str(x.shape()) +
                       " does not carry " + std::to_string(cfg.channels) +
                       " channels");
    Tensor<T> z = global_avg_pool(x);
    return sigmoid(linear(relu(linear(z, w1)), w2));
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return channel_scale(x, gate(x));
  }

  void register_params(ParamRegistry<T>& reg, const std::string& prefix) const {
    reg.add(prefix + ".w1", w1);
    reg.add(prefix + ".w2", w2);
  }
};

}  // namespace fanet
