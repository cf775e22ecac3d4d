#pragma once

#include <string>
#include <utility>

#include "fanet/attention.hpp"
#include "fanet/init.hpp"
#include "fanet/ops.hpp"
#include "fanet/params.hpp"

// The named composite blocks of the encoder-decoder backbone:
//   In-Conv    two [3x3 conv -> BN -> ReLU] stages
//   Down-Conv  2x2 maxpool, then the double-conv stage
//   Up-Conv    bilinear x2 upsample, then one [3x3 conv -> BN -> ReLU]
//   Merge-Conv double-conv on the concatenated skip; exposes the feature
//              after stage one (the excitation attachment point for FIAM)
//              and after stage two (the attachment point for FSAM)
//   Out-Conv   1x1 conv to class logits, no normalization or activation

namespace fanet {

enum class BlockKind { in, down, up, merge, out };
enum class ExciteSlot { none, fiam, fsam, both };

struct BlockSpec {
  BlockKind kind;
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  ExciteSlot slots = ExciteSlot::none;
};

template <typename T>
struct Conv2dLayer {
  Tensor<T> w, b;
  int64_t stride = 1, pad = 1;

  static Conv2dLayer create(int64_t cin, int64_t cout, int64_t k,
                            int64_t stride, int64_t pad, Rng& rng) {
    Conv2dLayer l;
    l.w = kaiming_uniform<T>({cout, cin, k, k}, cin * k * k, rng);
    l.b = zeros_param<T>({cout});
    l.stride = stride;
    l.pad = pad;
    return l;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv2d(x, w, b, stride, pad);
  }

  void register_params(ParamRegistry<T>& reg, const std::string& prefix) const {
    reg.add(prefix + ".w", w);
    reg.add(prefix + ".b", b);
  }
};

template <typename T>
struct BatchNorm2dLayer {
  Tensor<T> gamma, beta;
  BatchNormState<T> state;

  static BatchNorm2dLayer create(int64_t c) {
    BatchNorm2dLayer l;
    l.gamma = ones_param<T>({c});
    l.beta = zeros_param<T>({c});
    l.state = BatchNormState<T>::init(c);
    return l;
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    return batchnorm2d(x, gamma, beta, state, train);
  }

  void register_params(ParamRegistry<T>& reg, const std::string& prefix) const {
    reg.add(prefix + ".gamma", gamma);
    reg.add(prefix + ".beta", beta);
  }
};

template <typename T>
struct ConvBnRelu {
  Conv2dLayer<T> conv;
  BatchNorm2dLayer<T> bn;

  static ConvBnRelu create(int64_t cin, int64_t cout, Rng& rng) {
    return {Conv2dLayer<T>::create(cin, cout, 3, 1, 1, rng),
            BatchNorm2dLayer<T>::create(cout)};
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    return relu(bn.forward(conv.forward(x), train));
  }

  void register_params(ParamRegistry<T>& reg, const std::string& prefix,
                       int stage) const {
    conv.register_params(reg, prefix + ".conv" + std::to_string(stage));
    bn.register_params(reg, prefix + ".bn" + std::to_string(stage));
  }
};

template <typename T>
struct InConv {
  ConvBnRelu<T> s1, s2;

  static InConv create(int64_t cin, int64_t cout, Rng& rng) {
    return {ConvBnRelu<T>::create(cin, cout, rng),
            ConvBnRelu<T>::create(cout, cout, rng)};
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    return s2.forward(s1.forward(x, train), train);
  }

  void register_params(ParamRegistry<T>& reg, const std::string& prefix) const {
    s1.register_params(reg, prefix, 1);
    s2.register_params(reg, prefix, 2);
  }
};

template <typename T>
struct DownConv {
  ConvBnRelu<T> s1, s2;

  static DownConv create(int64_t cin, int64_t cout, Rng& rng) {
    return {ConvBnRelu<T>::create(cin, cout, rng),
            ConvBnRelu<T>::create(cout, cout, rng)};
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    return s2.forward(s1.forward(maxpool2d(x), train), train);
  }

  void register_params(ParamRegistry<T>& reg, const std::string& prefix) const {
    s1.register_params(reg, prefix, 1);
    s2.register_params(reg, prefix, 2);
  }
};

template <typename T>
struct UpConv {
  ConvBnRelu<T> s1;

  static UpConv create(int64_t cin, int64_t cout, Rng& rng) {
    return {ConvBnRelu<T>::create(cin, cout, rng)};
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    return s1.forward(upsample_bilinear2x(x), train);
  }

  void register_params(ParamRegistry<T>& reg, const std::string& prefix) const {
    s1.register_params(reg, prefix, 1);
  }
};

template <typename T>
struct MergeConv {
  ConvBnRelu<T> s1, s2;

  static MergeConv create(int64_t cin, int64_t cout, Rng& rng) {
    return {ConvBnRelu<T>::create(cin, cout, rng),
            ConvBnRelu<T>::create(cout, cout, rng)};
  }

  Tensor<T> stage1(const Tensor<T>& x, bool train) {
    return s1.forward(x, train);
  }

  Tensor<T> stage2(const Tensor<T>& x, bool train) {
    return s2.forward(x, train);
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    return stage2(stage1(x, train), train);
  }

  void register_params(ParamRegistry<T>& reg, const std::string& prefix) const {
    s1.register_params(reg, prefix, 1);
    s2.register_params(reg, prefix, 2);
  }
};

template <typename T>
struct OutConv {
  Conv2dLayer<T> conv;

  static OutConv create(int64_t cin, int64_t num_classes, Rng& rng) {
    return {Conv2dLayer<T>::create(cin, num_classes, 1, 1, 0, rng)};
  }

  Tensor<T> forward(const Tensor<T>& x) const { return conv.forward(x); }

  void register_params(ParamRegistry<T>& reg, const std::string& prefix) const {
    conv.register_params(reg, prefix);
  }
};

// Skip connection: decoder feature first, encoder feature appended after.
// Merge-Conv weights depend on this order.
template <typename T>
Tensor<T> skip_concat(const Tensor<T>& decoder_feat,
                      const Tensor<T>& encoder_feat) {
  return concat_channels(decoder_feat, encoder_feat);
}

}  // namespace fanet
