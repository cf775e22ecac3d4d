#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "fanet/attention.hpp"
#include "fanet/blocks.hpp"

// Assembly of the five ablation variants on the shared encoder-decoder
// backbone (depth 4, classic channel doubling, bottleneck at 16x base):
//
//   unet     plain backbone
//   unet-se  SE block on each Merge-Conv output
//   fanet-s  FSAM excitation on each Merge-Conv output
//   fanet-i  FIAM-driven excitation on each Merge-Conv intermediate feature
//   fanet    both: FIAM excitation after Merge-Conv stage one, FSAM
//            excitation after stage two
//
// Merge-Conv levels are numbered deepest-first (merge1 at the coarsest
// resolution), matching the FIAM level order.

namespace fanet {

enum class Variant { unet, unet_se, fanet_s, fanet_i, fanet };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::unet: return "unet";
    case Variant::unet_se: return "unet-se";
    case Variant::fanet_s: return "fanet-s";
    case Variant::fanet_i: return "fanet-i";
    case Variant::fanet: return "fanet";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "unet") return Variant::unet;
  if (s == "unet-se") return Variant::unet_se;
  if (s == "fanet-s") return Variant::fanet_s;
  if (s == "fanet-i") return Variant::fanet_i;
  if (s == "fanet") return Variant::fanet;
  throw ConfigError("unknown architecture variant: " + s);
}

inline bool variant_has_fiam(Variant v) {
  return v == Variant::fanet_i || v == Variant::fanet;
}
inline bool variant_has_fsam(Variant v) {
  return v == Variant::fanet_s || v == Variant::fanet;
}
inline bool variant_has_se(Variant v) { return v == Variant::unet_se; }

struct ArchitectureSpec {
  Variant variant = Variant::fanet;
  int64_t base_width = 64;
  int depth = 4;  // fixed
  int64_t num_classes = 5;
  int64_t input_size = 288;
  int64_t fsam_r = 3;
  double fiam_factor = 1.2;
  GradMode grad_mode = GradMode::surrogate;
  double tau = 0.1;

  void validate() const {
    if (depth != 4)
      throw ConfigError("architecture: depth is fixed at 4, got " +
                        std::to_string(depth));
    if (base_width < 1 || num_classes < 2)
      throw ConfigError("architecture: invalid base_width/num_classes");
    int64_t div = 1 << depth;
    if (input_size < div || input_size % div != 0)
      throw ConfigError("architecture: input size " +
                        std::to_string(input_size) +
                        " must be a positive multiple of " +
                        std::to_string(div));
    if (fsam_r < 1) throw ConfigError("architecture: fsam_r must be >= 1");
    if (!(fiam_factor > 0))
      throw ConfigError("architecture: fiam_factor must be > 0");
    if (grad_mode == GradMode::surrogate && !(tau > 0))
      throw ConfigError("architecture: surrogate grad mode needs tau > 0");
  }

  int64_t bottleneck_width() const { return base_width * 16; }

  // Merge-Conv output widths, deepest first (8w, 4w, 2w, w).
  std::vector<int64_t> decoder_widths() const {
    return {base_width * 8, base_width * 4, base_width * 2, base_width};
  }
};

// Values captured at one excitation site during a traced forward pass.
template <typename T>
struct ExcitationSite {
  std::string id;       // "fiam1".."fiam4", "fsam1".."fsam4"
  std::string fig_key;  // "Merge-Conv1_512", "FSAM4_64", ...
  Tensor<T> input;      // feature map entering the excitation
  Tensor<T> output;     // feature map leaving it
  Tensor<T> s, g;       // [N, C] parameter vectors
};

template <typename T>
struct ForwardTrace {
  std::vector<ExcitationSite<T>> sites;
};

template <typename T>
struct BufferRef {
  std::string name;
  std::vector<T>* data;
};

template <typename T>
class Model {
 public:
  ArchitectureSpec spec;

  InConv<T> inc;
  std::array<DownConv<T>, 4> down;
  std::array<UpConv<T>, 4> up;        // up[0] deepest
  std::array<MergeConv<T>, 4> merge;  // merge[0] deepest
  OutConv<T> out;
  std::optional<Fiam<T>> fiam;
  std::array<std::optional<Fsam<T>>, 4> fsam;
  std::array<std::optional<SeBlock<T>>, 4> se;
  std::vector<BlockSpec> block_specs;

  static Model build(const ArchitectureSpec& spec, uint64_t seed) {
    spec.validate();
    Model m;
    m.spec = spec;
    int64_t w = spec.base_width;

    // Backbone draws come first so every variant shares identical backbone
    // initialization for a given seed.
    Rng rng(derive_seed(seed, 0xbacbacULL));
    m.inc = InConv<T>::create(3, w, rng);
    m.block_specs.push_back({BlockKind::in, 3, w, ExciteSlot::none});
    for (int i = 0; i < 4; ++i) {
      int64_t cin = w << i, cout = w << (i + 1);
      m.down[static_cast<size_t>(i)] = DownConv<T>::create(cin, cout, rng);
      m.block_specs.push_back({BlockKind::down, cin, cout, ExciteSlot::none});
    }
    ExciteSlot merge_slot =
        variant_has_fiam(spec.variant)
            ? (variant_has_fsam(spec.variant) ? ExciteSlot::both
                                              : ExciteSlot::fiam)
            : (variant_has_fsam(spec.variant) ? ExciteSlot::fsam
                                              : ExciteSlot::none);
    std::vector<int64_t> widths = spec.decoder_widths();
    int64_t prev = spec.bottleneck_width();
    for (int i = 0; i < 4; ++i) {
      int64_t width = widths[static_cast<size_t>(i)];
      m.up[static_cast<size_t>(i)] = UpConv<T>::create(prev, width, rng);
      m.block_specs.push_back({BlockKind::up, prev, width, ExciteSlot::none});
      m.merge[static_cast<size_t>(i)] =
          MergeConv<T>::create(2 * width, width, rng);
      m.block_specs.push_back(
          {BlockKind::merge, 2 * width, width, merge_slot});
      prev = width;
    }
    m.out = OutConv<T>::create(w, spec.num_classes, rng);
    m.block_specs.push_back(
        {BlockKind::out, w, spec.num_classes, ExciteSlot::none});

    Rng arng(derive_seed(seed, 0xa77e0710ULL));
    if (variant_has_fiam(spec.variant))
      m.fiam = Fiam<T>::create(
          {spec.bottleneck_width(), spec.fiam_factor, widths}, arng);
    if (variant_has_fsam(spec.variant))
      for (int i = 0; i < 4; ++i)
        m.fsam[static_cast<size_t>(i)] = Fsam<T>::create(
            {widths[static_cast<size_t>(i)], spec.fsam_r}, arng);
    if (variant_has_se(spec.variant))
      for (int i = 0; i < 4; ++i)
        m.se[static_cast<size_t>(i)] = SeBlock<T>::create(
            {widths[static_cast<size_t>(i)], spec.fsam_r}, arng);
    return m;
  }

  // Full encoder-decoder pass. When trace is non-null, detached copies of
  // every excitation site's tensors are recorded.
  Tensor<T> forward(const Tensor<T>& images, bool train,
                    ForwardTrace<T>* trace = nullptr) {
    if (images.ndim() != 4 || images.dim(1) != 3 ||
        images.dim(2) != spec.input_size || images.dim(3) != spec.input_size)
      throw ShapeError("model: expected input [N, 3, " +
                       std::to_string(spec.input_size) + ", " +
                       std::to_string(spec.input_size) + "], got " +
                       shape_str(images.shape()));

    std::array<Tensor<T>, 4> skips;
    Tensor<T> e = inc.forward(images, train);
    skips[0] = e;  // width w at full resolution
    for (int i = 0; i < 4; ++i) {
      e = down[static_cast<size_t>(i)].forward(e, train);
      if (i < 3) skips[static_cast<size_t>(i + 1)] = e;
    }
    // e is the bottleneck feature (16w channels).

    std::vector<ExcitationParams<T>> fiam_levels;
    if (fiam && excitation_enabled_)
      fiam_levels = fiam->forward(e);

    std::vector<int64_t> widths = spec.decoder_widths();
    Tensor<T> d = e;
    for (int i = 0; i < 4; ++i) {
      d = up[static_cast<size_t>(i)].forward(d, train);
      d = skip_concat(d, skips[static_cast<size_t>(3 - i)]);
      Tensor<T> t = merge[static_cast<size_t>(i)].stage1(d, train);
      if (!fiam_levels.empty()) {
        const auto& p = fiam_levels[static_cast<size_t>(i)];
        Tensor<T> excited =
            fastidious_excite(t, p, spec.grad_mode, spec.tau);
        if (trace)
          trace->sites.push_back(
              {"fiam" + std::to_string(i + 1),
               "Merge-Conv" + std::to_string(i + 1) + "_" +
                   std::to_string(widths[static_cast<size_t>(i)]),
               t.detached(), excited.detached(), p.s.detached(),
               p.g.detached()});
        t = excited;
      }
      t = merge[static_cast<size_t>(i)].stage2(t, train);
      if (fsam[static_cast<size_t>(i)] && excitation_enabled_) {
        ExcitationParams<T> p =
            fsam[static_cast<size_t>(i)]->forward(t);
        Tensor<T> excited =
            fastidious_excite(t, p, spec.grad_mode, spec.tau);
        if (trace)
          trace->sites.push_back(
              {"fsam" + std::to_string(i + 1),
               "FSAM" + std::to_string(i + 1) + "_" +
                   std::to_string(widths[static_cast<size_t>(i)]),
               t.detached(), excited.detached(), p.s.detached(),
               p.g.detached()});
        t = excited;
      }
      if (se[static_cast<size_t>(i)] && excitation_enabled_)
        t = se[static_cast<size_t>(i)]->forward(t);
      d = t;
    }
    return out.forward(d);
  }

  ParamRegistry<T> parameters() const {
    ParamRegistry<T> reg;
    inc.register_params(reg, "inc");
    for (int i = 0; i < 4; ++i)
      down[static_cast<size_t>(i)].register_params(
          reg, "down" + std::to_string(i + 1));
    for (int i = 0; i < 4; ++i) {
      up[static_cast<size_t>(i)].register_params(
          reg, "up" + std::to_string(i + 1));
      merge[static_cast<size_t>(i)].register_params(
          reg, "merge" + std::to_string(i + 1));
    }
    out.register_params(reg, "out");
    if (fiam) fiam->register_params(reg, "fiam");
    for (int i = 0; i < 4; ++i) {
      if (fsam[static_cast<size_t>(i)])
        fsam[static_cast<size_t>(i)]->register_params(
            reg, "fsam" + std::to_string(i + 1));
      if (se[static_cast<size_t>(i)])
        se[static_cast<size_t>(i)]->register_params(
            reg, "se" + std::to_string(i + 1));
    }
    return reg;
  }

  // Batch-norm running statistics, in a fixed order aligned with the
  // parameter registry's block order.
  std::vector<BufferRef<T>> buffers() {
    std::vector<BufferRef<T>> out_refs;
    auto add_bn = [&](BatchNorm2dLayer<T>& bn, const std::string& prefix) {
      out_refs.push_back({prefix + ".running_mean", &bn.state.running_mean});
      out_refs.push_back({prefix + ".running_var", &bn.state.running_var});
    };
    add_bn(inc.s1.bn, "inc.bn1");
    add_bn(inc.s2.bn, "inc.bn2");
    for (int i = 0; i < 4; ++i) {
      std::string p = "down" + std::to_string(i + 1);
      add_bn(down[static_cast<size_t>(i)].s1.bn, p + ".bn1");
      add_bn(down[static_cast<size_t>(i)].s2.bn, p + ".bn2");
    }
    for (int i = 0; i < 4; ++i) {
      std::string pu = "up" + std::to_string(i + 1);
      add_bn(up[static_cast<size_t>(i)].s1.bn, pu + ".bn1");
      std::string pm = "merge" + std::to_string(i + 1);
      add_bn(merge[static_cast<size_t>(i)].s1.bn, pm + ".bn1");
      add_bn(merge[static_cast<size_t>(i)].s2.bn, pm + ".bn2");
    }
    return out_refs;
  }

  int64_t parameter_count() const { return parameters().total_count(); }

  void zero_grad() const { parameters().zero_grad(); }

  // Test hook: with excitation disabled the forward pass executes exactly
  // the plain backbone arithmetic.
  void set_excitation_enabled(bool on) { excitation_enabled_ = on; }
  bool excitation_enabled() const { return excitation_enabled_; }

 private:
  bool excitation_enabled_ = true;
};

}  // namespace fanet
