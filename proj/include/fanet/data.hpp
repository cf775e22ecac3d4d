#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fanet/image_io.hpp"
#include "fanet/random.hpp"
#include "fanet/tensor.hpp"

// Dataset handling: VOC-style directory loading, the training-time
// augmentation pipeline, and a deterministic synthetic stand-in dataset of
// orange-like images (dark background, textured fruit disk, one pole blob,
// small defect patches).

namespace fanet {

struct SegmentationSample {
  std::string id;
  int64_t h = 0, w = 0;
  std::vector<float> image;  // planar 3,H,W in [0,1]
  std::vector<uint8_t> mask; // H,W class ids

  float img_at(int64_t c, int64_t y, int64_t x) const {
    return image[static_cast<size_t>((c * h + y) * w + x)];
  }
};

// ---------------------------------------------------------------------------
// VOC-style loading
// ---------------------------------------------------------------------------

inline std::vector<SegmentationSample> load_voc_dir(
    const std::string& images_dir, const std::string& masks_dir,
    const Palette& palette) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(images_dir))
    throw DataError("images directory does not exist: " + images_dir);
  if (!fs::is_directory(masks_dir))
    throw DataError("masks directory does not exist: " + masks_dir);

  std::map<std::string, fs::path> images;  // sorted by stem
  for (const auto& e : fs::directory_iterator(images_dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg")
      images[e.path().stem().string()] = e.path();
  }
  std::map<std::string, fs::path> masks;
  for (const auto& e : fs::directory_iterator(masks_dir)) {
    if (!e.is_regular_file()) continue;
    if (e.path().extension() == ".png")
      masks[e.path().stem().string()] = e.path();
  }

  std::vector<SegmentationSample> out;
  for (const auto& [stem, img_path] : images) {
    auto it = masks.find(stem);
    if (it == masks.end())
      throw DataError("no mask for image '" + stem + "' in " + masks_dir);
    ImageBuffer img = load_image_rgb(img_path.string());
    int64_t mh = 0, mw = 0;
    std::vector<uint8_t> ids = load_mask(it->second.string(), palette, &mh,
                                         &mw);
    if (mh != img.h || mw != img.w)
      throw DataError("image/mask size mismatch for '" + stem + "'");
    out.push_back({stem, img.h, img.w, std::move(img.data), std::move(ids)});
  }
  for (const auto& [stem, mask_path] : masks)
    if (!images.count(stem))
      throw DataError("mask '" + stem + "' has no image in " + images_dir);
  return out;
}

inline void save_voc_dir(const std::string& dir,
                         const std::vector<SegmentationSample>& samples,
                         const Palette& palette) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  for (const auto& s : samples) {
    ImageBuffer img{s.h, s.w, s.image};
    save_image_rgb_png((fs::path(dir) / "images" / (s.id + ".png")).string(),
                       img);
    save_mask_png_paletted(
        (fs::path(dir) / "masks" / (s.id + ".png")).string(), s.h, s.w,
        s.mask, palette);
  }
}

// ---------------------------------------------------------------------------
// Geometry helpers (shared by augmentation and resizing)
// ---------------------------------------------------------------------------

namespace detail {

// Bilinear sample with zero fill outside [0,H)x[0,W).
inline float sample_bilinear(const std::vector<float>& img, int64_t c,
                             int64_t h, int64_t w, double sy, double sx) {
  int64_t y0 = static_cast<int64_t>(std::floor(sy));
  int64_t x0 = static_cast<int64_t>(std::floor(sx));
  double ty = sy - static_cast<double>(y0);
  double tx = sx - static_cast<double>(x0);
  auto px = [&](int64_t y, int64_t x) -> double {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
    return img[static_cast<size_t>((c * h + y) * w + x)];
  };
  double top = px(y0, x0) * (1 - tx) + px(y0, x0 + 1) * tx;
  double bot = px(y0 + 1, x0) * (1 - tx) + px(y0 + 1, x0 + 1) * tx;
  return static_cast<float>(top * (1 - ty) + bot * ty);
}

// Nearest-neighbor class sample with class-0 fill outside the extent.
inline uint8_t sample_nearest(const std::vector<uint8_t>& mask, int64_t h,
                              int64_t w, double sy, double sx) {
  int64_t y = static_cast<int64_t>(std::lround(sy));
  int64_t x = static_cast<int64_t>(std::lround(sx));
  if (y < 0 || y >= h || x < 0 || x >= w) return 0;
  return mask[static_cast<size_t>(y * w + x)];
}

}  // namespace detail

// Bilinear (image) / nearest (mask) resize to size x size, half-pixel
// sampling convention. Class ids never blend.
inline SegmentationSample resize_sample(const SegmentationSample& s,
                                        int64_t size) {
  if (s.h == size && s.w == size) return s;
  SegmentationSample out;
  out.id = s.id;
  out.h = out.w = size;
  out.image.resize(static_cast<size_t>(3 * size * size));
  out.mask.resize(static_cast<size_t>(size * size));
  double fy = static_cast<double>(s.h) / static_cast<double>(size);
  double fx = static_cast<double>(s.w) / static_cast<double>(size);
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x) {
      double sy = (static_cast<double>(y) + 0.5) * fy - 0.5;
      double sx = (static_cast<double>(x) + 0.5) * fx - 0.5;
      double cy = std::clamp(sy, 0.0, static_cast<double>(s.h - 1));
      double cx = std::clamp(sx, 0.0, static_cast<double>(s.w - 1));
      for (int64_t c = 0; c < 3; ++c)
        out.image[static_cast<size_t>((c * size + y) * size + x)] =
            detail::sample_bilinear(s.image, c, s.h, s.w, cy, cx);
      out.mask[static_cast<size_t>(y * size + x)] =
          detail::sample_nearest(s.mask, s.h, s.w, cy, cx);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
  double p = 0.6;             // per-op probability
  double rotation_deg = 180;  // rotation drawn uniformly in +/- this
  int64_t crop_size = 100;
  int64_t crop_padding = 10;
  int64_t out_size = 288;     // network input size; crops resize back to it
};

// The random decisions of one augmentation pass, recorded so the identical
// geometric transform can be replayed onto anything.
struct AugmentDraw {
  bool hflip = false;
  bool vflip = false;
  bool rotate = false;
  double angle_deg = 0;
  bool crop = false;
  int64_t crop_x = 0, crop_y = 0;  // top-left in padded coordinates
};

inline void validate_augment(const AugmentConfig& cfg,
                             const SegmentationSample& s) {
  if (cfg.p < 0 || cfg.p > 1)
    throw ConfigError("augment: probability must lie in [0, 1]");
  if (cfg.crop_size > std::min(s.h, s.w) + 2 * cfg.crop_padding)
    throw ConfigError("augment: crop " + std::to_string(cfg.crop_size) +
                      " exceeds padded image " +
                      std::to_string(std::min(s.h, s.w) +
                                     2 * cfg.crop_padding));
}

// Applies the recorded transform. Image and mask run through the identical
// coordinate mapping; only the sampling differs (bilinear vs nearest),
// with background fill 0 / class 0.
inline SegmentationSample apply_draw(const SegmentationSample& s,
                                     const AugmentConfig& cfg,
                                     const AugmentDraw& d) {
  validate_augment(cfg, s);
  SegmentationSample cur = s;
  if (d.hflip) {
    SegmentationSample t = cur;
    for (int64_t y = 0; y < cur.h; ++y)
      for (int64_t x = 0; x < cur.w; ++x) {
        for (int64_t c = 0; c < 3; ++c)
          t.image[static_cast<size_t>((c * cur.h + y) * cur.w + x)] =
              cur.img_at(c, y, cur.w - 1 - x);
        t.mask[static_cast<size_t>(y * cur.w + x)] =
            cur.mask[static_cast<size_t>(y * cur.w + (cur.w - 1 - x))];
      }
    cur = std::move(t);
  }
  if (d.vflip) {
    SegmentationSample t = cur;
    for (int64_t y = 0; y < cur.h; ++y)
      for (int64_t x = 0; x < cur.w; ++x) {
        for (int64_t c = 0; c < 3; ++c)
          t.image[static_cast<size_t>((c * cur.h + y) * cur.w + x)] =
              cur.img_at(c, cur.h - 1 - y, x);
        t.mask[static_cast<size_t>(y * cur.w + x)] =
            cur.mask[static_cast<size_t>((cur.h - 1 - y) * cur.w + x)];
      }
    cur = std::move(t);
  }
  if (d.rotate) {
    double rad = d.angle_deg * 3.14159265358979323846 / 180.0;
    double cs = std::cos(rad), sn = std::sin(rad);
    double cy = static_cast<double>(cur.h - 1) / 2.0;
    double cx = static_cast<double>(cur.w - 1) / 2.0;
    SegmentationSample t = cur;
    for (int64_t y = 0; y < cur.h; ++y)
      for (int64_t x = 0; x < cur.w; ++x) {
        // inverse rotation of the output pixel back into the source
        double dx = static_cast<double>(x) - cx;
        double dy = static_cast<double>(y) - cy;
        double sx = cx + cs * dx + sn * dy;
        double sy = cy - sn * dx + cs * dy;
        for (int64_t c = 0; c < 3; ++c)
          t.image[static_cast<size_t>((c * cur.h + y) * cur.w + x)] =
              detail::sample_bilinear(cur.image, c, cur.h, cur.w, sy, sx);
        t.mask[static_cast<size_t>(y * cur.w + x)] =
            detail::sample_nearest(cur.mask, cur.h, cur.w, sy, sx);
      }
    cur = std::move(t);
  }
  if (d.crop) {
    // crop_size x crop_size window from the crop_padding-padded image,
    // then resize back to the network input size
    int64_t cs_ = cfg.crop_size;
    SegmentationSample t;
    t.id = cur.id;
    t.h = t.w = cfg.out_size;
    t.image.resize(static_cast<size_t>(3 * cfg.out_size * cfg.out_size));
    t.mask.resize(static_cast<size_t>(cfg.out_size * cfg.out_size));
    double f = static_cast<double>(cs_) / static_cast<double>(cfg.out_size);
    for (int64_t y = 0; y < cfg.out_size; ++y)
      for (int64_t x = 0; x < cfg.out_size; ++x) {
        double wy = (static_cast<double>(y) + 0.5) * f - 0.5;
        double wx = (static_cast<double>(x) + 0.5) * f - 0.5;
        // window coords -> padded coords -> original coords
        double sy = wy + static_cast<double>(d.crop_y - cfg.crop_padding);
        double sx = wx + static_cast<double>(d.crop_x - cfg.crop_padding);
        for (int64_t c = 0; c < 3; ++c)
          t.image[static_cast<size_t>(
              (c * cfg.out_size + y) * cfg.out_size + x)] =
              detail::sample_bilinear(cur.image, c, cur.h, cur.w, sy, sx);
        t.mask[static_cast<size_t>(y * cfg.out_size + x)] =
            detail::sample_nearest(cur.mask, cur.h, cur.w, sy, sx);
      }
    cur = std::move(t);
  } else if (cur.h != cfg.out_size || cur.w != cfg.out_size) {
    cur = resize_sample(cur, cfg.out_size);
  }
  return cur;
}

// Draws each operation independently with probability cfg.p and applies
// them in the fixed order mirror-h, mirror-v, rotate, crop.
inline SegmentationSample augment(const SegmentationSample& s,
                                  const AugmentConfig& cfg, Rng& rng,
                                  AugmentDraw* out_draw = nullptr) {
  validate_augment(cfg, s);
  AugmentDraw d;
  d.hflip = rng.bernoulli(cfg.p);
  d.vflip = rng.bernoulli(cfg.p);
  d.rotate = rng.bernoulli(cfg.p);
  if (d.rotate) d.angle_deg = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg);
  d.crop = rng.bernoulli(cfg.p);
  if (d.crop) {
    int64_t span_y = s.h + 2 * cfg.crop_padding - cfg.crop_size;
    int64_t span_x = s.w + 2 * cfg.crop_padding - cfg.crop_size;
    d.crop_y = rng.uniform_int(0, span_y);
    d.crop_x = rng.uniform_int(0, span_x);
  }
  if (out_draw) *out_draw = d;
  return apply_draw(s, cfg, d);
}

// ---------------------------------------------------------------------------
// Synthetic orange-like dataset
// ---------------------------------------------------------------------------

namespace detail {

struct Blob {
  double cy, cx, r;
  int shape;      // 0: smooth disk, 1: spiky star
  double phase;
};

inline bool blob_contains(const Blob& b, double y, double x) {
  double dy = y - b.cy, dx = x - b.cx;
  double d = std::sqrt(dy * dy + dx * dx);
  double ang = std::atan2(dy, dx);
  double rr = b.shape == 0
                  ? b.r * (1.0 + 0.12 * std::sin(3.0 * ang + b.phase))
                  : b.r * (0.45 + 0.55 * std::fabs(std::cos(2.5 * ang +
                                                            b.phase)));
  return d <= rr;
}

}  // namespace detail

// Deterministic generator: dark background, textured fruit disk (class 0),
// one pole blob (blossom end, class 1, round; or stem end, class 2, spiky;
// never both), 0-3 low-contrast flaw patches (class 3) and 0-2
// high-contrast ulcer patches (class 4), all inside the fruit.
inline std::vector<SegmentationSample> synth_orange(uint64_t seed, int64_t n,
                                                    int64_t size) {
  if (size < 16 || size % 16 != 0)
    throw ConfigError("synth_orange: size must be a positive multiple of 16");
  std::vector<SegmentationSample> out;
  out.reserve(static_cast<size_t>(n));
  double S = static_cast<double>(size);
  for (int64_t idx = 0; idx < n; ++idx) {
    Rng rng(derive_seed(seed, 0x0a4a96e5ULL, static_cast<uint64_t>(idx)));
    SegmentationSample s;
    char buf[32];
    std::snprintf(buf, sizeof buf, "synth_%05lld",
                  static_cast<long long>(idx));
    s.id = buf;
    s.h = s.w = size;
    s.image.assign(static_cast<size_t>(3 * size * size), 0.f);
    s.mask.assign(static_cast<size_t>(size * size), 0);

    double cy = S * (0.5 + rng.uniform(-0.04, 0.04));
    double cx = S * (0.5 + rng.uniform(-0.04, 0.04));
    double R = S * rng.uniform(0.33, 0.41);
    double base_r = rng.uniform(0.80, 0.92);
    double base_g = rng.uniform(0.45, 0.58);
    double base_b = rng.uniform(0.08, 0.16);
    double tex_fy = rng.uniform(2.0, 5.0), tex_fx = rng.uniform(2.0, 5.0);
    double tex_ph = rng.uniform(0.0, 6.28);

    // pole: blossom end (1) is a smooth rounded blob, stem end (2) a spiky
    // star; one of them per fruit
    int pole_cls = rng.bernoulli(0.5) ? 1 : 2;
    double pole_ang = rng.uniform(0.0, 6.28318);
    double pole_dist = R * rng.uniform(0.15, 0.5);
    detail::Blob pole{cy + pole_dist * std::sin(pole_ang),
                      cx + pole_dist * std::cos(pole_ang),
                      S * rng.uniform(0.055, 0.09),
                      pole_cls == 1 ? 0 : 1, rng.uniform(0.0, 6.28)};

    auto far_from_pole = [&](double by, double bx, double br) {
      double dy = by - pole.cy, dx = bx - pole.cx;
      return std::sqrt(dy * dy + dx * dx) > pole.r + br + 0.02 * S;
    };
    std::vector<detail::Blob> flaws, ulcers;
    int64_t n_flaws = rng.uniform_int(0, 3);
    int64_t n_ulcers = rng.uniform_int(0, 2);
    auto place = [&](std::vector<detail::Blob>& dst, int64_t count,
                     double rmin, double rmax) {
      for (int64_t i = 0; i < count; ++i) {
        for (int attempt = 0; attempt < 24; ++attempt) {
          double ang = rng.uniform(0.0, 6.28318);
          double dist = R * rng.uniform(0.0, 0.72);
          double by = cy + dist * std::sin(ang);
          double bx = cx + dist * std::cos(ang);
          double br = S * rng.uniform(rmin, rmax);
          bool clear = far_from_pole(by, bx, br);
          for (const auto& o : dst)
            clear = clear && std::hypot(by - o.cy, bx - o.cx) > br + o.r;
          if (clear) {
            dst.push_back({by, bx, br, 0, rng.uniform(0.0, 6.28)});
            break;
          }
        }
      }
    };
    place(flaws, n_flaws, 0.02, 0.045);
    place(ulcers, n_ulcers, 0.022, 0.05);

    for (int64_t y = 0; y < size; ++y)
      for (int64_t x = 0; x < size; ++x) {
        double fy = static_cast<double>(y), fx = static_cast<double>(x);
        double d = std::hypot(fy - cy, fx - cx);
        double r, g, b;
        uint8_t cls = 0;
        if (d > R) {
          double nz = rng.uniform(-0.015, 0.015);
          r = 0.07 + nz;
          g = 0.08 + nz;
          b = 0.10 + nz;
        } else {
          double shade = 0.78 + 0.22 * std::sqrt(std::max(
                                            0.0, 1.0 - (d / R) * (d / R)));
          double tex = 1.0 + 0.05 * std::sin(tex_fy * 6.283 * fy / S +
                                             tex_ph) *
                                 std::cos(tex_fx * 6.283 * fx / S);
          double jit = rng.uniform(-0.02, 0.02);
          r = base_r * shade * tex + jit;
          g = base_g * shade * tex + jit;
          b = base_b * shade + jit;
          if (detail::blob_contains(pole, fy, fx)) {
            cls = static_cast<uint8_t>(pole_cls);
            if (pole_cls == 1) {  // blossom end: pale yellow-green
              r = 0.72 + jit;
              g = 0.70 + jit;
              b = 0.34 + jit;
            } else {  // stem end: dark brown
              r = 0.40 + jit;
              g = 0.26 + jit;
              b = 0.10 + jit;
            }
          } else {
            for (const auto& f : flaws)
              if (detail::blob_contains(f, fy, fx)) {
                cls = 3;  // flaw: slightly darker peel, low contrast
                r *= 0.80;
                g *= 0.74;
                b *= 0.9;
                break;
              }
            if (cls == 0)
              for (const auto& u : ulcers)
                if (detail::blob_contains(u, fy, fx)) {
                  cls = 4;  // ulcer: dark greenish, high contrast
                  r = 0.16 + jit;
                  g = 0.22 + jit;
                  b = 0.09 + jit;
                  break;
                }
          }
        }
        auto clampf = [](double v) {
          return static_cast<float>(v < 0 ? 0 : (v > 1 ? 1 : v));
        };
        s.image[static_cast<size_t>((0 * size + y) * size + x)] = clampf(r);
        s.image[static_cast<size_t>((1 * size + y) * size + x)] = clampf(g);
        s.image[static_cast<size_t>((2 * size + y) * size + x)] = clampf(b);
        s.mask[static_cast<size_t>(y * size + x)] = cls;
      }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> images_to_tensor(const std::vector<SegmentationSample>& samples,
                           const std::vector<size_t>& indices) {
  if (indices.empty()) throw ConfigError("images_to_tensor: empty batch");
  int64_t h = samples[indices[0]].h, w = samples[indices[0]].w;
  std::vector<T> v;
  v.reserve(indices.size() * 3 * h * w);
  for (size_t i : indices) {
    const auto& s = samples[i];
    if (s.h != h || s.w != w)
      throw ShapeError("images_to_tensor: mixed sample sizes in batch");
    for (float e : s.image) v.push_back(static_cast<T>(e));
  }
  return Tensor<T>::from({static_cast<int64_t>(indices.size()), 3, h, w},
                         std::move(v));
}

inline std::vector<int32_t> masks_to_targets(
    const std::vector<SegmentationSample>& samples,
    const std::vector<size_t>& indices) {
  std::vector<int32_t> t;
  for (size_t i : indices)
    for (uint8_t m : samples[i].mask) t.push_back(m);
  return t;
}

}  // namespace fanet
