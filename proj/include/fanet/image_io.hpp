#pragma once

#include <png.h>

#include <array>
#include <cstdio>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "fanet/common.hpp"

// File I/O for images and masks. Images go through OpenCV (JPEG/PNG both
// decode); masks are written as genuine 8-bit paletted PNGs via libpng so
// the on-disk format matches the usual VOC layout, and read back through
// the decoder's palette expansion + a color -> class lookup.

namespace fanet {

// Class-id -> display color. Index in the palette IS the class id.
using Palette = std::vector<std::array<uint8_t, 3>>;

inline Palette default_palette() {
  return {{{0, 0, 0}},
          {{128, 0, 0}},
          {{0, 128, 0}},
          {{128, 128, 0}},
          {{0, 0, 128}}};
}

// Planar C,H,W float image, 3 channels, values in [0, 1].
struct ImageBuffer {
  int64_t h = 0, w = 0;
  std::vector<float> data;

  float& at(int64_t c, int64_t y, int64_t x) {
    return data[static_cast<size_t>((c * h + y) * w + x)];
  }
  float at(int64_t c, int64_t y, int64_t x) const {
    return data[static_cast<size_t>((c * h + y) * w + x)];
  }
  static ImageBuffer alloc(int64_t h, int64_t w, float fill = 0.f) {
    return {h, w, std::vector<float>(static_cast<size_t>(3 * h * w), fill)};
  }
};

inline ImageBuffer load_image_rgb(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataError("cannot decode image: " + path);
  ImageBuffer img = ImageBuffer::alloc(bgr.rows, bgr.cols);
  for (int64_t y = 0; y < img.h; ++y) {
    const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(static_cast<int>(y));
    for (int64_t x = 0; x < img.w; ++x) {
      img.at(0, y, x) = static_cast<float>(row[x][2]) / 255.f;
      img.at(1, y, x) = static_cast<float>(row[x][1]) / 255.f;
      img.at(2, y, x) = static_cast<float>(row[x][0]) / 255.f;
    }
  }
  return img;
}

inline void save_image_rgb_png(const std::string& path,
                               const ImageBuffer& img) {
  cv::Mat bgr(static_cast<int>(img.h), static_cast<int>(img.w), CV_8UC3);
  for (int64_t y = 0; y < img.h; ++y) {
    cv::Vec3b* row = bgr.ptr<cv::Vec3b>(static_cast<int>(y));
    for (int64_t x = 0; x < img.w; ++x) {
      auto q = [&](int64_t c) {
        float v = img.at(c, y, x);
        v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        return static_cast<uint8_t>(v * 255.f + 0.5f);
      };
      row[x] = cv::Vec3b(q(2), q(1), q(0));
    }
  }
  if (!cv::imwrite(path, bgr))
    throw DataError("cannot write image: " + path);
}

inline void save_gray_png(const std::string& path, int64_t h, int64_t w,
                          const std::vector<float>& normalized) {
  cv::Mat gray(static_cast<int>(h), static_cast<int>(w), CV_8UC1);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      float v = normalized[static_cast<size_t>(y * w + x)];
      v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
      gray.at<uint8_t>(static_cast<int>(y), static_cast<int>(x)) =
          static_cast<uint8_t>(v * 255.f + 0.5f);
    }
  if (!cv::imwrite(path, gray))
    throw DataError("cannot write image: " + path);
}

// Decodes a mask PNG (paletted or plain color) to class ids via the
// supplied palette. Unknown colors are an annotation error and name the
// offending pixel.
inline std::vector<uint8_t> load_mask(const std::string& path,
                                      const Palette& palette, int64_t* out_h,
                                      int64_t* out_w) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataError("cannot decode mask: " + path);
  *out_h = bgr.rows;
  *out_w = bgr.cols;
  std::vector<uint8_t> ids(static_cast<size_t>(bgr.rows) * bgr.cols);
  for (int64_t y = 0; y < bgr.rows; ++y) {
    const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(static_cast<int>(y));
    for (int64_t x = 0; x < bgr.cols; ++x) {
      int cls = -1;
      for (size_t k = 0; k < palette.size(); ++k)
        if (row[x][2] == palette[k][0] && row[x][1] == palette[k][1] &&
            row[x][0] == palette[k][2]) {
          cls = static_cast<int>(k);
          break;
        }
      if (cls < 0)
        throw DataError("mask " + path + ": unknown palette color (" +
                        std::to_string(row[x][2]) + ", " +
                        std::to_string(row[x][1]) + ", " +
                        std::to_string(row[x][0]) + ") at pixel (" +
                        std::to_string(x) + ", " + std::to_string(y) + ")");
      ids[static_cast<size_t>(y * bgr.cols + x)] = static_cast<uint8_t>(cls);
    }
  }
  return ids;
}

// 8-bit paletted PNG, index == class id, PLTE == palette.
inline void save_mask_png_paletted(const std::string& path, int64_t h,
                                   int64_t w,
                                   const std::vector<uint8_t>& ids,
                                   const Palette& palette) {
  if (static_cast<int64_t>(ids.size()) != h * w)
    throw ShapeError("mask buffer does not match " + std::to_string(h) +
                     "x" + std::to_string(w));
  for (uint8_t id : ids)
    if (id >= palette.size())
      throw DataError("mask id " + std::to_string(id) +
                      " has no palette entry");

  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw DataError("cannot open for writing: " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                              nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw DataError("libpng failure writing " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w),
               static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_PALETTE,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_color plte[256] = {};
  for (size_t k = 0; k < palette.size() && k < 256; ++k) {
    plte[k].red = palette[k][0];
    plte[k].green = palette[k][1];
    plte[k].blue = palette[k][2];
  }
  png_set_PLTE(png, info, plte, static_cast<int>(palette.size()));
  png_write_info(png, info);
  for (int64_t y = 0; y < h; ++y)
    png_write_row(png,
                  const_cast<png_bytep>(ids.data() + y * w));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace fanet
