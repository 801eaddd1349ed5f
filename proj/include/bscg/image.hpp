#pragma once

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <string>
#include <vector>

#include <png.h>

#include "bscg/ops.hpp"

namespace bscg {

// Interleaved 8-bit raster, 1 (gray) or 3 (RGB) channels.
struct ImageU8 {
  int h = 0, w = 0, channels = 0;
  std::vector<unsigned char> data;  // row-major, h*w*channels

  unsigned char& at(int y, int x, int c) { return data[(size_t(y) * w + x) * channels + c]; }
  unsigned char at(int y, int x, int c) const {
    return data[(size_t(y) * w + x) * channels + c];
  }
};

namespace detail {

struct FileCloser {
  std::FILE* f;
  ~FileCloser() {
    if (f) std::fclose(f);
  }
};

}  // namespace detail

// Reads a PNG as 8-bit gray or RGB: palettes are expanded, 16-bit depth and
// alpha are stripped, sub-byte gray is widened. Gray+alpha collapses to gray,
// everything else to RGB.
inline ImageU8 read_png(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("png: cannot open '" + path + "'");
  detail::FileCloser closer{f};

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    throw DataError("png: allocation failure reading '" + path + "'");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("png: failed to decode '" + path + "'");
  }
  png_init_io(png, f);
  png_read_info(png, info);

  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  ImageU8 img;
  img.h = int(png_get_image_height(png, info));
  img.w = int(png_get_image_width(png, info));
  const int color = png_get_color_type(png, info);
  img.channels = (color == PNG_COLOR_TYPE_GRAY) ? 1 : 3;
  const size_t rowbytes = png_get_rowbytes(png, info);
  if (rowbytes != size_t(img.w) * img.channels) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("png: unsupported layout in '" + path + "'");
  }
  img.data.resize(size_t(img.h) * img.w * img.channels);
  std::vector<png_bytep> rows(img.h);
  for (int y = 0; y < img.h; ++y) rows[y] = img.data.data() + size_t(y) * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void write_png(const std::string& path, const ImageU8& img) {
  require(img.channels == 1 || img.channels == 3,
          "png: only gray or RGB images can be written");
  require(img.h > 0 && img.w > 0 &&
              img.data.size() == size_t(img.h) * img.w * img.channels,
          "png: inconsistent raster");
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataError("png: cannot open '" + path + "' for writing");
  detail::FileCloser closer{f};

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    throw DataError("png: allocation failure writing '" + path + "'");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("png: failed to write '" + path + "'");
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, png_uint_32(img.w), png_uint_32(img.h), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(img.h);
  for (int y = 0; y < img.h; ++y)
    rows[y] = const_cast<png_bytep>(img.data.data() + size_t(y) * img.w * img.channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// ------------------------------------------------- raster <-> tensor ------

// [1,3,h,w] in [0,1]; gray inputs are replicated across the three channels.
template <class T>
Tensor4<T> image_to_tensor(const ImageU8& img) {
  Tensor4<T> t(1, 3, img.h, img.w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        t.at(0, c, y, x) = T(img.at(y, x, img.channels == 3 ? c : 0) / 255.0);
  return t;
}

// [1,1,h,w] binary via the v/255 > 0.5 rule; RGB masks use the green channel
// (identical channels in practice).
template <class T>
Tensor4<T> mask_to_tensor(const ImageU8& img) {
  Tensor4<T> t(1, 1, img.h, img.w);
  const int c = img.channels == 3 ? 1 : 0;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) t.at(0, 0, y, x) = img.at(y, x, c) > 127 ? T(1) : T(0);
  return t;
}

// Single-plane map in [0,1] to 8-bit gray, value = round(255*p).
template <class T>
ImageU8 tensor_to_gray(const Tensor4<T>& t) {
  require(t.n == 1 && t.c == 1, "tensor_to_gray: expected 1x1xHxW, got " + t.shape_str());
  ImageU8 img;
  img.h = t.h;
  img.w = t.w;
  img.channels = 1;
  img.data.resize(size_t(t.h) * t.w);
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x) {
      double v = std::clamp(double(t.at(0, 0, y, x)), 0.0, 1.0);
      img.data[size_t(y) * t.w + x] = (unsigned char)std::lround(255.0 * v);
    }
  return img;
}

template <class T>
ImageU8 tensor_to_rgb(const Tensor4<T>& t) {
  require(t.n == 1 && t.c == 3, "tensor_to_rgb: expected 1x3xHxW, got " + t.shape_str());
  ImageU8 img;
  img.h = t.h;
  img.w = t.w;
  img.channels = 3;
  img.data.resize(size_t(t.h) * t.w * 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < t.h; ++y)
      for (int x = 0; x < t.w; ++x) {
        double v = std::clamp(double(t.at(0, c, y, x)), 0.0, 1.0);
        img.at(y, x, c) = (unsigned char)std::lround(255.0 * v);
      }
  return img;
}

// ------------------------------------------------------ raster transforms ---

// Half-pixel-centered bilinear resize (same convention as the graph op).
template <class T>
Tensor4<T> resize_bilinear(const Tensor4<T>& x, int oh, int ow) {
  require(oh > 0 && ow > 0, "resize_bilinear: output dims must be positive");
  return detail::resize_fwd(x, oh, ow);
}

// Nearest-neighbor resize with half-pixel centers; keeps binary maps binary.
template <class T>
Tensor4<T> resize_nearest(const Tensor4<T>& x, int oh, int ow) {
  require(oh > 0 && ow > 0, "resize_nearest: output dims must be positive");
  if (oh == x.h && ow == x.w) return x;
  Tensor4<T> y(x.n, x.c, oh, ow);
  std::vector<int> sx(ow), sy(oh);
  for (int j = 0; j < ow; ++j)
    sx[j] = std::clamp(int(std::floor((j + 0.5) * double(x.w) / ow)), 0, x.w - 1);
  for (int i = 0; i < oh; ++i)
    sy[i] = std::clamp(int(std::floor((i + 0.5) * double(x.h) / oh)), 0, x.h - 1);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c)
      for (int i = 0; i < oh; ++i) {
        const T* src = x.row(n, c, sy[i]);
        T* dst = y.row(n, c, i);
        for (int j = 0; j < ow; ++j) dst[j] = src[sx[j]];
      }
  return y;
}

// Separable Gaussian blur with border replication; sigma <= 0 is the identity.
// Kernel radius = ceil(3*sigma), weights normalized to sum 1.
template <class T>
Tensor4<T> gaussian_blur(const Tensor4<T>& x, double sigma) {
  if (sigma <= 0.0) return x;
  const int radius = int(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (double(i) * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;

  Tensor4<T> mid(x.n, x.c, x.h, x.w), out(x.n, x.c, x.h, x.w);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c) {
      for (int y = 0; y < x.h; ++y) {
        const T* src = x.row(n, c, y);
        T* dst = mid.row(n, c, y);
        for (int j = 0; j < x.w; ++j) {
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i)
            acc += k[i + radius] * double(src[std::clamp(j + i, 0, x.w - 1)]);
          dst[j] = T(acc);
        }
      }
      for (int j = 0; j < x.w; ++j)
        for (int y = 0; y < x.h; ++y) {
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i)
            acc += k[i + radius] * double(mid.at(n, c, std::clamp(y + i, 0, x.h - 1), j));
          out.at(n, c, y, j) = T(acc);
        }
    }
  return out;
}

template <class T>
Tensor4<T> flip_horizontal(const Tensor4<T>& x) {
  Tensor4<T> y(x.n, x.c, x.h, x.w);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c)
      for (int i = 0; i < x.h; ++i)
        for (int j = 0; j < x.w; ++j) y.at(n, c, i, j) = x.at(n, c, i, x.w - 1 - j);
  return y;
}

template <class T>
Tensor4<T> flip_vertical(const Tensor4<T>& x) {
  Tensor4<T> y(x.n, x.c, x.h, x.w);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c)
      for (int i = 0; i < x.h; ++i)
        for (int j = 0; j < x.w; ++j) y.at(n, c, i, j) = x.at(n, c, x.h - 1 - i, j);
  return y;
}

// Counterclockwise rotation by k*90 degrees: out(i,j) = in(j, W-1-i) for k=1.
template <class T>
Tensor4<T> rotate90(const Tensor4<T>& x, int k) {
  k = ((k % 4) + 4) % 4;
  if (k == 0) return x;
  const bool swap = (k % 2) == 1;
  Tensor4<T> y(x.n, x.c, swap ? x.w : x.h, swap ? x.h : x.w);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c)
      for (int i = 0; i < y.h; ++i)
        for (int j = 0; j < y.w; ++j) {
          int si = 0, sj = 0;
          switch (k) {
            case 1: si = j, sj = x.w - 1 - i; break;
            case 2: si = x.h - 1 - i, sj = x.w - 1 - j; break;
            default: si = x.h - 1 - j, sj = i; break;
          }
          y.at(n, c, i, j) = x.at(n, c, si, sj);
        }
  return y;
}

}  // namespace bscg
