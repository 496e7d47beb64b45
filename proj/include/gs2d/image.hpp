#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "gs2d/errors.hpp"
#include "gs2d/parallel.hpp"

namespace gs2d {

/// Planar float image, intensities in [0,1] for 8-bit sources.
/// Layout: data[c * width * height + y * width + x].
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, int c, float fill = 0.f)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t plane_size() const {
    return static_cast<std::size_t>(width) * height;
  }

  float& at(int x, int y, int c) {
    return data[c * plane_size() + static_cast<std::size_t>(y) * width + x];
  }
  float at(int x, int y, int c) const {
    return data[c * plane_size() + static_cast<std::size_t>(y) * width + x];
  }

  bool same_shape(const ImageBuffer& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }

  ImageBuffer clamped01() const {
    ImageBuffer out = *this;
    for (float& v : out.data) v = std::clamp(v, 0.f, 1.f);
    return out;
  }
};

/// Per-pixel Sobel responses. Double planes: these feed region statistics and
/// the geometry loss, which are held to 1e-12-level identities in the tests.
struct GradientField {
  int width = 0;
  int height = 0;
  std::vector<double> gx, gy, magnitude;
};

namespace detail {

struct PngReadCloser {
  std::FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadCloser() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

struct PngWriteCloser {
  std::FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriteCloser() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (fp) std::fclose(fp);
  }
};

}  // namespace detail

/// Loads an 8-bit grayscale or RGB PNG; intensities are divided by 255
/// exactly. Palette images are expanded to RGB. Anything else (16-bit,
/// alpha) is rejected.
inline ImageBuffer load_image(const std::string& path) {
  detail::PngReadCloser ctx;
  ctx.fp = std::fopen(path.c_str(), "rb");
  if (!ctx.fp) throw IoError("cannot open '" + path + "' for reading");

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, ctx.fp) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw FormatError("'" + path + "' is not a PNG file");

  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                   nullptr);
  if (!ctx.png) throw IoError("png_create_read_struct failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) throw IoError("png_create_info_struct failed");

  if (setjmp(png_jmpbuf(ctx.png)))
    throw FormatError("libpng failed to decode '" + path + "'");

  png_init_io(ctx.png, ctx.fp);
  png_set_sig_bytes(ctx.png, 8);
  png_read_info(ctx.png, ctx.info);

  const int bit_depth = png_get_bit_depth(ctx.png, ctx.info);
  int color_type = png_get_color_type(ctx.png, ctx.info);
  if (bit_depth == 16)
    throw FormatError("'" + path + "': 16-bit PNGs are not supported");
  if (color_type == PNG_COLOR_TYPE_PALETTE) {
    png_set_palette_to_rgb(ctx.png);
    color_type = PNG_COLOR_TYPE_RGB;
  }
  if (bit_depth < 8) png_set_expand_gray_1_2_4_to_8(ctx.png);
  if (png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS) ||
      color_type == PNG_COLOR_TYPE_GRAY_ALPHA ||
      color_type == PNG_COLOR_TYPE_RGB_ALPHA)
    throw FormatError("'" + path + "': alpha channels are not supported");
  if (color_type != PNG_COLOR_TYPE_GRAY && color_type != PNG_COLOR_TYPE_RGB)
    throw FormatError("'" + path + "': unsupported channel layout");
  png_read_update_info(ctx.png, ctx.info);

  const int w = static_cast<int>(png_get_image_width(ctx.png, ctx.info));
  const int h = static_cast<int>(png_get_image_height(ctx.png, ctx.info));
  const int nch = color_type == PNG_COLOR_TYPE_GRAY ? 1 : 3;

  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * nch);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y)
    rows[y] = raw.data() + static_cast<std::size_t>(y) * w * nch;
  png_read_image(ctx.png, rows.data());
  png_read_end(ctx.png, nullptr);

  ImageBuffer img(w, h, nch);
  const std::size_t plane = img.plane_size();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < nch; ++c)
        img.data[c * plane + static_cast<std::size_t>(y) * w + x] =
            raw[(static_cast<std::size_t>(y) * w + x) * nch + c] / 255.f;
  return img;
}

/// Writes an 8-bit PNG; values are clamped to [0,1] at export.
inline void save_image(const ImageBuffer& img, const std::string& path) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("save_image: channels must be 1 or 3");

  detail::PngWriteCloser ctx;
  ctx.fp = std::fopen(path.c_str(), "wb");
  if (!ctx.fp) throw IoError("cannot open '" + path + "' for writing");
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                    nullptr);
  if (!ctx.png) throw IoError("png_create_write_struct failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) throw IoError("png_create_info_struct failed");

  if (setjmp(png_jmpbuf(ctx.png)))
    throw IoError("libpng failed to encode '" + path + "'");

  png_init_io(ctx.png, ctx.fp);
  png_set_IHDR(ctx.png, ctx.info, img.width, img.height, 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ctx.png, ctx.info);

  const std::size_t plane = img.plane_size();
  std::vector<unsigned char> row(static_cast<std::size_t>(img.width) *
                                 img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        const float v = std::clamp(
            img.data[c * plane + static_cast<std::size_t>(y) * img.width + x],
            0.f, 1.f);
        row[static_cast<std::size_t>(x) * img.channels + c] =
            static_cast<unsigned char>(std::lrint(v * 255.f));
      }
    png_write_row(ctx.png, row.data());
  }
  png_write_end(ctx.png, nullptr);
}

inline constexpr double kGrayR = 0.299, kGrayG = 0.587, kGrayB = 0.114;

/// BT.601 luma. 1-channel inputs pass through unchanged.
inline ImageBuffer to_grayscale(const ImageBuffer& img) {
  if (img.channels == 1) return img;
  if (img.channels != 3)
    throw std::invalid_argument("to_grayscale: expected 1 or 3 channels");
  ImageBuffer out(img.width, img.height, 1);
  const std::size_t plane = img.plane_size();
  for (std::size_t p = 0; p < plane; ++p)
    out.data[p] = static_cast<float>(kGrayR * img.data[p] +
                                     kGrayG * img.data[plane + p] +
                                     kGrayB * img.data[2 * plane + p]);
  return out;
}

/// 3x3 Sobel with replicate (edge-clamp) padding over a double plane.
///   Kx = [[-1,0,1],[-2,0,2],[-1,0,1]],  Ky = Kx^T.
inline GradientField sobel(const std::vector<double>& gray, int w, int h) {
  if (static_cast<std::size_t>(w) * h != gray.size())
    throw std::invalid_argument("sobel: plane size mismatch");
  if (w < 3 || h < 3)
    throw std::invalid_argument("sobel: image must be at least 3x3");

  GradientField g;
  g.width = w;
  g.height = h;
  g.gx.resize(gray.size());
  g.gy.resize(gray.size());
  g.magnitude.resize(gray.size());

  // Separable pass: horizontal [-1,0,1]/[1,2,1], then vertical [1,2,1]/[-1,0,1].
  // With replicate padding this matches the direct 3x3 convolution exactly
  // because the x and y clamps are independent.
  std::vector<double> dx(gray.size()), sx(gray.size());
  parallel_for(0, h, [&](std::int64_t y) {
    const double* row = gray.data() + y * w;
    double* drow = dx.data() + y * w;
    double* srow = sx.data() + y * w;
    for (int x = 0; x < w; ++x) {
      const double left = row[x > 0 ? x - 1 : 0];
      const double right = row[x < w - 1 ? x + 1 : w - 1];
      drow[x] = right - left;
      srow[x] = left + 2.0 * row[x] + right;
    }
  });
  parallel_for(0, h, [&](std::int64_t y) {
    const std::int64_t up = y > 0 ? y - 1 : 0;
    const std::int64_t dn = y < h - 1 ? y + 1 : h - 1;
    for (int x = 0; x < w; ++x) {
      const double gx = dx[up * w + x] + 2.0 * dx[y * w + x] + dx[dn * w + x];
      const double gy = sx[dn * w + x] - sx[up * w + x];
      g.gx[y * w + x] = gx;
      g.gy[y * w + x] = gy;
      g.magnitude[y * w + x] = std::sqrt(gx * gx + gy * gy);
    }
  });
  return g;
}

inline GradientField sobel(const ImageBuffer& gray) {
  if (gray.channels != 1)
    throw std::invalid_argument("sobel: expected a single-channel image");
  std::vector<double> plane(gray.data.begin(), gray.data.end());
  return sobel(plane, gray.width, gray.height);
}

/// BT.601 luma straight into a double plane (no float rounding in between);
/// the gradient-domain loss differentiates through this path.
inline std::vector<double> grayscale_f64(const ImageBuffer& img) {
  const std::size_t plane = img.plane_size();
  std::vector<double> out(plane);
  if (img.channels == 1) {
    for (std::size_t p = 0; p < plane; ++p) out[p] = img.data[p];
  } else if (img.channels == 3) {
    for (std::size_t p = 0; p < plane; ++p)
      out[p] = kGrayR * img.data[p] + kGrayG * img.data[plane + p] +
               kGrayB * img.data[2 * plane + p];
  } else {
    throw std::invalid_argument("grayscale_f64: expected 1 or 3 channels");
  }
  return out;
}

}  // namespace gs2d
