#pragma once

#include <png.h>

#include <cstdio>
#include <csetjmp>
#include <memory>
#include <string>
#include <vector>

#include "coordinet/errors.hpp"
#include "coordinet/tensor.hpp"

namespace coordinet {

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

// Writes a 1-channel (grayscale) or 3-channel (RGB) tensor as an 8-bit PNG.
// Values are interpreted in [0, 1] and clamped.
inline void write_png(const std::string& path, const Tensor& img) {
  require(img.c == 1 || img.c == 3, ErrorCode::invalid_input,
          "write_png expects 1 or 3 channels");
  require(img.h > 0 && img.w > 0, ErrorCode::invalid_input,
          "write_png expects a non-empty image");

  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  require(fp != nullptr, ErrorCode::io, "cannot open for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, ErrorCode::io, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrorCode::io, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::io, "libpng error while writing " + path);
  }

  png_init_io(png, fp.get());
  const int color_type = img.c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h),
               8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<unsigned char> row(static_cast<size_t>(img.w) * img.c);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      for (int ci = 0; ci < img.c; ++ci) {
        double val = img.at(ci, y, x);
        val = val < 0.0 ? 0.0 : (val > 1.0 ? 1.0 : val);
        row[static_cast<size_t>(x) * img.c + ci] =
            static_cast<unsigned char>(val * 255.0 + 0.5);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads an 8/16-bit PNG as a 3-channel RGB tensor with values in [0, 1].
// Grayscale and palette images are expanded; alpha is dropped.
inline Tensor read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  require(fp != nullptr, ErrorCode::io, "cannot open for reading: " + path);

  unsigned char sig[8];
  require(std::fread(sig, 1, 8, fp.get()) == 8 && png_sig_cmp(sig, 0, 8) == 0,
          ErrorCode::parse, "not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, ErrorCode::io, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(ErrorCode::io, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::parse, "libpng error while reading " + path);
  }

  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_expand(png);           // palette/low-bit gray -> 8-bit
  png_set_strip_16(png);         // 16-bit -> 8-bit
  png_set_strip_alpha(png);      // drop alpha
  png_set_gray_to_rgb(png);      // gray -> RGB
  png_read_update_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int channels = static_cast<int>(png_get_channels(png, info));
  if (channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::parse, "unexpected channel count in " + path);
  }

  std::vector<unsigned char> raster(static_cast<size_t>(w) * h * 3);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y) rows[y] = raster.data() + static_cast<size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor img(3, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t base = (static_cast<size_t>(y) * w + x) * 3;
      for (int ci = 0; ci < 3; ++ci) {
        img.at(ci, y, x) = raster[base + ci] / 255.0;
      }
    }
  }
  return img;
}

}  // namespace coordinet
