#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "lpae/tensor.hpp"

#ifdef LPAE_WITH_PNG
#include <png.h>
#endif

namespace lpae {

namespace detail {

inline int pnm_token(std::istream& in) {
  // next integer, skipping whitespace and # comments
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int v = -1;
  in >> v;
  if (!in) throw FormatError("malformed PNM header");
  return v;
}

inline bool has_suffix(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

}  // namespace detail

// Reads an 8-bit binary PGM (P5) or PPM (P6) into a (C,H,W) tensor scaled to
// [0,1]. C is 1 for PGM, 3 for PPM.
inline Tensor<float> load_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string magic;
  in >> magic;
  std::size_t channels;
  if (magic == "P5")
    channels = 1;
  else if (magic == "P6")
    channels = 3;
  else
    throw FormatError(path + ": expected P5 or P6, got '" + magic + "'");
  const int w = detail::pnm_token(in);
  const int h = detail::pnm_token(in);
  const int maxval = detail::pnm_token(in);
  if (w < 1 || h < 1) throw FormatError(path + ": bad dimensions");
  if (maxval < 1 || maxval > 255) throw FormatError(path + ": only 8-bit PNM supported");
  in.get();  // single whitespace before raster

  const std::size_t n = channels * static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  std::vector<unsigned char> raw(n);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw FormatError(path + ": truncated raster data");

  Tensor<float> img(Shape{channels, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  const float scale = 1.0f / static_cast<float>(maxval);
  // interleaved rows to channel planes
  for (std::size_t y = 0; y < static_cast<std::size_t>(h); ++y)
    for (std::size_t x = 0; x < static_cast<std::size_t>(w); ++x)
      for (std::size_t c = 0; c < channels; ++c)
        img.at(c, y, x) =
            scale * raw[(y * static_cast<std::size_t>(w) + x) * channels + c];
  return img;
}

// Writes a (1,H,W) tensor as PGM or a (3,H,W) tensor as PPM, clamping values
// to [0,1] and quantizing to 8 bits.
inline void save_pnm(const std::string& path, const Tensor<float>& img) {
  if (img.shape().rank() != 3 || (img.shape()[0] != 1 && img.shape()[0] != 3))
    throw ShapeError("save_pnm: need a (1,H,W) or (3,H,W) tensor");
  const std::size_t c = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << (c == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(w * c);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ci = 0; ci < c; ++ci) {
        float v = img.at(ci, y, x);
        v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        row[x * c + ci] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("write failed: " + path);
}

#ifdef LPAE_WITH_PNG

inline Tensor<float> load_png(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw FormatError(path + ": libpng failed to decode");
  }
  png_init_io(png, fp);
  png_read_png(png, info,
               PNG_TRANSFORM_STRIP_16 | PNG_TRANSFORM_STRIP_ALPHA |
                   PNG_TRANSFORM_EXPAND | PNG_TRANSFORM_PACKING,
               nullptr);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const png_byte ct = png_get_color_type(png, info);
  const std::size_t channels = (ct == PNG_COLOR_TYPE_GRAY) ? 1 : 3;
  png_bytepp rows = png_get_rows(png, info);

  Tensor<float> img(Shape{channels, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < channels; ++c)
        img.at(c, y, x) = static_cast<float>(rows[y][x * channels + c]) / 255.0f;
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

inline void save_png(const std::string& path, const Tensor<float>& img) {
  if (img.shape().rank() != 3 || (img.shape()[0] != 1 && img.shape()[0] != 3))
    throw ShapeError("save_png: need a (1,H,W) or (3,H,W) tensor");
  const std::size_t c = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng initialization failed");
  }
  std::vector<unsigned char> raster(h * w * c);
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) {
    rows[y] = raster.data() + y * w * c;
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ci = 0; ci < c; ++ci) {
        float v = img.at(ci, y, x);
        v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        raster[(y * w + x) * c + ci] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError(path + ": libpng failed to encode");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_rows(png, info, rows.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

#endif  // LPAE_WITH_PNG

// Dispatches on the file extension: .pgm/.ppm always, .png when built with
// libpng.
inline Tensor<float> load_image(const std::string& path) {
  if (detail::has_suffix(path, ".pgm") || detail::has_suffix(path, ".ppm"))
    return load_pnm(path);
#ifdef LPAE_WITH_PNG
  if (detail::has_suffix(path, ".png")) return load_png(path);
#endif
  throw FormatError("unsupported image format: " + path);
}

inline void save_image(const std::string& path, const Tensor<float>& img) {
  if (detail::has_suffix(path, ".pgm") || detail::has_suffix(path, ".ppm"))
    return save_pnm(path, img);
#ifdef LPAE_WITH_PNG
  if (detail::has_suffix(path, ".png")) return save_png(path, img);
#endif
  throw FormatError("unsupported image format: " + path);
}

}  // namespace lpae
