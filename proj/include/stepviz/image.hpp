#pragma once

#include <png.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "stepviz/error.hpp"

namespace stepviz {

// 8-bit interleaved image, row-major. channels is 1 (gray) or 3 (RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c),
        pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), fill) {}

  std::uint8_t& at(int y, int x, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
                      static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)];
  }
  std::size_t offset(int y, int x, int c = 0) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels) + static_cast<std::size_t>(c);
  }
  std::uint8_t at(int y, int x, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
                      static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)];
  }

  bool operator==(const Image&) const = default;
};

// Binary H×W map, one byte per pixel holding 0 or 1.
struct Bitmap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  Bitmap() = default;
  Bitmap(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), bits(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill ? 1 : 0) {}

  std::uint8_t& at(int y, int x) {
    return bits[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)];
  }
  std::uint8_t at(int y, int x) const {
    return bits[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)];
  }

  bool operator==(const Bitmap&) const = default;
};

namespace detail {

struct PngReadCursor {
  std::span<const std::uint8_t> data;
  std::size_t offset = 0;
};

inline void png_read_from_span(png_structp png, png_bytep out, png_size_t len) {
  auto* cur = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + len > cur->data.size()) png_error(png, "truncated PNG");
  std::memcpy(out, cur->data.data() + cur->offset, len);
  cur->offset += len;
}

inline void png_write_to_vector(png_structp png, png_bytep in, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), in, in + len);
}

inline void png_flush_noop(png_structp) {}

[[noreturn]] inline void png_error_throw(png_structp, png_const_charp msg) {
  throw ImageFormatError(msg ? msg : "libpng error");
}

inline void png_warning_ignore(png_structp, png_const_charp) {}

}  // namespace detail

inline std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw ImageFormatError("unsupported channel count");
  if (img.width <= 0 || img.height <= 0) throw ImageFormatError("empty image");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            detail::png_error_throw, detail::png_warning_ignore);
  if (!png) throw ImageFormatError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> out;
  try {
    png_set_write_fn(png, &out, detail::png_write_to_vector, detail::png_flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.channels);
    for (int y = 0; y < img.height; ++y) {
      png_write_row(png, const_cast<png_bytep>(img.pixels.data() + static_cast<std::size_t>(y) * stride));
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

// Decodes 8-bit gray, RGB or RGBA PNGs (alpha dropped, palette expanded).
inline Image decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw ImageFormatError("not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           detail::png_error_throw, detail::png_warning_ignore);
  if (!png) throw ImageFormatError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  detail::PngReadCursor cursor{bytes, 0};
  Image img;
  try {
    png_set_read_fn(png, &cursor, detail::png_read_from_span);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int color = png_get_color_type(png, info);
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.channels = (color == PNG_COLOR_TYPE_GRAY) ? 1 : 3;
    const std::size_t stride = png_get_rowbytes(png, info);
    if (stride != static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.channels)) {
      throw ImageFormatError("unexpected PNG row layout");
    }
    img.pixels.resize(stride * static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) {
      png_read_row(png, img.pixels.data() + static_cast<std::size_t>(y) * stride, nullptr);
    }
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageFormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageFormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void write_png(const std::filesystem::path& path, const Image& img) { write_file_bytes(path, encode_png(img)); }

inline Image read_png(const std::filesystem::path& path) { return decode_png(read_file_bytes(path)); }

// 0/255 grayscale rendering of a bitmap.
inline Image bitmap_to_image(const Bitmap& bm) {
  Image img(bm.width, bm.height, 1);
  for (std::size_t k = 0; k < bm.bits.size(); ++k) img.pixels[k] = bm.bits[k] ? 255 : 0;
  return img;
}

// Any non-zero luminance counts as foreground.
inline Bitmap image_to_bitmap(const Image& img) {
  Bitmap bm(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      bool on = false;
      for (int c = 0; c < img.channels; ++c) on = on || img.at(y, x, c) != 0;
      bm.at(y, x) = on ? 1 : 0;
    }
  }
  return bm;
}

// Lays images out left to right on one row. All images must share height and channels.
inline Image hstack(std::span<const Image> images) {
  if (images.empty()) throw PreconditionViolation("hstack of zero images");
  const int h = images.front().height;
  const int c = images.front().channels;
  int total_w = 0;
  for (const auto& im : images) {
    if (im.height != h || im.channels != c) throw ShapeMismatch("hstack: images differ in height or channels");
    total_w += im.width;
  }
  Image out(total_w, h, c);
  int x0 = 0;
  for (const auto& im : images) {
    for (int y = 0; y < h; ++y) {
      std::memcpy(out.pixels.data() + out.offset(y, x0), im.pixels.data() + im.offset(y, 0), static_cast<std::size_t>(im.width) * static_cast<std::size_t>(c));
    }
    x0 += im.width;
  }
  return out;
}

}  // namespace stepviz
