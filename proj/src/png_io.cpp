#include "ccihp/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

namespace ccihp {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::string& path, const char* what) {
  throw IoError("png: " + std::string(what) + ": " + path);
}

// Distinct, stable colors so indexed rasters are inspectable in any viewer.
// Index 0 is black; hues walk the golden angle.
png_color palette_entry(int index) {
  if (index == 0) return png_color{0, 0, 0};
  const double hue = std::fmod(index * 137.50776405003785, 360.0);
  const double value = 0.55 + 0.40 * ((index * 7) % 3) / 2.0;
  const double h = hue / 60.0;
  const int sector = static_cast<int>(h) % 6;
  const double f = h - static_cast<int>(h);
  const double p = 0.08, q = value * (1.0 - 0.85 * f), t = value * (1.0 - 0.85 * (1.0 - f));
  double r = 0, g = 0, b = 0;
  switch (sector) {
    case 0: r = value; g = t; b = p; break;
    case 1: r = q; g = value; b = p; break;
    case 2: r = p; g = value; b = t; break;
    case 3: r = p; g = q; b = value; break;
    case 4: r = t; g = p; b = value; break;
    default: r = value; g = p; b = q; break;
  }
  auto byte = [](double v) { return static_cast<png_byte>(v * 255.0 + 0.5); };
  return png_color{byte(r), byte(g), byte(b)};
}

}  // namespace

RasterData read_png_raster(const std::string& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("png: cannot open: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(path, "out of memory");
  }
  std::vector<png_byte> row_buffer;
  RasterData raster;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "corrupt image");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);

  if (color_type == PNG_COLOR_TYPE_PALETTE) {
    // keep raw palette indices; sub-byte depths unpack to one byte per pixel
    if (bit_depth < 8) png_set_packing(png);
  } else if (color_type == PNG_COLOR_TYPE_GRAY) {
    if (bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  } else {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png: expected indexed or grayscale raster (got color type " +
                  std::to_string(color_type) + "): " + path);
  }
  png_read_update_info(png, info);
  bit_depth = png_get_bit_depth(png, info);

  raster.width = static_cast<int>(width);
  raster.height = static_cast<int>(height);
  raster.bit_depth = bit_depth;
  raster.grid.resize(height, width);

  const std::size_t rowbytes = png_get_rowbytes(png, info);
  row_buffer.resize(rowbytes);
  for (png_uint_32 r = 0; r < height; ++r) {
    png_read_row(png, row_buffer.data(), nullptr);
    std::int32_t* out = raster.grid.data() + static_cast<std::int64_t>(r) * width;
    if (bit_depth == 16) {
      for (png_uint_32 c = 0; c < width; ++c) {  // network byte order
        out[c] = (static_cast<std::int32_t>(row_buffer[2 * c]) << 8) | row_buffer[2 * c + 1];
      }
    } else {
      for (png_uint_32 c = 0; c < width; ++c) out[c] = row_buffer[c];
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return raster;
}

namespace {

void write_png(const std::string& path, const LabelGrid& grid, int bit_depth, int color_type) {
  const int height = static_cast<int>(grid.rows());
  const int width = static_cast<int>(grid.cols());
  const std::int32_t limit = bit_depth == 16 ? 65535 : 255;
  if (height <= 0 || width <= 0) throw IoError("png: refusing to write empty raster: " + path);
  if (grid.minCoeff() < 0 || grid.maxCoeff() > limit) {
    throw IoError("png: raster value outside [0, " + std::to_string(limit) + "]: " + path);
  }

  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("png: cannot write: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(path, "out of memory");
  }
  std::vector<png_byte> row_buffer;
  std::vector<png_color> palette;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(path, "write failed");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (color_type == PNG_COLOR_TYPE_PALETTE) {
    palette.resize(256);
    for (int i = 0; i < 256; ++i) palette[i] = palette_entry(i);
    png_set_PLTE(png, info, palette.data(), 256);
  }
  png_write_info(png, info);

  row_buffer.resize(static_cast<std::size_t>(width) * (bit_depth == 16 ? 2 : 1));
  for (int r = 0; r < height; ++r) {
    const std::int32_t* in = grid.data() + static_cast<std::int64_t>(r) * width;
    if (bit_depth == 16) {
      for (int c = 0; c < width; ++c) {
        row_buffer[2 * c] = static_cast<png_byte>(in[c] >> 8);
        row_buffer[2 * c + 1] = static_cast<png_byte>(in[c] & 0xff);
      }
    } else {
      for (int c = 0; c < width; ++c) row_buffer[c] = static_cast<png_byte>(in[c]);
    }
    png_write_row(png, row_buffer.data());
  }
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_indexed8(const std::string& path, const LabelGrid& grid) {
  write_png(path, grid, 8, PNG_COLOR_TYPE_PALETTE);
}

void write_png_gray16(const std::string& path, const LabelGrid& grid) {
  write_png(path, grid, 16, PNG_COLOR_TYPE_GRAY);
}

}  // namespace ccihp
