#pragma once

#include <string>

#include "ccihp/errors.hpp"
#include "ccihp/maskcore.hpp"

namespace ccihp {

// Decoded raster: pixel values are class/instance indices. Accepts 8-bit
// indexed (palette) PNG, 8-bit grayscale (1/2/4-bit expanded), and 16-bit
// grayscale. RGB/RGBA rasters are rejected: a semantic raster must carry
// indices, not colors.
struct RasterData {
  int width = 0;
  int height = 0;
  int bit_depth = 0;
  LabelGrid grid;
};

RasterData read_png_raster(const std::string& path);  // throws IoError

// 8-bit indexed PNG with a fixed procedural palette (index 0 black), the
// storage format of the semantic ground-truth rasters. Values must fit
// [0, 255].
void write_png_indexed8(const std::string& path, const LabelGrid& grid);

// 16-bit grayscale PNG, the storage format of the instance raster. Values
// must fit [0, 65535].
void write_png_gray16(const std::string& path, const LabelGrid& grid);

}  // namespace ccihp
