#pragma once

#include <string>
#include <vector>

namespace laneshift {

/// Minimal 8-bit grayscale PNG codec (zlib-backed). Only what the dataset
/// format needs; writing always emits filter type 0, reading handles all
/// five standard filters.
void write_png_gray8(const std::string& path, const std::vector<uint8_t>& pixels,
                     int width, int height);
std::vector<uint8_t> read_png_gray8(const std::string& path, int& width, int& height);

}  // namespace laneshift
