#pragma once

#include <string>
#include <vector>

#include "hali/tensor.hpp"

namespace hali::img {

// Binary PGM (P5) for 1-channel tiles, PPM (P6) for 3-channel. Values in
// [-1,1] map to [0,255] with clamping; tiles are laid out row-major with
// 2-pixel white gutters. rows*cols must cover the batch.
void write_image_grid(const Tensor& images, int rows, int cols, const std::string& path);

struct Image {
    int width = 0, height = 0, channels = 1;
    std::vector<uint8_t> pixels; // row-major, interleaved for 3 channels
};

Image read_pnm(const std::string& path);

inline constexpr int kGutter = 2;

} // namespace hali::img
