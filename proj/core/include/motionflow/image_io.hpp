#pragma once

// 8-bit image containers and PNG/PGM file I/O (libpng-backed).

#include <cstdint>
#include <string>
#include <vector>

#include "motionflow/tensor.hpp"

namespace motionflow {

struct Image8 {
    int height = 0;
    int width = 0;
    int channels = 0;  // 1 (gray) or 3 (RGB)
    std::vector<uint8_t> data;  // row-major, channel-interleaved

    Image8() = default;
    Image8(int h, int w, int c)
        : height(h), width(w), channels(c),
          data(static_cast<size_t>(h) * w * c, 0) {}

    uint8_t& at(int i, int j, int k) {
        return data[(static_cast<size_t>(i) * width + j) * channels + k];
    }
    uint8_t at(int i, int j, int k) const {
        return data[(static_cast<size_t>(i) * width + j) * channels + k];
    }
};

// Reads PNG (any bit depth/palette, converted to 8-bit gray or RGB) or PGM.
// Throws std::runtime_error on missing/corrupt files.
Image8 read_image(const std::string& path);

void write_png(const std::string& path, const Image8& image);
void write_pgm(const std::string& path, const Image8& image);

// Luma conversion (0.299 R + 0.587 G + 0.114 B), scaled to [0, 1].
Tensor3 to_grayscale(const Image8& image);

// Clamps [0, 1] values to 8-bit gray.
Image8 from_grayscale(const Tensor3& plane);

}  // namespace motionflow
