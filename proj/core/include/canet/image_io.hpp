#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace canet {

/// 8-bit interleaved raster.
struct Image8 {
    std::size_t width = 0, height = 0, channels = 0;
    std::vector<std::uint8_t> pixels;  // row-major, channels interleaved

    std::uint8_t at(std::size_t row, std::size_t col, std::size_t ch) const {
        return pixels[(row * width + col) * channels + ch];
    }
};

/// Reads 8-bit PNG (gray, gray+alpha, RGB, RGBA; alpha dropped) or PNM
/// (P2/P3/P5/P6, maxval <= 255). Throws DataError naming the path.
Image8 read_image(const std::filesystem::path& path);

/// Writes binary PGM (1 channel) or PPM (3 channels).
void write_pnm(const std::filesystem::path& path, const Image8& image);
void write_png(const std::filesystem::path& path, const Image8& image);

}  // namespace canet
