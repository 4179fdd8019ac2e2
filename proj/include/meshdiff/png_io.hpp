#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "meshdiff/image.hpp"

namespace meshdiff {

struct Png8 {
    int width = 0;
    int height = 0;
    int channels = 0; // 1 (gray) or 3 (RGB)
    std::vector<std::uint8_t> data;
};

// round(clamp(v, 0, 1) * 255) with halves rounded up. Throws NumericalError
// on NaN.
std::uint8_t quantize_unit(double v);
Png8 to_png8(const Image& image);

void write_png(const std::filesystem::path& path, const Png8& image);
Png8 read_png(const std::filesystem::path& path);

} // namespace meshdiff
