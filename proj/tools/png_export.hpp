#pragma once

#include <filesystem>
#include <span>

namespace ecgwvd::tools {

// Writes an 8-bit grayscale PNG. Values are mapped linearly from [lo, hi] to
// [0, 255] and clamped; lo == hi gives a black image.
void write_png_gray(const std::filesystem::path& path, std::span<const float> pixels, std::size_t rows,
                    std::size_t cols, double lo, double hi);

}  // namespace ecgwvd::tools
