#include "png_export.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "ecgwvd/error.hpp"

namespace ecgwvd::tools {

void write_png_gray(const std::filesystem::path& path, std::span<const float> pixels, std::size_t rows,
                    std::size_t cols, double lo, double hi) {
    if (pixels.size() != rows * cols) {
        throw ValidationError("image buffer does not match its shape");
    }
    std::vector<png_byte> bytes(pixels.size());
    const double range = hi - lo;
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const double t = range > 0.0 ? (pixels[i] - lo) / range : 0.0;
        bytes[i] = static_cast<png_byte>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
    }

    std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!file) {
        throw IoError("cannot write " + path.string());
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng initialisation failed");
    }
    // libpng reports errors by longjmp; nothing with a destructor is created
    // between here and the end of the encode.
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG encoding failed for " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t r = 0; r < rows; ++r) png_write_row(png, bytes.data() + r * cols);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace ecgwvd::tools
