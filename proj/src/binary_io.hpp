#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "ecgwvd/error.hpp"

namespace ecgwvd::detail {

template <typename U>
constexpr U byteswap(U v) noexcept {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        out = static_cast<U>((out << 8) | ((v >> (8 * i)) & 0xFF));
    }
    return out;
}

template <typename U>
void write_le(std::ostream& out, U v) {
    if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
U read_le(std::istream& in) {
    U v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
        throw IoError("unexpected end of file");
    }
    if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
    return v;
}

inline void write_floats_le(std::ostream& out, std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size_bytes()));
    } else {
        for (float f : values) write_le(out, std::bit_cast<std::uint32_t>(f));
    }
}

// Reads exactly values.size() floats; returns the number actually read.
inline std::size_t read_floats_le(std::istream& in, std::span<float> values) {
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    const auto got = static_cast<std::size_t>(in.gcount()) / sizeof(float);
    if constexpr (std::endian::native == std::endian::big) {
        for (float& f : values) f = std::bit_cast<float>(byteswap(std::bit_cast<std::uint32_t>(f)));
    }
    return got;
}

}  // namespace ecgwvd::detail
