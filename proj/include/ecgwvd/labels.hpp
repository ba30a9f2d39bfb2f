#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>

namespace ecgwvd {

// AAMI beat classes. Enumerator values are the integer labels used by the
// public per-beat CSV files (0=N, 1=S, 2=V, 3=F, 4=Q).
enum class BeatClass : std::uint8_t { N = 0, S = 1, V = 2, F = 3, Q = 4 };

inline constexpr std::size_t kNumClasses = 5;

inline constexpr std::array<BeatClass, kNumClasses> kFileOrder{
    BeatClass::N, BeatClass::S, BeatClass::V, BeatClass::F, BeatClass::Q};

// Reports, confusion matrices and model output units all use alphabetical order.
inline constexpr std::array<BeatClass, kNumClasses> kReportOrder{
    BeatClass::F, BeatClass::N, BeatClass::Q, BeatClass::S, BeatClass::V};

constexpr int file_code(BeatClass c) noexcept { return static_cast<int>(c); }

constexpr std::size_t report_index(BeatClass c) noexcept {
    switch (c) {
        case BeatClass::F: return 0;
        case BeatClass::N: return 1;
        case BeatClass::Q: return 2;
        case BeatClass::S: return 3;
        case BeatClass::V: return 4;
    }
    return 0;
}

constexpr BeatClass from_report_index(std::size_t i) noexcept { return kReportOrder[i]; }

constexpr char class_char(BeatClass c) noexcept {
    constexpr std::string_view names = "NSVFQ";
    return names[static_cast<std::size_t>(c)];
}

constexpr std::optional<BeatClass> class_from_char(char ch) noexcept {
    switch (ch) {
        case 'N': return BeatClass::N;
        case 'S': return BeatClass::S;
        case 'V': return BeatClass::V;
        case 'F': return BeatClass::F;
        case 'Q': return BeatClass::Q;
        default: return std::nullopt;
    }
}

// Accepts integral values written as integers or floats ("2", "2.0", "2.000e+00").
std::optional<BeatClass> class_from_file_value(double value) noexcept;

// Per-class tally indexed by file code.
struct ClassCounts {
    std::array<std::size_t, kNumClasses> counts{};

    std::size_t& operator[](BeatClass c) noexcept { return counts[static_cast<std::size_t>(c)]; }
    std::size_t operator[](BeatClass c) const noexcept { return counts[static_cast<std::size_t>(c)]; }
    std::size_t total() const noexcept;
    bool operator==(const ClassCounts&) const = default;
};

// Per-class counts of the public per-beat train/test files.
ClassCounts reference_train_counts() noexcept;
ClassCounts reference_test_counts() noexcept;

}  // namespace ecgwvd
