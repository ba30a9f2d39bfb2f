#include "ecgwvd/labels.hpp"

#include <cmath>
#include <numeric>

namespace ecgwvd {

std::optional<BeatClass> class_from_file_value(double value) noexcept {
    if (!std::isfinite(value) || value != std::floor(value)) {
        return std::nullopt;
    }
    if (value < 0.0 || value > 4.0) {
        return std::nullopt;
    }
    return static_cast<BeatClass>(static_cast<int>(value));
}

std::size_t ClassCounts::total() const noexcept {
    return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

namespace {

ClassCounts make_counts(std::size_t f, std::size_t n, std::size_t q, std::size_t s, std::size_t v) {
    ClassCounts c;
    c[BeatClass::F] = f;
    c[BeatClass::N] = n;
    c[BeatClass::Q] = q;
    c[BeatClass::S] = s;
    c[BeatClass::V] = v;
    return c;
}

}  // namespace

ClassCounts reference_train_counts() noexcept { return make_counts(641, 72471, 6431, 2223, 5788); }

ClassCounts reference_test_counts() noexcept { return make_counts(162, 18118, 1608, 556, 1448); }

}  // namespace ecgwvd
