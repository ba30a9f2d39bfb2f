#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgwvd/ingest.hpp"
#include "ecgwvd/tfr.hpp"

namespace ecgwvd {

// A batch of single-channel images with labels, stored as one contiguous
// float32 tensor [count, rows, cols].
struct ImageSet {
    std::size_t rows = kImageSize;
    std::size_t cols = kImageSize;
    std::vector<float> pixels;
    std::vector<BeatClass> labels;
    double ramp_strength = 0.0;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t image_size() const noexcept { return rows * cols; }
    std::span<const float> image(std::size_t i) const noexcept {
        return {pixels.data() + i * image_size(), image_size()};
    }

    ImageSet subset(std::span<const std::size_t> indices) const;
    ImageSet without(BeatClass c) const;
};

// Transforms every beat (in parallel, output order = input order).
ImageSet transform_dataset(const Dataset& ds, const TransformConfig& cfg, std::size_t workers = 1);

// Raw little-endian float32 tensor plus JSON sidecar at tensor_sidecar_path(path):
//   {format, version, dtype, byte_order, count, rows, cols, ramp_strength,
//    labels: [file codes], class_names, ...extra}
inline constexpr int kTensorFormatVersion = 1;
void write_tensor(const ImageSet& images, const std::filesystem::path& path,
                  const nlohmann::json& extra = nlohmann::json::object());
ImageSet read_tensor(const std::filesystem::path& path);
std::filesystem::path tensor_sidecar_path(const std::filesystem::path& tensor_path);

}  // namespace ecgwvd
