#include "ecgwvd/images.hpp"

#include <fstream>

#include "binary_io.hpp"
#include "ecgwvd/error.hpp"
#include "ecgwvd/parallel.hpp"

namespace ecgwvd {

ImageSet ImageSet::subset(std::span<const std::size_t> indices) const {
    ImageSet out;
    out.rows = rows;
    out.cols = cols;
    out.ramp_strength = ramp_strength;
    out.pixels.reserve(indices.size() * image_size());
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) {
        const auto img = image(i);
        out.pixels.insert(out.pixels.end(), img.begin(), img.end());
        out.labels.push_back(labels[i]);
    }
    return out;
}

ImageSet ImageSet::without(BeatClass c) const {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < size(); ++i) {
        if (labels[i] != c) keep.push_back(i);
    }
    return subset(keep);
}

ImageSet transform_dataset(const Dataset& ds, const TransformConfig& cfg, std::size_t workers) {
    ImageSet out;
    out.rows = cfg.size;
    out.cols = cfg.size;
    out.ramp_strength = cfg.ramp_strength;
    out.pixels.resize(ds.size() * out.image_size());
    out.labels.reserve(ds.size());
    for (const auto& r : ds.records) out.labels.push_back(r.label);
    parallel_for(ds.size(), workers, [&](std::size_t i) {
        const WvdImage img = transform_beat(ds.records[i].samples, cfg);
        float* dst = out.pixels.data() + i * out.image_size();
        for (std::size_t k = 0; k < img.values.size(); ++k) dst[k] = static_cast<float>(img.values[k]);
    });
    return out;
}

std::filesystem::path tensor_sidecar_path(const std::filesystem::path& tensor_path) {
    return std::filesystem::path(tensor_path.string() + ".json");
}

void write_tensor(const ImageSet& images, const std::filesystem::path& path, const nlohmann::json& extra) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    detail::write_floats_le(out, images.pixels);
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
    nlohmann::json labels = nlohmann::json::array();
    for (BeatClass c : images.labels) labels.push_back(file_code(c));
    nlohmann::json sidecar = {{"format", "ecgwvd-tensor"},
                              {"version", kTensorFormatVersion},
                              {"dtype", "float32"},
                              {"byte_order", "little"},
                              {"layout", "row-major [count, rows, cols]"},
                              {"count", images.size()},
                              {"rows", images.rows},
                              {"cols", images.cols},
                              {"ramp_strength", images.ramp_strength},
                              {"class_names", {"N", "S", "V", "F", "Q"}},
                              {"labels", labels}};
    sidecar.update(extra);
    std::ofstream side(tensor_sidecar_path(path), std::ios::binary);
    side << sidecar.dump(1) << '\n';
    if (!side) {
        throw IoError("cannot write sidecar for " + path.string());
    }
}

ImageSet read_tensor(const std::filesystem::path& path) {
    std::ifstream side(tensor_sidecar_path(path), std::ios::binary);
    if (!side) {
        throw IoError("missing sidecar " + tensor_sidecar_path(path).string());
    }
    nlohmann::json meta;
    try {
        side >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad sidecar: ") + e.what());
    }
    if (meta.value("version", 0) != kTensorFormatVersion) {
        throw ValidationError("unsupported tensor version " + meta.value("version", nlohmann::json()).dump());
    }
    ImageSet images;
    std::size_t count = 0;
    try {
        images.rows = meta.at("rows").get<std::size_t>();
        images.cols = meta.at("cols").get<std::size_t>();
        images.ramp_strength = meta.value("ramp_strength", 0.0);
        count = meta.at("count").get<std::size_t>();
        const auto& labels = meta.at("labels");
        if (labels.size() != count) {
            throw ValidationError("sidecar label count does not match count");
        }
        for (const auto& l : labels) {
            const auto c = class_from_file_value(l.get<double>());
            if (!c) throw ValidationError("bad label in sidecar: " + l.dump());
            images.labels.push_back(*c);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad sidecar: ") + e.what());
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    images.pixels.resize(count * images.image_size());
    const std::size_t got = detail::read_floats_le(in, images.pixels);
    if (got != images.pixels.size()) {
        std::error_code ec;
        const auto size = std::filesystem::file_size(path, ec);
        throw IoError("truncated tensor " + path.string() + ": expected " +
                      std::to_string(images.pixels.size() * sizeof(float)) + " bytes, got " +
                      (ec ? std::to_string(got * sizeof(float)) : std::to_string(size)));
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw ValidationError("tensor " + path.string() + " is larger than its sidecar declares");
    }
    return images;
}

}  // namespace ecgwvd
