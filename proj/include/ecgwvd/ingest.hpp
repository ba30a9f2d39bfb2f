#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgwvd/labels.hpp"

namespace ecgwvd {

// One normalized, fixed-length beat. Samples lie in [0, 1].
struct BeatRecord {
    std::vector<double> samples;
    BeatClass label = BeatClass::N;
    std::optional<std::string> source_id;

    bool operator==(const BeatRecord&) const = default;
};

enum class SplitTag { train, test };

std::string_view to_string(SplitTag tag) noexcept;
std::optional<SplitTag> split_from_string(std::string_view s) noexcept;

struct Dataset {
    std::vector<BeatRecord> records;
    SplitTag split = SplitTag::train;

    bool empty() const noexcept { return records.empty(); }
    std::size_t size() const noexcept { return records.size(); }
    // Length shared by every record (0 when empty).
    std::size_t beat_length() const noexcept;

    bool operator==(const Dataset&) const = default;
};

// Samples further than this outside [0, 1] are rejected; closer ones are clamped.
inline constexpr double kSampleRangeTolerance = 1e-6;

// Parses the headerless per-beat CSV: L sample columns then one label column.
// Throws IoError if the file cannot be read, ParseError (with row index) on
// malformed rows, unknown labels, inconsistent row length or out-of-range samples.
Dataset load_beat_csv(const std::filesystem::path& path, SplitTag split = SplitTag::train);
Dataset parse_beat_csv(std::string_view text, SplitTag split = SplitTag::train);

// Writes the CSV with shortest round-trip float formatting, plus the JSON
// manifest at manifest_path(path). `extra` is merged into the manifest.
void write_beat_csv(const Dataset& ds, const std::filesystem::path& path,
                    const nlohmann::json& extra = nlohmann::json::object());
std::filesystem::path manifest_path(const std::filesystem::path& data_path);
nlohmann::json dataset_manifest(const Dataset& ds);

ClassCounts class_distribution(const Dataset& ds) noexcept;
nlohmann::json counts_to_json(const ClassCounts& counts);

// Keeps min(cap, available) records of each class, chosen without replacement;
// kept records stay in their original order.
Dataset stratified_subset(const Dataset& ds, std::size_t cap_per_class, std::uint64_t seed);

// Draws `total` records (or all, if fewer) with per-class quotas proportional to
// the class frequencies (largest-remainder rounding).
Dataset proportional_subset(const Dataset& ds, std::size_t total, std::uint64_t seed);

// Records of the listed classes removed.
Dataset drop_classes(const Dataset& ds, std::initializer_list<BeatClass> classes);

// Classes whose count differs from the reference table for the split.
std::vector<BeatClass> reference_count_mismatches(const ClassCounts& counts, SplitTag split);

}  // namespace ecgwvd
