#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgwvd/ingest.hpp"

namespace ecgwvd {

enum class AugmentMode { noise, repeat };

struct AugmentPlan {
    std::size_t target_count = 20000;
    AugmentMode mode = AugmentMode::noise;
    double noise_fraction = 0.10;
    std::uint64_t seed = 0;
    // Classes left untouched (e.g. Q when it has been dropped).
    std::vector<BeatClass> excluded;
};

nlohmann::json plan_to_json(const AugmentPlan& plan);

// Adds zero-mean Gaussian noise with sigma = fraction * peak / 3, each draw
// clipped to +-fraction * peak, then clamps to [0, 1]. peak = max(beat).
BeatRecord gaussian_augment(const BeatRecord& beat, double noise_fraction, std::uint64_t seed);

// Source positions for filling a deficit: i mod class_size for i in [0, deficit).
std::vector<std::size_t> augment_source_indices(std::size_t class_size, std::size_t deficit);

// Brings every non-excluded class to exactly plan.target_count records.
// Surplus classes are down-sampled without replacement; deficit classes keep
// all originals followed by augmented copies of record (i mod class_size).
// Copy i of class c is seeded with derive_seed(plan.seed, c, i), so output is
// independent of evaluation order. Throws ValidationError on an empty class.
Dataset balance_classes(const Dataset& ds, const AugmentPlan& plan);

}  // namespace ecgwvd
