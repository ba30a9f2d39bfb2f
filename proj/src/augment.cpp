#include "ecgwvd/augment.hpp"

#include <algorithm>

#include "ecgwvd/error.hpp"
#include "ecgwvd/rng.hpp"

namespace ecgwvd {

nlohmann::json plan_to_json(const AugmentPlan& plan) {
    nlohmann::json excluded = nlohmann::json::array();
    for (BeatClass c : plan.excluded) excluded.push_back(std::string(1, class_char(c)));
    return {{"target_count", plan.target_count},
            {"mode", plan.mode == AugmentMode::noise ? "noise" : "repeat"},
            {"noise_fraction", plan.noise_fraction},
            {"seed", plan.seed},
            {"excluded", excluded}};
}

BeatRecord gaussian_augment(const BeatRecord& beat, double noise_fraction, std::uint64_t seed) {
    if (!(noise_fraction >= 0.0 && noise_fraction <= 1.0)) {
        throw ValidationError("noise fraction must lie in [0, 1]");
    }
    BeatRecord out = beat;
    if (beat.samples.empty()) {
        return out;
    }
    const double peak = *std::max_element(beat.samples.begin(), beat.samples.end());
    const double bound = noise_fraction * peak;
    if (!(bound > 0.0)) {
        return out;
    }
    const double sigma = bound / 3.0;
    Rng rng(seed);
    for (double& s : out.samples) {
        const double n = std::clamp(sigma * rng.normal(), -bound, bound);
        s = std::clamp(s + n, 0.0, 1.0);
    }
    return out;
}

std::vector<std::size_t> augment_source_indices(std::size_t class_size, std::size_t deficit) {
    std::vector<std::size_t> out(deficit);
    for (std::size_t i = 0; i < deficit; ++i) out[i] = i % class_size;
    return out;
}

Dataset balance_classes(const Dataset& ds, const AugmentPlan& plan) {
    if (plan.target_count == 0) {
        throw ValidationError("target_count must be >= 1");
    }
    std::array<std::vector<const BeatRecord*>, kNumClasses> by_class;
    for (const auto& r : ds.records) by_class[static_cast<std::size_t>(r.label)].push_back(&r);

    Dataset out;
    out.split = ds.split;
    for (BeatClass c : kFileOrder) {
        const auto& members = by_class[static_cast<std::size_t>(c)];
        const bool excluded = std::find(plan.excluded.begin(), plan.excluded.end(), c) != plan.excluded.end();
        if (excluded) {
            for (const auto* r : members) out.records.push_back(*r);
            continue;
        }
        if (members.empty()) {
            throw ValidationError(std::string("cannot balance empty class ") + class_char(c));
        }
        if (members.size() >= plan.target_count) {
            Dataset cls;
            for (const auto* r : members) cls.records.push_back(*r);
            auto kept = stratified_subset(cls, plan.target_count, derive_seed(plan.seed, file_code(c), ~0ull));
            std::move(kept.records.begin(), kept.records.end(), std::back_inserter(out.records));
            continue;
        }
        for (const auto* r : members) out.records.push_back(*r);
        const std::size_t deficit = plan.target_count - members.size();
        const auto sources = augment_source_indices(members.size(), deficit);
        for (std::size_t i = 0; i < deficit; ++i) {
            const BeatRecord& src = *members[sources[i]];
            BeatRecord copy = plan.mode == AugmentMode::noise
                                  ? gaussian_augment(src, plan.noise_fraction,
                                                     derive_seed(plan.seed, file_code(c), i))
                                  : src;
            copy.source_id = std::string(1, class_char(c)) + "#" + std::to_string(sources[i]) +
                             (plan.mode == AugmentMode::noise ? "+noise" : "+repeat") + std::to_string(i);
            out.records.push_back(std::move(copy));
        }
    }
    return out;
}

}  // namespace ecgwvd
