#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgwvd/labels.hpp"

namespace ecgwvd {

// counts[i][j]: records of true class i predicted as class j; both indices in
// report order F, N, Q, S, V.
struct ConfusionMatrix {
    std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};

    std::uint64_t& at(BeatClass truth, BeatClass pred) noexcept {
        return counts[report_index(truth)][report_index(pred)];
    }
    std::uint64_t at(BeatClass truth, BeatClass pred) const noexcept {
        return counts[report_index(truth)][report_index(pred)];
    }
    std::uint64_t support(BeatClass c) const noexcept;
    std::uint64_t total() const noexcept;

    ConfusionMatrix& operator+=(const ConfusionMatrix& other) noexcept;
    bool operator==(const ConfusionMatrix&) const = default;
};

// Throws ValidationError on length mismatch or empty input.
ConfusionMatrix confusion_matrix(std::span<const BeatClass> truth, std::span<const BeatClass> predicted);

struct ClassMetrics {
    BeatClass label = BeatClass::N;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::uint64_t support = 0;
};

struct AverageMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct MetricsReport {
    std::vector<ClassMetrics> classes;  // report order, reported classes only
    double accuracy = 0.0;
    std::uint64_t total = 0;
    AverageMetrics macro;
    AverageMetrics weighted;
    ConfusionMatrix confusion;

    const ClassMetrics* find(BeatClass c) const noexcept;
};

// Per-class precision/recall/F1 (0/0 -> 0), accuracy = trace / total, macro and
// support-weighted averages over `reported` classes. Rows of unreported
// classes are ignored; a reported record predicted as an unreported class
// still counts as a false negative.
MetricsReport per_class_metrics(const ConfusionMatrix& cm, std::span<const BeatClass> reported = kReportOrder);

inline constexpr std::array<BeatClass, 4> kClassesWithoutQ{BeatClass::F, BeatClass::N, BeatClass::S,
                                                           BeatClass::V};

struct EvalOptions {
    bool no_ramp = false;
    bool drop_q = false;
};

// Metrics from label lists; with drop_q, Q-labelled records are discarded
// and four classes are reported. Throws ValidationError if nothing is left.
MetricsReport evaluate_predictions(std::span<const BeatClass> truth, std::span<const BeatClass> predicted,
                                   const EvalOptions& options = {});

// Aligned text table with four decimals, in the style of a classification report.
std::string format_report(const MetricsReport& report);
nlohmann::json report_to_json(const MetricsReport& report);
std::string confusion_to_csv(const ConfusionMatrix& cm);

}  // namespace ecgwvd
