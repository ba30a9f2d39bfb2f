#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgwvd/augment.hpp"
#include "ecgwvd/segmentation.hpp"
#include "ecgwvd/train.hpp"

// Subcommand bodies shared by the command-line tool and the acceptance suite.
// Every function here is deterministic given its seed; progress goes to `log`.
namespace ecgwvd {

using LogFn = std::function<void(const std::string&)>;

// Input images for training or evaluation: a tensor written by cmd_transform
// (recognised by its sidecar) or a beat CSV transformed in process.
ImageSet load_images(const std::filesystem::path& path, const TransformConfig& cfg, std::size_t workers);

nlohmann::json transform_config_json(const TransformConfig& cfg);
nlohmann::json arch_config_json(const ArchConfig& cfg);

nlohmann::json cmd_ingest_check(const std::filesystem::path& csv, SplitTag split);

// Single-column raw strip CSV in, beat CSV plus manifest out.
nlohmann::json cmd_segment(const std::filesystem::path& strip_csv, double fs, const std::filesystem::path& out,
                           const SegmentConfig& cfg, BeatClass label);

nlohmann::json cmd_transform(const std::filesystem::path& beats_csv, const std::filesystem::path& out,
                             const TransformConfig& cfg, std::uint64_t seed, std::size_t workers);

nlohmann::json cmd_augment(const std::filesystem::path& beats_csv, const std::filesystem::path& out,
                           const AugmentPlan& plan);

struct TrainRequest {
    std::filesystem::path train;  // tensor or beat CSV
    std::filesystem::path out_model;
    std::optional<std::filesystem::path> history_prefix;  // writes <prefix>.json and <prefix>.csv
    TrainSchedule schedule = preset_schedule(10);
    ArchConfig arch;
    TransformConfig transform;
    // Augmented schedules balance every class to this count; 0 = largest class.
    std::size_t augment_target = 0;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
};

nlohmann::json cmd_train(const TrainRequest& req, const LogFn& log = {});

nlohmann::json cmd_eval(const std::filesystem::path& model, const std::filesystem::path& test,
                        const TransformConfig& cfg, const EvalOptions& options, std::size_t workers);

// One JSON object per beat: index, predicted class and report-order probabilities.
nlohmann::json cmd_classify(const std::filesystem::path& model, const std::filesystem::path& beats_csv,
                            const TransformConfig& cfg, std::size_t workers);

struct BenchReport {
    std::size_t n = 0;
    std::vector<double> transform_ms;
    std::vector<double> inference_ms;

    double mean_transform_ms() const;
    double mean_inference_ms() const;
    double mean_total_ms() const;
    double p95_total_ms() const;
    nlohmann::json to_json() const;
};

// Per-beat wall-clock latency of transform_beat + single-image inference on
// one thread. Beats are taken cyclically from `beats`; n = 0 gives an empty report.
BenchReport run_bench(CnnModel& model, const Dataset& beats, std::size_t n, const TransformConfig& cfg);
BenchReport cmd_bench(const std::filesystem::path& model, const std::filesystem::path& beats_csv, std::size_t n,
                      const TransformConfig& cfg);

struct ReproduceRequest {
    std::filesystem::path train_csv;
    std::filesystem::path test_csv;
    std::filesystem::path out_dir;
    int preset = 10;
    std::optional<TrainSchedule> schedule;  // overrides the preset when set
    std::size_t train_subset = 0;  // proportional subset size, 0 = all
    std::size_t test_subset = 0;
    ArchConfig arch;
    TransformConfig transform;
    bool no_ramp = false;
    bool drop_q = false;
    std::size_t augment_target = 0;
    std::optional<int> max_epochs;  // caps the schedule's epoch count
    std::uint64_t seed = 0;
    std::size_t workers = 1;
};

struct ReproduceResult {
    MetricsReport report;
    TrainHistory history;
    TrainSchedule schedule;
    double train_seconds = 0.0;
};

// transform -> train -> evaluate. Writes report.txt, report.json,
// confusion.csv, history.json, history.csv, model.bin and manifest.json to
// out_dir. Every file except timing.json is byte-identical across runs with
// the same request.
ReproduceResult cmd_reproduce(const ReproduceRequest& req, const LogFn& log = {});

}  // namespace ecgwvd
