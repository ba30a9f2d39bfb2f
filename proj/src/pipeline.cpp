#include "ecgwvd/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ecgwvd/error.hpp"
#include "ecgwvd/rng.hpp"

namespace ecgwvd {

namespace fs = std::filesystem;

namespace {

// Stream tags for derive_seed; fixed so that manifests stay interpretable.
constexpr std::uint64_t kInitStream = 0x1A17;
constexpr std::uint64_t kTrainSubsetStream = 0x5B5E7;
constexpr std::uint64_t kTestSubsetStream = 0x7E57;
constexpr std::uint64_t kAugmentStream = 0xA06;

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

void emit(const LogFn& log, const std::string& msg) {
    if (log) log(msg);
}

std::size_t largest_class(const Dataset& ds) {
    const ClassCounts counts = class_distribution(ds);
    return *std::max_element(counts.counts.begin(), counts.counts.end());
}

// Classes absent from the data cannot be balanced; they are left out of the plan.
std::vector<BeatClass> empty_classes(const Dataset& ds) {
    const ClassCounts counts = class_distribution(ds);
    std::vector<BeatClass> out;
    for (BeatClass c : kFileOrder) {
        if (counts[c] == 0) out.push_back(c);
    }
    return out;
}

Dataset augment_for_training(const Dataset& ds, std::size_t target, std::uint64_t seed) {
    AugmentPlan plan;
    plan.target_count = target > 0 ? target : largest_class(ds);
    plan.seed = derive_seed(seed, kAugmentStream);
    plan.excluded = empty_classes(ds);
    return balance_classes(ds, plan);
}

nlohmann::json history_json(const TrainHistory& h) { return h.to_json(false); }

}  // namespace

nlohmann::json transform_config_json(const TransformConfig& cfg) {
    return {{"size", cfg.size}, {"analytic", cfg.analytic}, {"ramp_strength", cfg.ramp_strength}, {"fs", cfg.fs}};
}

nlohmann::json arch_config_json(const ArchConfig& cfg) {
    return {{"input_size", cfg.input_size},
            {"stem_filters", cfg.stem_filters},
            {"stage_widths", cfg.stage_widths},
            {"blocks_per_stage", cfg.blocks_per_stage},
            {"head", std::string(to_string(cfg.head))},
            {"num_classes", cfg.num_classes}};
}

ImageSet load_images(const fs::path& path, const TransformConfig& cfg, std::size_t workers) {
    if (fs::exists(tensor_sidecar_path(path))) {
        return read_tensor(path);
    }
    return transform_dataset(load_beat_csv(path), cfg, workers);
}

nlohmann::json cmd_ingest_check(const fs::path& csv, SplitTag split) {
    const Dataset ds = load_beat_csv(csv, split);
    const ClassCounts counts = class_distribution(ds);
    const ClassCounts reference = split == SplitTag::train ? reference_train_counts() : reference_test_counts();
    nlohmann::json mismatched = nlohmann::json::array();
    for (BeatClass c : reference_count_mismatches(counts, split)) mismatched.push_back(std::string(1, class_char(c)));
    return {{"path", csv.string()},
            {"split", std::string(to_string(split))},
            {"records", ds.size()},
            {"beat_length", ds.beat_length()},
            {"counts", counts_to_json(counts)},
            {"reference_counts", counts_to_json(reference)},
            {"matches_reference", mismatched.empty()},
            {"mismatched_classes", mismatched}};
}

nlohmann::json cmd_segment(const fs::path& strip_csv, double fs_in, const fs::path& out, const SegmentConfig& cfg,
                           BeatClass label) {
    std::ifstream in(strip_csv, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + strip_csv.string());
    }
    EcgStrip strip;
    strip.fs = fs_in;
    std::string line;
    for (std::size_t row = 0; std::getline(in, line); ++row) {
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r,");
        double v = 0.0;
        const char* begin = line.data() + first;
        const char* end = line.data() + last + 1;
        const auto [ptr, ec] = std::from_chars(begin, end, v);
        if (ec != std::errc{} || ptr != end || !std::isfinite(v)) {
            throw ParseError(row, "expected one finite sample, got '" + line + "'");
        }
        strip.samples.push_back(v);
    }
    const Dataset ds = segment_strip(strip, cfg, label);
    const nlohmann::json extra = {{"source", strip_csv.string()},
                                  {"source_fs", fs_in},
                                  {"source_samples", strip.samples.size()},
                                  {"window_s", cfg.window_s},
                                  {"target_fs", cfg.target_fs},
                                  {"beat_s", cfg.beats.beat_s},
                                  {"r_position", cfg.beats.r_position},
                                  {"threshold", cfg.peaks.threshold},
                                  {"refractory_s", cfg.peaks.refractory_s},
                                  {"label", std::string(1, class_char(label))}};
    write_beat_csv(ds, out, extra);
    nlohmann::json manifest = dataset_manifest(ds);
    manifest.update(extra);
    return manifest;
}

nlohmann::json cmd_transform(const fs::path& beats_csv, const fs::path& out, const TransformConfig& cfg,
                             std::uint64_t seed, std::size_t workers) {
    const ImageSet images = transform_dataset(load_beat_csv(beats_csv), cfg, workers);
    const nlohmann::json extra = {
        {"seed", seed}, {"source", beats_csv.string()}, {"transform", transform_config_json(cfg)}};
    write_tensor(images, out, extra);
    std::ifstream side(tensor_sidecar_path(out));
    return nlohmann::json::parse(side);
}

nlohmann::json cmd_augment(const fs::path& beats_csv, const fs::path& out, const AugmentPlan& plan) {
    const Dataset ds = load_beat_csv(beats_csv);
    const Dataset balanced = balance_classes(ds, plan);
    const nlohmann::json extra = {{"source", beats_csv.string()}, {"plan", plan_to_json(plan)}};
    write_beat_csv(balanced, out, extra);
    nlohmann::json manifest = dataset_manifest(balanced);
    manifest.update(extra);
    return manifest;
}

nlohmann::json cmd_train(const TrainRequest& req, const LogFn& log) {
    TrainSchedule schedule = req.schedule;
    schedule.seed = req.seed;

    ImageSet images;
    if (fs::exists(tensor_sidecar_path(req.train))) {
        if (schedule.augmented) {
            throw ValidationError("augmented schedules need a beat CSV, not a tensor: " + req.train.string());
        }
        images = read_tensor(req.train);
    } else {
        Dataset ds = load_beat_csv(req.train);
        if (schedule.augmented) ds = augment_for_training(ds, req.augment_target, req.seed);
        images = transform_dataset(ds, req.transform, req.workers);
    }
    emit(log, "training on " + std::to_string(images.size()) + " images, schedule " + schedule.name);

    const Architecture arch = schedule_architecture(schedule, req.arch);
    CnnModel model(arch, derive_seed(req.seed, kInitStream));
    const TrainHistory history = fit(model, images, schedule, [&](const EpochRecord& e) {
        char line[160];
        std::snprintf(line, sizeof line, "epoch %d  loss %.4f  acc %.4f  lr %.6g", e.epoch, e.train_loss,
                      e.train_acc, e.lr);
        emit(log, line);
    });
    save_model(model, req.out_model);
    if (req.history_prefix) {
        write_json(fs::path(req.history_prefix->string() + ".json"), history.to_json());
        write_text(fs::path(req.history_prefix->string() + ".csv"), history.to_csv());
    }
    return {{"seed", req.seed},
            {"model", req.out_model.string()},
            {"train", req.train.string()},
            {"images", images.size()},
            {"schedule", schedule.to_json()},
            {"arch", arch_config_json(req.arch)},
            {"parameters", model.parameter_count()},
            {"stopped_early", history.stopped_early},
            {"stop_epoch", history.stop_epoch}};
}

nlohmann::json cmd_eval(const fs::path& model_path, const fs::path& test, const TransformConfig& cfg,
                        const EvalOptions& options, std::size_t workers) {
    const CnnModel model = load_model(model_path);
    TransformConfig tc = cfg;
    if (options.no_ramp) tc.ramp_strength = 0.0;
    const ImageSet images = load_images(test, tc, workers);
    const Evaluation ev = evaluate(model, images, options, workers);
    return {{"model", model_path.string()},
            {"test", test.string()},
            {"no_ramp", options.no_ramp},
            {"drop_q", options.drop_q},
            {"report", report_to_json(ev.report)},
            {"text", format_report(ev.report)}};
}

nlohmann::json cmd_classify(const fs::path& model_path, const fs::path& beats_csv, const TransformConfig& cfg,
                            std::size_t workers) {
    const CnnModel model = load_model(model_path);
    const ImageSet images = load_images(beats_csv, cfg, workers);
    const auto preds = predict_all(model, images, workers);
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t i = 0; i < preds.size(); ++i) {
        nlohmann::json probs = nlohmann::json::object();
        for (std::size_t k = 0; k < kNumClasses; ++k) {
            probs[std::string(1, class_char(kReportOrder[k]))] = preds[i].probs[k];
        }
        out.push_back({{"index", i}, {"class", std::string(1, class_char(preds[i].label))}, {"probs", probs}});
    }
    return out;
}

namespace {

double mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double BenchReport::mean_transform_ms() const { return mean(transform_ms); }
double BenchReport::mean_inference_ms() const { return mean(inference_ms); }
double BenchReport::mean_total_ms() const { return mean_transform_ms() + mean_inference_ms(); }

double BenchReport::p95_total_ms() const {
    if (n == 0) return 0.0;
    std::vector<double> total(n);
    for (std::size_t i = 0; i < n; ++i) total[i] = transform_ms[i] + inference_ms[i];
    std::sort(total.begin(), total.end());
    // Nearest-rank percentile.
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
    return total[std::max<std::size_t>(rank, 1) - 1];
}

nlohmann::json BenchReport::to_json() const {
    if (n == 0) {
        return {{"n", 0}, {"threads", 1}};
    }
    return {{"n", n},
            {"threads", 1},
            {"mean_total_ms", mean_total_ms()},
            {"p95_total_ms", p95_total_ms()},
            {"mean_transform_ms", mean_transform_ms()},
            {"mean_inference_ms", mean_inference_ms()}};
}

BenchReport run_bench(CnnModel& model, const Dataset& beats, std::size_t n, const TransformConfig& cfg) {
    BenchReport rep;
    if (n == 0) return rep;
    if (beats.empty()) {
        throw ValidationError("bench needs at least one beat");
    }
    using clock = std::chrono::steady_clock;
    const auto ms = [](clock::duration d) { return std::chrono::duration<double, std::milli>(d).count(); };
    rep.n = n;
    rep.transform_ms.reserve(n);
    rep.inference_ms.reserve(n);
    std::vector<float> image;
    for (std::size_t i = 0; i < n; ++i) {
        const auto t0 = clock::now();
        const WvdImage img = transform_beat(beats.records[i % beats.size()].samples, cfg);
        image.assign(img.values.begin(), img.values.end());
        const auto t1 = clock::now();
        const Prediction p = predict(model, image);
        const auto t2 = clock::now();
        static_cast<void>(p);
        rep.transform_ms.push_back(ms(t1 - t0));
        rep.inference_ms.push_back(ms(t2 - t1));
    }
    return rep;
}

BenchReport cmd_bench(const fs::path& model_path, const fs::path& beats_csv, std::size_t n,
                      const TransformConfig& cfg) {
    if (n == 0) return {};
    CnnModel model = load_model(model_path);
    return run_bench(model, load_beat_csv(beats_csv), n, cfg);
}

ReproduceResult cmd_reproduce(const ReproduceRequest& req, const LogFn& log) {
    ReproduceResult result;
    TrainSchedule schedule = req.schedule ? *req.schedule : preset_schedule(req.preset);
    schedule.seed = req.seed;
    if (req.max_epochs) schedule.epochs = std::min(schedule.epochs, *req.max_epochs);
    TransformConfig tc = req.transform;
    if (req.no_ramp) tc.ramp_strength = 0.0;

    Dataset train = load_beat_csv(req.train_csv, SplitTag::train);
    if (req.drop_q) train = drop_classes(train, {BeatClass::Q});
    if (req.train_subset > 0) train = proportional_subset(train, req.train_subset, derive_seed(req.seed, kTrainSubsetStream));
    const ClassCounts train_counts = class_distribution(train);
    if (schedule.augmented) train = augment_for_training(train, req.augment_target, req.seed);

    Dataset test = load_beat_csv(req.test_csv, SplitTag::test);
    if (req.test_subset > 0) test = proportional_subset(test, req.test_subset, derive_seed(req.seed, kTestSubsetStream));

    emit(log, "transforming " + std::to_string(train.size()) + " train and " + std::to_string(test.size()) +
                  " test beats");
    const ImageSet train_images = transform_dataset(train, tc, req.workers);
    const ImageSet test_images = transform_dataset(test, tc, req.workers);

    const Architecture arch = schedule_architecture(schedule, req.arch);
    CnnModel model(arch, derive_seed(req.seed, kInitStream));
    emit(log, "preset " + std::to_string(schedule.preset) + " (" + schedule.name + "), " +
                  std::to_string(model.parameter_count()) + " parameters, up to " +
                  std::to_string(schedule.epochs) + " epochs");

    const auto t0 = std::chrono::steady_clock::now();
    result.history = fit(model, train_images, schedule, [&](const EpochRecord& e) {
        char line[200];
        if (e.val_acc) {
            std::snprintf(line, sizeof line, "epoch %d  loss %.4f  acc %.4f  val_loss %.4f  val_acc %.4f  lr %.6g",
                          e.epoch, e.train_loss, e.train_acc, *e.val_loss, *e.val_acc, e.lr);
        } else {
            std::snprintf(line, sizeof line, "epoch %d  loss %.4f  acc %.4f  lr %.6g  %.1fs", e.epoch,
                          e.train_loss, e.train_acc, e.lr, e.wall_time_s);
        }
        emit(log, line);
    });
    result.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const Evaluation ev = evaluate(model, test_images, EvalOptions{req.no_ramp, req.drop_q}, req.workers);
    result.report = ev.report;
    result.schedule = schedule;

    if (!req.out_dir.empty()) {
        fs::create_directories(req.out_dir);
        nlohmann::json report = {{"preset", schedule.preset},
                                 {"schedule", schedule.name},
                                 {"seed", req.seed},
                                 {"no_ramp", req.no_ramp},
                                 {"drop_q", req.drop_q},
                                 {"stop_epoch", result.history.stop_epoch},
                                 {"stopped_early", result.history.stopped_early},
                                 {"metrics", report_to_json(ev.report)}};
        write_text(req.out_dir / "report.txt", format_report(ev.report));
        write_json(req.out_dir / "report.json", report);
        write_text(req.out_dir / "confusion.csv", confusion_to_csv(ev.report.confusion));
        write_json(req.out_dir / "history.json", history_json(result.history));
        write_text(req.out_dir / "history.csv", result.history.to_csv(false));
        save_model(model, req.out_dir / "model.bin");
        const nlohmann::json manifest = {
            {"seed", req.seed},
            {"train_csv", req.train_csv.string()},
            {"test_csv", req.test_csv.string()},
            {"train_subset", req.train_subset},
            {"test_subset", req.test_subset},
            {"train_counts", counts_to_json(train_counts)},
            {"train_images", train_images.size()},
            {"test_counts", counts_to_json(class_distribution(test))},
            {"augment_target", req.augment_target},
            {"transform", transform_config_json(tc)},
            {"arch", arch_config_json(req.arch)},
            {"parameters", model.parameter_count()},
            {"schedule", schedule.to_json()},
            {"no_ramp", req.no_ramp},
            {"drop_q", req.drop_q},
            {"workers", req.workers},
            {"files", {"report.txt", "report.json", "confusion.csv", "history.json", "history.csv", "model.bin"}}};
        write_json(req.out_dir / "manifest.json", manifest);
        nlohmann::json epochs = nlohmann::json::array();
        for (const auto& e : result.history.epochs) epochs.push_back(e.wall_time_s);
        write_json(req.out_dir / "timing.json", {{"train_seconds", result.train_seconds}, {"epoch_seconds", epochs}});
    }
    return result;
}

}  // namespace ecgwvd
