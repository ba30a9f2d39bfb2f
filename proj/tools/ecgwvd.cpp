#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ecgwvd/error.hpp"
#include "ecgwvd/parallel.hpp"
#include "ecgwvd/pipeline.hpp"
#include "png_export.hpp"

namespace fs = std::filesystem;
using namespace ecgwvd;

namespace {

struct TransformFlags {
    double ramp = 0.25;
    bool no_ramp = false;
    bool no_analytic = false;
    std::size_t size = kImageSize;

    void add(CLI::App* app) {
        app->add_option("--ramp", ramp, "Coordinate ramp strength added at the last time column")
            ->capture_default_str()
            ->check(CLI::NonNegativeNumber);
        app->add_flag("--no-ramp", no_ramp, "Build images without the coordinate ramp");
        app->add_flag("--no-analytic", no_analytic, "Use the real beat instead of its analytic signal");
        app->add_option("--size", size, "Image side length")->capture_default_str()->check(CLI::Range(2, 4096));
    }
    TransformConfig config() const {
        TransformConfig cfg;
        cfg.size = size;
        cfg.analytic = !no_analytic;
        cfg.ramp_strength = no_ramp ? 0.0 : ramp;
        return cfg;
    }
};

struct ArchFlags {
    ArchConfig cfg;

    void add(CLI::App* app) {
        app->add_option("--stem-filters", cfg.stem_filters, "Filters in the 7x7 stem")->capture_default_str();
        app->add_option("--widths", cfg.stage_widths, "Filters per residual stage")->capture_default_str();
        app->add_option("--blocks", cfg.blocks_per_stage, "Residual blocks per stage")->capture_default_str();
    }
};

struct ScheduleFlags {
    int preset = 10;
    std::string schedule_file;
    std::optional<int> epochs;
    std::size_t augment_target = 0;

    void add(CLI::App* app) {
        app->add_option("--preset", preset, "Training schedule preset 1-10")
            ->capture_default_str()
            ->check(CLI::Range(1, kNumPresets));
        app->add_option("--schedule", schedule_file, "JSON schedule; missing keys come from --preset");
        app->add_option("--epochs", epochs, "Cap on the schedule's epoch count")->check(CLI::PositiveNumber);
        app->add_option("--augment-target", augment_target,
                        "Per-class count for augmented schedules (0 = largest class)")
            ->capture_default_str();
    }
    TrainSchedule schedule() const {
        TrainSchedule s = preset_schedule(preset);
        if (!schedule_file.empty()) {
            std::ifstream in(schedule_file);
            if (!in) {
                throw IoError("cannot read " + schedule_file);
            }
            try {
                s = TrainSchedule::from_json(nlohmann::json::parse(in), s);
            } catch (const nlohmann::json::exception& e) {
                throw ValidationError("bad schedule file " + schedule_file + ": " + e.what());
            }
        }
        if (epochs) s.epochs = std::min(s.epochs, *epochs);
        return s;
    }
};

BeatClass parse_class(const std::string& s) {
    if (s.size() == 1) {
        if (const auto c = class_from_char(s[0])) return *c;
    }
    throw ValidationError("unknown class '" + s + "', expected one of N S V F Q");
}

void print_json(const nlohmann::json& j, const std::string& out) {
    if (out.empty() || out == "-") {
        std::cout << j.dump(2) << '\n';
        return;
    }
    std::ofstream f(out, std::ios::binary);
    if (!f) {
        throw IoError("cannot write " + out);
    }
    f << j.dump(2) << '\n';
}

void log_line(const std::string& msg) { std::cerr << msg << std::endl; }

void export_images(const fs::path& tensor, const fs::path& dir, std::size_t count, bool per_image) {
    const ImageSet images = read_tensor(tensor);
    fs::create_directories(dir);
    const std::size_t n = count == 0 ? images.size() : std::min(count, images.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto img = images.image(i);
        double lo = 0.0;
        double hi = 1.0 + images.ramp_strength;
        if (per_image) {
            const auto [mn, mx] = std::minmax_element(img.begin(), img.end());
            lo = *mn;
            hi = *mx;
        }
        char name[64];
        std::snprintf(name, sizeof name, "%06zu_%c.png", i, class_char(images.labels[i]));
        tools::write_png_gray(dir / name, img, images.rows, images.cols, lo, hi);
    }
    std::cerr << "wrote " << n << " images to " << dir.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ECG beat classification with Wigner-Ville images and a compact CNN"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "INI/TOML file of option defaults ([subcommand] sections); flags override it");

    std::uint64_t seed = 0;
    std::size_t workers = default_workers();
    app.add_option("--seed", seed, "Root seed for every random draw")->capture_default_str();
    app.add_option("--workers", workers, "Worker threads for transform and evaluation")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);

    // ingest-check
    auto* ingest = app.add_subcommand("ingest-check", "Parse a per-beat CSV and compare class counts to the reference");
    std::string ingest_csv, ingest_split = "train", ingest_out;
    ingest->add_option("csv", ingest_csv, "Per-beat CSV")->required();
    ingest->add_option("--split", ingest_split, "train or test")
        ->capture_default_str()
        ->check(CLI::IsMember({"train", "test"}));
    ingest->add_option("--json", ingest_out, "Write the report here instead of stdout");

    // segment
    auto* segment = app.add_subcommand("segment", "Cut a raw single-lead strip into labelled beats");
    std::string seg_in, seg_out, seg_label = "N";
    double seg_fs = 360.0;
    bool seg_long = false;
    SegmentConfig seg_cfg;
    segment->add_option("strip", seg_in, "Single-column CSV of samples")->required();
    segment->add_option("-o,--out", seg_out, "Beat CSV to write")->required();
    segment->add_option("--fs", seg_fs, "Sampling rate of the strip in Hz")->capture_default_str()->check(
        CLI::PositiveNumber);
    segment->add_option("--label", seg_label, "Class given to every beat")->capture_default_str();
    segment->add_option("--beat-seconds", seg_cfg.beats.beat_s, "Beat window length")->capture_default_str();
    segment->add_flag("--long-beats", seg_long, "Use 1.496 s beats, the span of a 187-sample row at 125 Hz");
    segment->add_option("--threshold", seg_cfg.peaks.threshold, "R-peak threshold as a fraction of the window max")
        ->capture_default_str()
        ->check(CLI::Range(0.0, 1.0));
    segment->add_option("--refractory", seg_cfg.peaks.refractory_s, "Minimum R-R spacing in seconds")
        ->capture_default_str();
    segment->add_option("--window", seg_cfg.window_s, "Normalisation window in seconds")->capture_default_str();

    // transform
    auto* transform = app.add_subcommand("transform", "Turn a beat CSV into a float32 image tensor with sidecar");
    std::string tr_in, tr_out;
    TransformFlags tr_flags;
    transform->add_option("beats", tr_in, "Per-beat CSV")->required();
    transform->add_option("-o,--out", tr_out, "Tensor file; the sidecar is <out>.json")->required();
    tr_flags.add(transform);

    // augment
    auto* augment = app.add_subcommand("augment", "Balance classes by down-sampling and noisy copies");
    std::string aug_in, aug_out, aug_mode = "noise";
    std::vector<std::string> aug_exclude;
    AugmentPlan plan;
    augment->add_option("beats", aug_in, "Per-beat CSV")->required();
    augment->add_option("-o,--out", aug_out, "Balanced beat CSV")->required();
    augment->add_option("--target", plan.target_count, "Records per class")->capture_default_str();
    augment->add_option("--mode", aug_mode, "noise or repeat")
        ->capture_default_str()
        ->check(CLI::IsMember({"noise", "repeat"}));
    augment->add_option("--noise", plan.noise_fraction, "Noise bound as a fraction of the beat peak")
        ->capture_default_str()
        ->check(CLI::Range(0.0, 1.0));
    augment->add_option("--exclude", aug_exclude, "Classes left untouched");

    // train
    auto* train = app.add_subcommand("train", "Train the compact CNN on a tensor or beat CSV");
    std::string train_in, train_model, train_history;
    TransformFlags train_tf;
    ArchFlags train_arch;
    ScheduleFlags train_sched;
    train->add_option("train", train_in, "Tensor (with sidecar) or per-beat CSV")->required();
    train->add_option("-o,--out", train_model, "Model file to write")->required();
    train->add_option("--history", train_history, "Write <prefix>.json and <prefix>.csv");
    train_tf.add(train);
    train_arch.add(train);
    train_sched.add(train);

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a model and print the classification report");
    std::string eval_model, eval_test, eval_json, eval_csv;
    TransformFlags eval_tf;
    bool eval_drop_q = false;
    eval->add_option("model", eval_model, "Model file")->required();
    eval->add_option("test", eval_test, "Tensor or per-beat CSV")->required();
    eval->add_flag("--drop-q", eval_drop_q, "Discard Q beats and report four classes");
    eval->add_option("--json", eval_json, "Write the JSON report here");
    eval->add_option("--confusion", eval_csv, "Write the confusion matrix CSV here");
    eval_tf.add(eval);

    // classify
    auto* classify = app.add_subcommand("classify", "Predict the class of every beat");
    std::string cls_model, cls_in, cls_out;
    TransformFlags cls_tf;
    classify->add_option("model", cls_model, "Model file")->required();
    classify->add_option("beats", cls_in, "Per-beat CSV or tensor")->required();
    classify->add_option("-o,--out", cls_out, "JSON predictions (default stdout)");
    cls_tf.add(classify);

    // bench
    auto* bench = app.add_subcommand("bench", "Single-threaded per-beat latency of transform plus inference");
    std::string bench_model, bench_in, bench_out;
    std::size_t bench_n = 1000;
    TransformFlags bench_tf;
    ArchFlags bench_arch;
    bench->add_option("beats", bench_in, "Per-beat CSV")->required();
    bench->add_option("--model", bench_model, "Model file (default: freshly initialised compact model)")
        ;
    bench->add_option("-n", bench_n, "Beats to classify")->capture_default_str();
    bench->add_option("--json", bench_out, "Write the report here instead of stdout");
    bench_tf.add(bench);
    bench_arch.add(bench);

    // reproduce
    auto* reproduce = app.add_subcommand("reproduce", "Transform, train and evaluate one schedule end to end");
    ReproduceRequest rq;
    std::string rq_train, rq_test, rq_out;
    TransformFlags rq_tf;
    ArchFlags rq_arch;
    ScheduleFlags rq_sched;
    reproduce->add_option("--train", rq_train, "Training per-beat CSV")->required();
    reproduce->add_option("--test", rq_test, "Test per-beat CSV")->required();
    reproduce->add_option("-o,--out", rq_out, "Output directory")->required();
    reproduce->add_option("--train-subset", rq.train_subset, "Class-proportional training subset (0 = all)")
        ->capture_default_str();
    reproduce->add_option("--test-subset", rq.test_subset, "Class-proportional test subset (0 = all)")
        ->capture_default_str();
    reproduce->add_flag("--drop-q", rq.drop_q, "Train and report without the Q class");
    rq_tf.add(reproduce);
    rq_arch.add(reproduce);
    rq_sched.add(reproduce);

    // export-images
    auto* exporter = app.add_subcommand("export-images", "Write tensor images as 8-bit grayscale PNG files");
    std::string ex_in, ex_dir;
    std::size_t ex_count = 0;
    bool ex_per_image = false;
    exporter->add_option("tensor", ex_in, "Tensor file with sidecar")->required();
    exporter->add_option("-o,--out", ex_dir, "Output directory")->required();
    exporter->add_option("--count", ex_count, "Images to export (0 = all)")->capture_default_str();
    exporter->add_flag("--per-image", ex_per_image,
                       "Stretch each image to its own range instead of [0, 1 + ramp]");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(ExitCode::validation);
    }

    try {
        if (*ingest) {
            const auto split = split_from_string(ingest_split).value();
            const nlohmann::json rep = cmd_ingest_check(ingest_csv, split);
            print_json(rep, ingest_out);
        } else if (*segment) {
            if (seg_long) seg_cfg.beats.beat_s = 1.496;
            const auto manifest = cmd_segment(seg_in, seg_fs, seg_out, seg_cfg, parse_class(seg_label));
            std::cerr << "wrote " << manifest.at("count") << " beats to " << seg_out << '\n';
        } else if (*transform) {
            const auto sidecar = cmd_transform(tr_in, tr_out, tr_flags.config(), seed, workers);
            std::cerr << "wrote " << sidecar.at("count") << " images to " << tr_out << '\n';
        } else if (*augment) {
            plan.seed = seed;
            plan.mode = aug_mode == "repeat" ? AugmentMode::repeat : AugmentMode::noise;
            for (const auto& c : aug_exclude) plan.excluded.push_back(parse_class(c));
            const auto manifest = cmd_augment(aug_in, aug_out, plan);
            std::cerr << "wrote " << manifest.at("count") << " beats to " << aug_out << '\n';
        } else if (*train) {
            TrainRequest req;
            req.train = train_in;
            req.out_model = train_model;
            if (!train_history.empty()) req.history_prefix = fs::path(train_history);
            req.schedule = train_sched.schedule();
            req.arch = train_arch.cfg;
            req.transform = train_tf.config();
            req.augment_target = train_sched.augment_target;
            req.seed = seed;
            req.workers = workers;
            const auto manifest = cmd_train(req, log_line);
            print_json(manifest, "");
        } else if (*eval) {
            const EvalOptions opts{eval_tf.no_ramp, eval_drop_q};
            const auto rep = cmd_eval(eval_model, eval_test, eval_tf.config(), opts, workers);
            std::cout << rep.at("text").get<std::string>();
            if (!eval_json.empty()) print_json(rep, eval_json);
            if (!eval_csv.empty()) {
                std::ofstream f(eval_csv, std::ios::binary);
                if (!f) throw IoError("cannot write " + eval_csv);
                ConfusionMatrix cm;
                const auto& rows = rep.at("report").at("confusion");
                for (std::size_t i = 0; i < kNumClasses; ++i)
                    for (std::size_t j = 0; j < kNumClasses; ++j)
                        cm.counts[i][j] = rows.at(i).at(j).get<std::uint64_t>();
                f << confusion_to_csv(cm);
            }
        } else if (*classify) {
            print_json(cmd_classify(cls_model, cls_in, cls_tf.config(), workers), cls_out);
        } else if (*bench) {
            BenchReport rep;
            if (bench_n > 0) {
                const TransformConfig cfg = bench_tf.config();
                CnnModel model = bench_model.empty()
                                     ? CnnModel(compact_resnet(bench_arch.cfg), seed)
                                     : load_model(bench_model);
                rep = run_bench(model, load_beat_csv(bench_in), bench_n, cfg);
            }
            print_json(rep.to_json(), bench_out);
        } else if (*reproduce) {
            rq.train_csv = rq_train;
            rq.test_csv = rq_test;
            rq.out_dir = rq_out;
            rq.preset = rq_sched.preset;
            rq.schedule = rq_sched.schedule();
            rq.arch = rq_arch.cfg;
            rq.transform = rq_tf.config();
            rq.no_ramp = rq_tf.no_ramp;
            rq.augment_target = rq_sched.augment_target;
            rq.seed = seed;
            rq.workers = workers;
            const auto result = cmd_reproduce(rq, log_line);
            std::cout << format_report(result.report);
        } else if (*exporter) {
            export_images(ex_in, ex_dir, ex_count, ex_per_image);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(e.exit_code());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::io);
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::validation);
    }
    return 0;
}
