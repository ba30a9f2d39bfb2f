#include <gtest/gtest.h>

#include "ecgwvd/error.hpp"
#include "ecgwvd/pipeline.hpp"
#include "synthetic.hpp"

using namespace ecgwvd;
using ecgwvd::testing::TempDir;

namespace {

Dataset small_dataset(std::size_t per_class, std::uint64_t seed) {
    ClassCounts counts;
    for (BeatClass c : kFileOrder) counts[c] = per_class;
    return ecgwvd::testing::synthetic_dataset(counts, seed);
}

ArchConfig tiny_arch() {
    ArchConfig cfg;
    cfg.stem_filters = 4;
    cfg.stage_widths = {4};
    cfg.blocks_per_stage = 1;
    return cfg;
}

}  // namespace

TEST(BenchReport, NearestRankPercentileAndMeans) {
    BenchReport rep;
    rep.n = 20;
    for (int i = 1; i <= 20; ++i) {
        rep.transform_ms.push_back(i);
        rep.inference_ms.push_back(0.5);
    }
    // ceil(0.95 * 20) = 19th smallest total.
    EXPECT_DOUBLE_EQ(rep.p95_total_ms(), 19.5);
    EXPECT_DOUBLE_EQ(rep.mean_transform_ms(), 10.5);
    EXPECT_DOUBLE_EQ(rep.mean_total_ms(), 11.0);
    EXPECT_EQ(rep.to_json().at("n"), 20);
}

TEST(BenchReport, EmptyReport) {
    const BenchReport rep;
    EXPECT_EQ(rep.mean_total_ms(), 0.0);
    EXPECT_EQ(rep.p95_total_ms(), 0.0);
    EXPECT_EQ(rep.to_json(), (nlohmann::json{{"n", 0}, {"threads", 1}}));
}

TEST(RunBench, CyclesThroughBeatsAndTimesEachOne) {
    CnnModel model(compact_resnet(tiny_arch()), 1);
    const Dataset ds = small_dataset(1, 2);
    const BenchReport rep = run_bench(model, ds, 12, TransformConfig{});
    EXPECT_EQ(rep.n, 12u);
    ASSERT_EQ(rep.transform_ms.size(), 12u);
    for (std::size_t i = 0; i < rep.n; ++i) {
        EXPECT_GT(rep.transform_ms[i], 0.0);
        EXPECT_GT(rep.inference_ms[i], 0.0);
    }
    EXPECT_EQ(run_bench(model, ds, 0, TransformConfig{}).n, 0u);
    EXPECT_THROW(run_bench(model, Dataset{}, 3, TransformConfig{}), ValidationError);
}

TEST(LoadImages, TensorAndCsvInputsAgree) {
    TempDir dir;
    write_beat_csv(small_dataset(1, 3), dir / "beats.csv");
    cmd_transform(dir / "beats.csv", dir / "beats.f32", TransformConfig{}, 0, 1);
    const ImageSet from_csv = load_images(dir / "beats.csv", TransformConfig{}, 2);
    const ImageSet from_tensor = load_images(dir / "beats.f32", TransformConfig{}, 1);
    EXPECT_EQ(from_csv.pixels, from_tensor.pixels);
    EXPECT_EQ(from_csv.labels, from_tensor.labels);
}

TEST(CmdTrain, AugmentedScheduleNeedsWaveforms) {
    TempDir dir;
    write_beat_csv(small_dataset(1, 4), dir / "beats.csv");
    cmd_transform(dir / "beats.csv", dir / "beats.f32", TransformConfig{}, 0, 1);
    TrainRequest req;
    req.train = dir / "beats.f32";
    req.out_model = dir / "m.bin";
    req.schedule = preset_schedule(9);
    req.schedule.epochs = 1;
    req.arch = tiny_arch();
    EXPECT_THROW(cmd_train(req), ValidationError);
}

TEST(CmdTrain, AugmentedScheduleBalancesToLargestClass) {
    TempDir dir;
    ClassCounts counts;
    counts[BeatClass::N] = 9;
    counts[BeatClass::S] = 2;
    counts[BeatClass::V] = 3;
    counts[BeatClass::F] = 1;
    counts[BeatClass::Q] = 4;
    write_beat_csv(ecgwvd::testing::synthetic_dataset(counts, 5), dir / "beats.csv");
    TrainRequest req;
    req.train = dir / "beats.csv";
    req.out_model = dir / "m.bin";
    req.schedule = preset_schedule(9);
    req.schedule.epochs = 1;
    req.arch = tiny_arch();
    const auto manifest = cmd_train(req);
    EXPECT_EQ(manifest.at("images"), 45);
    EXPECT_EQ(load_model(dir / "m.bin").architecture(), schedule_architecture(req.schedule, tiny_arch()));
}
