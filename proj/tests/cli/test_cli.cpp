// Drives the built ecgwvd binary through the shell and checks files and exit codes.

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "ecgwvd/images.hpp"
#include "ecgwvd/ingest.hpp"
#include "synthetic.hpp"

using namespace ecgwvd;
using ecgwvd::testing::TempDir;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

CliResult cli(const TempDir& dir, const std::string& args) {
    const auto out = dir / "stdout.txt";
    const auto err = dir / "stderr.txt";
    const std::string cmd = std::string(ECGWVD_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

void write_beats(const std::filesystem::path& path, std::size_t per_class, std::uint64_t seed) {
    ClassCounts counts;
    for (BeatClass c : kFileOrder) counts[c] = per_class;
    write_beat_csv(ecgwvd::testing::synthetic_dataset(counts, seed), path);
}

}  // namespace

TEST(CliTransform, TenBeatsGiveTenImagesWithSidecar) {
    TempDir dir;
    write_beats(dir / "beats.csv", 2, 1);
    const CliResult r = cli(dir, "transform " + q(dir / "beats.csv") + " -o " + q(dir / "t.f32"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(std::filesystem::file_size(dir / "t.f32"), 10u * 128 * 128 * sizeof(float));
    const auto meta = nlohmann::json::parse(slurp(dir / "t.f32.json"));
    EXPECT_EQ(meta.at("count"), 10);
    EXPECT_EQ(meta.at("rows"), 128);
    EXPECT_EQ(meta.at("cols"), 128);
    EXPECT_EQ(meta.at("seed"), 0);
}

TEST(CliTransform, NoRampDiffersExactlyByTheRamp) {
    TempDir dir;
    write_beats(dir / "beats.csv", 2, 2);
    ASSERT_EQ(cli(dir, "transform " + q(dir / "beats.csv") + " -o " + q(dir / "on.f32")).code, 0);
    ASSERT_EQ(cli(dir, "transform " + q(dir / "beats.csv") + " --no-ramp -o " + q(dir / "off.f32")).code, 0);
    const ImageSet on = read_tensor(dir / "on.f32");
    const ImageSet off = read_tensor(dir / "off.f32");
    const WvdImage ramp = ramp_image(128, 128, 0.25);
    ASSERT_EQ(on.pixels.size(), off.pixels.size());
    for (std::size_t i = 0; i < on.pixels.size(); ++i) {
        ASSERT_EQ(on.pixels[i] - static_cast<float>(ramp.values[i % ramp.values.size()]), off.pixels[i]) << i;
    }
}

TEST(CliTransform, RerunIsByteIdentical) {
    TempDir dir;
    write_beats(dir / "beats.csv", 2, 3);
    for (const char* name : {"a.f32", "b.f32"}) {
        ASSERT_EQ(cli(dir, "--seed 7 transform " + q(dir / "beats.csv") + " -o " + q(dir / name)).code, 0);
    }
    EXPECT_EQ(slurp(dir / "a.f32"), slurp(dir / "b.f32"));
    // Sidecars name their own source path only; otherwise identical.
    EXPECT_EQ(slurp(dir / "a.f32.json"), slurp(dir / "b.f32.json"));
}

TEST(CliConfig, FlagsOverrideConfigOverrideDefaults) {
    TempDir dir;
    write_beats(dir / "beats.csv", 1, 4);
    std::ofstream(dir / "cfg.ini") << "[transform]\nramp=0.5\n";
    ASSERT_EQ(cli(dir, "--config " + q(dir / "cfg.ini") + " transform " + q(dir / "beats.csv") + " -o " +
                           q(dir / "c.f32"))
                  .code,
              0);
    EXPECT_EQ(read_tensor(dir / "c.f32").ramp_strength, 0.5);
    ASSERT_EQ(cli(dir, "--config " + q(dir / "cfg.ini") + " transform " + q(dir / "beats.csv") + " --ramp 0.1 -o " +
                           q(dir / "f.f32"))
                  .code,
              0);
    EXPECT_EQ(read_tensor(dir / "f.f32").ramp_strength, 0.1);
    ASSERT_EQ(cli(dir, "transform " + q(dir / "beats.csv") + " -o " + q(dir / "d.f32")).code, 0);
    EXPECT_EQ(read_tensor(dir / "d.f32").ramp_strength, 0.25);
}

TEST(CliExitCodes, ValidationIoAndUsage) {
    TempDir dir;
    EXPECT_EQ(cli(dir, "transform " + q(dir / "missing.csv") + " -o " + q(dir / "x.f32")).code, 3);
    std::ofstream(dir / "bad.csv") << "0.1,0.2,zero\n";
    const CliResult bad = cli(dir, "transform " + q(dir / "bad.csv") + " -o " + q(dir / "x.f32"));
    EXPECT_EQ(bad.code, 2);
    EXPECT_NE(bad.err.find("row 0"), std::string::npos) << bad.err;
    EXPECT_EQ(cli(dir, "transform").code, 2);
    EXPECT_EQ(cli(dir, "no-such-command").code, 2);
    EXPECT_EQ(cli(dir, "--help").code, 0);
}

TEST(CliBench, ZeroBeatsIsAnEmptyReport) {
    TempDir dir;
    write_beats(dir / "beats.csv", 1, 5);
    const CliResult r = cli(dir, "bench " + q(dir / "beats.csv") + " -n 0");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j.at("n"), 0);
    EXPECT_FALSE(j.contains("mean_total_ms"));
}

TEST(CliBench, TotalCoversTransform) {
    TempDir dir;
    write_beats(dir / "beats.csv", 1, 6);
    const CliResult r = cli(dir, "bench " + q(dir / "beats.csv") + " -n 7 --stem-filters 4 --widths 4 8 --blocks 1");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j.at("n"), 7);
    EXPECT_EQ(j.at("threads"), 1);
    EXPECT_GE(j.at("mean_total_ms").get<double>(), j.at("mean_transform_ms").get<double>());
    EXPECT_GE(j.at("p95_total_ms").get<double>(), 0.0);
}

class CliReproduce : public ::testing::Test {
protected:
    TempDir dir;
    std::string data;

    void SetUp() override {
        write_beats(dir / "train.csv", 8, 10);
        write_beats(dir / "test.csv", 4, 11);
        data = "--train " + q(dir / "train.csv") + " --test " + q(dir / "test.csv") +
               " --stem-filters 4 --widths 4 8 --blocks 1 --workers 2";
    }
};

TEST_F(CliReproduce, ReportHasFiveClassRowsAndAverages) {
    const CliResult r = cli(dir, "--seed 3 reproduce " + data + " --epochs 2 -o " + q(dir / "out"));
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string report = slurp(dir / "out" / "report.txt");
    for (const char* row : {"\nF ", "\nN ", "\nQ ", "\nS ", "\nV ", "\nmacro avg", "\nweighted avg"}) {
        EXPECT_NE(report.find(row), std::string::npos) << row;
    }
    EXPECT_EQ(r.out, report);
    const auto j = nlohmann::json::parse(slurp(dir / "out" / "report.json"));
    EXPECT_EQ(j.at("metrics").at("classes").size(), 5u);
    EXPECT_EQ(j.at("seed"), 3);
    EXPECT_EQ(nlohmann::json::parse(slurp(dir / "out" / "manifest.json")).at("seed"), 3);
    for (const char* f : {"confusion.csv", "history.json", "history.csv", "model.bin", "timing.json"}) {
        EXPECT_TRUE(std::filesystem::exists(dir / "out" / f)) << f;
    }
}

TEST_F(CliReproduce, SameSeedGivesByteIdenticalReports) {
    ASSERT_EQ(cli(dir, "--seed 4 reproduce " + data + " --epochs 2 -o " + q(dir / "a")).code, 0);
    ASSERT_EQ(cli(dir, "--seed 4 reproduce " + data + " --epochs 2 -o " + q(dir / "b")).code, 0);
    for (const char* f : {"report.txt", "report.json", "confusion.csv", "history.csv", "model.bin"}) {
        EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
    }
}

TEST_F(CliReproduce, DropQReportsFourClasses) {
    ASSERT_EQ(cli(dir, "reproduce " + data + " --epochs 1 --drop-q -o " + q(dir / "out")).code, 0);
    const auto j = nlohmann::json::parse(slurp(dir / "out" / "report.json"));
    const auto& classes = j.at("metrics").at("classes");
    ASSERT_EQ(classes.size(), 4u);
    for (const auto& c : classes) EXPECT_NE(c.at("class"), "Q");
    EXPECT_EQ(j.at("metrics").at("total_support"), 16);
    EXPECT_EQ(slurp(dir / "out" / "report.txt").find("\nQ "), std::string::npos);
}

TEST_F(CliReproduce, EarlyStoppingPresetRecordsStopEpoch) {
    const CliResult r = cli(dir, "reproduce " + data + " --preset 3 --epochs 12 -o " + q(dir / "out"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto history = nlohmann::json::parse(slurp(dir / "out" / "history.json"));
    ASSERT_TRUE(history.contains("stop_epoch"));
    EXPECT_EQ(history.at("stop_epoch").get<int>(), static_cast<int>(history.at("epochs").size()));
    EXPECT_EQ(nlohmann::json::parse(slurp(dir / "out" / "report.json")).at("preset"), 3);
}

TEST(CliPipeline, TrainEvalClassifyExport) {
    TempDir dir;
    write_beats(dir / "train.csv", 6, 20);
    write_beats(dir / "test.csv", 2, 21);
    const std::string arch = " --stem-filters 4 --widths 4 8 --blocks 1";
    ASSERT_EQ(cli(dir, "transform " + q(dir / "train.csv") + " -o " + q(dir / "train.f32")).code, 0);
    const CliResult t = cli(dir, "train " + q(dir / "train.f32") + arch + " --epochs 2 --history " + q(dir / "hist") +
                               " -o " + q(dir / "m.bin"));
    ASSERT_EQ(t.code, 0) << t.err;
    EXPECT_TRUE(std::filesystem::exists(dir / "hist.csv"));
    EXPECT_EQ(nlohmann::json::parse(t.out).at("stop_epoch"), 2);

    const CliResult e = cli(dir, "eval " + q(dir / "m.bin") + " " + q(dir / "test.csv") + " --json " + q(dir / "e.json") +
                               " --confusion " + q(dir / "cm.csv"));
    ASSERT_EQ(e.code, 0) << e.err;
    EXPECT_NE(e.out.find("weighted avg"), std::string::npos);
    EXPECT_EQ(nlohmann::json::parse(slurp(dir / "e.json")).at("report").at("total_support"), 10);
    EXPECT_EQ(slurp(dir / "cm.csv").substr(0, 20), "true\\pred,F,N,Q,S,V\n");

    // A ramped model evaluated on ramp-free images is a validation error.
    EXPECT_EQ(cli(dir, "eval " + q(dir / "m.bin") + " " + q(dir / "train.f32") + " --no-ramp").code, 2);

    const CliResult c = cli(dir, "classify " + q(dir / "m.bin") + " " + q(dir / "test.csv"));
    ASSERT_EQ(c.code, 0) << c.err;
    const auto preds = nlohmann::json::parse(c.out);
    ASSERT_EQ(preds.size(), 10u);
    EXPECT_EQ(preds[0].at("probs").size(), 5u);

    ASSERT_EQ(cli(dir, "export-images " + q(dir / "train.f32") + " --count 2 -o " + q(dir / "png")).code, 0);
    const ImageSet train = read_tensor(dir / "train.f32");
    int files = 0;
    for (const auto& entry : std::filesystem::directory_iterator(dir / "png")) {
        ++files;
        EXPECT_EQ(slurp(entry.path()).substr(0, 8), std::string("\x89PNG\r\n\x1a\n", 8));
    }
    EXPECT_EQ(files, 2);
    const std::string first = std::string("000000_") + class_char(train.labels[0]) + ".png";
    EXPECT_TRUE(std::filesystem::exists(dir / "png" / first)) << first;
}

TEST(CliAugment, BalancesAndRecordsSeed) {
    TempDir dir;
    ClassCounts counts;
    counts[BeatClass::N] = 12;
    counts[BeatClass::S] = 3;
    counts[BeatClass::V] = 5;
    counts[BeatClass::F] = 2;
    counts[BeatClass::Q] = 4;
    write_beat_csv(ecgwvd::testing::synthetic_dataset(counts, 30), dir / "in.csv");
    const CliResult r = cli(dir, "--seed 9 augment " + q(dir / "in.csv") + " --target 8 -o " + q(dir / "out.csv"));
    ASSERT_EQ(r.code, 0) << r.err;
    const ClassCounts out = class_distribution(load_beat_csv(dir / "out.csv"));
    for (BeatClass c : kFileOrder) EXPECT_EQ(out[c], 8u);
    const auto manifest = nlohmann::json::parse(slurp(manifest_path(dir / "out.csv")));
    EXPECT_EQ(manifest.at("plan").at("seed"), 9);
}

TEST(CliIngestAndSegment, ChecksCountsAndCutsBeats) {
    TempDir dir;
    write_beats(dir / "beats.csv", 2, 40);
    const CliResult r = cli(dir, "ingest-check " + q(dir / "beats.csv") + " --split test");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j.at("records"), 10);
    EXPECT_FALSE(j.at("matches_reference").get<bool>());
    EXPECT_EQ(j.at("mismatched_classes").size(), 5u);

    std::ofstream strip(dir / "strip.csv");
    for (double v : ecgwvd::testing::synthetic_strip(30.0, 360.0, 0.75)) strip << v << '\n';
    strip.close();
    const CliResult s = cli(dir, "segment " + q(dir / "strip.csv") + " --fs 360 --label V -o " + q(dir / "seg.csv"));
    ASSERT_EQ(s.code, 0) << s.err;
    const Dataset seg = load_beat_csv(dir / "seg.csv");
    EXPECT_EQ(seg.size(), 40u);
    EXPECT_EQ(seg.beat_length(), 187u);
    EXPECT_EQ(class_distribution(seg)[BeatClass::V], 40u);
}
