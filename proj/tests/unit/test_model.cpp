#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <string>

#include <gtest/gtest.h>

#include "ecgwvd/error.hpp"
#include "ecgwvd/model.hpp"
#include "ecgwvd/rng.hpp"
#include "synthetic.hpp"

using namespace ecgwvd;
using ecgwvd::testing::TempDir;

namespace {

template <typename T>
Tensor<T> random_input(int n, Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(n, s);
    Rng rng(seed);
    for (auto& v : t.data) v = static_cast<T>(lo + (hi - lo) * rng.uniform());
    return t;
}

struct GraphBuilder {
    Architecture arch;
    explicit GraphBuilder(Shape input) {
        arch.input = input;
        arch.layers.push_back({.kind = LayerKind::input, .name = "input"});
    }
    int add(LayerSpec spec) {
        if (spec.name.empty()) spec.name = "n" + std::to_string(arch.layers.size());
        arch.layers.push_back(std::move(spec));
        return static_cast<int>(arch.layers.size()) - 1;
    }
    int last() const { return static_cast<int>(arch.layers.size()) - 1; }
};

double norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// ||a - n|| / (||a|| + ||n||), with a floor so all-zero gradients compare as equal.
double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - n[i];
    return norm2(d) / std::max(norm2(a) + norm2(n), 1e-10);
}

// Central differences of `objective` with respect to every parameter and every
// input value; the analytic gradients come from `analytic`, which must leave
// parameter gradients and input_grad() populated.
double gradient_check(Network<double>& net, Tensor<double> x, const std::function<double()>& objective_at,
                      const std::function<void()>& analytic, Tensor<double>& input_slot) {
    input_slot = x;
    net.zero_grad();
    analytic();
    const std::vector<double> input_grad = net.input_grad().data;
    double worst = 0.0;
    const double eps = 1e-6;
    for (auto* p : net.params()) {
        const std::vector<double> grad = p->grad;
        std::vector<double> numeric(p->value.size());
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double keep = p->value[i];
            p->value[i] = keep + eps;
            const double up = objective_at();
            p->value[i] = keep - eps;
            const double down = objective_at();
            p->value[i] = keep;
            numeric[i] = (up - down) / (2 * eps);
        }
        const double err = relative_error(grad, numeric);
        EXPECT_LT(err, 1e-4) << p->name;
        worst = std::max(worst, err);
    }
    std::vector<double> numeric(x.data.size());
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double keep = input_slot.data[i];
        input_slot.data[i] = keep + eps;
        const double up = objective_at();
        input_slot.data[i] = keep - eps;
        const double down = objective_at();
        input_slot.data[i] = keep;
        numeric[i] = (up - down) / (2 * eps);
    }
    const double err = relative_error(input_grad, numeric);
    EXPECT_LT(err, 1e-4) << "input";
    return std::max(worst, err);
}

// Objective sum(r * output) for a fixed random r; its output gradient is r.
double check_graph(const Architecture& arch, bool training, int batch = 2, std::uint64_t seed = 1) {
    Network<double> net(arch, seed);
    // Non-zero biases and BN affine parameters so every gradient path is exercised.
    Rng rng(seed + 100);
    for (auto* p : net.params()) {
        if (!p->regularized) {
            for (auto& v : p->value) v += 0.3 * rng.normal();
        }
    }
    Tensor<double> x = random_input<double>(batch, arch.input, seed + 7);
    const auto shapes = infer_shapes(arch);
    Tensor<double> r = random_input<double>(batch, shapes.back(), seed + 9);
    Tensor<double> slot;
    const auto objective = [&] {
        const auto& out = net.forward(slot, training);
        double s = 0.0;
        for (std::size_t i = 0; i < out.data.size(); ++i) s += out.data[i] * r.data[i];
        return s;
    };
    const auto analytic = [&] {
        net.forward(slot, training);
        net.backward(r);
    };
    return gradient_check(net, x, objective, analytic, slot);
}

}  // namespace

TEST(GradientCheck, ConvWithPaddingAndBias) {
    GraphBuilder g({2, 9, 9});
    g.add({.kind = LayerKind::conv, .inputs = {0}, .kernel = 3, .stride = 1, .pad = 1, .units = 3, .bias = true});
    check_graph(g.arch, true);
}

TEST(GradientCheck, StridedConvWithoutBias) {
    GraphBuilder g({2, 11, 11});
    g.add({.kind = LayerKind::conv, .inputs = {0}, .kernel = 7, .stride = 2, .pad = 3, .units = 2});
    check_graph(g.arch, true);
}

TEST(GradientCheck, PointwiseConv) {
    GraphBuilder g({3, 6, 6});
    g.add({.kind = LayerKind::conv, .inputs = {0}, .kernel = 1, .stride = 1, .pad = 0, .units = 4, .bias = true});
    g.add({.kind = LayerKind::conv, .inputs = {1}, .kernel = 1, .stride = 2, .pad = 0, .units = 2});
    check_graph(g.arch, true);
}

TEST(GradientCheck, BatchNormTrainingAndInference) {
    GraphBuilder g({3, 5, 5});
    g.add({.kind = LayerKind::batch_norm, .inputs = {0}});
    check_graph(g.arch, true, 3);
    check_graph(g.arch, false, 3);
}

TEST(GradientCheck, Relu) {
    GraphBuilder g({2, 6, 6});
    g.add({.kind = LayerKind::relu, .inputs = {0}});
    check_graph(g.arch, true, 2, 3);
}

TEST(GradientCheck, MaxPool) {
    GraphBuilder g({2, 8, 8});
    g.add({.kind = LayerKind::max_pool, .inputs = {0}, .kernel = 3, .stride = 2, .pad = 1});
    check_graph(g.arch, true);
    GraphBuilder global({2, 5, 5});
    global.add({.kind = LayerKind::max_pool, .inputs = {0}, .kernel = 5, .stride = 5});
    check_graph(global.arch, true);
}

TEST(GradientCheck, ResidualAddWithSharedInput) {
    GraphBuilder g({2, 6, 6});
    const int c = g.add({.kind = LayerKind::conv, .inputs = {0}, .kernel = 3, .pad = 1, .units = 2, .bias = true});
    g.add({.kind = LayerKind::residual_add, .inputs = {c, 0}});
    check_graph(g.arch, true);
}

TEST(GradientCheck, FlattenAndDense) {
    GraphBuilder g({2, 4, 4});
    const int f = g.add({.kind = LayerKind::flatten, .inputs = {0}});
    g.add({.kind = LayerKind::dense, .inputs = {f}, .units = 5, .bias = true});
    check_graph(g.arch, true, 3);
}

TEST(GradientCheck, DropoutInTrainingMode) {
    GraphBuilder g({1, 4, 4});
    const int f = g.add({.kind = LayerKind::flatten, .inputs = {0}});
    const int d = g.add({.kind = LayerKind::dense, .inputs = {f}, .units = 12, .bias = true});
    g.add({.kind = LayerKind::dropout, .inputs = {d}, .rate = 0.5});
    check_graph(g.arch, true, 3);
}

TEST(GradientCheck, Softmax) {
    GraphBuilder g({1, 3, 3});
    const int f = g.add({.kind = LayerKind::flatten, .inputs = {0}});
    const int d = g.add({.kind = LayerKind::dense, .inputs = {f}, .units = 5, .bias = true});
    g.add({.kind = LayerKind::softmax, .inputs = {d}});
    check_graph(g.arch, true, 3);
}

TEST(GradientCheck, CrossEntropyThroughMicroNet) {
    // conv-BN-ReLU, pool, dense, softmax on 16x16 inputs; objective is the batch-mean cross-entropy.
    GraphBuilder g({1, 16, 16});
    int x = g.add({.kind = LayerKind::conv, .inputs = {0}, .kernel = 3, .stride = 2, .pad = 1, .units = 3});
    x = g.add({.kind = LayerKind::batch_norm, .inputs = {x}});
    x = g.add({.kind = LayerKind::relu, .inputs = {x}});
    x = g.add({.kind = LayerKind::max_pool, .inputs = {x}, .kernel = 2, .stride = 2});
    x = g.add({.kind = LayerKind::flatten, .inputs = {x}});
    x = g.add({.kind = LayerKind::dense, .inputs = {x}, .units = 5, .bias = true});
    g.add({.kind = LayerKind::softmax, .inputs = {x}});

    Network<double> net(g.arch, 5);
    const std::vector<int> targets{0, 3, 4, 1};
    Tensor<double> slot;
    const auto objective = [&] {
        const auto& p = net.forward(slot, true);
        double ce = 0.0;
        for (int b = 0; b < p.n; ++b) ce -= std::log(p.item(b)[targets[static_cast<std::size_t>(b)]]);
        return ce / p.n;
    };
    const auto analytic = [&] {
        net.forward(slot, true);
        net.backward_cross_entropy(targets);
    };
    gradient_check(net, random_input<double>(4, g.arch.input, 6), objective, analytic, slot);
}

TEST(GradientCheck, WholeCompactNetwork) {
    ArchConfig cfg;
    cfg.input_size = 16;
    cfg.stem_filters = 3;
    cfg.stage_widths = {3, 4};
    cfg.blocks_per_stage = 1;
    cfg.head = HeadKind::dense64;
    check_graph(compact_resnet(cfg), true, 3, 8);
}

TEST(Init, SameSeedSameParameters) {
    const Architecture arch = compact_resnet({});
    const CnnModel a(arch, 42), b(arch, 42), c(arch, 43);
    const auto pa = a.params(), pb = b.params(), pc = c.params();
    ASSERT_EQ(pa.size(), pb.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
        any_diff |= pa[i]->value != pc[i]->value;
    }
    EXPECT_TRUE(any_diff);
}

TEST(Init, BatchNormAndBiasDefaults) {
    const CnnModel m(compact_resnet({}), 1);
    for (const auto* p : m.params()) {
        const bool is_gamma = p->name.ends_with(".gamma");
        if (is_gamma || p->name.ends_with(".beta") || p->name.ends_with(".bias")) {
            for (float v : p->value) EXPECT_EQ(v, is_gamma ? 1.0f : 0.0f) << p->name;
        }
    }
    const auto bufs = m.buffers();
    for (std::size_t i = 0; i < bufs.size(); ++i) {
        for (float v : *bufs[i]) EXPECT_EQ(v, i % 2 == 0 ? 0.0f : 1.0f);
    }
}

TEST(Init, HeFanInScale) {
    const CnnModel m(compact_resnet({}), 3);
    for (const auto* p : m.params()) {
        if (p->name != "stage3.block2.conv2.weight") continue;
        double s = 0.0;
        for (float v : p->value) s += double(v) * v;
        const double var = s / static_cast<double>(p->value.size());
        EXPECT_NEAR(var, 2.0 / (64 * 9), 0.1 * 2.0 / (64 * 9));
        return;
    }
    FAIL() << "layer not found";
}

TEST(Shapes, StemFeatureMapAndOutput) {
    ArchConfig cfg;
    cfg.stem_filters = 64;
    const Architecture arch = compact_resnet(cfg);
    const auto shapes = infer_shapes(arch);
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        if (arch.layers[i].name == "stem.pool") EXPECT_EQ(shapes[i], (Shape{64, 32, 32}));
        if (arch.layers[i].name == "stem.conv") EXPECT_EQ(shapes[i], (Shape{64, 64, 64}));
    }
    EXPECT_EQ(shapes.back(), (Shape{5, 1, 1}));
    EXPECT_EQ(arch.input, (Shape{1, 128, 128}));
}

TEST(Shapes, MalformedGraphsAreRejected) {
    GraphBuilder g({1, 8, 8});
    const int c = g.add({.kind = LayerKind::conv, .inputs = {0}, .kernel = 3, .stride = 2, .pad = 1, .units = 2});
    g.add({.kind = LayerKind::residual_add, .inputs = {c, 0}});
    try {
        infer_shapes(g.arch);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("shape mismatch in residual graph"), std::string::npos);
    }
    EXPECT_THROW(CnnModel(g.arch, 1), ValidationError);

    GraphBuilder fwd({1, 8, 8});
    fwd.add({.kind = LayerKind::relu, .inputs = {2}});
    EXPECT_THROW(infer_shapes(fwd.arch), ValidationError);

    GraphBuilder big({1, 4, 4});
    big.add({.kind = LayerKind::conv, .inputs = {0}, .kernel = 7, .units = 1});
    EXPECT_THROW(infer_shapes(big.arch), ValidationError);
}

TEST(Forward, ProbabilitiesAreNormalized) {
    CnnModel m(compact_resnet({}), 7);
    const auto x = random_input<float>(4, {1, 128, 128}, 2, 0.0, 1.25);
    for (bool training : {true, false}) {
        const auto& p = m.forward(x, training);
        ASSERT_EQ(p.n, 4);
        ASSERT_EQ(p.item_size(), 5u);
        for (int b = 0; b < 4; ++b) {
            double s = 0.0;
            for (int k = 0; k < 5; ++k) {
                EXPECT_GT(p.item(b)[k], 0.0f);
                EXPECT_LT(p.item(b)[k], 1.0f);
                s += p.item(b)[k];
            }
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
    }
}

TEST(Forward, ZeroFinalLayerGivesUniformOutput) {
    CnnModel m(compact_resnet({}), 7);
    for (auto* p : m.params()) {
        if (p->name.starts_with("head.logits")) std::fill(p->value.begin(), p->value.end(), 0.0f);
    }
    const auto& p = m.forward(random_input<float>(2, {1, 128, 128}, 3, 0.0, 1.0), false);
    for (float v : p.data) EXPECT_FLOAT_EQ(v, 0.2f);
}

TEST(Forward, InferenceIsRepeatableAndChecksShape) {
    ArchConfig cfg;
    cfg.head = HeadKind::dense1024_drop50_dense64;
    CnnModel m(compact_resnet(cfg), 7);
    const auto x = random_input<float>(2, {1, 128, 128}, 3, 0.0, 1.0);
    const auto first = m.forward(x, false).data;
    m.set_step(99);
    EXPECT_EQ(m.forward(x, false).data, first);
    EXPECT_THROW(m.forward(random_input<float>(1, {1, 64, 64}, 1), false), ValidationError);
}

TEST(BatchNorm, TrainAndInferAgreeOnFrozenBatchStatistics) {
    GraphBuilder g({3, 6, 6});
    g.add({.kind = LayerKind::batch_norm, .inputs = {0}});
    Network<double> net(g.arch, 1);
    const auto x = random_input<double>(4, g.arch.input, 2, -3.0, 5.0);
    const auto train_out = net.forward(x, true).data;

    auto bufs = net.buffers();
    for (int c = 0; c < 3; ++c) {
        double sum = 0.0, sq = 0.0;
        for (int b = 0; b < 4; ++b) {
            for (int i = 0; i < 36; ++i) sum += x.item(b)[c * 36 + i];
        }
        const double mean = sum / 144.0;
        for (int b = 0; b < 4; ++b) {
            for (int i = 0; i < 36; ++i) sq += std::pow(x.item(b)[c * 36 + i] - mean, 2);
        }
        (*bufs[0])[static_cast<std::size_t>(c)] = mean;
        (*bufs[1])[static_cast<std::size_t>(c)] = sq / 144.0;
    }
    const auto infer_out = net.forward(x, false).data;
    for (std::size_t i = 0; i < train_out.size(); ++i) EXPECT_NEAR(train_out[i], infer_out[i], 1e-6);
}

TEST(BatchNorm, MovingStatisticsUseMomentum) {
    GraphBuilder g({1, 2, 2});
    g.add({.kind = LayerKind::batch_norm, .inputs = {0}});
    Network<double> net(g.arch, 1);
    Tensor<double> x(1, {1, 2, 2});
    x.data = {1.0, 2.0, 3.0, 4.0};  // mean 2.5, biased variance 1.25
    net.forward(x, true);
    const auto bufs = net.buffers();
    EXPECT_DOUBLE_EQ((*bufs[0])[0], 0.1 * 2.5);
    EXPECT_DOUBLE_EQ((*bufs[1])[0], 0.9 + 0.1 * 1.25);
}

TEST(Residual, ZeroConvBlockIsIdentityOnNonNegativeInput) {
    GraphBuilder g({2, 8, 8});
    int x = g.add({.kind = LayerKind::conv, .inputs = {0}, .kernel = 3, .pad = 1, .units = 2});
    x = g.add({.kind = LayerKind::batch_norm, .inputs = {x}});
    x = g.add({.kind = LayerKind::relu, .inputs = {x}});
    x = g.add({.kind = LayerKind::conv, .inputs = {x}, .kernel = 3, .pad = 1, .units = 2});
    x = g.add({.kind = LayerKind::batch_norm, .inputs = {x}});
    x = g.add({.kind = LayerKind::residual_add, .inputs = {x, 0}});
    g.add({.kind = LayerKind::relu, .inputs = {x}});
    Network<double> net(g.arch, 3);
    for (auto* p : net.params()) {
        if (p->name.ends_with(".weight")) std::fill(p->value.begin(), p->value.end(), 0.0);
    }
    const auto in = random_input<double>(3, g.arch.input, 4, 0.0, 2.0);
    EXPECT_EQ(net.forward(in, false).data, in.data);
}

TEST(Freeze, GroupsMarkParametersUntrainable) {
    Architecture arch = compact_resnet({});
    const std::vector<std::string> groups{"stem", "stage1"};
    freeze_groups(arch, groups);
    const CnnModel m(arch, 1);
    std::size_t frozen = 0;
    for (const auto* p : m.params()) {
        const bool should = p->name.starts_with("stem.") || p->name.starts_with("stage1.");
        EXPECT_EQ(p->trainable, !should) << p->name;
        frozen += should;
    }
    EXPECT_GT(frozen, 0u);
}

TEST(Architecture, JsonRoundTrip) {
    ArchConfig cfg;
    cfg.head = HeadKind::dense1024_drop50_dense64;
    Architecture arch = compact_resnet(cfg);
    const std::vector<std::string> groups{"stem"};
    freeze_groups(arch, groups);
    EXPECT_EQ(Architecture::from_json(nlohmann::json::parse(arch.to_json().dump())), arch);
    EXPECT_THROW(Architecture::from_json(nlohmann::json{{"layers", 3}}), ValidationError);
}

TEST(Cast, DoubleCopyMatchesFloatModel) {
    CnnModel m(compact_resnet({}), 5);
    Network<double> d = m.cast<double>();
    const auto xf = random_input<float>(2, {1, 128, 128}, 9, 0.0, 1.0);
    Tensor<double> xd(2, {1, 128, 128});
    std::copy(xf.data.begin(), xf.data.end(), xd.data.begin());
    const auto& pf = m.forward(xf, false);
    const auto& pd = d.forward(xd, false);
    for (std::size_t i = 0; i < pf.data.size(); ++i) EXPECT_NEAR(pf.data[i], pd.data[i], 1e-5);
}

TEST(SaveLoad, RoundTripIsExact) {
    TempDir dir;
    CnnModel m(compact_resnet({.head = HeadKind::dense64}), 11);
    // Move the BN statistics off their defaults so buffers are covered too.
    m.forward(random_input<float>(3, {1, 128, 128}, 1, 0.0, 1.0), true);
    save_model(m, dir / "m.bin");
    CnnModel back = load_model(dir / "m.bin");
    EXPECT_EQ(back.architecture(), m.architecture());
    const auto pa = m.params(), pb = back.params();
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value);
    const auto ba = m.buffers(), bb = back.buffers();
    for (std::size_t i = 0; i < ba.size(); ++i) EXPECT_EQ(*ba[i], *bb[i]);
    const auto x = random_input<float>(2, {1, 128, 128}, 4, 0.0, 1.0);
    EXPECT_EQ(m.forward(x, false).data, back.forward(x, false).data);
}

TEST(SaveLoad, CorruptOrTruncatedFilesFail) {
    TempDir dir;
    const CnnModel m(compact_resnet({}), 1);
    save_model(m, dir / "m.bin");
    std::string bytes;
    {
        std::ifstream in(dir / "m.bin", std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    const auto write = [&](const std::string& name, const std::string& data) {
        std::ofstream(dir / name, std::ios::binary) << data;
        return dir / name;
    };
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(load_model(write("magic.bin", bad_magic)), ValidationError);
    std::string bad_version = bytes;
    bad_version[8] = 7;
    EXPECT_THROW(load_model(write("version.bin", bad_version)), ValidationError);
    EXPECT_THROW(load_model(write("short.bin", bytes.substr(0, bytes.size() - 10))), IoError);
    EXPECT_THROW(load_model(write("header.bin", bytes.substr(0, 20))), IoError);
    EXPECT_THROW(load_model(dir / "missing.bin"), IoError);
}

// A small model and its expected outputs are committed under tests/data. The
// file is little-endian regardless of host; loading it must reproduce both the
// stored parameters and the recorded probabilities.
TEST(SaveLoad, CommittedRegressionFixture) {
    const std::filesystem::path dir = ECGWVD_TEST_DATA_DIR;
    const auto model_path = dir / "regression_model.bin";
    const auto expect_path = dir / "regression_model.json";
    ArchConfig cfg;
    cfg.input_size = 32;
    cfg.stem_filters = 4;
    cfg.stage_widths = {4, 8};
    cfg.blocks_per_stage = 1;
    cfg.head = HeadKind::dense64;
    const auto input = random_input<float>(3, {1, 32, 32}, 2024, 0.0, 1.25);

    if (std::getenv("ECGWVD_WRITE_FIXTURES")) {
        CnnModel m(compact_resnet(cfg), 2024);
        m.forward(input, true);
        save_model(m, model_path);
        nlohmann::json j;
        j["probabilities"] = m.forward(input, false).data;
        double s = 0.0;
        for (const auto* p : m.params())
            for (float v : p->value) s += v;
        j["parameter_sum"] = s;
        std::ofstream(expect_path) << j.dump(2) << '\n';
    }
    ASSERT_TRUE(std::filesystem::exists(model_path)) << "run with ECGWVD_WRITE_FIXTURES=1 once";
    CnnModel m = load_model(model_path);
    EXPECT_EQ(m.architecture(), compact_resnet(cfg));
    std::ifstream in(expect_path);
    const auto j = nlohmann::json::parse(in);
    double s = 0.0;
    for (const auto* p : m.params())
        for (float v : p->value) s += v;
    EXPECT_EQ(s, j.at("parameter_sum").get<double>());
    const auto want = j.at("probabilities").get<std::vector<float>>();
    const auto& got = m.forward(input, false).data;
    ASSERT_EQ(got.size(), want.size());
    // Summation order inside GEMM may differ between CPUs; parameters above are exact.
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-6);
}
