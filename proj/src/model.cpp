#include "ecgwvd/model.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "binary_io.hpp"
#include "ecgwvd/error.hpp"
#include "layers.hpp"

namespace ecgwvd {

namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 10> kKindNames{{
    {LayerKind::input, "input"},
    {LayerKind::conv, "conv"},
    {LayerKind::batch_norm, "batch_norm"},
    {LayerKind::relu, "relu"},
    {LayerKind::max_pool, "max_pool"},
    {LayerKind::residual_add, "residual_add"},
    {LayerKind::flatten, "flatten"},
    {LayerKind::dense, "dense"},
    {LayerKind::dropout, "dropout"},
    {LayerKind::softmax, "softmax"},
}};

LayerKind kind_from_string(std::string_view s) {
    for (const auto& [k, name] : kKindNames)
        if (name == s) return k;
    throw ValidationError("unknown layer kind '" + std::string(s) + "'");
}

}  // namespace

std::string_view to_string(LayerKind kind) noexcept {
    for (const auto& [k, name] : kKindNames)
        if (k == kind) return name;
    return "?";
}

std::string_view to_string(HeadKind head) noexcept {
    switch (head) {
        case HeadKind::none: return "none";
        case HeadKind::dense64: return "dense64";
        case HeadKind::dense1024_drop50_dense64: return "dense1024_drop50_dense64";
    }
    return "?";
}

HeadKind head_from_string(std::string_view s) {
    if (s == "none") return HeadKind::none;
    if (s == "dense64") return HeadKind::dense64;
    if (s == "dense1024_drop50_dense64") return HeadKind::dense1024_drop50_dense64;
    throw ValidationError("unknown head '" + std::string(s) + "'");
}

nlohmann::json Architecture::to_json() const {
    nlohmann::json layers_json = nlohmann::json::array();
    for (const auto& l : layers) {
        layers_json.push_back({{"kind", to_string(l.kind)},
                               {"inputs", l.inputs},
                               {"kernel", l.kernel},
                               {"stride", l.stride},
                               {"pad", l.pad},
                               {"units", l.units},
                               {"bias", l.bias},
                               {"rate", l.rate},
                               {"name", l.name},
                               {"group", l.group},
                               {"trainable", l.trainable}});
    }
    return {{"input", {input.c, input.h, input.w}}, {"layers", layers_json}};
}

Architecture Architecture::from_json(const nlohmann::json& j) {
    try {
        Architecture a;
        const auto& in = j.at("input");
        a.input = {in.at(0).get<int>(), in.at(1).get<int>(), in.at(2).get<int>()};
        for (const auto& lj : j.at("layers")) {
            LayerSpec l;
            l.kind = kind_from_string(lj.at("kind").get<std::string>());
            l.inputs = lj.at("inputs").get<std::vector<int>>();
            l.kernel = lj.value("kernel", 0);
            l.stride = lj.value("stride", 1);
            l.pad = lj.value("pad", 0);
            l.units = lj.value("units", 0);
            l.bias = lj.value("bias", false);
            l.rate = lj.value("rate", 0.0);
            l.name = lj.value("name", std::string());
            l.group = lj.value("group", std::string());
            l.trainable = lj.value("trainable", true);
            a.layers.push_back(std::move(l));
        }
        return a;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed architecture: ") + e.what());
    }
}

std::vector<Shape> infer_shapes(const Architecture& arch) {
    if (arch.layers.empty() || arch.layers[0].kind != LayerKind::input || !arch.layers[0].inputs.empty()) {
        throw ValidationError("architecture must start with a single input node");
    }
    if (arch.input.size() == 0) {
        throw ValidationError("empty input shape");
    }
    std::vector<Shape> shapes{arch.input};
    for (std::size_t i = 1; i < arch.layers.size(); ++i) {
        const LayerSpec& l = arch.layers[i];
        const std::string where = "layer " + std::to_string(i) + " (" + l.name + ")";
        const std::size_t arity = l.kind == LayerKind::residual_add ? 2 : 1;
        if (l.kind == LayerKind::input || l.inputs.size() != arity) {
            throw ValidationError(where + ": wrong number of inputs");
        }
        for (int src : l.inputs) {
            if (src < 0 || static_cast<std::size_t>(src) >= i) {
                throw ValidationError(where + ": input " + std::to_string(src) + " is not an earlier node");
            }
        }
        const Shape in = shapes[static_cast<std::size_t>(l.inputs[0])];
        Shape out = in;
        const auto window = [&](int channels) {
            if (l.kernel < 1 || l.stride < 1 || l.pad < 0) {
                throw ValidationError(where + ": bad kernel/stride/pad");
            }
            const int h = (in.h + 2 * l.pad - l.kernel) / l.stride + 1;
            const int w = (in.w + 2 * l.pad - l.kernel) / l.stride + 1;
            if (h < 1 || w < 1 || in.h + 2 * l.pad < l.kernel || in.w + 2 * l.pad < l.kernel) {
                throw ValidationError(where + ": kernel larger than padded input");
            }
            return Shape{channels, h, w};
        };
        switch (l.kind) {
            case LayerKind::conv:
                if (l.units < 1) throw ValidationError(where + ": conv needs filters");
                out = window(l.units);
                break;
            case LayerKind::max_pool: out = window(in.c); break;
            case LayerKind::residual_add:
                if (shapes[static_cast<std::size_t>(l.inputs[1])] != in) {
                    throw ValidationError(where + ": shape mismatch in residual graph");
                }
                break;
            case LayerKind::flatten: out = {static_cast<int>(in.size()), 1, 1}; break;
            case LayerKind::dense:
                if (l.units < 1) throw ValidationError(where + ": dense needs units");
                out = {l.units, 1, 1};
                break;
            case LayerKind::dropout:
                if (!(l.rate >= 0.0 && l.rate < 1.0)) throw ValidationError(where + ": dropout rate outside [0,1)");
                break;
            default: break;
        }
        shapes.push_back(out);
    }
    return shapes;
}

Architecture compact_resnet(const ArchConfig& cfg) {
    Architecture a;
    a.input = {1, cfg.input_size, cfg.input_size};
    a.layers.push_back({.kind = LayerKind::input, .name = "input", .group = "input"});
    int last = 0;
    int channels = 1;
    const auto add = [&](LayerSpec spec) {
        a.layers.push_back(std::move(spec));
        return static_cast<int>(a.layers.size()) - 1;
    };
    const auto conv_bn = [&](int from, int filters, int k, int stride, const std::string& name,
                             const std::string& group) {
        const int c = add({.kind = LayerKind::conv, .inputs = {from}, .kernel = k, .stride = stride, .pad = k / 2,
                           .units = filters, .name = name, .group = group});
        return add({.kind = LayerKind::batch_norm, .inputs = {c}, .name = name + ".bn", .group = group});
    };

    last = conv_bn(last, cfg.stem_filters, 7, 2, "stem.conv", "stem");
    last = add({.kind = LayerKind::relu, .inputs = {last}, .name = "stem.relu", .group = "stem"});
    last = add({.kind = LayerKind::max_pool, .inputs = {last}, .kernel = 3, .stride = 2, .pad = 1,
                .name = "stem.pool", .group = "stem"});
    channels = cfg.stem_filters;

    for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
        const int width = cfg.stage_widths[s];
        const std::string group = "stage" + std::to_string(s + 1);
        for (int b = 0; b < cfg.blocks_per_stage; ++b) {
            const std::string name = group + ".block" + std::to_string(b + 1);
            const int stride = (s > 0 && b == 0) ? 2 : 1;
            int shortcut = last;
            int main = conv_bn(last, width, 3, stride, name + ".conv1", group);
            main = add({.kind = LayerKind::relu, .inputs = {main}, .name = name + ".relu1", .group = group});
            main = conv_bn(main, width, 3, 1, name + ".conv2", group);
            if (stride != 1 || channels != width) {
                shortcut = conv_bn(shortcut, width, 1, stride, name + ".proj", group);
            }
            last = add({.kind = LayerKind::residual_add, .inputs = {main, shortcut}, .name = name + ".add",
                        .group = group});
            last = add({.kind = LayerKind::relu, .inputs = {last}, .name = name + ".relu2", .group = group});
            channels = width;
        }
    }

    const auto shapes = infer_shapes(a);
    const Shape feat = shapes.back();
    last = add({.kind = LayerKind::max_pool, .inputs = {last}, .kernel = feat.h, .stride = feat.h,
                .name = "head.pool", .group = "head"});
    last = add({.kind = LayerKind::flatten, .inputs = {last}, .name = "head.flatten", .group = "head"});
    const auto dense_relu = [&](int units, const std::string& name) {
        last = add({.kind = LayerKind::dense, .inputs = {last}, .units = units, .bias = true, .name = name,
                    .group = "head"});
        last = add({.kind = LayerKind::relu, .inputs = {last}, .name = name + ".relu", .group = "head"});
    };
    if (cfg.head == HeadKind::dense1024_drop50_dense64) {
        dense_relu(1024, "head.dense1024");
        last = add({.kind = LayerKind::dropout, .inputs = {last}, .rate = 0.5, .name = "head.dropout",
                    .group = "head"});
        dense_relu(64, "head.dense64");
    } else if (cfg.head == HeadKind::dense64) {
        dense_relu(64, "head.dense64");
    }
    last = add({.kind = LayerKind::dense, .inputs = {last}, .units = cfg.num_classes, .bias = true,
                .name = "head.logits", .group = "head"});
    add({.kind = LayerKind::softmax, .inputs = {last}, .name = "head.softmax", .group = "head"});
    infer_shapes(a);
    return a;
}

void freeze_groups(Architecture& arch, std::span<const std::string> groups) {
    for (auto& l : arch.layers) {
        l.trainable = std::find(groups.begin(), groups.end(), l.group) == groups.end();
    }
}

template <typename T>
Network<T>::Network(Architecture arch, std::uint64_t seed) : arch_(std::move(arch)) {
    build(seed);
}

template <typename T>
void Network<T>::build(std::uint64_t seed) {
    shapes_ = infer_shapes(arch_);
    Rng rng(seed);
    layers_.clear();
    layers_.push_back(nullptr);
    for (std::size_t i = 1; i < arch_.layers.size(); ++i) {
        const LayerSpec& l = arch_.layers[i];
        const Shape in = shapes_[static_cast<std::size_t>(l.inputs[0])];
        const Shape out = shapes_[i];
        std::unique_ptr<detail::Layer<T>> layer;
        switch (l.kind) {
            case LayerKind::conv: layer = std::make_unique<detail::Conv2d<T>>(l, in, out, rng); break;
            case LayerKind::batch_norm: layer = std::make_unique<detail::BatchNorm<T>>(l, in); break;
            case LayerKind::relu: layer = std::make_unique<detail::Relu<T>>(in); break;
            case LayerKind::max_pool: layer = std::make_unique<detail::MaxPool<T>>(l, in, out); break;
            case LayerKind::residual_add: layer = std::make_unique<detail::ResidualAdd<T>>(in); break;
            case LayerKind::flatten: layer = std::make_unique<detail::Flatten<T>>(in, out); break;
            case LayerKind::dense: layer = std::make_unique<detail::Dense<T>>(l, in, out, rng); break;
            case LayerKind::dropout:
                layer = std::make_unique<detail::Dropout<T>>(l, in, derive_seed(seed, i, 0xD0));
                break;
            case LayerKind::softmax: layer = std::make_unique<detail::Softmax<T>>(in); break;
            case LayerKind::input: throw ValidationError("input node after position 0");
        }
        layers_.push_back(std::move(layer));
    }
    acts_.assign(arch_.layers.size(), Tensor<T>{});
    grads_.assign(arch_.layers.size(), Tensor<T>{});
}

template <typename T>
Network<T>::Network(const Network& other)
    : arch_(other.arch_), shapes_(other.shapes_), step_(other.step_), last_training_(other.last_training_) {
    layers_.push_back(nullptr);
    for (std::size_t i = 1; i < other.layers_.size(); ++i) layers_.push_back(other.layers_[i]->clone());
    acts_.assign(arch_.layers.size(), Tensor<T>{});
    grads_.assign(arch_.layers.size(), Tensor<T>{});
}

template <typename T>
Network<T>& Network<T>::operator=(const Network& other) {
    if (this != &other) {
        Network copy(other);
        *this = std::move(copy);
    }
    return *this;
}

template <typename T>
Network<T>::Network(Network&&) noexcept = default;
template <typename T>
Network<T>& Network<T>::operator=(Network&&) noexcept = default;
template <typename T>
Network<T>::~Network() = default;

template <typename T>
const Tensor<T>& Network<T>::forward(const Tensor<T>& input, bool training) {
    if (input.shape() != arch_.input || input.n < 1) {
        throw ValidationError("input shape mismatch: expected " + std::to_string(arch_.input.c) + "x" +
                              std::to_string(arch_.input.h) + "x" + std::to_string(arch_.input.w));
    }
    acts_[0] = input;
    const detail::RunContext ctx{training, step_};
    std::vector<const Tensor<T>*> ins;
    for (std::size_t i = 1; i < layers_.size(); ++i) {
        ins.clear();
        for (int src : arch_.layers[i].inputs) ins.push_back(&acts_[static_cast<std::size_t>(src)]);
        layers_[i]->forward(ins, acts_[i], ctx);
    }
    last_training_ = training;
    return acts_.back();
}

template <typename T>
void Network<T>::run_backward(std::size_t from) {
    std::vector<const Tensor<T>*> ins;
    std::vector<Tensor<T>*> dins;
    for (std::size_t i = from; i >= 1; --i) {
        ins.clear();
        dins.clear();
        for (int src : arch_.layers[i].inputs) {
            ins.push_back(&acts_[static_cast<std::size_t>(src)]);
            dins.push_back(&grads_[static_cast<std::size_t>(src)]);
        }
        layers_[i]->backward(ins, acts_[i], grads_[i], dins);
    }
}

template <typename T>
void Network<T>::backward(const Tensor<T>& d_output) {
    for (std::size_t i = 0; i < grads_.size(); ++i) {
        grads_[i].reshape(acts_[i].n, shapes_[i]);
        grads_[i].zero();
    }
    grads_.back().data = d_output.data;
    run_backward(layers_.size() - 1);
}

template <typename T>
void Network<T>::backward_cross_entropy(std::span<const int> targets) {
    const std::size_t last = layers_.size() - 1;
    if (arch_.layers[last].kind != LayerKind::softmax) {
        throw ValidationError("cross-entropy backward needs a softmax output");
    }
    const Tensor<T>& probs = acts_[last];
    if (targets.size() != static_cast<std::size_t>(probs.n)) {
        throw ValidationError("target count does not match batch size");
    }
    for (std::size_t i = 0; i < grads_.size(); ++i) {
        grads_[i].reshape(acts_[i].n, shapes_[i]);
        grads_[i].zero();
    }
    const auto logits = static_cast<std::size_t>(arch_.layers[last].inputs[0]);
    Tensor<T>& dz = grads_[logits];
    const T inv_batch = T(1) / static_cast<T>(probs.n);
    for (int b = 0; b < probs.n; ++b) {
        const T* p = probs.item(b);
        T* d = dz.item(b);
        for (std::size_t k = 0; k < probs.item_size(); ++k) {
            d[k] = (p[k] - (static_cast<int>(k) == targets[static_cast<std::size_t>(b)] ? T(1) : T(0))) * inv_batch;
        }
    }
    run_backward(last - 1);
}

template <typename T>
std::vector<Param<T>*> Network<T>::params() {
    std::vector<Param<T>*> out;
    for (std::size_t i = 1; i < layers_.size(); ++i) {
        for (auto* p : layers_[i]->params()) out.push_back(p);
    }
    return out;
}

template <typename T>
std::vector<const Param<T>*> Network<T>::params() const {
    auto ps = const_cast<Network*>(this)->params();
    return {ps.begin(), ps.end()};
}

template <typename T>
std::vector<std::vector<T>*> Network<T>::buffers() {
    std::vector<std::vector<T>*> out;
    for (std::size_t i = 1; i < layers_.size(); ++i) {
        for (auto* b : layers_[i]->buffers()) out.push_back(b);
    }
    return out;
}

template <typename T>
std::vector<const std::vector<T>*> Network<T>::buffers() const {
    auto bs = const_cast<Network*>(this)->buffers();
    return {bs.begin(), bs.end()};
}

template <typename T>
void Network<T>::zero_grad() {
    for (auto* p : params()) std::fill(p->grad.begin(), p->grad.end(), T(0));
}

template <typename T>
T Network<T>::l2_sum() const {
    double sum = 0.0;
    for (const auto* p : params()) {
        if (!p->regularized) continue;
        for (T v : p->value) sum += static_cast<double>(v) * v;
    }
    return static_cast<T>(sum);
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : params()) n += p->value.size();
    return n;
}

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
    Network<U> out(arch_, 0);
    auto dst = out.params();
    const auto src = params();
    for (std::size_t i = 0; i < src.size(); ++i) {
        std::transform(src[i]->value.begin(), src[i]->value.end(), dst[i]->value.begin(),
                       [](T v) { return static_cast<U>(v); });
    }
    auto dbuf = out.buffers();
    const auto sbuf = buffers();
    for (std::size_t i = 0; i < sbuf.size(); ++i) {
        std::transform(sbuf[i]->begin(), sbuf[i]->end(), dbuf[i]->begin(), [](T v) { return static_cast<U>(v); });
    }
    out.set_step(step_);
    return out;
}

template class Network<float>;
template class Network<double>;
template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<double>::cast<float>() const;
template Network<float> Network<float>::cast<float>() const;

namespace {

constexpr std::array<char, 8> kModelMagic{'E', 'C', 'G', 'W', 'V', 'D', 'M', '\0'};

}  // namespace

void save_model(const CnnModel& model, const std::filesystem::path& path) {
    std::vector<float> blob;
    for (const auto* p : model.params()) blob.insert(blob.end(), p->value.begin(), p->value.end());
    for (const auto* b : model.buffers()) blob.insert(blob.end(), b->begin(), b->end());
    const std::string arch = model.architecture().to_json().dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.write(kModelMagic.data(), kModelMagic.size());
    detail::write_le<std::uint32_t>(out, kModelFormatVersion);
    detail::write_le<std::uint64_t>(out, arch.size());
    out.write(arch.data(), static_cast<std::streamsize>(arch.size()));
    detail::write_le<std::uint64_t>(out, blob.size());
    detail::write_floats_le(out, blob);
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

CnnModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kModelMagic) {
        throw ValidationError(path.string() + " is not a model file (bad magic)");
    }
    const auto version = detail::read_le<std::uint32_t>(in);
    if (version != kModelFormatVersion) {
        throw ValidationError("model version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kModelFormatVersion) + ")");
    }
    const auto arch_len = detail::read_le<std::uint64_t>(in);
    if (arch_len > (1u << 26)) {
        throw ValidationError("implausible architecture length in " + path.string());
    }
    std::string arch_text(arch_len, '\0');
    if (!in.read(arch_text.data(), static_cast<std::streamsize>(arch_len))) {
        throw IoError("truncated model file " + path.string());
    }
    nlohmann::json arch_json;
    try {
        arch_json = nlohmann::json::parse(arch_text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad architecture JSON: ") + e.what());
    }
    CnnModel model(Architecture::from_json(arch_json), 0);
    const auto count = detail::read_le<std::uint64_t>(in);
    std::size_t expected = 0;
    for (const auto* p : model.params()) expected += p->value.size();
    for (const auto* b : model.buffers()) expected += b->size();
    if (count != expected) {
        throw ValidationError("parameter count " + std::to_string(count) + " does not match architecture (" +
                              std::to_string(expected) + ")");
    }
    std::vector<float> blob(count);
    if (detail::read_floats_le(in, blob) != count) {
        throw IoError("truncated model file " + path.string());
    }
    std::size_t off = 0;
    for (auto* p : model.params()) {
        std::copy_n(blob.begin() + static_cast<std::ptrdiff_t>(off), p->value.size(), p->value.begin());
        off += p->value.size();
    }
    for (auto* b : model.buffers()) {
        std::copy_n(blob.begin() + static_cast<std::ptrdiff_t>(off), b->size(), b->begin());
        off += b->size();
    }
    return model;
}

}  // namespace ecgwvd
