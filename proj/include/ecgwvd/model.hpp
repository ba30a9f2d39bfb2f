#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgwvd/labels.hpp"

namespace ecgwvd {

enum class LayerKind { input, conv, batch_norm, relu, max_pool, residual_add, flatten, dense, dropout, softmax };

std::string_view to_string(LayerKind kind) noexcept;

struct Shape {
    int c = 0, h = 0, w = 0;
    std::size_t size() const noexcept { return static_cast<std::size_t>(c) * h * w; }
    bool operator==(const Shape&) const = default;
};

// One node of the layer graph. `inputs` index earlier nodes; node 0 is the input.
struct LayerSpec {
    LayerKind kind = LayerKind::input;
    std::vector<int> inputs;
    int kernel = 0;
    int stride = 1;
    int pad = 0;
    int units = 0;      // conv filters or dense units
    bool bias = false;
    double rate = 0.0;  // dropout
    std::string name;
    std::string group;  // "stem", "stage1", ..., "head"; unit of freezing
    bool trainable = true;

    bool operator==(const LayerSpec&) const = default;
};

struct Architecture {
    Shape input{1, 128, 128};
    std::vector<LayerSpec> layers;

    nlohmann::json to_json() const;
    static Architecture from_json(const nlohmann::json& j);
    bool operator==(const Architecture&) const = default;
};

// Output shape of every node; throws ValidationError on malformed graphs
// (forward references, residual joins of unequal shapes, bad kernels).
std::vector<Shape> infer_shapes(const Architecture& arch);

enum class HeadKind { none, dense64, dense1024_drop50_dense64 };

std::string_view to_string(HeadKind head) noexcept;
HeadKind head_from_string(std::string_view s);

struct ArchConfig {
    int input_size = 128;
    int stem_filters = 16;
    std::vector<int> stage_widths{16, 32, 64};
    int blocks_per_stage = 2;
    HeadKind head = HeadKind::none;
    int num_classes = static_cast<int>(kNumClasses);
};

// 7x7/2 conv-BN-ReLU stem, 3x3/2 max-pool, residual stages of basic blocks
// (the first block of every later stage downsamples with a 1x1 projection),
// global max-pool, optional dense head, dense(num_classes), softmax.
Architecture compact_resnet(const ArchConfig& cfg);

// Marks layers whose group is listed as not trainable.
void freeze_groups(Architecture& arch, std::span<const std::string> groups);

template <typename T>
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> data;

    Tensor() = default;
    Tensor(int n_, Shape s) { reshape(n_, s); }

    void reshape(int n_, Shape s) {
        n = n_;
        c = s.c;
        h = s.h;
        w = s.w;
        data.resize(static_cast<std::size_t>(n) * s.size());
    }
    Shape shape() const noexcept { return {c, h, w}; }
    std::size_t item_size() const noexcept { return static_cast<std::size_t>(c) * h * w; }
    T* item(int i) noexcept { return data.data() + static_cast<std::size_t>(i) * item_size(); }
    const T* item(int i) const noexcept { return data.data() + static_cast<std::size_t>(i) * item_size(); }
    void zero() { std::fill(data.begin(), data.end(), T(0)); }
};

template <typename T>
struct Param {
    std::string name;
    std::vector<T> value;
    std::vector<T> grad;
    std::vector<T> m;  // optimizer state
    std::vector<T> v;
    bool regularized = false;  // conv/dense weights; biases and BN are not
    bool trainable = true;
};

namespace detail {
template <typename T>
class Layer;
}

// Graph-structured CNN. T = float for training and inference, double for
// gradient checking.
template <typename T>
class Network {
public:
    // He fan-in normal weights, zero biases, BN gamma=1 beta=0, moving mean 0, var 1.
    Network(Architecture arch, std::uint64_t seed);
    Network(const Network& other);
    Network& operator=(const Network& other);
    Network(Network&&) noexcept;
    Network& operator=(Network&&) noexcept;
    ~Network();

    const Architecture& architecture() const noexcept { return arch_; }
    const std::vector<Shape>& shapes() const noexcept { return shapes_; }
    int num_outputs() const noexcept { return static_cast<int>(shapes_.back().size()); }

    // Runs the graph; returns the last node's output ([batch, outputs]).
    // Training mode uses batch statistics and dropout; inference mode uses
    // moving statistics. Throws ValidationError on an input shape mismatch.
    const Tensor<T>& forward(const Tensor<T>& input, bool training);

    // Back-propagates d(objective)/d(output of the last node); parameter
    // gradients accumulate, input_grad() holds d/d(input).
    void backward(const Tensor<T>& d_output);

    // Cross-entropy fast path: the last node must be softmax. Gradient of the
    // batch-mean cross-entropy with respect to the logits is (p - onehot) / B.
    // `targets` are output unit indices.
    void backward_cross_entropy(std::span<const int> targets);

    const Tensor<T>& input_grad() const noexcept { return grads_.front(); }
    const Tensor<T>& output() const noexcept { return acts_.back(); }

    std::vector<Param<T>*> params();
    std::vector<const Param<T>*> params() const;
    // Moving statistics (BN mean and variance), in graph order.
    std::vector<std::vector<T>*> buffers();
    std::vector<const std::vector<T>*> buffers() const;

    void zero_grad();
    // Sum of squared regularized weights.
    T l2_sum() const;
    // Dropout masks are a function of (layer, step); fit() advances the step.
    void set_step(std::uint64_t step) noexcept { step_ = step; }
    std::uint64_t step() const noexcept { return step_; }

    std::size_t parameter_count() const;

    template <typename U>
    Network<U> cast() const;

private:
    Architecture arch_;
    std::vector<Shape> shapes_;
    std::vector<std::unique_ptr<detail::Layer<T>>> layers_;
    std::vector<Tensor<T>> acts_;
    std::vector<Tensor<T>> grads_;
    std::uint64_t step_ = 0;
    bool last_training_ = false;

    void build(std::uint64_t seed);
    void run_backward(std::size_t from);
};

using CnnModel = Network<float>;

extern template class Network<float>;
extern template class Network<double>;

// Model file: 8-byte magic "ECGWVDM\0", u32 version, u64 JSON length, architecture
// JSON, u64 float count, little-endian float32 parameters then BN buffers.
inline constexpr std::uint32_t kModelFormatVersion = 1;
void save_model(const CnnModel& model, const std::filesystem::path& path);
CnnModel load_model(const std::filesystem::path& path);

}  // namespace ecgwvd
