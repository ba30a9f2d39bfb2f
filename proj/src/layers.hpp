#pragma once

// Layer implementations behind Network<T>. Tensors are NCHW; every layer
// writes its own output and accumulates into the input gradients it is given.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "ecgwvd/model.hpp"
#include "ecgwvd/rng.hpp"

namespace ecgwvd::detail {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

struct RunContext {
    bool training = false;
    std::uint64_t step = 0;
};

template <typename T>
class Layer {
public:
    using Inputs = std::span<const Tensor<T>* const>;
    using InputGrads = std::span<Tensor<T>* const>;

    Layer(std::vector<Shape> in, Shape out) : in_shapes_(std::move(in)), out_shape_(out) {}
    virtual ~Layer() = default;
    virtual std::unique_ptr<Layer> clone() const = 0;

    virtual void forward(Inputs in, Tensor<T>& out, const RunContext& ctx) = 0;
    virtual void backward(Inputs in, const Tensor<T>& out, const Tensor<T>& dout, InputGrads din) = 0;
    virtual std::vector<Param<T>*> params() { return {}; }
    virtual std::vector<std::vector<T>*> buffers() { return {}; }

    Shape out_shape() const noexcept { return out_shape_; }

protected:
    std::vector<Shape> in_shapes_;
    Shape out_shape_;
};

template <typename T, typename Derived>
class LayerBase : public Layer<T> {
public:
    using Layer<T>::Layer;
    std::unique_ptr<Layer<T>> clone() const override {
        return std::make_unique<Derived>(static_cast<const Derived&>(*this));
    }
};

template <typename T>
void he_init(Param<T>& p, std::size_t fan_in, Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : p.value) v = static_cast<T>(stddev * rng.normal());
}

template <typename T>
Param<T> make_param(std::string name, std::size_t n, T fill, bool regularized, bool trainable) {
    Param<T> p;
    p.name = std::move(name);
    p.value.assign(n, fill);
    p.grad.assign(n, T(0));
    p.regularized = regularized;
    p.trainable = trainable;
    return p;
}

template <typename T>
class Conv2d final : public LayerBase<T, Conv2d<T>> {
public:
    Conv2d(const LayerSpec& spec, Shape in, Shape out, Rng& rng)
        : LayerBase<T, Conv2d<T>>({in}, out), k_(spec.kernel), stride_(spec.stride), pad_(spec.pad) {
        const std::size_t patch = static_cast<std::size_t>(in.c) * k_ * k_;
        weight_ = make_param<T>(spec.name + ".weight", static_cast<std::size_t>(out.c) * patch, T(0), true,
                                spec.trainable);
        he_init(weight_, patch, rng);
        if (spec.bias) {
            bias_ = make_param<T>(spec.name + ".bias", static_cast<std::size_t>(out.c), T(0), false, spec.trainable);
            has_bias_ = true;
        }
    }

    void forward(typename Layer<T>::Inputs in, Tensor<T>& out, const RunContext&) override {
        const Tensor<T>& x = *in[0];
        const Shape is = this->in_shapes_[0], os = this->out_shape_;
        out.reshape(x.n, os);
        const auto patch = static_cast<Eigen::Index>(is.c) * k_ * k_;
        const auto pixels = static_cast<Eigen::Index>(os.h) * os.w;
        col_.resize(static_cast<std::size_t>(patch * pixels));
        CMapR<T> w(weight_.value.data(), os.c, patch);
        for (int b = 0; b < x.n; ++b) {
            const T* src = direct() ? x.item(b) : im2col(x.item(b));
            MapR<T> y(out.item(b), os.c, pixels);
            y.noalias() = w * CMapR<T>(src, patch, pixels);
            if (has_bias_) {
                for (int f = 0; f < os.c; ++f) y.row(f).array() += bias_.value[static_cast<std::size_t>(f)];
            }
        }
    }

    void backward(typename Layer<T>::Inputs in, const Tensor<T>&, const Tensor<T>& dout,
                  typename Layer<T>::InputGrads din) override {
        const Tensor<T>& x = *in[0];
        const Shape is = this->in_shapes_[0], os = this->out_shape_;
        const auto patch = static_cast<Eigen::Index>(is.c) * k_ * k_;
        const auto pixels = static_cast<Eigen::Index>(os.h) * os.w;
        CMapR<T> w(weight_.value.data(), os.c, patch);
        MapR<T> dw(weight_.grad.data(), os.c, patch);
        dcol_.resize(static_cast<std::size_t>(patch * pixels));
        for (int b = 0; b < x.n; ++b) {
            CMapR<T> dy(dout.item(b), os.c, pixels);
            const T* src = direct() ? x.item(b) : im2col(x.item(b));
            dw.noalias() += dy * CMapR<T>(src, patch, pixels).transpose();
            if (has_bias_) {
                for (int f = 0; f < os.c; ++f) bias_.grad[static_cast<std::size_t>(f)] += dy.row(f).sum();
            }
            if (din[0] != nullptr) {
                if (direct()) {
                    MapR<T>(din[0]->item(b), patch, pixels).noalias() += w.transpose() * dy;
                } else {
                    MapR<T>(dcol_.data(), patch, pixels).noalias() = w.transpose() * dy;
                    col2im(din[0]->item(b));
                }
            }
        }
    }

    std::vector<Param<T>*> params() override {
        if (has_bias_) return {&weight_, &bias_};
        return {&weight_};
    }

private:
    int k_, stride_, pad_;
    Param<T> weight_;
    Param<T> bias_;
    bool has_bias_ = false;
    std::vector<T> col_;
    std::vector<T> dcol_;

    bool direct() const noexcept { return k_ == 1 && stride_ == 1 && pad_ == 0; }

    const T* im2col(const T* img) {
        const Shape is = this->in_shapes_[0], os = this->out_shape_;
        T* col = col_.data();
        for (int c = 0; c < is.c; ++c) {
            const T* plane = img + static_cast<std::size_t>(c) * is.h * is.w;
            for (int ky = 0; ky < k_; ++ky) {
                for (int kx = 0; kx < k_; ++kx) {
                    for (int oy = 0; oy < os.h; ++oy) {
                        const int iy = oy * stride_ - pad_ + ky;
                        if (iy < 0 || iy >= is.h) {
                            std::fill(col, col + os.w, T(0));
                            col += os.w;
                            continue;
                        }
                        const T* row = plane + static_cast<std::size_t>(iy) * is.w;
                        for (int ox = 0; ox < os.w; ++ox) {
                            const int ix = ox * stride_ - pad_ + kx;
                            *col++ = (ix >= 0 && ix < is.w) ? row[ix] : T(0);
                        }
                    }
                }
            }
        }
        return col_.data();
    }

    void col2im(T* dimg) const {
        const Shape is = this->in_shapes_[0], os = this->out_shape_;
        const T* col = dcol_.data();
        for (int c = 0; c < is.c; ++c) {
            T* plane = dimg + static_cast<std::size_t>(c) * is.h * is.w;
            for (int ky = 0; ky < k_; ++ky) {
                for (int kx = 0; kx < k_; ++kx) {
                    for (int oy = 0; oy < os.h; ++oy) {
                        const int iy = oy * stride_ - pad_ + ky;
                        if (iy < 0 || iy >= is.h) {
                            col += os.w;
                            continue;
                        }
                        T* row = plane + static_cast<std::size_t>(iy) * is.w;
                        for (int ox = 0; ox < os.w; ++ox, ++col) {
                            const int ix = ox * stride_ - pad_ + kx;
                            if (ix >= 0 && ix < is.w) row[ix] += *col;
                        }
                    }
                }
            }
        }
    }
};

template <typename T>
class BatchNorm final : public LayerBase<T, BatchNorm<T>> {
public:
    static constexpr double kMomentum = 0.9;
    static constexpr double kEpsilon = 1e-5;

    BatchNorm(const LayerSpec& spec, Shape in)
        : LayerBase<T, BatchNorm<T>>({in}, in),
          gamma_(make_param<T>(spec.name + ".gamma", static_cast<std::size_t>(in.c), T(1), false, spec.trainable)),
          beta_(make_param<T>(spec.name + ".beta", static_cast<std::size_t>(in.c), T(0), false, spec.trainable)),
          moving_mean_(static_cast<std::size_t>(in.c), T(0)),
          moving_var_(static_cast<std::size_t>(in.c), T(1)) {}

    void forward(typename Layer<T>::Inputs in, Tensor<T>& out, const RunContext& ctx) override {
        const Tensor<T>& x = *in[0];
        const Shape s = this->out_shape_;
        const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
        out.reshape(x.n, s);
        xhat_.reshape(x.n, s);
        inv_std_.assign(static_cast<std::size_t>(s.c), T(0));
        const double count = static_cast<double>(x.n) * static_cast<double>(plane);
        for (int c = 0; c < s.c; ++c) {
            const auto ci = static_cast<std::size_t>(c);
            double mean, var;
            if (ctx.training) {
                double sum = 0.0;
                for (int b = 0; b < x.n; ++b) {
                    const T* p = x.item(b) + ci * plane;
                    for (std::size_t i = 0; i < plane; ++i) sum += p[i];
                }
                mean = sum / count;
                double sq = 0.0;
                for (int b = 0; b < x.n; ++b) {
                    const T* p = x.item(b) + ci * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const double d = p[i] - mean;
                        sq += d * d;
                    }
                }
                var = sq / count;
                moving_mean_[ci] = static_cast<T>(kMomentum * moving_mean_[ci] + (1.0 - kMomentum) * mean);
                moving_var_[ci] = static_cast<T>(kMomentum * moving_var_[ci] + (1.0 - kMomentum) * var);
            } else {
                mean = moving_mean_[ci];
                var = moving_var_[ci];
            }
            const double inv = 1.0 / std::sqrt(var + kEpsilon);
            inv_std_[ci] = static_cast<T>(inv);
            const T g = gamma_.value[ci], bt = beta_.value[ci];
            const T m = static_cast<T>(mean), is = static_cast<T>(inv);
            for (int b = 0; b < x.n; ++b) {
                const T* p = x.item(b) + ci * plane;
                T* xh = xhat_.item(b) + ci * plane;
                T* y = out.item(b) + ci * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    xh[i] = (p[i] - m) * is;
                    y[i] = g * xh[i] + bt;
                }
            }
        }
        training_ = ctx.training;
    }

    void backward(typename Layer<T>::Inputs, const Tensor<T>&, const Tensor<T>& dout,
                  typename Layer<T>::InputGrads din) override {
        const Shape s = this->out_shape_;
        const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
        const int n = dout.n;
        const double count = static_cast<double>(n) * static_cast<double>(plane);
        for (int c = 0; c < s.c; ++c) {
            const auto ci = static_cast<std::size_t>(c);
            double dbeta = 0.0, dgamma = 0.0;
            for (int b = 0; b < n; ++b) {
                const T* dy = dout.item(b) + ci * plane;
                const T* xh = xhat_.item(b) + ci * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    dbeta += dy[i];
                    dgamma += static_cast<double>(dy[i]) * xh[i];
                }
            }
            gamma_.grad[ci] += static_cast<T>(dgamma);
            beta_.grad[ci] += static_cast<T>(dbeta);
            if (din[0] == nullptr) continue;
            const double scale = static_cast<double>(gamma_.value[ci]) * inv_std_[ci];
            for (int b = 0; b < n; ++b) {
                const T* dy = dout.item(b) + ci * plane;
                const T* xh = xhat_.item(b) + ci * plane;
                T* dx = din[0]->item(b) + ci * plane;
                if (training_) {
                    for (std::size_t i = 0; i < plane; ++i) {
                        dx[i] += static_cast<T>(scale / count * (count * dy[i] - dbeta - xh[i] * dgamma));
                    }
                } else {
                    for (std::size_t i = 0; i < plane; ++i) dx[i] += static_cast<T>(scale * dy[i]);
                }
            }
        }
    }

    std::vector<Param<T>*> params() override { return {&gamma_, &beta_}; }
    std::vector<std::vector<T>*> buffers() override { return {&moving_mean_, &moving_var_}; }

private:
    Param<T> gamma_;
    Param<T> beta_;
    std::vector<T> moving_mean_;
    std::vector<T> moving_var_;
    Tensor<T> xhat_;
    std::vector<T> inv_std_;
    bool training_ = false;
};

template <typename T>
class Relu final : public LayerBase<T, Relu<T>> {
public:
    explicit Relu(Shape s) : LayerBase<T, Relu<T>>({s}, s) {}

    void forward(typename Layer<T>::Inputs in, Tensor<T>& out, const RunContext&) override {
        const Tensor<T>& x = *in[0];
        out.reshape(x.n, this->out_shape_);
        std::transform(x.data.begin(), x.data.end(), out.data.begin(), [](T v) { return v > T(0) ? v : T(0); });
    }

    void backward(typename Layer<T>::Inputs, const Tensor<T>& out, const Tensor<T>& dout,
                  typename Layer<T>::InputGrads din) override {
        if (din[0] == nullptr) return;
        for (std::size_t i = 0; i < out.data.size(); ++i) {
            if (out.data[i] > T(0)) din[0]->data[i] += dout.data[i];
        }
    }
};

template <typename T>
class MaxPool final : public LayerBase<T, MaxPool<T>> {
public:
    MaxPool(const LayerSpec& spec, Shape in, Shape out)
        : LayerBase<T, MaxPool<T>>({in}, out), k_(spec.kernel), stride_(spec.stride), pad_(spec.pad) {}

    void forward(typename Layer<T>::Inputs in, Tensor<T>& out, const RunContext&) override {
        const Tensor<T>& x = *in[0];
        const Shape is = this->in_shapes_[0], os = this->out_shape_;
        out.reshape(x.n, os);
        argmax_.resize(out.data.size());
        std::size_t o = 0;
        for (int b = 0; b < x.n; ++b) {
            for (int c = 0; c < os.c; ++c) {
                const std::size_t base = static_cast<std::size_t>(b) * x.item_size() +
                                         static_cast<std::size_t>(c) * is.h * is.w;
                for (int oy = 0; oy < os.h; ++oy) {
                    for (int ox = 0; ox < os.w; ++ox, ++o) {
                        T best = -std::numeric_limits<T>::infinity();
                        std::size_t best_i = base;
                        for (int ky = 0; ky < k_; ++ky) {
                            const int iy = oy * stride_ - pad_ + ky;
                            if (iy < 0 || iy >= is.h) continue;
                            for (int kx = 0; kx < k_; ++kx) {
                                const int ix = ox * stride_ - pad_ + kx;
                                if (ix < 0 || ix >= is.w) continue;
                                const std::size_t idx = base + static_cast<std::size_t>(iy) * is.w + ix;
                                if (x.data[idx] > best) {
                                    best = x.data[idx];
                                    best_i = idx;
                                }
                            }
                        }
                        out.data[o] = best;
                        argmax_[o] = best_i;
                    }
                }
            }
        }
    }

    void backward(typename Layer<T>::Inputs, const Tensor<T>&, const Tensor<T>& dout,
                  typename Layer<T>::InputGrads din) override {
        if (din[0] == nullptr) return;
        for (std::size_t o = 0; o < dout.data.size(); ++o) din[0]->data[argmax_[o]] += dout.data[o];
    }

private:
    int k_, stride_, pad_;
    std::vector<std::size_t> argmax_;
};

template <typename T>
class ResidualAdd final : public LayerBase<T, ResidualAdd<T>> {
public:
    explicit ResidualAdd(Shape s) : LayerBase<T, ResidualAdd<T>>({s, s}, s) {}

    void forward(typename Layer<T>::Inputs in, Tensor<T>& out, const RunContext&) override {
        out.reshape(in[0]->n, this->out_shape_);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = in[0]->data[i] + in[1]->data[i];
    }

    void backward(typename Layer<T>::Inputs, const Tensor<T>&, const Tensor<T>& dout,
                  typename Layer<T>::InputGrads din) override {
        for (Tensor<T>* d : din) {
            if (d == nullptr) continue;
            for (std::size_t i = 0; i < dout.data.size(); ++i) d->data[i] += dout.data[i];
        }
    }
};

template <typename T>
class Flatten final : public LayerBase<T, Flatten<T>> {
public:
    Flatten(Shape in, Shape out) : LayerBase<T, Flatten<T>>({in}, out) {}

    void forward(typename Layer<T>::Inputs in, Tensor<T>& out, const RunContext&) override {
        out.reshape(in[0]->n, this->out_shape_);
        std::copy(in[0]->data.begin(), in[0]->data.end(), out.data.begin());
    }

    void backward(typename Layer<T>::Inputs, const Tensor<T>&, const Tensor<T>& dout,
                  typename Layer<T>::InputGrads din) override {
        if (din[0] == nullptr) return;
        for (std::size_t i = 0; i < dout.data.size(); ++i) din[0]->data[i] += dout.data[i];
    }
};

template <typename T>
class Dense final : public LayerBase<T, Dense<T>> {
public:
    Dense(const LayerSpec& spec, Shape in, Shape out, Rng& rng)
        : LayerBase<T, Dense<T>>({in}, out),
          weight_(make_param<T>(spec.name + ".weight", static_cast<std::size_t>(out.c) * in.size(), T(0), true,
                                spec.trainable)),
          bias_(make_param<T>(spec.name + ".bias", static_cast<std::size_t>(out.c), T(0), false, spec.trainable)) {
        he_init(weight_, in.size(), rng);
    }

    void forward(typename Layer<T>::Inputs in, Tensor<T>& out, const RunContext&) override {
        const Tensor<T>& x = *in[0];
        const auto d = static_cast<Eigen::Index>(x.item_size());
        const auto u = static_cast<Eigen::Index>(this->out_shape_.c);
        out.reshape(x.n, this->out_shape_);
        MapR<T> y(out.data.data(), x.n, u);
        y.noalias() = CMapR<T>(x.data.data(), x.n, d) * CMapR<T>(weight_.value.data(), u, d).transpose();
        y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.value.data(), u);
    }

    void backward(typename Layer<T>::Inputs in, const Tensor<T>&, const Tensor<T>& dout,
                  typename Layer<T>::InputGrads din) override {
        const Tensor<T>& x = *in[0];
        const auto d = static_cast<Eigen::Index>(x.item_size());
        const auto u = static_cast<Eigen::Index>(this->out_shape_.c);
        CMapR<T> dy(dout.data.data(), x.n, u);
        MapR<T>(weight_.grad.data(), u, d).noalias() += dy.transpose() * CMapR<T>(x.data.data(), x.n, d);
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.grad.data(), u) += dy.colwise().sum();
        if (din[0] != nullptr) {
            MapR<T>(din[0]->data.data(), x.n, d).noalias() += dy * CMapR<T>(weight_.value.data(), u, d);
        }
    }

    std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }

private:
    Param<T> weight_;
    Param<T> bias_;
};

template <typename T>
class Dropout final : public LayerBase<T, Dropout<T>> {
public:
    Dropout(const LayerSpec& spec, Shape s, std::uint64_t seed)
        : LayerBase<T, Dropout<T>>({s}, s), rate_(spec.rate), seed_(seed) {}

    void forward(typename Layer<T>::Inputs in, Tensor<T>& out, const RunContext& ctx) override {
        const Tensor<T>& x = *in[0];
        out.reshape(x.n, this->out_shape_);
        if (!ctx.training || rate_ <= 0.0) {
            std::copy(x.data.begin(), x.data.end(), out.data.begin());
            mask_.assign(x.data.size(), T(1));
            return;
        }
        Rng rng(derive_seed(seed_, ctx.step));
        const T keep_scale = static_cast<T>(1.0 / (1.0 - rate_));
        mask_.resize(x.data.size());
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            mask_[i] = rng.uniform() < rate_ ? T(0) : keep_scale;
            out.data[i] = x.data[i] * mask_[i];
        }
    }

    void backward(typename Layer<T>::Inputs, const Tensor<T>&, const Tensor<T>& dout,
                  typename Layer<T>::InputGrads din) override {
        if (din[0] == nullptr) return;
        for (std::size_t i = 0; i < dout.data.size(); ++i) din[0]->data[i] += dout.data[i] * mask_[i];
    }

private:
    double rate_;
    std::uint64_t seed_;
    std::vector<T> mask_;
};

template <typename T>
class Softmax final : public LayerBase<T, Softmax<T>> {
public:
    explicit Softmax(Shape s) : LayerBase<T, Softmax<T>>({s}, s) {}

    void forward(typename Layer<T>::Inputs in, Tensor<T>& out, const RunContext&) override {
        const Tensor<T>& x = *in[0];
        out.reshape(x.n, this->out_shape_);
        const std::size_t k = x.item_size();
        for (int b = 0; b < x.n; ++b) {
            const T* z = x.item(b);
            T* p = out.item(b);
            const T zmax = *std::max_element(z, z + k);
            T sum = 0;
            for (std::size_t i = 0; i < k; ++i) {
                p[i] = std::exp(z[i] - zmax);
                sum += p[i];
            }
            for (std::size_t i = 0; i < k; ++i) p[i] /= sum;
        }
    }

    // dz = p * (dp - <dp, p>)
    void backward(typename Layer<T>::Inputs, const Tensor<T>& out, const Tensor<T>& dout,
                  typename Layer<T>::InputGrads din) override {
        if (din[0] == nullptr) return;
        const std::size_t k = out.item_size();
        for (int b = 0; b < out.n; ++b) {
            const T* p = out.item(b);
            const T* dp = dout.item(b);
            T dot = 0;
            for (std::size_t i = 0; i < k; ++i) dot += dp[i] * p[i];
            T* dz = din[0]->item(b);
            for (std::size_t i = 0; i < k; ++i) dz[i] += p[i] * (dp[i] - dot);
        }
    }
};

}  // namespace ecgwvd::detail
