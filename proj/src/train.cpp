#include "ecgwvd/train.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "ecgwvd/error.hpp"
#include "ecgwvd/parallel.hpp"
#include "ecgwvd/rng.hpp"

namespace ecgwvd {

namespace {

std::string_view optimizer_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd_minibatch"; }

OptimizerKind optimizer_from(std::string_view s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "sgd_minibatch" || s == "sgd") return OptimizerKind::sgd_minibatch;
    throw ValidationError("unknown optimizer '" + std::string(s) + "'");
}

std::string_view monitor_name(Monitor m) { return m == Monitor::val_acc ? "val_acc" : "acc"; }

Monitor monitor_from(std::string_view s) {
    if (s == "val_acc") return Monitor::val_acc;
    if (s == "acc") return Monitor::acc;
    throw ValidationError("unknown early-stop monitor '" + std::string(s) + "'");
}

}  // namespace

nlohmann::json TrainSchedule::to_json() const {
    nlohmann::json j = {{"preset", preset},
                        {"name", name},
                        {"optimizer", optimizer_name(optimizer)},
                        {"lr", lr},
                        {"beta1", beta1},
                        {"beta2", beta2},
                        {"epsilon", epsilon},
                        {"lr_policy", lr_policy == LrPolicy::step_decay ? "step_decay" : "fixed"},
                        {"decay_rate", decay_rate},
                        {"decay_period", decay_period},
                        {"l2", l2},
                        {"batch", batch},
                        {"epochs", epochs},
                        {"val_fraction", val_fraction},
                        {"head", to_string(head)},
                        {"frozen_groups", frozen_groups},
                        {"augmented", augmented},
                        {"smallest_arch", smallest_arch},
                        {"reference_epochs", reference_epochs},
                        {"seed", seed}};
    if (early_stop) {
        j["early_stop"] = {{"min_delta", early_stop->min_delta},
                           {"patience", early_stop->patience},
                           {"monitor", monitor_name(early_stop->monitor)}};
    } else {
        j["early_stop"] = nullptr;
    }
    return j;
}

TrainSchedule TrainSchedule::from_json(const nlohmann::json& j, const TrainSchedule& base) {
    TrainSchedule s = base;
    try {
        s.preset = j.value("preset", s.preset);
        s.name = j.value("name", s.name);
        if (j.contains("optimizer")) s.optimizer = optimizer_from(j.at("optimizer").get<std::string>());
        s.lr = j.value("lr", s.lr);
        s.beta1 = j.value("beta1", s.beta1);
        s.beta2 = j.value("beta2", s.beta2);
        s.epsilon = j.value("epsilon", s.epsilon);
        if (j.contains("lr_policy")) {
            const auto p = j.at("lr_policy").get<std::string>();
            if (p != "fixed" && p != "step_decay") throw ValidationError("unknown lr_policy '" + p + "'");
            s.lr_policy = p == "step_decay" ? LrPolicy::step_decay : LrPolicy::fixed;
        }
        s.decay_rate = j.value("decay_rate", s.decay_rate);
        s.decay_period = j.value("decay_period", s.decay_period);
        s.l2 = j.value("l2", s.l2);
        s.batch = j.value("batch", s.batch);
        s.epochs = j.value("epochs", s.epochs);
        s.val_fraction = j.value("val_fraction", s.val_fraction);
        if (j.contains("head")) s.head = head_from_string(j.at("head").get<std::string>());
        if (j.contains("frozen_groups")) s.frozen_groups = j.at("frozen_groups").get<std::vector<std::string>>();
        s.augmented = j.value("augmented", s.augmented);
        s.smallest_arch = j.value("smallest_arch", s.smallest_arch);
        s.reference_epochs = j.value("reference_epochs", s.reference_epochs);
        s.seed = j.value("seed", s.seed);
        if (j.contains("early_stop")) {
            const auto& e = j.at("early_stop");
            if (e.is_null()) {
                s.early_stop.reset();
            } else {
                EarlyStop es;
                es.min_delta = e.value("min_delta", es.min_delta);
                es.patience = e.value("patience", es.patience);
                if (e.contains("monitor")) es.monitor = monitor_from(e.at("monitor").get<std::string>());
                s.early_stop = es;
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed schedule: ") + e.what());
    }
    if (!(s.lr > 0.0) || !(s.l2 >= 0.0) || s.batch < 1 || s.epochs < 0 || s.decay_period < 1 ||
        !(s.val_fraction >= 0.0 && s.val_fraction < 1.0)) {
        throw ValidationError("schedule violates lr > 0, l2 >= 0, batch >= 1, 0 <= val_fraction < 1");
    }
    return s;
}

TrainSchedule TrainSchedule::from_json(const nlohmann::json& j) { return from_json(j, TrainSchedule{}); }

TrainSchedule preset_schedule(int number) {
    if (number < 1 || number > kNumPresets) {
        throw ValidationError("preset must be 1-" + std::to_string(kNumPresets));
    }
    const std::vector<std::string> freeze_125{"stem"};
    const std::vector<std::string> freeze_150{"stem", "stage1"};
    const EarlyStop on_acc{0.0005, 5, Monitor::acc};
    const EarlyStop on_val{0.0005, 5, Monitor::val_acc};

    TrainSchedule s;
    s.preset = number;
    s.lr = 0.01;
    s.l2 = 1e-4;
    s.optimizer = OptimizerKind::adam;
    s.batch = 32;
    switch (number) {
        case 1:
            s.name = "baseline";
            s.optimizer = OptimizerKind::sgd_minibatch;
            s.batch = 64;
            s.epochs = s.reference_epochs = 9;
            s.smallest_arch = true;
            break;
        case 2:
            s.name = "minibatch-val20";
            s.optimizer = OptimizerKind::sgd_minibatch;
            s.batch = 64;
            s.epochs = s.reference_epochs = 8;
            s.val_fraction = 0.2;
            break;
        case 3:
            s.name = "es-all-trainable";
            s.epochs = 50;
            s.reference_epochs = 23;
            s.early_stop = on_acc;
            break;
        case 4:
            s.name = "es-freeze-stem";
            s.epochs = 50;
            s.reference_epochs = 24;
            s.early_stop = on_acc;
            s.frozen_groups = freeze_125;
            break;
        case 5:
            s.name = "es-freeze-stage1-val20";
            s.epochs = 50;
            s.reference_epochs = 22;
            s.early_stop = on_val;
            s.val_fraction = 0.2;
            s.frozen_groups = freeze_150;
            break;
        case 6:
            s.name = "es-freeze-stage1";
            s.epochs = 50;
            s.reference_epochs = 22;
            s.early_stop = on_acc;
            s.frozen_groups = freeze_150;
            break;
        case 7:
        case 8:
            s.name = number == 7 ? "decay20-dense64" : "decay20";
            s.lr_policy = LrPolicy::step_decay;
            s.decay_rate = 0.5;
            s.decay_period = 20;
            s.epochs = s.reference_epochs = 50;
            s.frozen_groups = freeze_150;
            if (number == 7) s.head = HeadKind::dense64;
            break;
        case 9:
        case 10:
            s.name = number == 9 ? "decay5-augmented" : "decay5";
            s.lr_policy = LrPolicy::step_decay;
            s.decay_rate = 0.5;
            s.decay_period = 5;
            s.epochs = s.reference_epochs = 30;
            s.frozen_groups = freeze_150;
            s.augmented = number == 9;
            break;
        default: break;
    }
    return s;
}

double learning_rate_at(const TrainSchedule& s, int epoch) {
    if (s.lr_policy == LrPolicy::fixed) return s.lr;
    return s.lr * std::pow(s.decay_rate, static_cast<double>(epoch / s.decay_period));
}

Architecture schedule_architecture(const TrainSchedule& s, ArchConfig base) {
    if (s.smallest_arch) {
        base.stem_filters = 8;
        base.stage_widths = {8, 16, 32};
        base.blocks_per_stage = 1;
    }
    base.head = s.head;
    Architecture arch = compact_resnet(base);
    freeze_groups(arch, s.frozen_groups);
    return arch;
}

nlohmann::json TrainHistory::to_json(bool include_timing) const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : epochs) {
        nlohmann::json r = {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"train_acc", e.train_acc}, {"lr", e.lr}};
        r["val_loss"] = e.val_loss ? nlohmann::json(*e.val_loss) : nlohmann::json(nullptr);
        r["val_acc"] = e.val_acc ? nlohmann::json(*e.val_acc) : nlohmann::json(nullptr);
        if (include_timing) r["wall_time_s"] = e.wall_time_s;
        rows.push_back(r);
    }
    return {{"epochs", rows}, {"stopped_early", stopped_early}, {"stop_epoch", stop_epoch}};
}

std::string TrainHistory::to_csv(bool include_timing) const {
    std::string out = "epoch,train_loss,train_acc,val_loss,val_acc,lr";
    out += include_timing ? ",wall_time_s\n" : "\n";
    char buf[256];
    for (const auto& e : epochs) {
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,", e.epoch, e.train_loss, e.train_acc);
        out += buf;
        if (e.val_loss) {
            std::snprintf(buf, sizeof buf, "%.9g,%.9g,", *e.val_loss, e.val_acc.value_or(0.0));
            out += buf;
        } else {
            out += ",,";
        }
        std::snprintf(buf, sizeof buf, "%.9g", e.lr);
        out += buf;
        if (include_timing) {
            std::snprintf(buf, sizeof buf, ",%.6f", e.wall_time_s);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

template <typename T>
double cross_entropy_loss(const Tensor<T>& probs, std::span<const int> targets, const Network<T>& model,
                          double l2) {
    double ce = 0.0;
    for (int b = 0; b < probs.n; ++b) {
        const double p = probs.item(b)[targets[static_cast<std::size_t>(b)]];
        ce -= std::log(std::max(p, 1e-12));
    }
    ce /= static_cast<double>(probs.n);
    return l2 > 0.0 ? ce + l2 * static_cast<double>(model.l2_sum()) : ce;
}

template <typename T>
double train_step(Network<T>& model, const Tensor<T>& batch, std::span<const int> targets,
                  const TrainSchedule& s, double lr, OptimizerState& state) {
    const Tensor<T>& probs = model.forward(batch, true);
    const double loss = cross_entropy_loss(probs, targets, model, s.l2);
    if (!std::isfinite(loss)) {
        throw DivergenceError("non-finite loss at optimizer step " + std::to_string(state.step));
    }
    model.zero_grad();
    model.backward_cross_entropy(targets);

    ++state.step;
    const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(state.step));
    for (Param<T>* p : model.params()) {
        if (!p->trainable) continue;
        const T decay = static_cast<T>(p->regularized ? 2.0 * s.l2 : 0.0);
        if (s.optimizer == OptimizerKind::sgd_minibatch) {
            for (std::size_t i = 0; i < p->value.size(); ++i) {
                p->value[i] -= static_cast<T>(lr) * (p->grad[i] + decay * p->value[i]);
            }
            continue;
        }
        if (p->m.size() != p->value.size()) {
            p->m.assign(p->value.size(), T(0));
            p->v.assign(p->value.size(), T(0));
        }
        const T b1 = static_cast<T>(s.beta1), b2 = static_cast<T>(s.beta2);
        const T step = static_cast<T>(lr / bc1);
        const T vscale = static_cast<T>(1.0 / bc2);
        const T eps = static_cast<T>(s.epsilon);
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const T g = p->grad[i] + decay * p->value[i];
            p->m[i] = b1 * p->m[i] + (T(1) - b1) * g;
            p->v[i] = b2 * p->v[i] + (T(1) - b2) * g * g;
            p->value[i] -= step * p->m[i] / (std::sqrt(p->v[i] * vscale) + eps);
        }
    }
    return loss;
}

template double cross_entropy_loss<float>(const Tensor<float>&, std::span<const int>, const Network<float>&, double);
template double cross_entropy_loss<double>(const Tensor<double>&, std::span<const int>, const Network<double>&,
                                           double);
template double train_step<float>(Network<float>&, const Tensor<float>&, std::span<const int>,
                                  const TrainSchedule&, double, OptimizerState&);
template double train_step<double>(Network<double>&, const Tensor<double>&, std::span<const int>,
                                   const TrainSchedule&, double, OptimizerState&);

Tensor<float> gather_batch(const ImageSet& images, std::span<const std::size_t> indices) {
    Tensor<float> t(static_cast<int>(indices.size()),
                    Shape{1, static_cast<int>(images.rows), static_cast<int>(images.cols)});
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const auto img = images.image(indices[k]);
        std::copy(img.begin(), img.end(), t.item(static_cast<int>(k)));
    }
    return t;
}

Prediction predict_from_probs(std::span<const float> probs, std::span<const BeatClass> allowed) {
    Prediction p;
    for (std::size_t k = 0; k < kNumClasses && k < probs.size(); ++k) p.probs[k] = probs[k];
    double best = -1.0;
    for (BeatClass c : kReportOrder) {
        if (std::find(allowed.begin(), allowed.end(), c) == allowed.end()) continue;
        const double v = p.probs[report_index(c)];
        if (v > best) {
            best = v;
            p.label = c;
        }
    }
    return p;
}

Prediction predict(CnnModel& model, std::span<const float> image) {
    const Shape in = model.architecture().input;
    if (image.size() != in.size()) {
        throw ValidationError("image size does not match model input");
    }
    Tensor<float> t(1, in);
    std::copy(image.begin(), image.end(), t.data.begin());
    const auto& out = model.forward(t, false);
    return predict_from_probs({out.item(0), out.item_size()});
}

std::vector<Prediction> predict_all(const CnnModel& model, const ImageSet& images, std::size_t workers,
                                    std::span<const BeatClass> allowed, int batch) {
    const Shape in = model.architecture().input;
    if (images.size() > 0 && (images.rows != static_cast<std::size_t>(in.h) ||
                              images.cols != static_cast<std::size_t>(in.w) || in.c != 1)) {
        throw ValidationError("image size does not match model input");
    }
    std::vector<Prediction> out(images.size());
    const std::size_t bs = static_cast<std::size_t>(std::max(1, batch));
    const std::size_t nbatches = (images.size() + bs - 1) / bs;
    workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, nbatches));
    parallel_for(workers, workers, [&](std::size_t w) {
        CnnModel local = model;
        std::vector<std::size_t> idx;
        for (std::size_t b = w * nbatches / workers; b < (w + 1) * nbatches / workers; ++b) {
            idx.clear();
            for (std::size_t i = b * bs; i < std::min(images.size(), (b + 1) * bs); ++i) idx.push_back(i);
            const auto& probs = local.forward(gather_batch(images, idx), false);
            for (std::size_t k = 0; k < idx.size(); ++k) {
                out[idx[k]] = predict_from_probs({probs.item(static_cast<int>(k)), probs.item_size()}, allowed);
            }
        }
    });
    return out;
}

Evaluation evaluate(const CnnModel& model, const ImageSet& test, const EvalOptions& options, std::size_t workers) {
    if (options.no_ramp && test.ramp_strength != 0.0) {
        throw ValidationError("no_ramp evaluation given images built with a ramp");
    }
    const ImageSet filtered = options.drop_q ? test.without(BeatClass::Q) : test;
    if (filtered.size() == 0) {
        throw ValidationError("nothing to evaluate");
    }
    const std::span<const BeatClass> allowed =
        options.drop_q ? std::span<const BeatClass>(kClassesWithoutQ) : std::span<const BeatClass>(kReportOrder);
    Evaluation ev;
    ev.predictions = predict_all(model, filtered, workers, allowed);
    std::vector<BeatClass> predicted;
    predicted.reserve(ev.predictions.size());
    for (const auto& p : ev.predictions) predicted.push_back(p.label);
    ev.report = evaluate_predictions(filtered.labels, predicted, options);
    return ev;
}

namespace {

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

SplitIndices split_indices(std::size_t n, double val_fraction, std::uint64_t seed) {
    SplitIndices s;
    s.train.resize(n);
    std::iota(s.train.begin(), s.train.end(), std::size_t{0});
    if (val_fraction <= 0.0) return s;
    Rng rng(derive_seed(seed, 0x5A11));
    rng.shuffle(std::span<std::size_t>(s.train));
    const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction));
    s.val.assign(s.train.begin(), s.train.begin() + static_cast<std::ptrdiff_t>(n_val));
    s.train.erase(s.train.begin(), s.train.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::sort(s.val.begin(), s.val.end());
    return s;
}

std::pair<double, double> validation_metrics(CnnModel& model, const ImageSet& images,
                                             std::span<const std::size_t> val, const TrainSchedule& s) {
    double ce = 0.0;
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    std::vector<int> targets;
    for (std::size_t start = 0; start < val.size(); start += static_cast<std::size_t>(s.batch)) {
        idx.assign(val.begin() + static_cast<std::ptrdiff_t>(start),
                   val.begin() + static_cast<std::ptrdiff_t>(std::min(val.size(), start + static_cast<std::size_t>(s.batch))));
        const auto& probs = model.forward(gather_batch(images, idx), false);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const int t = target_index(images.labels[idx[k]]);
            const float* p = probs.item(static_cast<int>(k));
            ce -= std::log(std::max(static_cast<double>(p[t]), 1e-12));
            if (predict_from_probs({p, probs.item_size()}).label == images.labels[idx[k]]) ++correct;
        }
    }
    const double n = static_cast<double>(val.size());
    return {ce / n + s.l2 * static_cast<double>(model.l2_sum()), static_cast<double>(correct) / n};
}

}  // namespace

bool EarlyStopping::update(double value) {
    if (value - cfg_.min_delta > best_) {
        best_ = value;
        wait_ = 0;
        return false;
    }
    return ++wait_ >= cfg_.patience;
}

TrainHistory fit(CnnModel& model, const ImageSet& train, const TrainSchedule& s, const EpochCallback& on_epoch) {
    if (train.size() == 0) {
        throw ValidationError("no training images");
    }
    if (s.early_stop && s.early_stop->monitor == Monitor::val_acc && !(s.val_fraction > 0.0)) {
        throw ValidationError("early stopping on val_acc needs a validation split");
    }
    const Shape in = model.architecture().input;
    if (train.rows != static_cast<std::size_t>(in.h) || train.cols != static_cast<std::size_t>(in.w)) {
        throw ValidationError("training images do not match model input");
    }
    SplitIndices split = split_indices(train.size(), s.val_fraction, s.seed);
    if (split.train.empty()) {
        throw ValidationError("validation split leaves no training images");
    }

    TrainHistory history;
    OptimizerState opt;
    std::uint64_t global_step = 0;
    std::optional<EarlyStopping> stopper;
    if (s.early_stop) stopper.emplace(*s.early_stop);
    std::vector<std::size_t> order = split.train;
    std::vector<std::size_t> idx;
    std::vector<int> targets;
    for (int epoch = 0; epoch < s.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        const double lr = learning_rate_at(s, epoch);
        order = split.train;
        Rng rng(derive_seed(s.seed, 0xE90C, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(std::span<std::size_t>(order));

        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(s.batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(s.batch));
            idx.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
            targets.clear();
            for (std::size_t i : idx) targets.push_back(target_index(train.labels[i]));
            model.set_step(global_step++);
            const double loss = train_step(model, gather_batch(train, idx), targets, s, lr, opt);
            loss_sum += loss * static_cast<double>(idx.size());
            const auto& probs = model.output();
            for (std::size_t k = 0; k < idx.size(); ++k) {
                if (predict_from_probs({probs.item(static_cast<int>(k)), probs.item_size()}).label ==
                    train.labels[idx[k]]) {
                    ++correct;
                }
            }
        }

        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.lr = lr;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        rec.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
        if (!split.val.empty()) {
            const auto [vl, va] = validation_metrics(model, train, split.val, s);
            rec.val_loss = vl;
            rec.val_acc = va;
        }
        rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        history.epochs.push_back(rec);
        history.stop_epoch = rec.epoch;
        if (on_epoch) on_epoch(rec);

        if (stopper) {
            const double current = s.early_stop->monitor == Monitor::val_acc ? *rec.val_acc : rec.train_acc;
            if (stopper->update(current)) {
                history.stopped_early = true;
                break;
            }
        }
    }
    return history;
}

}  // namespace ecgwvd
