#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgwvd/eval.hpp"
#include "ecgwvd/images.hpp"
#include "ecgwvd/model.hpp"

namespace ecgwvd {

enum class OptimizerKind { sgd_minibatch, adam };
enum class LrPolicy { fixed, step_decay };
enum class Monitor { val_acc, acc };

struct EarlyStop {
    double min_delta = 0.0005;
    int patience = 5;
    Monitor monitor = Monitor::acc;
};

struct TrainSchedule {
    int preset = 0;  // 0 = custom
    std::string name = "custom";
    OptimizerKind optimizer = OptimizerKind::adam;
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double epsilon = 1e-7;
    LrPolicy lr_policy = LrPolicy::fixed;
    double decay_rate = 0.5;
    int decay_period = 5;  // epochs
    double l2 = 1e-4;
    int batch = 32;
    int epochs = 30;
    std::optional<EarlyStop> early_stop;
    double val_fraction = 0.0;
    HeadKind head = HeadKind::none;
    std::vector<std::string> frozen_groups;
    bool augmented = false;  // train on noise-balanced classes
    bool smallest_arch = false;
    int reference_epochs = 0;  // epochs reported for the row this preset mirrors
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    // Missing keys keep the values of `base`.
    static TrainSchedule from_json(const nlohmann::json& j, const TrainSchedule& base);
    static TrainSchedule from_json(const nlohmann::json& j);
};

inline constexpr int kNumPresets = 10;

// Named schedules 1-10. Throws ValidationError outside that range.
TrainSchedule preset_schedule(int number);

// Learning rate for zero-based epoch e: lr * decay_rate^floor(e / decay_period)
// under step decay, lr otherwise.
double learning_rate_at(const TrainSchedule& s, int epoch);

// Architecture for a schedule: head and frozen groups applied to `base`
// (or the smallest compact configuration for the baseline preset).
Architecture schedule_architecture(const TrainSchedule& s, ArchConfig base = {});

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_acc = 0.0;
    std::optional<double> val_loss;
    std::optional<double> val_acc;
    double lr = 0.0;
    double wall_time_s = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    bool stopped_early = false;
    int stop_epoch = 0;  // last epoch run

    nlohmann::json to_json(bool include_timing = true) const;
    std::string to_csv(bool include_timing = true) const;
};

// Mean cross-entropy -log p[target] over the batch plus l2 * sum of squared
// conv/dense weights. Probabilities are floored at 1e-12 inside the log.
template <typename T>
double cross_entropy_loss(const Tensor<T>& probs, std::span<const int> targets, const Network<T>& model,
                          double l2);

struct OptimizerState {
    std::int64_t step = 0;  // Adam bias-correction counter
};

// One forward/backward/update on a batch; returns the loss before the update.
// Frozen parameters are left untouched. Throws DivergenceError on a
// non-finite loss.
template <typename T>
double train_step(Network<T>& model, const Tensor<T>& batch, std::span<const int> targets,
                  const TrainSchedule& s, double lr, OptimizerState& state);

// Output unit index for a class (report order).
inline int target_index(BeatClass c) noexcept { return static_cast<int>(report_index(c)); }

Tensor<float> gather_batch(const ImageSet& images, std::span<const std::size_t> indices);

// Keras-style stopping rule: an epoch improves only if the monitored value
// beats the best so far by more than min_delta; training stops once `patience`
// consecutive epochs fail to improve.
class EarlyStopping {
public:
    explicit EarlyStopping(EarlyStop cfg) : cfg_(cfg) {}
    // Feeds one epoch's value; returns true when training should stop.
    bool update(double value);
    double best() const noexcept { return best_; }

private:
    EarlyStop cfg_;
    double best_ = -std::numeric_limits<double>::infinity();
    int wait_ = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Epoch loop with seeded per-epoch shuffling, optional validation split,
// step decay and early stopping. Throws ValidationError when early stopping
// monitors validation accuracy without a validation split.
TrainHistory fit(CnnModel& model, const ImageSet& train, const TrainSchedule& s,
                 const EpochCallback& on_epoch = {});

struct Prediction {
    BeatClass label = BeatClass::N;
    std::array<double, kNumClasses> probs{};  // report order
};

// argmax over allowed classes; ties go to the earliest class in report order.
Prediction predict_from_probs(std::span<const float> probs, std::span<const BeatClass> allowed = kReportOrder);
Prediction predict(CnnModel& model, std::span<const float> image);

// Inference over a whole image set in batches; workers > 1 runs model copies
// on disjoint batches, results are in input order either way.
std::vector<Prediction> predict_all(const CnnModel& model, const ImageSet& images, std::size_t workers = 1,
                                    std::span<const BeatClass> allowed = kReportOrder, int batch = 64);

struct Evaluation {
    MetricsReport report;
    std::vector<Prediction> predictions;
};

// no_ramp requires images built without a ramp; drop_q removes Q records and
// restricts predictions to the four remaining classes.
Evaluation evaluate(const CnnModel& model, const ImageSet& test, const EvalOptions& options = {},
                    std::size_t workers = 1);

}  // namespace ecgwvd
