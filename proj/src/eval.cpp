#include "ecgwvd/eval.hpp"

#include <algorithm>
#include <cstdio>

#include "ecgwvd/error.hpp"

namespace ecgwvd {

std::uint64_t ConfusionMatrix::support(BeatClass c) const noexcept {
    std::uint64_t s = 0;
    for (auto v : counts[report_index(c)]) s += v;
    return s;
}

std::uint64_t ConfusionMatrix::total() const noexcept {
    std::uint64_t s = 0;
    for (const auto& row : counts)
        for (auto v : row) s += v;
    return s;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) noexcept {
    for (std::size_t i = 0; i < kNumClasses; ++i)
        for (std::size_t j = 0; j < kNumClasses; ++j) counts[i][j] += other.counts[i][j];
    return *this;
}

ConfusionMatrix confusion_matrix(std::span<const BeatClass> truth, std::span<const BeatClass> predicted) {
    if (truth.size() != predicted.size()) {
        throw ValidationError("label sequences differ in length: " + std::to_string(truth.size()) + " vs " +
                              std::to_string(predicted.size()));
    }
    if (truth.empty()) {
        throw ValidationError("no labels to evaluate");
    }
    ConfusionMatrix cm;
    for (std::size_t k = 0; k < truth.size(); ++k) ++cm.at(truth[k], predicted[k]);
    return cm;
}

const ClassMetrics* MetricsReport::find(BeatClass c) const noexcept {
    for (const auto& m : classes)
        if (m.label == c) return &m;
    return nullptr;
}

namespace {

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

MetricsReport per_class_metrics(const ConfusionMatrix& cm, std::span<const BeatClass> reported) {
    std::vector<BeatClass> order(reported.begin(), reported.end());
    std::sort(order.begin(), order.end(),
              [](BeatClass a, BeatClass b) { return report_index(a) < report_index(b); });

    MetricsReport rep;
    rep.confusion = cm;
    std::uint64_t correct = 0;
    for (BeatClass c : order) {
        const std::uint64_t tp = cm.at(c, c);
        const std::uint64_t fn = cm.support(c) - tp;
        std::uint64_t fp = 0;
        for (BeatClass other : order) {
            if (other != c) fp += cm.at(other, c);
        }
        ClassMetrics m;
        m.label = c;
        m.support = tp + fn;
        m.precision = ratio(static_cast<double>(tp), static_cast<double>(tp + fp));
        m.recall = ratio(static_cast<double>(tp), static_cast<double>(tp + fn));
        m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
        rep.total += m.support;
        correct += tp;
        rep.classes.push_back(m);
    }
    rep.accuracy = ratio(static_cast<double>(correct), static_cast<double>(rep.total));
    if (!rep.classes.empty()) {
        const double n = static_cast<double>(rep.classes.size());
        for (const auto& m : rep.classes) {
            rep.macro.precision += m.precision / n;
            rep.macro.recall += m.recall / n;
            rep.macro.f1 += m.f1 / n;
            const double w = ratio(static_cast<double>(m.support), static_cast<double>(rep.total));
            rep.weighted.precision += w * m.precision;
            rep.weighted.recall += w * m.recall;
            rep.weighted.f1 += w * m.f1;
        }
    }
    return rep;
}

MetricsReport evaluate_predictions(std::span<const BeatClass> truth, std::span<const BeatClass> predicted,
                                   const EvalOptions& options) {
    if (truth.size() != predicted.size()) {
        throw ValidationError("label sequences differ in length");
    }
    if (!options.drop_q) {
        return per_class_metrics(confusion_matrix(truth, predicted));
    }
    std::vector<BeatClass> t, p;
    for (std::size_t k = 0; k < truth.size(); ++k) {
        if (truth[k] == BeatClass::Q) continue;
        t.push_back(truth[k]);
        p.push_back(predicted[k]);
    }
    if (t.empty()) {
        throw ValidationError("no records left after dropping Q");
    }
    return per_class_metrics(confusion_matrix(t, p), kClassesWithoutQ);
}

std::string format_report(const MetricsReport& r) {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof line, "%-14s%11s%11s%11s%11s\n", "", "precision", "recall", "f1-score", "support");
    out += line;
    for (const auto& m : r.classes) {
        std::snprintf(line, sizeof line, "%-14c%11.4f%11.4f%11.4f%11llu\n", class_char(m.label), m.precision,
                      m.recall, m.f1, static_cast<unsigned long long>(m.support));
        out += line;
    }
    out += '\n';
    std::snprintf(line, sizeof line, "%-14s%11s%11s%11.4f%11llu\n", "accuracy", "", "", r.accuracy,
                  static_cast<unsigned long long>(r.total));
    out += line;
    const auto avg = [&](const char* name, const AverageMetrics& a) {
        std::snprintf(line, sizeof line, "%-14s%11.4f%11.4f%11.4f%11llu\n", name, a.precision, a.recall, a.f1,
                      static_cast<unsigned long long>(r.total));
        out += line;
    };
    avg("macro avg", r.macro);
    avg("weighted avg", r.weighted);
    return out;
}

nlohmann::json report_to_json(const MetricsReport& r) {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& m : r.classes) {
        classes.push_back({{"class", std::string(1, class_char(m.label))},
                           {"precision", m.precision},
                           {"recall", m.recall},
                           {"f1", m.f1},
                           {"support", m.support}});
    }
    const auto avg = [](const AverageMetrics& a) {
        return nlohmann::json{{"precision", a.precision}, {"recall", a.recall}, {"f1", a.f1}};
    };
    nlohmann::json cm = nlohmann::json::array();
    for (const auto& row : r.confusion.counts) cm.push_back(row);
    return {{"classes", classes},          {"accuracy", r.accuracy},
            {"total_support", r.total},    {"macro_avg", avg(r.macro)},
            {"weighted_avg", avg(r.weighted)}, {"confusion_order", "FNQSV"},
            {"confusion", cm}};
}

std::string confusion_to_csv(const ConfusionMatrix& cm) {
    std::string out = "true\\pred";
    for (BeatClass c : kReportOrder) {
        out += ',';
        out += class_char(c);
    }
    out += '\n';
    for (BeatClass t : kReportOrder) {
        out += class_char(t);
        for (BeatClass p : kReportOrder) {
            out += ',';
            out += std::to_string(cm.at(t, p));
        }
        out += '\n';
    }
    return out;
}

}  // namespace ecgwvd
