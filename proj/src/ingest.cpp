#include "ecgwvd/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ecgwvd/error.hpp"
#include "ecgwvd/rng.hpp"

namespace ecgwvd {

std::string_view to_string(SplitTag tag) noexcept { return tag == SplitTag::train ? "train" : "test"; }

std::optional<SplitTag> split_from_string(std::string_view s) noexcept {
    if (s == "train") return SplitTag::train;
    if (s == "test") return SplitTag::test;
    return std::nullopt;
}

std::size_t Dataset::beat_length() const noexcept {
    return records.empty() ? 0 : records.front().samples.size();
}

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) {
        throw IoError("read failed: " + path.string());
    }
    return std::move(buf).str();
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r'; }

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

// from_chars does not consult the global locale.
std::optional<double> parse_double(std::string_view field) {
    field = trim(field);
    if (!field.empty() && field.front() == '+') field.remove_prefix(1);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc{} || ptr != field.data() + field.size() || field.empty()) {
        return std::nullopt;
    }
    return value;
}

std::string format_double(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

}  // namespace

Dataset parse_beat_csv(std::string_view text, SplitTag split) {
    Dataset ds;
    ds.split = split;
    std::size_t expected_fields = 0;
    std::size_t row = 0;
    std::vector<double> fields;
    while (!text.empty()) {
        const std::size_t eol = text.find('\n');
        std::string_view line = text.substr(0, eol);
        text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
        if (trim(line).empty()) {
            continue;
        }
        fields.clear();
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            const auto field = line.substr(start, comma == std::string_view::npos ? line.npos : comma - start);
            const auto value = parse_double(field);
            if (!value) {
                throw ParseError(row, "non-numeric field " + std::to_string(fields.size()));
            }
            fields.push_back(*value);
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (fields.size() < 2) {
            throw ParseError(row, "need at least one sample and a label");
        }
        if (expected_fields == 0) {
            expected_fields = fields.size();
        } else if (fields.size() != expected_fields) {
            throw ParseError(row, "expected " + std::to_string(expected_fields) + " fields, got " +
                                      std::to_string(fields.size()));
        }
        const auto label = class_from_file_value(fields.back());
        if (!label) {
            throw ParseError(row, "unknown label " + format_double(fields.back()));
        }
        BeatRecord rec;
        rec.label = *label;
        rec.samples.assign(fields.begin(), fields.end() - 1);
        for (double& s : rec.samples) {
            if (!(s >= -kSampleRangeTolerance && s <= 1.0 + kSampleRangeTolerance)) {
                throw ParseError(row, "sample " + format_double(s) + " outside [0, 1]");
            }
            s = std::clamp(s, 0.0, 1.0);
        }
        ds.records.push_back(std::move(rec));
        ++row;
    }
    return ds;
}

Dataset load_beat_csv(const std::filesystem::path& path, SplitTag split) {
    const std::string text = read_file(path);
    Dataset ds = parse_beat_csv(text, split);
    if (ds.empty()) {
        throw ValidationError("no records in " + path.string());
    }
    return ds;
}

std::filesystem::path manifest_path(const std::filesystem::path& data_path) {
    return std::filesystem::path(data_path.string() + ".manifest.json");
}

ClassCounts class_distribution(const Dataset& ds) noexcept {
    ClassCounts counts;
    for (const auto& r : ds.records) {
        ++counts[r.label];
    }
    return counts;
}

nlohmann::json counts_to_json(const ClassCounts& counts) {
    nlohmann::json j = nlohmann::json::object();
    for (BeatClass c : kReportOrder) {
        j[std::string(1, class_char(c))] = counts[c];
    }
    return j;
}

nlohmann::json dataset_manifest(const Dataset& ds) {
    return {{"count", ds.size()},
            {"beat_length", ds.beat_length()},
            {"split_tag", to_string(ds.split)},
            {"class_counts", counts_to_json(class_distribution(ds))}};
}

void write_beat_csv(const Dataset& ds, const std::filesystem::path& path, const nlohmann::json& extra) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    std::string line;
    for (const auto& r : ds.records) {
        line.clear();
        for (double s : r.samples) {
            line += format_double(s);
            line += ',';
        }
        line += format_double(static_cast<double>(file_code(r.label)));
        line += '\n';
        out << line;
    }
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
    nlohmann::json manifest = dataset_manifest(ds);
    manifest.update(extra);
    std::ofstream mout(manifest_path(path), std::ios::binary);
    mout << manifest.dump(2) << '\n';
    if (!mout) {
        throw IoError("cannot write manifest for " + path.string());
    }
}

namespace {

std::array<std::vector<std::size_t>, kNumClasses> indices_by_class(const Dataset& ds) {
    std::array<std::vector<std::size_t>, kNumClasses> by_class;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        by_class[static_cast<std::size_t>(ds.records[i].label)].push_back(i);
    }
    return by_class;
}

Dataset gather(const Dataset& ds, std::vector<std::size_t> keep) {
    std::sort(keep.begin(), keep.end());
    Dataset out;
    out.split = ds.split;
    out.records.reserve(keep.size());
    for (std::size_t i : keep) {
        out.records.push_back(ds.records[i]);
    }
    return out;
}

// Partial Fisher-Yates: the first `k` entries become a uniform sample.
void choose_prefix(std::vector<std::size_t>& items, std::size_t k, Rng& rng) {
    for (std::size_t i = 0; i < k && i + 1 < items.size(); ++i) {
        const std::size_t j = i + rng.uniform_index(items.size() - i);
        std::swap(items[i], items[j]);
    }
    items.resize(std::min(k, items.size()));
}

}  // namespace

Dataset stratified_subset(const Dataset& ds, std::size_t cap_per_class, std::uint64_t seed) {
    if (cap_per_class == 0) {
        throw ValidationError("cap_per_class must be >= 1");
    }
    auto by_class = indices_by_class(ds);
    std::vector<std::size_t> keep;
    for (BeatClass c : kFileOrder) {
        auto& idx = by_class[static_cast<std::size_t>(c)];
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
        choose_prefix(idx, cap_per_class, rng);
        keep.insert(keep.end(), idx.begin(), idx.end());
    }
    return gather(ds, std::move(keep));
}

Dataset proportional_subset(const Dataset& ds, std::size_t total, std::uint64_t seed) {
    if (total >= ds.size()) {
        return ds;
    }
    auto by_class = indices_by_class(ds);
    std::array<std::size_t, kNumClasses> quota{};
    std::array<double, kNumClasses> remainder{};
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
        const double exact = static_cast<double>(total) * static_cast<double>(by_class[k].size()) /
                             static_cast<double>(ds.size());
        quota[k] = static_cast<std::size_t>(exact);
        remainder[k] = exact - static_cast<double>(quota[k]);
        assigned += quota[k];
    }
    std::array<std::size_t, kNumClasses> order{0, 1, 2, 3, 4};
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t i = 0; assigned < total; i = (i + 1) % kNumClasses) {
        const std::size_t k = order[i];
        if (quota[k] < by_class[k].size()) {
            ++quota[k];
            ++assigned;
        }
    }
    std::vector<std::size_t> keep;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
        Rng rng(derive_seed(seed, k));
        choose_prefix(by_class[k], quota[k], rng);
        keep.insert(keep.end(), by_class[k].begin(), by_class[k].end());
    }
    return gather(ds, std::move(keep));
}

Dataset drop_classes(const Dataset& ds, std::initializer_list<BeatClass> classes) {
    Dataset out;
    out.split = ds.split;
    for (const auto& r : ds.records) {
        if (std::find(classes.begin(), classes.end(), r.label) == classes.end()) {
            out.records.push_back(r);
        }
    }
    return out;
}

std::vector<BeatClass> reference_count_mismatches(const ClassCounts& counts, SplitTag split) {
    const ClassCounts ref = split == SplitTag::train ? reference_train_counts() : reference_test_counts();
    std::vector<BeatClass> out;
    for (BeatClass c : kReportOrder) {
        if (counts[c] != ref[c]) out.push_back(c);
    }
    return out;
}

}  // namespace ecgwvd
