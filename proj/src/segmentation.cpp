#include "ecgwvd/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ecgwvd/error.hpp"

namespace ecgwvd {

std::vector<EcgStrip> window_strip(const EcgStrip& strip, double window_s) {
    if (!(window_s > 0.0) || !(strip.fs > 0.0)) {
        throw ValidationError("window length and sampling rate must be positive");
    }
    const auto len = static_cast<std::size_t>(std::llround(window_s * strip.fs));
    std::vector<EcgStrip> out;
    if (len == 0) {
        return out;
    }
    for (std::size_t start = 0; start + len <= strip.samples.size(); start += len) {
        EcgStrip w;
        w.fs = strip.fs;
        w.samples.assign(strip.samples.begin() + static_cast<std::ptrdiff_t>(start),
                         strip.samples.begin() + static_cast<std::ptrdiff_t>(start + len));
        out.push_back(std::move(w));
    }
    return out;
}

NormalizedWindow normalize_window(const EcgStrip& w) {
    if (w.samples.empty()) {
        throw ValidationError("cannot normalize an empty window");
    }
    NormalizedWindow out;
    out.strip.fs = w.fs;
    const auto [lo, hi] = std::minmax_element(w.samples.begin(), w.samples.end());
    const double min = *lo;
    const double range = *hi - *lo;
    if (!(range > 0.0)) {
        out.strip.samples.assign(w.samples.size(), 0.0);
        out.degenerate = true;
        return out;
    }
    out.strip.samples.reserve(w.samples.size());
    for (double v : w.samples) {
        out.strip.samples.push_back(std::clamp((v - min) / range, 0.0, 1.0));
    }
    return out;
}

RPeakSet detect_r_peaks(const EcgStrip& w, const PeakDetectConfig& cfg) {
    RPeakSet out;
    const auto& x = w.samples;
    if (x.size() < 3) {
        return out;
    }
    const double level = cfg.threshold * *std::max_element(x.begin(), x.end());
    const auto refractory = static_cast<std::size_t>(std::llround(cfg.refractory_s * w.fs));
    for (std::size_t i = 1; i + 1 < x.size(); ++i) {
        const double rise = x[i] - x[i - 1];
        const double fall = x[i + 1] - x[i];
        if (!(rise > 0.0 && fall <= 0.0) || x[i] < level || x[i] <= 0.0) {
            continue;
        }
        if (!out.indices.empty() && i - out.indices.back() < refractory) {
            if (x[i] > x[out.indices.back()]) {
                out.indices.back() = i;
            }
            continue;
        }
        out.indices.push_back(i);
    }
    if (out.indices.size() >= 2) {
        std::vector<double> rr;
        rr.reserve(out.indices.size() - 1);
        for (std::size_t k = 1; k < out.indices.size(); ++k) {
            rr.push_back(static_cast<double>(out.indices[k] - out.indices[k - 1]));
        }
        std::sort(rr.begin(), rr.end());
        const std::size_t mid = rr.size() / 2;
        out.median_rr = rr.size() % 2 ? rr[mid] : 0.5 * (rr[mid - 1] + rr[mid]);
    }
    return out;
}

std::vector<std::vector<double>> extract_beats(const EcgStrip& w, const RPeakSet& peaks,
                                               const BeatExtractConfig& cfg) {
    const auto len = static_cast<std::size_t>(std::llround(cfg.beat_s * w.fs));
    const auto before = static_cast<std::ptrdiff_t>(std::floor(static_cast<double>(len) * cfg.r_position));
    const auto n = static_cast<std::ptrdiff_t>(w.samples.size());
    std::vector<std::vector<double>> beats;
    beats.reserve(peaks.indices.size());
    for (std::size_t peak : peaks.indices) {
        std::vector<double> beat(len, 0.0);
        const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(peak) - before;
        for (std::size_t k = 0; k < len; ++k) {
            const std::ptrdiff_t src = start + static_cast<std::ptrdiff_t>(k);
            if (src >= 0 && src < n) {
                beat[k] = w.samples[static_cast<std::size_t>(src)];
            }
        }
        beats.push_back(std::move(beat));
    }
    return beats;
}

namespace {

// Hamming-windowed sinc low-pass with cutoff given as a fraction of fs.
std::vector<double> lowpass(std::span<const double> x, double cutoff) {
    const int half = 16;
    std::vector<double> taps(2 * half + 1);
    double sum = 0.0;
    for (int k = -half; k <= half; ++k) {
        const double t = static_cast<double>(k);
        const double sinc = k == 0 ? 2.0 * cutoff
                                   : std::sin(2.0 * std::numbers::pi * cutoff * t) / (std::numbers::pi * t);
        const double window = 0.54 + 0.46 * std::cos(std::numbers::pi * t / half);
        taps[static_cast<std::size_t>(k + half)] = sinc * window;
        sum += sinc * window;
    }
    for (double& t : taps) t /= sum;

    const auto n = static_cast<std::ptrdiff_t>(x.size());
    std::vector<double> y(x.size(), 0.0);
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int k = -half; k <= half; ++k) {
            // Edge samples are held constant beyond the signal bounds.
            const std::ptrdiff_t j = std::clamp<std::ptrdiff_t>(i + k, 0, n - 1);
            acc += taps[static_cast<std::size_t>(k + half)] * x[static_cast<std::size_t>(j)];
        }
        y[static_cast<std::size_t>(i)] = acc;
    }
    return y;
}

}  // namespace

std::vector<double> resample_rate(std::span<const double> x, double fs_in, double fs_out) {
    if (!(fs_in > 0.0) || !(fs_out > 0.0)) {
        throw ValidationError("sampling rates must be positive");
    }
    if (x.empty()) {
        return {};
    }
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    const double min = *lo;
    const double max = *hi;
    std::vector<double> filtered =
        fs_out < fs_in ? lowpass(x, 0.5 * fs_out / fs_in) : std::vector<double>(x.begin(), x.end());
    const auto out_len = static_cast<std::size_t>(std::llround(static_cast<double>(x.size()) * fs_out / fs_in));
    std::vector<double> y(out_len);
    const double step = fs_in / fs_out;
    for (std::size_t k = 0; k < out_len; ++k) {
        const double pos = static_cast<double>(k) * step;
        const auto i0 = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(i0);
        const double a = filtered[std::min(i0, x.size() - 1)];
        const double b = filtered[std::min(i0 + 1, x.size() - 1)];
        y[k] = std::clamp(a + frac * (b - a), min, max);
    }
    return y;
}

Dataset segment_strip(const EcgStrip& strip, const SegmentConfig& cfg, BeatClass label) {
    Dataset ds;
    const auto windows = window_strip(strip, cfg.window_s);
    for (std::size_t wi = 0; wi < windows.size(); ++wi) {
        const NormalizedWindow norm = normalize_window(windows[wi]);
        if (norm.degenerate) {
            continue;
        }
        const RPeakSet peaks = detect_r_peaks(norm.strip, cfg.peaks);
        const auto beats = extract_beats(norm.strip, peaks, cfg.beats);
        for (std::size_t bi = 0; bi < beats.size(); ++bi) {
            BeatRecord rec;
            rec.samples = resample_rate(beats[bi], strip.fs, cfg.target_fs);
            rec.samples.resize(cfg.row_length, 0.0);
            rec.label = label;
            rec.source_id = "w" + std::to_string(wi) + ":r" + std::to_string(peaks.indices[bi]);
            ds.records.push_back(std::move(rec));
        }
    }
    return ds;
}

}  // namespace ecgwvd
