#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ecgwvd/ingest.hpp"

namespace ecgwvd {

struct EcgStrip {
    std::vector<double> samples;
    double fs = 360.0;  // Hz
};

struct NormalizedWindow {
    EcgStrip strip;
    bool degenerate = false;  // input was constant; no beats extractable
};

struct RPeakSet {
    std::vector<std::size_t> indices;  // strictly increasing
    double median_rr = 0.0;            // samples; 0 with fewer than two peaks
};

struct PeakDetectConfig {
    double threshold = 0.6;       // fraction of the window maximum
    double refractory_s = 0.2;    // minimum spacing between accepted peaks
};

struct BeatExtractConfig {
    double beat_s = 1.2;
    double r_position = 1.0 / 3.0;  // R-peak location as a fraction of the beat window
};

// Consecutive non-overlapping windows of round(window_s * fs) samples; the
// trailing partial window is dropped.
std::vector<EcgStrip> window_strip(const EcgStrip& strip, double window_s = 10.0);

// Affine map onto [0, 1]. Constant input yields zeros and `degenerate`.
NormalizedWindow normalize_window(const EcgStrip& w);

// Local maxima (first-difference sign change from + to <= 0) with amplitude at
// least threshold * max(window). Within the refractory period the taller peak wins.
RPeakSet detect_r_peaks(const EcgStrip& w, const PeakDetectConfig& cfg = {});

// One vector of round(beat_s * fs) samples per peak, zero padded at strip edges.
std::vector<std::vector<double>> extract_beats(const EcgStrip& w, const RPeakSet& peaks,
                                               const BeatExtractConfig& cfg = {});

// Windowed-sinc anti-alias low-pass (when downsampling) followed by linear
// interpolation onto the target grid. The output is clipped to the input range.
std::vector<double> resample_rate(std::span<const double> x, double fs_in, double fs_out);

struct SegmentConfig {
    double window_s = 10.0;
    double target_fs = 125.0;
    std::size_t row_length = 187;  // beats are zero padded (or truncated) to this length
    PeakDetectConfig peaks;
    BeatExtractConfig beats;
};

// Full raw-strip pipeline: window, normalize, detect, extract, resample, pad.
// All beats carry `label`; source_id records window and peak index.
Dataset segment_strip(const EcgStrip& strip, const SegmentConfig& cfg, BeatClass label = BeatClass::N);

}  // namespace ecgwvd
