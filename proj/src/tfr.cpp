#include "ecgwvd/tfr.hpp"

#include <algorithm>
#include <cmath>

#include <unsupported/Eigen/FFT>

#include "ecgwvd/error.hpp"

namespace ecgwvd {

using cd = std::complex<double>;

std::vector<double> resample_beat(std::span<const double> x, std::size_t n) {
    if (x.size() < 2 || n < 2) {
        throw ValidationError("resample_beat needs at least two input and two output samples");
    }
    std::vector<double> y(n);
    const double scale = static_cast<double>(x.size() - 1) / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double pos = static_cast<double>(i) * scale;
        const auto i0 = std::min(static_cast<std::size_t>(pos), x.size() - 2);
        const double frac = pos - static_cast<double>(i0);
        y[i] = x[i0] + frac * (x[i0 + 1] - x[i0]);
    }
    y.front() = x.front();
    y.back() = x.back();
    return y;
}

std::vector<cd> analytic_signal(std::span<const double> x) {
    const std::size_t n = x.size() + (x.size() % 2);
    if (n == 0) {
        return {};
    }
    std::vector<cd> in(n, cd{0.0, 0.0});
    std::copy(x.begin(), x.end(), in.begin());
    Eigen::FFT<double> fft;
    std::vector<cd> spectrum;
    fft.fwd(spectrum, in);
    // DC and Nyquist keep weight 1, positive bins 2, negative bins 0.
    for (std::size_t k = 1; k < n / 2; ++k) spectrum[k] *= 2.0;
    for (std::size_t k = n / 2 + 1; k < n; ++k) spectrum[k] = 0.0;
    std::vector<cd> out;
    fft.inv(out, spectrum);
    // The real part is x by construction; pin it exactly.
    for (std::size_t i = 0; i < n; ++i) {
        out[i].real(i < x.size() ? x[i] : 0.0);
    }
    return out;
}

WvdResult compute_wvd_detailed(std::span<const cd> x) {
    const std::size_t n = x.size();
    if (n < 2) {
        throw ValidationError("compute_wvd needs at least two samples");
    }
    WvdResult result;
    result.image = WvdImage(n, n);
    Eigen::FFT<double> fft;
    std::vector<cd> kernel(n);
    std::vector<cd> column;
    double max_abs = 0.0;
    double max_imag = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        std::fill(kernel.begin(), kernel.end(), cd{0.0, 0.0});
        // Both t+m and t-m in range implies |m| <= (n-1)/2, so lags never alias mod n.
        const std::size_t max_lag = std::min(t, n - 1 - t);
        kernel[0] = x[t] * std::conj(x[t]);
        for (std::size_t m = 1; m <= max_lag; ++m) {
            kernel[m] = x[t + m] * std::conj(x[t - m]);
            kernel[n - m] = x[t - m] * std::conj(x[t + m]);
        }
        fft.fwd(column, kernel);
        for (std::size_t k = 0; k < n; ++k) {
            result.image.at(k, t) = column[k].real();
            max_abs = std::max(max_abs, std::abs(column[k]));
            max_imag = std::max(max_imag, std::abs(column[k].imag()));
        }
    }
    result.imag_residue = max_abs > 0.0 ? max_imag / max_abs : 0.0;
    return result;
}

WvdImage compute_wvd(std::span<const cd> x) { return compute_wvd_detailed(x).image; }

WvdImage normalize_image(const WvdImage& img) {
    WvdImage out = img;
    if (img.values.empty()) {
        return out;
    }
    const auto [lo, hi] = std::minmax_element(img.values.begin(), img.values.end());
    const double min = *lo;
    const double range = *hi - *lo;
    if (!(range > 0.0)) {
        std::fill(out.values.begin(), out.values.end(), 0.0);
        return out;
    }
    for (double& v : out.values) {
        v = std::clamp((v - min) / range, 0.0, 1.0);
    }
    return out;
}

namespace {

double to_grid(double v) { return std::nearbyint(v / kImageGrid) * kImageGrid; }

}  // namespace

WvdImage quantize_to_grid(const WvdImage& img) {
    WvdImage out = img;
    for (double& v : out.values) v = to_grid(v);
    return out;
}

double ramp_value(double strength, std::size_t c, std::size_t cols) {
    if (c + 1 == cols) {
        return strength;
    }
    return to_grid(strength * static_cast<double>(c) / static_cast<double>(cols - 1));
}

WvdImage ramp_image(std::size_t rows, std::size_t cols, double strength) {
    return add_coordinate_ramp(WvdImage(rows, cols), RampConfig{strength});
}

WvdImage add_coordinate_ramp(const WvdImage& img, const RampConfig& cfg) {
    if (img.cols < 2) {
        throw ValidationError("coordinate ramp needs at least two time columns");
    }
    if (!(cfg.strength >= 0.0)) {
        throw ValidationError("ramp strength must be non-negative");
    }
    WvdImage out = img;
    out.ramp_strength = cfg.strength;
    if (cfg.strength == 0.0) {
        return out;
    }
    std::vector<double> profile(img.cols);
    for (std::size_t c = 0; c < img.cols; ++c) profile[c] = ramp_value(cfg.strength, c, img.cols);
    for (std::size_t r = 0; r < img.rows; ++r) {
        for (std::size_t c = 0; c < img.cols; ++c) {
            out.at(r, c) += profile[c];
        }
    }
    return out;
}

WvdImage resize_image(const WvdImage& img, std::size_t rows, std::size_t cols) {
    if (img.rows < 2 || img.cols < 2 || rows < 1 || cols < 1) {
        throw ValidationError("resize_image needs a source of at least 2x2");
    }
    if (rows == img.rows && cols == img.cols) {
        return img;
    }
    WvdImage out(rows, cols);
    out.fs = img.fs;
    out.ramp_strength = img.ramp_strength;
    const auto coord = [](std::size_t i, std::size_t dst, std::size_t src) {
        return dst == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(src - 1) / static_cast<double>(dst - 1);
    };
    for (std::size_t r = 0; r < rows; ++r) {
        const double y = coord(r, rows, img.rows);
        const auto y0 = std::min(static_cast<std::size_t>(y), img.rows - 2);
        const double fy = y - static_cast<double>(y0);
        for (std::size_t c = 0; c < cols; ++c) {
            const double x = coord(c, cols, img.cols);
            const auto x0 = std::min(static_cast<std::size_t>(x), img.cols - 2);
            const double fx = x - static_cast<double>(x0);
            const double top = img.at(y0, x0) + fx * (img.at(y0, x0 + 1) - img.at(y0, x0));
            const double bottom = img.at(y0 + 1, x0) + fx * (img.at(y0 + 1, x0 + 1) - img.at(y0 + 1, x0));
            out.at(r, c) = top + fy * (bottom - top);
        }
    }
    return out;
}

WvdImage transform_beat(std::span<const double> beat, const TransformConfig& cfg) {
    const std::vector<double> resampled = resample_beat(beat, cfg.size);
    std::vector<cd> signal;
    if (cfg.analytic) {
        signal = analytic_signal(resampled);
    } else {
        signal.assign(resampled.begin(), resampled.end());
    }
    WvdImage img = compute_wvd(signal);
    if (img.rows != cfg.size || img.cols != cfg.size) {
        img = resize_image(img, cfg.size, cfg.size);
    }
    img.fs = cfg.fs;
    img = quantize_to_grid(normalize_image(img));
    return add_coordinate_ramp(img, RampConfig{cfg.ramp_strength});
}

}  // namespace ecgwvd
