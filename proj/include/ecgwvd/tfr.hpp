#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace ecgwvd {

// Real time-frequency image. Row r is frequency bin r (row 0 = DC, bins follow
// the e^{-j2πkm/N} DFT of the lag kernel), column c is time sample c.
struct WvdImage {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;  // row-major
    double fs = 125.0;
    double ramp_strength = 0.0;

    WvdImage() = default;
    WvdImage(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) noexcept { return values[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const noexcept { return values[r * cols + c]; }
};

struct RampConfig {
    double strength = 0.25;  // value added at the last time column
};

inline constexpr std::size_t kImageSize = 128;

// Linear interpolation onto n uniformly spaced points; endpoints preserved.
std::vector<double> resample_beat(std::span<const double> x, std::size_t n = kImageSize);

// Discrete analytic signal via the FFT: negative-frequency bins zeroed,
// positive bins doubled, DC and Nyquist kept. Odd-length input is padded with
// one trailing zero, so the result has even length.
std::vector<std::complex<double>> analytic_signal(std::span<const double> x);

struct WvdResult {
    WvdImage image;
    double imag_residue = 0.0;  // max |Im| / max |W| before taking the real part
};

// Discrete pseudo Wigner-Ville distribution, N x N:
//   W[k, n] = sum_m x[n+m] conj(x[n-m]) exp(-j 2π k m / N)
// over every lag m with both indices inside the signal.
WvdResult compute_wvd_detailed(std::span<const std::complex<double>> x);
WvdImage compute_wvd(std::span<const std::complex<double>> x);

// Min-max affine map onto [0, 1]; a constant image maps to zeros.
WvdImage normalize_image(const WvdImage& img);

// Rounds values onto the fixed-point grid k * 2^-23 so that adding and removing
// a grid-valued ramp is exact in both double and float32.
inline constexpr double kImageGrid = 0x1.0p-23;
WvdImage quantize_to_grid(const WvdImage& img);

// Ramp value for time column c of `cols` (on the image grid; exact at both ends).
double ramp_value(double strength, std::size_t c, std::size_t cols);
WvdImage ramp_image(std::size_t rows, std::size_t cols, double strength);
// out[r, c] = in[r, c] + ramp_value(strength, c, cols)
WvdImage add_coordinate_ramp(const WvdImage& img, const RampConfig& cfg);

// Bilinear with aligned corners.
WvdImage resize_image(const WvdImage& img, std::size_t rows, std::size_t cols);

struct TransformConfig {
    std::size_t size = kImageSize;
    bool analytic = true;
    double ramp_strength = 0.25;  // 0 disables the ramp
    double fs = 125.0;
};

// resample -> analytic signal -> WVD -> [0,1] normalization -> grid -> ramp.
WvdImage transform_beat(std::span<const double> beat, const TransformConfig& cfg = {});

}  // namespace ecgwvd
