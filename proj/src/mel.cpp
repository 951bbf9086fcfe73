#include "vctr/mel.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>
#include <numeric>

namespace vctr {

// ---- resampling -----------------------------------------------------------

namespace {

constexpr double kKaiserBeta = 8.0;
constexpr double kZeroCrossings = 16.0;
constexpr double kRolloff = 0.95;

double sinc(double x) {
    if (x == 0.0) return 1.0;
    const double px = std::numbers::pi * x;
    return std::sin(px) / px;
}

double kaiser(double x, double half_width) {
    const double r = x / half_width;
    if (std::abs(r) > 1.0) return 0.0;
    return std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(1.0 - r * r)) / std::cyl_bessel_i(0.0, kKaiserBeta);
}

}  // namespace

std::vector<double> resample(std::span<const double> samples, std::uint32_t from_rate, std::uint32_t to_rate) {
    if (from_rate == 0 || to_rate == 0) throw ConfigError("sample rates must be positive");
    if (from_rate == to_rate) return {samples.begin(), samples.end()};
    const std::uint64_t g = std::gcd(from_rate, to_rate);
    const std::uint64_t up = to_rate / g;
    const std::uint64_t down = from_rate / g;
    const std::uint64_t n = samples.size();
    const std::uint64_t out_len = (n * up + down / 2) / down;

    // Cutoff relative to the input Nyquist.
    const double fc = kRolloff * std::min(1.0, static_cast<double>(up) / static_cast<double>(down));
    const double half_width = kZeroCrossings / fc;
    const auto reach = static_cast<std::int64_t>(std::ceil(half_width));

    // One tap set per output phase, indexed by offset from floor(t).
    const std::size_t taps = static_cast<std::size_t>(2 * reach);
    std::vector<double> bank(up * taps);
    for (std::uint64_t p = 0; p < up; ++p) {
        const double frac = static_cast<double>(p) / static_cast<double>(up);
        double* h = bank.data() + p * taps;
        double sum = 0.0;
        for (std::size_t j = 0; j < taps; ++j) {
            const double x = static_cast<double>(static_cast<std::int64_t>(j) - reach + 1) - frac;
            h[j] = fc * sinc(fc * x) * kaiser(x, half_width);
            sum += h[j];
        }
        for (std::size_t j = 0; j < taps; ++j) h[j] /= sum;
    }

    std::vector<double> out(out_len);
    for (std::uint64_t i = 0; i < out_len; ++i) {
        const std::uint64_t num = i * down;
        const auto base = static_cast<std::int64_t>(num / up);
        const double* h = bank.data() + (num % up) * taps;
        double acc = 0.0;
        for (std::size_t j = 0; j < taps; ++j) {
            const std::int64_t k = base + static_cast<std::int64_t>(j) - reach + 1;
            if (k >= 0 && k < static_cast<std::int64_t>(n)) acc += h[j] * samples[static_cast<std::size_t>(k)];
        }
        out[i] = acc;
    }
    return out;
}

// ---- configuration --------------------------------------------------------

void SignalConfig::validate() const {
    if (sample_rate == 0) throw ConfigError("sample_rate must be positive");
    if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0))
        throw ConfigError("need 0 <= fmin < fmax <= sample_rate / 2");
    if (hop_length == 0 || hop_length > win_length || win_length > n_fft)
        throw ConfigError("need 0 < hop <= win <= n_fft");
    if (n_mels == 0) throw ConfigError("n_mels must be positive");
    if (!(segment_seconds > 0.0)) throw ConfigError("segment_seconds must be positive");
    if (!(log_floor > 0.0)) throw ConfigError("log_floor must be positive");
}

std::size_t SignalConfig::segment_samples() const {
    return static_cast<std::size_t>(std::llround(segment_seconds * sample_rate));
}

std::size_t SignalConfig::frame_count(std::size_t num_samples) const {
    if (num_samples < win_length) return 0;
    return 1 + (num_samples - win_length) / hop_length;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_center_frequencies(const SignalConfig& cfg) {
    const double lo = hz_to_mel(cfg.fmin);
    const double hi = hz_to_mel(cfg.fmax);
    std::vector<double> hz(cfg.n_mels + 2);
    for (std::size_t i = 0; i < hz.size(); ++i)
        hz[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
    return hz;
}

std::vector<double> mel_filterbank(const SignalConfig& cfg) {
    cfg.validate();
    const std::size_t bins = cfg.n_fft / 2 + 1;
    const auto pts = mel_center_frequencies(cfg);
    std::vector<double> fb(cfg.n_mels * bins, 0.0);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
        const double left = pts[m], center = pts[m + 1], right = pts[m + 2];
        for (std::size_t k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.n_fft);
            const double up = (f - left) / (center - left);
            const double down = (right - f) / (right - center);
            fb[m * bins + k] = std::max(0.0, std::min(up, down));
        }
    }
    return fb;
}

// ---- spectrogram ----------------------------------------------------------

std::vector<double> mel_energies(std::span<const double> samples, const SignalConfig& cfg, std::size_t& frames) {
    cfg.validate();
    frames = cfg.frame_count(samples.size());
    if (frames == 0)
        throw ConfigError("signal of " + std::to_string(samples.size()) + " samples is shorter than one " +
                          std::to_string(cfg.win_length) + "-sample window");
    const std::size_t bins = cfg.n_fft / 2 + 1;
    const auto fb = mel_filterbank(cfg);

    // Periodic Hann, centred inside the FFT frame when win < n_fft.
    std::vector<double> window(cfg.n_fft, 0.0);
    const std::size_t offset = (cfg.n_fft - cfg.win_length) / 2;
    for (std::size_t i = 0; i < cfg.win_length; ++i)
        window[offset + i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                                  static_cast<double>(cfg.win_length));

    double* in = fftw_alloc_real(cfg.n_fft);
    fftw_complex* spec = fftw_alloc_complex(bins);
    fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(cfg.n_fft), in, spec, FFTW_ESTIMATE);

    std::vector<double> mag(bins);
    std::vector<double> out(cfg.n_mels * frames);
    for (std::size_t t = 0; t < frames; ++t) {
        const std::size_t start = t * cfg.hop_length;
        std::fill(in, in + cfg.n_fft, 0.0);
        for (std::size_t i = 0; i < cfg.win_length; ++i)
            in[offset + i] = samples[start + i] * window[offset + i];
        fftw_execute(plan);
        for (std::size_t k = 0; k < bins; ++k) mag[k] = std::hypot(spec[k][0], spec[k][1]);
        for (std::size_t m = 0; m < cfg.n_mels; ++m) {
            const double* row = fb.data() + m * bins;
            double acc = 0.0;
            for (std::size_t k = 0; k < bins; ++k) acc += row[k] * mag[k];
            out[m * frames + t] = acc;
        }
    }
    fftw_destroy_plan(plan);
    fftw_free(spec);
    fftw_free(in);
    return out;
}

MelSpectrogram log_mel_spectrogram(std::span<const double> samples, const SignalConfig& cfg) {
    MelSpectrogram mel;
    mel.bands = cfg.n_mels;
    mel.values = mel_energies(samples, cfg, mel.frames);
    for (double& v : mel.values) v = std::log10(std::max(cfg.log_floor, v));
    const auto [lo, hi] = std::minmax_element(mel.values.begin(), mel.values.end());
    mel.norm_min = *lo;
    mel.norm_max = *hi;
    return mel;
}

MelSpectrogram normalize(const MelSpectrogram& mel) {
    if (mel.normalized) return mel;
    MelSpectrogram out = mel;
    out.normalized = true;
    if (mel.values.empty()) return out;
    const auto [lo, hi] = std::minmax_element(mel.values.begin(), mel.values.end());
    out.norm_min = *lo;
    out.norm_max = *hi;
    const double range = *hi - *lo;
    for (double& v : out.values) v = range > 0.0 ? 2.0 * (v - out.norm_min) / range - 1.0 : 0.0;
    return out;
}

MelSpectrogram denormalize(const MelSpectrogram& mel) {
    if (!mel.normalized) return mel;
    MelSpectrogram out = mel;
    out.normalized = false;
    const double range = mel.norm_max - mel.norm_min;
    for (double& v : out.values) v = (v + 1.0) * 0.5 * range + mel.norm_min;
    return out;
}

Tensor MelSpectrogram::to_tensor() const { return Tensor::from_data({1, bands, frames}, values); }

MelSpectrogram MelSpectrogram::from_tensor(const Tensor& t, double norm_min, double norm_max) {
    if (t.rank() != 3 || t.dim(0) != 1) throw ShapeError("mel tensor must be [1 x bands x frames], got " + shape_string(t.shape()));
    MelSpectrogram mel;
    mel.bands = t.dim(1);
    mel.frames = t.dim(2);
    mel.values.assign(t.data().begin(), t.data().end());
    mel.norm_min = norm_min;
    mel.norm_max = norm_max;
    mel.normalized = true;
    return mel;
}

Segmentation segment(std::span<const double> samples, const SignalConfig& cfg) {
    const std::size_t len = cfg.segment_samples();
    if (len == 0) throw ConfigError("segment length is zero samples");
    Segmentation s;
    const std::size_t count = samples.size() / len;
    for (std::size_t i = 0; i < count; ++i)
        s.segments.emplace_back(samples.begin() + static_cast<std::ptrdiff_t>(i * len),
                                samples.begin() + static_cast<std::ptrdiff_t>((i + 1) * len));
    s.discarded_samples = samples.size() - count * len;
    if (count == 0)
        s.warning = "clip of " + std::to_string(samples.size()) + " samples is shorter than one " +
                    std::to_string(len) + "-sample segment; nothing emitted";
    return s;
}

// ---- MELB -----------------------------------------------------------------

namespace {

constexpr std::uint32_t kMelbVersion = 1;
constexpr std::size_t kMelbHeader = 24;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t pos) {
    if (pos + 4 > b.size()) throw FormatError("truncated MELB", pos);
    return std::uint32_t{b[pos]} | (std::uint32_t{b[pos + 1]} << 8) | (std::uint32_t{b[pos + 2]} << 16) |
           (std::uint32_t{b[pos + 3]} << 24);
}

}  // namespace

std::vector<std::uint8_t> encode_melb(const MelSpectrogram& mel) {
    if (mel.values.size() != mel.bands * mel.frames) throw ShapeError("MelSpectrogram values do not match dims");
    std::vector<std::uint8_t> out{'M', 'E', 'L', 'B'};
    out.reserve(kMelbHeader + 4 * mel.values.size());
    put_u32(out, kMelbVersion);
    put_u32(out, static_cast<std::uint32_t>(mel.bands));
    put_u32(out, static_cast<std::uint32_t>(mel.frames));
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(mel.norm_min)));
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(mel.norm_max)));
    for (double v : mel.values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return out;
}

MelSpectrogram decode_melb(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "MELB", 4) != 0) throw FormatError("missing MELB magic", 0);
    const std::uint32_t version = get_u32(bytes, 4);
    if (version != kMelbVersion) throw FormatError("unsupported MELB version " + std::to_string(version), 4);
    MelSpectrogram mel;
    mel.bands = get_u32(bytes, 8);
    mel.frames = get_u32(bytes, 12);
    mel.norm_min = std::bit_cast<float>(get_u32(bytes, 16));
    mel.norm_max = std::bit_cast<float>(get_u32(bytes, 20));
    mel.normalized = true;
    const std::size_t count = mel.bands * mel.frames;
    if (bytes.size() != kMelbHeader + 4 * count)
        throw FormatError("MELB payload is " + std::to_string(bytes.size() - kMelbHeader) + " bytes, expected " +
                              std::to_string(4 * count),
                          std::min(bytes.size(), kMelbHeader + 4 * count));
    mel.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) mel.values[i] = std::bit_cast<float>(get_u32(bytes, kMelbHeader + 4 * i));
    return mel;
}

void write_melb(const std::filesystem::path& path, const MelSpectrogram& mel) {
    write_file_bytes(path, encode_melb(mel));
}

MelSpectrogram read_melb(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return decode_melb(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.detail(), e.offset());
    }
}

}  // namespace vctr
