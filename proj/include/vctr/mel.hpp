#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vctr/tensor.hpp"

namespace vctr {

// Malformed or truncated binary input; `offset` is the byte position at
// which parsing failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset);
    std::size_t offset() const { return offset_; }
    const std::string& detail() const { return detail_; }

private:
    std::string detail_;
    std::size_t offset_;
};

class UnsupportedFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---- WAV ----------------------------------------------------------------

struct WavData {
    std::vector<double> samples;  // first channel, in [-1, 1]
    std::uint32_t sample_rate = 0;
};

// RIFF/WAVE with PCM int16 or IEEE float32 payloads (plain or extensible fmt).
WavData parse_wav(std::span<const std::uint8_t> bytes);
WavData load_wav(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_wav_pcm16(std::span<const double> samples, std::uint32_t sample_rate);
std::vector<std::uint8_t> encode_wav_float32(std::span<const double> samples, std::uint32_t sample_rate);
void write_wav_pcm16(const std::filesystem::path& path, std::span<const double> samples, std::uint32_t sample_rate);

// Windowed-sinc (Kaiser) polyphase resampler. Output length is
// round(n * to_rate / from_rate). Each phase's taps are normalised to unit
// sum, so DC passes unchanged.
std::vector<double> resample(std::span<const double> samples, std::uint32_t from_rate, std::uint32_t to_rate = 24000);

// ---- Mel spectrogram ----------------------------------------------------

struct SignalConfig {
    std::uint32_t sample_rate = 24000;
    std::size_t n_fft = 1024;
    std::size_t win_length = 1024;
    std::size_t hop_length = 256;
    std::size_t n_mels = 80;
    double fmin = 80.0;
    double fmax = 7600.0;
    double segment_seconds = 2.0;
    double log_floor = 1e-10;

    void validate() const;
    std::size_t segment_samples() const;
    // Frames fully inside the signal: 1 + floor((n - win) / hop); 0 if n < win.
    std::size_t frame_count(std::size_t num_samples) const;
};

// HTK mel scale: 2595 * log10(1 + f / 700).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular filters, row-major [n_mels x (n_fft / 2 + 1)], no area
// normalisation. Filter m peaks at centers[m + 1] of n_mels + 2 points spaced
// evenly in mel between fmin and fmax.
std::vector<double> mel_filterbank(const SignalConfig& cfg);
std::vector<double> mel_center_frequencies(const SignalConfig& cfg);

struct MelSpectrogram {
    std::size_t bands = 0;
    std::size_t frames = 0;
    std::vector<double> values;  // row-major by band
    double norm_min = 0.0;
    double norm_max = 0.0;
    bool normalized = false;

    double at(std::size_t band, std::size_t frame) const { return values[band * frames + frame]; }
    // [1 x bands x frames]
    Tensor to_tensor() const;
    static MelSpectrogram from_tensor(const Tensor& t, double norm_min, double norm_max);
};

// Hann-windowed STFT magnitude -> mel filterbank -> log10(max(floor, .)).
// No centering: frames lie wholly inside the signal.
MelSpectrogram log_mel_spectrogram(std::span<const double> samples, const SignalConfig& cfg);
// Linear-magnitude mel energies (before the log), same layout.
std::vector<double> mel_energies(std::span<const double> samples, const SignalConfig& cfg, std::size_t& frames);

// x' = 2 (x - min) / (max - min) - 1 per utterance; a constant input maps to 0.
MelSpectrogram normalize(const MelSpectrogram& mel);
MelSpectrogram denormalize(const MelSpectrogram& mel);

struct Segmentation {
    std::vector<std::vector<double>> segments;
    std::size_t discarded_samples = 0;
    std::string warning;  // set when the clip is shorter than one segment
};

// Consecutive non-overlapping segments; the trailing partial window is
// dropped, never padded.
Segmentation segment(std::span<const double> samples, const SignalConfig& cfg);

// ---- MELB container -----------------------------------------------------
// "MELB", u32 version = 1, u32 bands, u32 frames, f32 norm_min, f32 norm_max,
// then bands x frames little-endian f32, row-major by band.

std::vector<std::uint8_t> encode_melb(const MelSpectrogram& mel);
MelSpectrogram decode_melb(std::span<const std::uint8_t> bytes);
void write_melb(const std::filesystem::path& path, const MelSpectrogram& mel);
MelSpectrogram read_melb(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace vctr
