#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>

#include <unistd.h>

#include "vctr/mel.hpp"

using namespace vctr;

namespace {

void put16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    put16(b, static_cast<std::uint16_t>(v));
    put16(b, static_cast<std::uint16_t>(v >> 16));
}
void tag(std::vector<std::uint8_t>& b, const char* t) { b.insert(b.end(), t, t + 4); }

// Hand-assembled RIFF file; `declared` overrides the data chunk size.
std::vector<std::uint8_t> raw_wav(std::uint16_t format, std::uint16_t bits, std::uint16_t channels,
                                  const std::vector<std::uint8_t>& payload, std::int64_t declared = -1) {
    std::vector<std::uint8_t> b;
    tag(b, "RIFF");
    put32(b, static_cast<std::uint32_t>(36 + payload.size()));
    tag(b, "WAVE");
    tag(b, "fmt ");
    put32(b, 16);
    put16(b, format);
    put16(b, channels);
    put32(b, 16000);
    put32(b, 16000u * channels * bits / 8);
    put16(b, static_cast<std::uint16_t>(channels * bits / 8));
    put16(b, bits);
    tag(b, "LIST");  // unrelated chunk to skip, odd-sized with pad byte
    put32(b, 3);
    b.insert(b.end(), {'a', 'b', 'c', 0});
    tag(b, "data");
    put32(b, declared < 0 ? static_cast<std::uint32_t>(payload.size()) : static_cast<std::uint32_t>(declared));
    b.insert(b.end(), payload.begin(), payload.end());
    return b;
}

std::vector<double> sine(double hz, std::uint32_t rate, std::size_t n, double amp = 0.5) {
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = amp * std::sin(2.0 * std::numbers::pi * hz * i / rate);
    return s;
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("vctr_test_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST(Wav, Pcm16ScalesBy32768AndTakesFirstChannel) {
    std::vector<std::uint8_t> p;
    for (std::int16_t v : {16384, -7, -32768, 32767, 100, 0}) put16(p, static_cast<std::uint16_t>(v));
    const WavData w = parse_wav(raw_wav(1, 16, 2, p));
    EXPECT_EQ(w.sample_rate, 16000u);
    ASSERT_EQ(w.samples.size(), 3u);
    EXPECT_EQ(w.samples[0], 0.5);
    EXPECT_EQ(w.samples[1], -1.0);
    EXPECT_EQ(w.samples[2], 100.0 / 32768.0);
}

TEST(Wav, EncodersRoundTrip) {
    const auto s = sine(440.0, 24000, 500);
    const WavData f = parse_wav(encode_wav_float32(s, 24000));
    ASSERT_EQ(f.samples.size(), s.size());
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(f.samples[i], static_cast<float>(s[i]));
    const WavData p = parse_wav(encode_wav_pcm16(s, 22050));
    EXPECT_EQ(p.sample_rate, 22050u);
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(p.samples[i], s[i], 1.0 / 32768.0);

    const auto path = temp_path("rt.wav");
    write_wav_pcm16(path, s, 24000);
    EXPECT_EQ(load_wav(path).samples, p.samples);
    std::filesystem::remove(path);
}

TEST(Wav, MalformedInputReportsOffsets) {
    std::vector<std::uint8_t> p(8, 0);
    auto good = raw_wav(1, 16, 1, p);

    auto bad = good;
    bad[0] = 'X';
    try {
        parse_wav(bad);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 0u);
    }
    bad = good;
    bad[9] = 'X';
    try {
        parse_wav(bad);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 8u);
    }
    // Data chunk header sits at 48; its size field at 52.
    auto over = raw_wav(1, 16, 1, p, 100);
    try {
        parse_wav(over);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 52u);
        EXPECT_NE(std::string(e.what()).find("52"), std::string::npos) << e.what();
    }
    auto cut = std::vector<std::uint8_t>(good.begin(), good.begin() + 30);
    EXPECT_THROW(parse_wav(cut), FormatError);
    EXPECT_THROW(parse_wav(std::vector<std::uint8_t>{}), FormatError);
}

TEST(Wav, UnsupportedCodecsAreNamed) {
    std::vector<std::uint8_t> p(8, 0);
    EXPECT_THROW(parse_wav(raw_wav(6, 8, 1, p)), UnsupportedFormatError);    // A-law
    EXPECT_THROW(parse_wav(raw_wav(1, 24, 1, p)), UnsupportedFormatError);   // PCM24
    EXPECT_THROW(parse_wav(raw_wav(3, 64, 1, p)), UnsupportedFormatError);   // float64
}

TEST(Resample, SinePreservedWithinOnePercent) {
    const auto in = sine(440.0, 16000, 16000);
    const auto out = resample(in, 16000, 24000);
    ASSERT_EQ(out.size(), 24000u);
    const auto ideal = sine(440.0, 24000, 24000);
    double err = 0.0;
    for (std::size_t i = 200; i + 200 < out.size(); ++i) err = std::max(err, std::abs(out[i] - ideal[i]));
    EXPECT_LT(err, 0.01 * 0.5);
}

TEST(Resample, DcAndIdentity) {
    const std::vector<double> dc(44100, 0.25);
    const auto out = resample(dc, 44100, 24000);
    EXPECT_EQ(out.size(), 24000u);
    for (std::size_t i = 100; i + 100 < out.size(); ++i) ASSERT_NEAR(out[i], 0.25, 1e-3);
    const auto s = sine(100.0, 24000, 300);
    EXPECT_EQ(resample(s, 24000, 24000), s);
    EXPECT_THROW(resample(s, 0, 24000), ConfigError);
}

TEST(Mel, HtkScale) {
    EXPECT_NEAR(hz_to_mel(1000.0), 999.985, 1e-3);
    EXPECT_NEAR(hz_to_mel(0.0), 0.0, 1e-12);
    for (double f : {80.0, 440.0, 7600.0}) EXPECT_NEAR(mel_to_hz(hz_to_mel(f)), f, 1e-9);
}

TEST(Mel, FilterbankShape) {
    const SignalConfig cfg;
    const auto fb = mel_filterbank(cfg);
    const std::size_t bins = cfg.n_fft / 2 + 1;
    ASSERT_EQ(fb.size(), cfg.n_mels * bins);
    const auto centers = mel_center_frequencies(cfg);
    ASSERT_EQ(centers.size(), cfg.n_mels + 2);
    EXPECT_NEAR(centers.front(), 80.0, 1e-9);
    EXPECT_NEAR(centers.back(), 7600.0, 1e-9);
    for (std::size_t k = 0; k < bins; ++k) {
        std::size_t active = 0;
        for (std::size_t m = 0; m < cfg.n_mels; ++m) {
            const double v = fb[m * bins + k];
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
            if (v > 0.0) ++active;
        }
        EXPECT_LE(active, 2u);
    }
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
        double row = 0.0;
        for (std::size_t k = 0; k < bins; ++k) row += fb[m * bins + k];
        EXPECT_GT(row, 0.0) << "filter " << m << " is empty";
    }
}

TEST(Mel, ToneConcentratesInFewFilters) {
    const SignalConfig cfg;
    std::size_t frames = 0;
    const auto e = mel_energies(sine(1000.0, 24000, 24000), cfg, frames);
    std::vector<double> band(cfg.n_mels, 0.0);
    for (std::size_t m = 0; m < cfg.n_mels; ++m)
        for (std::size_t t = 0; t < frames; ++t) band[m] += e[m * frames + t] * e[m * frames + t];
    const double total = std::accumulate(band.begin(), band.end(), 0.0);
    std::sort(band.rbegin(), band.rend());
    EXPECT_GE((band[0] + band[1] + band[2]) / total, 0.9);
}

TEST(Mel, TwoSecondsGive80By184) {
    const SignalConfig cfg;
    EXPECT_EQ(cfg.segment_samples(), 48000u);
    EXPECT_EQ(cfg.frame_count(48000), 184u);
    EXPECT_EQ(cfg.frame_count(1023), 0u);
    const auto mel = log_mel_spectrogram(sine(440.0, 24000, 48000), cfg);
    EXPECT_EQ(mel.bands, 80u);
    EXPECT_EQ(mel.frames, 184u);
    EXPECT_EQ(mel.to_tensor().shape(), (Shape{1, 80, 184}));
    const auto silent = log_mel_spectrogram(std::vector<double>(4096, 0.0), cfg);
    for (double v : silent.values) EXPECT_EQ(v, -10.0);
    EXPECT_THROW(log_mel_spectrogram(std::vector<double>(100, 0.0), cfg), ConfigError);
}

TEST(Mel, ConfigValidation) {
    SignalConfig cfg;
    cfg.fmax = 13000.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = SignalConfig{};
    cfg.hop_length = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    EXPECT_NO_THROW(SignalConfig{}.validate());
}

TEST(Mel, NormalizationMapsRangeToUnitInterval) {
    MelSpectrogram m;
    m.bands = 1;
    m.frames = 3;
    m.values = {0.0, 5.0, 10.0};
    const auto n = normalize(m);
    EXPECT_TRUE(n.normalized);
    EXPECT_EQ(n.values, (std::vector<double>{-1.0, 0.0, 1.0}));
    EXPECT_EQ(n.norm_min, 0.0);
    EXPECT_EQ(n.norm_max, 10.0);

    const auto real = log_mel_spectrogram(sine(300.0, 24000, 8000), SignalConfig{});
    const auto back = denormalize(normalize(real));
    for (std::size_t i = 0; i < real.values.size(); ++i) ASSERT_NEAR(back.values[i], real.values[i], 1e-12);

    m.values = {3.0, 3.0, 3.0};
    EXPECT_EQ(normalize(m).values, (std::vector<double>{0.0, 0.0, 0.0}));
}

TEST(Mel, SegmentationDropsTheTail) {
    const SignalConfig cfg;
    const auto five = segment(std::vector<double>(5 * 24000, 0.1), cfg);
    EXPECT_EQ(five.segments.size(), 2u);
    EXPECT_EQ(five.discarded_samples, 24000u);
    EXPECT_TRUE(five.warning.empty());
    const auto two = segment(std::vector<double>(48000, 0.1), cfg);
    EXPECT_EQ(two.segments.size(), 1u);
    EXPECT_EQ(two.discarded_samples, 0u);
    const auto short_clip = segment(std::vector<double>(45600, 0.1), cfg);
    EXPECT_TRUE(short_clip.segments.empty());
    EXPECT_EQ(short_clip.discarded_samples, 45600u);
    EXPECT_FALSE(short_clip.warning.empty());
}

TEST(Melb, RoundTripsThroughFloat32) {
    auto mel = normalize(log_mel_spectrogram(sine(700.0, 24000, 6000), SignalConfig{}));
    const auto path = temp_path("a.melb");
    write_melb(path, mel);
    const auto back = read_melb(path);
    std::filesystem::remove(path);
    EXPECT_EQ(back.bands, mel.bands);
    EXPECT_EQ(back.frames, mel.frames);
    EXPECT_FLOAT_EQ(static_cast<float>(back.norm_min), static_cast<float>(mel.norm_min));
    for (std::size_t i = 0; i < mel.values.size(); ++i)
        ASSERT_EQ(back.values[i], static_cast<double>(static_cast<float>(mel.values[i])));
    const auto bytes = encode_melb(mel);
    EXPECT_EQ(bytes.size(), 24 + 4 * mel.values.size());
}

TEST(Melb, RejectsDamagedFiles) {
    MelSpectrogram m;
    m.bands = 2;
    m.frames = 2;
    m.values = {1, 2, 3, 4};
    const auto good = encode_melb(m);
    auto bad = good;
    bad[1] = 'X';
    EXPECT_THROW(decode_melb(bad), FormatError);
    bad = good;
    bad[4] = 2;
    try {
        decode_melb(bad);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 4u);
    }
    bad.assign(good.begin(), good.end() - 1);
    EXPECT_THROW(decode_melb(bad), FormatError);
    bad = good;
    bad.push_back(0);
    EXPECT_THROW(decode_melb(bad), FormatError);
    const auto missing = temp_path("missing.melb");
    EXPECT_THROW(read_melb(missing), std::runtime_error);
}

TEST(Mel, TensorRoundTrip) {
    const Tensor t = Tensor::from_data({1, 2, 3}, {1, 2, 3, 4, 5, 6});
    const auto m = MelSpectrogram::from_tensor(t, -3.0, 2.0);
    EXPECT_EQ(m.at(1, 0), 4.0);
    EXPECT_TRUE(m.normalized);
    EXPECT_THROW(MelSpectrogram::from_tensor(Tensor::zeros({2, 2, 2}), 0, 1), ShapeError);
}
