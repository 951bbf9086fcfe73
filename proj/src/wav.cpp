#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "vctr/mel.hpp"

namespace vctr {

FormatError::FormatError(const std::string& what, std::size_t offset)
    : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), detail_(what), offset_(offset) {}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

struct Reader {
    std::span<const std::uint8_t> bytes;

    void need(std::size_t pos, std::size_t n, const char* what) const {
        if (pos + n > bytes.size()) throw FormatError(std::string("truncated ") + what, pos);
    }
    std::uint16_t u16(std::size_t pos) const {
        need(pos, 2, "field");
        return static_cast<std::uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
    }
    std::uint32_t u32(std::size_t pos) const {
        need(pos, 4, "field");
        return std::uint32_t{bytes[pos]} | (std::uint32_t{bytes[pos + 1]} << 8) |
               (std::uint32_t{bytes[pos + 2]} << 16) | (std::uint32_t{bytes[pos + 3]} << 24);
    }
    bool tag(std::size_t pos, const char* t) const {
        need(pos, 4, "chunk id");
        return std::memcmp(bytes.data() + pos, t, 4) == 0;
    }
};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::vector<std::uint8_t> wav_header(std::uint16_t format, std::uint16_t bits, std::size_t frames,
                                     std::uint32_t rate) {
    const std::uint32_t block = bits / 8;
    const auto data_bytes = static_cast<std::uint32_t>(frames * block);
    std::vector<std::uint8_t> out;
    out.reserve(44 + data_bytes);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    put_u32(out, 36 + data_bytes);
    out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    put_u32(out, 16);
    put_u16(out, format);
    put_u16(out, 1);
    put_u32(out, rate);
    put_u32(out, rate * block);
    put_u16(out, static_cast<std::uint16_t>(block));
    put_u16(out, bits);
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    put_u32(out, data_bytes);
    return out;
}

}  // namespace

WavData parse_wav(std::span<const std::uint8_t> bytes) {
    const Reader r{bytes};
    if (!r.tag(0, "RIFF")) throw FormatError("missing RIFF magic", 0);
    if (!r.tag(8, "WAVE")) throw FormatError("missing WAVE form type", 8);

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t size = r.u32(pos + 4);
        const std::size_t body = pos + 8;
        if (r.tag(pos, "fmt ")) {
            if (size < 16) throw FormatError("fmt chunk too small", pos + 4);
            r.need(body, size, "fmt chunk");
            format = r.u16(body);
            channels = r.u16(body + 2);
            rate = r.u32(body + 4);
            bits = r.u16(body + 14);
            if (format == kFormatExtensible) {
                if (size < 40) throw FormatError("extensible fmt chunk too small", pos + 4);
                format = r.u16(body + 24);  // first two bytes of the sub-format GUID
            }
            if (channels == 0) throw FormatError("zero channels", body + 2);
            if (rate == 0) throw FormatError("zero sample rate", body + 4);
            have_fmt = true;
        } else if (r.tag(pos, "data")) {
            if (!have_fmt) throw FormatError("data chunk before fmt chunk", pos);
            const bool pcm16 = format == kFormatPcm && bits == 16;
            const bool float32 = format == kFormatFloat && bits == 32;
            if (!pcm16 && !float32)
                throw UnsupportedFormatError("unsupported WAV encoding: format tag " + std::to_string(format) + ", " +
                                             std::to_string(bits) + " bits (need PCM16 or float32)");
            const std::size_t block = std::size_t{channels} * (bits / 8);
            const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
            if (avail != size) throw FormatError("data chunk runs past end of file", pos + 4);
            const std::size_t frames = size / block;
            WavData out;
            out.sample_rate = rate;
            out.samples.resize(frames);
            for (std::size_t i = 0; i < frames; ++i) {
                const std::size_t p = body + i * block;
                if (pcm16) {
                    out.samples[i] = static_cast<std::int16_t>(r.u16(p)) / 32768.0;
                } else {
                    out.samples[i] = std::bit_cast<float>(r.u32(p));
                }
            }
            return out;
        }
        pos = body + size + (size & 1u);
    }
    if (!have_fmt) throw FormatError("no fmt chunk", pos);
    throw FormatError("no data chunk", pos);
}

WavData load_wav(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return parse_wav(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.detail(), e.offset());
    }
}

std::vector<std::uint8_t> encode_wav_pcm16(std::span<const double> samples, std::uint32_t sample_rate) {
    auto out = wav_header(kFormatPcm, 16, samples.size(), sample_rate);
    for (double s : samples) {
        const double q = std::clamp(std::nearbyint(s * 32768.0), -32768.0, 32767.0);
        put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    }
    return out;
}

std::vector<std::uint8_t> encode_wav_float32(std::span<const double> samples, std::uint32_t sample_rate) {
    auto out = wav_header(kFormatFloat, 32, samples.size(), sample_rate);
    for (double s : samples) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(s)));
    return out;
}

void write_wav_pcm16(const std::filesystem::path& path, std::span<const double> samples, std::uint32_t sample_rate) {
    write_file_bytes(path, encode_wav_pcm16(samples, sample_rate));
}

}  // namespace vctr
