#include "vctr/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include <fmt/format.h>

#include "vctr/dpsa.hpp"

namespace vctr {

double BenchResult::mac_ratio() const {
    return dense_macs ? static_cast<double>(dpsa_macs) / static_cast<double>(dense_macs) : 0.0;
}

double BenchResult::time_ratio() const { return dpsa_ms > 0.0 ? dense_ms / dpsa_ms : 0.0; }

bool BenchResult::operator==(const BenchResult& o) const {
    auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
    return height == o.height && width == o.width && channels == o.channels && heads == o.heads && n_s == o.n_s &&
           trials == o.trials && dense_macs == o.dense_macs && dpsa_macs == o.dpsa_macs &&
           dpsa_scoring_macs == o.dpsa_scoring_macs && same(dense_ms, o.dense_ms) && same(dpsa_ms, o.dpsa_ms) &&
           same(max_abs_diff, o.max_abs_diff);
}

namespace {

template <class F>
double median_ms(F&& f, std::size_t warmup, std::size_t trials) {
    for (std::size_t i = 0; i < warmup; ++i) f();
    std::vector<double> ms;
    for (std::size_t i = 0; i < trials; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    const std::size_t n = ms.size();
    return n % 2 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);
}

}  // namespace

BenchResult bench_attention(const BenchOptions& opts) {
    if (!opts.height || !opts.width || !opts.channels || !opts.heads || !opts.trials)
        throw ConfigError("bench dimensions and trial count must be positive");
    if (opts.channels % opts.heads) throw ConfigError("channels must be divisible by heads");
    const GridShape grid{opts.height, opts.width};
    Rng rng(opts.seed);
    DpsaParams params(opts.channels, opts.channels, rng);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(grid.tokens() * opts.channels);
    for (double& x : v) x = n(rng);
    const TokenGrid input{grid, Tensor::from_data({grid.tokens(), opts.channels}, std::move(v))};

    AttentionHeadConfig cfg;
    cfg.num_heads = opts.heads;
    cfg.n_s_override = opts.n_s;
    const std::size_t ns = opts.n_s.value_or(default_prune_count(grid));

    BenchResult r;
    r.height = opts.height;
    r.width = opts.width;
    r.channels = opts.channels;
    r.heads = opts.heads;
    r.n_s = ns;
    r.trials = opts.trials;
    const AttentionMacs macs = count_attention_macs(opts.height, opts.width, opts.channels, opts.heads, ns);
    r.dense_macs = macs.dense;
    r.dpsa_macs = macs.dpsa_attention;
    r.dpsa_scoring_macs = macs.dpsa_scoring;

    NoGradScope no_grad;
    TokenGrid dense_out, dpsa_out;
    r.dense_ms = median_ms([&] { dense_out = dense_attention_forward(input, params, cfg); }, opts.warmup, opts.trials);
    r.dpsa_ms = median_ms([&] { dpsa_out = dpsa_forward(input, params, cfg); }, opts.warmup, opts.trials);
    r.max_abs_diff = std::numeric_limits<double>::quiet_NaN();
    if (ns == std::min(opts.height, opts.width) && opts.height == opts.width) {
        r.max_abs_diff = 0.0;
        for (std::size_t i = 0; i < dense_out.tokens.numel(); ++i)
            r.max_abs_diff = std::max(r.max_abs_diff, std::abs(dense_out.tokens.at(i) - dpsa_out.tokens.at(i)));
    }
    return r;
}

std::string bench_csv_header() {
    return "height,width,channels,heads,n_s,trials,dense_macs,dpsa_macs,dpsa_scoring_macs,mac_ratio,dense_ms,dpsa_ms,"
           "speedup,max_abs_diff";
}

std::string bench_csv_row(const BenchResult& r) {
    return fmt::format("{},{},{},{},{},{},{},{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}", r.height, r.width,
                       r.channels, r.heads, r.n_s, r.trials, r.dense_macs, r.dpsa_macs, r.dpsa_scoring_macs,
                       r.mac_ratio(), r.dense_ms, r.dpsa_ms, r.time_ratio(), r.max_abs_diff);
}

std::string bench_csv(const std::vector<BenchResult>& rows) {
    std::string out = bench_csv_header() + "\n";
    for (const auto& r : rows) out += bench_csv_row(r) + "\n";
    return out;
}

namespace {

template <class T>
T parse_field(const std::string& s, std::size_t offset) {
    T v{};
    if constexpr (std::is_floating_point_v<T>) {
        if (s == "nan" || s == "-nan") return std::numeric_limits<T>::quiet_NaN();
        if (s == "inf") return std::numeric_limits<T>::infinity();
    }
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) throw FormatError("bad CSV field '" + s + "'", offset);
    return v;
}

}  // namespace

std::vector<BenchResult> parse_bench_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t offset = 0;
    if (!std::getline(in, line) || line != bench_csv_header()) throw FormatError("missing bench CSV header", 0);
    offset += line.size() + 1;
    std::vector<BenchResult> rows;
    while (std::getline(in, line)) {
        if (line.empty()) {
            offset += 1;
            continue;
        }
        std::vector<std::string> f;
        std::vector<std::size_t> at;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                f.push_back(line.substr(start, i - start));
                at.push_back(offset + start);
                start = i + 1;
            }
        }
        if (f.size() != 14) throw FormatError("expected 14 CSV fields, got " + std::to_string(f.size()), offset);
        BenchResult r;
        r.height = parse_field<std::size_t>(f[0], at[0]);
        r.width = parse_field<std::size_t>(f[1], at[1]);
        r.channels = parse_field<std::size_t>(f[2], at[2]);
        r.heads = parse_field<std::size_t>(f[3], at[3]);
        r.n_s = parse_field<std::size_t>(f[4], at[4]);
        r.trials = parse_field<std::size_t>(f[5], at[5]);
        r.dense_macs = parse_field<std::uint64_t>(f[6], at[6]);
        r.dpsa_macs = parse_field<std::uint64_t>(f[7], at[7]);
        r.dpsa_scoring_macs = parse_field<std::uint64_t>(f[8], at[8]);
        r.dense_ms = parse_field<double>(f[10], at[10]);
        r.dpsa_ms = parse_field<double>(f[11], at[11]);
        r.max_abs_diff = parse_field<double>(f[13], at[13]);
        rows.push_back(r);
        offset += line.size() + 1;
    }
    return rows;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw ConfigError("slope fit needs at least two matching points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(x.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

std::vector<double> spectral_embedding(const MelSpectrogram& mel) {
    std::vector<double> e(2 * mel.bands, 0.0);
    if (mel.frames == 0) return e;
    const double n = static_cast<double>(mel.frames);
    for (std::size_t b = 0; b < mel.bands; ++b) {
        double m = 0.0;
        for (std::size_t t = 0; t < mel.frames; ++t) m += mel.at(b, t);
        m /= n;
        double var = 0.0;
        for (std::size_t t = 0; t < mel.frames; ++t) var += (mel.at(b, t) - m) * (mel.at(b, t) - m);
        e[b] = m;
        e[mel.bands + b] = std::sqrt(var / n);
    }
    return e;
}

Similarity spectral_similarity(const MelSpectrogram& a, const MelSpectrogram& b) {
    if (a.bands != b.bands)
        throw ShapeError("similarity needs equal band counts, got " + std::to_string(a.bands) + " and " +
                         std::to_string(b.bands));
    const auto ea = spectral_embedding(a);
    const auto eb = spectral_embedding(b);
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < ea.size(); ++i) {
        dot += ea[i] * eb[i];
        na += ea[i] * ea[i];
        nb += eb[i] * eb[i];
    }
    Similarity s;
    if (na == 0.0 || nb == 0.0) {
        s.warning = "zero-norm embedding; similarity defined as 0";
        return s;
    }
    s.score = std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
    return s;
}

}  // namespace vctr
