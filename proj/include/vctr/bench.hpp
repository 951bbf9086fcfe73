#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vctr/mel.hpp"

namespace vctr {

struct BenchOptions {
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t channels = 64;
    std::size_t heads = 4;
    std::optional<std::size_t> n_s;  // default floor(sqrt(H))
    std::size_t trials = 5;
    std::size_t warmup = 1;
    std::uint64_t seed = 0;
};

struct BenchResult {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::size_t heads = 0;
    std::size_t n_s = 0;
    std::size_t trials = 0;
    std::uint64_t dense_macs = 0;         // attention term, dense
    std::uint64_t dpsa_macs = 0;          // attention term, pruned
    std::uint64_t dpsa_scoring_macs = 0;  // row/column scoring overhead
    double dense_ms = 0.0;                // medians over trials
    double dpsa_ms = 0.0;
    // Largest |dense - dpsa| output difference; only filled when n_s
    // covers the whole grid, otherwise NaN.
    double max_abs_diff = 0.0;

    double mac_ratio() const;
    double time_ratio() const;
    bool operator==(const BenchResult&) const;
};

// Times dense and pruned attention on identical random tokens and fills in
// the closed-form MAC counts.
BenchResult bench_attention(const BenchOptions& opts);

std::string bench_csv_header();
std::string bench_csv_row(const BenchResult& r);
std::string bench_csv(const std::vector<BenchResult>& rows);
// Parses text produced by bench_csv. Throws FormatError on malformed input.
std::vector<BenchResult> parse_bench_csv(const std::string& text);

// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

// Per-band means followed by per-band standard deviations.
std::vector<double> spectral_embedding(const MelSpectrogram& mel);

struct Similarity {
    double score = 0.0;
    std::string warning;  // set when an embedding has zero norm
};

// Cosine of the two spectral embeddings; 0 with a warning if either is zero.
Similarity spectral_similarity(const MelSpectrogram& a, const MelSpectrogram& b);

}  // namespace vctr
