#pragma once

// Dual pruned self-attention.
//
// Keys are grouped by token-grid row and column. Each row (column) is scored
// by the total affinity between every query and the keys in that row
// (column), which factors into one dot product against the summed queries:
//
//     row_score[r] = (sum_i q_i) . (sum_j k[r, j])
//     col_score[c] = (sum_i q_i) . (sum_j k[j, c])
//
// The top n_s rows and top n_s columns are kept and attention runs over the
// n_s x n_s keys/values at their intersection, with no 1/sqrt(d) factor.
// Rows of Q and K are L2-normalised first, so every logit lies in [-1, 1].
// With n_s = sqrt(H) this leaves H keys per query: O(N*H*C) instead of
// O(N^2*C).

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "vctr/nn.hpp"
#include "vctr/tensor.hpp"

namespace vctr {

struct GridShape {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t tokens() const { return height * width; }
    // Grid (r, c) <-> flat token index r * width + c.
    std::size_t flat(std::size_t r, std::size_t c) const { return r * width + c; }
};

struct TokenGrid {
    GridShape grid;
    Tensor tokens;  // [N x C]
    std::size_t dim() const { return tokens.dim(1); }
};

struct TokenScores {
    std::vector<double> rows;  // [H]
    std::vector<double> cols;  // [W]
};

struct PruneSelection {
    std::vector<double> row_scores;
    std::vector<double> col_scores;
    std::vector<std::size_t> index_r;  // best first
    std::vector<std::size_t> index_c;
    std::size_t n_s = 0;
};

struct AttentionHeadConfig {
    std::size_t num_heads = 4;
    std::size_t head_dim = 0;  // 0: channels / num_heads
    std::optional<std::size_t> n_s_override;
    bool l2_normalize = true;

    std::size_t resolved_head_dim(std::size_t channels) const;
};

// floor(sqrt(H)), clamped to [1, min(H, W)].
std::size_t default_prune_count(GridShape grid);

// Factored row/column scores; q and k are [N x D] with N = H * W.
TokenScores score_tokens(const Tensor& q, const Tensor& k, GridShape grid);

// Indices of the n largest scores, best first; ties go to the lower index.
std::vector<std::size_t> top_indices(std::span<const double> scores, std::size_t n);

// Flat token indices of the selected rows x selected columns, ascending.
std::vector<std::size_t> intersection_tokens(GridShape grid, std::span<const std::size_t> index_r,
                                             std::span<const std::size_t> index_c);

struct PrunedTokens {
    Tensor keys;    // [n_s^2 x D]
    Tensor values;  // [n_s^2 x D]
    PruneSelection selection;
};

PrunedTokens prune_tokens(const Tensor& k, const Tensor& v, GridShape grid, const TokenScores& scores,
                          std::size_t n_s);

struct DpsaParams {
    Linear query;
    Linear key;
    Linear value;
    Linear output;

    DpsaParams() = default;
    DpsaParams(std::size_t channels, std::size_t inner, Rng& rng);
    void collect(ParamList& out, const std::string& prefix) const;
};

// Optional instrumentation. `logits` receives every pre-softmax entry and
// `selections` one PruneSelection per head. When `frozen` is set its index
// sets replace the computed ones (used to hold the selection fixed while
// probing gradients by finite differences).
struct DpsaProbe {
    std::vector<double> logits;
    std::vector<PruneSelection> selections;
    const std::vector<PruneSelection>* frozen = nullptr;
};

TokenGrid dpsa_forward(const TokenGrid& input, const DpsaParams& params, const AttentionHeadConfig& cfg,
                       DpsaProbe* probe = nullptr);

// Same projections and head layout, attending over every token.
TokenGrid dense_attention_forward(const TokenGrid& input, const DpsaParams& params, const AttentionHeadConfig& cfg);

struct AttentionMacs {
    std::uint64_t dense = 0;           // 2 N^2 C
    std::uint64_t dpsa_attention = 0;  // 2 N n_s^2 C
    std::uint64_t dpsa_scoring = 0;    // 3 N C sums + (H + W) C dot products
    std::uint64_t dpsa_total() const { return dpsa_attention + dpsa_scoring; }
};

AttentionMacs count_attention_macs(std::size_t height, std::size_t width, std::size_t channels,
                                   std::size_t num_heads, std::size_t n_s);

}  // namespace vctr
