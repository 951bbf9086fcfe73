#include "vctr/dpsa.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vctr/kernels.hpp"
#include "vctr/mac_counter.hpp"
#include "vctr/ops.hpp"

namespace vctr {

std::size_t AttentionHeadConfig::resolved_head_dim(std::size_t channels) const {
    if (num_heads == 0) throw ConfigError("attention needs at least one head");
    const std::size_t d = head_dim != 0 ? head_dim : channels / num_heads;
    if (d == 0 || num_heads * d != channels)
        throw ConfigError("num_heads (" + std::to_string(num_heads) + ") x head_dim (" + std::to_string(d) +
                          ") must equal channels (" + std::to_string(channels) + ")");
    return d;
}

std::size_t default_prune_count(GridShape grid) {
    auto n = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(grid.height))));
    while ((n + 1) * (n + 1) <= grid.height) ++n;
    while (n * n > grid.height) --n;
    return std::clamp<std::size_t>(n, 1, std::max<std::size_t>(1, std::min(grid.height, grid.width)));
}

TokenScores score_tokens(const Tensor& q, const Tensor& k, GridShape grid) {
    if (q.rank() != 2 || k.rank() != 2 || q.shape() != k.shape())
        throw ShapeError("score_tokens: q " + shape_string(q.shape()) + " and k " + shape_string(k.shape()) +
                         " must be matching [N x D]");
    const std::size_t n = q.dim(0), d = q.dim(1);
    if (n != grid.tokens())
        throw ShapeError("score_tokens: " + std::to_string(n) + " tokens for a " + std::to_string(grid.height) + "x" +
                         std::to_string(grid.width) + " grid");
    const double* qp = q.data().data();
    const double* kp = k.data().data();

    std::vector<double> q_sum(d, 0.0);
    std::vector<double> row_sum(grid.height * d, 0.0);
    std::vector<double> col_sum(grid.width * d, 0.0);
    for (std::size_t i = 0; i < n; ++i) kernels::axpy(1.0, qp + i * d, q_sum.data(), d);
    for (std::size_t r = 0; r < grid.height; ++r)
        for (std::size_t c = 0; c < grid.width; ++c) {
            const double* kt = kp + grid.flat(r, c) * d;
            kernels::axpy(1.0, kt, row_sum.data() + r * d, d);
            kernels::axpy(1.0, kt, col_sum.data() + c * d, d);
        }

    TokenScores s;
    s.rows.resize(grid.height);
    s.cols.resize(grid.width);
    for (std::size_t r = 0; r < grid.height; ++r) s.rows[r] = kernels::dot(q_sum.data(), row_sum.data() + r * d, d);
    for (std::size_t c = 0; c < grid.width; ++c) s.cols[c] = kernels::dot(q_sum.data(), col_sum.data() + c * d, d);
    MacRecorder::add(static_cast<std::uint64_t>(3 * n + grid.height + grid.width) * d);
    return s;
}

std::vector<std::size_t> top_indices(std::span<const double> scores, std::size_t n) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(std::min(n, order.size()));
    return order;
}

std::vector<std::size_t> intersection_tokens(GridShape grid, std::span<const std::size_t> index_r,
                                             std::span<const std::size_t> index_c) {
    std::vector<std::size_t> rows(index_r.begin(), index_r.end());
    std::vector<std::size_t> cols(index_c.begin(), index_c.end());
    std::sort(rows.begin(), rows.end());
    std::sort(cols.begin(), cols.end());
    std::vector<std::size_t> out;
    out.reserve(rows.size() * cols.size());
    for (std::size_t r : rows)
        for (std::size_t c : cols) out.push_back(grid.flat(r, c));
    return out;
}

namespace {

PrunedTokens gather_selection(const Tensor& k, const Tensor& v, GridShape grid, PruneSelection selection) {
    const auto idx = intersection_tokens(grid, selection.index_r, selection.index_c);
    return {gather_rows(k, idx), gather_rows(v, idx), std::move(selection)};
}

}  // namespace

PrunedTokens prune_tokens(const Tensor& k, const Tensor& v, GridShape grid, const TokenScores& scores,
                          std::size_t n_s) {
    if (n_s < 1 || n_s > std::min(grid.height, grid.width))
        throw ConfigError("n_s = " + std::to_string(n_s) + " outside [1, " +
                          std::to_string(std::min(grid.height, grid.width)) + "]");
    if (k.rank() != 2 || k.shape() != v.shape() || k.dim(0) != grid.tokens())
        throw ShapeError("prune_tokens: k " + shape_string(k.shape()) + " / v " + shape_string(v.shape()) +
                         " do not match the grid");
    if (scores.rows.size() != grid.height || scores.cols.size() != grid.width)
        throw ShapeError("prune_tokens: score vectors do not match the grid");
    PruneSelection sel;
    sel.row_scores = scores.rows;
    sel.col_scores = scores.cols;
    sel.index_r = top_indices(scores.rows, n_s);
    sel.index_c = top_indices(scores.cols, n_s);
    sel.n_s = n_s;
    return gather_selection(k, v, grid, std::move(sel));
}

DpsaParams::DpsaParams(std::size_t channels, std::size_t inner, Rng& rng)
    : query(channels, inner, rng), key(channels, inner, rng), value(channels, inner, rng), output(inner, channels, rng) {}

void DpsaParams::collect(ParamList& out, const std::string& prefix) const {
    query.collect(out, prefix + ".query");
    key.collect(out, prefix + ".key");
    value.collect(out, prefix + ".value");
    output.collect(out, prefix + ".output");
}

namespace {

struct Projected {
    Tensor q, k, v;
    std::size_t heads, head_dim;
};

Projected project(const TokenGrid& input, const DpsaParams& params, const AttentionHeadConfig& cfg) {
    if (input.tokens.rank() != 2 || input.tokens.dim(0) != input.grid.tokens())
        throw ShapeError("attention input " + shape_string(input.tokens.shape()) + " does not match its grid");
    const std::size_t inner = params.query.weight.dim(1);
    const std::size_t d = cfg.resolved_head_dim(inner);
    MacLabel label("dpsa.proj");
    return {params.query(input.tokens), params.key(input.tokens), params.value(input.tokens), cfg.num_heads, d};
}

Tensor head_slice(const Tensor& x, std::size_t h, std::size_t d) { return slice_cols(x, h * d, d); }

TokenGrid finish(const TokenGrid& input, const DpsaParams& params, const std::vector<Tensor>& heads) {
    MacLabel label("dpsa.proj");
    Tensor merged = heads.size() == 1 ? heads.front() : concat_cols(heads);
    return {input.grid, params.output(merged)};
}

}  // namespace

TokenGrid dpsa_forward(const TokenGrid& input, const DpsaParams& params, const AttentionHeadConfig& cfg,
                       DpsaProbe* probe) {
    const Projected p = project(input, params, cfg);
    const GridShape grid = input.grid;
    const std::size_t n_s = cfg.n_s_override.value_or(default_prune_count(grid));
    if (probe && probe->frozen && probe->frozen->size() != p.heads)
        throw ConfigError("frozen selection has " + std::to_string(probe->frozen->size()) + " heads, expected " +
                          std::to_string(p.heads));

    std::vector<Tensor> heads;
    heads.reserve(p.heads);
    for (std::size_t h = 0; h < p.heads; ++h) {
        Tensor q = head_slice(p.q, h, p.head_dim);
        Tensor k = head_slice(p.k, h, p.head_dim);
        Tensor v = head_slice(p.v, h, p.head_dim);
        if (cfg.l2_normalize) {
            MacLabel label("dpsa.l2norm");
            q = l2_normalize_rows(q);
            k = l2_normalize_rows(k);
        }
        MacLabel label("dpsa.attention");
        PrunedTokens pruned;
        if (probe && probe->frozen) {
            pruned = gather_selection(k, v, grid, (*probe->frozen)[h]);
        } else {
            pruned = prune_tokens(k, v, grid, score_tokens(q, k, grid), n_s);
        }
        Tensor logits = matmul(q, transpose2d(pruned.keys));
        if (probe) {
            probe->logits.insert(probe->logits.end(), logits.data().begin(), logits.data().end());
            probe->selections.push_back(pruned.selection);
        }
        heads.push_back(matmul(softmax_rows(logits), pruned.values));
    }
    return finish(input, params, heads);
}

TokenGrid dense_attention_forward(const TokenGrid& input, const DpsaParams& params, const AttentionHeadConfig& cfg) {
    const Projected p = project(input, params, cfg);
    std::vector<Tensor> heads;
    for (std::size_t h = 0; h < p.heads; ++h) {
        Tensor q = head_slice(p.q, h, p.head_dim);
        Tensor k = head_slice(p.k, h, p.head_dim);
        Tensor v = head_slice(p.v, h, p.head_dim);
        if (cfg.l2_normalize) {
            MacLabel label("dpsa.l2norm");
            q = l2_normalize_rows(q);
            k = l2_normalize_rows(k);
        }
        MacLabel label("dense.attention");
        heads.push_back(matmul(softmax_rows(matmul(q, transpose2d(k))), v));
    }
    return finish(input, params, heads);
}

AttentionMacs count_attention_macs(std::size_t height, std::size_t width, std::size_t channels,
                                   std::size_t num_heads, std::size_t n_s) {
    if (height == 0 || width == 0 || channels == 0 || num_heads == 0 || n_s == 0)
        throw ConfigError("count_attention_macs: dimensions must be positive");
    if (channels % num_heads != 0) throw ConfigError("count_attention_macs: channels not divisible by heads");
    const std::uint64_t n = static_cast<std::uint64_t>(height) * width;
    const std::uint64_t c = channels;
    const std::uint64_t kept = static_cast<std::uint64_t>(n_s) * n_s;
    AttentionMacs m;
    m.dense = 2 * n * n * c;
    m.dpsa_attention = 2 * n * kept * c;
    m.dpsa_scoring = (3 * n + height + width) * c;
    return m;
}

}  // namespace vctr
