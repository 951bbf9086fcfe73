#include "vctr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vctr/kernels.hpp"
#include "vctr/mac_counter.hpp"

namespace vctr {

using NodePtr = std::shared_ptr<detail::Node>;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
    if (x.rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(x.shape()));
}

// Shared implementation for y = f(x) with dy/dx = g(x, y).
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd f, Deriv df) {
    std::vector<double> out(x.numel());
    const auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
    NodePtr xn = x.node();
    return detail::make_result(x.shape(), std::move(out), {&x}, [xn, df](const detail::Node& o) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * df(xn->data[i], o.data[i]);
    });
}

void accumulate(const NodePtr& n, std::span<const double> delta, double factor = 1.0) {
    if (!n->requires_grad) return;
    auto& g = n->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * delta[i];
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

const char* padding_mode_name(PaddingMode mode) {
    switch (mode) {
        case PaddingMode::reflection:
            return "reflection";
        case PaddingMode::replication:
            return "replication";
        case PaddingMode::zero:
            return "zero";
    }
    return "?";
}

PaddingMode parse_padding_mode(const std::string& name) {
    if (name == "reflection") return PaddingMode::reflection;
    if (name == "replication") return PaddingMode::replication;
    if (name == "zero") return PaddingMode::zero;
    throw ConfigError("unknown padding mode '" + name + "' (expected reflection, replication or zero)");
}

long pad_index(long i, long n, PaddingMode mode) {
    if (i >= 0 && i < n) return i;
    switch (mode) {
        case PaddingMode::zero:
            return -1;
        case PaddingMode::replication:
            return std::clamp(i, 0L, n - 1);
        case PaddingMode::reflection: {
            if (n == 1) return 0;
            const long period = 2 * (n - 1);
            long r = i % period;
            if (r < 0) r += period;
            return r < n ? r : period - r;
        }
    }
    return -1;
}

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
    if (stride == 0) throw ConfigError("convolution stride must be positive");
    if (in + 2 * pad < kernel)
        throw ConfigError("kernel " + std::to_string(kernel) + " larger than padded input " +
                          std::to_string(in + 2 * pad));
    return (in + 2 * pad - kernel) / stride + 1;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    NodePtr an = a.node(), bn = b.node();
    return detail::make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](const detail::Node& o) {
        accumulate(an, o.grad);
        accumulate(bn, o.grad);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    NodePtr an = a.node(), bn = b.node();
    return detail::make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](const detail::Node& o) {
        accumulate(an, o.grad);
        accumulate(bn, o.grad, -1.0);
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    NodePtr an = a.node(), bn = b.node();
    return detail::make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](const detail::Node& o) {
        if (an->requires_grad) {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * an->data[i];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    return unary(a, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
    return unary(a, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor tanh(const Tensor& x) {
    return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& x) {
    return unary(
        x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
        [](double v, double) {
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            return cdf + v * pdf;
        });
}

Tensor relu(const Tensor& x) {
    return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double negative_slope) {
    return unary(
        x, [negative_slope](double v) { return v > 0.0 ? v : negative_slope * v; },
        [negative_slope](double v, double) { return v > 0.0 ? 1.0 : negative_slope; });
}

Tensor softplus(const Tensor& x) {
    return unary(
        x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
        [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    NodePtr xn = x.node();
    return detail::make_result({1}, {s}, {&x}, [xn](const detail::Node& o) {
        if (!xn->requires_grad) return;
        for (double& g : xn->ensure_grad()) g += o.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw ShapeError("mean of an empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
    NodePtr xn = x.node();
    return detail::make_result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()), {&x},
                               [xn](const detail::Node& o) { accumulate(xn, o.grad); });
}

Tensor transpose2d(const Tensor& x) {
    require_rank(x, 2, "transpose2d");
    const std::size_t r = x.dim(0), c = x.dim(1);
    std::vector<double> out(x.numel());
    const auto in = x.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
    NodePtr xn = x.node();
    return detail::make_result({c, r}, std::move(out), {&x}, [xn, r, c](const detail::Node& o) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: dimension mismatch " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
    std::vector<double> out(m * p);
    kernels::gemm(false, false, m, p, k, a.data().data(), k, b.data().data(), p, out.data(), p, false);
    MacRecorder::add(static_cast<std::uint64_t>(m) * k * p);
    NodePtr an = a.node(), bn = b.node();
    return detail::make_result({m, p}, std::move(out), {&a, &b}, [an, bn, m, k, p](const detail::Node& o) {
        if (an->requires_grad)
            kernels::gemm(false, true, m, k, p, o.grad.data(), p, bn->data.data(), p, an->ensure_grad().data(), k,
                          true);
        if (bn->requires_grad)
            kernels::gemm(true, false, k, p, m, an->data.data(), k, o.grad.data(), p, bn->ensure_grad().data(), p,
                          true);
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0))
        throw ShapeError("linear: dimension mismatch " + shape_string(x.shape()) + " x " + shape_string(w.shape()));
    const std::size_t n = x.dim(0), in = x.dim(1), outd = w.dim(1);
    if (bias.defined() && bias.numel() != outd)
        throw ShapeError("linear: bias " + shape_string(bias.shape()) + " for " + std::to_string(outd) + " outputs");
    std::vector<double> out(n * outd);
    if (bias.defined()) {
        for (std::size_t i = 0; i < n; ++i) std::copy(bias.data().begin(), bias.data().end(), out.begin() + i * outd);
    }
    kernels::gemm(false, false, n, outd, in, x.data().data(), in, w.data().data(), outd, out.data(), outd,
                  bias.defined());
    MacRecorder::add(static_cast<std::uint64_t>(n) * in * outd);
    NodePtr xn = x.node(), wn = w.node(), bn = bias.defined() ? bias.node() : nullptr;
    std::vector<Tensor> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    return detail::make_result({n, outd}, std::move(out), inputs, [xn, wn, bn, n, in, outd](const detail::Node& o) {
        if (xn->requires_grad)
            kernels::gemm(false, true, n, in, outd, o.grad.data(), outd, wn->data.data(), outd,
                          xn->ensure_grad().data(), in, true);
        if (wn->requires_grad)
            kernels::gemm(true, false, in, outd, n, xn->data.data(), in, o.grad.data(), outd,
                          wn->ensure_grad().data(), outd, true);
        if (bn && bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < outd; ++j) g[j] += o.grad[i * outd + j];
        }
    });
}

Tensor softmax_rows(const Tensor& x) {
    require_rank(x, 2, "softmax_rows");
    const std::size_t r = x.dim(0), c = x.dim(1);
    std::vector<double> out(x.numel());
    const auto in = x.data();
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = in.data() + i * c;
        double* dst = out.data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += (dst[j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < c; ++j) dst[j] /= z;
    }
    NodePtr xn = x.node();
    return detail::make_result(x.shape(), std::move(out), {&x}, [xn, r, c](const detail::Node& o) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            const double* y = o.data.data() + i * c;
            const double* dy = o.grad.data() + i * c;
            const double inner = kernels::dot(y, dy, c);
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[j] * (dy[j] - inner);
        }
    });
}

Tensor l2_normalize_rows(const Tensor& x) {
    require_rank(x, 2, "l2_normalize_rows");
    const std::size_t r = x.dim(0), c = x.dim(1);
    std::vector<double> out(x.numel());
    std::vector<double> norms(r);
    const auto in = x.data();
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = in.data() + i * c;
        norms[i] = std::sqrt(kernels::dot(row, row, c));
        const double inv = norms[i] > 0.0 ? 1.0 / norms[i] : 0.0;
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] * inv;
    }
    MacRecorder::add(static_cast<std::uint64_t>(r) * c);
    NodePtr xn = x.node();
    return detail::make_result(x.shape(), std::move(out), {&x},
                               [xn, r, c, norms = std::move(norms)](const detail::Node& o) {
                                   if (!xn->requires_grad) return;
                                   auto& g = xn->ensure_grad();
                                   for (std::size_t i = 0; i < r; ++i) {
                                       if (norms[i] == 0.0) continue;
                                       const double* y = o.data.data() + i * c;
                                       const double* dy = o.grad.data() + i * c;
                                       const double inner = kernels::dot(y, dy, c);
                                       for (std::size_t j = 0; j < c; ++j)
                                           g[i * c + j] += (dy[j] - y[j] * inner) / norms[i];
                                   }
                               });
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> targets) {
    require_rank(logits, 2, "cross_entropy_rows");
    const std::size_t r = logits.dim(0), c = logits.dim(1);
    if (targets.size() != r) throw ShapeError("cross_entropy_rows: one target per row required");
    std::vector<double> probs(logits.numel());
    double loss = 0.0;
    const auto in = logits.data();
    for (std::size_t i = 0; i < r; ++i) {
        if (targets[i] >= c) throw ShapeError("cross_entropy_rows: target index out of range");
        const double* row = in.data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += (probs[i * c + j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
        loss += (mx + std::log(z)) - row[targets[i]];
    }
    loss /= static_cast<double>(r);
    NodePtr ln = logits.node();
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    return detail::make_result(
        {1}, {loss}, {&logits}, [ln, r, c, probs = std::move(probs), tgt = std::move(tgt)](const detail::Node& o) {
            if (!ln->requires_grad) return;
            auto& g = ln->ensure_grad();
            const double s = o.grad[0] / static_cast<double>(r);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    g[i * c + j] += s * (probs[i * c + j] - (j == tgt[i] ? 1.0 : 0.0));
        });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    require_rank(x, 2, "gather_rows");
    const std::size_t c = x.dim(1);
    std::vector<double> out(rows.size() * c);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= x.dim(0)) throw ShapeError("gather_rows: row index out of range");
        std::copy_n(x.data().begin() + rows[i] * c, c, out.begin() + i * c);
    }
    NodePtr xn = x.node();
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return detail::make_result({rows.size(), c}, std::move(out), {&x},
                               [xn, c, idx = std::move(idx)](const detail::Node& o) {
                                   if (!xn->requires_grad) return;
                                   auto& g = xn->ensure_grad();
                                   for (std::size_t i = 0; i < idx.size(); ++i)
                                       for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += o.grad[i * c + j];
                               });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
    require_rank(x, 2, "slice_cols");
    const std::size_t r = x.dim(0), c = x.dim(1);
    if (start + count > c) throw ShapeError("slice_cols: range exceeds " + shape_string(x.shape()));
    std::vector<double> out(r * count);
    for (std::size_t i = 0; i < r; ++i) std::copy_n(x.data().begin() + i * c + start, count, out.begin() + i * count);
    NodePtr xn = x.node();
    return detail::make_result({r, count}, std::move(out), {&x}, [xn, r, c, start, count](const detail::Node& o) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < count; ++j) g[i * c + start + j] += o.grad[i * count + j];
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t r = parts.front().dim(0);
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_cols");
        if (p.dim(0) != r) throw ShapeError("concat_cols: row count mismatch");
        total += p.dim(1);
    }
    std::vector<double> out(r * total);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t c = p.dim(1);
        for (std::size_t i = 0; i < r; ++i) std::copy_n(p.data().begin() + i * c, c, out.begin() + i * total + offset);
        offset += c;
    }
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    return detail::make_result({r, total}, std::move(out), parts, [nodes, r, total](const detail::Node& o) {
        std::size_t off = 0;
        for (const auto& n : nodes) {
            const std::size_t c = n->shape[1];
            if (n->requires_grad) {
                auto& g = n->ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[i * total + off + j];
            }
            off += c;
        }
    });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank() || a.rank() == 0 ||
        !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1))
        throw ShapeError("concat_channels: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    Shape shape = a.shape();
    shape[0] += b.dim(0);
    std::vector<double> out;
    out.reserve(a.numel() + b.numel());
    out.insert(out.end(), a.data().begin(), a.data().end());
    out.insert(out.end(), b.data().begin(), b.data().end());
    NodePtr an = a.node(), bn = b.node();
    const std::size_t na = a.numel();
    return detail::make_result(std::move(shape), std::move(out), {&a, &b}, [an, bn, na](const detail::Node& o) {
        accumulate(an, std::span<const double>(o.grad).first(na));
        accumulate(bn, std::span<const double>(o.grad).subspan(na));
    });
}

Tensor to_tokens(const Tensor& x) {
    require_rank(x, 3, "to_tokens");
    return transpose2d(reshape(x, {x.dim(0), x.dim(1) * x.dim(2)}));
}

Tensor from_tokens(const Tensor& tokens, std::size_t height, std::size_t width) {
    require_rank(tokens, 2, "from_tokens");
    if (tokens.dim(0) != height * width)
        throw ShapeError("from_tokens: " + std::to_string(tokens.dim(0)) + " tokens for a " + std::to_string(height) +
                         "x" + std::to_string(width) + " grid");
    return reshape(transpose2d(tokens), {tokens.dim(1), height, width});
}

Tensor upsample_nearest2x(const Tensor& x) {
    require_rank(x, 3, "upsample_nearest2x");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t oh = 2 * h, ow = 2 * w;
    std::vector<double> out(c * oh * ow);
    const auto in = x.data();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx)
                out[(ch * oh + y) * ow + xx] = in[(ch * h + y / 2) * w + xx / 2];
    NodePtr xn = x.node();
    return detail::make_result({c, oh, ow}, std::move(out), {&x}, [xn, c, h, w, oh, ow](const detail::Node& o) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xx = 0; xx < ow; ++xx) g[(ch * h + y / 2) * w + xx / 2] += o.grad[(ch * oh + y) * ow + xx];
    });
}

}  // namespace vctr
