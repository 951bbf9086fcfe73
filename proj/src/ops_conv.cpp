#include <algorithm>
#include <cmath>

#include "vctr/kernels.hpp"
#include "vctr/mac_counter.hpp"
#include "vctr/ops.hpp"

namespace vctr {

using NodePtr = std::shared_ptr<detail::Node>;

namespace {

// For every (kernel tap, output position) pair along one axis, the input
// coordinate it reads, or -1 for zero padding. Tap-major.
std::vector<long> tap_table(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                            std::size_t pad, PaddingMode mode) {
    std::vector<long> t(out * kernel);
    for (std::size_t o = 0; o < out; ++o)
        for (std::size_t k = 0; k < kernel; ++k)
            t[k * out + o] = pad_index(static_cast<long>(o * stride + k) - static_cast<long>(pad),
                                          static_cast<long>(in), mode);
    return t;
}

struct ConvGeometry {
    std::size_t channels, height, width;
    std::size_t kh, kw;
    std::size_t out_h, out_w;
    std::vector<long> rows, cols;

    ConvGeometry(const Shape& x, std::size_t kh_, std::size_t kw_, std::size_t stride, std::size_t pad,
                 PaddingMode mode)
        : channels(x[0]), height(x[1]), width(x[2]), kh(kh_), kw(kw_),
          out_h(conv_output_size(height, kh, stride, pad)), out_w(conv_output_size(width, kw, stride, pad)),
          rows(tap_table(height, out_h, kh, stride, pad, mode)), cols(tap_table(width, out_w, kw, stride, pad, mode)) {}

    std::size_t patch() const { return channels * kh * kw; }
    std::size_t positions() const { return out_h * out_w; }

    const long* row_taps(std::size_t ky) const { return rows.data() + ky * out_h; }
    const long* col_taps(std::size_t kx) const { return cols.data() + kx * out_w; }

    // Visits output positions [q0, q0 + n) one output row at a time:
    // f(oy, ox0, len, i) where i is the offset of the run within the block.
    template <class F>
    void runs(std::size_t q0, std::size_t n, F&& f) const {
        std::size_t oy = q0 / out_w, ox = q0 % out_w, i = 0;
        while (i < n) {
            const std::size_t len = std::min(out_w - ox, n - i);
            f(oy, ox, len, i);
            i += len;
            ox = 0;
            ++oy;
        }
    }

    // Columns for output positions [q0, q0 + n), stored
    // out[(c*kh + ky)*kw + kx][q - q0].
    void im2col(const double* x, std::size_t q0, std::size_t n, double* out) const {
        for (std::size_t c = 0; c < channels; ++c) {
            const double* plane = x + c * height * width;
            for (std::size_t ky = 0; ky < kh; ++ky)
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    double* dst = out + ((c * kh + ky) * kw + kx) * n;
                    const long* ry = row_taps(ky);
                    const long* cx = col_taps(kx);
                    runs(q0, n, [&](std::size_t oy, std::size_t ox, std::size_t len, std::size_t i) {
                        const long iy = ry[oy];
                        if (iy < 0) {
                            std::fill_n(dst + i, len, 0.0);
                            return;
                        }
                        const double* src = plane + iy * width;
                        for (std::size_t j = 0; j < len; ++j) {
                            const long ix = cx[ox + j];
                            dst[i + j] = ix < 0 ? 0.0 : src[ix];
                        }
                    });
                }
        }
    }

    void col2im(const double* in, std::size_t q0, std::size_t n, double* dx) const {
        for (std::size_t c = 0; c < channels; ++c) {
            double* plane = dx + c * height * width;
            for (std::size_t ky = 0; ky < kh; ++ky)
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const double* src = in + ((c * kh + ky) * kw + kx) * n;
                    const long* ry = row_taps(ky);
                    const long* cx = col_taps(kx);
                    runs(q0, n, [&](std::size_t oy, std::size_t ox, std::size_t len, std::size_t i) {
                        const long iy = ry[oy];
                        if (iy < 0) return;
                        double* dst = plane + iy * width;
                        for (std::size_t j = 0; j < len; ++j) {
                            const long ix = cx[ox + j];
                            if (ix >= 0) dst[ix] += src[i + j];
                        }
                    });
                }
        }
    }

    // f(c, ky, kx, tap, oy, src_row, col_taps) for every in-bounds row of
    // every tap, where tap = (c*kh + ky)*kw + kx.
    template <class F>
    void for_each_tap_row(const double* x, F&& f) const {
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t ky = 0; ky < kh; ++ky)
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const std::size_t tap = (c * kh + ky) * kw + kx;
                    for (std::size_t oy = 0; oy < out_h; ++oy) {
                        const long iy = row_taps(ky)[oy];
                        if (iy >= 0) f(c, tap, oy, x + (c * height + iy) * width, col_taps(kx));
                    }
                }
    }

    // Output positions per im2col block, sized so a block of columns stays
    // around 256 KiB.
    std::size_t block() const {
        const std::size_t target = std::max<std::size_t>(64, (std::size_t{32} << 10) / patch());
        return std::min(positions(), (target + 7) / 8 * 8);
    }
};

// Output channel count at or below which conv2d skips im2col.
constexpr std::size_t kDirectMaxOut = 2;

// Per-thread scratch that only grows; contents are not cleared.
double* scratch(std::size_t slot, std::size_t n) {
    thread_local std::vector<double> buffers[2];
    auto& b = buffers[slot];
    if (b.size() < n) b.resize(n);
    return b.data();
}

}  // namespace

namespace {

void check_bias(const Tensor& bias, std::size_t channels, const char* op) {
    if (bias.defined() && bias.numel() != channels)
        throw ShapeError(std::string(op) + ": bias " + shape_string(bias.shape()) + " for " +
                         std::to_string(channels) + " channels");
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t pad,
              PaddingMode mode) {
    if (x.rank() != 3 || w.rank() != 4 || w.dim(1) != x.dim(0))
        throw ShapeError("conv2d: input " + shape_string(x.shape()) + " incompatible with kernel " +
                         shape_string(w.shape()));
    const std::size_t cout = w.dim(0);
    check_bias(bias, cout, "conv2d");
    auto geo = std::make_shared<ConvGeometry>(x.shape(), w.dim(2), w.dim(3), stride, pad, mode);
    const std::size_t hw = geo->positions(), patch = geo->patch();
    const bool pointwise = geo->kh == 1 && geo->kw == 1 && stride == 1 && pad == 0;
    const bool direct = !pointwise && cout <= kDirectMaxOut;

    std::vector<double> out(cout * hw, 0.0);
    if (bias.defined())
        for (std::size_t o = 0; o < cout; ++o) std::fill_n(out.begin() + o * hw, hw, bias.data()[o]);
    if (direct) {
        const double* wd = w.data().data();
        const std::size_t ow = geo->out_w;
        geo->for_each_tap_row(x.data().data(), [&](std::size_t, std::size_t tap, std::size_t oy, const double* src,
                                                   const long* cx) {
            for (std::size_t o = 0; o < cout; ++o) {
                const double k = wd[o * patch + tap];
                double* row = out.data() + o * hw + oy * ow;
                for (std::size_t ox = 0; ox < ow; ++ox)
                    if (cx[ox] >= 0) row[ox] += k * src[cx[ox]];
            }
        });
    } else if (pointwise) {
        kernels::gemm(false, false, cout, hw, patch, w.data().data(), patch, x.data().data(), hw, out.data(), hw, true);
    } else {
        const std::size_t blk = geo->block();
        double* cols = scratch(0, patch * blk);
        for (std::size_t q0 = 0; q0 < hw; q0 += blk) {
            const std::size_t n = std::min(blk, hw - q0);
            geo->im2col(x.data().data(), q0, n, cols);
            kernels::gemm(false, false, cout, n, patch, w.data().data(), patch, cols, n, out.data() + q0, hw, true);
        }
    }
    MacRecorder::add(static_cast<std::uint64_t>(cout) * hw * patch);

    NodePtr xn = x.node(), wn = w.node(), bn = bias.defined() ? bias.node() : nullptr;
    std::vector<Tensor> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    return detail::make_result(
        {cout, geo->out_h, geo->out_w}, std::move(out), inputs,
        [xn, wn, bn, geo, cout, hw, patch, pointwise, direct](const detail::Node& o) {
            const double* dy = o.grad.data();
            if (bn && bn->requires_grad) {
                auto& g = bn->ensure_grad();
                for (std::size_t c = 0; c < cout; ++c)
                    for (std::size_t i = 0; i < hw; ++i) g[c] += dy[c * hw + i];
            }
            const bool need_w = wn->requires_grad, need_x = xn->requires_grad;
            if (direct) {
                double* dw = need_w ? wn->ensure_grad().data() : nullptr;
                double* dx = need_x ? xn->ensure_grad().data() : nullptr;
                const double* xd = xn->data.data();
                const std::size_t ow = geo->out_w;
                geo->for_each_tap_row(xd, [&](std::size_t, std::size_t tap, std::size_t oy, const double* src,
                                              const long* cx) {
                    double* drow = dx ? dx + (src - xd) : nullptr;
                    for (std::size_t c = 0; c < cout; ++c) {
                        const double* g = dy + c * hw + oy * ow;
                        const double k = wn->data[c * patch + tap];
                        double acc = 0.0;
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const long ix = cx[ox];
                            if (ix < 0) continue;
                            acc += g[ox] * src[ix];
                            if (drow) drow[ix] += g[ox] * k;
                        }
                        if (dw) dw[c * patch + tap] += acc;
                    }
                });
                return;
            }
            if (pointwise) {
                if (need_w)
                    kernels::gemm(false, true, cout, patch, hw, dy, hw, xn->data.data(), hw, wn->ensure_grad().data(),
                                  patch, true);
                if (need_x)
                    kernels::gemm(true, false, patch, hw, cout, wn->data.data(), patch, dy, hw,
                                  xn->ensure_grad().data(), hw, true);
                return;
            }
            const std::size_t blk = geo->block();
            double* cols = scratch(0, patch * blk);
            double* dcols = scratch(1, patch * blk);
            double* dw = need_w ? wn->ensure_grad().data() : nullptr;
            double* dx = need_x ? xn->ensure_grad().data() : nullptr;
            for (std::size_t q0 = 0; q0 < hw; q0 += blk) {
                const std::size_t n = std::min(blk, hw - q0);
                if (need_w) {
                    geo->im2col(xn->data.data(), q0, n, cols);
                    kernels::gemm(false, true, cout, patch, n, dy + q0, hw, cols, n, dw, patch, true);
                }
                if (need_x) {
                    kernels::gemm(true, false, patch, n, cout, wn->data.data(), patch, dy + q0, hw, dcols, n, false);
                    geo->col2im(dcols, q0, n, dx);
                }
            }
        });
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t pad,
                        PaddingMode mode) {
    if (x.rank() != 3 || w.rank() != 4 || w.dim(0) != x.dim(0) || w.dim(1) != 1)
        throw ShapeError("depthwise_conv2d: input " + shape_string(x.shape()) + " incompatible with kernel " +
                         shape_string(w.shape()));
    const std::size_t channels = x.dim(0);
    check_bias(bias, channels, "depthwise_conv2d");
    auto geo = std::make_shared<ConvGeometry>(x.shape(), w.dim(2), w.dim(3), stride, pad, mode);
    const std::size_t kh = geo->kh, kw = geo->kw, oh = geo->out_h, ow = geo->out_w;
    const std::size_t h = geo->height, wd = geo->width;

    std::vector<double> out(channels * oh * ow);
    const auto xin = x.data();
    const auto win = w.data();
    for (std::size_t c = 0; c < channels; ++c) {
        const double* plane = xin.data() + c * h * wd;
        const double* kern = win.data() + c * kh * kw;
        double* dst = out.data() + c * oh * ow;
        std::fill_n(dst, oh * ow, bias.defined() ? bias.data()[c] : 0.0);
        for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
                const double k = kern[ky * kw + kx];
                const long* cx = geo->col_taps(kx);
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const long iy = geo->row_taps(ky)[oy];
                    if (iy < 0) continue;
                    const double* src = plane + iy * wd;
                    double* row = dst + oy * ow;
                    for (std::size_t ox = 0; ox < ow; ++ox)
                        if (cx[ox] >= 0) row[ox] += k * src[cx[ox]];
                }
            }
    }
    MacRecorder::add(static_cast<std::uint64_t>(channels) * oh * ow * kh * kw);

    NodePtr xn = x.node(), wn = w.node(), bn = bias.defined() ? bias.node() : nullptr;
    std::vector<Tensor> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    return detail::make_result({channels, oh, ow}, std::move(out), inputs, [xn, wn, bn, geo](const detail::Node& o) {
        const std::size_t channels = geo->channels, kh = geo->kh, kw = geo->kw;
        const std::size_t oh = geo->out_h, ow = geo->out_w, h = geo->height, wd = geo->width;
        double* dx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
        double* dw = wn->requires_grad ? wn->ensure_grad().data() : nullptr;
        double* db = (bn && bn->requires_grad) ? bn->ensure_grad().data() : nullptr;
        for (std::size_t c = 0; c < channels; ++c) {
            const double* plane = xn->data.data() + c * h * wd;
            const double* kern = wn->data.data() + c * kh * kw;
            const double* g = o.grad.data() + c * oh * ow;
            if (db)
                for (std::size_t i = 0; i < oh * ow; ++i) db[c] += g[i];
            for (std::size_t ky = 0; ky < kh; ++ky)
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const double k = kern[ky * kw + kx];
                    const long* cx = geo->col_taps(kx);
                    double acc = 0.0;
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const long iy = geo->row_taps(ky)[oy];
                        if (iy < 0) continue;
                        const double* grow = g + oy * ow;
                        const double* src = plane + iy * wd;
                        double* drow = dx ? dx + c * h * wd + iy * wd : nullptr;
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const long ix = cx[ox];
                            if (ix < 0) continue;
                            acc += grow[ox] * src[ix];
                            if (drow) drow[ix] += grow[ox] * k;
                        }
                    }
                    if (dw) dw[c * kh * kw + ky * kw + kx] += acc;
                }
        }
    });
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() != 3) throw ShapeError("instance_norm: expected [C x H x W], got " + shape_string(x.shape()));
    const std::size_t channels = x.dim(0), m = x.dim(1) * x.dim(2);
    if (m == 0) throw ShapeError("instance_norm: empty spatial extent");
    if ((gamma.defined() && gamma.numel() != channels) || (beta.defined() && beta.numel() != channels))
        throw ShapeError("instance_norm: affine parameters must have one entry per channel");

    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(channels);
    std::vector<double> out(x.numel());
    const auto in = x.data();
    for (std::size_t c = 0; c < channels; ++c) {
        const double* src = in.data() + c * m;
        double mu = 0.0;
        for (std::size_t i = 0; i < m; ++i) mu += src[i];
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t i = 0; i < m; ++i) var += (src[i] - mu) * (src[i] - mu);
        var /= static_cast<double>(m);
        inv_std[c] = 1.0 / std::sqrt(var + eps);
        const double g = gamma.defined() ? gamma.data()[c] : 1.0;
        const double b = beta.defined() ? beta.data()[c] : 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            xhat[c * m + i] = (src[i] - mu) * inv_std[c];
            out[c * m + i] = g * xhat[c * m + i] + b;
        }
    }

    NodePtr xn = x.node(), gn = gamma.defined() ? gamma.node() : nullptr, bn = beta.defined() ? beta.node() : nullptr;
    std::vector<Tensor> inputs{x};
    if (gamma.defined()) inputs.push_back(gamma);
    if (beta.defined()) inputs.push_back(beta);
    return detail::make_result(
        x.shape(), std::move(out), inputs,
        [xn, gn, bn, channels, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](const detail::Node& o) {
            const double fm = static_cast<double>(m);
            for (std::size_t c = 0; c < channels; ++c) {
                const double* dy = o.grad.data() + c * m;
                const double* xh = xhat.data() + c * m;
                double sum_dy = 0.0, sum_dy_xh = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    sum_dy += dy[i];
                    sum_dy_xh += dy[i] * xh[i];
                }
                if (gn && gn->requires_grad) gn->ensure_grad()[c] += sum_dy_xh;
                if (bn && bn->requires_grad) bn->ensure_grad()[c] += sum_dy;
                if (xn->requires_grad) {
                    const double g = gn ? gn->data[c] : 1.0;
                    auto& dx = xn->ensure_grad();
                    const double k = g * inv_std[c] / fm;
                    for (std::size_t i = 0; i < m; ++i)
                        dx[c * m + i] += k * (fm * dy[i] - sum_dy - xh[i] * sum_dy_xh);
                }
            }
        });
}

}  // namespace vctr
