#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "vctr/losses.hpp"
#include "vctr/nn.hpp"
#include "vctr/tensor.hpp"

namespace vctr::test {

inline Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
    std::normal_distribution<double> n(0.0, stddev);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = n(rng);
    return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

inline Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = u(rng);
    return Tensor::from_data(std::move(shape), std::move(v));
}

inline std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
    return m;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

// Plain nested-loop cross-correlation used as an oracle for conv2d.
inline std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                                      std::size_t pad, PaddingMode mode) {
    const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
    std::vector<double> out(cout * oh * ow);
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double s = bias.defined() ? bias.at(o) : 0.0;
                for (std::size_t c = 0; c < cin; ++c)
                    for (std::size_t ky = 0; ky < kh; ++ky)
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const long iy = pad_index(static_cast<long>(oy * stride + ky) - static_cast<long>(pad),
                                                      static_cast<long>(h), mode);
                            const long ix = pad_index(static_cast<long>(ox * stride + kx) - static_cast<long>(pad),
                                                      static_cast<long>(wd), mode);
                            if (iy < 0 || ix < 0) continue;
                            s += w.at(((o * cin + c) * kh + ky) * kw + kx) * x.at((c * h + iy) * wd + ix);
                        }
                out[(o * oh + oy) * ow + ox] = s;
            }
    return out;
}

inline std::vector<double> reference_embed(const Tensor& feat, std::size_t loc, const ProjectionHead& head) {
    const std::size_t c = feat.dim(0), hw = feat.dim(1) * feat.dim(2);
    const std::size_t d1 = head.fc1.weight.dim(1), d2 = head.fc2.weight.dim(1);
    std::vector<double> hidden(d1), out(d2);
    for (std::size_t j = 0; j < d1; ++j) {
        double s = head.fc1.bias.at(j);
        for (std::size_t i = 0; i < c; ++i) s += feat.at(i * hw + loc) * head.fc1.weight.at(i * d1 + j);
        hidden[j] = std::max(s, 0.0);
    }
    double norm = 0.0;
    for (std::size_t j = 0; j < d2; ++j) {
        double s = head.fc2.bias.at(j);
        for (std::size_t i = 0; i < d1; ++i) s += hidden[i] * head.fc2.weight.at(i * d2 + j);
        out[j] = s;
        norm += s * s;
    }
    norm = std::sqrt(norm);
    for (double& v : out) v /= norm;
    return out;
}

// PatchNCE evaluated location by location with explicit loops.
inline double reference_patch_nce(const Tensor& src, const Tensor& out, const ProjectionHead& head, double tau,
                const std::vector<std::size_t>& locs) {
    const std::size_t s = locs.size();
    std::vector<std::vector<double>> k(s), q(s);
    for (std::size_t i = 0; i < s; ++i) {
        k[i] = reference_embed(src, locs[i], head);
        q[i] = reference_embed(out, locs[i], head);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < s; ++i) {
        std::vector<double> logits(s);
        for (std::size_t j = 0; j < s; ++j)
            logits[j] = std::inner_product(q[i].begin(), q[i].end(), k[j].begin(), 0.0) / tau;
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double l : logits) z += std::exp(l - mx);
        total += mx + std::log(z) - logits[i];
    }
    return total / static_cast<double>(s);
}

}  // namespace vctr::test
