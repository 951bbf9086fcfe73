#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vctr/tensor.hpp"

// Differentiable operations. Feature maps are unbatched [C x H x W]; token
// matrices are [N x C] with row i holding token i.

namespace vctr {

enum class PaddingMode { reflection, replication, zero };

const char* padding_mode_name(PaddingMode mode);
PaddingMode parse_padding_mode(const std::string& name);

// Maps coordinate `i` of an axis of length `n` into [0, n), or returns -1
// when the position reads zero padding.
long pad_index(long i, long n, PaddingMode mode);

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

// Elementwise. Binary ops require identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor tanh(const Tensor& x);
// Exact x * Phi(x), not the tanh approximation.
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double negative_slope);
// log(1 + e^x), evaluated without overflow.
Tensor softplus(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose2d(const Tensor& x);

// [M x K] * [K x P]
Tensor matmul(const Tensor& a, const Tensor& b);
// x[N x in] * w[in x out] + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor softmax_rows(const Tensor& x);
// Rows scaled to unit Euclidean norm; an all-zero row stays zero.
Tensor l2_normalize_rows(const Tensor& x);
// Mean over rows of -log softmax(logits[r])[targets[r]].
Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> targets);

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
// Concatenates along the leading axis; trailing dims must agree.
Tensor concat_channels(const Tensor& a, const Tensor& b);

// [C x H x W] <-> [H*W x C], token order row-major over the grid.
Tensor to_tokens(const Tensor& x);
Tensor from_tokens(const Tensor& tokens, std::size_t height, std::size_t width);

Tensor upsample_nearest2x(const Tensor& x);

// Cross-correlation of x[Cin x H x W] with w[Cout x Cin x kh x kw].
// Output spatial size is floor((H + 2*pad - kh) / stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t pad,
              PaddingMode mode);
// One kernel per channel: w is [C x 1 x kh x kw]; no cross-channel mixing.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                        std::size_t pad, PaddingMode mode);
// Per-channel standardisation over H*W with optional affine gamma/beta [C].
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

}  // namespace vctr
