#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "vctr/ops.hpp"
#include "vctr/tensor.hpp"

namespace vctr {

using Rng = std::mt19937_64;

struct NamedParam {
    std::string name;
    Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

std::size_t count_parameters(const ParamList& params);
void zero_grads(const ParamList& params);

// Leaf tensor drawn from N(0, stddev^2), marked as requiring gradients.
Tensor normal_param(Shape shape, double stddev, Rng& rng);
Tensor constant_param(Shape shape, double value);

inline constexpr double kInitStd = 0.02;

struct Conv2d {
    Tensor weight;  // [out x in x k x k]
    Tensor bias;    // [out], may be undefined
    std::size_t stride = 1;
    std::size_t pad = 0;
    PaddingMode mode = PaddingMode::reflection;

    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad,
           PaddingMode mode, Rng& rng);

    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, pad, mode); }
    void collect(ParamList& out, const std::string& prefix) const;
    std::size_t in_channels() const { return weight.dim(1); }
    std::size_t out_channels() const { return weight.dim(0); }
    std::size_t kernel() const { return weight.dim(2); }
};

struct DepthwiseConv2d {
    Tensor weight;  // [C x 1 x k x k]
    Tensor bias;
    std::size_t stride = 1;
    std::size_t pad = 0;
    PaddingMode mode = PaddingMode::reflection;

    DepthwiseConv2d() = default;
    DepthwiseConv2d(std::size_t channels, std::size_t kernel, PaddingMode mode, Rng& rng);

    Tensor operator()(const Tensor& x) const { return depthwise_conv2d(x, weight, bias, stride, pad, mode); }
    void collect(ParamList& out, const std::string& prefix) const;
};

struct InstanceNorm {
    Tensor gamma;  // undefined when not affine
    Tensor beta;
    double eps = 1e-5;

    InstanceNorm() = default;
    InstanceNorm(std::size_t channels, bool affine);

    Tensor operator()(const Tensor& x) const { return instance_norm(x, gamma, beta, eps); }
    void collect(ParamList& out, const std::string& prefix) const;
};

struct Linear {
    Tensor weight;  // [in x out]
    Tensor bias;    // [out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng);

    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
    void collect(ParamList& out, const std::string& prefix) const;
};

}  // namespace vctr
