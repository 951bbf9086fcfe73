#include "vctr/nn.hpp"

namespace vctr {

std::size_t count_parameters(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
}

void zero_grads(const ParamList& params) {
    for (const auto& p : params) {
        Tensor t = p.tensor;
        t.zero_grad();
    }
}

Tensor normal_param(Shape shape, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = dist(rng);
    return Tensor::from_data(std::move(shape), std::move(data), true);
}

Tensor constant_param(Shape shape, double value) { return Tensor::full(std::move(shape), value, true); }

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, std::size_t pad_,
               PaddingMode mode_, Rng& rng)
    : weight(normal_param({out, in, kernel, kernel}, kInitStd, rng)),
      bias(constant_param({out}, 0.0)),
      stride(stride_),
      pad(pad_),
      mode(mode_) {}

void Conv2d::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

DepthwiseConv2d::DepthwiseConv2d(std::size_t channels, std::size_t kernel, PaddingMode mode_, Rng& rng)
    : weight(normal_param({channels, 1, kernel, kernel}, kInitStd, rng)),
      bias(constant_param({channels}, 0.0)),
      stride(1),
      pad(kernel / 2),
      mode(mode_) {}

void DepthwiseConv2d::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

InstanceNorm::InstanceNorm(std::size_t channels, bool affine) {
    if (affine) {
        gamma = constant_param({channels}, 1.0);
        beta = constant_param({channels}, 0.0);
    }
}

void InstanceNorm::collect(ParamList& out, const std::string& prefix) const {
    if (gamma.defined()) out.push_back({prefix + ".gamma", gamma});
    if (beta.defined()) out.push_back({prefix + ".beta", beta});
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(normal_param({in, out}, kInitStd, rng)), bias(constant_param({out}, 0.0)) {}

void Linear::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

}  // namespace vctr
