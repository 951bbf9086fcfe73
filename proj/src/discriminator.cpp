#include "vctr/discriminator.hpp"

#include <algorithm>

#include "vctr/mac_counter.hpp"

namespace vctr {

namespace {

constexpr std::size_t kKernel = 4;
constexpr std::size_t kPad = 1;

struct LayerSpec {
    std::size_t in, out, stride;
    bool norm;
};

std::vector<LayerSpec> layer_specs(const DiscriminatorConfig& cfg) {
    std::vector<LayerSpec> specs;
    const std::size_t b = cfg.base_channels;
    specs.push_back({cfg.in_channels, b, 2, false});
    std::size_t mult = 1;
    for (std::size_t n = 1; n < cfg.n_layers; ++n) {
        const std::size_t prev = mult;
        mult = std::min<std::size_t>(std::size_t{1} << n, 8);
        specs.push_back({b * prev, b * mult, 2, cfg.instance_norm});
    }
    const std::size_t prev = mult;
    mult = std::min<std::size_t>(std::size_t{1} << cfg.n_layers, 8);
    specs.push_back({b * prev, b * mult, 1, cfg.instance_norm});
    specs.push_back({b * mult, 1, 1, false});
    return specs;
}

}  // namespace

void DiscriminatorConfig::validate() const {
    if (in_channels == 0 || base_channels == 0) throw ConfigError("discriminator channel counts must be positive");
    if (n_layers == 0) throw ConfigError("discriminator needs at least one stride-2 layer");
}

PatchDiscriminator::PatchDiscriminator(const DiscriminatorConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    for (const auto& s : layer_specs(cfg_)) {
        convs_.emplace_back(s.in, s.out, kKernel, s.stride, kPad, cfg_.padding, rng);
        norms_.push_back(s.norm ? InstanceNorm(s.out, false) : InstanceNorm());
    }
}

Tensor PatchDiscriminator::forward(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(0) != cfg_.in_channels)
        throw ShapeError("discriminator expects [" + std::to_string(cfg_.in_channels) + " x H x W], got " +
                         shape_string(x.shape()));
    MacLabel label("discriminator");
    const auto specs = layer_specs(cfg_);
    Tensor h = x;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        h = convs_[i](h);
        if (i + 1 == convs_.size()) break;
        if (specs[i].norm) h = norms_[i](h);
        h = leaky_relu(h, cfg_.negative_slope);
    }
    return h;
}

ParamList PatchDiscriminator::parameters() const {
    ParamList out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        convs_[i].collect(out, "disc." + std::to_string(i) + ".conv");
        norms_[i].collect(out, "disc." + std::to_string(i) + ".norm");
    }
    return out;
}

std::size_t PatchDiscriminator::receptive_field() const {
    std::size_t rf = 1;
    for (auto it = convs_.rbegin(); it != convs_.rend(); ++it) rf = (rf - 1) * it->stride + it->kernel();
    return rf;
}

Shape PatchDiscriminator::output_shape(std::size_t height, std::size_t width) const {
    for (const auto& c : convs_) {
        height = conv_output_size(height, c.kernel(), c.stride, c.pad);
        width = conv_output_size(width, c.kernel(), c.stride, c.pad);
    }
    return {1, height, width};
}

std::vector<ModuleCost> discriminator_cost(const DiscriminatorConfig& cfg, std::size_t height, std::size_t width) {
    cfg.validate();
    ModuleCost cost{"discriminator", 0, 0};
    for (const auto& s : layer_specs(cfg)) {
        height = conv_output_size(height, kKernel, s.stride, kPad);
        width = conv_output_size(width, kKernel, s.stride, kPad);
        cost.params += s.out * s.in * kKernel * kKernel + s.out;
        cost.macs += std::uint64_t{s.out} * height * width * s.in * kKernel * kKernel;
    }
    return {cost};
}

}  // namespace vctr
