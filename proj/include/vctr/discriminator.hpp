#pragma once

#include <vector>

#include "vctr/generator.hpp"
#include "vctr/nn.hpp"

namespace vctr {

struct DiscriminatorConfig {
    std::size_t in_channels = 1;
    std::size_t base_channels = 64;
    std::size_t n_layers = 3;
    bool instance_norm = true;
    PaddingMode padding = PaddingMode::zero;
    double negative_slope = 0.2;

    void validate() const;
};

// PatchGAN: n_layers stride-2 4x4 convs, one stride-1 4x4 conv at 8x width
// (capped), and a final stride-1 4x4 conv to one channel. LeakyReLU between
// layers, instance norm on all but the first and last. Emits raw logits.
class PatchDiscriminator {
public:
    PatchDiscriminator(const DiscriminatorConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& x) const;
    ParamList parameters() const;
    const DiscriminatorConfig& config() const { return cfg_; }

    // Input-pixel extent seen by one output logit.
    std::size_t receptive_field() const;
    Shape output_shape(std::size_t height, std::size_t width) const;

private:
    DiscriminatorConfig cfg_;
    std::vector<Conv2d> convs_;
    std::vector<InstanceNorm> norms_;  // parallel to convs_; empty entries skip
};

std::vector<ModuleCost> discriminator_cost(const DiscriminatorConfig& cfg, std::size_t height, std::size_t width);

}  // namespace vctr
