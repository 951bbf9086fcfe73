#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vctr/dpsa.hpp"
#include "vctr/nn.hpp"

namespace vctr {

enum class OutputActivation { tanh, none };

struct HpbConfig {
    std::size_t channels = 256;
    std::size_t dwconv_kernel = 3;
    std::size_t ffn_expansion = 4;
    bool enable_local = true;
    bool enable_global = true;
    AttentionHeadConfig attention;
    PaddingMode padding = PaddingMode::reflection;

    void validate() const;
};

struct GeneratorConfig {
    std::size_t in_channels = 1;
    std::size_t base_channels = 64;
    std::size_t n_hpb = 9;
    std::size_t num_heads = 4;
    std::size_t dwconv_kernel = 3;
    std::size_t ffn_expansion = 4;
    bool enable_local = true;
    bool enable_global = true;
    bool l2_normalize = true;
    std::optional<std::size_t> n_s_override;
    // Instance norm after each stem conv. Switching it off leaves a purely
    // local stem, which is what receptive-field probes need.
    bool stem_norm = true;
    PaddingMode padding = PaddingMode::reflection;
    OutputActivation output = OutputActivation::tanh;

    std::size_t bottleneck_channels() const { return 4 * base_channels; }
    HpbConfig hpb() const;
    void validate() const;
};

// Local depthwise-conv branch and global pruned-attention branch, concatenated
// and fused by a 1x1 conv, followed by a conv feed-forward (1x1, instance
// norm, GELU, 1x1). Both stages are residual. A disabled branch contributes
// zeros so the fusion width never changes.
class HybridPerceptionBlock {
public:
    HybridPerceptionBlock(const HpbConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& x, DpsaProbe* probe = nullptr) const;
    void collect(ParamList& out, const std::string& prefix) const;
    const HpbConfig& config() const { return cfg_; }

private:
    HpbConfig cfg_;
    DepthwiseConv2d local_;
    DpsaParams global_;
    Conv2d mix_;
    Conv2d ffn_in_;
    InstanceNorm ffn_norm_;
    Conv2d ffn_out_;
};

// Encoder sublayer numbering used for feature taps:
//   0 input, 1 stem conv1, 2 stem norm+act1, 3 conv2, 4 norm+act2,
//   5 conv3, 6 norm+act3, 7.. HPB 1..n_hpb.
class Generator {
public:
    Generator(const GeneratorConfig& cfg, Rng& rng);

    const GeneratorConfig& config() const { return cfg_; }
    std::size_t num_encoder_layers() const { return 7 + cfg_.n_hpb; }
    std::size_t encoder_channels(std::size_t layer_id) const;

    Tensor forward(const Tensor& x) const;
    // Full forward that also returns the requested encoder activations.
    Tensor forward_with_taps(const Tensor& x, std::span<const std::size_t> layer_ids, std::vector<Tensor>& taps) const;
    // Encoder activations only; stops after the deepest requested layer.
    std::vector<Tensor> encode(const Tensor& x, std::span<const std::size_t> layer_ids) const;

    ParamList parameters() const;
    std::size_t forward_count() const { return forward_count_; }

    void check_input(const Tensor& x) const;

private:
    Tensor run(const Tensor& x, std::span<const std::size_t> layer_ids, std::vector<Tensor>* taps, bool decode) const;

    GeneratorConfig cfg_;
    Conv2d stem_[3];
    InstanceNorm stem_norm_[3];
    std::vector<HybridPerceptionBlock> blocks_;
    Conv2d up_[2];
    InstanceNorm up_norm_[2];
    Conv2d head_;
    mutable std::size_t forward_count_ = 0;
};

struct ModuleCost {
    std::string name;
    std::uint64_t params = 0;
    std::uint64_t macs = 0;
};

// Layer-by-layer closed-form parameter and MAC counts for an in_channels x
// height x width input, bucketed with the same labels the ops report to
// MacRecorder.
std::vector<ModuleCost> generator_cost(const GeneratorConfig& cfg, std::size_t height, std::size_t width);

}  // namespace vctr
