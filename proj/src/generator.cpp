#include "vctr/generator.hpp"

#include <algorithm>
#include <map>

#include "vctr/mac_counter.hpp"

namespace vctr {

void HpbConfig::validate() const {
    if (!enable_local && !enable_global) throw ConfigError("HPB needs at least one of the local/global branches");
    if (dwconv_kernel % 2 == 0) throw ConfigError("depthwise kernel must be odd");
    if (ffn_expansion == 0) throw ConfigError("ffn_expansion must be positive");
    attention.resolved_head_dim(channels);
}

HpbConfig GeneratorConfig::hpb() const {
    HpbConfig h;
    h.channels = bottleneck_channels();
    h.dwconv_kernel = dwconv_kernel;
    h.ffn_expansion = ffn_expansion;
    h.enable_local = enable_local;
    h.enable_global = enable_global;
    h.attention.num_heads = num_heads;
    h.attention.l2_normalize = l2_normalize;
    h.attention.n_s_override = n_s_override;
    h.padding = padding;
    return h;
}

void GeneratorConfig::validate() const {
    if (in_channels == 0 || base_channels == 0) throw ConfigError("generator channel counts must be positive");
    hpb().validate();
}

HybridPerceptionBlock::HybridPerceptionBlock(const HpbConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t c = cfg_.channels;
    if (cfg_.enable_local) local_ = DepthwiseConv2d(c, cfg_.dwconv_kernel, cfg_.padding, rng);
    if (cfg_.enable_global) global_ = DpsaParams(c, c, rng);
    mix_ = Conv2d(2 * c, c, 1, 1, 0, cfg_.padding, rng);
    ffn_in_ = Conv2d(c, cfg_.ffn_expansion * c, 1, 1, 0, cfg_.padding, rng);
    ffn_norm_ = InstanceNorm(cfg_.ffn_expansion * c, false);
    ffn_out_ = Conv2d(cfg_.ffn_expansion * c, c, 1, 1, 0, cfg_.padding, rng);
}

Tensor HybridPerceptionBlock::forward(const Tensor& x, DpsaProbe* probe) const {
    if (x.rank() != 3 || x.dim(0) != cfg_.channels)
        throw ShapeError("HPB expects [" + std::to_string(cfg_.channels) + " x H x W], got " + shape_string(x.shape()));
    const std::size_t h = x.dim(1), w = x.dim(2);

    Tensor local, global;
    if (cfg_.enable_local) {
        MacLabel label("hpb.local");
        local = local_(x);
    } else {
        local = Tensor::zeros(x.shape());
    }
    if (cfg_.enable_global) {
        TokenGrid grid{{h, w}, to_tokens(x)};
        global = from_tokens(dpsa_forward(grid, global_, cfg_.attention, probe).tokens, h, w);
    } else {
        global = Tensor::zeros(x.shape());
    }

    Tensor mixed;
    {
        MacLabel label("hpb.mix");
        mixed = add(x, mix_(concat_channels(local, global)));
    }
    MacLabel label("hpb.ffn");
    return add(mixed, ffn_out_(gelu(ffn_norm_(ffn_in_(mixed)))));
}

void HybridPerceptionBlock::collect(ParamList& out, const std::string& prefix) const {
    if (cfg_.enable_local) local_.collect(out, prefix + ".local");
    if (cfg_.enable_global) global_.collect(out, prefix + ".global");
    mix_.collect(out, prefix + ".mix");
    ffn_in_.collect(out, prefix + ".ffn_in");
    ffn_norm_.collect(out, prefix + ".ffn_norm");
    ffn_out_.collect(out, prefix + ".ffn_out");
}

Generator::Generator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t b = cfg_.base_channels;
    const PaddingMode pad = cfg_.padding;
    stem_[0] = Conv2d(cfg_.in_channels, b, 7, 1, 3, pad, rng);
    stem_[1] = Conv2d(b, 2 * b, 3, 2, 1, pad, rng);
    stem_[2] = Conv2d(2 * b, 4 * b, 3, 2, 1, pad, rng);
    for (std::size_t i = 0; i < 3; ++i) stem_norm_[i] = InstanceNorm(stem_[i].out_channels(), false);
    const HpbConfig hpb = cfg_.hpb();
    blocks_.reserve(cfg_.n_hpb);
    for (std::size_t i = 0; i < cfg_.n_hpb; ++i) blocks_.emplace_back(hpb, rng);
    up_[0] = Conv2d(4 * b, 2 * b, 3, 1, 1, pad, rng);
    up_[1] = Conv2d(2 * b, b, 3, 1, 1, pad, rng);
    for (std::size_t i = 0; i < 2; ++i) up_norm_[i] = InstanceNorm(up_[i].out_channels(), false);
    head_ = Conv2d(b, cfg_.in_channels, 7, 1, 3, pad, rng);
}

void Generator::check_input(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(0) != cfg_.in_channels)
        throw ShapeError("generator expects [" + std::to_string(cfg_.in_channels) + " x H x W], got " +
                         shape_string(x.shape()));
    if (x.dim(1) % 4 != 0 || x.dim(2) % 4 != 0 || x.dim(1) == 0 || x.dim(2) == 0)
        throw ConfigError("generator input " + shape_string(x.shape()) +
                          ": height and width must be positive multiples of 4; crop or pad the input first");
}

std::size_t Generator::encoder_channels(std::size_t layer_id) const {
    if (layer_id >= num_encoder_layers())
        throw ConfigError("encoder layer " + std::to_string(layer_id) + " out of range [0, " +
                          std::to_string(num_encoder_layers() - 1) + "]");
    if (layer_id == 0) return cfg_.in_channels;
    if (layer_id <= 2) return cfg_.base_channels;
    if (layer_id <= 4) return 2 * cfg_.base_channels;
    return cfg_.bottleneck_channels();
}

Tensor Generator::run(const Tensor& x, std::span<const std::size_t> layer_ids, std::vector<Tensor>* taps,
                      bool decode) const {
    check_input(x);
    for (std::size_t id : layer_ids)
        if (id >= num_encoder_layers())
            throw ConfigError("encoder layer " + std::to_string(id) + " out of range [0, " +
                              std::to_string(num_encoder_layers() - 1) + "]");
    ++forward_count_;

    std::map<std::size_t, Tensor> captured;
    const std::size_t deepest = layer_ids.empty() ? 0 : *std::max_element(layer_ids.begin(), layer_ids.end());
    auto tap = [&](std::size_t id, const Tensor& t) {
        if (std::find(layer_ids.begin(), layer_ids.end(), id) != layer_ids.end()) captured[id] = t;
        return !decode && id >= deepest;
    };
    auto collect = [&]() {
        if (!taps) return;
        taps->clear();
        for (std::size_t id : layer_ids) taps->push_back(captured.at(id));
    };

    Tensor h = x;
    std::size_t id = 0;
    bool done = tap(id++, h);
    {
        MacLabel label("stem");
        for (std::size_t i = 0; i < 3 && !done; ++i) {
            h = stem_[i](h);
            done = tap(id++, h);
            if (done) break;
            h = gelu(cfg_.stem_norm ? stem_norm_[i](h) : h);
            done = tap(id++, h);
        }
    }
    for (std::size_t i = 0; i < blocks_.size() && !done; ++i) {
        h = blocks_[i].forward(h);
        done = tap(id++, h);
    }
    if (!decode) {
        collect();
        return h;
    }

    MacLabel label("decoder");
    for (std::size_t i = 0; i < 2; ++i) h = gelu(up_norm_[i](up_[i](upsample_nearest2x(h))));
    h = head_(h);
    if (cfg_.output == OutputActivation::tanh) h = vctr::tanh(h);
    collect();
    return h;
}

Tensor Generator::forward(const Tensor& x) const { return run(x, {}, nullptr, true); }

Tensor Generator::forward_with_taps(const Tensor& x, std::span<const std::size_t> layer_ids,
                                    std::vector<Tensor>& taps) const {
    return run(x, layer_ids, &taps, true);
}

std::vector<Tensor> Generator::encode(const Tensor& x, std::span<const std::size_t> layer_ids) const {
    std::vector<Tensor> taps;
    run(x, layer_ids, &taps, false);
    return taps;
}

ParamList Generator::parameters() const {
    ParamList out;
    for (std::size_t i = 0; i < 3; ++i) {
        stem_[i].collect(out, "stem." + std::to_string(i) + ".conv");
        stem_norm_[i].collect(out, "stem." + std::to_string(i) + ".norm");
    }
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, "hpb." + std::to_string(i));
    for (std::size_t i = 0; i < 2; ++i) {
        up_[i].collect(out, "decoder." + std::to_string(i) + ".conv");
        up_norm_[i].collect(out, "decoder." + std::to_string(i) + ".norm");
    }
    head_.collect(out, "decoder.head");
    return out;
}

std::vector<ModuleCost> generator_cost(const GeneratorConfig& cfg, std::size_t height, std::size_t width) {
    cfg.validate();
    using u64 = std::uint64_t;
    const u64 b = cfg.base_channels, in = cfg.in_channels;
    const u64 hw = u64{height} * width;
    const u64 hw2 = u64{height / 2} * (width / 2);
    const u64 hw4 = u64{height / 4} * (width / 4);
    const u64 c = 4 * b, e = cfg.ffn_expansion * c, k2 = u64{cfg.dwconv_kernel} * cfg.dwconv_kernel;
    const u64 blocks = cfg.n_hpb;

    auto conv_params = [](u64 cin, u64 cout, u64 k) { return cout * cin * k * k + cout; };

    std::vector<ModuleCost> out;
    out.push_back({"stem", conv_params(in, b, 7) + conv_params(b, 2 * b, 3) + conv_params(2 * b, 4 * b, 3),
                   b * hw * in * 49 + 2 * b * hw2 * b * 9 + 4 * b * hw4 * 2 * b * 9});
    if (cfg.enable_local) out.push_back({"hpb.local", blocks * (c * k2 + c), blocks * c * hw4 * k2});
    if (cfg.enable_global) {
        const GridShape grid{height / 4, width / 4};
        const std::size_t n_s = cfg.n_s_override.value_or(default_prune_count(grid));
        const AttentionMacs am = count_attention_macs(grid.height, grid.width, c, cfg.num_heads, n_s);
        out.push_back({"dpsa.proj", blocks * 4 * (c * c + c), blocks * 4 * hw4 * c * c});
        if (cfg.l2_normalize) out.push_back({"dpsa.l2norm", 0, blocks * 2 * hw4 * c});
        out.push_back({"dpsa.attention", 0, blocks * am.dpsa_total()});
    }
    out.push_back({"hpb.mix", blocks * conv_params(2 * c, c, 1), blocks * hw4 * 2 * c * c});
    out.push_back({"hpb.ffn", blocks * (conv_params(c, e, 1) + conv_params(e, c, 1)), blocks * 2 * hw4 * c * e});
    out.push_back({"decoder", conv_params(4 * b, 2 * b, 3) + conv_params(2 * b, b, 3) + conv_params(b, in, 7),
                   2 * b * hw2 * 4 * b * 9 + b * hw * 2 * b * 9 + in * hw * b * 49});
    return out;
}

}  // namespace vctr
