#include "vctr/losses.hpp"

#include <cmath>
#include <numeric>

#include "vctr/ops.hpp"

namespace vctr {

const char* gan_objective_name(GanObjective objective) {
    switch (objective) {
        case GanObjective::non_saturating:
            return "non_saturating";
        case GanObjective::minimax:
            return "minimax";
        case GanObjective::least_squares:
            return "least_squares";
    }
    return "?";
}

GanObjective parse_gan_objective(const std::string& name) {
    if (name == "non_saturating") return GanObjective::non_saturating;
    if (name == "minimax") return GanObjective::minimax;
    if (name == "least_squares") return GanObjective::least_squares;
    throw ConfigError("unknown GAN objective '" + name + "'");
}

namespace {
Tensor mean_square_from(const Tensor& x, double target) {
    Tensor d = add_scalar(x, -target);
    return mean(mul(d, d));
}
}  // namespace

Tensor gan_loss_d(const Tensor& real_logits, const Tensor& fake_logits, GanObjective objective) {
    if (objective == GanObjective::least_squares)
        return add(mean_square_from(real_logits, 1.0), mean_square_from(fake_logits, 0.0));
    // -log s(r) = softplus(-r);  -log(1 - s(f)) = softplus(f)
    return add(mean(softplus(scale(real_logits, -1.0))), mean(softplus(fake_logits)));
}

Tensor gan_loss_g(const Tensor& fake_logits, GanObjective objective) {
    switch (objective) {
        case GanObjective::non_saturating:
            return mean(softplus(scale(fake_logits, -1.0)));
        case GanObjective::minimax:
            return scale(mean(softplus(fake_logits)), -1.0);
        case GanObjective::least_squares:
            return mean_square_from(fake_logits, 1.0);
    }
    throw ConfigError("unknown GAN objective");
}

NceConfig NceConfig::identity_preset() {
    NceConfig c;
    c.lambda_x = 1.0;
    c.lambda_y = 1.0;
    return c;
}

NceConfig NceConfig::no_identity_preset() {
    NceConfig c;
    c.lambda_x = 10.0;
    c.lambda_y = 0.0;
    return c;
}

void NceConfig::validate() const {
    if (!(tau > 0.0)) throw ConfigError("PatchNCE temperature must be positive");
    if (num_patches < 2) throw ConfigError("PatchNCE needs at least 2 patches (one negative)");
    if (layer_ids.empty()) throw ConfigError("PatchNCE needs at least one layer");
    if (proj_dim == 0) throw ConfigError("projection dimension must be positive");
}

ProjectionHead::ProjectionHead(std::size_t in_channels, std::size_t dim, Rng& rng)
    : fc1(in_channels, dim, rng), fc2(dim, dim, rng) {}

Tensor ProjectionHead::operator()(const Tensor& patches) const { return l2_normalize_rows(fc2(relu(fc1(patches)))); }

void ProjectionHead::collect(ParamList& out, const std::string& prefix) const {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
}

ProjectionHeads::ProjectionHeads(std::span<const std::size_t> layer_channels, std::size_t dim, Rng& rng) {
    for (std::size_t c : layer_channels) heads_.emplace_back(c, dim, rng);
}

ParamList ProjectionHeads::parameters() const {
    ParamList out;
    for (std::size_t i = 0; i < heads_.size(); ++i) heads_[i].collect(out, "head." + std::to_string(i));
    return out;
}

std::vector<std::size_t> sample_locations(std::size_t available, std::size_t count, Rng& rng) {
    std::vector<std::size_t> idx(available);
    std::iota(idx.begin(), idx.end(), 0);
    if (available <= count) return idx;
    // Partial Fisher-Yates drawing straight from the engine.
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t span = available - i;
        const std::size_t j = i + static_cast<std::size_t>(rng() % span);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(count);
    return idx;
}

Tensor patch_nce_at(const Tensor& feat_src, const Tensor& feat_out, const ProjectionHead& head, double tau,
                    std::span<const std::size_t> locations, bool detach_keys) {
    if (feat_src.shape() != feat_out.shape() || feat_src.rank() != 3)
        throw ShapeError("PatchNCE features must be matching [C x H x W]: " + shape_string(feat_src.shape()) + " vs " +
                         shape_string(feat_out.shape()));
    if (locations.size() < 2) throw ConfigError("PatchNCE needs at least 2 locations");
    const Tensor src_tokens = detach_keys ? to_tokens(feat_src).detach() : to_tokens(feat_src);
    Tensor keys = head(gather_rows(src_tokens, locations));
    Tensor queries = head(gather_rows(to_tokens(feat_out), locations));
    Tensor logits = scale(matmul(queries, transpose2d(keys)), 1.0 / tau);
    std::vector<std::size_t> targets(locations.size());
    std::iota(targets.begin(), targets.end(), 0);
    return cross_entropy_rows(logits, targets);
}

Tensor patch_nce_layer(const Tensor& feat_src, const Tensor& feat_out, const ProjectionHead& head,
                       const NceConfig& cfg, Rng& rng) {
    cfg.validate();
    if (feat_src.rank() != 3) throw ShapeError("PatchNCE features must be [C x H x W]");
    const std::size_t available = feat_src.dim(1) * feat_src.dim(2);
    if (available < 2)
        throw ConfigError("PatchNCE layer has " + std::to_string(available) + " location(s); at least 2 required");
    const auto locations = sample_locations(available, cfg.num_patches, rng);
    return patch_nce_at(feat_src, feat_out, head, cfg.tau, locations, cfg.detach_keys);
}

Tensor patch_nce_total(std::span<const Tensor> feats_src, std::span<const Tensor> feats_out,
                       const ProjectionHeads& heads, const NceConfig& cfg, Rng& rng) {
    if (feats_src.size() != feats_out.size() || feats_src.size() != heads.size())
        throw ShapeError("PatchNCE: " + std::to_string(feats_src.size()) + " source layers, " +
                         std::to_string(feats_out.size()) + " output layers, " + std::to_string(heads.size()) +
                         " heads");
    Tensor total;
    for (std::size_t l = 0; l < feats_src.size(); ++l) {
        Tensor term = patch_nce_layer(feats_src[l], feats_out[l], heads[l], cfg, rng);
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

bool LossReport::finite() const {
    return std::isfinite(gan_g) && std::isfinite(gan_d) && std::isfinite(nce_x) && std::isfinite(nce_y) &&
           std::isfinite(total);
}

LossReport total_generator_loss(double gan_g, double gan_d, double nce_x, double nce_y, double lambda_x,
                                double lambda_y) {
    LossReport r{gan_g, gan_d, nce_x, nce_y, 0.0};
    r.total = gan_g + lambda_x * nce_x + lambda_y * nce_y;
    return r;
}

}  // namespace vctr
