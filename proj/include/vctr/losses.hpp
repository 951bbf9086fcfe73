#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vctr/nn.hpp"
#include "vctr/tensor.hpp"

namespace vctr {

// How the adversarial terms are formed from discriminator logits.
//   non_saturating: D minimises -log s(real) - log(1 - s(fake)); G minimises -log s(fake)
//   minimax:        same D loss; G minimises log(1 - s(fake)) literally
//   least_squares:  D minimises (real - 1)^2 + fake^2; G minimises (fake - 1)^2
// Expectations are means over the logit grid.
enum class GanObjective { non_saturating, minimax, least_squares };

const char* gan_objective_name(GanObjective objective);
GanObjective parse_gan_objective(const std::string& name);

Tensor gan_loss_d(const Tensor& real_logits, const Tensor& fake_logits,
                  GanObjective objective = GanObjective::non_saturating);
Tensor gan_loss_g(const Tensor& fake_logits, GanObjective objective = GanObjective::non_saturating);

struct NceConfig {
    double tau = 0.07;
    std::size_t num_patches = 256;
    std::vector<std::size_t> layer_ids{0, 4, 7, 10, 14};
    std::size_t proj_dim = 256;
    double lambda_x = 1.0;
    double lambda_y = 1.0;
    // Stop gradients through the input-side (key) features.
    bool detach_keys = false;

    static NceConfig identity_preset();     // lambda (1, 1)
    static NceConfig no_identity_preset();  // lambda (10, 0)
    void validate() const;
};

// Two-layer MLP (Linear, ReLU, Linear) applied per patch vector, followed by
// row L2 normalisation.
struct ProjectionHead {
    Linear fc1;
    Linear fc2;

    ProjectionHead() = default;
    ProjectionHead(std::size_t in_channels, std::size_t dim, Rng& rng);
    Tensor operator()(const Tensor& patches) const;
    void collect(ParamList& out, const std::string& prefix) const;
};

class ProjectionHeads {
public:
    ProjectionHeads() = default;
    // One head per tapped layer, sized from that layer's channel count.
    ProjectionHeads(std::span<const std::size_t> layer_channels, std::size_t dim, Rng& rng);

    std::size_t size() const { return heads_.size(); }
    const ProjectionHead& operator[](std::size_t i) const { return heads_.at(i); }
    ParamList parameters() const;

private:
    std::vector<ProjectionHead> heads_;
};

// `count` distinct positions from [0, available) when available >= count,
// otherwise every position in order.
std::vector<std::size_t> sample_locations(std::size_t available, std::size_t count, Rng& rng);

// PatchNCE at fixed locations. Row s of the output projection is the query;
// the co-located input projection is its positive and the other sampled
// input projections are the negatives. Mean over locations.
Tensor patch_nce_at(const Tensor& feat_src, const Tensor& feat_out, const ProjectionHead& head, double tau,
                    std::span<const std::size_t> locations, bool detach_keys = false);

Tensor patch_nce_layer(const Tensor& feat_src, const Tensor& feat_out, const ProjectionHead& head,
                       const NceConfig& cfg, Rng& rng);

// Sum over layers of patch_nce_layer; one head per layer.
Tensor patch_nce_total(std::span<const Tensor> feats_src, std::span<const Tensor> feats_out,
                       const ProjectionHeads& heads, const NceConfig& cfg, Rng& rng);

struct LossReport {
    double gan_g = 0.0;
    double gan_d = 0.0;
    double nce_x = 0.0;
    double nce_y = 0.0;
    double total = 0.0;

    bool finite() const;
    bool operator==(const LossReport&) const = default;
};

// total = gan_g + lambda_x * nce_x + lambda_y * nce_y
LossReport total_generator_loss(double gan_g, double gan_d, double nce_x, double nce_y, double lambda_x,
                                double lambda_y);

}  // namespace vctr
