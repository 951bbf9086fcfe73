#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vctr/checkpoint.hpp"
#include "vctr/discriminator.hpp"
#include "vctr/generator.hpp"
#include "vctr/losses.hpp"

namespace vctr {

struct AblationFlags {
    bool no_dpsa = false;
    bool no_local = false;
    bool no_l2norm = false;
};

struct TrainConfig {
    double lr0 = 2e-4;
    std::size_t total_steps = 500;
    // Share of the run held at lr0 before the linear decay to zero.
    double constant_fraction = 0.85;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::optional<double> grad_clip;
    std::uint64_t seed = 0;
    AblationFlags ablation;
    GanObjective objective = GanObjective::non_saturating;
    std::size_t max_consecutive_skips = 10;
    std::size_t toy_samples = 8;

    GeneratorConfig generator;
    DiscriminatorConfig discriminator;
    NceConfig nce;

    // 80 x 184 toy run: base width 16 for G and D, lambda (10, 0).
    static TrainConfig desk_default();

    std::size_t constant_steps() const;
    // Generator config with the ablation flags applied.
    GeneratorConfig resolved_generator() const;
    void validate() const;
};

nlohmann::json to_json(const GeneratorConfig& cfg);
nlohmann::json to_json(const DiscriminatorConfig& cfg);
nlohmann::json to_json(const NceConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
// Missing keys keep their defaults; unknown keys raise ConfigError.
GeneratorConfig generator_config_from_json(const nlohmann::json& j);
DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j);
NceConfig nce_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

// lr0 while epoch < constant, then lr0 (total - epoch) / (total - constant).
double lr_schedule(double epoch, double lr0, double total, double constant);
double lr_schedule(std::size_t step, const TrainConfig& cfg);

// Bias-corrected Adam over a fixed parameter list. A parameter without an
// accumulated gradient is stepped with g = 0.
class Adam {
public:
    Adam() = default;
    Adam(ParamList params, double beta1, double beta2, double eps);

    // Leaves parameters and moments untouched and returns false when any
    // gradient is non-finite.
    bool step(double lr);

    const ParamList& params() const { return params_; }
    std::uint64_t steps_taken() const { return t_; }
    std::span<const double> first_moment(std::size_t i) const { return m_[i]; }
    std::span<const double> second_moment(std::size_t i) const { return v_[i]; }

    void save_state(Checkpoint& ckpt, const std::string& prefix) const;
    void load_state(const Checkpoint& ckpt, const std::string& prefix);

private:
    ParamList params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    std::uint64_t t_ = 0;
};

// Euclidean norm over every gradient in `params`.
double global_grad_norm(const ParamList& params);
// Rescales gradients so the global norm is at most max_norm; returns the
// norm after clipping.
double clip_grad_norm(const ParamList& params, double max_norm);

struct ToyDomains {
    std::vector<Tensor> a;  // low fundamentals
    std::vector<Tensor> b;  // high fundamentals
};

// Harmonic stacks on a bands x frames grid with a slowly drifting
// fundamental, geometric harmonic decay and additive noise, each sample
// min-max scaled to [-1, 1].
ToyDomains make_toy_domains(std::uint64_t seed, std::size_t count = 8, std::size_t bands = 80,
                            std::size_t frames = 184);

class TrainingAborted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct StepRecord {
    std::size_t step = 0;
    double lr = 0.0;
    LossReport loss;
    bool skipped = false;

    bool operator==(const StepRecord&) const = default;
};

class Trainer {
public:
    Trainer(const TrainConfig& cfg, std::vector<Tensor> domain_a, std::vector<Tensor> domain_b);

    // One D update then one G update on a pair drawn from the domains.
    StepRecord step();
    StepRecord step_on(const Tensor& x, const Tensor& y);
    std::vector<StepRecord> run(std::size_t steps, std::ostream* log = nullptr);

    Checkpoint checkpoint() const;
    void save(const std::filesystem::path& path) const;
    // Model, optimizer, rng and step counter; the configs must match.
    void restore(const Checkpoint& ckpt);

    static std::string log_header();
    static std::string log_line(const StepRecord& r);

    const TrainConfig& config() const { return cfg_; }
    const Generator& generator() const { return gen_; }
    const PatchDiscriminator& discriminator() const { return disc_; }
    const ProjectionHeads& heads() const { return heads_; }
    ParamList generator_side_parameters() const;

    std::size_t steps_done() const { return step_; }
    std::size_t skipped_steps() const { return skipped_; }
    std::size_t nan_events() const { return nan_events_; }
    // True if any G parameter held a gradient right after the last D backward.
    bool d_step_touched_generator() const { return d_leak_; }
    // Global G-side gradient norm as applied in the last G update.
    double last_generator_grad_norm() const { return last_g_norm_; }

private:
    StepRecord skip(StepRecord r);

    TrainConfig cfg_;
    Rng rng_;
    Generator gen_;
    PatchDiscriminator disc_;
    ProjectionHeads heads_;
    Adam opt_g_;
    Adam opt_d_;
    std::vector<Tensor> data_a_;
    std::vector<Tensor> data_b_;
    std::size_t step_ = 0;
    std::size_t skipped_ = 0;
    std::size_t consecutive_skips_ = 0;
    std::size_t nan_events_ = 0;
    bool d_leak_ = false;
    double last_g_norm_ = 0.0;
};

}  // namespace vctr
