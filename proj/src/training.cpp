#include "vctr/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "vctr/mel.hpp"

namespace vctr {

using nlohmann::json;

// ---- configuration --------------------------------------------------------

namespace {

// Reads optional keys from a JSON object and rejects anything unrecognised.
class Fields {
public:
    Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
    }
    ~Fields() noexcept(false) {
        if (std::uncaught_exceptions() > 0) return;
        for (const auto& [key, _] : j_.items())
            if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }
    const json* sub(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

}  // namespace

json to_json(const GeneratorConfig& c) {
    json j = {{"in_channels", c.in_channels},
              {"base_channels", c.base_channels},
              {"n_hpb", c.n_hpb},
              {"num_heads", c.num_heads},
              {"dwconv_kernel", c.dwconv_kernel},
              {"ffn_expansion", c.ffn_expansion},
              {"enable_local", c.enable_local},
              {"enable_global", c.enable_global},
              {"l2_normalize", c.l2_normalize},
              {"stem_norm", c.stem_norm},
              {"padding", padding_mode_name(c.padding)},
              {"output", c.output == OutputActivation::tanh ? "tanh" : "none"}};
    j["n_s_override"] = c.n_s_override ? json(*c.n_s_override) : json(nullptr);
    return j;
}

json to_json(const DiscriminatorConfig& c) {
    return {{"in_channels", c.in_channels},       {"base_channels", c.base_channels},
            {"n_layers", c.n_layers},             {"instance_norm", c.instance_norm},
            {"padding", padding_mode_name(c.padding)}, {"negative_slope", c.negative_slope}};
}

json to_json(const NceConfig& c) {
    return {{"tau", c.tau},           {"num_patches", c.num_patches}, {"layer_ids", c.layer_ids},
            {"proj_dim", c.proj_dim}, {"lambda_x", c.lambda_x},       {"lambda_y", c.lambda_y},
            {"detach_keys", c.detach_keys}};
}

json to_json(const TrainConfig& c) {
    json j = {{"lr0", c.lr0},
              {"total_steps", c.total_steps},
              {"constant_fraction", c.constant_fraction},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"eps", c.eps},
              {"seed", c.seed},
              {"ablation", {{"no_dpsa", c.ablation.no_dpsa}, {"no_local", c.ablation.no_local},
                            {"no_l2norm", c.ablation.no_l2norm}}},
              {"objective", gan_objective_name(c.objective)},
              {"max_consecutive_skips", c.max_consecutive_skips},
              {"toy_samples", c.toy_samples},
              {"generator", to_json(c.generator)},
              {"discriminator", to_json(c.discriminator)},
              {"nce", to_json(c.nce)}};
    j["grad_clip"] = c.grad_clip ? json(*c.grad_clip) : json(nullptr);
    return j;
}

GeneratorConfig generator_config_from_json(const json& j) {
    GeneratorConfig c;
    Fields f(j, "generator");
    f.get("in_channels", c.in_channels);
    f.get("base_channels", c.base_channels);
    f.get("n_hpb", c.n_hpb);
    f.get("num_heads", c.num_heads);
    f.get("dwconv_kernel", c.dwconv_kernel);
    f.get("ffn_expansion", c.ffn_expansion);
    f.get("enable_local", c.enable_local);
    f.get("enable_global", c.enable_global);
    f.get("l2_normalize", c.l2_normalize);
    f.get("stem_norm", c.stem_norm);
    std::string padding = padding_mode_name(c.padding);
    f.get("padding", padding);
    c.padding = parse_padding_mode(padding);
    std::string output = c.output == OutputActivation::tanh ? "tanh" : "none";
    f.get("output", output);
    if (output != "tanh" && output != "none") throw ConfigError("generator.output must be 'tanh' or 'none'");
    c.output = output == "tanh" ? OutputActivation::tanh : OutputActivation::none;
    if (const json* ns = f.sub("n_s_override"); ns && !ns->is_null()) c.n_s_override = ns->get<std::size_t>();
    c.validate();
    return c;
}

DiscriminatorConfig discriminator_config_from_json(const json& j) {
    DiscriminatorConfig c;
    Fields f(j, "discriminator");
    f.get("in_channels", c.in_channels);
    f.get("base_channels", c.base_channels);
    f.get("n_layers", c.n_layers);
    f.get("instance_norm", c.instance_norm);
    std::string padding = padding_mode_name(c.padding);
    f.get("padding", padding);
    c.padding = parse_padding_mode(padding);
    f.get("negative_slope", c.negative_slope);
    c.validate();
    return c;
}

NceConfig nce_config_from_json(const json& j) {
    NceConfig c;
    Fields f(j, "nce");
    std::string preset;
    f.get("preset", preset);
    if (preset == "identity") c = NceConfig::identity_preset();
    else if (preset == "no_identity") c = NceConfig::no_identity_preset();
    else if (!preset.empty()) throw ConfigError("nce.preset must be 'identity' or 'no_identity'");
    f.get("tau", c.tau);
    f.get("num_patches", c.num_patches);
    f.get("layer_ids", c.layer_ids);
    f.get("proj_dim", c.proj_dim);
    f.get("lambda_x", c.lambda_x);
    f.get("lambda_y", c.lambda_y);
    f.get("detach_keys", c.detach_keys);
    c.validate();
    return c;
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c = TrainConfig::desk_default();
    Fields f(j, "train");
    f.get("lr0", c.lr0);
    f.get("total_steps", c.total_steps);
    f.get("constant_fraction", c.constant_fraction);
    f.get("beta1", c.beta1);
    f.get("beta2", c.beta2);
    f.get("eps", c.eps);
    f.get("seed", c.seed);
    if (const json* clip = f.sub("grad_clip"); clip && !clip->is_null()) c.grad_clip = clip->get<double>();
    if (const json* a = f.sub("ablation")) {
        Fields fa(*a, "ablation");
        fa.get("no_dpsa", c.ablation.no_dpsa);
        fa.get("no_local", c.ablation.no_local);
        fa.get("no_l2norm", c.ablation.no_l2norm);
    }
    std::string objective = gan_objective_name(c.objective);
    f.get("objective", objective);
    c.objective = parse_gan_objective(objective);
    f.get("max_consecutive_skips", c.max_consecutive_skips);
    f.get("toy_samples", c.toy_samples);
    if (const json* g = f.sub("generator")) {
        json merged = to_json(c.generator);
        merged.update(*g);
        c.generator = generator_config_from_json(merged);
    }
    if (const json* d = f.sub("discriminator")) {
        json merged = to_json(c.discriminator);
        merged.update(*d);
        c.discriminator = discriminator_config_from_json(merged);
    }
    if (const json* n = f.sub("nce")) {
        json merged = n->contains("preset") ? json::object() : to_json(c.nce);
        merged.update(*n);
        c.nce = nce_config_from_json(merged);
    }
    c.validate();
    return c;
}

TrainConfig TrainConfig::desk_default() {
    TrainConfig c;
    c.generator.base_channels = 16;
    c.discriminator.base_channels = 16;
    c.nce = NceConfig::no_identity_preset();
    return c;
}

std::size_t TrainConfig::constant_steps() const {
    const auto s = static_cast<std::size_t>(std::llround(constant_fraction * static_cast<double>(total_steps)));
    return std::clamp<std::size_t>(s, 1, total_steps);
}

GeneratorConfig TrainConfig::resolved_generator() const {
    GeneratorConfig g = generator;
    if (ablation.no_dpsa) g.enable_global = false;
    if (ablation.no_local) g.enable_local = false;
    if (ablation.no_l2norm) g.l2_normalize = false;
    return g;
}

void TrainConfig::validate() const {
    if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
    if (total_steps == 0) throw ConfigError("total_steps must be positive");
    if (!(constant_fraction > 0.0 && constant_fraction <= 1.0))
        throw ConfigError("constant_fraction must lie in (0, 1]");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("Adam eps must be positive");
    if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("grad_clip must be positive when set");
    if (max_consecutive_skips == 0) throw ConfigError("max_consecutive_skips must be positive");
    if (toy_samples == 0) throw ConfigError("toy_samples must be positive");
    if (generator.in_channels != discriminator.in_channels)
        throw ConfigError("generator and discriminator disagree on input channels");
    resolved_generator().validate();
    discriminator.validate();
    nce.validate();
}

// ---- schedule and optimizer -----------------------------------------------

double lr_schedule(double epoch, double lr0, double total, double constant) {
    if (!(constant > 0.0 && constant <= total)) throw ConfigError("need 0 < constant <= total");
    if (epoch < constant) return lr0;
    if (epoch >= total) return 0.0;
    return lr0 * (total - epoch) / (total - constant);
}

double lr_schedule(std::size_t step, const TrainConfig& cfg) {
    return lr_schedule(static_cast<double>(step), cfg.lr0, static_cast<double>(cfg.total_steps),
                       static_cast<double>(cfg.constant_steps()));
}

Adam::Adam(ParamList params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p.tensor.numel(), 0.0);
        v_.emplace_back(p.tensor.numel(), 0.0);
    }
}

bool Adam::step(double lr) {
    for (const auto& p : params_)
        for (double g : p.tensor.grad())
            if (!std::isfinite(g)) return false;
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor w = params_[i].tensor;
        const auto g = w.grad();
        auto x = w.mutable_data();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t k = 0; k < x.size(); ++k) {
            const double gk = g.empty() ? 0.0 : g[k];
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * gk;
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * gk * gk;
            x[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
        }
    }
    return true;
}

void Adam::save_state(Checkpoint& ckpt, const std::string& prefix) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& shape = params_[i].tensor.shape();
        ckpt.tensors.push_back({prefix + "m/" + params_[i].name, Tensor::from_data(shape, m_[i])});
        ckpt.tensors.push_back({prefix + "v/" + params_[i].name, Tensor::from_data(shape, v_[i])});
    }
    ckpt.tensors.push_back({prefix + "t", Tensor::scalar(static_cast<double>(t_))});
}

void Adam::load_state(const Checkpoint& ckpt, const std::string& prefix) {
    auto fetch = [&](const std::string& name, std::vector<double>& dst) {
        const Tensor* t = ckpt.find(name);
        if (!t) throw CompatibilityError("checkpoint has no optimizer tensor '" + name + "'");
        if (t->numel() != dst.size()) throw CompatibilityError("optimizer tensor '" + name + "' has the wrong size");
        std::copy(t->data().begin(), t->data().end(), dst.begin());
    };
    for (std::size_t i = 0; i < params_.size(); ++i) {
        fetch(prefix + "m/" + params_[i].name, m_[i]);
        fetch(prefix + "v/" + params_[i].name, v_[i]);
    }
    const Tensor* t = ckpt.find(prefix + "t");
    if (!t) throw CompatibilityError("checkpoint has no optimizer step count '" + prefix + "t'");
    t_ = static_cast<std::uint64_t>(t->item());
}

double global_grad_norm(const ParamList& params) {
    double sq = 0.0;
    for (const auto& p : params)
        for (double g : p.tensor.grad()) sq += g * g;
    return std::sqrt(sq);
}

double clip_grad_norm(const ParamList& params, double max_norm) {
    const double norm = global_grad_norm(params);
    if (!(norm > max_norm)) return norm;
    const double s = max_norm / norm;
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        Tensor t = p.tensor;
        for (double& g : t.mutable_grad()) g *= s;
    }
    return global_grad_norm(params);
}

// ---- toy data -------------------------------------------------------------

ToyDomains make_toy_domains(std::uint64_t seed, std::size_t count, std::size_t bands, std::size_t frames) {
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.03);
    const double b = static_cast<double>(bands);

    auto sample = [&](double f0_lo, double f0_hi) {
        const double f0 = f0_lo + (f0_hi - f0_lo) * unit(rng);
        const double drift = 0.05 * f0 * unit(rng);
        const double rate = 2.0 * std::numbers::pi * (0.5 + 2.0 * unit(rng)) / static_cast<double>(frames);
        const double phase = 2.0 * std::numbers::pi * unit(rng);
        MelSpectrogram mel;
        mel.bands = bands;
        mel.frames = frames;
        mel.values.assign(bands * frames, 0.0);
        for (std::size_t t = 0; t < frames; ++t) {
            const double f = f0 + drift * std::sin(rate * static_cast<double>(t) + phase);
            for (std::size_t band = 0; band < bands; ++band) {
                double e = 0.0;
                for (double k = 1.0; k * f < b + 3.0; k += 1.0) {
                    const double d = static_cast<double>(band) - k * f;
                    e += std::pow(0.55, k - 1.0) * std::exp(-0.5 * d * d);
                }
                mel.values[band * frames + t] = e + noise(rng);
            }
        }
        return normalize(mel).to_tensor();
    };

    ToyDomains d;
    for (std::size_t i = 0; i < count; ++i) d.a.push_back(sample(0.06 * b, 0.12 * b));
    for (std::size_t i = 0; i < count; ++i) d.b.push_back(sample(0.30 * b, 0.42 * b));
    return d;
}

// ---- trainer --------------------------------------------------------------

namespace {

std::vector<std::size_t> tap_channels(const Generator& g, const NceConfig& nce) {
    std::vector<std::size_t> out;
    for (std::size_t id : nce.layer_ids) out.push_back(g.encoder_channels(id));
    return out;
}

ParamList concat(ParamList a, const ParamList& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

std::string rng_state(const Rng& rng) {
    std::ostringstream s;
    s << rng;
    return s.str();
}

}  // namespace

Trainer::Trainer(const TrainConfig& cfg, std::vector<Tensor> domain_a, std::vector<Tensor> domain_b)
    : cfg_((cfg.validate(), cfg)),
      rng_(cfg.seed),
      gen_(cfg.resolved_generator(), rng_),
      disc_(cfg.discriminator, rng_),
      heads_(tap_channels(gen_, cfg.nce), cfg.nce.proj_dim, rng_),
      data_a_(std::move(domain_a)),
      data_b_(std::move(domain_b)) {
    if (data_a_.empty() || data_b_.empty()) throw ConfigError("both training domains need at least one sample");
    for (const auto* set : {&data_a_, &data_b_})
        for (const auto& t : *set) gen_.check_input(t);
    opt_g_ = Adam(generator_side_parameters(), cfg_.beta1, cfg_.beta2, cfg_.eps);
    opt_d_ = Adam(disc_.parameters(), cfg_.beta1, cfg_.beta2, cfg_.eps);
}

ParamList Trainer::generator_side_parameters() const {
    ParamList g = gen_.parameters();
    for (auto& p : g) p.name = "G/" + p.name;
    ParamList h = heads_.parameters();
    for (auto& p : h) p.name = "H/" + p.name;
    return concat(std::move(g), h);
}

StepRecord Trainer::step() {
    const Tensor x = data_a_[rng_() % data_a_.size()];
    const Tensor y = data_b_[rng_() % data_b_.size()];
    return step_on(x, y);
}

StepRecord Trainer::skip(StepRecord r) {
    r.skipped = true;
    ++skipped_;
    ++step_;
    if (++consecutive_skips_ >= cfg_.max_consecutive_skips)
        throw TrainingAborted(fmt::format("training aborted at step {}: {} consecutive non-finite steps", r.step,
                                          consecutive_skips_));
    return r;
}

StepRecord Trainer::step_on(const Tensor& x, const Tensor& y) {
    StepRecord rec;
    rec.step = step_;
    rec.lr = lr_schedule(step_, cfg_);
    const ParamList g_params = opt_g_.params();
    const ParamList d_params = opt_d_.params();
    const auto& ids = cfg_.nce.layer_ids;

    Tape tape_g;
    TapeScope scope_g(tape_g);
    std::vector<Tensor> feats_x;
    const Tensor fake = gen_.forward_with_taps(x, ids, feats_x);

    // Discriminator update on a detached copy of G(x).
    {
        zero_grads(g_params);
        zero_grads(d_params);
        Tape tape_d;
        TapeScope scope_d(tape_d);
        Tensor loss_d = gan_loss_d(disc_.forward(y), disc_.forward(fake.detach()), cfg_.objective);
        rec.loss.gan_d = loss_d.item();
        if (!std::isfinite(rec.loss.gan_d)) return skip(rec);
        tape_d.backward(loss_d);
        d_leak_ = std::any_of(g_params.begin(), g_params.end(), [](const NamedParam& p) { return p.tensor.has_grad(); });
        if (!opt_d_.step(rec.lr)) {
            ++nan_events_;
            return skip(rec);
        }
    }

    // Generator update.
    zero_grads(d_params);
    Tensor loss_gan = gan_loss_g(disc_.forward(fake), cfg_.objective);
    Tensor nce_x = patch_nce_total(feats_x, gen_.encode(fake, ids), heads_, cfg_.nce, rng_);
    Tensor total = add(loss_gan, scale(nce_x, cfg_.nce.lambda_x));
    rec.loss.gan_g = loss_gan.item();
    rec.loss.nce_x = nce_x.item();
    if (cfg_.nce.lambda_y != 0.0) {
        std::vector<Tensor> feats_y;
        const Tensor idt = gen_.forward_with_taps(y, ids, feats_y);
        Tensor nce_y = patch_nce_total(feats_y, gen_.encode(idt, ids), heads_, cfg_.nce, rng_);
        rec.loss.nce_y = nce_y.item();
        total = add(total, scale(nce_y, cfg_.nce.lambda_y));
    }
    rec.loss.total = total.item();
    if (!rec.loss.finite()) return skip(rec);

    tape_g.backward(total);
    last_g_norm_ = cfg_.grad_clip ? clip_grad_norm(g_params, *cfg_.grad_clip) : global_grad_norm(g_params);
    if (!opt_g_.step(rec.lr)) {
        ++nan_events_;
        return skip(rec);
    }
    ++step_;
    consecutive_skips_ = 0;
    return rec;
}

std::vector<StepRecord> Trainer::run(std::size_t steps, std::ostream* log) {
    std::vector<StepRecord> out;
    out.reserve(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        out.push_back(step());
        if (log) *log << log_line(out.back()) << '\n' << std::flush;
    }
    return out;
}

std::string Trainer::log_header() { return "step,lr,gan_g,gan_d,nce_x,nce_y,total"; }

std::string Trainer::log_line(const StepRecord& r) {
    return fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}", r.step, r.lr, r.loss.gan_g,
                       r.loss.gan_d, r.loss.nce_x, r.loss.nce_y, r.loss.total);
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint ckpt;
    ckpt.config = {{"kind", "trainer"},
                   {"scalar_bytes", 8},
                   {"train", to_json(cfg_)},
                   {"generator", to_json(gen_.config())},
                   {"step", step_},
                   {"skipped", skipped_},
                   {"consecutive_skips", consecutive_skips_},
                   {"nan_events", nan_events_},
                   {"rng", rng_state(rng_)}};
    add_tensors(ckpt, generator_side_parameters(), "");
    add_tensors(ckpt, disc_.parameters(), "D/");
    opt_g_.save_state(ckpt, "adam.G/");
    opt_d_.save_state(ckpt, "adam.D/");
    return ckpt;
}

void Trainer::save(const std::filesystem::path& path) const { save_checkpoint(path, checkpoint()); }

void Trainer::restore(const Checkpoint& ckpt) {
    const json& c = ckpt.config;
    if (!c.is_object() || c.value("kind", "") != "trainer")
        throw CompatibilityError("checkpoint is not a training checkpoint");
    json mine = to_json(cfg_);
    json theirs = c.at("train");
    // Only the length of the run may differ between save and resume.
    for (json* j : {&mine, &theirs}) j->erase("total_steps");
    if (mine != theirs)
        throw CompatibilityError("checkpoint training config differs from the current one:\n  checkpoint: " +
                                 theirs.dump() + "\n  current:    " + mine.dump());
    restore_tensors(ckpt, generator_side_parameters(), "");
    restore_tensors(ckpt, disc_.parameters(), "D/");
    opt_g_.load_state(ckpt, "adam.G/");
    opt_d_.load_state(ckpt, "adam.D/");
    step_ = c.at("step").get<std::size_t>();
    skipped_ = c.at("skipped").get<std::size_t>();
    consecutive_skips_ = c.at("consecutive_skips").get<std::size_t>();
    nan_events_ = c.at("nan_events").get<std::size_t>();
    std::istringstream s(c.at("rng").get<std::string>());
    s >> rng_;
    if (!s) throw CompatibilityError("checkpoint rng state is unreadable");
}

}  // namespace vctr
