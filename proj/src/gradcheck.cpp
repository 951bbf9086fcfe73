#include "vctr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "vctr/discriminator.hpp"
#include "vctr/dpsa.hpp"
#include "vctr/generator.hpp"
#include "vctr/losses.hpp"
#include "vctr/ops.hpp"

namespace vctr {

namespace {

Tensor weighted_sum(const Tensor& out, const Tensor& w) { return sum(mul(out, w)); }

double eval(const GradFn& fn, const std::vector<Tensor>& inputs, const Tensor& w) {
    NoGradScope no_grad;
    return weighted_sum(fn(inputs), w).item();
}

}  // namespace

GradCheckResult check_gradients(const std::string& name, const GradFn& fn, std::vector<Tensor> inputs,
                                double tolerance, const GradCheckOptions& opts) {
    Rng rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);

    Tensor probe;
    {
        NoGradScope no_grad;
        probe = fn(inputs);
    }
    std::vector<double> wv(probe.numel());
    for (double& v : wv) v = unit(rng);
    const Tensor w = Tensor::from_data(probe.shape(), wv);

    for (auto& t : inputs) {
        t.zero_grad();
        t.set_requires_grad(true);
    }
    {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(weighted_sum(fn(inputs), w));
    }

    double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0;
    std::size_t entries = 0;
    for (auto& t : inputs) {
        const std::vector<double> analytic(t.grad().begin(), t.grad().end());
        std::vector<std::size_t> idx(t.numel());
        std::iota(idx.begin(), idx.end(), 0);
        if (opts.max_entries && idx.size() > opts.max_entries) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(opts.max_entries);
        }
        auto data = t.mutable_data();
        for (std::size_t j : idx) {
            const double saved = data[j];
            data[j] = saved + opts.step;
            const double up = eval(fn, inputs, w);
            data[j] = saved - opts.step;
            const double down = eval(fn, inputs, w);
            data[j] = saved;
            const double numeric = (up - down) / (2.0 * opts.step);
            const double a = analytic.empty() ? 0.0 : analytic[j];
            diff_sq += (a - numeric) * (a - numeric);
            a_sq += a * a;
            n_sq += numeric * numeric;
            ++entries;
        }
    }
    const double denom = std::max({std::sqrt(a_sq), std::sqrt(n_sq), 1e-300});
    GradCheckResult r;
    r.name = name;
    r.error = std::sqrt(diff_sq) / denom;
    if (a_sq == 0.0 && n_sq == 0.0) r.error = 0.0;
    r.tolerance = tolerance;
    r.entries = entries;
    r.pass = std::isfinite(r.error) && r.error < tolerance;
    return r;
}

namespace {

constexpr double kOpTolerance = 1e-5;
constexpr double kEndToEndTolerance = 1e-3;

struct Case {
    std::string name;
    GradFn fn;
    std::vector<Tensor> inputs;
    double tolerance = kOpTolerance;
    std::size_t max_entries = 0;
};

class Suite {
public:
    explicit Suite(std::uint64_t seed) : rng_(seed) {}

    Tensor randn(Shape shape, double stddev = 1.0) {
        std::normal_distribution<double> n(0.0, stddev);
        std::vector<double> v(shape_numel(shape));
        for (double& x : v) x = n(rng_);
        return Tensor::from_data(std::move(shape), std::move(v));
    }
    // Values bounded away from zero, for ops with a kink there.
    Tensor rand_off_zero(Shape shape) {
        std::uniform_real_distribution<double> u(0.1, 1.5);
        std::bernoulli_distribution sign(0.5);
        std::vector<double> v(shape_numel(shape));
        for (double& x : v) x = sign(rng_) ? u(rng_) : -u(rng_);
        return Tensor::from_data(std::move(shape), std::move(v));
    }
    // Redraws module parameters at unit scale so gradients are well above
    // finite-difference noise.
    std::vector<Tensor> rescale(const ParamList& params, double stddev = 0.3) {
        std::normal_distribution<double> n(0.0, stddev);
        std::vector<Tensor> out;
        for (const auto& p : params) {
            Tensor t = p.tensor;
            for (double& x : t.mutable_data()) x = n(rng_);
            out.push_back(t);
        }
        return out;
    }
    Rng& rng() { return rng_; }

private:
    Rng rng_;
};

using Unary = Tensor (*)(const Tensor&);

std::vector<Case> tensor_cases(Suite& s) {
    std::vector<Case> c;
    auto unary = [&](const char* name, auto op, Tensor x) {
        c.push_back({name, [op](const std::vector<Tensor>& in) { return op(in[0]); }, {x}});
    };
    auto binary = [&](const char* name, auto op) {
        c.push_back({name, [op](const std::vector<Tensor>& in) { return op(in[0], in[1]); },
                     {s.randn({3, 4}), s.randn({3, 4})}});
    };
    binary("add", [](const Tensor& a, const Tensor& b) { return add(a, b); });
    binary("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); });
    binary("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); });
    unary("scale", [](const Tensor& x) { return scale(x, -1.7); }, s.randn({5}));
    unary("add_scalar", [](const Tensor& x) { return add_scalar(x, 0.3); }, s.randn({5}));
    unary("tanh", [](const Tensor& x) { return vctr::tanh(x); }, s.randn({2, 5}));
    unary("gelu", [](const Tensor& x) { return gelu(x); }, s.randn({2, 5}));
    unary("relu", [](const Tensor& x) { return relu(x); }, s.rand_off_zero({2, 5}));
    unary("leaky_relu", [](const Tensor& x) { return leaky_relu(x, 0.2); }, s.rand_off_zero({2, 5}));
    unary("softplus", [](const Tensor& x) { return softplus(x); }, s.randn({2, 5}, 3.0));
    unary("sum", [](const Tensor& x) { return sum(x); }, s.randn({3, 3}));
    unary("mean", [](const Tensor& x) { return mean(x); }, s.randn({3, 3}));
    unary("reshape", [](const Tensor& x) { return reshape(x, {6, 2}); }, s.randn({3, 4}));
    unary("transpose2d", [](const Tensor& x) { return transpose2d(x); }, s.randn({3, 4}));
    unary("softmax_rows", [](const Tensor& x) { return softmax_rows(x); }, s.randn({3, 5}, 2.0));
    unary("l2_normalize_rows", [](const Tensor& x) { return l2_normalize_rows(x); }, s.randn({4, 3}));
    {
        const std::vector<std::size_t> targets{2, 0, 3};
        unary("cross_entropy_rows", [targets](const Tensor& x) { return cross_entropy_rows(x, targets); },
              s.randn({3, 4}, 2.0));
    }
    {
        const std::vector<std::size_t> rows{3, 0, 3, 1};
        unary("gather_rows", [rows](const Tensor& x) { return gather_rows(x, rows); }, s.randn({4, 3}));
    }
    unary("slice_cols", [](const Tensor& x) { return slice_cols(x, 1, 2); }, s.randn({3, 4}));
    c.push_back({"concat_cols",
                 [](const std::vector<Tensor>& in) { return concat_cols({in[0], in[1]}); },
                 {s.randn({3, 2}), s.randn({3, 3})}});
    c.push_back({"concat_channels",
                 [](const std::vector<Tensor>& in) { return concat_channels(in[0], in[1]); },
                 {s.randn({2, 3, 3}), s.randn({1, 3, 3})}});
    unary("to_tokens", [](const Tensor& x) { return to_tokens(x); }, s.randn({3, 2, 4}));
    unary("from_tokens", [](const Tensor& x) { return from_tokens(x, 2, 4); }, s.randn({8, 3}));
    unary("upsample_nearest2x", [](const Tensor& x) { return upsample_nearest2x(x); }, s.randn({2, 3, 2}));
    return c;
}

std::vector<Case> linalg_cases(Suite& s) {
    std::vector<Case> c;
    c.push_back({"matmul", [](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); },
                 {s.randn({3, 5}), s.randn({5, 4})}});
    c.push_back({"linear", [](const std::vector<Tensor>& in) { return linear(in[0], in[1], in[2]); },
                 {s.randn({4, 3}), s.randn({3, 5}), s.randn({5})}});
    c.push_back({"linear_no_bias", [](const std::vector<Tensor>& in) { return linear(in[0], in[1], Tensor()); },
                 {s.randn({4, 3}), s.randn({3, 2})}});
    return c;
}

std::vector<Case> conv_cases(Suite& s) {
    std::vector<Case> c;
    for (PaddingMode mode : {PaddingMode::reflection, PaddingMode::replication, PaddingMode::zero}) {
        for (std::size_t stride : {1, 2}) {
            c.push_back({std::string("conv2d_") + padding_mode_name(mode) + "_s" + std::to_string(stride),
                         [mode, stride](const std::vector<Tensor>& in) {
                             return conv2d(in[0], in[1], in[2], stride, 1, mode);
                         },
                         {s.randn({2, 5, 6}), s.randn({3, 2, 3, 3}), s.randn({3})}});
        }
        c.push_back({std::string("depthwise_conv2d_") + padding_mode_name(mode),
                     [mode](const std::vector<Tensor>& in) {
                         return depthwise_conv2d(in[0], in[1], in[2], 1, 1, mode);
                     },
                     {s.randn({3, 4, 5}), s.randn({3, 1, 3, 3}), s.randn({3})}});
    }
    c.push_back({"conv2d_1x1", [](const std::vector<Tensor>& in) {
                     return conv2d(in[0], in[1], in[2], 1, 0, PaddingMode::zero);
                 },
                 {s.randn({3, 4, 4}), s.randn({2, 3, 1, 1}), s.randn({2})}});
    c.push_back({"conv2d_7x7_pad3", [](const std::vector<Tensor>& in) {
                     return conv2d(in[0], in[1], Tensor(), 1, 3, PaddingMode::reflection);
                 },
                 {s.randn({1, 8, 8}), s.randn({2, 1, 7, 7})}});
    c.push_back({"conv2d_4x4_s2", [](const std::vector<Tensor>& in) {
                     return conv2d(in[0], in[1], in[2], 2, 1, PaddingMode::zero);
                 },
                 {s.randn({2, 8, 6}), s.randn({3, 2, 4, 4}), s.randn({3})}});
    return c;
}

std::vector<Case> norm_cases(Suite& s) {
    std::vector<Case> c;
    c.push_back({"instance_norm", [](const std::vector<Tensor>& in) {
                     return instance_norm(in[0], Tensor(), Tensor());
                 },
                 {s.randn({3, 4, 5})}});
    c.push_back({"instance_norm_affine", [](const std::vector<Tensor>& in) {
                     return instance_norm(in[0], in[1], in[2]);
                 },
                 {s.randn({3, 4, 5}), s.randn({3}), s.randn({3})}});
    return c;
}

std::vector<Case> dpsa_cases(Suite& s) {
    std::vector<Case> c;
    struct Setup {
        GridShape grid;
        std::size_t channels, heads;
        bool l2;
    };
    for (const Setup& st : {Setup{{4, 4}, 8, 2, true}, Setup{{4, 6}, 8, 1, true}, Setup{{3, 5}, 6, 2, false}}) {
        auto params = std::make_shared<DpsaParams>(st.channels, st.channels, s.rng());
        ParamList pl;
        params->collect(pl, "p");
        std::vector<Tensor> inputs{s.randn({st.grid.tokens(), st.channels})};
        for (auto& t : s.rescale(pl)) inputs.push_back(t);
        AttentionHeadConfig cfg;
        cfg.num_heads = st.heads;
        cfg.l2_normalize = st.l2;

        // Hold the selection fixed so the function is smooth around the probe.
        auto frozen = std::make_shared<std::vector<PruneSelection>>();
        {
            NoGradScope no_grad;
            DpsaProbe probe;
            dpsa_forward({st.grid, inputs[0]}, *params, cfg, &probe);
            *frozen = probe.selections;
        }
        const std::string tag = std::to_string(st.grid.height) + "x" + std::to_string(st.grid.width) +
                                (st.l2 ? "" : "_no_l2norm");
        c.push_back({"dpsa_forward_" + tag,
                     [params, cfg, frozen, grid = st.grid](const std::vector<Tensor>& in) {
                         DpsaProbe probe;
                         probe.frozen = frozen.get();
                         return dpsa_forward({grid, in[0]}, *params, cfg, &probe).tokens;
                     },
                     inputs});
        c.push_back({"dense_attention_" + tag,
                     [params, cfg, grid = st.grid](const std::vector<Tensor>& in) {
                         return dense_attention_forward({grid, in[0]}, *params, cfg).tokens;
                     },
                     inputs});
    }
    return c;
}

std::vector<Case> loss_cases(Suite& s) {
    std::vector<Case> c;
    for (GanObjective obj : {GanObjective::non_saturating, GanObjective::minimax, GanObjective::least_squares}) {
        c.push_back({std::string("gan_loss_d_") + gan_objective_name(obj),
                     [obj](const std::vector<Tensor>& in) { return gan_loss_d(in[0], in[1], obj); },
                     {s.randn({1, 3, 4}), s.randn({1, 3, 4})}});
        c.push_back({std::string("gan_loss_g_") + gan_objective_name(obj),
                     [obj](const std::vector<Tensor>& in) { return gan_loss_g(in[0], obj); },
                     {s.randn({1, 3, 4})}});
    }
    auto head = std::make_shared<ProjectionHead>(5, 6, s.rng());
    ParamList hp;
    head->collect(hp, "h");
    std::vector<Tensor> inputs{s.randn({5, 3, 4}), s.randn({5, 3, 4})};
    for (auto& t : s.rescale(hp, 0.5)) inputs.push_back(t);
    const std::vector<std::size_t> locs{0, 5, 7, 11, 2};
    c.push_back({"patch_nce",
                 [head, locs](const std::vector<Tensor>& in) {
                     return patch_nce_at(in[0], in[1], *head, 0.07, locs, false);
                 },
                 inputs});
    // Detached keys: the source features are a constant, so only the output
    // features and the head are probed.
    std::vector<Tensor> tail(inputs.begin() + 1, inputs.end());
    c.push_back({"patch_nce_detached_keys",
                 [head, locs, src = inputs[0]](const std::vector<Tensor>& in) {
                     return patch_nce_at(src, in[0], *head, 0.07, locs, true);
                 },
                 tail});
    return c;
}

GeneratorConfig toy_generator() {
    GeneratorConfig g;
    g.base_channels = 4;
    g.n_hpb = 2;
    g.num_heads = 2;
    g.ffn_expansion = 2;
    return g;
}

std::vector<Case> module_cases(Suite& s) {
    std::vector<Case> c;
    {
        HpbConfig cfg;
        cfg.channels = 8;
        cfg.ffn_expansion = 2;
        cfg.attention.num_heads = 2;
        auto block = std::make_shared<HybridPerceptionBlock>(cfg, s.rng());
        ParamList pl;
        block->collect(pl, "hpb");
        std::vector<Tensor> inputs{s.randn({8, 4, 4})};
        for (auto& t : s.rescale(pl)) inputs.push_back(t);
        c.push_back({"hpb_block",
                     [block](const std::vector<Tensor>& in) { return block->forward(in[0]); }, inputs, kOpTolerance});
    }
    {
        DiscriminatorConfig cfg;
        cfg.base_channels = 4;
        cfg.n_layers = 2;
        auto disc = std::make_shared<PatchDiscriminator>(cfg, s.rng());
        std::vector<Tensor> inputs{s.randn({1, 16, 16})};
        for (auto& t : s.rescale(disc->parameters())) inputs.push_back(t);
        c.push_back({"patchgan", [disc](const std::vector<Tensor>& in) { return disc->forward(in[0]); }, inputs,
                     kOpTolerance, 24});
    }
    return c;
}

std::vector<Case> end_to_end_cases(Suite& s) {
    struct Model {
        Generator gen;
        PatchDiscriminator disc;
        ProjectionHeads heads;
        NceConfig nce;
    };
    const GeneratorConfig gcfg = toy_generator();
    DiscriminatorConfig dcfg;
    dcfg.base_channels = 4;
    dcfg.n_layers = 2;
    NceConfig nce = NceConfig::identity_preset();
    nce.layer_ids = {0, 2, 4, 7, 8};
    nce.num_patches = 8;
    nce.proj_dim = 8;
    Generator gen(gcfg, s.rng());
    std::vector<std::size_t> chans;
    for (std::size_t id : nce.layer_ids) chans.push_back(gen.encoder_channels(id));
    PatchDiscriminator disc(dcfg, s.rng());
    ProjectionHeads heads(chans, nce.proj_dim, s.rng());
    auto m = std::make_shared<Model>(Model{std::move(gen), std::move(disc), std::move(heads), nce});

    const Tensor x = s.randn({1, 16, 16});
    const Tensor y = s.randn({1, 16, 16});
    std::vector<Tensor> inputs;
    for (auto& t : s.rescale(m->gen.parameters(), 0.2)) inputs.push_back(t);
    for (auto& t : s.rescale(m->heads.parameters(), 0.3)) inputs.push_back(t);
    for (auto& t : s.rescale(m->disc.parameters(), 0.3)) inputs.push_back(t);
    const std::uint64_t sample_seed = s.rng()();

    GradFn fn = [m, x, y, sample_seed](const std::vector<Tensor>&) {
        Rng rng(sample_seed);  // same patch locations on every evaluation
        const auto& ids = m->nce.layer_ids;
        std::vector<Tensor> fx, fy;
        Tensor fake = m->gen.forward_with_taps(x, ids, fx);
        Tensor idt = m->gen.forward_with_taps(y, ids, fy);
        Tensor nce_x = patch_nce_total(fx, m->gen.encode(fake, ids), m->heads, m->nce, rng);
        Tensor nce_y = patch_nce_total(fy, m->gen.encode(idt, ids), m->heads, m->nce, rng);
        Tensor gan = gan_loss_g(m->disc.forward(fake));
        return add(gan, add(scale(nce_x, m->nce.lambda_x), scale(nce_y, m->nce.lambda_y)));
    };
    return {{"generator_and_losses", fn, inputs, kEndToEndTolerance, 6}};
}

using Builder = std::vector<Case> (*)(Suite&);

const std::vector<std::pair<std::string, Builder>>& registry() {
    static const std::vector<std::pair<std::string, Builder>> r{
        {"tensor", tensor_cases}, {"linalg", linalg_cases}, {"conv", conv_cases},
        {"norm", norm_cases},     {"dpsa", dpsa_cases},     {"losses", loss_cases},
        {"modules", module_cases}, {"end_to_end", end_to_end_cases}};
    return r;
}

}  // namespace

std::vector<std::string> gradcheck_modules() {
    std::vector<std::string> names;
    for (const auto& [name, _] : registry()) names.push_back(name);
    return names;
}

std::vector<GradCheckResult> run_gradcheck_suite(const std::string& module, std::uint64_t seed,
                                                 std::optional<double> tolerance) {
    bool matched = false;
    std::vector<GradCheckResult> results;
    for (const auto& [name, build] : registry()) {
        if (module != "all" && module != name) continue;
        matched = true;
        Suite suite(seed);
        for (auto& cs : build(suite)) {
            GradCheckOptions opts;
            opts.seed = seed;
            opts.max_entries = cs.max_entries;
            auto r = check_gradients(cs.name, cs.fn, cs.inputs, tolerance.value_or(cs.tolerance), opts);
            r.module = name;
            results.push_back(std::move(r));
        }
    }
    if (!matched) throw ConfigError("unknown gradcheck module '" + module + "'");
    return results;
}

}  // namespace vctr
