// vctr: command-line front end for the voice-conversion transformer stack.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include "vctr/bench.hpp"
#include "vctr/checkpoint.hpp"
#include "vctr/discriminator.hpp"
#include "vctr/gradcheck.hpp"
#include "vctr/kernels.hpp"
#include "vctr/mel.hpp"
#include "vctr/training.hpp"

using namespace vctr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path + ": " + e.what(), e.byte);
    }
}

// ---- bench-attn -----------------------------------------------------------

struct BenchArgs {
    BenchOptions opts;
    std::size_t ns = 0;
    std::string csv;
};

int cmd_bench(const BenchArgs& a) {
    BenchOptions opts = a.opts;
    if (a.ns) opts.n_s = a.ns;
    const BenchResult r = bench_attention(opts);
    fmt::print("grid {}x{}  C={}  heads={}  n_s={}  trials={}\n", r.height, r.width, r.channels, r.heads, r.n_s,
               r.trials);
    fmt::print("  attention MACs   dense {:>14}  dpsa {:>14}  ratio {:.6g}\n", r.dense_macs, r.dpsa_macs,
               r.mac_ratio());
    fmt::print("  scoring MACs     {:>14}\n", r.dpsa_scoring_macs);
    fmt::print("  median ms        dense {:>14.3f}  dpsa {:>14.3f}  speedup {:.3g}x\n", r.dense_ms, r.dpsa_ms,
               r.time_ratio());
    if (!std::isnan(r.max_abs_diff)) {
        fmt::print("  full-budget equivalence: max |dense - dpsa| = {:.3g}\n", r.max_abs_diff);
        if (r.max_abs_diff > 1e-10) {
            fmt::print(stderr, "error: pruned attention with n_s = {} does not match dense attention\n", r.n_s);
            return kExitFailure;
        }
    }
    if (!a.csv.empty()) {
        std::ofstream out(a.csv);
        out << bench_csv({r});
        if (!out) throw std::runtime_error("cannot write " + a.csv);
    }
    return kExitOk;
}

// ---- gradcheck ------------------------------------------------------------

int cmd_gradcheck(const std::string& module, std::uint64_t seed, std::optional<double> tol) {
    const auto results = run_gradcheck_suite(module, seed, tol);
    std::size_t failed = 0;
    for (const auto& r : results) {
        fmt::print("{:<4} {:<11} {:<34} err {:.3e}  tol {:.0e}  ({} entries)\n", r.pass ? "ok" : "FAIL", r.module,
                   r.name, r.error, r.tolerance, r.entries);
        failed += !r.pass;
    }
    fmt::print("{} checks, {} failed\n", results.size(), failed);
    return failed ? kExitFailure : kExitOk;
}

// ---- mel ------------------------------------------------------------------

int cmd_mel(const std::string& in, const std::string& out, bool split) {
    SignalConfig cfg;
    WavData wav = load_wav(in);
    if (wav.sample_rate != cfg.sample_rate) wav.samples = resample(wav.samples, wav.sample_rate, cfg.sample_rate);
    std::vector<std::vector<double>> clips;
    if (split) {
        Segmentation seg = segment(wav.samples, cfg);
        if (!seg.warning.empty()) fmt::print(stderr, "warning: {}\n", seg.warning);
        if (seg.discarded_samples)
            fmt::print("discarded {} trailing samples ({:.3f} s)\n", seg.discarded_samples,
                       static_cast<double>(seg.discarded_samples) / cfg.sample_rate);
        clips = std::move(seg.segments);
    } else {
        clips.push_back(std::move(wav.samples));
    }
    for (std::size_t i = 0; i < clips.size(); ++i) {
        const MelSpectrogram mel = normalize(log_mel_spectrogram(clips[i], cfg));
        std::string path = out;
        if (split) {
            const auto dot = out.rfind('.');
            path = dot == std::string::npos ? fmt::format("{}_{:03}", out, i)
                                            : fmt::format("{}_{:03}{}", out.substr(0, dot), i, out.substr(dot));
        }
        write_melb(path, mel);
        fmt::print("{}: {} bands x {} frames\n", path, mel.bands, mel.frames);
    }
    return kExitOk;
}

// ---- train-toy ------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::size_t steps = 0;
    std::optional<std::uint64_t> seed;
    std::string log;
    std::string checkpoint;
    std::string resume;
    std::string export_path;
};

int cmd_train(const TrainArgs& a) {
    TrainConfig cfg = a.config.empty() ? TrainConfig::desk_default() : train_config_from_json(read_json_file(a.config));
    if (a.seed) cfg.seed = *a.seed;
    if (a.steps) cfg.total_steps = a.steps;
    cfg.validate();
    ToyDomains data = make_toy_domains(cfg.seed, cfg.toy_samples);
    Trainer trainer(cfg, data.a, data.b);
    if (!a.resume.empty()) {
        trainer.restore(load_checkpoint(a.resume));
        fmt::print("resumed at step {}\n", trainer.steps_done());
    }
    std::ofstream log_file;
    std::ostream* log = &std::cout;
    if (!a.log.empty()) {
        log_file.open(a.log);
        if (!log_file) throw std::runtime_error("cannot write " + a.log);
        log = &log_file;
    }
    *log << Trainer::log_header() << '\n';
    const std::size_t remaining = cfg.total_steps > trainer.steps_done() ? cfg.total_steps - trainer.steps_done() : 0;
    trainer.run(remaining, log);
    fmt::print(stderr, "done: {} steps, {} skipped, {} NaN events\n", trainer.steps_done(), trainer.skipped_steps(),
               trainer.nan_events());
    if (!a.checkpoint.empty()) trainer.save(a.checkpoint);
    if (!a.export_path.empty()) {
        Checkpoint ckpt;
        ckpt.config = {{"kind", "generator"}, {"scalar_bytes", 4}, {"generator", to_json(trainer.generator().config())}};
        add_tensors(ckpt, trainer.generator().parameters(), "");
        save_checkpoint(a.export_path, ckpt);
    }
    return kExitOk;
}

// ---- convert --------------------------------------------------------------

int cmd_convert(const std::string& ckpt_path, const std::string& in, const std::string& out) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const std::string kind = ckpt.config.value("kind", "");
    if (kind != "generator" && kind != "trainer")
        throw CompatibilityError(ckpt_path + ": not a generator or trainer checkpoint");
    GeneratorConfig gcfg;
    try {
        gcfg = generator_config_from_json(ckpt.config.at("generator"));
    } catch (const std::exception& e) {
        throw CompatibilityError(ckpt_path + ": bad generator config: " + e.what());
    }
    Rng rng(0);
    Generator gen(gcfg, rng);
    restore_tensors(ckpt, gen.parameters(), kind == "trainer" ? "G/" : "");

    const MelSpectrogram src = read_melb(in);
    if (gcfg.in_channels != 1) throw CompatibilityError("generator expects " + std::to_string(gcfg.in_channels) + " channels; MELB input has 1");
    if (src.bands % 4 || src.frames % 4)
        throw CompatibilityError(fmt::format("{}: {} x {} mel is not divisible by 4 in both axes", in, src.bands,
                                             src.frames));
    NoGradScope no_grad;
    const Tensor y = gen.forward(src.to_tensor());
    write_melb(out, MelSpectrogram::from_tensor(y, src.norm_min, src.norm_max));
    fmt::print("{}: {} bands x {} frames\n", out, src.bands, src.frames);
    return kExitOk;
}

// ---- param-count ----------------------------------------------------------

int cmd_param_count(const std::string& config, std::size_t base, std::size_t height, std::size_t width) {
    TrainConfig cfg = config.empty() ? TrainConfig::desk_default() : train_config_from_json(read_json_file(config));
    if (base) {
        cfg.generator.base_channels = base;
        cfg.discriminator.base_channels = base;
    }
    const GeneratorConfig g = cfg.resolved_generator();
    g.validate();
    if (height % 4 || width % 4) throw ConfigError("input height and width must be multiples of 4");
    std::uint64_t params = 0, macs = 0;
    fmt::print("generator (base {}, {} HPBs) at {}x{}\n", g.base_channels, g.n_hpb, height, width);
    fmt::print("  {:<18} {:>14} {:>16}\n", "module", "params", "MACs");
    for (const auto& m : generator_cost(g, height, width)) {
        fmt::print("  {:<18} {:>14} {:>16}\n", m.name, m.params, m.macs);
        params += m.params;
        macs += m.macs;
    }
    fmt::print("  {:<18} {:>14} {:>16}\n", "total", params, macs);
    for (const auto& m : discriminator_cost(cfg.discriminator, height, width))
        fmt::print("{} (base {}): params {}  MACs {}\n", m.name, cfg.discriminator.base_channels, m.params, m.macs);
    return kExitOk;
}

// ---- similarity -----------------------------------------------------------

int cmd_similarity(const std::string& a, const std::string& b) {
    const Similarity s = spectral_similarity(read_melb(a), read_melb(b));
    if (!s.warning.empty()) fmt::print(stderr, "warning: {}\n", s.warning);
    fmt::print("{:.12f}\n", s.score);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vctr: pruned-attention voice conversion toolkit"};
    app.require_subcommand(1);
    std::string isa;
    app.add_option("--isa", isa, "Kernel variant: scalar or avx2 (default: best available)");

    BenchArgs bench;
    auto* b = app.add_subcommand("bench-attn", "Time and count MACs for pruned vs dense attention");
    b->add_option("--height", bench.opts.height)->check(CLI::PositiveNumber);
    b->add_option("--width", bench.opts.width)->check(CLI::PositiveNumber);
    b->add_option("--channels", bench.opts.channels)->check(CLI::PositiveNumber);
    b->add_option("--heads", bench.opts.heads)->check(CLI::PositiveNumber);
    b->add_option("--ns", bench.ns, "Tokens kept per axis (default floor(sqrt(H)))")->check(CLI::PositiveNumber);
    b->add_option("--trials", bench.opts.trials)->check(CLI::Range(5, 100000));
    b->add_option("--seed", bench.opts.seed);
    b->add_option("--csv", bench.csv, "Also write the result as CSV");

    std::string gc_module = "all";
    std::uint64_t gc_seed = 0;
    std::optional<double> gc_tol;
    auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    g->add_option("--module", gc_module, "all or one of: " + fmt::format("{}", fmt::join(gradcheck_modules(), ", ")));
    g->add_option("--seed", gc_seed);
    g->add_option("--tolerance", gc_tol)->check(CLI::NonNegativeNumber);

    std::string mel_in, mel_out;
    bool mel_segment = false;
    auto* m = app.add_subcommand("mel", "WAV to normalised log-mel MELB");
    m->add_option("--in", mel_in)->required()->check(CLI::ExistingFile);
    m->add_option("--out", mel_out)->required();
    m->add_flag("--segment", mel_segment, "Split into 2 s segments, one file each");

    TrainArgs train;
    auto* t = app.add_subcommand("train-toy", "Train on synthetic toy domains");
    t->add_option("--config", train.config, "JSON training config")->check(CLI::ExistingFile);
    t->add_option("--steps", train.steps, "Override total_steps");
    t->add_option("--seed", train.seed);
    t->add_option("--log", train.log, "CSV loss log (default stdout)");
    t->add_option("--checkpoint", train.checkpoint, "Write a resumable checkpoint at the end");
    t->add_option("--resume", train.resume, "Resume from a checkpoint")->check(CLI::ExistingFile);
    t->add_option("--export", train.export_path, "Write a generator-only f32 checkpoint");

    std::string cv_ckpt, cv_in, cv_out;
    auto* c = app.add_subcommand("convert", "Run the generator on a MELB file");
    c->add_option("--checkpoint", cv_ckpt)->required()->check(CLI::ExistingFile);
    c->add_option("--in", cv_in)->required()->check(CLI::ExistingFile);
    c->add_option("--out", cv_out)->required();

    std::string pc_config;
    std::size_t pc_base = 0, pc_height = 80, pc_width = 184;
    auto* p = app.add_subcommand("param-count", "Exact parameter and MAC counts");
    p->add_option("--config", pc_config)->check(CLI::ExistingFile);
    p->add_option("--base", pc_base, "Override base_channels");
    p->add_option("--height", pc_height)->check(CLI::PositiveNumber);
    p->add_option("--width", pc_width)->check(CLI::PositiveNumber);

    std::string sim_a, sim_b;
    auto* s = app.add_subcommand("similarity", "Cosine similarity of spectral-statistics embeddings (proxy)");
    s->add_option("--a", sim_a)->required()->check(CLI::ExistingFile);
    s->add_option("--b", sim_b)->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (!isa.empty()) {
            kernels::Isa chosen;
            if (!kernels::parse_isa(isa, chosen)) throw ConfigError("unknown --isa '" + isa + "'");
            if (!kernels::isa_supported(chosen)) throw ConfigError("--isa " + isa + " is not available on this CPU");
            kernels::set_isa(chosen);
        }
        if (*b) return cmd_bench(bench);
        if (*g) return cmd_gradcheck(gc_module, gc_seed, gc_tol);
        if (*m) return cmd_mel(mel_in, mel_out, mel_segment);
        if (*t) return cmd_train(train);
        if (*c) return cmd_convert(cv_ckpt, cv_in, cv_out);
        if (*p) return cmd_param_count(pc_config, pc_base, pc_height, pc_width);
        if (*s) return cmd_similarity(sim_a, sim_b);
    } catch (const ConfigError& e) {
        fmt::print(stderr, "usage error: {}\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitFailure;
    }
    return kExitFailure;
}
