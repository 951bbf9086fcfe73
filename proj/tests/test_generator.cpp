#include <gtest/gtest.h>

#include <set>

#include "support.hpp"
#include "vctr/generator.hpp"
#include "vctr/gradcheck.hpp"
#include "vctr/mac_counter.hpp"

using namespace vctr;
using test::randn;

namespace {

GeneratorConfig small(std::size_t base = 4, std::size_t n_hpb = 2) {
    GeneratorConfig c;
    c.base_channels = base;
    c.n_hpb = n_hpb;
    c.num_heads = 2;
    return c;
}

Tensor mel_like(std::size_t h, std::size_t w, Rng& rng) { return test::uniform({1, h, w}, rng, -1.0, 1.0); }

}  // namespace

TEST(Generator, PreservesShapeAndStaysInTanhRange) {
    Rng rng(1);
    Generator g(small(), rng);
    const Tensor x = mel_like(80, 168, rng);
    NoGradScope ng;
    const Tensor y = g.forward(x);
    EXPECT_EQ(y.shape(), x.shape());
    for (double v : y.data()) EXPECT_LT(std::abs(v), 1.0);
}

TEST(Generator, ZeroHeadGivesZeroOutput) {
    Rng rng(2);
    Generator g(small(), rng);
    for (auto& p : g.parameters())
        if (p.name.rfind("decoder.head", 0) == 0) {
            Tensor t = p.tensor;
            for (double& v : t.mutable_data()) v = 0.0;
        }
    NoGradScope ng;
    const Tensor y = g.forward(mel_like(16, 20, rng));
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Generator, RejectsIndivisibleInput) {
    Rng rng(3);
    Generator g(small(), rng);
    try {
        g.forward(Tensor::zeros({1, 18, 20}));
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("crop"), std::string::npos);
    }
    EXPECT_THROW(g.forward(Tensor::zeros({2, 16, 16})), ShapeError);
}

TEST(Generator, BottleneckIsQuarterResolution) {
    Rng rng(4);
    Generator g(small(), rng);
    const std::size_t id = 7;  // first HPB
    NoGradScope ng;
    const auto f = g.encode(mel_like(80, 80, rng), std::span(&id, 1));
    EXPECT_EQ(f[0].shape(), (Shape{16, 20, 20}));
}

TEST(Generator, EncoderTapsFollowTheDocumentedNumbering) {
    Rng rng(5);
    GeneratorConfig cfg = small(4, 9);
    Generator g(cfg, rng);
    EXPECT_EQ(g.num_encoder_layers(), 16u);
    const Tensor x = mel_like(16, 24, rng);
    NoGradScope ng;

    const std::size_t zero = 0;
    const auto f0 = g.encode(x, std::span(&zero, 1));
    EXPECT_EQ(f0[0].node(), x.node());

    const std::vector<std::size_t> ids{0, 4, 7, 10, 14};
    const auto f = g.encode(x, ids);
    ASSERT_EQ(f.size(), 5u);
    for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(f[i].dim(0), g.encoder_channels(ids[i]));
    for (std::size_t i = 1; i < f.size(); ++i) EXPECT_LE(f[i].numel() / f[i].dim(0), f[i - 1].numel() / f[i - 1].dim(0));
    EXPECT_EQ(f[1].shape(), (Shape{8, 8, 12}));

    const auto again = g.encode(x, ids);
    for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(test::values(f[i]), test::values(again[i]));

    std::vector<Tensor> taps;
    const Tensor y = g.forward_with_taps(x, ids, taps);
    EXPECT_EQ(test::values(y), test::values(g.forward(x)));
    for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(test::values(taps[i]), test::values(f[i]));

    const std::size_t bad = 16;
    try {
        g.encode(x, std::span(&bad, 1));
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("[0, 15]"), std::string::npos) << e.what();
    }
    EXPECT_THROW(g.encoder_channels(16), ConfigError);
}

TEST(Generator, StemReceptiveFieldIs13) {
    GeneratorConfig cfg = small();
    cfg.stem_norm = false;
    cfg.padding = PaddingMode::zero;
    Rng rng(6);
    Generator g(cfg, rng);
    const std::size_t h = 32, w = 36, stem_out = 6;
    Tensor x = mel_like(h, w, rng);
    // Influence of each input pixel on bottleneck token (3, 4).
    const std::size_t tr = 3, tc = 4;
    Tensor xin = Tensor::from_data(x.shape(), test::values(x), true);
    Tape tape;
    TapeScope scope(tape);
    const Tensor f = g.encode(xin, std::span(&stem_out, 1))[0];
    std::vector<double> sel(f.numel(), 0.0);
    const std::size_t fh = f.dim(1), fw = f.dim(2);
    for (std::size_t c = 0; c < f.dim(0); ++c) sel[(c * fh + tr) * fw + tc] = 1.0 + 0.1 * c;
    tape.backward(sum(mul(f, Tensor::from_data(f.shape(), sel))));
    std::set<std::size_t> rows, cols;
    std::size_t touched = 0;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx)
            if (xin.grad()[y * w + xx] != 0.0) {
                rows.insert(y);
                cols.insert(xx);
                ++touched;
            }
    EXPECT_EQ(touched, 169u);
    EXPECT_EQ(*rows.begin(), 4 * tr - 6);
    EXPECT_EQ(*rows.rbegin(), 4 * tr + 6);
    EXPECT_EQ(*cols.begin(), 4 * tc - 6);
    EXPECT_EQ(*cols.rbegin(), 4 * tc + 6);
}

TEST(Generator, CostModelMatchesRecorderAndParameters) {
    for (bool local : {true, false})
        for (bool global : {true, false}) {
            if (!local && !global) continue;
            GeneratorConfig cfg = small(4, 3);
            cfg.enable_local = local;
            cfg.enable_global = global;
            Rng rng(7);
            Generator g(cfg, rng);
            MacRecorder rec;
            {
                NoGradScope ng;
                g.forward(mel_like(24, 32, rng));
            }
            std::uint64_t params = 0;
            for (const auto& m : generator_cost(cfg, 24, 32)) {
                params += m.params;
                const auto it = rec.buckets().find(m.name);
                ASSERT_NE(it, rec.buckets().end()) << m.name;
                EXPECT_EQ(it->second, m.macs) << m.name;
            }
            EXPECT_EQ(params, count_parameters(g.parameters()));
            EXPECT_EQ(rec.buckets().count("hpb.local"), local ? 1u : 0u);
            if (global)
                EXPECT_GT(rec.total_with_prefix("dpsa"), 0u);
            else
                EXPECT_EQ(rec.total_with_prefix("dpsa"), 0u);
        }
}

TEST(Generator, NeedsABranch) {
    GeneratorConfig cfg = small();
    cfg.enable_local = cfg.enable_global = false;
    Rng rng(8);
    EXPECT_THROW(Generator(cfg, rng), ConfigError);
}

TEST(Hpb, GlobalBranchReachesAcrossTheGrid) {
    HpbConfig cfg;
    cfg.channels = 8;
    cfg.enable_local = false;
    cfg.attention.num_heads = 2;
    cfg.attention.n_s_override = 9;
    Rng rng(10);
    HybridPerceptionBlock block(cfg, rng);
    Tensor x = randn({8, 9, 9}, rng);
    Tensor y = Tensor::from_data(x.shape(), test::values(x));
    for (std::size_t c = 0; c < 8; ++c) y.mutable_data()[c * 81 + 80] += 1.0;
    NoGradScope ng;
    EXPECT_NE(block.forward(x).at(0), block.forward(y).at(0));
}

TEST(Hpb, SingleTokenWithoutLocalBranch) {
    HpbConfig cfg;
    cfg.channels = 8;
    cfg.enable_local = false;
    cfg.attention.num_heads = 2;
    Rng rng(11);
    HybridPerceptionBlock block(cfg, rng);
    NoGradScope ng;
    EXPECT_EQ(block.forward(randn({8, 1, 1}, rng)).shape(), (Shape{8, 1, 1}));
}

TEST(Hpb, GradientOnSixteenChannels) {
    HpbConfig cfg;
    cfg.channels = 16;
    cfg.attention.num_heads = 4;
    Rng rng(12);
    HybridPerceptionBlock block(cfg, rng);
    const Tensor x = randn({16, 6, 6}, rng);
    DpsaProbe first;
    {
        NoGradScope ng;
        block.forward(x, &first);
    }
    ParamList ps;
    block.collect(ps, "hpb");
    std::vector<Tensor> inputs{x};
    for (auto& p : ps) inputs.push_back(p.tensor);
    GradCheckOptions o;
    o.max_entries = 12;
    const auto r = check_gradients(
        "hpb",
        [&](const std::vector<Tensor>& in) {
            DpsaProbe probe;
            probe.frozen = &first.selections;
            return block.forward(in[0], &probe);
        },
        inputs, 1e-4, o);
    EXPECT_TRUE(r.pass) << r.error;
}

TEST(Generator, FullGradientAtBaseEight) {
    GeneratorConfig cfg;
    cfg.base_channels = 8;
    Rng rng(13);
    Generator g(cfg, rng);
    const Tensor x = mel_like(16, 16, rng);
    std::vector<Tensor> inputs{x};
    for (auto& p : g.parameters()) inputs.push_back(p.tensor);
    GradCheckOptions o;
    o.max_entries = 2;
    const auto r = check_gradients("generator", [&](const std::vector<Tensor>& in) { return g.forward(in[0]); },
                                   inputs, 1e-3, o);
    EXPECT_TRUE(r.pass) << r.error;
}
