#include <gtest/gtest.h>

#include "support.hpp"
#include "vctr/discriminator.hpp"
#include "vctr/gradcheck.hpp"
#include "vctr/mac_counter.hpp"

using namespace vctr;

namespace {

DiscriminatorConfig small(bool norm = true) {
    DiscriminatorConfig c;
    c.base_channels = 4;
    c.instance_norm = norm;
    return c;
}

std::size_t out_size(std::size_t n, std::size_t stride) { return (n + 2 - 4) / stride + 1; }

}  // namespace

TEST(Discriminator, ReceptiveFieldIs70) {
    Rng rng(1);
    EXPECT_EQ(PatchDiscriminator(small(), rng).receptive_field(), 70u);
}

TEST(Discriminator, OutputShapeFollowsStrides) {
    Rng rng(2);
    PatchDiscriminator d(small(), rng);
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{80, 184}, {64, 64}, {40, 52}}) {
        std::size_t eh = h, ew = w;
        for (std::size_t s : {2, 2, 2, 1, 1}) {
            eh = out_size(eh, s);
            ew = out_size(ew, s);
        }
        EXPECT_EQ(d.output_shape(h, w), (Shape{1, eh, ew}));
        NoGradScope ng;
        EXPECT_EQ(d.forward(test::uniform({1, h, w}, rng, -1.0, 1.0)).shape(), (Shape{1, eh, ew}));
    }
    EXPECT_EQ(d.output_shape(80, 184), (Shape{1, 8, 21}));
}

TEST(Discriminator, ZeroWeightsGiveZeroLogits) {
    Rng rng(3);
    PatchDiscriminator d(small(), rng);
    for (auto& p : d.parameters()) {
        Tensor t = p.tensor;
        for (double& v : t.mutable_data()) v = 0.0;
    }
    NoGradScope ng;
    const Tensor y = d.forward(test::uniform({1, 64, 64}, rng, -1.0, 1.0));
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Discriminator, RejectsWrongChannelCount) {
    Rng rng(4);
    PatchDiscriminator d(small(), rng);
    EXPECT_THROW(d.forward(Tensor::zeros({2, 64, 64})), ShapeError);
    DiscriminatorConfig bad = small();
    bad.n_layers = 0;
    EXPECT_THROW(PatchDiscriminator(bad, rng), ConfigError);
}

TEST(Discriminator, InteriorLogitsAreTranslationCovariant) {
    Rng rng(5);
    PatchDiscriminator d(small(false), rng);
    const std::size_t big = 136, crop = 128, shift = 8;
    const Tensor x = test::uniform({1, big, big}, rng, -1.0, 1.0);
    auto cut = [&](std::size_t o) {
        std::vector<double> v(crop * crop);
        for (std::size_t y = 0; y < crop; ++y)
            for (std::size_t c = 0; c < crop; ++c) v[y * crop + c] = x.at((y + o) * big + c + o);
        return Tensor::from_data({1, crop, crop}, v);
    };
    NoGradScope ng;
    const Tensor a = d.forward(cut(0)), b = d.forward(cut(shift));
    const std::size_t ow = a.dim(2);
    // Logits whose whole field lies inside both crops.
    for (std::size_t i = 3; i <= 9; ++i)
        for (std::size_t j = 3; j <= 9; ++j) EXPECT_NEAR(b.at(i * ow + j), a.at((i + 1) * ow + j + 1), 1e-12);
}

TEST(Discriminator, CostMatchesRecorderAndParameters) {
    Rng rng(6);
    PatchDiscriminator d(small(), rng);
    MacRecorder rec;
    {
        NoGradScope ng;
        d.forward(test::uniform({1, 80, 184}, rng, -1.0, 1.0));
    }
    const auto cost = discriminator_cost(small(), 80, 184);
    ASSERT_EQ(cost.size(), 1u);
    EXPECT_EQ(cost[0].params, count_parameters(d.parameters()));
    EXPECT_EQ(rec.buckets().at("discriminator"), cost[0].macs);
}

TEST(Discriminator, GradientMatchesFiniteDifferences) {
    Rng rng(7);
    DiscriminatorConfig cfg = small();
    cfg.base_channels = 2;
    PatchDiscriminator d(cfg, rng);
    std::vector<Tensor> inputs{test::uniform({1, 32, 32}, rng, -1.0, 1.0)};
    for (auto& p : d.parameters()) inputs.push_back(p.tensor);
    GradCheckOptions o;
    o.max_entries = 6;
    const auto r = check_gradients("disc", [&](const std::vector<Tensor>& in) { return d.forward(in[0]); }, inputs,
                                   1e-4, o);
    EXPECT_TRUE(r.pass) << r.error;
}
