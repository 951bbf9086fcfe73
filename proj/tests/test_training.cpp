#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "support.hpp"
#include "vctr/training.hpp"

using namespace vctr;

namespace {

TrainConfig tiny(std::uint64_t seed = 3) {
    TrainConfig c = TrainConfig::desk_default();
    c.seed = seed;
    c.total_steps = 20;
    c.generator.base_channels = 4;
    c.generator.n_hpb = 2;
    c.generator.num_heads = 2;
    c.discriminator.base_channels = 4;
    c.nce.layer_ids = {0, 4, 7, 8};
    c.nce.num_patches = 16;
    c.nce.proj_dim = 8;
    return c;
}

ToyDomains tiny_data() { return make_toy_domains(5, 3, 32, 40); }

Trainer tiny_trainer(const TrainConfig& cfg) {
    auto d = tiny_data();
    return Trainer(cfg, d.a, d.b);
}

}  // namespace

TEST(Schedule, ConstantThenLinearDecay) {
    TrainConfig c;
    c.total_steps = 1000;
    EXPECT_EQ(c.constant_steps(), 850u);
    EXPECT_DOUBLE_EQ(lr_schedule(0, c), 2e-4);
    EXPECT_DOUBLE_EQ(lr_schedule(849, c), 2e-4);
    EXPECT_DOUBLE_EQ(lr_schedule(850, c), 2e-4);
    EXPECT_DOUBLE_EQ(lr_schedule(925, c), 1e-4);
    EXPECT_DOUBLE_EQ(lr_schedule(1000, c), 0.0);
    EXPECT_DOUBLE_EQ(lr_schedule(5000, c), 0.0);
    EXPECT_DOUBLE_EQ(lr_schedule(300.0, 2e-4, 400.0, 200.0), 1e-4);
    EXPECT_THROW(lr_schedule(1.0, 1.0, 10.0, 0.0), ConfigError);
}

TEST(AdamOptimizer, FirstStepMovesByLearningRate) {
    Tensor w = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
    Adam opt({{"w", w}}, 0.5, 0.999, 1e-8);
    {
        auto g = w.mutable_grad();
        g[0] = 3.0;
        g[1] = -0.01;
        g[2] = 0.0;
    }
    ASSERT_TRUE(opt.step(0.1));
    // Bias-corrected first step is lr * g / (|g| + eps).
    EXPECT_NEAR(w.at(0), 1.0 - 0.1 * 3.0 / (3.0 + 1e-8), 1e-15);
    EXPECT_NEAR(w.at(1), -2.0 + 0.1 * 0.01 / (0.01 + 1e-8), 1e-15);
    EXPECT_EQ(w.at(2), 0.5);
    EXPECT_EQ(opt.steps_taken(), 1u);
}

TEST(AdamOptimizer, MatchesScalarRecurrence) {
    Rng rng(1);
    Tensor w = test::randn({5}, rng, 1.0, true);
    const auto w0 = test::values(w);
    const double b1 = 0.5, b2 = 0.999, eps = 1e-8, lr = 2e-4;
    Adam opt({{"w", w}}, b1, b2, eps);
    std::vector<std::vector<double>> grads{{0.3, -1.0, 2.0, 0.0, 1e-3}, {-0.1, -1.5, 0.5, 0.2, 1e-3}};
    std::vector<double> x = w0, m(5, 0.0), v(5, 0.0);
    for (std::size_t t = 1; t <= grads.size(); ++t) {
        w.zero_grad();
        auto g = w.mutable_grad();
        std::copy(grads[t - 1].begin(), grads[t - 1].end(), g.begin());
        ASSERT_TRUE(opt.step(lr));
        for (std::size_t k = 0; k < 5; ++k) {
            const double gk = grads[t - 1][k];
            m[k] = b1 * m[k] + (1 - b1) * gk;
            v[k] = b2 * v[k] + (1 - b2) * gk * gk;
            const double mh = m[k] / (1 - std::pow(b1, t)), vh = v[k] / (1 - std::pow(b2, t));
            x[k] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(w.at(k), x[k], 1e-12);
}

TEST(AdamOptimizer, RefusesNonFiniteGradients) {
    Tensor w = Tensor::from_data({2}, {1.0, 2.0}, true);
    Adam opt({{"w", w}}, 0.5, 0.999, 1e-8);
    w.mutable_grad()[1] = NAN;
    EXPECT_FALSE(opt.step(0.1));
    EXPECT_EQ(test::values(w), (std::vector<double>{1.0, 2.0}));
    EXPECT_EQ(opt.steps_taken(), 0u);
    EXPECT_EQ(opt.first_moment(0)[0], 0.0);
}

TEST(AdamOptimizer, StateRoundTripsThroughCheckpoint) {
    Tensor w = Tensor::from_data({2}, {1.0, 2.0}, true);
    Adam a({{"w", w}}, 0.5, 0.999, 1e-8);
    w.mutable_grad()[0] = 0.7;
    a.step(0.1);
    Checkpoint c;
    a.save_state(c, "opt/");
    Tensor w2 = Tensor::from_data({2}, {1.0, 2.0}, true);
    Adam b({{"w", w2}}, 0.5, 0.999, 1e-8);
    b.load_state(c, "opt/");
    EXPECT_EQ(b.steps_taken(), 1u);
    EXPECT_EQ(b.first_moment(0)[0], a.first_moment(0)[0]);
    EXPECT_EQ(b.second_moment(0)[0], a.second_moment(0)[0]);
    EXPECT_THROW(b.load_state(c, "other/"), CompatibilityError);
}

TEST(GradClip, BoundsGlobalNorm) {
    Tensor a = Tensor::from_data({2}, {0, 0}, true), b = Tensor::from_data({1}, {0}, true);
    a.mutable_grad()[0] = 3.0;
    a.mutable_grad()[1] = 0.0;
    b.mutable_grad()[0] = 4.0;
    const ParamList ps{{"a", a}, {"b", b}};
    EXPECT_DOUBLE_EQ(global_grad_norm(ps), 5.0);
    EXPECT_NEAR(clip_grad_norm(ps, 1.0), 1.0, 1e-15);
    EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
    EXPECT_NEAR(b.grad()[0], 0.8, 1e-15);
    EXPECT_NEAR(clip_grad_norm(ps, 10.0), 1.0, 1e-15);
}

TEST(ToyData, DeterministicBoundedAndSeparable) {
    const auto d1 = make_toy_domains(9, 60, 80, 32), d2 = make_toy_domains(9, 60, 80, 32);
    ASSERT_EQ(d1.a.size(), 60u);
    for (std::size_t i = 0; i < d1.a.size(); ++i) EXPECT_EQ(test::values(d1.a[i]), test::values(d2.a[i]));
    EXPECT_NE(test::values(make_toy_domains(10, 1, 80, 32).a[0]), test::values(d1.a[0]));

    // Nearest class centroid on the time-averaged band profile, fitted on
    // half the samples and scored on the rest.
    auto profile = [](const Tensor& t) {
        std::vector<double> p(t.dim(1), 0.0);
        for (std::size_t b = 0; b < t.dim(1); ++b)
            for (std::size_t f = 0; f < t.dim(2); ++f) p[b] += t.at(b * t.dim(2) + f) / static_cast<double>(t.dim(2));
        return p;
    };
    std::vector<double> ca(80, 0.0), cb(80, 0.0);
    for (std::size_t i = 0; i < 30; ++i) {
        const auto pa = profile(d1.a[i]), pb = profile(d1.b[i]);
        for (std::size_t b = 0; b < 80; ++b) {
            ca[b] += pa[b] / 30.0;
            cb[b] += pb[b] / 30.0;
        }
    }
    auto dist = [](const std::vector<double>& x, const std::vector<double>& y) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
        return s;
    };
    std::size_t correct = 0;
    for (std::size_t i = 30; i < 60; ++i) {
        for (const auto* set : {&d1.a, &d1.b}) {
            const auto p = profile((*set)[i]);
            const bool says_a = dist(p, ca) < dist(p, cb);
            correct += says_a == (set == &d1.a);
        }
        for (const auto* set : {&d1.a, &d1.b})
            for (double v : (*set)[i].data()) ASSERT_TRUE(v >= -1.0 && v <= 1.0);
    }
    EXPECT_GE(correct, 57u);
}

TEST(ConfigJson, RoundTripsAndRejectsUnknownKeys) {
    TrainConfig c = tiny();
    c.grad_clip = 5.0;
    c.ablation.no_l2norm = true;
    c.generator.n_s_override = 3;
    c.objective = GanObjective::least_squares;
    const auto j = to_json(c);
    EXPECT_EQ(to_json(train_config_from_json(j)), j);

    nlohmann::json bad = j;
    bad["learning_rate"] = 1.0;
    try {
        train_config_from_json(bad);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
    }
    bad = j;
    bad["generator"]["heads"] = 2;
    EXPECT_THROW(train_config_from_json(bad), ConfigError);
    bad = j;
    bad["nce"] = {{"preset", "identity"}};
    const auto ident = train_config_from_json(bad);
    EXPECT_EQ(ident.nce.lambda_y, 1.0);
    bad["nce"] = {{"preset", "both"}};
    EXPECT_THROW(train_config_from_json(bad), ConfigError);
    EXPECT_EQ(train_config_from_json(nlohmann::json::object()).nce.lambda_x, 10.0);
}

TEST(TrainerRun, SkipsIdentityPassWhenItsWeightIsZero) {
    TrainConfig c = tiny();
    Trainer t = tiny_trainer(c);
    const std::size_t before = t.generator().forward_count();
    const auto r = t.step();
    // G(x), then encoder taps of G(x); no G(y) pass.
    EXPECT_EQ(t.generator().forward_count() - before, 2u);
    EXPECT_EQ(r.loss.nce_y, 0.0);

    c.nce.lambda_y = 1.0;
    Trainer u = tiny_trainer(c);
    const std::size_t b2 = u.generator().forward_count();
    const auto r2 = u.step();
    EXPECT_EQ(u.generator().forward_count() - b2, 4u);
    EXPECT_GT(r2.loss.nce_y, 0.0);
    EXPECT_NEAR(r2.loss.total, r2.loss.gan_g + c.nce.lambda_x * r2.loss.nce_x + r2.loss.nce_y, 1e-12);
}

TEST(TrainerRun, DiscriminatorStepLeavesGeneratorAlone) {
    Trainer t = tiny_trainer(tiny());
    for (int i = 0; i < 3; ++i) {
        const auto r = t.step();
        EXPECT_FALSE(r.skipped);
        EXPECT_TRUE(r.loss.finite());
        EXPECT_FALSE(t.d_step_touched_generator());
        EXPECT_GT(t.last_generator_grad_norm(), 0.0);
    }
    EXPECT_EQ(t.steps_done(), 3u);
}

TEST(TrainerRun, SeededRunsAreBitIdentical) {
    Trainer a = tiny_trainer(tiny(7)), b = tiny_trainer(tiny(7));
    std::ostringstream la, lb;
    a.run(3, &la);
    b.run(3, &lb);
    EXPECT_EQ(la.str(), lb.str());
    const std::string text = la.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
    Trainer c = tiny_trainer(tiny(8));
    std::ostringstream lc;
    c.run(3, &lc);
    EXPECT_NE(la.str(), lc.str());
}

TEST(TrainerRun, ResumeContinuesExactly) {
    Trainer full = tiny_trainer(tiny());
    const auto ref = full.run(4);

    Trainer first = tiny_trainer(tiny());
    first.run(2);
    const auto bytes = encode_checkpoint(first.checkpoint());
    Trainer second = tiny_trainer(tiny(99));
    EXPECT_THROW(second.restore(decode_checkpoint(bytes)), CompatibilityError);
    // Extending the run is allowed; only total_steps may differ.
    TrainConfig longer = tiny();
    longer.total_steps = 40;
    EXPECT_NO_THROW(tiny_trainer(longer).restore(decode_checkpoint(bytes)));
    Trainer resumed = tiny_trainer(tiny());
    resumed.restore(decode_checkpoint(bytes));
    EXPECT_EQ(resumed.steps_done(), 2u);
    const auto tail = resumed.run(2);
    EXPECT_EQ(tail[0], ref[2]);
    EXPECT_EQ(tail[1], ref[3]);
    const auto p1 = full.generator_side_parameters(), p2 = resumed.generator_side_parameters();
    for (std::size_t i = 0; i < p1.size(); ++i) ASSERT_EQ(test::values(p1[i].tensor), test::values(p2[i].tensor));
}

TEST(TrainerRun, NonFiniteStepsAreSkippedThenAbort) {
    TrainConfig c = tiny();
    c.max_consecutive_skips = 3;
    Trainer t = tiny_trainer(c);
    const auto data = tiny_data();
    Tensor bad = Tensor::from_data(data.a[0].shape(), test::values(data.a[0]));
    bad.mutable_data()[5] = NAN;
    const auto before = test::values(t.generator_side_parameters()[0].tensor);
    EXPECT_TRUE(t.step_on(bad, data.b[0]).skipped);
    EXPECT_EQ(t.skipped_steps(), 1u);
    EXPECT_EQ(t.steps_done(), 1u);
    EXPECT_EQ(test::values(t.generator_side_parameters()[0].tensor), before);
    EXPECT_FALSE(t.step_on(data.a[0], data.b[0]).skipped);
    EXPECT_TRUE(t.step_on(bad, data.b[0]).skipped);
    EXPECT_TRUE(t.step_on(bad, data.b[0]).skipped);
    EXPECT_THROW(t.step_on(bad, data.b[0]), TrainingAborted);
}

TEST(TrainerRun, RejectsBadInputs) {
    const auto d = tiny_data();
    EXPECT_THROW(Trainer(tiny(), {}, d.b), ConfigError);
    EXPECT_THROW(Trainer(tiny(), {Tensor::zeros({1, 30, 40})}, d.b), ConfigError);
    TrainConfig c = tiny();
    c.nce.layer_ids = {0, 9};
    EXPECT_THROW(Trainer(c, d.a, d.b), ConfigError);
    EXPECT_EQ(Trainer::log_header(), "step,lr,gan_g,gan_d,nce_x,nce_y,total");
}
