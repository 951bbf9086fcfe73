#include <gtest/gtest.h>

#include <algorithm>

#include "vctr/gradcheck.hpp"
#include "vctr/ops.hpp"

using namespace vctr;

TEST(GradcheckSuite, EveryModulePasses) {
    const auto results = run_gradcheck_suite("all", 0);
    EXPECT_GE(results.size(), 50u);
    for (const auto& r : results) EXPECT_TRUE(r.pass) << r.module << "/" << r.name << " err " << r.error;
    auto modules = gradcheck_modules();
    for (const auto& m : modules) {
        const bool present =
            std::any_of(results.begin(), results.end(), [&](const GradCheckResult& r) { return r.module == m; });
        EXPECT_TRUE(present) << m;
    }
}

TEST(GradcheckSuite, ZeroToleranceFails) {
    const auto results = run_gradcheck_suite(gradcheck_modules().front(), 1, 0.0);
    ASSERT_FALSE(results.empty());
    EXPECT_TRUE(std::any_of(results.begin(), results.end(), [](const GradCheckResult& r) { return !r.pass; }));
}

TEST(GradcheckSuite, UnknownModuleIsAConfigError) {
    EXPECT_THROW(run_gradcheck_suite("flux-capacitor", 0), ConfigError);
}

TEST(GradcheckCore, CatchesAWrongGradient) {
    // Forward is x^2 but the recorded backward claims 3x.
    auto wrong = [](const std::vector<Tensor>& in) {
        Tensor x = in[0];
        std::vector<double> v;
        for (double a : x.data()) v.push_back(a * a);
        return detail::make_result(x.shape(), std::move(v), {&x}, [x](const detail::Node& out) mutable {
            auto g = x.mutable_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += 3.0 * x.at(i) * out.grad[i];
        });
    };
    const Tensor x = Tensor::from_data({3}, {0.5, -1.0, 2.0});
    EXPECT_FALSE(check_gradients("wrong", wrong, {x}, 1e-4).pass);
    auto right = [](const std::vector<Tensor>& in) { return mul(in[0], in[0]); };
    const auto r = check_gradients("right", right, {x}, 1e-6);
    EXPECT_TRUE(r.pass) << r.error;
    EXPECT_EQ(r.entries, 3u);
}
