#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <tuple>

#include "support.hpp"
#include "vctr/generator.hpp"
#include "vctr/kernels.hpp"

using namespace vctr;
namespace k = vctr::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    return v;
}

void naive_gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t kk, const double* a, std::size_t lda,
                const double* b, std::size_t ldb, double* c, std::size_t ldc, bool acc) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            long double s = 0.0L;
            for (std::size_t p = 0; p < kk; ++p) {
                const double av = ta ? a[p * lda + i] : a[i * lda + p];
                const double bv = tb ? b[j * ldb + p] : b[p * ldb + j];
                s += static_cast<long double>(av) * bv;
            }
            c[i * ldc + j] = static_cast<double>(s) + (acc ? c[i * ldc + j] : 0.0);
        }
}

bool have_avx2() { return k::isa_supported(k::Isa::avx2); }

}  // namespace

class GemmShapes : public ::testing::TestWithParam<std::tuple<bool, bool, std::size_t, std::size_t, std::size_t>> {};

TEST_P(GemmShapes, MatchesLoopOracleForEveryVariant) {
    const auto [ta, tb, m, n, kk] = GetParam();
    Rng rng(m * 1000003 + n * 101 + kk);
    const std::size_t lda = (ta ? m : kk) + 3, ldb = (tb ? kk : n) + 1, ldc = n + 2;
    const auto a = random_vec((ta ? kk : m) * lda, rng);
    const auto b = random_vec((tb ? n : kk) * ldb, rng);
    const auto c0 = random_vec(m * ldc, rng);

    for (bool acc : {false, true}) {
        std::vector<double> expect = c0;
        naive_gemm(ta, tb, m, n, kk, a.data(), lda, b.data(), ldb, expect.data(), ldc, acc);
        for (k::Isa isa : {k::Isa::scalar, k::Isa::avx2}) {
            if (!k::isa_supported(isa)) continue;
            std::vector<double> c = c0;
            k::table(isa).gemm(ta, tb, m, n, kk, a.data(), lda, b.data(), ldb, c.data(), ldc, acc);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j)
                    ASSERT_NEAR(c[i * ldc + j], expect[i * ldc + j], 1e-12 * (1.0 + static_cast<double>(kk)))
                        << k::isa_name(isa) << " at (" << i << "," << j << ")";
                // Padding columns beyond n are never written.
                for (std::size_t j = n; j < ldc; ++j) ASSERT_EQ(c[i * ldc + j], c0[i * ldc + j]);
            }
        }
    }
}

INSTANTIATE_TEST_SUITE_P(Kernels, GemmShapes,
                         ::testing::Combine(::testing::Bool(), ::testing::Bool(), ::testing::Values(1, 5, 13, 97),
                                            ::testing::Values(1, 7, 8, 33, 2050), ::testing::Values(1, 9, 300)));

TEST(Kernels, ZeroSizedGemmClearsOnlyWhenNotAccumulating) {
    std::vector<double> c{1.0, 2.0, 3.0, 4.0};
    for (k::Isa isa : {k::Isa::scalar, k::Isa::avx2}) {
        if (!k::isa_supported(isa)) continue;
        auto cc = c;
        k::table(isa).gemm(false, false, 2, 2, 0, nullptr, 1, nullptr, 2, cc.data(), 2, true);
        EXPECT_EQ(cc, c);
        k::table(isa).gemm(false, false, 2, 2, 0, nullptr, 1, nullptr, 2, cc.data(), 2, false);
        EXPECT_EQ(cc, std::vector<double>(4, 0.0));
    }
}

TEST(Kernels, DotAndAxpyAgreeAcrossVariants) {
    if (!have_avx2()) GTEST_SKIP() << "AVX2 not available";
    Rng rng(3);
    for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 9u, 31u, 1000u}) {
        const auto x = random_vec(n, rng);
        const auto y = random_vec(n, rng);
        const double ds = k::scalar_table().dot(x.data(), y.data(), n);
        const double dv = k::avx2_table()->dot(x.data(), y.data(), n);
        EXPECT_NEAR(ds, dv, 1e-13 * (1.0 + static_cast<double>(n)));
        auto ys = y, yv = y;
        k::scalar_table().axpy(0.37, x.data(), ys.data(), n);
        k::avx2_table()->axpy(0.37, x.data(), yv.data(), n);
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(ys[i], yv[i], 1e-15);
    }
}

TEST(Kernels, IsaNamesRoundTrip) {
    for (k::Isa isa : {k::Isa::scalar, k::Isa::avx2}) {
        k::Isa parsed{};
        ASSERT_TRUE(k::parse_isa(k::isa_name(isa), parsed));
        EXPECT_EQ(parsed, isa);
    }
    k::Isa out{};
    EXPECT_FALSE(k::parse_isa("neon9000", out));
    EXPECT_TRUE(k::isa_supported(k::Isa::scalar));
}

TEST(Kernels, ScopedIsaRestoresSelection) {
    const k::Isa before = k::active_isa();
    {
        k::ScopedIsa scope(k::Isa::scalar);
        EXPECT_EQ(k::active_isa(), k::Isa::scalar);
        EXPECT_EQ(k::active().isa, k::Isa::scalar);
    }
    EXPECT_EQ(k::active_isa(), before);
}

TEST(Kernels, GeneratorForwardAgreesAcrossVariants) {
    if (!have_avx2()) GTEST_SKIP() << "AVX2 not available";
    GeneratorConfig cfg;
    cfg.base_channels = 4;
    cfg.n_hpb = 2;
    cfg.num_heads = 2;
    Rng rng(11);
    Generator g(cfg, rng);
    const Tensor x = test::uniform({1, 16, 24}, rng, -1.0, 1.0);
    NoGradScope ng;
    Tensor ys, yv;
    {
        k::ScopedIsa s(k::Isa::scalar);
        ys = g.forward(x);
    }
    {
        k::ScopedIsa s(k::Isa::avx2);
        yv = g.forward(x);
    }
    EXPECT_LT(test::max_abs_diff(ys, yv), 1e-10);
}
