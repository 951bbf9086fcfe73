// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma;
// nothing in it may run before dispatch has confirmed CPU support.

#include <immintrin.h>

#include <algorithm>
#include <vector>

#include "vctr/kernels.hpp"

namespace vctr::kernels {
namespace {

constexpr std::size_t kMr = 6;
constexpr std::size_t kNr = 8;
constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 96;
constexpr std::size_t kNc = 2048;

inline double elem(const double* x, std::size_t ld, bool trans, std::size_t r, std::size_t c) {
    return trans ? x[c * ld + r] : x[r * ld + c];
}

// Packs an mc x kc block of op(A) into row panels of kMr, k-major within a panel.
void pack_a(bool trans, const double* a, std::size_t lda, std::size_t i0, std::size_t mc,
            std::size_t p0, std::size_t kc, double* out) {
    for (std::size_t ip = 0; ip < mc; ip += kMr) {
        const std::size_t rows = std::min(kMr, mc - ip);
        for (std::size_t p = 0; p < kc; ++p) {
            for (std::size_t r = 0; r < rows; ++r) *out++ = elem(a, lda, trans, i0 + ip + r, p0 + p);
            for (std::size_t r = rows; r < kMr; ++r) *out++ = 0.0;
        }
    }
}

// Packs a kc x nc block of op(B) into column panels of kNr.
void pack_b(bool trans, const double* b, std::size_t ldb, std::size_t p0, std::size_t kc,
            std::size_t j0, std::size_t nc, double* out) {
    for (std::size_t jp = 0; jp < nc; jp += kNr) {
        const std::size_t cols = std::min(kNr, nc - jp);
        for (std::size_t p = 0; p < kc; ++p) {
            if (!trans && cols == kNr) {
                const double* src = b + (p0 + p) * ldb + j0 + jp;
                _mm256_storeu_pd(out, _mm256_loadu_pd(src));
                _mm256_storeu_pd(out + 4, _mm256_loadu_pd(src + 4));
                out += kNr;
                continue;
            }
            for (std::size_t c = 0; c < cols; ++c) *out++ = elem(b, ldb, trans, p0 + p, j0 + jp + c);
            for (std::size_t c = cols; c < kNr; ++c) *out++ = 0.0;
        }
    }
}

void micro_kernel(std::size_t kc, const double* ap, const double* bp, double* c, std::size_t ldc,
                  std::size_t rows, std::size_t cols) {
    // Named accumulators: an array here gets spilled to the stack every
    // iteration.
    __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
    __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
    __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
    __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
    __m256d c40 = _mm256_setzero_pd(), c41 = _mm256_setzero_pd();
    __m256d c50 = _mm256_setzero_pd(), c51 = _mm256_setzero_pd();
    for (std::size_t p = 0; p < kc; ++p) {
        const __m256d b0 = _mm256_loadu_pd(bp);
        const __m256d b1 = _mm256_loadu_pd(bp + 4);
        __m256d av = _mm256_broadcast_sd(ap);
        c00 = _mm256_fmadd_pd(av, b0, c00);
        c01 = _mm256_fmadd_pd(av, b1, c01);
        av = _mm256_broadcast_sd(ap + 1);
        c10 = _mm256_fmadd_pd(av, b0, c10);
        c11 = _mm256_fmadd_pd(av, b1, c11);
        av = _mm256_broadcast_sd(ap + 2);
        c20 = _mm256_fmadd_pd(av, b0, c20);
        c21 = _mm256_fmadd_pd(av, b1, c21);
        av = _mm256_broadcast_sd(ap + 3);
        c30 = _mm256_fmadd_pd(av, b0, c30);
        c31 = _mm256_fmadd_pd(av, b1, c31);
        av = _mm256_broadcast_sd(ap + 4);
        c40 = _mm256_fmadd_pd(av, b0, c40);
        c41 = _mm256_fmadd_pd(av, b1, c41);
        av = _mm256_broadcast_sd(ap + 5);
        c50 = _mm256_fmadd_pd(av, b0, c50);
        c51 = _mm256_fmadd_pd(av, b1, c51);
        ap += kMr;
        bp += kNr;
    }
    const __m256d acc[kMr][2] = {{c00, c01}, {c10, c11}, {c20, c21}, {c30, c31}, {c40, c41}, {c50, c51}};
    if (cols == kNr) {
        for (std::size_t r = 0; r < rows; ++r) {
            double* crow = c + r * ldc;
            _mm256_storeu_pd(crow, _mm256_add_pd(_mm256_loadu_pd(crow), acc[r][0]));
            _mm256_storeu_pd(crow + 4, _mm256_add_pd(_mm256_loadu_pd(crow + 4), acc[r][1]));
        }
        return;
    }
    alignas(32) double tmp[kNr];
    for (std::size_t r = 0; r < rows; ++r) {
        _mm256_store_pd(tmp, acc[r][0]);
        _mm256_store_pd(tmp + 4, acc[r][1]);
        double* crow = c + r * ldc;
        for (std::size_t j = 0; j < cols; ++j) crow[j] += tmp[j];
    }
}

void gemm_avx2(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
               const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
               std::size_t ldc, bool accumulate) {
    if (!accumulate) {
        for (std::size_t i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, 0.0);
    }
    if (m == 0 || n == 0 || k == 0) return;

    thread_local std::vector<double> a_pack;
    thread_local std::vector<double> b_pack;
    a_pack.resize(((kMc + kMr - 1) / kMr) * kMr * kKc);
    b_pack.resize(((kNc + kNr - 1) / kNr) * kNr * kKc);

    for (std::size_t j0 = 0; j0 < n; j0 += kNc) {
        const std::size_t nc = std::min(kNc, n - j0);
        for (std::size_t p0 = 0; p0 < k; p0 += kKc) {
            const std::size_t kc = std::min(kKc, k - p0);
            pack_b(trans_b, b, ldb, p0, kc, j0, nc, b_pack.data());
            for (std::size_t i0 = 0; i0 < m; i0 += kMc) {
                const std::size_t mc = std::min(kMc, m - i0);
                pack_a(trans_a, a, lda, i0, mc, p0, kc, a_pack.data());
                for (std::size_t jr = 0; jr < nc; jr += kNr) {
                    const double* bp = b_pack.data() + (jr / kNr) * kNr * kc;
                    for (std::size_t ir = 0; ir < mc; ir += kMr) {
                        const double* ap = a_pack.data() + (ir / kMr) * kMr * kc;
                        micro_kernel(kc, ap, bp, c + (i0 + ir) * ldc + j0 + jr, ldc,
                                     std::min(kMr, mc - ir), std::min(kNr, nc - jr));
                    }
                }
            }
        }
    }
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
    __m256d s0 = _mm256_setzero_pd();
    __m256d s1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
        s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
    }
    for (; i + 4 <= n; i += 4) s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s0 = _mm256_add_pd(s0, s1);
    const __m128d lo = _mm256_castpd256_pd128(s0);
    const __m128d hi = _mm256_extractf128_pd(s0, 1);
    const __m128d pair = _mm_add_pd(lo, hi);
    double s = _mm_cvtsd_f64(_mm_add_sd(pair, _mm_unpackhi_pd(pair, pair)));
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

const KernelTable* avx2_table() {
    static const KernelTable t{Isa::avx2, &gemm_avx2, &dot_avx2, &axpy_avx2};
    return &t;
}

}  // namespace vctr::kernels
