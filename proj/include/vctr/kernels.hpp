#pragma once

// Data-parallel inner loops. Every kernel has a portable scalar reference
// implementation and, where the target supports it, an AVX2+FMA variant.
// The variant is picked once at startup from CPUID; VCTR_ISA=scalar|avx2
// in the environment (or set_isa()) overrides the choice.

#include <cstddef>
#include <string_view>

namespace vctr::kernels {

enum class Isa { scalar, avx2 };

// C[m x n] = op(A)[m x k] * op(B)[k x n]  (+ C when accumulate is set).
// Row-major storage; op(X) is X or its transpose depending on the flag.
using GemmFn = void (*)(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                        const double* a, std::size_t lda, const double* b, std::size_t ldb,
                        double* c, std::size_t ldc, bool accumulate);
using DotFn = double (*)(const double* x, const double* y, std::size_t n);
// y += alpha * x
using AxpyFn = void (*)(double alpha, const double* x, double* y, std::size_t n);

struct KernelTable {
    Isa isa;
    GemmFn gemm;
    DotFn dot;
    AxpyFn axpy;
};

const KernelTable& scalar_table();
// Returns nullptr when the variant was not compiled in.
const KernelTable* avx2_table();

bool isa_supported(Isa isa);
const KernelTable& table(Isa isa);

// Currently selected table. Selection is process-global.
const KernelTable& active();
Isa active_isa();
void set_isa(Isa isa);

std::string_view isa_name(Isa isa);
bool parse_isa(std::string_view name, Isa& out);

// Convenience wrappers over active().
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
                 std::size_t ldc, bool accumulate) {
    active().gemm(trans_a, trans_b, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}
inline double dot(const double* x, const double* y, std::size_t n) { return active().dot(x, y, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
    active().axpy(alpha, x, y, n);
}

// RAII override used by equivalence tests and the benchmark.
class ScopedIsa {
public:
    explicit ScopedIsa(Isa isa) : previous_(active_isa()) { set_isa(isa); }
    ~ScopedIsa() { set_isa(previous_); }
    ScopedIsa(const ScopedIsa&) = delete;
    ScopedIsa& operator=(const ScopedIsa&) = delete;

private:
    Isa previous_;
};

}  // namespace vctr::kernels
