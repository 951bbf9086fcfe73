#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "vctr/kernels.hpp"

namespace vctr::kernels {

#if !defined(VCTR_HAVE_AVX2_KERNELS)
const KernelTable* avx2_table() { return nullptr; }
#endif

namespace {

bool cpu_has_avx2() {
#if defined(VCTR_HAVE_AVX2_KERNELS) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Isa detect_default() {
    if (const char* env = std::getenv("VCTR_ISA")) {
        Isa requested;
        if (parse_isa(env, requested) && isa_supported(requested)) return requested;
    }
    return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

std::atomic<const KernelTable*>& current() {
    static std::atomic<const KernelTable*> ptr{&table(detect_default())};
    return ptr;
}

}  // namespace

bool isa_supported(Isa isa) {
    switch (isa) {
        case Isa::scalar:
            return true;
        case Isa::avx2:
            return avx2_table() != nullptr && cpu_has_avx2();
    }
    return false;
}

const KernelTable& table(Isa isa) {
    if (!isa_supported(isa))
        throw std::runtime_error("kernel variant '" + std::string(isa_name(isa)) +
                                 "' is not available on this machine");
    return isa == Isa::avx2 ? *avx2_table() : scalar_table();
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

Isa active_isa() { return active().isa; }

void set_isa(Isa isa) { current().store(&table(isa), std::memory_order_relaxed); }

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

bool parse_isa(std::string_view name, Isa& out) {
    if (name == "scalar") {
        out = Isa::scalar;
        return true;
    }
    if (name == "avx2") {
        out = Isa::avx2;
        return true;
    }
    return false;
}

}  // namespace vctr::kernels
