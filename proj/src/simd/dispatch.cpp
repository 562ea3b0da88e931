#include <cstdlib>
#include <string_view>

#include "rkld/simd.hpp"

namespace rkld::simd {

bool cpu_supports(Isa isa) {
    switch (isa) {
        case Isa::scalar:
            return true;
        case Isa::avx2:
#if defined(__x86_64__) || defined(__i386__)
            __builtin_cpu_init();
            return avx2_kernels() != nullptr && __builtin_cpu_supports("avx2") &&
                   __builtin_cpu_supports("fma");
#else
            return false;
#endif
    }
    return false;
}

namespace {

const KernelTable& select() {
    const char* env = std::getenv("RKLD_SIMD");
    if (env != nullptr && std::string_view(env) == "scalar") return scalar_kernels();
    if (cpu_supports(Isa::avx2)) return *avx2_kernels();
    return scalar_kernels();
}

}  // namespace

const KernelTable& active() {
    static const KernelTable& table = select();
    return table;
}

}  // namespace rkld::simd
