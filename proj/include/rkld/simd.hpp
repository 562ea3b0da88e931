#pragma once

// Dense kernels behind every spectral-vector operation. Each kernel has a
// scalar reference implementation and, on x86-64, an AVX2/FMA variant. The
// active table is picked once at startup from CPUID; RKLD_SIMD=scalar forces
// the reference path.

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace rkld::simd {

enum class Isa { scalar, avx2 };

struct KernelTable {
    Isa isa;
    std::string_view name;

    // sum_k a_k b_k
    double (*dot)(const double* a, const double* b, std::size_t n);
    // sum_k a_k^2
    double (*sum_squares)(const double* a, std::size_t n);
    // sum_k w_k a_k^2
    double (*weighted_sum_squares)(const double* w, const double* a, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // y = d * x (elementwise)
    void (*hadamard)(const double* d, const double* x, double* y, std::size_t n);
    // out_k = d_k (x_k - eta g_k + sigma xi_k)
    void (*semi_implicit_update)(const double* d, const double* x, const double* g,
                                 const double* xi, double eta, double sigma, double* out,
                                 std::size_t n);
    // out_j = <rows[idx_j], x>; rows is row-major with the given stride.
    void (*gather_dot)(const double* rows, std::size_t stride, const std::uint32_t* idx,
                       std::size_t count, const double* x, std::size_t n, double* out);
    // g += sum_j w_j rows[idx_j], accumulated in index order.
    void (*gather_axpy)(const double* rows, std::size_t stride, const std::uint32_t* idx,
                        std::size_t count, const double* w, std::size_t n, double* g);
};

const KernelTable& scalar_kernels();
// Returns nullptr when the translation unit was not built for AVX2.
const KernelTable* avx2_kernels();

bool cpu_supports(Isa isa);

// Table used by the library; stable for the lifetime of the process.
const KernelTable& active();

}  // namespace rkld::simd
