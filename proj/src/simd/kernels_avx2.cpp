#include "rkld/simd.hpp"

#if defined(RKLD_HAVE_AVX2_TU) && defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <cmath>

namespace rkld::simd {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t k = 0;
    for (; k + 8 <= n; k += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + k), _mm256_loadu_pd(b + k), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + k + 4), _mm256_loadu_pd(b + k + 4), acc1);
    }
    for (; k + 4 <= n; k += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + k), _mm256_loadu_pd(b + k), acc0);
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; k < n; ++k) s = std::fma(a[k], b[k], s);
    return s;
}

double sum_squares(const double* a, std::size_t n) { return dot(a, a, n); }

double weighted_sum_squares(const double* w, const double* a, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t k = 0;
    for (; k + 4 <= n; k += 4) {
        __m256d va = _mm256_loadu_pd(a + k);
        acc = _mm256_fmadd_pd(_mm256_mul_pd(_mm256_loadu_pd(w + k), va), va, acc);
    }
    double s = hsum(acc);
    for (; k < n; ++k) s = std::fma(w[k] * a[k], a[k], s);
    return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t k = 0;
    for (; k + 4 <= n; k += 4)
        _mm256_storeu_pd(y + k, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + k), _mm256_loadu_pd(y + k)));
    for (; k < n; ++k) y[k] = std::fma(alpha, x[k], y[k]);
}

void hadamard(const double* d, const double* x, double* y, std::size_t n) {
    std::size_t k = 0;
    for (; k + 4 <= n; k += 4)
        _mm256_storeu_pd(y + k, _mm256_mul_pd(_mm256_loadu_pd(d + k), _mm256_loadu_pd(x + k)));
    for (; k < n; ++k) y[k] = d[k] * x[k];
}

void semi_implicit_update(const double* d, const double* x, const double* g, const double* xi,
                          double eta, double sigma, double* out, std::size_t n) {
    const __m256d neg_eta = _mm256_set1_pd(-eta);
    const __m256d vs = _mm256_set1_pd(sigma);
    std::size_t k = 0;
    for (; k + 4 <= n; k += 4) {
        __m256d t = _mm256_fmadd_pd(neg_eta, _mm256_loadu_pd(g + k), _mm256_loadu_pd(x + k));
        t = _mm256_fmadd_pd(vs, _mm256_loadu_pd(xi + k), t);
        _mm256_storeu_pd(out + k, _mm256_mul_pd(_mm256_loadu_pd(d + k), t));
    }
    for (; k < n; ++k) {
        double t = std::fma(-eta, g[k], x[k]);
        t = std::fma(sigma, xi[k], t);
        out[k] = d[k] * t;
    }
}

void gather_dot(const double* rows, std::size_t stride, const std::uint32_t* idx,
                std::size_t count, const double* x, std::size_t n, double* out) {
    for (std::size_t j = 0; j < count; ++j) out[j] = dot(rows + idx[j] * stride, x, n);
}

void gather_axpy(const double* rows, std::size_t stride, const std::uint32_t* idx,
                 std::size_t count, const double* w, std::size_t n, double* g) {
    for (std::size_t j = 0; j < count; ++j) axpy(w[j], rows + idx[j] * stride, g, n);
}

constexpr KernelTable kTable{
    Isa::avx2, "avx2", dot, sum_squares, weighted_sum_squares, axpy, hadamard,
    semi_implicit_update, gather_dot, gather_axpy,
};

}  // namespace

const KernelTable* avx2_kernels() { return &kTable; }

}  // namespace rkld::simd

#else

namespace rkld::simd {
const KernelTable* avx2_kernels() { return nullptr; }
}  // namespace rkld::simd

#endif
