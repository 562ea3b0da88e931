#include "rkld/simd.hpp"

namespace rkld::simd {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += a[k] * b[k];
    return s;
}

double sum_squares(const double* a, std::size_t n) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += a[k] * a[k];
    return s;
}

double weighted_sum_squares(const double* w, const double* a, std::size_t n) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += w[k] * a[k] * a[k];
    return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) y[k] += alpha * x[k];
}

void hadamard(const double* d, const double* x, double* y, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) y[k] = d[k] * x[k];
}

void semi_implicit_update(const double* d, const double* x, const double* g, const double* xi,
                          double eta, double sigma, double* out, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) out[k] = d[k] * (x[k] - eta * g[k] + sigma * xi[k]);
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
    Isa::scalar, "scalar", dot, sum_squares, weighted_sum_squares, axpy, hadamard,
    semi_implicit_update, gather_dot, gather_axpy,
};

}  // namespace

const KernelTable& scalar_kernels() { return kTable; }

}  // namespace rkld::simd
