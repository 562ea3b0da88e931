#include "rkld/spectral_space.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "rkld/simd.hpp"

namespace rkld {

std::string_view to_string(EigenDecay decay) {
    switch (decay) {
        case EigenDecay::inverse_square:
            return "inverse_square";
        case EigenDecay::inverse_linear:
            return "inverse_linear";
    }
    return "?";
}

EigenDecay parse_decay(std::string_view text) {
    if (text == "inverse_square") return EigenDecay::inverse_square;
    if (text == "inverse_linear") return EigenDecay::inverse_linear;
    throw std::invalid_argument("unknown eigenvalue decay '" + std::string(text) + "'");
}

void KernelSpec::validate() const {
    if (!(mu0 > 0.0) || !std::isfinite(mu0)) throw std::invalid_argument("kernel: mu0 must be positive");
    if (!(gamma >= 0.0) || !std::isfinite(gamma))
        throw std::invalid_argument("kernel: gamma must be nonnegative");
}

double eigenvalue(const KernelSpec& spec, std::size_t k) {
    const double kp1 = static_cast<double>(k + 1);
    switch (spec.decay) {
        case EigenDecay::inverse_square:
            return spec.mu0 / (kp1 * kp1);
        case EigenDecay::inverse_linear:
            return spec.mu0 / kp1;
    }
    return spec.mu0;
}

std::vector<double> eigenvalues(const KernelSpec& spec, std::size_t n_modes) {
    std::vector<double> mu(n_modes);
    for (std::size_t k = 0; k < n_modes; ++k) mu[k] = eigenvalue(spec, k);
    return mu;
}

double basis_eval(const KernelSpec& /*spec*/, std::size_t k, double z) {
    if (!(z >= 0.0 && z <= 1.0)) throw std::domain_error("basis_eval: z outside [0, 1]");
    if (k == 0) return 1.0;
    return std::numbers::sqrt2 * std::cos(std::numbers::pi * static_cast<double>(k) * z);
}

SpectralVector::SpectralVector(std::vector<double> coeffs) : coeffs_(std::move(coeffs)) {
    if (!all_finite()) throw std::invalid_argument("SpectralVector: non-finite coefficient");
}

SpectralVector SpectralVector::unit(std::size_t n_modes, std::size_t k, double value) {
    if (k >= n_modes) throw std::out_of_range("SpectralVector::unit: mode outside range");
    SpectralVector v(n_modes);
    v[k] = value;
    return v;
}

double SpectralVector::norm_squared() const {
    return simd::active().sum_squares(coeffs_.data(), coeffs_.size());
}

double SpectralVector::norm() const { return std::sqrt(norm_squared()); }

bool SpectralVector::all_finite() const {
    return std::all_of(coeffs_.begin(), coeffs_.end(), [](double c) { return std::isfinite(c); });
}

namespace {
void require_same_size(const SpectralVector& a, const SpectralVector& b) {
    if (a.n_modes() != b.n_modes()) throw std::invalid_argument("SpectralVector: mode-count mismatch");
}
}  // namespace

SpectralVector& SpectralVector::operator+=(const SpectralVector& other) {
    require_same_size(*this, other);
    simd::active().axpy(1.0, other.data(), data(), n_modes());
    return *this;
}

SpectralVector& SpectralVector::operator-=(const SpectralVector& other) {
    require_same_size(*this, other);
    simd::active().axpy(-1.0, other.data(), data(), n_modes());
    return *this;
}

SpectralVector& SpectralVector::operator*=(double s) {
    for (double& c : coeffs_) c *= s;
    return *this;
}

SpectralVector operator+(SpectralVector a, const SpectralVector& b) { return a += b; }
SpectralVector operator-(SpectralVector a, const SpectralVector& b) { return a -= b; }
SpectralVector operator*(double s, SpectralVector a) { return a *= s; }

double inner(const SpectralVector& a, const SpectralVector& b) {
    require_same_size(a, b);
    return simd::active().dot(a.data(), b.data(), a.n_modes());
}

SpectralVector feature_map(const KernelSpec& spec, double z, std::size_t n_modes) {
    if (n_modes == 0) throw std::invalid_argument("feature_map: need at least one mode");
    SpectralVector psi(n_modes);
    for (std::size_t k = 0; k < n_modes; ++k)
        psi[k] = std::pow(eigenvalue(spec, k), 0.5 * spec.gamma) * basis_eval(spec, k, z);
    return psi;
}

double kernel_gamma(const KernelSpec& spec, double z, double z2, std::size_t n_modes) {
    double s = 0.0;
    for (std::size_t k = 0; k < n_modes; ++k)
        s += std::pow(eigenvalue(spec, k), spec.gamma) * basis_eval(spec, k, z) * basis_eval(spec, k, z2);
    return s;
}

double weighted_norm(const SpectralVector& x, const KernelSpec& spec, double eps) {
    std::vector<double> w(x.n_modes());
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = std::pow(eigenvalue(spec, k), 2.0 * eps);
    return std::sqrt(simd::active().weighted_sum_squares(w.data(), x.data(), x.n_modes()));
}

double rkhs_norm(const SpectralVector& x, const KernelSpec& spec) {
    std::vector<double> w(x.n_modes());
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = 1.0 / eigenvalue(spec, k);
    const double s = simd::active().weighted_sum_squares(w.data(), x.data(), x.n_modes());
    if (!std::isfinite(s)) throw std::overflow_error("rkhs_norm: sum overflowed");
    return std::sqrt(s);
}

std::string_view to_string(OperatorKind kind) {
    switch (kind) {
        case OperatorKind::A:
            return "A";
        case OperatorKind::S_eta:
            return "S_eta";
        case OperatorKind::S_eta_prime:
            return "S_eta_prime";
        case OperatorKind::P_N:
            return "P_N";
        case OperatorKind::identity:
            return "identity";
    }
    return "?";
}

DiagonalOperator::DiagonalOperator(OperatorKind kind, std::vector<double> scales)
    : kind_(kind), scales_(std::move(scales)) {}

SpectralVector DiagonalOperator::apply(const SpectralVector& x) const {
    SpectralVector out(x.n_modes());
    apply_into(x, out);
    return out;
}

void DiagonalOperator::apply_into(const SpectralVector& x, SpectralVector& out) const {
    if (x.n_modes() != n_modes() || out.n_modes() != n_modes())
        throw std::invalid_argument("DiagonalOperator: mode-count mismatch");
    simd::active().hadamard(scales_.data(), x.data(), out.data(), n_modes());
}

double DiagonalOperator::operator_norm() const {
    double m = 0.0;
    for (double d : scales_) m = std::max(m, std::abs(d));
    return m;
}

namespace {
void require_positive(double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(what) + " must be positive");
}
void require_nonnegative(double v, const char* what) {
    if (!(v >= 0.0) || !std::isfinite(v))
        throw std::invalid_argument(std::string(what) + " must be nonnegative");
}
}  // namespace

DiagonalOperator generator_a(const KernelSpec& spec, double lambda, std::size_t n_modes) {
    require_positive(lambda, "lambda");
    std::vector<double> d(n_modes);
    for (std::size_t k = 0; k < n_modes; ++k) d[k] = -lambda / eigenvalue(spec, k);
    return {OperatorKind::A, std::move(d)};
}

DiagonalOperator resolvent_s_eta(const KernelSpec& spec, double lambda, double eta,
                                 std::size_t n_modes) {
    require_positive(lambda, "lambda");
    require_nonnegative(eta, "eta");
    std::vector<double> d(n_modes);
    for (std::size_t k = 0; k < n_modes; ++k) d[k] = 1.0 / (1.0 + lambda * eta / eigenvalue(spec, k));
    return {OperatorKind::S_eta, std::move(d)};
}

DiagonalOperator resolvent_s_eta_prime(const KernelSpec& spec, double lambda0, double lambda,
                                       double eta, std::size_t n_modes) {
    require_nonnegative(lambda0, "lambda0");
    require_positive(lambda, "lambda");
    require_nonnegative(eta, "eta");
    std::vector<double> d(n_modes);
    for (std::size_t k = 0; k < n_modes; ++k)
        d[k] = 1.0 / (1.0 + lambda * eta / eigenvalue(spec, k) + eta * lambda0);
    return {OperatorKind::S_eta_prime, std::move(d)};
}

DiagonalOperator projection_operator(std::size_t n, std::size_t n_modes) {
    if (n > n_modes) throw std::invalid_argument("projection_operator: n exceeds mode count");
    std::vector<double> d(n_modes, 0.0);
    std::fill(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n), 1.0);
    return {OperatorKind::P_N, std::move(d)};
}

SpectralVector project(const SpectralVector& x, std::size_t n) {
    if (n > x.n_modes()) throw std::invalid_argument("project: n exceeds mode count");
    auto c = x.coeffs();
    return SpectralVector(std::vector<double>(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(n)));
}

SpectralVector embed(const SpectralVector& x, std::size_t n_modes) {
    SpectralVector out(n_modes);
    const std::size_t n = std::min(n_modes, x.n_modes());
    for (std::size_t k = 0; k < n; ++k) out[k] = x[k];
    return out;
}

}  // namespace rkld
