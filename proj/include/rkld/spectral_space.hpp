#pragma once

// Mercer eigenbasis on [0, 1], coefficient vectors in that basis, and the
// diagonal operators of the semi-implicit scheme. Every operator is stored as
// its per-mode scale; nothing here materializes a dense matrix.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace rkld {

enum class EigenDecay {
    inverse_square,  // mu_k = mu0 / (k+1)^2
    inverse_linear,  // mu_k = mu0 / (k+1); violates the k^-2 decay requirement
};

enum class BasisFamily { cosine };

std::string_view to_string(EigenDecay decay);
EigenDecay parse_decay(std::string_view text);

struct KernelSpec {
    double mu0 = 1.0;
    EigenDecay decay = EigenDecay::inverse_square;
    double gamma = 1.5;
    BasisFamily basis = BasisFamily::cosine;

    void validate() const;
};

double eigenvalue(const KernelSpec& spec, std::size_t k);
std::vector<double> eigenvalues(const KernelSpec& spec, std::size_t n_modes);

// f_0 = 1, f_k(z) = sqrt(2) cos(pi k z); orthonormal in L2([0, 1]).
double basis_eval(const KernelSpec& spec, std::size_t k, double z);

class SpectralVector {
public:
    SpectralVector() = default;
    explicit SpectralVector(std::size_t n_modes) : coeffs_(n_modes, 0.0) {}
    explicit SpectralVector(std::vector<double> coeffs);

    static SpectralVector unit(std::size_t n_modes, std::size_t k, double value = 1.0);

    std::size_t n_modes() const { return coeffs_.size(); }
    std::span<const double> coeffs() const { return coeffs_; }
    std::span<double> coeffs() { return coeffs_; }
    const double* data() const { return coeffs_.data(); }
    double* data() { return coeffs_.data(); }

    double operator[](std::size_t k) const { return coeffs_[k]; }
    double& operator[](std::size_t k) { return coeffs_[k]; }

    double norm_squared() const;
    double norm() const;
    bool all_finite() const;

    SpectralVector& operator+=(const SpectralVector& other);
    SpectralVector& operator-=(const SpectralVector& other);
    SpectralVector& operator*=(double s);

    friend bool operator==(const SpectralVector&, const SpectralVector&) = default;

private:
    std::vector<double> coeffs_;
};

SpectralVector operator+(SpectralVector a, const SpectralVector& b);
SpectralVector operator-(SpectralVector a, const SpectralVector& b);
SpectralVector operator*(double s, SpectralVector a);

double inner(const SpectralVector& a, const SpectralVector& b);

// psi_gamma(z) truncated to n_modes: coefficient k is mu_k^{gamma/2} f_k(z).
SpectralVector feature_map(const KernelSpec& spec, double z, std::size_t n_modes);

// Truncated K_gamma(z, z2) = sum_k mu_k^gamma f_k(z) f_k(z2).
double kernel_gamma(const KernelSpec& spec, double z, double z2, std::size_t n_modes);

// (sum_k mu_k^{2 eps} x_k^2)^{1/2}
double weighted_norm(const SpectralVector& x, const KernelSpec& spec, double eps);

// (sum_k x_k^2 / mu_k)^{1/2}; throws std::overflow_error if the sum is not finite.
double rkhs_norm(const SpectralVector& x, const KernelSpec& spec);

enum class OperatorKind { A, S_eta, S_eta_prime, P_N, identity };

std::string_view to_string(OperatorKind kind);

class DiagonalOperator {
public:
    DiagonalOperator(OperatorKind kind, std::vector<double> scales);

    OperatorKind kind() const { return kind_; }
    std::span<const double> scales() const { return scales_; }
    std::size_t n_modes() const { return scales_.size(); }
    double scale(std::size_t k) const { return scales_[k]; }

    SpectralVector apply(const SpectralVector& x) const;
    void apply_into(const SpectralVector& x, SpectralVector& out) const;

    // max_k |d_k|
    double operator_norm() const;

private:
    OperatorKind kind_;
    std::vector<double> scales_;
};

// A f_k = -(lambda / mu_k) f_k
DiagonalOperator generator_a(const KernelSpec& spec, double lambda, std::size_t n_modes);

// S_eta = (Id - eta A)^{-1}; eta = 0 gives the identity (the eta -> 0 limit).
DiagonalOperator resolvent_s_eta(const KernelSpec& spec, double lambda, double eta,
                                 std::size_t n_modes);

// Resolvent for objectives carrying an explicit (lambda0/2)||x||^2 term:
// mode scale 1 / (1 + eta (lambda0 + lambda / mu_k)).
DiagonalOperator resolvent_s_eta_prime(const KernelSpec& spec, double lambda0, double lambda,
                                       double eta, std::size_t n_modes);

// P_N as an operator on n_modes coefficients keeping the first n.
DiagonalOperator projection_operator(std::size_t n, std::size_t n_modes);

// First n coefficients of x.
SpectralVector project(const SpectralVector& x, std::size_t n);

// x zero-padded (or truncated) to n_modes coefficients.
SpectralVector embed(const SpectralVector& x, std::size_t n_modes);

}  // namespace rkld
