#include "rkld/objective.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "rkld/rng.hpp"
#include "rkld/simd.hpp"

namespace rkld {

Dataset::Dataset(std::vector<DataPoint> points) : points_(std::move(points)) {
    if (points_.empty()) throw std::invalid_argument("dataset: need at least one point");
    for (std::size_t i = 0; i < points_.size(); ++i) {
        const auto& p = points_[i];
        if (!(p.z >= 0.0 && p.z <= 1.0))
            throw std::invalid_argument("dataset: z outside [0, 1] at point " + std::to_string(i));
        if (!std::isfinite(p.y)) throw std::invalid_argument("dataset: non-finite y at point " + std::to_string(i));
    }
}

Dataset Dataset::from_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("dataset: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + ":1: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "z,y") throw std::runtime_error(path.string() + ":1: expected header 'z,y'");
    std::vector<DataPoint> pts;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 'z,y'");
        try {
            std::size_t used = 0;
            const std::string zs = line.substr(0, comma);
            const std::string ys = line.substr(comma + 1);
            const double z = std::stod(zs, &used);
            if (used != zs.size()) throw std::invalid_argument(zs);
            const double y = std::stod(ys, &used);
            if (used != ys.size()) throw std::invalid_argument(ys);
            pts.push_back({z, y});
        } catch (const std::logic_error&) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed number");
        }
    }
    try {
        return Dataset(std::move(pts));
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

void Dataset::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    out.precision(17);
    out << "z,y\n";
    for (const auto& p : points_) out << p.z << ',' << p.y << '\n';
}

Dataset Dataset::synthetic_regression(std::size_t n, std::uint64_t seed, double noise_sigma) {
    const CounterRng rng(derive_key(seed, 0, Stream::data));
    std::vector<DataPoint> pts(n);
    double noise[2];
    for (std::size_t i = 0; i < n; ++i) {
        pts[i].z = rng.uniform(i, 0);
        rng.normals(i + (std::uint64_t{1} << 40), noise);
        pts[i].y = std::sin(2.0 * std::numbers::pi * pts[i].z) + noise_sigma * noise[0];
    }
    return Dataset(std::move(pts));
}

Dataset Dataset::synthetic_classification(std::size_t n, std::uint64_t seed) {
    const CounterRng rng(derive_key(seed, 0, Stream::data));
    std::vector<DataPoint> pts(n);
    for (std::size_t i = 0; i < n; ++i) {
        pts[i].z = rng.uniform(i, 0);
        pts[i].y = std::sin(2.0 * std::numbers::pi * pts[i].z) >= 0.0 ? 1.0 : -1.0;
    }
    return Dataset(std::move(pts));
}

std::string_view to_string(LossKind kind) {
    switch (kind) {
        case LossKind::squared:
            return "squared";
        case LossKind::logistic:
            return "logistic";
        case LossKind::savage:
            return "savage";
        case LossKind::squared_sine:
            return "squared_sine";
    }
    return "?";
}

LossKind parse_loss(std::string_view text) {
    if (text == "squared") return LossKind::squared;
    if (text == "logistic") return LossKind::logistic;
    if (text == "savage") return LossKind::savage;
    if (text == "squared_sine") return LossKind::squared_sine;
    throw std::invalid_argument("unknown loss '" + std::string(text) + "'");
}

namespace {

// 1 / (1 + exp(-t)) without overflow.
inline double logistic_sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

// log(1 + exp(t)) without overflow.
inline double softplus(double t) {
    if (t > 0.0) return t + std::log1p(std::exp(-t));
    return std::log1p(std::exp(t));
}

// sup_s |2 s^2 (1 - s)(2 - 3 s)| on [0, 1], attained at s = (15 - sqrt(33)) / 24.
double savage_curvature_constant() {
    const double s = (15.0 - std::sqrt(33.0)) / 24.0;
    return 2.0 * s * s * (1.0 - s) * (2.0 - 3.0 * s);
}

}  // namespace

LossFamily LossFamily::make(LossKind kind, const Dataset& data) {
    double ymax = 0.0;
    for (const auto& p : data.points()) ymax = std::max(ymax, std::abs(p.y));
    LossFamily f;
    f.kind = kind;
    switch (kind) {
        case LossKind::squared:
            f.second_derivative_bound = 1.0;
            break;
        case LossKind::squared_sine:
            f.second_derivative_bound = 1.0 + kSineAmplitude;
            break;
        case LossKind::logistic:
            f.second_derivative_bound = ymax * ymax / 4.0;
            f.first_derivative_bound = ymax;
            break;
        case LossKind::savage:
            f.second_derivative_bound = ymax * ymax * savage_curvature_constant();
            f.first_derivative_bound = ymax * 8.0 / 27.0;
            break;
    }
    if (!(f.second_derivative_bound > 0.0))
        throw std::invalid_argument("loss: labels give a zero curvature bound");
    return f;
}

double LossFamily::value(double u, double y) const {
    switch (kind) {
        case LossKind::squared:
            return 0.5 * (u - y) * (u - y);
        case LossKind::squared_sine:
            return 0.5 * (u - y) * (u - y) + kSineAmplitude * std::sin(u - y);
        case LossKind::logistic:
            return softplus(-y * u);
        case LossKind::savage: {
            const double s = logistic_sigmoid(-y * u);
            return s * s;
        }
    }
    return 0.0;
}

double LossFamily::d1(double u, double y) const {
    switch (kind) {
        case LossKind::squared:
            return u - y;
        case LossKind::squared_sine:
            return (u - y) + kSineAmplitude * std::cos(u - y);
        case LossKind::logistic:
            return -y * logistic_sigmoid(-y * u);
        case LossKind::savage: {
            const double s = logistic_sigmoid(-y * u);
            return -2.0 * y * s * s * (1.0 - s);
        }
    }
    return 0.0;
}

double LossFamily::d2(double u, double y) const {
    switch (kind) {
        case LossKind::squared:
            return 1.0;
        case LossKind::squared_sine:
            return 1.0 - kSineAmplitude * std::sin(u - y);
        case LossKind::logistic: {
            const double s = logistic_sigmoid(y * u);
            return y * y * s * (1.0 - s);
        }
        case LossKind::savage: {
            const double s = logistic_sigmoid(-y * u);
            return 2.0 * y * y * s * s * (1.0 - s) * (2.0 - 3.0 * s);
        }
    }
    return 0.0;
}

ObjectiveSpec::ObjectiveSpec(Dataset data, LossKind loss, KernelSpec kernel, std::size_t n_modes,
                             std::optional<double> lambda0)
    : data_(std::move(data)),
      loss_(LossFamily::make(loss, data_)),
      kernel_(kernel),
      n_modes_(n_modes),
      lambda0_(lambda0) {
    kernel_.validate();
    if (n_modes_ == 0) throw std::invalid_argument("objective: need at least one mode");
    if (data_.size() == 0) throw std::invalid_argument("objective: empty dataset");
    if (lambda0_ && !(*lambda0_ >= 0.0)) throw std::invalid_argument("objective: lambda0 must be nonnegative");
    const std::size_t n = data_.size();
    features_.resize(n * n_modes_);
    feature_sq_norms_.resize(n);
    all_indices_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const SpectralVector psi = feature_map(kernel_, data_[i].z, n_modes_);
        std::copy(psi.coeffs().begin(), psi.coeffs().end(), features_.begin() + static_cast<std::ptrdiff_t>(i * n_modes_));
        feature_sq_norms_[i] = psi.norm_squared();
        all_indices_[i] = static_cast<std::uint32_t>(i);
    }
}

std::span<const double> ObjectiveSpec::feature(std::size_t i) const {
    return {features_.data() + i * n_modes_, n_modes_};
}

void ObjectiveSpec::check_modes(const SpectralVector& x) const {
    if (x.n_modes() != n_modes_)
        throw std::invalid_argument("objective: vector has " + std::to_string(x.n_modes()) +
                                    " modes, objective has " + std::to_string(n_modes_));
}

double ObjectiveSpec::risk(const SpectralVector& x) const {
    check_modes(x);
    const std::size_t n = data_.size();
    std::vector<double> u(n);
    simd::active().gather_dot(features_.data(), n_modes_, all_indices_.data(), n, x.data(), n_modes_, u.data());
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += loss_.value(u[i], data_[i].y);
    double r = s / static_cast<double>(n);
    if (lambda0_) r += 0.5 * *lambda0_ * x.norm_squared();
    return r;
}

void ObjectiveSpec::batch_grad_into(const SpectralVector& x, std::span<const std::uint32_t> batch,
                                    SpectralVector& out, GradientWorkspace& ws) const {
    check_modes(x);
    if (batch.empty()) throw std::invalid_argument("stochastic_grad: empty batch");
    if (out.n_modes() != n_modes_) out = SpectralVector(n_modes_);
    const std::size_t m = batch.size();
    ws.margins.resize(m);
    ws.weights.resize(m);
    const auto& k = simd::active();
    k.gather_dot(features_.data(), n_modes_, batch.data(), m, x.data(), n_modes_, ws.margins.data());
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t j = 0; j < m; ++j) ws.weights[j] = loss_.d1(ws.margins[j], data_[batch[j]].y) * inv_m;
    std::fill(out.coeffs().begin(), out.coeffs().end(), 0.0);
    k.gather_axpy(features_.data(), n_modes_, batch.data(), m, ws.weights.data(), n_modes_, out.data());
    if (lambda0_) k.axpy(*lambda0_, x.data(), out.data(), n_modes_);
}

SpectralVector ObjectiveSpec::stochastic_grad(const SpectralVector& x,
                                              std::span<const std::uint32_t> batch) const {
    for (std::uint32_t i : batch)
        if (i >= data_.size()) throw std::out_of_range("stochastic_grad: batch index out of range");
    SpectralVector g(n_modes_);
    GradientWorkspace ws;
    batch_grad_into(x, batch, g, ws);
    return g;
}

SpectralVector ObjectiveSpec::grad(const SpectralVector& x) const { return stochastic_grad(x, all_indices_); }

SpectralVector ObjectiveSpec::sample_grad(const SpectralVector& x, std::size_t i) const {
    const std::uint32_t idx[1] = {static_cast<std::uint32_t>(i)};
    return stochastic_grad(x, idx);
}

double ObjectiveSpec::second_derivative(const SpectralVector& x, const SpectralVector& h,
                                        const SpectralVector& kv) const {
    check_modes(x);
    check_modes(h);
    check_modes(kv);
    const auto& k = simd::active();
    double s = 0.0;
    for (std::size_t i = 0; i < data_.size(); ++i) {
        const double* psi = features_.data() + i * n_modes_;
        const double u = k.dot(psi, x.data(), n_modes_);
        s += loss_.d2(u, data_[i].y) * k.dot(psi, h.data(), n_modes_) * k.dot(psi, kv.data(), n_modes_);
    }
    s /= static_cast<double>(data_.size());
    if (lambda0_) s += *lambda0_ * inner(h, kv);
    return s;
}

Eigen::MatrixXd ObjectiveSpec::hessian(const SpectralVector& x) const {
    check_modes(x);
    const Eigen::Index d = static_cast<Eigen::Index>(n_modes_);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d, d);
    const auto& k = simd::active();
    for (std::size_t i = 0; i < data_.size(); ++i) {
        Eigen::Map<const Eigen::VectorXd> psi(features_.data() + i * n_modes_, d);
        const double u = k.dot(psi.data(), x.data(), n_modes_);
        h.selfadjointView<Eigen::Lower>().rankUpdate(psi, loss_.d2(u, data_[i].y));
    }
    h = h.selfadjointView<Eigen::Lower>();
    h /= static_cast<double>(data_.size());
    if (lambda0_) h.diagonal().array() += *lambda0_;
    return h;
}

double ObjectiveSpec::gradient_dispersion(const SpectralVector& x) const {
    const SpectralVector g = grad(x);
    double s = 0.0;
    for (std::size_t i = 0; i < data_.size(); ++i) s += (sample_grad(x, i) - g).norm_squared();
    return s / static_cast<double>(data_.size());
}

double kernel_diagonal_max(const ObjectiveSpec& obj) {
    double r = 0.0;
    for (std::size_t i = 0; i < obj.n_train(); ++i) r = std::max(r, obj.feature_norm_squared(i));
    return r;
}

double smoothness_constant(const ObjectiveSpec& obj) {
    return obj.loss().second_derivative_bound * kernel_diagonal_max(obj) + obj.lambda0().value_or(0.0);
}

std::optional<double> gradient_bound(const ObjectiveSpec& obj) {
    if (!obj.loss().first_derivative_bound || obj.lambda0()) return std::nullopt;
    return *obj.loss().first_derivative_bound * std::sqrt(kernel_diagonal_max(obj));
}

double second_derivative_bound(const ObjectiveSpec& obj, double alpha) {
    double tail = 0.0;
    for (std::size_t k = 0; k < obj.n_modes(); ++k)
        tail += std::pow(eigenvalue(obj.kernel(), k), obj.kernel().gamma - 2.0 * alpha);
    return obj.loss().second_derivative_bound * std::sqrt(kernel_diagonal_max(obj) * tail);
}

double minibatch_variance(const ObjectiveSpec& obj, const SpectralVector& x, std::size_t m) {
    const std::size_t n = obj.n_train();
    if (m == 0 || m > n) throw std::invalid_argument("minibatch_variance: need 1 <= m <= n_train");
    if (n == 1) return 0.0;
    const double nd = static_cast<double>(n);
    const double md = static_cast<double>(m);
    return obj.gradient_dispersion(x) / md * (nd - md) / (nd - 1.0);
}

std::string_view to_string(Regime regime) { return regime == Regime::strict ? "strict" : "bounded"; }

Regime detect_regime(const ObjectiveSpec& obj, double lambda) {
    const double m_smooth = smoothness_constant(obj);
    const double mu0 = obj.kernel().mu0;
    if (lambda > m_smooth * mu0) return Regime::strict;
    if (gradient_bound(obj)) return Regime::bounded;
    std::ostringstream msg;
    msg << "no dissipativity regime applies: strict needs lambda > M mu0 but lambda = " << lambda
        << " and M mu0 = " << m_smooth * mu0 << "; bounded needs a gradient bound but loss '"
        << to_string(obj.loss().kind) << "'" << (obj.lambda0() ? " with lambda0" : "") << " has none";
    throw RegimeError(msg.str());
}

Dissipativity dissipativity_constants(const ObjectiveSpec& obj, double lambda, double x_star_norm) {
    const Regime regime = detect_regime(obj, lambda);
    const double mu0 = obj.kernel().mu0;
    if (regime == Regime::strict) {
        const double m_smooth = smoothness_constant(obj);
        const double gap = lambda / mu0 - m_smooth;
        return {regime, gap / 2.0, m_smooth * m_smooth * x_star_norm * x_star_norm / (2.0 * gap)};
    }
    const double b = *gradient_bound(obj);
    return {regime, lambda / (2.0 * mu0), b * b * mu0 / (2.0 * lambda)};
}

double regularized_objective(const ObjectiveSpec& obj, double lambda, const SpectralVector& x) {
    const double hk = rkhs_norm(x, obj.kernel());
    return obj.risk(x) + 0.5 * lambda * hk * hk;
}

namespace {

struct NewtonProblem {
    const ObjectiveSpec& obj;
    double lambda;  // 0 disables the RKHS penalty
    std::vector<double> inv_mu;

    double value(const SpectralVector& x) const {
        double v = obj.risk(x);
        if (lambda > 0.0) {
            double s = 0.0;
            for (std::size_t k = 0; k < x.n_modes(); ++k) s += x[k] * x[k] * inv_mu[k];
            v += 0.5 * lambda * s;
        }
        return v;
    }
    SpectralVector gradient(const SpectralVector& x) const {
        SpectralVector g = obj.grad(x);
        if (lambda > 0.0)
            for (std::size_t k = 0; k < x.n_modes(); ++k) g[k] += lambda * inv_mu[k] * x[k];
        return g;
    }
    Eigen::MatrixXd hessian(const SpectralVector& x) const {
        Eigen::MatrixXd h = obj.hessian(x);
        if (lambda > 0.0)
            for (std::size_t k = 0; k < x.n_modes(); ++k)
                h(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) += lambda * inv_mu[k];
        return h;
    }
};

SpectralVector newton_minimize(const NewtonProblem& p, const MinimizerOptions& opts, const char* label) {
    const std::size_t d = p.obj.n_modes();
    SpectralVector x(d);
    double fx = p.value(x);
    for (std::size_t it = 0; it < opts.max_iterations; ++it) {
        const SpectralVector g = p.gradient(x);
        if (g.norm() < opts.grad_tol) return x;
        const Eigen::MatrixXd h = p.hessian(x);
        const Eigen::Map<const Eigen::VectorXd> gv(g.data(), static_cast<Eigen::Index>(d));
        const double scale = std::max(1.0, h.diagonal().cwiseAbs().maxCoeff());
        double shift = 0.0;
        bool stepped = false;
        for (int attempt = 0; attempt < 40 && !stepped; ++attempt) {
            Eigen::MatrixXd hs = h;
            hs.diagonal().array() += shift;
            Eigen::LLT<Eigen::MatrixXd> llt(hs);
            if (llt.info() == Eigen::Success) {
                const Eigen::VectorXd dir = -llt.solve(gv);
                const double slope = gv.dot(dir);
                if (dir.allFinite() && slope < 0.0) {
                    double t = 1.0;
                    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
                        SpectralVector trial = x;
                        for (std::size_t k = 0; k < d; ++k) trial[k] += t * dir(static_cast<Eigen::Index>(k));
                        const double ft = p.value(trial);
                        if (std::isfinite(ft) && ft <= fx + 1e-4 * t * slope) {
                            x = std::move(trial);
                            fx = ft;
                            stepped = true;
                            break;
                        }
                    }
                    // Rounding floor: no decrease is representable but the step is tiny.
                    if (!stepped && std::abs(slope) < 1e-24 * (1.0 + std::abs(fx))) {
                        for (std::size_t k = 0; k < d; ++k) x[k] += dir(static_cast<Eigen::Index>(k));
                        fx = p.value(x);
                        stepped = true;
                    }
                }
            }
            shift = shift == 0.0 ? 1e-12 * scale : shift * 10.0;
        }
        if (!stepped) throw ConvergenceError(std::string(label) + ": Newton step failed to decrease the objective");
        if (x.norm() > opts.divergence_norm)
            throw ConvergenceError(std::string(label) + ": iterates diverged (minimizer not attained)");
    }
    if (p.gradient(x).norm() < opts.grad_tol) return x;
    throw ConvergenceError(std::string(label) + ": no convergence after " + std::to_string(opts.max_iterations) +
                           " iterations (gradient norm " + std::to_string(p.gradient(x).norm()) + ")");
}

}  // namespace

namespace {
std::vector<double> inverse_eigenvalues(const ObjectiveSpec& obj) {
    std::vector<double> inv_mu(obj.n_modes());
    for (std::size_t k = 0; k < inv_mu.size(); ++k) inv_mu[k] = 1.0 / eigenvalue(obj.kernel(), k);
    return inv_mu;
}
}  // namespace

SpectralVector minimize_risk(const ObjectiveSpec& obj, const MinimizerOptions& opts) {
    return newton_minimize({obj, 0.0, inverse_eigenvalues(obj)}, opts, "x_star");
}

SpectralVector minimize_regularized(const ObjectiveSpec& obj, double lambda, const MinimizerOptions& opts) {
    if (!(lambda > 0.0)) throw std::invalid_argument("minimize_regularized: lambda must be positive");
    return newton_minimize({obj, lambda, inverse_eigenvalues(obj)}, opts, "x_tilde");
}

Minimizers find_minimizers(const ObjectiveSpec& obj, double lambda, const MinimizerOptions& opts) {
    if (!(lambda > 0.0)) throw std::invalid_argument("find_minimizers: lambda must be positive");
    Minimizers out;
    out.x_star = minimize_risk(obj, opts);
    out.x_tilde = minimize_regularized(obj, lambda, opts);
    out.l_star = obj.risk(out.x_star);
    out.l_tilde = obj.risk(out.x_tilde);
    out.local = !obj.loss().convex();
    return out;
}

}  // namespace rkld
