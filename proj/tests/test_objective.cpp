#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "doctest.h"
#include "rkld/objective.hpp"
#include "test_util.hpp"

using namespace rkld;
using testutil::random_vector;

namespace {

ObjectiveSpec make_obj(LossKind loss, std::size_t n, std::size_t modes, std::uint64_t seed = 1,
                       std::optional<double> lambda0 = std::nullopt) {
    Dataset d = loss == LossKind::squared || loss == LossKind::squared_sine
                    ? Dataset::synthetic_regression(n, seed)
                    : Dataset::synthetic_classification(n, seed);
    return ObjectiveSpec(std::move(d), loss, KernelSpec{}, modes, lambda0);
}

SpectralVector unit_random(std::size_t n, std::uint64_t key, std::uint64_t step) {
    SpectralVector h = random_vector(n, key, step);
    h *= 1.0 / h.norm();
    return h;
}

std::vector<std::vector<std::uint32_t>> subsets(std::uint32_t n, std::uint32_t m) {
    std::vector<std::vector<std::uint32_t>> out;
    std::vector<bool> pick(n, false);
    std::fill(pick.begin(), pick.begin() + m, true);
    do {
        std::vector<std::uint32_t> s;
        for (std::uint32_t i = 0; i < n; ++i)
            if (pick[i]) s.push_back(i);
        out.push_back(s);
    } while (std::prev_permutation(pick.begin(), pick.end()));
    return out;
}

}  // namespace

TEST_CASE("dataset validation and synthetic generators") {
    CHECK_THROWS_AS(Dataset(std::vector<DataPoint>{}), std::invalid_argument);
    CHECK_THROWS_AS(Dataset(std::vector<DataPoint>{{1.2, 0.0}}), std::invalid_argument);
    CHECK_THROWS_AS(Dataset(std::vector<DataPoint>{{0.5, NAN}}), std::invalid_argument);
    const Dataset c = Dataset::synthetic_classification(50, 3);
    for (const auto& p : c.points()) {
        CHECK(p.z >= 0.0);
        CHECK(p.z <= 1.0);
        CHECK(std::abs(p.y) == 1.0);
        CHECK(p.y == (std::sin(2 * M_PI * p.z) >= 0 ? 1.0 : -1.0));
    }
    const Dataset a = Dataset::synthetic_regression(200, 3, 0.1);
    const Dataset b = Dataset::synthetic_regression(200, 3, 0.1);
    double resid = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].z == b[i].z);
        CHECK(a[i].y == b[i].y);
        resid += std::pow(a[i].y - std::sin(2 * M_PI * a[i].z), 2);
    }
    CHECK(std::sqrt(resid / 200) == doctest::Approx(0.1).epsilon(0.2));
}

TEST_CASE("dataset CSV round trip and line-anchored errors") {
    const auto dir = std::filesystem::temp_directory_path() / "rkld_obj_csv";
    std::filesystem::create_directories(dir);
    const Dataset d = Dataset::synthetic_regression(17, 9);
    d.write_csv(dir / "d.csv");
    const Dataset r = Dataset::from_csv(dir / "d.csv");
    REQUIRE(r.size() == 17);
    for (std::size_t i = 0; i < 17; ++i) {
        CHECK(r[i].z == d[i].z);
        CHECK(r[i].y == d[i].y);
    }
    auto expect_error = [&](const std::string& body, const std::string& needle) {
        std::ofstream(dir / "bad.csv") << body;
        try {
            (void)Dataset::from_csv(dir / "bad.csv");
            FAIL("no error for: " << body);
        } catch (const std::runtime_error& e) {
            CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos, e.what());
        }
    };
    expect_error("x,y\n0.1,1\n", ":1:");
    expect_error("z,y\n0.1,1\n0.2\n", ":3:");
    expect_error("z,y\n0.1,1\n0.2,abc\n", ":3:");
    expect_error("z,y\n1.5,1\n", "outside");
    CHECK_THROWS_AS(Dataset::from_csv(dir / "missing.csv"), std::runtime_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("loss constants match dense grid oracles") {
    const Dataset d(std::vector<DataPoint>{{0.1, 1.0}, {0.7, -1.0}});
    for (LossKind kind : {LossKind::squared, LossKind::squared_sine, LossKind::logistic, LossKind::savage}) {
        const LossFamily f = LossFamily::make(kind, d);
        double s1 = 0.0, s2 = 0.0;
        for (int i = -40000; i <= 40000; ++i) {
            const double u = i * 1e-3;
            s1 = std::max(s1, std::abs(f.d1(u, 1.0)));
            s2 = std::max(s2, std::abs(f.d2(u, 1.0)));
        }
        CAPTURE(to_string(kind));
        CHECK(s2 <= f.second_derivative_bound * (1 + 1e-12));
        CHECK(s2 >= f.second_derivative_bound * (1 - 1e-5));
        if (f.first_derivative_bound) {
            CHECK(s1 <= *f.first_derivative_bound * (1 + 1e-12));
            CHECK(s1 >= *f.first_derivative_bound * (1 - 1e-5));
        }
    }
    CHECK_FALSE(LossFamily::make(LossKind::squared, d).first_derivative_bound);
    CHECK_FALSE(LossFamily::make(LossKind::squared_sine, d).first_derivative_bound);
    CHECK(LossFamily::make(LossKind::savage, d).first_derivative_bound.value() == doctest::Approx(8.0 / 27.0));
    CHECK(LossFamily::make(LossKind::squared_sine, d).second_derivative_bound == 1.5);
    CHECK_FALSE(LossFamily::make(LossKind::savage, d).convex());
    CHECK(LossFamily::make(LossKind::logistic, d).convex());
    const Dataset big(std::vector<DataPoint>{{0.1, 2.0}, {0.7, -1.0}});
    CHECK(LossFamily::make(LossKind::logistic, big).second_derivative_bound == doctest::Approx(1.0));
    CHECK_THROWS(parse_loss("hinge"));
}

TEST_CASE("loss derivative consistency") {
    const Dataset d(std::vector<DataPoint>{{0.1, 1.0}, {0.7, -1.0}});
    for (LossKind kind : {LossKind::squared, LossKind::squared_sine, LossKind::logistic, LossKind::savage}) {
        const LossFamily f = LossFamily::make(kind, d);
        for (double u : {-3.0, -0.4, 0.0, 0.3, 2.5})
            for (double y : {-1.0, 1.0}) {
                const double h = 1e-5;
                const double fd1 = (f.value(u + h, y) - f.value(u - h, y)) / (2 * h);
                const double fd2 = (f.d1(u + h, y) - f.d1(u - h, y)) / (2 * h);
                CHECK(f.d1(u, y) == doctest::Approx(fd1).epsilon(1e-6));
                CHECK(f.d2(u, y) == doctest::Approx(fd2).epsilon(1e-6));
            }
    }
    const LossFamily lg = LossFamily::make(LossKind::logistic, d);
    CHECK(std::isfinite(lg.value(-1e4, 1.0)));
    CHECK(lg.value(1e4, 1.0) == 0.0);
}

TEST_CASE("risk examples") {
    const Dataset d(std::vector<DataPoint>{{0.2, 1.0}, {0.6, -1.0}});
    const ObjectiveSpec sq(d, LossKind::squared, KernelSpec{}, 8);
    CHECK(sq.risk(SpectralVector(8)) == doctest::Approx(0.5).epsilon(1e-15));
    const ObjectiveSpec lg(d, LossKind::logistic, KernelSpec{}, 8);
    CHECK(lg.risk(SpectralVector(8)) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK_THROWS_AS(sq.risk(SpectralVector(7)), std::invalid_argument);

    // Labels generated by a known coefficient vector are fitted exactly.
    const SpectralVector x = random_vector(8, 12, 0);
    std::vector<DataPoint> pts;
    for (double z : {0.05, 0.3, 0.55, 0.9}) pts.push_back({z, inner(x, feature_map(KernelSpec{}, z, 8))});
    const ObjectiveSpec fit(Dataset(pts), LossKind::squared, KernelSpec{}, 8);
    CHECK(fit.risk(x) < 1e-28);
    CHECK(fit.grad(x).norm() < 1e-14);
}

TEST_CASE("gradient examples and finite differences") {
    const Dataset one(std::vector<DataPoint>{{0.35, 0.8}});
    const ObjectiveSpec sq(one, LossKind::squared, KernelSpec{}, 10);
    const SpectralVector g = sq.grad(SpectralVector(10));
    const SpectralVector psi = feature_map(KernelSpec{}, 0.35, 10);
    for (std::size_t k = 0; k < 10; ++k) CHECK(g[k] == doctest::Approx(-0.8 * psi[k]).epsilon(1e-14));

    for (LossKind kind : {LossKind::squared, LossKind::squared_sine, LossKind::logistic, LossKind::savage}) {
        for (std::optional<double> l0 : {std::optional<double>{}, std::optional<double>{0.5}}) {
            const ObjectiveSpec obj = make_obj(kind, 12, 16, 2, l0);
            for (std::uint64_t t = 0; t < 20; ++t) {
                const SpectralVector x = random_vector(16, 20, t);
                const SpectralVector h = unit_random(16, 21, t);
                const double step = 1e-4;
                const double fd = (obj.risk(x + step * h) - obj.risk(x - step * h)) / (2 * step);
                const double an = inner(obj.grad(x), h);
                CAPTURE(to_string(kind));
                CHECK(std::abs(an - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
            }
        }
    }
}

TEST_CASE("ridge term adds lambda0 x to the gradient and lambda0 to M") {
    const ObjectiveSpec a = make_obj(LossKind::squared, 10, 12, 4);
    const ObjectiveSpec b = make_obj(LossKind::squared, 10, 12, 4, 0.5);
    const SpectralVector x = random_vector(12, 30, 0);
    const SpectralVector diff = b.grad(x) - a.grad(x);
    for (std::size_t k = 0; k < 12; ++k) CHECK(diff[k] == doctest::Approx(0.5 * x[k]).epsilon(1e-12));
    CHECK(b.risk(x) - a.risk(x) == doctest::Approx(0.25 * x.norm_squared()).epsilon(1e-12));
    CHECK(smoothness_constant(b) == doctest::Approx(smoothness_constant(a) + 0.5).epsilon(1e-15));
    CHECK_FALSE(gradient_bound(make_obj(LossKind::logistic, 10, 12, 4, 0.5)));
}

TEST_CASE("stochastic gradient: full batch, singleton, exhaustive unbiasedness") {
    for (std::uint32_t n : {5u, 6u, 8u}) {
        const ObjectiveSpec obj = make_obj(LossKind::logistic, n, 9, 5);
        const SpectralVector x = random_vector(9, 40, n);
        const SpectralVector full = obj.grad(x);
        CHECK(obj.stochastic_grad(x, obj.all_indices()) == full);
        for (std::uint32_t i = 0; i < n; ++i) {
            const std::uint32_t s[] = {i};
            CHECK(obj.stochastic_grad(x, s) == obj.sample_grad(x, i));
        }
        for (std::uint32_t m = 1; m <= n; ++m) {
            const auto all = subsets(n, m);
            SpectralVector mean(9);
            double msd = 0.0;
            for (const auto& s : all) {
                const SpectralVector g = obj.stochastic_grad(x, s);
                mean += g;
                msd += (g - full).norm_squared();
            }
            mean *= 1.0 / static_cast<double>(all.size());
            msd /= static_cast<double>(all.size());
            CHECK((mean - full).norm() <= 1e-14 * std::max(1.0, full.norm()));
            CHECK(minibatch_variance(obj, x, m) == doctest::Approx(msd).epsilon(1e-10).scale(1e-20));
        }
    }
    const ObjectiveSpec obj = make_obj(LossKind::squared, 5, 4);
    const std::uint32_t bad[] = {5};
    CHECK_THROWS_AS(obj.stochastic_grad(SpectralVector(4), std::span<const std::uint32_t>{}), std::invalid_argument);
    CHECK_THROWS_AS(obj.stochastic_grad(SpectralVector(4), bad), std::out_of_range);
    CHECK_THROWS_AS(minibatch_variance(obj, SpectralVector(4), 6), std::invalid_argument);
}

TEST_CASE("batch_grad_into matches stochastic_grad") {
    const ObjectiveSpec obj = make_obj(LossKind::savage, 20, 33, 6, 0.25);
    GradientWorkspace ws;
    SpectralVector out(33);
    for (std::uint64_t t = 0; t < 10; ++t) {
        const SpectralVector x = random_vector(33, 50, t);
        const std::uint32_t batch[] = {1, 4, 7, 19};
        obj.batch_grad_into(x, batch, out, ws);
        const SpectralVector ref = obj.stochastic_grad(x, batch);
        CHECK((out - ref).norm() <= 1e-14 * std::max(1.0, ref.norm()));
    }
}

TEST_CASE("smoothness constant dominates difference quotients") {
    for (LossKind kind : {LossKind::squared, LossKind::squared_sine, LossKind::logistic, LossKind::savage}) {
        const ObjectiveSpec obj = make_obj(kind, 15, 24, 7);
        double rmax = 0.0;
        for (std::size_t i = 0; i < obj.n_train(); ++i) rmax = std::max(rmax, kernel_gamma(KernelSpec{}, obj.dataset()[i].z, obj.dataset()[i].z, 24));
        CHECK(kernel_diagonal_max(obj) == doctest::Approx(rmax).epsilon(1e-13));
        const double m = smoothness_constant(obj);
        CHECK(m == doctest::Approx(obj.loss().second_derivative_bound * rmax).epsilon(1e-13));
        double worst = 0.0;
        for (std::uint64_t t = 0; t < 200; ++t) {
            const SpectralVector a = random_vector(24, 60, t, 2.0);
            const SpectralVector b = a + random_vector(24, 61, t, 0.01 + 0.01 * t);
            worst = std::max(worst, (obj.grad(a) - obj.grad(b)).norm() / (a - b).norm());
        }
        CAPTURE(to_string(kind));
        CHECK(worst <= m);
    }
}

TEST_CASE("gradient bound") {
    const ObjectiveSpec lg = make_obj(LossKind::logistic, 15, 24, 8);
    CHECK(gradient_bound(lg).value() == doctest::Approx(std::sqrt(kernel_diagonal_max(lg))).epsilon(1e-14));
    CHECK_FALSE(gradient_bound(make_obj(LossKind::squared, 15, 24)));
    for (LossKind kind : {LossKind::logistic, LossKind::savage}) {
        const ObjectiveSpec obj = make_obj(kind, 15, 24, 8);
        const double b = *gradient_bound(obj);
        for (std::uint64_t t = 0; t < 500; ++t) {
            SpectralVector x = unit_random(24, 70, t);
            x *= 100.0 * CounterRng(71).uniform(t, 0);
            CHECK(obj.grad(x).norm() <= b);
        }
    }
}

TEST_CASE("second derivative and its bound") {
    const ObjectiveSpec obj = make_obj(LossKind::savage, 12, 16, 9);
    const double alpha = (obj.kernel().gamma - 1.0) / 2.0 + 0.25;
    const double bound = second_derivative_bound(obj, alpha);
    double tail = 0.0;
    for (std::size_t k = 0; k < 16; ++k) tail += std::pow(eigenvalue(obj.kernel(), k), obj.kernel().gamma - 2 * alpha);
    CHECK(bound == doctest::Approx(obj.loss().second_derivative_bound * std::sqrt(kernel_diagonal_max(obj) * tail)));
    for (std::uint64_t t = 0; t < 200; ++t) {
        const SpectralVector x = random_vector(16, 80, t);
        const SpectralVector h = random_vector(16, 81, t);
        const SpectralVector k = random_vector(16, 82, t);
        const double d2 = obj.second_derivative(x, h, k);
        const Eigen::MatrixXd hs = obj.hessian(x);
        const Eigen::Map<const Eigen::VectorXd> hv(h.data(), 16), kv(k.data(), 16);
        CHECK(d2 == doctest::Approx(hv.dot(hs * kv)).epsilon(1e-11));
        CHECK(std::abs(d2) <= bound * h.norm() * weighted_norm(k, obj.kernel(), alpha));
        if (t < 10) {
            const double s = 1e-5;
            const double fd = (inner(obj.grad(x + s * k), h) - inner(obj.grad(x - s * k), h)) / (2 * s);
            CHECK(d2 == doctest::Approx(fd).epsilon(1e-6).scale(1e-8));
        }
    }
}

TEST_CASE("gradient dispersion") {
    const ObjectiveSpec obj = make_obj(LossKind::squared, 7, 10, 10);
    const SpectralVector x = random_vector(10, 90, 0);
    const SpectralVector g = obj.grad(x);
    double s = 0.0;
    for (std::size_t i = 0; i < 7; ++i) s += (obj.sample_grad(x, i) - g).norm_squared();
    CHECK(obj.gradient_dispersion(x) == doctest::Approx(s / 7).epsilon(1e-12));
    CHECK(minibatch_variance(obj, x, 7) == 0.0);
}

TEST_CASE("regime detection and dissipativity constants") {
    const ObjectiveSpec sq = make_obj(LossKind::squared, 10, 16, 11);
    const double m = smoothness_constant(sq);
    const double mu0 = sq.kernel().mu0;
    CHECK(detect_regime(sq, 2 * m * mu0) == Regime::strict);
    const auto dc = dissipativity_constants(sq, 2 * m * mu0, 3.0);
    CHECK(dc.m == doctest::Approx(m / 2).epsilon(1e-14));
    CHECK(dc.c == doctest::Approx(m * m * 9.0 / (2 * m)).epsilon(1e-14));
    try {
        (void)detect_regime(sq, 0.5 * m * mu0);
        FAIL("expected RegimeError");
    } catch (const RegimeError& e) {
        const std::string w = e.what();
        CHECK(w.find("lambda =") != std::string::npos);
        CHECK(w.find("M mu0 =") != std::string::npos);
    }

    // Bounded regime with lambda = 1, mu0 = 1 and B = 2: labels of size 2 make B_l = 2,
    // and the diagonal maximum is 1 when gamma is large enough for mu_k^gamma to vanish
    // beyond mode 0.
    KernelSpec ks;
    ks.gamma = 200.0;
    const ObjectiveSpec lg(Dataset(std::vector<DataPoint>{{0.3, 2.0}, {0.8, -2.0}}), LossKind::logistic, ks, 6);
    REQUIRE(gradient_bound(lg).value() == doctest::Approx(2.0).epsilon(1e-12));
    REQUIRE(detect_regime(lg, 1.0) == Regime::bounded);
    const auto bd = dissipativity_constants(lg, 1.0, 0.0);
    CHECK(bd.m == doctest::Approx(0.5));
    CHECK(bd.c == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("dissipativity probe on random points") {
    auto probe = [](const ObjectiveSpec& obj, double lambda, double x_star_norm) {
        const Dissipativity dc = dissipativity_constants(obj, lambda, x_star_norm);
        const auto a = generator_a(obj.kernel(), lambda, obj.n_modes());
        double worst = -1e300;
        for (std::uint64_t t = 0; t < 1000; ++t) {
            const SpectralVector x = random_vector(obj.n_modes(), 100, t, 0.1 * (1 + t % 50));
            const double lhs = inner(a.apply(x) - obj.grad(x), x);
            worst = std::max(worst, lhs - (-dc.m * x.norm_squared() + dc.c));
        }
        return worst;
    };
    const ObjectiveSpec sq = make_obj(LossKind::squared, 10, 16, 12);
    const SpectralVector xs = minimize_risk(sq);
    CHECK(sq.grad(xs).norm() < 1e-8);
    CHECK(probe(sq, 3 * smoothness_constant(sq), xs.norm()) <= 0.0);
    const ObjectiveSpec sv = make_obj(LossKind::savage, 10, 16, 12);
    CHECK(probe(sv, 0.3, 0.0) <= 0.0);
    const ObjectiveSpec lg = make_obj(LossKind::logistic, 10, 16, 12);
    CHECK(probe(lg, 0.05, 0.0) <= 0.0);
}

TEST_CASE("minimizers") {
    // Five distinct inputs and sixteen modes: the squared-loss fit interpolates.
    const ObjectiveSpec sq = make_obj(LossKind::squared, 5, 16, 13);
    const Minimizers mz = find_minimizers(sq, 0.1);
    CHECK(mz.l_star < 1e-16);
    CHECK_FALSE(mz.local);
    CHECK(mz.l_tilde == doctest::Approx(sq.risk(mz.x_tilde)));
    CHECK(regularized_objective(sq, 0.1, mz.x_tilde) <= regularized_objective(sq, 0.1, mz.x_star));
    CHECK(mz.l_tilde >= mz.l_star);

    auto residual = [](const ObjectiveSpec& obj, double lambda, const SpectralVector& xt) {
        SpectralVector r = obj.grad(xt);
        for (std::size_t k = 0; k < r.n_modes(); ++k) r[k] += lambda * xt[k] / eigenvalue(obj.kernel(), k);
        return r.norm();
    };
    CHECK(residual(sq, 0.1, mz.x_tilde) < 1e-8);
    const ObjectiveSpec lg = make_obj(LossKind::logistic, 12, 16, 13);
    const SpectralVector xl = minimize_regularized(lg, 0.5);
    CHECK(residual(lg, 0.5, xl) < 1e-8);

    const SpectralVector huge = minimize_regularized(sq, 1e6);
    CHECK(huge.norm() < 1e-3);
    CHECK(residual(sq, 1e6, huge) < 1e-8);

    const ObjectiveSpec sv = make_obj(LossKind::savage, 12, 16, 13);
    const Minimizers ms = find_minimizers(sv, 0.5);
    CHECK(ms.local);
    CHECK(residual(sv, 0.5, ms.x_tilde) < 1e-8);

    MinimizerOptions few;
    few.max_iterations = 1;
    few.grad_tol = 1e-300;
    CHECK_THROWS_AS(minimize_regularized(lg, 0.5, few), ConvergenceError);
}
