#include "doctest.h"
#include "oracles.hpp"

#include "odebayes/error.hpp"
#include "odebayes/quadrature.hpp"
#include "odebayes/theta_map.hpp"

#include <random>

using namespace odebayes;

namespace {

TrueFunction example1_solution(double theta) { return solution_truth(builtin_model("example1"), Vec::Constant(1, theta)); }

SplineFunction random_spline(const KnotVector& kv, int d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    Mat B(kv.dimension(), d);
    for (Eigen::Index i = 0; i < B.size(); ++i) B.data()[i] = u(rng);
    return {kv, B};
}

} // namespace

TEST_CASE("gauss-legendre nodes") {
    Vec x, w;
    gauss_legendre(2, x, w);
    CHECK(x[0] == doctest::Approx(-1.0 / std::sqrt(3.0)));
    CHECK(x[1] == doctest::Approx(1.0 / std::sqrt(3.0)));
    CHECK(w[0] == doctest::Approx(1.0));
    gauss_legendre(3, x, w);
    CHECK(x[1] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(w[1] == doctest::Approx(8.0 / 9.0));
    CHECK(w[0] == doctest::Approx(5.0 / 9.0));
}

TEST_CASE("composite rule exactness") {
    const auto kv = make_knots(7, 4);
    for (int q : {1, 3, 5, 10}) {
        const auto rule = knot_aligned_rule(kv, q);
        CHECK(rule.size() == 7 * q);
        CHECK((rule.weights.array() > 0.0).all());
        CHECK((rule.nodes.array() > 0.0).all());
        CHECK((rule.nodes.array() < 1.0).all());
        // Per-panel polynomial of degree 2q-1, discontinuous across panels.
        for (int deg = 0; deg <= 2 * q - 1; ++deg) {
            auto g = [&](double t) {
                const int panel = std::min(6, static_cast<int>(t * 7));
                const double a = static_cast<double>(panel) / 7;
                return (panel + 1) * std::pow(t - a, deg);
            };
            double exact = 0.0;
            for (int p = 0; p < 7; ++p) exact += (p + 1) * std::pow(1.0 / 7, deg + 1) / (deg + 1);
            CHECK(rule.integrate(g) == doctest::Approx(exact).epsilon(1e-13));
        }
    }
    CHECK_THROWS_AS(uniform_rule(0, 4), Error);
    CHECK_THROWS_AS(composite_rule(std::vector<double>{0.0, 0.6, 0.5, 1.0}, 3), Error);
}

TEST_CASE("spline function matches basis evaluation") {
    const auto kv = make_knots(5, 4);
    const auto s = random_spline(kv, 2, 1);
    for (double t : {0.0, 0.33, 0.8, 1.0}) {
        CHECK((s.value(t) - s.coefficients().transpose() * eval_basis(kv, t, 0)).norm() <= 1e-14);
        CHECK((s.derivative(t) - s.coefficients().transpose() * eval_basis(kv, t, 1)).norm() <= 1e-13);
    }
    CHECK_THROWS_AS(SplineFunction(kv, Mat::Ones(3, 1)), Error);
}

TEST_CASE("defect vanishes at the true parameter") {
    const auto w = default_weight();
    const auto quad = uniform_rule(8, 10);
    const auto m1 = builtin_model("example1");
    CHECK(defect(example1_solution(1.0), m1, Vec::Constant(1, 1.0), w, quad) <= 1e-12);
    const auto m2 = builtin_model("example2");
    const Vec th = Vec::Constant(2, 1.0);
    CHECK(defect(solution_truth(m2, th), m2, th, w, quad) <= 1e-12);
}

TEST_CASE("defect matches a dense trapezoid oracle") {
    const auto f = example1_solution(1.0);
    const auto g = [](double t) {
        const double f0 = 1.0 + std::exp(-t * t / 2);
        const double r = -t * std::exp(-t * t / 2) - 2.0 * t * (1.0 - f0);
        return r * r * t * (1.0 - t);
    };
    const double oracle_value = std::sqrt(oracle::trapezoid(g, 0.0, 1.0, 1000001));
    const double value = defect(f, builtin_model("example1"), Vec::Constant(1, 2.0), default_weight(), uniform_rule(8, 10));
    CHECK(oracle::rel_err(value, oracle_value) <= 1e-8);
}

TEST_CASE("example1 gradient against the dense oracle") {
    const auto f = example1_solution(1.0);
    const auto m = builtin_model("example1");
    for (double eta : {-2.0, 0.5, 3.0}) {
        const auto g = [eta](double t) {
            const double f0 = 1.0 + std::exp(-t * t / 2);
            const double fp = -t * std::exp(-t * t / 2);
            return -2.0 * (t - t * f0) * (fp - eta * (t - t * f0)) * t * (1.0 - t);
        };
        const double expect = oracle::trapezoid(g, 0.0, 1.0, 1000001);
        const Vec grad = defect_gradient(f, m, Vec::Constant(1, eta), default_weight(), uniform_rule(8, 10));
        CHECK(oracle::rel_err(grad[0], expect) <= 1e-8);
    }
}

TEST_CASE("defect gradient matches finite differences") {
    std::mt19937_64 rng(17);
    const auto w = default_weight();
    for (const char* name : {"example1", "example2", "lotka_volterra", "pkpd_feedback"}) {
        CAPTURE(name);
        const auto m = builtin_model(name);
        const auto kv = make_knots(6, 4);
        const auto quad = knot_aligned_rule(kv);
        const auto samples = sample_curve(random_spline(kv, m.state_dim, 3), quad);
        const auto nodes = weighted_nodes(quad, w);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int rep = 0; rep < 50; ++rep) {
            Vec eta(m.param_dim);
            for (int k = 0; k < m.param_dim; ++k)
                eta[k] = m.bounds.lower[k] + u(rng) * (m.bounds.upper[k] - m.bounds.lower[k]);
            const Vec g = defect_gradient(samples, m, eta, nodes);
            const Vec fd = oracle::fd_gradient([&](const Vec& e) { return defect_squared(samples, m, e, nodes); }, eta, 1e-5);
            CHECK(oracle::rel_err(Mat(g), Mat(fd)) <= 1e-5);
        }
    }
}

TEST_CASE("quadrature refinement is invisible for spline inputs") {
    const auto kv = make_knots(5, 4);
    const auto m = builtin_model("example2");
    const auto s = random_spline(kv, 2, 5);
    const Vec eta(Vec::Constant(2, 0.7));
    const auto w = default_weight();
    const double a = defect(s, m, eta, w, knot_aligned_rule(kv, 10));
    const double b = defect(s, m, eta, w, knot_aligned_rule(kv, 12));
    CHECK(std::abs(a - b) < 1e-9);
}

TEST_CASE("psi recovers the parameter of an exact solution") {
    const auto w = default_weight();
    const auto quad = uniform_rule(8, 10);
    const auto m1 = builtin_model("example1");
    const auto r1 = psi(example1_solution(1.0), m1, w, quad);
    CHECK(std::abs(r1.theta[0] - 1.0) <= 1e-6);
    CHECK(r1.value <= 1e-8);
    CHECK(r1.diagnostics.interior);

    const auto m2 = builtin_model("example2");
    const auto r2 = psi(solution_truth(m2, Vec::Constant(2, 1.0)), m2, w, quad);
    CHECK((r2.theta - Vec::Constant(2, 1.0)).lpNorm<Eigen::Infinity>() <= 1e-6);
}

TEST_CASE("psi identity over random parameters") {
    std::mt19937_64 rng(23);
    const auto w = default_weight();
    const auto quad = uniform_rule(8, 10);
    for (const char* name : {"example1", "example2"}) {
        const auto m = builtin_model(name);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int rep = 0; rep < 20; ++rep) {
            Vec eta(m.param_dim);
            for (int k = 0; k < m.param_dim; ++k)
                eta[k] = m.bounds.lower[k] + u(rng) * (m.bounds.upper[k] - m.bounds.lower[k]);
            CAPTURE(eta.transpose());
            const auto r = psi(solution_truth(m, eta), m, w, quad);
            CHECK((r.theta - eta).lpNorm<Eigen::Infinity>() <= 1e-6 * std::max(1.0, eta.lpNorm<Eigen::Infinity>()));
        }
    }
}

TEST_CASE("psi of the misspecified example1 truth matches a grid scan") {
    const auto f0 = misspecified_truth("example1_case2");
    const auto m = builtin_model("example1");
    // Simpson rule on a fixed fine grid, samples cached once.
    const int N = 4000;
    std::vector<double> ts(N + 1), fv(N + 1), fp(N + 1), sw(N + 1);
    for (int i = 0; i <= N; ++i) {
        const double t = static_cast<double>(i) / N;
        ts[i] = t;
        fv[i] = f0.value(t)[0];
        fp[i] = f0.derivative(t)[0];
        sw[i] = (i == 0 || i == N ? 1.0 : (i % 2 ? 4.0 : 2.0)) / (3.0 * N) * t * (1.0 - t);
    }
    const auto obj = [&](double eta) {
        double s = 0.0;
        for (int i = 0; i <= N; ++i) {
            const double r = fp[i] - eta * ts[i] * (1.0 - fv[i]);
            s += sw[i] * r * r;
        }
        return s;
    };
    double best = 0.0, best_val = 1e300;
    for (int i = 0; i <= 30000; ++i) {
        const double eta = 1e-4 * i;
        const double v = obj(eta);
        if (v < best_val) {
            best_val = v;
            best = eta;
        }
    }
    const double refined = oracle::golden_min(obj, best - 1e-4, best + 1e-4, 1e-10);
    const auto r = psi(f0, m, default_weight(), uniform_rule(16, 10));
    CHECK(std::abs(r.theta[0] - refined) <= 1e-4);
    CHECK(r.diagnostics.interior);
}

TEST_CASE("psi diagnostics") {
    const auto m = builtin_model("lotka_volterra");
    const auto kv = make_knots(6, 4);
    const auto quad = knot_aligned_rule(kv);
    const auto samples = sample_curve(random_spline(kv, 2, 8), quad);
    const auto nodes = weighted_nodes(quad, default_weight());
    PsiConfig cfg;
    cfg.starts = 6;
    const auto r = psi(samples, m, nodes, cfg);
    const auto& d = r.diagnostics;
    CHECK(d.starts.size() == 6);
    REQUIRE(d.best_start >= 0);
    for (const auto& s : d.starts)
        if (s.converged) CHECK(r.objective <= s.objective * (1.0 + cfg.tie_tol) + cfg.tie_tol);
    CHECK(m.bounds.contains(r.theta));
    if (d.interior) CHECK(d.gradient.lpNorm<Eigen::Infinity>() <= 1e-6 * std::max(1.0, r.objective));
    CHECK(r.value == doctest::Approx(std::sqrt(defect_squared(samples, m, r.theta, nodes))));

    // Same input, same answer.
    const auto again = psi(samples, m, nodes, cfg);
    CHECK(again.theta == r.theta);
}

TEST_CASE("boundary optimum is flagged") {
    const auto m = builtin_model("example1");
    // f = 1 + exp(-15 t^2 / 2) solves example1 with theta = 15, outside the box.
    const auto f = solution_truth(m, Vec::Constant(1, 15.0));
    const auto r = psi(f, m, default_weight(), uniform_rule(8, 10));
    CHECK(r.theta[0] == 10.0);
    CHECK_FALSE(r.diagnostics.interior);
    CHECK(r.diagnostics.at_upper[0]);
}

TEST_CASE("multistart points") {
    const auto box = builtin_model("example2").bounds;
    const auto pts = multistart_points(box, 8);
    CHECK(pts.size() == 8);
    for (const auto& p : pts) CHECK(box.contains(p));
    CHECK((pts[0] - pts[1]).norm() > 0.1);
}

TEST_CASE("psi errors") {
    auto m = builtin_model("example1");
    m.rhs = [](double, const ConstVecRef&, const ConstVecRef&, VecRef out) { out.setConstant(std::nan("")); };
    const auto quad = uniform_rule(4, 5);
    const auto f = example1_solution(1.0);
    CHECK_THROWS_AS(psi(f, m, default_weight(), quad), OptimizationFailure);
    try {
        defect(f, m, Vec::Constant(1, 1.0), default_weight(), quad);
        FAIL("expected numeric error");
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::Numeric);
        CHECK(std::string(e.what()).find("eta=") != std::string::npos);
    }
    PsiConfig bad;
    bad.starts = 0;
    CHECK_THROWS_AS(psi(f, builtin_model("example1"), default_weight(), quad, bad), Error);
}
