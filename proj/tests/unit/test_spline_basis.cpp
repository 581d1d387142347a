#include "doctest.h"
#include "oracles.hpp"

#include "odebayes/error.hpp"
#include "odebayes/spline_basis.hpp"

#include <random>

using namespace odebayes;

TEST_CASE("make_knots layout") {
    const auto kv = make_knots(4, 4);
    CHECK(kv.dimension() == 7);
    const auto interior = kv.interior();
    REQUIRE(interior.size() == 3);
    CHECK(interior[0] == doctest::Approx(0.25));
    CHECK(interior[1] == doctest::Approx(0.5));
    CHECK(interior[2] == doctest::Approx(0.75));
    CHECK(kv.knots().size() == 3 + 8);
    CHECK(kv.meshwidth() == doctest::Approx(0.25));

    const auto kv10 = make_knots(10, 5);
    CHECK(kv10.dimension() == 14);
    CHECK(kv10.knots().size() == 19);
    for (int i = 0; i < 5; ++i) {
        CHECK(kv10.knots()[static_cast<std::size_t>(i)] == 0.0);
        CHECK(kv10.knots()[kv10.knots().size() - 1 - static_cast<std::size_t>(i)] == 1.0);
    }
    CHECK(std::is_sorted(kv10.knots().begin(), kv10.knots().end()));
}

TEST_CASE("degenerate single interval basis") {
    const auto kv = make_knots(1, 1);
    CHECK(kv.dimension() == 1);
    CHECK(kv.interior().empty());
    for (double t : {0.0, 0.3, 1.0}) CHECK(eval_basis(kv, t, 0)[0] == 1.0);
}

TEST_CASE("make_knots rejects nonpositive arguments") {
    CHECK_THROWS_AS(make_knots(0, 4), Error);
    CHECK_THROWS_AS(make_knots(3, 0), Error);
    try {
        make_knots(-1, 2);
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::InvalidArgument);
    }
}

TEST_CASE("piecewise constant indicator") {
    const auto kv = make_knots(2, 1);
    const Vec v = eval_basis(kv, 0.3, 0);
    CHECK(v[0] == 1.0);
    CHECK(v[1] == 0.0);
    // Right-continuous at the interior knot, left limit at 1.
    CHECK(eval_basis(kv, 0.5, 0)[1] == 1.0);
    CHECK(eval_basis(kv, 1.0, 0)[1] == 1.0);
}

TEST_CASE("eval_basis errors") {
    const auto kv = make_knots(4, 4);
    CHECK_THROWS_AS(eval_basis(kv, -0.1, 0), Error);
    CHECK_THROWS_AS(eval_basis(kv, 1.5, 0), Error);
    CHECK_THROWS_AS(eval_basis(kv, 0.5, 4), Error);
    try {
        eval_basis(kv, 2.0, 0);
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::Domain);
    }
}

TEST_CASE("partition of unity and local support") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int m = 1; m <= 6; ++m) {
        for (int k : {1, 2, 3, 7, 13}) {
            const auto kv = make_knots(k, m);
            std::vector<double> ts{0.0, 0.37, 1.0, 0.5, 1.0 / k};
            for (int i = 0; i < 50; ++i) ts.push_back(u(rng));
            for (double t : ts) {
                const Vec v = eval_basis(kv, t, 0);
                CHECK(std::abs(v.sum() - 1.0) <= 1e-12);
                CHECK((v.array() >= -1e-15).all());
                // Nonzeros form a run of at most m consecutive indices.
                int first = -1, last = -1;
                for (int j = 0; j < v.size(); ++j) {
                    if (v[j] != 0.0) {
                        if (first < 0) first = j;
                        last = j;
                    }
                }
                CHECK(last - first + 1 <= m);
            }
        }
    }
}

TEST_CASE("derivatives match central finite differences") {
    for (int m : {2, 3, 4, 5}) {
        const auto kv = make_knots(6, m);
        for (int r = 1; r < m; ++r) {
            for (double t : {0.4, 0.11, 0.93, 0.27}) {
                const Vec d = eval_basis(kv, t, r);
                for (int j = 0; j < kv.dimension(); ++j) {
                    const auto g = [&](double s) { return eval_basis(kv, s, r - 1)[j]; };
                    const double fd = oracle::central_diff(g, t, 1e-6);
                    CHECK(std::abs(d[j] - fd) <= 1e-5 * std::max(1.0, std::abs(d[j])));
                }
            }
        }
    }
}

TEST_CASE("design_matrix basics") {
    const std::vector<double> x{1.0 / 6, 0.5, 5.0 / 6};
    const auto X = design_matrix(make_knots(1, 1), x);
    CHECK(X.rows() == 3);
    CHECK(X.cols() == 1);
    CHECK((X.matrix().array() == 1.0).all());

    const auto xs = midpoint_design(50);
    const auto kv = make_knots(6, 5);
    const auto X2 = design_matrix(kv, xs);
    for (Eigen::Index i = 0; i < X2.rows(); ++i) {
        CHECK(std::abs(X2.matrix().row(i).sum() - 1.0) <= 1e-12);
        CHECK((X2.matrix().row(i).array() != 0.0).count() <= 5);
        CHECK((X2.matrix().row(i).transpose() - eval_basis(kv, xs[static_cast<std::size_t>(i)], 0)).norm() == 0.0);
    }
    CHECK(oracle::rel_err(X2.gram(), X2.matrix().transpose() * X2.matrix()) < 1e-14);
}

TEST_CASE("design_matrix rejects bad designs") {
    const auto kv = make_knots(3, 3);
    CHECK_THROWS_AS(design_matrix(kv, std::vector<double>{0.5, 0.2}), Error);
    CHECK_THROWS_AS(design_matrix(kv, std::vector<double>{0.1, 1.2}), Error);
    CHECK_THROWS_AS(design_matrix(kv, std::vector<double>{}), Error);
}

TEST_CASE("midpoint design") {
    const auto x = midpoint_design(4);
    CHECK(x == std::vector<double>{0.125, 0.375, 0.625, 0.875});
    const auto X = design_matrix(make_knots(3, 4), midpoint_design(200));
    CHECK(X.ecdf_discrepancy() == doctest::Approx(1.0 / 400));
}

TEST_CASE("Gram eigenvalues are of order 1/k_n") {
    const int n = 500;
    // Frozen from an independent dense eigensolve (scipy BSpline basis).
    {
        const auto X = design_matrix(make_knots(8, 5), midpoint_design(n));
        Eigen::SelfAdjointEigenSolver<Mat> es(X.gram() / n);
        CHECK(es.eigenvalues().minCoeff() * 8 == doctest::Approx(0.0125216).epsilon(1e-4));
        CHECK(es.eigenvalues().maxCoeff() * 8 == doctest::Approx(0.919335).epsilon(1e-4));
    }
    for (int k : {4, 6, 8, 12, 16}) {
        const auto X = design_matrix(make_knots(k, 5), midpoint_design(n));
        Eigen::SelfAdjointEigenSolver<Mat> es(X.gram() / n);
        CHECK(es.eigenvalues().minCoeff() * k >= 0.005);
        CHECK(es.eigenvalues().maxCoeff() * k <= 1.0);
    }
}

TEST_CASE("spline reproduction by least squares") {
    const auto kv = make_knots(5, 4);
    const auto x = midpoint_design(80);
    const auto X = design_matrix(kv, x);
    Vec beta(kv.dimension());
    for (int j = 0; j < beta.size(); ++j) beta[j] = std::sin(1.0 + j);
    const Vec y = X.matrix() * beta;
    const Vec fitted = X.gram().ldlt().solve(X.transpose_times(y));
    CHECK((X.matrix() * fitted - y).lpNorm<Eigen::Infinity>() <= 1e-10);
}
