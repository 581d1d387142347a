#pragma once

// Independent reference computations shared by the test suites. Nothing here
// calls into the code paths it is used to check.

#include "odebayes/types.hpp"

#include <cmath>
#include <functional>

namespace oracle {

using odebayes::Mat;
using odebayes::Vec;

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-300, std::max(std::abs(a), std::abs(b))); }

inline double rel_err(const Mat& a, const Mat& b) {
    const double den = std::max(a.norm(), b.norm());
    return den == 0.0 ? 0.0 : (a - b).norm() / den;
}

/// Composite trapezoid on [a, b] with `points` nodes.
inline double trapezoid(const std::function<double(double)>& g, double a, double b, long points) {
    const double h = (b - a) / static_cast<double>(points - 1);
    double s = 0.5 * (g(a) + g(b));
    for (long i = 1; i < points - 1; ++i) s += g(a + h * static_cast<double>(i));
    return s * h;
}

inline double central_diff(const std::function<double(double)>& g, double x, double h) {
    return (g(x + h) - g(x - h)) / (2.0 * h);
}

/// Gradient of a scalar function by central differences.
inline Vec fd_gradient(const std::function<double(const Vec&)>& g, const Vec& x, double h) {
    Vec out(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Vec xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        out[i] = (g(xp) - g(xm)) / (2.0 * h);
    }
    return out;
}

/// Hessian of a scalar function by central differences.
inline Mat fd_hessian(const std::function<double(const Vec&)>& g, const Vec& x, double h) {
    const auto p = x.size();
    Mat H(p, p);
    for (Eigen::Index i = 0; i < p; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) {
            Vec a = x, b = x, c = x, d = x;
            a[i] += h; a[j] += h;
            b[i] += h; b[j] -= h;
            c[i] -= h; c[j] += h;
            d[i] -= h; d[j] -= h;
            H(i, j) = (g(a) - g(b) - g(c) + g(d)) / (4.0 * h * h);
        }
    }
    return 0.5 * (H + H.transpose());
}

/// Golden-section minimization of a unimodal function on [a, b].
inline double golden_min(const std::function<double(double)>& g, double a, double b, double tol) {
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - r * (b - a), d = a + r * (b - a);
    while (b - a > tol) {
        if (g(c) < g(d)) b = d; else a = c;
        c = b - r * (b - a);
        d = a + r * (b - a);
    }
    return 0.5 * (a + b);
}

} // namespace oracle
