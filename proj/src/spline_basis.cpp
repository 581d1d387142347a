#include "odebayes/spline_basis.hpp"

#include "odebayes/error.hpp"
#include "odebayes/log.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace odebayes {

KnotVector::KnotVector(int k_n, int order_m) : segments_(k_n), order_(order_m) {
    if (k_n < 1 || order_m < 1) {
        std::ostringstream os;
        os << "make_knots: k_n and m must be positive (got k_n=" << k_n << ", m=" << order_m << ")";
        throw_invalid(os.str());
    }
    knots_.reserve(static_cast<std::size_t>(k_n - 1 + 2 * order_m));
    knots_.insert(knots_.end(), static_cast<std::size_t>(order_m), 0.0);
    for (int l = 1; l < k_n; ++l) knots_.push_back(static_cast<double>(l) / k_n);
    knots_.insert(knots_.end(), static_cast<std::size_t>(order_m), 1.0);
}

std::vector<double> KnotVector::interior() const {
    return {knots_.begin() + order_, knots_.end() - order_};
}

int KnotVector::span(double t) const {
    // Spans with nonzero length are s = m-1 .. m-1+k_n-1.
    const int lo = order_ - 1;
    const int hi = order_ - 1 + segments_ - 1;
    if (t >= 1.0) return hi;
    const int s = lo + static_cast<int>(std::floor(t * segments_));
    // Guard against rounding in t * k_n at knot points.
    int out = std::clamp(s, lo, hi);
    while (out < hi && t >= knots_[static_cast<std::size_t>(out + 1)]) ++out;
    while (out > lo && t < knots_[static_cast<std::size_t>(out)]) --out;
    return out;
}

KnotVector make_knots(int k_n, int order_m) { return KnotVector(k_n, order_m); }

int eval_basis_local(const KnotVector& kv, double t, int max_deriv, Mat& out) {
    // Basis functions and derivatives by the Cox-de Boor triangle
    // (Piegl & Tiller, algorithm A2.3), degree p = m - 1.
    const int m = kv.order();
    const int p = m - 1;
    const auto& U = kv.knots();
    const int s = kv.span(t);
    const int nd = std::min(max_deriv, p);

    Mat ndu(m, m);
    std::vector<double> left(static_cast<std::size_t>(m)), right(static_cast<std::size_t>(m));
    ndu(0, 0) = 1.0;
    for (int j = 1; j <= p; ++j) {
        left[j] = t - U[static_cast<std::size_t>(s + 1 - j)];
        right[j] = U[static_cast<std::size_t>(s + j)] - t;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            ndu(j, r) = right[r + 1] + left[j - r];
            const double tmp = ndu(r, j - 1) / ndu(j, r);
            ndu(r, j) = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        ndu(j, j) = saved;
    }

    out.setZero(max_deriv + 1, m);
    for (int j = 0; j <= p; ++j) out(0, j) = ndu(j, p);

    Mat a(2, m);
    for (int r = 0; r <= p; ++r) {
        int s1 = 0, s2 = 1;
        a(0, 0) = 1.0;
        for (int k = 1; k <= nd; ++k) {
            double d = 0.0;
            const int rk = r - k, pk = p - k;
            if (r >= k) {
                a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
                d = a(s2, 0) * ndu(rk, pk);
            }
            const int j1 = (rk >= -1) ? 1 : -rk;
            const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
            for (int j = j1; j <= j2; ++j) {
                a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
                d += a(s2, j) * ndu(rk + j, pk);
            }
            if (r <= pk) {
                a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
                d += a(s2, k) * ndu(r, pk);
            }
            out(k, r) = d;
            std::swap(s1, s2);
        }
    }
    double factor = p;
    for (int k = 1; k <= nd; ++k) {
        out.row(k) *= factor;
        factor *= (p - k);
    }
    return s - p;
}

Vec eval_basis(const KnotVector& kv, double t, int deriv_order) {
    if (!(t >= 0.0 && t <= 1.0)) {
        std::ostringstream os;
        os << "eval_basis: t=" << t << " outside [0,1]";
        throw Error(ErrorCategory::Domain, os.str());
    }
    if (deriv_order < 0 || deriv_order >= kv.order()) {
        std::ostringstream os;
        os << "eval_basis: derivative order " << deriv_order << " must lie in [0, m) with m=" << kv.order();
        throw_invalid(os.str());
    }
    Mat local;
    const int first = eval_basis_local(kv, t, deriv_order, local);
    Vec out = Vec::Zero(kv.dimension());
    out.segment(first, kv.order()) = local.row(deriv_order).transpose();
    return out;
}

DesignMatrix::DesignMatrix(const KnotVector& kv, std::span<const double> x, bool warn_spread)
    : basis_(kv), points_(static_cast<Eigen::Index>(x.size())) {
    const auto n = static_cast<Eigen::Index>(x.size());
    if (n == 0) throw_invalid("design_matrix: empty design");
    for (Eigen::Index i = 0; i < n; ++i) {
        const double xi = x[static_cast<std::size_t>(i)];
        if (!(xi >= 0.0 && xi <= 1.0)) {
            std::ostringstream os;
            os << "design_matrix: x[" << i << "]=" << xi << " outside [0,1]";
            throw_invalid(os.str());
        }
        if (i > 0 && xi < x[static_cast<std::size_t>(i - 1)]) {
            std::ostringstream os;
            os << "design_matrix: design points not ascending at index " << i;
            throw_invalid(os.str());
        }
        points_[i] = xi;
    }
    matrix_.setZero(n, kv.dimension());
    first_nonzero_.resize(static_cast<std::size_t>(n));
    Mat local;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int first = eval_basis_local(kv, points_[i], 0, local);
        first_nonzero_[static_cast<std::size_t>(i)] = first;
        matrix_.row(i).segment(first, kv.order()) = local.row(0);
    }
    if (warn_spread && basis_.dimension() > 1) {
        const double disc = ecdf_discrepancy();
        if (disc * basis_.segments() > 0.5) {
            std::ostringstream os;
            os << "design_matrix: sup|Q_n(t)-t| = " << disc << " is not small relative to 1/k_n = "
               << basis_.meshwidth();
            log::warn(os.str());
        }
    }
}

Mat DesignMatrix::gram() const {
    const int m = basis_.order();
    Mat g = Mat::Zero(cols(), cols());
    for (Eigen::Index i = 0; i < rows(); ++i) {
        const int f = first_nonzero_[static_cast<std::size_t>(i)];
        const auto r = matrix_.row(i).segment(f, m);
        g.block(f, f, m, m).noalias() += r.transpose() * r;
    }
    return g;
}

Mat DesignMatrix::transpose_times(const Mat& y) const {
    if (y.rows() != rows()) throw_invalid("DesignMatrix::transpose_times: row mismatch");
    const int m = basis_.order();
    Mat out = Mat::Zero(cols(), y.cols());
    for (Eigen::Index i = 0; i < rows(); ++i) {
        const int f = first_nonzero_[static_cast<std::size_t>(i)];
        out.middleRows(f, m).noalias() += matrix_.row(i).segment(f, m).transpose() * y.row(i);
    }
    return out;
}

double DesignMatrix::ecdf_discrepancy() const {
    const auto n = static_cast<double>(points_.size());
    double sup = 0.0;
    for (Eigen::Index i = 0; i < points_.size(); ++i) {
        const double t = points_[i];
        sup = std::max({sup, std::abs(static_cast<double>(i + 1) / n - t), std::abs(static_cast<double>(i) / n - t)});
    }
    return sup;
}

DesignMatrix design_matrix(const KnotVector& kv, std::span<const double> x, bool warn_spread) {
    return DesignMatrix(kv, x, warn_spread);
}

std::vector<double> midpoint_design(int n) {
    if (n < 1) throw_invalid("midpoint_design: n must be positive");
    std::vector<double> x(static_cast<std::size_t>(n));
    for (int i = 1; i <= n; ++i) x[static_cast<std::size_t>(i - 1)] = (2.0 * i - 1.0) / (2.0 * n);
    return x;
}

} // namespace odebayes
