#pragma once

#include "odebayes/types.hpp"

#include <span>
#include <vector>

namespace odebayes {

/// Clamped knot sequence for an order-m B-spline basis on [0,1] with
/// interior knots l/k_n, l = 1..k_n-1. Boundary knots have multiplicity m.
class KnotVector {
public:
    KnotVector(int k_n, int order_m);

    int order() const noexcept { return order_; }
    int segments() const noexcept { return segments_; }
    /// Number of basis functions, k_n + m - 1.
    int dimension() const noexcept { return segments_ + order_ - 1; }
    double meshwidth() const noexcept { return 1.0 / segments_; }

    const std::vector<double>& knots() const noexcept { return knots_; }
    /// Interior knots only (k_n - 1 of them).
    std::vector<double> interior() const;

    /// Index s of the knot span [knots[s], knots[s+1]) holding t, with the
    /// right-continuous convention and the left limit at t = 1.
    int span(double t) const;

private:
    int segments_;
    int order_;
    std::vector<double> knots_;
};

KnotVector make_knots(int k_n, int order_m);

/// Values of all basis functions N_j^{(r)}(t), j = 0..dimension()-1.
Vec eval_basis(const KnotVector& kv, double t, int deriv_order = 0);

/// The m (possibly) nonzero derivatives at t: row r holds N^{(r)} of the
/// functions first..first+m-1. Returns first.
int eval_basis_local(const KnotVector& kv, double t, int max_deriv, Mat& out);

/// Row-wise basis values at ascending design points.
class DesignMatrix {
public:
    /// warn_spread: log a warning when the design's ECDF is far from uniform.
    DesignMatrix(const KnotVector& kv, std::span<const double> x, bool warn_spread = true);

    const KnotVector& basis() const noexcept { return basis_; }
    const Mat& matrix() const noexcept { return matrix_; }
    const Vec& points() const noexcept { return points_; }
    Eigen::Index rows() const noexcept { return matrix_.rows(); }
    Eigen::Index cols() const noexcept { return matrix_.cols(); }

    /// X^T X using the banded structure (at most m nonzeros per row).
    Mat gram() const;
    /// X^T Y.
    Mat transpose_times(const Mat& y) const;

    /// sup_t |Q_n(t) - t| where Q_n is the empirical CDF of the design.
    double ecdf_discrepancy() const;

private:
    KnotVector basis_;
    Vec points_;
    Mat matrix_;
    std::vector<int> first_nonzero_;
};

DesignMatrix design_matrix(const KnotVector& kv, std::span<const double> x, bool warn_spread = true);

/// Midpoint design x_i = (2i-1)/(2n).
std::vector<double> midpoint_design(int n);

} // namespace odebayes
