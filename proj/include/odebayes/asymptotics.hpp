#pragma once

#include "odebayes/ode_model.hpp"
#include "odebayes/posterior.hpp"
#include "odebayes/quadrature.hpp"
#include "odebayes/spline_basis.hpp"
#include "odebayes/types.hpp"

#include <string>
#include <vector>

namespace odebayes {

/// Linearization of psi around f0:
///   J        = int (D_theta F)^T D_theta F w - int sum_i r_i d^2F_i/dtheta^2 w,  r = f0' - F(t, f0, theta0)
///   Gamma(z) = int L(t) z(t) dt,
///   L(t)     = -(D_theta F)^T D_f F w - d/dt[(D_theta F)^T w] + D_f S w,   S = (D_theta F)^T r
///   A(t)     = J^{-1} L(t)                       (p x d)
///   G_j      = int A_{.,j}(t) N(t)^T dt           (p x K)
///   B_j      = int A_{.,j}(t) A_{.,j}(t)^T dt     (p x p)
/// All integrals use the supplied quadrature rule; A is cached at its nodes.
struct BvmIngredients {
    Vec theta0;
    Mat J;
    double s_norm = 0;  // norm of the S-term contribution to J
    Vec gamma_f0;       // Gamma(f0)
    Vec nodes;          // quadrature nodes where A is cached
    Vec weights;
    std::vector<Mat> A; // one p x d matrix per node
    std::vector<Mat> G; // d matrices, each p x K
    std::vector<Mat> B; // d matrices, each p x p
    Vec b_min_eigen;    // smallest eigenvalue of each B_j
    int basis_dim = 0;
    bool fd_time_derivative = false;

    int param_dim() const noexcept { return static_cast<int>(J.rows()); }
    int state_dim() const noexcept { return static_cast<int>(G.size()); }
};

/// Throws degenerate-model when J is singular.
BvmIngredients compute_ingredients(const OdeModel& model, const TrueFunction& f0, const Vec& theta0,
                                   const WeightFn& w, const KnotVector& basis, const QuadratureRule& quad);

/// Gamma(z) by the cached quadrature: sum_q weight_q J A(t_q) z(t_q).
Vec gamma_functional(const BvmIngredients& ing, const TrueFunction& z);
/// Gamma of a spline with coefficient matrix K x d, exact through G: J sum_j G_j beta_j.
Vec gamma_spline(const BvmIngredients& ing, const Mat& coefficients);

struct AsymptoticNormal {
    Vec mean;
    Mat covariance;
};

/// N(mu_n, sigma2 Sigma_n) for sqrt(n)(theta - theta0) with independent errors.
AsymptoticNormal bvm_normal(const BvmIngredients& ing, const LinearFit& fit, double sigma2);
AsymptoticNormal bvm_normal(const BvmIngredients& ing, const DesignMatrix& X, const Mat& Y, double sigma2);

/// N(mu*_n, Sigma*_n) for rows of errors distributed N(0, Sigma).
AsymptoticNormal bvm_normal_correlated(const BvmIngredients& ing, const LinearFit& fit, const Mat& Sigma);
AsymptoticNormal bvm_normal_correlated(const BvmIngredients& ing, const DesignMatrix& X, const Mat& Y,
                                       const Mat& Sigma);

/// Distance between the empirical law of draws and a normal target. For p <= 2
/// a binned total variation on a whitened grid; for p > 2 the Kolmogorov-Smirnov
/// distance between squared Mahalanobis radii and chi^2_p.
struct TvDiagnostic {
    double value = 0;
    std::string method; // "histogram-1d", "histogram-2d" or "ks-mahalanobis"
    int bins = 0;
};

TvDiagnostic tv_diagnostic(const std::vector<Vec>& draws, const AsymptoticNormal& target);

inline constexpr int kTvMinDraws = 500;

} // namespace odebayes
