#pragma once

#include "odebayes/rng.hpp"
#include "odebayes/spline_basis.hpp"
#include "odebayes/types.hpp"

#include <cstdint>
#include <variant>
#include <vector>

namespace odebayes {

/// How the spline-coefficient prior scales with the error variance.
///   Fixed:  beta_j ~ N(0, n/k_n (X^T X)^{-1})
///   Scaled: beta_j | sigma^2 ~ N(0, n/k_n sigma^2 (X^T X)^{-1})
enum class PriorScaling { Fixed, Scaled };

/// Shared pieces of the working linear model Y = X B + E.
struct LinearFit {
    Mat gram_inverse;      // (X^T X)^{-1}
    Mat gram_inverse_chol; // lower Cholesky factor of (X^T X)^{-1}
    Mat ols;               // (X^T X)^{-1} X^T Y, one column per response
    int n = 0;
    int k_n = 0;

    int dim() const noexcept { return static_cast<int>(ols.rows()); }
    double prior_ratio() const noexcept { return static_cast<double>(k_n) / n; }
};

/// Throws ill-posed-design when X^T X is numerically rank deficient.
LinearFit linear_fit(const DesignMatrix& X, const Mat& Y);

/// Independent Gaussian laws beta_j | Y ~ N(m_j, scale (X^T X)^{-1}).
struct CoeffPosterior {
    Mat mean;               // K x d
    double scale = 0;       // covariance factor in front of (X^T X)^{-1}
    double shrink = 0;      // m_j = shrink * OLS_j
    double sigma2 = 0;
    Mat gram_inverse;       // (X^T X)^{-1}
    Mat gram_inverse_chol;

    Mat covariance() const { return scale * gram_inverse; }
};

CoeffPosterior coeff_posterior(const LinearFit& fit, double sigma2, PriorScaling scaling = PriorScaling::Fixed);
CoeffPosterior coeff_posterior(const DesignMatrix& X, const Mat& Y, double sigma2,
                               PriorScaling scaling = PriorScaling::Fixed);

/// vec(B) | Y ~ N(vec(M), col_cov (x) row_cov) under row errors N(0, Sigma).
struct MatrixNormalPosterior {
    Mat mean;    // K x d
    Mat row_cov; // (X^T X)^{-1}
    Mat col_cov; // (Sigma^{-1} + k_n/n I)^{-1}
    Mat row_chol;
    Mat col_chol;
};

MatrixNormalPosterior matrix_normal_posterior(const LinearFit& fit, const Mat& Sigma);
MatrixNormalPosterior matrix_normal_posterior(const DesignMatrix& X, const Mat& Y, const Mat& Sigma);

/// Inverse-gamma law of sigma^2 under the scaled prior and an IG(a, b) hyperprior.
struct Sigma2Posterior {
    double shape = 0;
    double rate = 0;

    double mean() const;     // rate / (shape - 1), requires shape > 1
    double variance() const; // requires shape > 2
    double draw(Rng& rng) const;
};

Sigma2Posterior sigma2_posterior(const DesignMatrix& X, const Mat& Y, double a, double b);
Sigma2Posterior sigma2_posterior(const DesignMatrix& X, const LinearFit& fit, const Mat& Y, double a, double b);

/// Lower Cholesky factor, retrying with diagonal jitter 1e-12 .. 1e-8 (relative
/// to the mean diagonal) before failing with a numeric error.
Mat robust_cholesky(const Mat& A, const char* what);

using AnyCoeffPosterior = std::variant<CoeffPosterior, MatrixNormalPosterior>;

/// i.i.d. coefficient draws (K x d each); identical seed gives identical draws.
std::vector<Mat> sample_coeffs(const AnyCoeffPosterior& post, int count, std::uint64_t seed);

/// Joint draws from (sigma^2, B) | Y under the scaled prior.
struct HierarchicalDraws {
    std::vector<double> sigma2;
    std::vector<Mat> coeffs;
};

HierarchicalDraws sample_hierarchical(const LinearFit& fit, const Sigma2Posterior& s2, int count, std::uint64_t seed);

/// Symmetric square root and inverse square root of an SPD matrix; throws
/// invalid-argument if the matrix is not SPD.
Mat spd_sqrt(const Mat& A);
Mat spd_inv_sqrt(const Mat& A);
void require_spd(const Mat& A, const char* what);

} // namespace odebayes
