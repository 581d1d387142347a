#include "odebayes/posterior.hpp"

#include "odebayes/error.hpp"
#include "odebayes/log.hpp"

#include <cmath>
#include <sstream>

namespace odebayes {

Mat robust_cholesky(const Mat& A, const char* what) {
    Eigen::LLT<Mat> llt(A);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    const double scale = A.diagonal().mean();
    for (double jitter : {1e-12, 1e-11, 1e-10, 1e-9, 1e-8}) {
        Mat B = A;
        B.diagonal().array() += jitter * scale;
        llt.compute(B);
        if (llt.info() == Eigen::Success) {
            std::ostringstream os;
            os << what << ": Cholesky needed jitter " << jitter << " (relative)";
            log::warn(os.str());
            return llt.matrixL();
        }
    }
    throw_numeric(std::string(what) + ": Cholesky factorization failed after jitter escalation");
}

void require_spd(const Mat& A, const char* what) {
    if (A.rows() != A.cols() || A.rows() == 0) throw_invalid(std::string(what) + ": matrix must be square");
    if (!A.isApprox(A.transpose(), 1e-12)) throw_invalid(std::string(what) + ": matrix must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(A, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= 0.0) throw_invalid(std::string(what) + ": matrix must be positive definite");
}

Mat spd_sqrt(const Mat& A) {
    require_spd(A, "spd_sqrt");
    Eigen::SelfAdjointEigenSolver<Mat> es(A);
    return es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

Mat spd_inv_sqrt(const Mat& A) {
    require_spd(A, "spd_inv_sqrt");
    Eigen::SelfAdjointEigenSolver<Mat> es(A);
    return es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
           es.eigenvectors().transpose();
}

LinearFit linear_fit(const DesignMatrix& X, const Mat& Y) {
    if (Y.rows() != X.rows()) {
        std::ostringstream os;
        os << "linear_fit: Y has " << Y.rows() << " rows but the design has " << X.rows();
        throw_invalid(os.str());
    }
    const Mat G = X.gram();
    const auto K = G.rows();
    Eigen::SelfAdjointEigenSolver<Mat> es(G);
    const Vec& ev = es.eigenvalues();
    const double tol = ev.maxCoeff() * static_cast<double>(K) * 1e-13;
    const auto rank = (ev.array() > tol).count();
    if (rank < K) {
        std::ostringstream os;
        os << "X^T X is rank deficient: numerical rank " << rank << " < basis dimension " << K << " (n=" << X.rows()
           << ")";
        throw Error(ErrorCategory::IllPosedDesign, os.str());
    }
    LinearFit fit;
    fit.n = static_cast<int>(X.rows());
    fit.k_n = X.basis().segments();
    fit.gram_inverse = es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    fit.gram_inverse = 0.5 * (fit.gram_inverse + fit.gram_inverse.transpose()).eval();
    fit.gram_inverse_chol = robust_cholesky(fit.gram_inverse, "(X^T X)^{-1}");
    fit.ols = fit.gram_inverse * X.transpose_times(Y);
    return fit;
}

CoeffPosterior coeff_posterior(const LinearFit& fit, double sigma2, PriorScaling scaling) {
    if (!(sigma2 > 0.0)) throw_invalid("coeff_posterior: sigma2 must be positive");
    const double r = fit.prior_ratio();
    CoeffPosterior post;
    post.sigma2 = sigma2;
    if (scaling == PriorScaling::Fixed) {
        post.shrink = 1.0 / (1.0 + sigma2 * r);
        post.scale = 1.0 / (1.0 / sigma2 + r);
    } else {
        post.shrink = 1.0 / (1.0 + r);
        post.scale = sigma2 / (1.0 + r);
    }
    post.mean = post.shrink * fit.ols;
    post.gram_inverse = fit.gram_inverse;
    post.gram_inverse_chol = fit.gram_inverse_chol;
    return post;
}

CoeffPosterior coeff_posterior(const DesignMatrix& X, const Mat& Y, double sigma2, PriorScaling scaling) {
    return coeff_posterior(linear_fit(X, Y), sigma2, scaling);
}

MatrixNormalPosterior matrix_normal_posterior(const LinearFit& fit, const Mat& Sigma) {
    const auto d = fit.ols.cols();
    if (Sigma.rows() != d || Sigma.cols() != d) throw_invalid("matrix_normal_posterior: Sigma must be d x d");
    require_spd(Sigma, "matrix_normal_posterior: Sigma");
    const Mat sigma_inv = Sigma.llt().solve(Mat::Identity(d, d));
    Mat precision = sigma_inv + fit.prior_ratio() * Mat::Identity(d, d);
    precision = 0.5 * (precision + precision.transpose()).eval();
    MatrixNormalPosterior post;
    post.col_cov = precision.llt().solve(Mat::Identity(d, d));
    post.col_cov = 0.5 * (post.col_cov + post.col_cov.transpose()).eval();
    post.mean = fit.ols * sigma_inv * post.col_cov;
    post.row_cov = fit.gram_inverse;
    post.row_chol = fit.gram_inverse_chol;
    post.col_chol = robust_cholesky(post.col_cov, "matrix-normal column covariance");
    return post;
}

MatrixNormalPosterior matrix_normal_posterior(const DesignMatrix& X, const Mat& Y, const Mat& Sigma) {
    return matrix_normal_posterior(linear_fit(X, Y), Sigma);
}

double Sigma2Posterior::mean() const {
    if (!(shape > 1.0)) throw_invalid("Sigma2Posterior::mean requires shape > 1");
    return rate / (shape - 1.0);
}

double Sigma2Posterior::variance() const {
    if (!(shape > 2.0)) throw_invalid("Sigma2Posterior::variance requires shape > 2");
    const double m = mean();
    return m * m / (shape - 2.0);
}

double Sigma2Posterior::draw(Rng& rng) const {
    std::gamma_distribution<double> gamma(shape, 1.0);
    return rate / gamma(rng);
}

Sigma2Posterior sigma2_posterior(const DesignMatrix& X, const LinearFit& fit, const Mat& Y, double a, double b) {
    if (!(a > 0.0) || !(b > 0.0)) throw_invalid("sigma2_posterior: a and b must be positive");
    const auto n = static_cast<double>(Y.rows());
    const auto d = static_cast<double>(Y.cols());
    const auto K = static_cast<double>(fit.dim());
    const double damp = 1.0 / (1.0 + fit.prior_ratio());
    const Mat XtY = X.transpose_times(Y);
    double quad = 0.0;
    for (Eigen::Index j = 0; j < Y.cols(); ++j) {
        const double yy = Y.col(j).squaredNorm();
        const double ypy = XtY.col(j).dot(fit.ols.col(j));
        quad += yy - damp * ypy;
    }
    Sigma2Posterior post;
    post.shape = (d * (n - K) + 2.0 * a) / 2.0;
    post.rate = b + quad / 2.0;
    if (!(post.shape > 0.0) || !(post.rate > 0.0)) throw_numeric("sigma2_posterior: nonpositive parameters");
    return post;
}

Sigma2Posterior sigma2_posterior(const DesignMatrix& X, const Mat& Y, double a, double b) {
    return sigma2_posterior(X, linear_fit(X, Y), Y, a, b);
}

std::vector<Mat> sample_coeffs(const AnyCoeffPosterior& post, int count, std::uint64_t seed) {
    if (count < 1) throw_invalid("sample_coeffs: count must be >= 1");
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Mat> draws;
    draws.reserve(static_cast<std::size_t>(count));
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            const auto K = p.mean.rows();
            const auto d = p.mean.cols();
            Mat z(K, d);
            if constexpr (std::is_same_v<T, CoeffPosterior>) {
                const double sd = std::sqrt(p.scale);
                for (int s = 0; s < count; ++s) {
                    for (Eigen::Index j = 0; j < d; ++j)
                        for (Eigen::Index i = 0; i < K; ++i) z(i, j) = normal(rng);
                    draws.emplace_back(p.mean + sd * (p.gram_inverse_chol * z));
                }
            } else {
                for (int s = 0; s < count; ++s) {
                    for (Eigen::Index j = 0; j < d; ++j)
                        for (Eigen::Index i = 0; i < K; ++i) z(i, j) = normal(rng);
                    draws.emplace_back(p.mean + p.row_chol * z * p.col_chol.transpose());
                }
            }
        },
        post);
    return draws;
}

HierarchicalDraws sample_hierarchical(const LinearFit& fit, const Sigma2Posterior& s2, int count,
                                      std::uint64_t seed) {
    if (count < 1) throw_invalid("sample_hierarchical: count must be >= 1");
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double damp = 1.0 / (1.0 + fit.prior_ratio());
    const Mat mean = damp * fit.ols;
    const auto K = mean.rows();
    const auto d = mean.cols();
    HierarchicalDraws out;
    out.sigma2.reserve(static_cast<std::size_t>(count));
    out.coeffs.reserve(static_cast<std::size_t>(count));
    Mat z(K, d);
    for (int s = 0; s < count; ++s) {
        const double sigma2 = s2.draw(rng);
        for (Eigen::Index j = 0; j < d; ++j)
            for (Eigen::Index i = 0; i < K; ++i) z(i, j) = normal(rng);
        out.sigma2.push_back(sigma2);
        out.coeffs.emplace_back(mean + std::sqrt(sigma2 * damp) * (fit.gram_inverse_chol * z));
    }
    return out;
}

} // namespace odebayes
