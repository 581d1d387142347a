#include "odebayes/asymptotics.hpp"

#include "odebayes/error.hpp"
#include "odebayes/log.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace odebayes {

namespace {

double fd_step(double t) { return std::min(1.0 / 2048.0, 0.5 * std::min(t, 1.0 - t)); }

} // namespace

BvmIngredients compute_ingredients(const OdeModel& model, const TrueFunction& f0, const Vec& theta0,
                                   const WeightFn& w, const KnotVector& basis, const QuadratureRule& quad) {
    model.validate();
    if (f0.dim != model.state_dim) throw_invalid("compute_ingredients: f0 dimension does not match the model");
    if (theta0.size() != model.param_dim) throw_invalid("compute_ingredients: theta0 has wrong dimension");
    if (!w.value) throw_invalid("compute_ingredients: weight function is required");

    const int d = model.state_dim, p = model.param_dim, K = basis.dimension();
    const auto Q = quad.size();

    BvmIngredients ing;
    ing.theta0 = theta0;
    ing.basis_dim = K;
    ing.nodes = quad.nodes;
    ing.weights = quad.weights;
    ing.fd_time_derivative = !w.derivative;

    Mat J = Mat::Zero(p, p), s_term = Mat::Zero(p, p);
    std::vector<Mat> L(static_cast<std::size_t>(Q));
    std::vector<Vec> f0_at(static_cast<std::size_t>(Q));
    Vec gamma_f0 = Vec::Zero(p);

    auto dtheta_weighted = [&](double s) -> Mat {
        return model.dF_dtheta(s, f0.value(s), theta0).transpose() * w(s);
    };

    for (Eigen::Index q = 0; q < Q; ++q) {
        const double t = quad.nodes[q], omega = quad.weights[q], wt = w(t);
        const Vec f = f0.value(t), fp = f0.derivative(t);
        const Mat Dth = model.dF_dtheta(t, f, theta0);
        const Mat Df = model.dF_df(t, f, theta0);
        const Vec r = fp - model.F(t, f, theta0);

        Mat hess_sum = Mat::Zero(p, p), dfs = Mat::Zero(p, d);
        Mat dDth_dt = model.d2F_dt_dtheta(t, f, theta0);
        for (int i = 0; i < d; ++i) {
            const Mat hts = model.d2F_dtheta_df(t, f, theta0, i);
            hess_sum += r[i] * model.d2F_dtheta2(t, f, theta0, i);
            dfs += r[i] * hts;
            dDth_dt.row(i) += (hts * fp).transpose();
        }
        J += omega * wt * (Dth.transpose() * Dth - hess_sum);
        s_term += omega * wt * hess_sum;

        Mat ddt;
        if (w.derivative) {
            ddt = dDth_dt.transpose() * wt + Dth.transpose() * w.derivative(t);
        } else {
            const double h = fd_step(t);
            ddt = (dtheta_weighted(t + h) - dtheta_weighted(t - h)) / (2.0 * h);
        }
        L[static_cast<std::size_t>(q)] = -Dth.transpose() * Df * wt - ddt + dfs * wt;
        f0_at[static_cast<std::size_t>(q)] = f;
        gamma_f0 += omega * L[static_cast<std::size_t>(q)] * f;
    }
    if (!J.allFinite()) throw_numeric("compute_ingredients: J is not finite");
    J = 0.5 * (J + J.transpose());

    Eigen::SelfAdjointEigenSolver<Mat> es(J);
    const double big = es.eigenvalues().cwiseAbs().maxCoeff();
    const double small = es.eigenvalues().cwiseAbs().minCoeff();
    if (!(big > 0.0) || small <= 1e-12 * big) {
        std::ostringstream os;
        os << "compute_ingredients: J is singular at theta0=(" << theta0.transpose() << "), eigenvalues ("
           << es.eigenvalues().transpose() << ")";
        throw Error(ErrorCategory::DegenerateModel, os.str());
    }
    if (es.eigenvalues().minCoeff() < 0.0)
        log::warn("compute_ingredients: J is indefinite; theta0 may not be a local minimum of the defect");

    ing.J = J;
    ing.s_norm = s_term.norm();
    ing.gamma_f0 = gamma_f0;

    const Eigen::PartialPivLU<Mat> jlu(J);
    ing.G.assign(static_cast<std::size_t>(d), Mat::Zero(p, K));
    ing.B.assign(static_cast<std::size_t>(d), Mat::Zero(p, p));
    ing.A.resize(static_cast<std::size_t>(Q));
    Mat local;
    const int m = basis.order();
    for (Eigen::Index q = 0; q < Q; ++q) {
        const Mat A = jlu.solve(L[static_cast<std::size_t>(q)]);
        const double omega = quad.weights[q];
        const int first = eval_basis_local(basis, quad.nodes[q], 0, local);
        for (int j = 0; j < d; ++j) {
            ing.G[static_cast<std::size_t>(j)].middleCols(first, m) += omega * A.col(j) * local.row(0);
            ing.B[static_cast<std::size_t>(j)] += omega * A.col(j) * A.col(j).transpose();
        }
        ing.A[static_cast<std::size_t>(q)] = A;
    }
    ing.b_min_eigen.resize(d);
    for (int j = 0; j < d; ++j) {
        auto& Bj = ing.B[static_cast<std::size_t>(j)];
        Bj = 0.5 * (Bj + Bj.transpose());
        ing.b_min_eigen[j] = Eigen::SelfAdjointEigenSolver<Mat>(Bj, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
        if (ing.b_min_eigen[j] <= 1e-12 * std::max(1.0, Bj.norm()))
            log::warn("compute_ingredients: B_" + std::to_string(j + 1) + " is numerically singular");
    }
    return ing;
}

Vec gamma_functional(const BvmIngredients& ing, const TrueFunction& z) {
    if (z.dim != ing.state_dim()) throw_invalid("gamma_functional: function dimension does not match");
    Vec acc = Vec::Zero(ing.param_dim());
    for (Eigen::Index q = 0; q < ing.nodes.size(); ++q)
        acc += ing.weights[q] * ing.A[static_cast<std::size_t>(q)] * z.value(ing.nodes[q]);
    return ing.J * acc;
}

Vec gamma_spline(const BvmIngredients& ing, const Mat& coefficients) {
    if (coefficients.rows() != ing.basis_dim || coefficients.cols() != ing.state_dim())
        throw_invalid("gamma_spline: coefficient matrix has wrong shape");
    Vec acc = Vec::Zero(ing.param_dim());
    for (int j = 0; j < ing.state_dim(); ++j) acc += ing.G[static_cast<std::size_t>(j)] * coefficients.col(j);
    return ing.J * acc;
}

namespace {

void check_fit(const BvmIngredients& ing, const LinearFit& fit, const char* who) {
    if (fit.dim() != ing.basis_dim) {
        std::ostringstream os;
        os << who << ": design has " << fit.dim() << " basis functions but the ingredients use " << ing.basis_dim;
        throw_invalid(os.str());
    }
    if (fit.ols.cols() != ing.state_dim()) throw_invalid(std::string(who) + ": response dimension mismatch");
}

} // namespace

AsymptoticNormal bvm_normal(const BvmIngredients& ing, const LinearFit& fit, double sigma2) {
    check_fit(ing, fit, "bvm_normal");
    if (!(sigma2 > 0.0)) throw_invalid("bvm_normal: sigma2 must be positive");
    const int p = ing.param_dim();
    const double n = fit.n, rn = std::sqrt(n);
    Vec lin = Vec::Zero(p);
    Mat cov = Mat::Zero(p, p);
    for (int j = 0; j < ing.state_dim(); ++j) {
        const Mat& G = ing.G[static_cast<std::size_t>(j)];
        lin += G * fit.ols.col(j);
        cov += G * fit.gram_inverse * G.transpose();
    }
    AsymptoticNormal out;
    out.mean = rn * (lin - ing.J.partialPivLu().solve(ing.gamma_f0));
    out.covariance = sigma2 * n * 0.5 * (cov + cov.transpose());
    return out;
}

AsymptoticNormal bvm_normal(const BvmIngredients& ing, const DesignMatrix& X, const Mat& Y, double sigma2) {
    return bvm_normal(ing, linear_fit(X, Y), sigma2);
}

AsymptoticNormal bvm_normal_correlated(const BvmIngredients& ing, const LinearFit& fit, const Mat& Sigma) {
    check_fit(ing, fit, "bvm_normal_correlated");
    const int d = ing.state_dim(), p = ing.param_dim();
    if (Sigma.rows() != d || Sigma.cols() != d) throw_invalid("bvm_normal_correlated: Sigma must be d x d");
    require_spd(Sigma, "bvm_normal_correlated: Sigma");
    const Mat root = spd_sqrt(Sigma);
    const Mat inv_root = spd_inv_sqrt(Sigma);
    const Mat whitened = fit.ols * inv_root; // column k: sum_j OLS_j sigma^{jk}
    const double n = fit.n, rn = std::sqrt(n);
    Vec lin = Vec::Zero(p);
    Mat cov = Mat::Zero(p, p);
    for (int k = 0; k < d; ++k) {
        Mat H = Mat::Zero(p, ing.basis_dim);
        for (int j = 0; j < d; ++j) H += ing.G[static_cast<std::size_t>(j)] * root(j, k);
        lin += H * whitened.col(k);
        cov += H * fit.gram_inverse * H.transpose();
    }
    AsymptoticNormal out;
    out.mean = rn * (lin - ing.J.partialPivLu().solve(ing.gamma_f0));
    out.covariance = n * 0.5 * (cov + cov.transpose());
    return out;
}

AsymptoticNormal bvm_normal_correlated(const BvmIngredients& ing, const DesignMatrix& X, const Mat& Y,
                                       const Mat& Sigma) {
    return bvm_normal_correlated(ing, linear_fit(X, Y), Sigma);
}

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Edges of `bins` equal cells covering +-6 and the central 99% of the sample.
std::vector<double> axis_edges(std::vector<double> values, int bins) {
    std::sort(values.begin(), values.end());
    const auto N = values.size();
    auto q = [&](double prob) {
        const auto idx = static_cast<std::size_t>(std::ceil(prob * static_cast<double>(N)));
        return values[std::min(N - 1, idx == 0 ? 0 : idx - 1)];
    };
    const double lo = std::min(-6.0, q(0.005)), hi = std::max(6.0, q(0.995));
    std::vector<double> edges(static_cast<std::size_t>(bins + 1));
    for (int i = 0; i <= bins; ++i) edges[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / bins;
    return edges;
}

// Cell index in 0..bins+1 where 0 and bins+1 are the overflow cells.
int cell_of(const std::vector<double>& edges, double x) {
    if (x < edges.front()) return 0;
    if (x >= edges.back()) return static_cast<int>(edges.size());
    const auto it = std::upper_bound(edges.begin(), edges.end(), x);
    return static_cast<int>(it - edges.begin());
}

std::vector<double> cell_probs(const std::vector<double>& edges) {
    std::vector<double> pr;
    pr.reserve(edges.size() + 1);
    pr.push_back(normal_cdf(edges.front()));
    for (std::size_t i = 1; i < edges.size(); ++i) pr.push_back(normal_cdf(edges[i]) - normal_cdf(edges[i - 1]));
    pr.push_back(normal_cdf(-edges.back()));
    return pr;
}

} // namespace

TvDiagnostic tv_diagnostic(const std::vector<Vec>& draws, const AsymptoticNormal& target) {
    const auto N = draws.size();
    if (N < static_cast<std::size_t>(kTvMinDraws)) {
        std::ostringstream os;
        os << "tv_diagnostic: need at least " << kTvMinDraws << " draws, got " << N;
        throw_invalid(os.str());
    }
    const auto p = target.mean.size();
    if (target.covariance.rows() != p || target.covariance.cols() != p)
        throw_invalid("tv_diagnostic: target covariance has wrong shape");
    const Mat L = robust_cholesky(target.covariance, "tv_diagnostic");
    Mat Z(p, static_cast<Eigen::Index>(N));
    for (std::size_t i = 0; i < N; ++i) {
        if (draws[i].size() != p) throw_invalid("tv_diagnostic: draw has wrong dimension");
        Z.col(static_cast<Eigen::Index>(i)) = L.triangularView<Eigen::Lower>().solve(draws[i] - target.mean);
    }
    const double dn = static_cast<double>(N);

    TvDiagnostic out;
    if (p == 1) {
        const int bins = std::max(10, static_cast<int>(std::lround(2.0 * std::cbrt(dn))));
        const std::vector<double> zs(Z.data(), Z.data() + N);
        const auto edges = axis_edges(zs, bins);
        const auto pr = cell_probs(edges);
        std::vector<double> counts(pr.size(), 0.0);
        for (double z : zs) counts[static_cast<std::size_t>(cell_of(edges, z))] += 1.0;
        double tv = 0.0;
        for (std::size_t c = 0; c < pr.size(); ++c) tv += std::abs(counts[c] / dn - pr[c]);
        out.value = 0.5 * tv;
        out.method = "histogram-1d";
        out.bins = bins;
    } else if (p == 2) {
        const int bins = std::max(5, static_cast<int>(std::lround(std::pow(dn, 0.25))));
        std::vector<double> z0(N), z1(N);
        for (std::size_t i = 0; i < N; ++i) {
            z0[i] = Z(0, static_cast<Eigen::Index>(i));
            z1[i] = Z(1, static_cast<Eigen::Index>(i));
        }
        const auto e0 = axis_edges(z0, bins), e1 = axis_edges(z1, bins);
        const auto p0 = cell_probs(e0), p1 = cell_probs(e1);
        const std::size_t w1 = p1.size();
        std::vector<double> counts(p0.size() * w1, 0.0);
        for (std::size_t i = 0; i < N; ++i)
            counts[static_cast<std::size_t>(cell_of(e0, z0[i])) * w1 + static_cast<std::size_t>(cell_of(e1, z1[i]))] += 1.0;
        double tv = 0.0;
        for (std::size_t a = 0; a < p0.size(); ++a)
            for (std::size_t b = 0; b < w1; ++b) tv += std::abs(counts[a * w1 + b] / dn - p0[a] * p1[b]);
        out.value = 0.5 * tv;
        out.method = "histogram-2d";
        out.bins = bins;
    } else {
        std::vector<double> r2(N);
        for (std::size_t i = 0; i < N; ++i) r2[i] = Z.col(static_cast<Eigen::Index>(i)).squaredNorm();
        std::sort(r2.begin(), r2.end());
        const double half_p = 0.5 * static_cast<double>(p);
        double ks = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const double F = boost::math::gamma_p(half_p, 0.5 * r2[i]);
            ks = std::max({ks, static_cast<double>(i + 1) / dn - F, F - static_cast<double>(i) / dn});
        }
        out.value = ks;
        out.method = "ks-mahalanobis";
    }
    return out;
}

} // namespace odebayes
