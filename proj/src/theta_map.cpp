#include "odebayes/theta_map.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

namespace odebayes {

SplineFunction::SplineFunction(KnotVector basis, Mat coefficients)
    : basis_(std::move(basis)), coeffs_(std::move(coefficients)) {
    if (coeffs_.rows() != basis_.dimension()) {
        std::ostringstream os;
        os << "SplineFunction: coefficient rows " << coeffs_.rows() << " != basis dimension " << basis_.dimension();
        throw_invalid(os.str());
    }
}

Vec SplineFunction::value(double t) const { return coeffs_.transpose() * eval_basis(basis_, t, 0); }

Vec SplineFunction::derivative(double t) const {
    if (basis_.order() < 2) return Vec::Zero(dim());
    return coeffs_.transpose() * eval_basis(basis_, t, 1);
}

WeightedNodes weighted_nodes(const QuadratureRule& quad, const WeightFn& w) {
    WeightedNodes out{quad.nodes, Vec(quad.size())};
    for (Eigen::Index i = 0; i < quad.size(); ++i) out.weight[i] = quad.weights[i] * w(quad.nodes[i]);
    return out;
}

BasisAtNodes basis_at_nodes(const KnotVector& kv, const QuadratureRule& quad) {
    const auto Q = quad.size();
    const int m = kv.order();
    BasisAtNodes out{Mat::Zero(Q, kv.dimension()), Mat::Zero(Q, kv.dimension())};
    Mat local;
    for (Eigen::Index i = 0; i < Q; ++i) {
        const int first = eval_basis_local(kv, quad.nodes[i], 1, local);
        out.value.row(i).segment(first, m) = local.row(0);
        if (m > 1) out.deriv.row(i).segment(first, m) = local.row(1);
    }
    return out;
}

CurveSamples sample_curve(const TrueFunction& f, const QuadratureRule& quad) {
    const auto Q = quad.size();
    CurveSamples s{Mat(f.dim, Q), Mat(f.dim, Q)};
    for (Eigen::Index i = 0; i < Q; ++i) {
        s.value.col(i) = f.value(quad.nodes[i]);
        s.deriv.col(i) = f.derivative(quad.nodes[i]);
    }
    return s;
}

CurveSamples sample_spline(const BasisAtNodes& basis, const Mat& coefficients) {
    return {(basis.value * coefficients).transpose(), (basis.deriv * coefficients).transpose()};
}

CurveSamples sample_curve(const SplineFunction& f, const QuadratureRule& quad) {
    return sample_spline(basis_at_nodes(f.basis(), quad), f.coefficients());
}

namespace {

void check_inputs(const CurveSamples& f, const OdeModel& model, const Vec& eta, const WeightedNodes& nodes) {
    if (f.value.rows() != model.state_dim || f.deriv.rows() != model.state_dim)
        throw_invalid("defect: curve dimension does not match the model state dimension");
    if (f.value.cols() != nodes.t.size() || f.deriv.cols() != nodes.t.size())
        throw_invalid("defect: curve samples do not match the quadrature nodes");
    if (eta.size() != model.param_dim) throw_invalid("defect: parameter has wrong dimension");
}

[[noreturn]] void evaluation_failure(double t, const Eigen::Ref<const Vec>& f, const Vec& eta) {
    std::ostringstream os;
    os << "model evaluation failed at t=" << t << ", f(t)=(" << f.transpose() << "), eta=(" << eta.transpose()
       << ")";
    throw_numeric(os.str());
}

// Objective, gradient and Gauss-Newton matrix of R^2 in one sweep.
struct Objective {
    const CurveSamples& f;
    const OdeModel& model;
    const WeightedNodes& nodes;
    Vec rhs;
    Vec resid;
    Mat jac;

    Objective(const CurveSamples& f_, const OdeModel& m, const WeightedNodes& n)
        : f(f_), model(m), nodes(n), rhs(m.state_dim), resid(m.state_dim), jac(m.state_dim, m.param_dim) {}

    double value(const Vec& eta) {
        double s = 0.0;
        for (Eigen::Index q = 0; q < nodes.t.size(); ++q) {
            model.rhs(nodes.t[q], f.value.col(q), eta, rhs);
            resid = f.deriv.col(q) - rhs;
            const double r2 = resid.squaredNorm();
            if (!std::isfinite(r2)) evaluation_failure(nodes.t[q], f.value.col(q), eta);
            s += nodes.weight[q] * r2;
        }
        return s;
    }

    double full(const Vec& eta, Vec& grad, Mat& gn) {
        grad.setZero(model.param_dim);
        gn.setZero(model.param_dim, model.param_dim);
        double s = 0.0;
        for (Eigen::Index q = 0; q < nodes.t.size(); ++q) {
            const double t = nodes.t[q];
            model.rhs(t, f.value.col(q), eta, rhs);
            model.jac_theta(t, f.value.col(q), eta, jac);
            resid = f.deriv.col(q) - rhs;
            const double r2 = resid.squaredNorm();
            if (!std::isfinite(r2) || !jac.allFinite()) evaluation_failure(t, f.value.col(q), eta);
            const double w = nodes.weight[q];
            s += w * r2;
            grad.noalias() -= (2.0 * w) * (jac.transpose() * resid);
            gn.noalias() += (2.0 * w) * (jac.transpose() * jac);
        }
        return s;
    }
};

double radical_inverse(unsigned i, unsigned base) {
    double inv = 1.0 / base, f = inv, r = 0.0;
    while (i > 0) {
        r += f * (i % base);
        i /= base;
        f *= inv;
    }
    return r;
}

constexpr std::array<unsigned, 16> kPrimes{2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};

bool lex_less(const Vec& a, const Vec& b) {
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (a[i] < b[i]) return true;
        if (a[i] > b[i]) return false;
    }
    return false;
}

PsiStart run_start(Objective& obj, const ThetaBox& box, const Vec& start, const PsiConfig& cfg) {
    const int p = box.dim();
    PsiStart rec;
    rec.start = start;
    Vec eta = box.project(start);
    Vec grad(p), grad_new(p);
    Mat gn(p, p);
    double phi = obj.full(eta, grad, gn);
    for (int it = 0; it < cfg.max_iter; ++it) {
        rec.iterations = it + 1;
        // Variables pinned at a bound by the gradient stay fixed this step.
        std::vector<int> free;
        for (int i = 0; i < p; ++i) {
            const bool pin_lo = eta[i] <= box.lower[i] && grad[i] > 0.0;
            const bool pin_hi = eta[i] >= box.upper[i] && grad[i] < 0.0;
            if (!pin_lo && !pin_hi) free.push_back(i);
        }
        const Vec pg = eta - box.project(eta - grad);
        if (pg.lpNorm<Eigen::Infinity>() <= cfg.grad_tol * std::max(1.0, phi)) {
            rec.converged = true;
            break;
        }
        Vec dir = Vec::Zero(p);
        if (!free.empty()) {
            const auto nf = static_cast<Eigen::Index>(free.size());
            Mat h(nf, nf);
            Vec g(nf);
            for (Eigen::Index a = 0; a < nf; ++a) {
                g[a] = grad[free[static_cast<std::size_t>(a)]];
                for (Eigen::Index b = 0; b < nf; ++b)
                    h(a, b) = gn(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
            }
            Eigen::LDLT<Mat> ldlt(h);
            Vec step;
            if (ldlt.info() == Eigen::Success && ldlt.isPositive() && (ldlt.vectorD().array() > 0.0).all()) {
                step = ldlt.solve(-g);
            }
            if (step.size() != nf || !step.allFinite() || step.dot(g) >= 0.0) {
                // Levenberg-style fallback.
                const double mu = 1e-8 * std::max(1.0, h.diagonal().cwiseAbs().maxCoeff());
                step = (h + mu * Mat::Identity(nf, nf)).ldlt().solve(-g);
                if (!step.allFinite() || step.dot(g) >= 0.0) step = -g;
            }
            for (Eigen::Index a = 0; a < nf; ++a) dir[free[static_cast<std::size_t>(a)]] = step[a];
        }
        // Armijo backtracking along the projected path.
        double alpha = 1.0;
        bool accepted = false;
        Vec trial(p);
        double phi_trial = phi;
        for (int ls = 0; ls < 40; ++ls) {
            trial = box.project(eta + alpha * dir);
            phi_trial = obj.value(trial);
            if (phi_trial <= phi + 1e-4 * grad.dot(trial - eta)) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            // Fall back to a projected steepest-descent step.
            alpha = 1.0 / std::max(1.0, gn.diagonal().maxCoeff());
            for (int ls = 0; ls < 60; ++ls) {
                trial = box.project(eta - alpha * grad);
                phi_trial = obj.value(trial);
                if (phi_trial <= phi + 1e-4 * grad.dot(trial - eta)) {
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
        }
        if (!accepted) {
            // No descent available at working precision.
            rec.converged = pg.lpNorm<Eigen::Infinity>() <= 1e-6 * std::max(1.0, phi);
            break;
        }
        const double step_norm = (trial - eta).lpNorm<Eigen::Infinity>();
        eta = trial;
        phi = obj.full(eta, grad, gn);
        if (step_norm <= cfg.step_tol * std::max(1.0, eta.lpNorm<Eigen::Infinity>())) {
            rec.converged = true;
            break;
        }
    }
    rec.end = eta;
    rec.objective = phi;
    return rec;
}

} // namespace

double defect_squared(const CurveSamples& f, const OdeModel& model, const Vec& eta, const WeightedNodes& nodes) {
    check_inputs(f, model, eta, nodes);
    Objective obj(f, model, nodes);
    return obj.value(eta);
}

Vec defect_gradient(const CurveSamples& f, const OdeModel& model, const Vec& eta, const WeightedNodes& nodes) {
    check_inputs(f, model, eta, nodes);
    Objective obj(f, model, nodes);
    Vec g;
    Mat h;
    obj.full(eta, g, h);
    return g;
}

void PsiConfig::validate(int param_dim) const {
    if (starts < 1) throw_invalid("PsiConfig: starts must be >= 1");
    if (!(grad_tol > 0.0) || !(step_tol > 0.0) || !(tie_tol >= 0.0))
        throw_invalid("PsiConfig: tolerances must be positive");
    if (max_iter < 1) throw_invalid("PsiConfig: max_iter must be >= 1");
    if (initial && initial->size() != param_dim) throw_invalid("PsiConfig: initial point has wrong dimension");
}

std::vector<Vec> multistart_points(const ThetaBox& box, int count) {
    const int p = box.dim();
    if (p > static_cast<int>(kPrimes.size())) throw_invalid("multistart_points: dimension too large");
    constexpr double golden = 0.6180339887498949;
    std::vector<Vec> pts;
    pts.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Vec u(p);
        for (int k = 0; k < p; ++k) {
            const double shift = std::fmod(golden * (k + 1), 1.0);
            u[k] = std::fmod(radical_inverse(static_cast<unsigned>(i + 1), kPrimes[static_cast<std::size_t>(k)]) + shift,
                             1.0);
        }
        pts.emplace_back(box.lower.array() + (box.upper - box.lower).array() * u.array());
    }
    return pts;
}

PsiResult psi(const CurveSamples& f, const OdeModel& model, const WeightedNodes& nodes, const PsiConfig& cfg) {
    cfg.validate(model.param_dim);
    check_inputs(f, model, model.bounds.lower, nodes);
    Objective obj(f, model, nodes);

    std::vector<Vec> starts;
    if (cfg.initial) starts.push_back(*cfg.initial);
    for (auto& s : multistart_points(model.bounds, cfg.starts)) starts.push_back(std::move(s));

    PsiResult result;
    auto& diag = result.diagnostics;
    for (const auto& s : starts) {
        try {
            diag.starts.push_back(run_start(obj, model.bounds, s, cfg));
        } catch (const Error& e) {
            if (e.category() != ErrorCategory::Numeric && e.category() != ErrorCategory::Domain) throw;
            PsiStart failed;
            failed.start = s;
            failed.end = s;
            failed.objective = std::numeric_limits<double>::infinity();
            failed.failed = true;
            diag.starts.push_back(std::move(failed));
        }
    }

    // Deterministic reduction: lowest objective, then lexicographically smallest theta.
    auto better = [&](const PsiStart& a, const PsiStart& b) {
        const double tol = cfg.tie_tol * std::max(1.0, std::min(std::abs(a.objective), std::abs(b.objective)));
        if (a.objective < b.objective - tol) return true;
        if (b.objective < a.objective - tol) return false;
        return lex_less(a.end, b.end);
    };
    int best = -1, best_any = -1;
    for (int i = 0; i < static_cast<int>(diag.starts.size()); ++i) {
        const auto& s = diag.starts[static_cast<std::size_t>(i)];
        if (s.failed) continue;
        if (best_any < 0 || better(s, diag.starts[static_cast<std::size_t>(best_any)])) best_any = i;
        if (s.converged && (best < 0 || better(s, diag.starts[static_cast<std::size_t>(best)]))) best = i;
    }

    auto fill = [&](int idx) {
        const auto& s = diag.starts[static_cast<std::size_t>(idx)];
        diag.best_start = idx;
        result.theta = s.end;
        result.objective = s.objective;
        result.value = std::sqrt(std::max(0.0, s.objective));
        const int p = model.param_dim;
        diag.at_lower.assign(static_cast<std::size_t>(p), false);
        diag.at_upper.assign(static_cast<std::size_t>(p), false);
        diag.interior = true;
        for (int k = 0; k < p; ++k) {
            diag.at_lower[static_cast<std::size_t>(k)] = s.end[k] <= model.bounds.lower[k];
            diag.at_upper[static_cast<std::size_t>(k)] = s.end[k] >= model.bounds.upper[k];
            if (diag.at_lower[static_cast<std::size_t>(k)] || diag.at_upper[static_cast<std::size_t>(k)])
                diag.interior = false;
        }
        Vec g;
        Mat h;
        obj.full(s.end, g, h);
        diag.gradient = g;
    };

    if (best < 0) {
        if (best_any >= 0) fill(best_any);
        throw OptimizationFailure("psi: no multistart run converged", std::move(result));
    }
    fill(best);
    return result;
}

} // namespace odebayes
