#include "odebayes/ode_model.hpp"

#include "odebayes/error.hpp"

#include <cmath>
#include <sstream>

namespace odebayes {

bool ThetaBox::contains(const Vec& theta) const {
    if (theta.size() != lower.size()) return false;
    return ((theta.array() >= lower.array()) && (theta.array() <= upper.array())).all();
}

Vec ThetaBox::project(const Vec& theta) const { return theta.cwiseMax(lower).cwiseMin(upper); }

Vec OdeModel::F(double t, const Vec& f, const Vec& theta) const {
    Vec out(state_dim);
    rhs(t, f, theta, out);
    return out;
}

Mat OdeModel::dF_dtheta(double t, const Vec& f, const Vec& theta) const {
    Mat out(state_dim, param_dim);
    jac_theta(t, f, theta, out);
    return out;
}

Mat OdeModel::dF_df(double t, const Vec& f, const Vec& theta) const {
    Mat out(state_dim, state_dim);
    jac_state(t, f, theta, out);
    return out;
}

Mat OdeModel::d2F_dtheta2(double t, const Vec& f, const Vec& theta, int component) const {
    Mat out(param_dim, param_dim);
    if (hess_theta) {
        hess_theta(t, f, theta, component, out);
        return out;
    }
    for (int k = 0; k < param_dim; ++k) {
        Vec tp = theta, tm = theta;
        tp[k] += kFdStep;
        tm[k] -= kFdStep;
        out.col(k) = (dF_dtheta(t, f, tp).row(component) - dF_dtheta(t, f, tm).row(component)).transpose() /
                     (2.0 * kFdStep);
    }
    return 0.5 * (out + out.transpose());
}

Mat OdeModel::d2F_dtheta_df(double t, const Vec& f, const Vec& theta, int component) const {
    Mat out(param_dim, state_dim);
    if (hess_theta_state) {
        hess_theta_state(t, f, theta, component, out);
        return out;
    }
    for (int j = 0; j < state_dim; ++j) {
        Vec fp = f, fm = f;
        fp[j] += kFdStep;
        fm[j] -= kFdStep;
        out.col(j) = (dF_dtheta(t, fp, theta).row(component) - dF_dtheta(t, fm, theta).row(component)).transpose() /
                     (2.0 * kFdStep);
    }
    return out;
}

Mat OdeModel::d2F_df2(double t, const Vec& f, const Vec& theta, int component) const {
    Mat out(state_dim, state_dim);
    if (hess_state) {
        hess_state(t, f, theta, component, out);
        return out;
    }
    for (int j = 0; j < state_dim; ++j) {
        Vec fp = f, fm = f;
        fp[j] += kFdStep;
        fm[j] -= kFdStep;
        out.col(j) = (dF_df(t, fp, theta).row(component) - dF_df(t, fm, theta).row(component)).transpose() /
                     (2.0 * kFdStep);
    }
    return 0.5 * (out + out.transpose());
}

Mat OdeModel::d2F_dt_dtheta(double t, const Vec& f, const Vec& theta) const {
    if (jac_theta_time) {
        Mat out(state_dim, param_dim);
        jac_theta_time(t, f, theta, out);
        return out;
    }
    return (dF_dtheta(t + kFdStep, f, theta) - dF_dtheta(t - kFdStep, f, theta)) / (2.0 * kFdStep);
}

void OdeModel::validate() const {
    if (state_dim < 1 || param_dim < 1) throw_invalid("OdeModel '" + name + "': dimensions must be positive");
    if (!rhs || !jac_theta || !jac_state)
        throw_invalid("OdeModel '" + name + "': rhs, jac_theta and jac_state are required");
    if (bounds.dim() != param_dim || bounds.upper.size() != param_dim)
        throw_invalid("OdeModel '" + name + "': parameter box has wrong dimension");
    if ((bounds.lower.array() > bounds.upper.array()).any())
        throw_invalid("OdeModel '" + name + "': parameter box has lower > upper");
}

WeightFn default_weight() {
    return {[](double t) { return t * (1.0 - t); }, [](double t) { return 1.0 - 2.0 * t; }};
}

TrueFunction solution_truth(const OdeModel& model, const Vec& theta) {
    if (!model.solution) throw_invalid("model '" + model.name + "' has no analytic solution attached");
    if (theta.size() != model.param_dim) throw_invalid("solution_truth: theta has wrong dimension");
    const auto sol = *model.solution;
    std::ostringstream os;
    os << model.name << "_solution";
    return {os.str(), model.state_dim, [sol, theta](double t) { return sol.value(t, theta); },
            [sol, theta](double t) { return sol.derivative(t, theta); }};
}

OdeModel transform_model(const OdeModel& base, StateTransform tr) {
    base.validate();
    if (!tr.g || !tr.g_inv || !tr.g_jacobian) throw_invalid("transform_model: g, g_inv and g_jacobian are required");

    auto checked_jacobian = [tr](double t, const Vec& f, const ConstVecRef& h) {
        Mat jg = tr.g_jacobian(f);
        const Eigen::FullPivLU<Mat> lu(jg);
        if (!lu.isInvertible() || std::abs(lu.determinant()) < 1e-14 * std::max(1.0, jg.norm())) {
            std::ostringstream os;
            os << "transform_model: singular Jacobian of g at t=" << t << ", h=(" << h.transpose() << ")";
            throw_numeric(os.str());
        }
        return jg;
    };

    OdeModel out;
    out.name = base.name + "_transformed";
    out.state_dim = base.state_dim;
    out.param_dim = base.param_dim;
    out.bounds = base.bounds;

    out.rhs = [base, tr, checked_jacobian](double t, const ConstVecRef& h, const ConstVecRef& theta, VecRef o) {
        const Vec f = tr.g_inv(h);
        o = checked_jacobian(t, f, h) * base.F(t, f, theta);
    };
    out.jac_theta = [base, tr, checked_jacobian](double t, const ConstVecRef& h, const ConstVecRef& theta, MatRef o) {
        const Vec f = tr.g_inv(h);
        o = checked_jacobian(t, f, h) * base.dF_dtheta(t, f, theta);
    };
    // dH/dh by central differences of H (the chain rule would need g'').
    out.jac_state = [rhs = out.rhs, d = base.state_dim](double t, const ConstVecRef& h, const ConstVecRef& theta,
                                                         MatRef o) {
        Vec hp(d), hm(d), fp(d), fm(d);
        for (int j = 0; j < d; ++j) {
            const double step = kFdStep * std::max(1.0, std::abs(h[j]));
            hp = h;
            hm = h;
            hp[j] += step;
            hm[j] -= step;
            rhs(t, hp, theta, fp);
            rhs(t, hm, theta, fm);
            o.col(j) = (fp - fm) / (2.0 * step);
        }
    };
    if (base.solution) {
        const auto sol = *base.solution;
        out.solution = AnalyticSolution{
            [sol, tr](double t, const Vec& theta) { return tr.g(sol.value(t, theta)); },
            [sol, tr](double t, const Vec& theta) {
                return Vec(tr.g_jacobian(sol.value(t, theta)) * sol.derivative(t, theta));
            }};
    }
    return out;
}

} // namespace odebayes
