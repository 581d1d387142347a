#include "odebayes/error.hpp"
#include "odebayes/ode_model.hpp"

#include <cmath>
#include <numbers>

namespace odebayes {

namespace {

ThetaBox cube(int p, double lo, double hi) { return {Vec::Constant(p, lo), Vec::Constant(p, hi)}; }

// f' = theta t (1 - f), f(0) = 2.
OdeModel example1() {
    OdeModel m;
    m.name = "example1";
    m.state_dim = 1;
    m.param_dim = 1;
    m.bounds = cube(1, -10.0, 10.0);
    m.rhs = [](double t, const ConstVecRef& f, const ConstVecRef& th, VecRef o) { o[0] = th[0] * t * (1.0 - f[0]); };
    m.jac_theta = [](double t, const ConstVecRef& f, const ConstVecRef&, MatRef o) { o(0, 0) = t * (1.0 - f[0]); };
    m.jac_state = [](double t, const ConstVecRef&, const ConstVecRef& th, MatRef o) { o(0, 0) = -th[0] * t; };
    m.hess_theta = [](double, const ConstVecRef&, const ConstVecRef&, int, MatRef o) { o(0, 0) = 0.0; };
    m.hess_theta_state = [](double t, const ConstVecRef&, const ConstVecRef&, int, MatRef o) { o(0, 0) = -t; };
    m.hess_state = [](double, const ConstVecRef&, const ConstVecRef&, int, MatRef o) { o(0, 0) = 0.0; };
    m.jac_theta_time = [](double, const ConstVecRef& f, const ConstVecRef&, MatRef o) { o(0, 0) = 1.0 - f[0]; };
    m.solution = AnalyticSolution{
        [](double t, const Vec& th) { return Vec::Constant(1, 1.0 + std::exp(-th[0] * t * t / 2.0)); },
        [](double t, const Vec& th) { return Vec::Constant(1, -th[0] * t * std::exp(-th[0] * t * t / 2.0)); }};
    return m;
}

// f1' = theta1 f1, f2' = 2 theta2 f1 + theta1 f2, f(0) = (1, 1).
OdeModel example2() {
    OdeModel m;
    m.name = "example2";
    m.state_dim = 2;
    m.param_dim = 2;
    m.bounds = cube(2, -10.0, 10.0);
    m.rhs = [](double, const ConstVecRef& f, const ConstVecRef& th, VecRef o) {
        o[0] = th[0] * f[0];
        o[1] = 2.0 * th[1] * f[0] + th[0] * f[1];
    };
    m.jac_theta = [](double, const ConstVecRef& f, const ConstVecRef&, MatRef o) {
        o(0, 0) = f[0];
        o(0, 1) = 0.0;
        o(1, 0) = f[1];
        o(1, 1) = 2.0 * f[0];
    };
    m.jac_state = [](double, const ConstVecRef&, const ConstVecRef& th, MatRef o) {
        o(0, 0) = th[0];
        o(0, 1) = 0.0;
        o(1, 0) = 2.0 * th[1];
        o(1, 1) = th[0];
    };
    m.hess_theta = [](double, const ConstVecRef&, const ConstVecRef&, int, MatRef o) { o.setZero(); };
    m.hess_theta_state = [](double, const ConstVecRef&, const ConstVecRef&, int i, MatRef o) {
        o.setZero();
        if (i == 0) {
            o(0, 0) = 1.0;
        } else {
            o(0, 1) = 1.0;
            o(1, 0) = 2.0;
        }
    };
    m.hess_state = [](double, const ConstVecRef&, const ConstVecRef&, int, MatRef o) { o.setZero(); };
    m.jac_theta_time = [](double, const ConstVecRef&, const ConstVecRef&, MatRef o) { o.setZero(); };
    m.solution = AnalyticSolution{[](double t, const Vec& th) {
                                      const double e = std::exp(th[0] * t);
                                      Vec v(2);
                                      v << e, (2.0 * th[1] * t + 1.0) * e;
                                      return v;
                                  },
                                  [](double t, const Vec& th) {
                                      const double e = std::exp(th[0] * t);
                                      Vec v(2);
                                      v << th[0] * e, 2.0 * th[1] * e + th[0] * (2.0 * th[1] * t + 1.0) * e;
                                      return v;
                                  }};
    return m;
}

// Predator-prey: p1' = a p1 + b p1 p2, p2' = c p2 + d p1 p2; theta = (a, b, c, d).
OdeModel lotka_volterra() {
    OdeModel m;
    m.name = "lotka_volterra";
    m.state_dim = 2;
    m.param_dim = 4;
    m.bounds = cube(4, -10.0, 10.0);
    m.rhs = [](double, const ConstVecRef& f, const ConstVecRef& th, VecRef o) {
        o[0] = th[0] * f[0] + th[1] * f[0] * f[1];
        o[1] = th[2] * f[1] + th[3] * f[0] * f[1];
    };
    m.jac_theta = [](double, const ConstVecRef& f, const ConstVecRef&, MatRef o) {
        o.setZero();
        o(0, 0) = f[0];
        o(0, 1) = f[0] * f[1];
        o(1, 2) = f[1];
        o(1, 3) = f[0] * f[1];
    };
    m.jac_state = [](double, const ConstVecRef& f, const ConstVecRef& th, MatRef o) {
        o(0, 0) = th[0] + th[1] * f[1];
        o(0, 1) = th[1] * f[0];
        o(1, 0) = th[3] * f[1];
        o(1, 1) = th[2] + th[3] * f[0];
    };
    m.hess_theta = [](double, const ConstVecRef&, const ConstVecRef&, int, MatRef o) { o.setZero(); };
    m.hess_theta_state = [](double, const ConstVecRef& f, const ConstVecRef&, int i, MatRef o) {
        o.setZero();
        if (i == 0) {
            o(0, 0) = 1.0;
            o(1, 0) = f[1];
            o(1, 1) = f[0];
        } else {
            o(2, 1) = 1.0;
            o(3, 0) = f[1];
            o(3, 1) = f[0];
        }
    };
    m.hess_state = [](double, const ConstVecRef&, const ConstVecRef& th, int i, MatRef o) {
        o.setZero();
        const double c = (i == 0) ? th[1] : th[3];
        o(0, 1) = c;
        o(1, 0) = c;
    };
    m.jac_theta_time = [](double, const ConstVecRef&, const ConstVecRef&, MatRef o) { o.setZero(); };
    return m;
}

// Feedback system: R' = k_in - k_out R (1 + M), M' = k_tol (R - M);
// theta = (k_in, k_out, k_tol).
OdeModel pkpd_feedback() {
    OdeModel m;
    m.name = "pkpd_feedback";
    m.state_dim = 2;
    m.param_dim = 3;
    m.bounds = cube(3, 0.0, 10.0);
    m.rhs = [](double, const ConstVecRef& f, const ConstVecRef& th, VecRef o) {
        o[0] = th[0] - th[1] * f[0] * (1.0 + f[1]);
        o[1] = th[2] * (f[0] - f[1]);
    };
    m.jac_theta = [](double, const ConstVecRef& f, const ConstVecRef&, MatRef o) {
        o.setZero();
        o(0, 0) = 1.0;
        o(0, 1) = -f[0] * (1.0 + f[1]);
        o(1, 2) = f[0] - f[1];
    };
    m.jac_state = [](double, const ConstVecRef& f, const ConstVecRef& th, MatRef o) {
        o(0, 0) = -th[1] * (1.0 + f[1]);
        o(0, 1) = -th[1] * f[0];
        o(1, 0) = th[2];
        o(1, 1) = -th[2];
    };
    m.hess_theta = [](double, const ConstVecRef&, const ConstVecRef&, int, MatRef o) { o.setZero(); };
    m.hess_theta_state = [](double, const ConstVecRef& f, const ConstVecRef&, int i, MatRef o) {
        o.setZero();
        if (i == 0) {
            o(1, 0) = -(1.0 + f[1]);
            o(1, 1) = -f[0];
        } else {
            o(2, 0) = 1.0;
            o(2, 1) = -1.0;
        }
    };
    m.hess_state = [](double, const ConstVecRef&, const ConstVecRef& th, int i, MatRef o) {
        o.setZero();
        if (i == 0) {
            o(0, 1) = -th[1];
            o(1, 0) = -th[1];
        }
    };
    m.jac_theta_time = [](double, const ConstVecRef&, const ConstVecRef&, MatRef o) { o.setZero(); };
    return m;
}

} // namespace

BuiltinModel parse_builtin_model(std::string_view name) {
    if (name == "example1") return BuiltinModel::Example1;
    if (name == "example2") return BuiltinModel::Example2;
    if (name == "lotka_volterra") return BuiltinModel::LotkaVolterra;
    if (name == "pkpd_feedback") return BuiltinModel::PkpdFeedback;
    throw_invalid("unknown model '" + std::string(name) + "'");
}

std::string_view to_string(BuiltinModel m) {
    switch (m) {
    case BuiltinModel::Example1: return "example1";
    case BuiltinModel::Example2: return "example2";
    case BuiltinModel::LotkaVolterra: return "lotka_volterra";
    case BuiltinModel::PkpdFeedback: return "pkpd_feedback";
    }
    return "unknown";
}

OdeModel builtin_model(BuiltinModel which) {
    switch (which) {
    case BuiltinModel::Example1: return example1();
    case BuiltinModel::Example2: return example2();
    case BuiltinModel::LotkaVolterra: return lotka_volterra();
    case BuiltinModel::PkpdFeedback: return pkpd_feedback();
    }
    throw_invalid("unknown model");
}

OdeModel builtin_model(std::string_view name) { return builtin_model(parse_builtin_model(name)); }

TrueFunction misspecified_truth(std::string_view name) {
    using std::numbers::pi;
    if (name == "example1_case2") {
        return {"example1_case2", 1,
                [](double t) { return Vec::Constant(1, 1.0 + std::exp(-t * t / 2.0) + 0.02 * std::sin(4.0 * pi * t)); },
                [](double t) {
                    return Vec::Constant(1, -t * std::exp(-t * t / 2.0) + 0.08 * pi * std::cos(4.0 * pi * t));
                }};
    }
    if (name == "example2_case2") {
        return {"example2_case2", 2,
                [](double t) {
                    Vec v(2);
                    v << std::exp(t) + 0.1 * std::sin(4.0 * pi * t),
                        (2.0 * t + 1.0) * std::exp(t) + 0.45 * std::cos(4.0 * pi * t);
                    return v;
                },
                [](double t) {
                    Vec v(2);
                    v << std::exp(t) + 0.4 * pi * std::cos(4.0 * pi * t),
                        (2.0 * t + 3.0) * std::exp(t) - 1.8 * pi * std::sin(4.0 * pi * t);
                    return v;
                }};
    }
    throw_invalid("unknown misspecified truth '" + std::string(name) + "'");
}

} // namespace odebayes
