#pragma once

#include "odebayes/types.hpp"

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace odebayes {

/// Axis-aligned compact parameter box.
struct ThetaBox {
    Vec lower;
    Vec upper;

    int dim() const noexcept { return static_cast<int>(lower.size()); }
    bool contains(const Vec& theta) const;
    Vec project(const Vec& theta) const;
};

// Pointwise callbacks write into caller-owned storage so the inner
// quadrature loops stay allocation-free.
using RhsFn = std::function<void(double t, const ConstVecRef& f, const ConstVecRef& theta, VecRef out)>;
using JacFn = std::function<void(double t, const ConstVecRef& f, const ConstVecRef& theta, MatRef out)>;
/// Per-component second partials: `component` selects F_i.
using CompHessFn =
    std::function<void(double t, const ConstVecRef& f, const ConstVecRef& theta, int component, MatRef out)>;
using SolutionFn = std::function<Vec(double t, const Vec& theta)>;

/// Closed-form solution family t -> f_theta(t) with its time derivative.
struct AnalyticSolution {
    SolutionFn value;
    SolutionFn derivative;
};

/// Vector field F(t, f, theta) of a d-dimensional ODE with p parameters.
///
/// `jac_theta` is D_{0,0,1}F (d x p) and `jac_state` is D_{0,1,0}F (d x d).
/// The optional second partials are per component i of F:
///   hess_theta       d^2 F_i / dtheta^2        (p x p)
///   hess_theta_state d^2 F_i / dtheta df       (p x d)
///   hess_state       d^2 F_i / df^2            (d x d)
/// and `jac_theta_time` is d/dt of D_{0,0,1}F at fixed f (d x p).
/// Missing second partials are replaced by central differences of the first
/// partials (see the *_or_fd helpers).
struct OdeModel {
    std::string name;
    int state_dim = 0;
    int param_dim = 0;
    ThetaBox bounds;

    RhsFn rhs;
    JacFn jac_theta;
    JacFn jac_state;

    CompHessFn hess_theta;
    CompHessFn hess_theta_state;
    CompHessFn hess_state;
    JacFn jac_theta_time;

    std::optional<AnalyticSolution> solution;

    Vec F(double t, const Vec& f, const Vec& theta) const;
    Mat dF_dtheta(double t, const Vec& f, const Vec& theta) const;
    Mat dF_df(double t, const Vec& f, const Vec& theta) const;

    Mat d2F_dtheta2(double t, const Vec& f, const Vec& theta, int component) const;
    Mat d2F_dtheta_df(double t, const Vec& f, const Vec& theta, int component) const;
    Mat d2F_df2(double t, const Vec& f, const Vec& theta, int component) const;
    Mat d2F_dt_dtheta(double t, const Vec& f, const Vec& theta) const;

    /// Throws invalid-argument if the mandatory callbacks or dimensions are missing.
    void validate() const;
};

/// Weight function w on [0,1] with w(0) = w(1) = 0.
struct WeightFn {
    std::function<double(double)> value;
    std::function<double(double)> derivative;

    double operator()(double t) const { return value(t); }
};

/// Default weight w(t) = t(1-t).
WeightFn default_weight();

/// A known mean function f0 with its derivative.
struct TrueFunction {
    std::string name;
    int dim = 0;
    std::function<Vec(double)> value;
    std::function<Vec(double)> derivative;
};

enum class BuiltinModel { Example1, Example2, LotkaVolterra, PkpdFeedback };

BuiltinModel parse_builtin_model(std::string_view name);
std::string_view to_string(BuiltinModel m);

OdeModel builtin_model(BuiltinModel which);
OdeModel builtin_model(std::string_view name);

/// Names accepted by misspecified_truth: "example1_case2", "example2_case2".
TrueFunction misspecified_truth(std::string_view name);

/// f0 = f_theta for a model with an attached analytic solution.
TrueFunction solution_truth(const OdeModel& model, const Vec& theta);

/// Model for h = g(f): H(t, h, theta) = g'(g^{-1}(h)) F(t, g^{-1}(h), theta).
struct StateTransform {
    std::function<Vec(const Vec&)> g;
    std::function<Vec(const Vec&)> g_inv;
    std::function<Mat(const Vec&)> g_jacobian;
};

OdeModel transform_model(const OdeModel& model, StateTransform transform);

/// Central-difference steps used by the finite-difference fallbacks.
inline constexpr double kFdStep = 1e-5;

} // namespace odebayes
