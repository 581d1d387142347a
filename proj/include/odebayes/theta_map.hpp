#pragma once

#include "odebayes/error.hpp"
#include "odebayes/ode_model.hpp"
#include "odebayes/quadrature.hpp"
#include "odebayes/spline_basis.hpp"
#include "odebayes/types.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace odebayes {

/// f(t) = B^T N(t) with coefficient matrix B of size (k_n+m-1) x d.
class SplineFunction {
public:
    SplineFunction(KnotVector basis, Mat coefficients);

    const KnotVector& basis() const noexcept { return basis_; }
    const Mat& coefficients() const noexcept { return coeffs_; }
    int dim() const noexcept { return static_cast<int>(coeffs_.cols()); }

    Vec value(double t) const;
    Vec derivative(double t) const;

private:
    KnotVector basis_;
    Mat coeffs_;
};

/// A curve sampled at quadrature nodes: columns are nodes, rows are states.
struct CurveSamples {
    Mat value; // d x Q
    Mat deriv; // d x Q
};

/// Quadrature nodes with the weight function folded into the weights.
struct WeightedNodes {
    Vec t;
    Vec weight; // quadrature weight * w(t)
};

WeightedNodes weighted_nodes(const QuadratureRule& quad, const WeightFn& w);

/// Basis values and first derivatives at the nodes of a rule (Q x K each).
struct BasisAtNodes {
    Mat value;
    Mat deriv;
};

BasisAtNodes basis_at_nodes(const KnotVector& kv, const QuadratureRule& quad);

CurveSamples sample_curve(const TrueFunction& f, const QuadratureRule& quad);
CurveSamples sample_curve(const SplineFunction& f, const QuadratureRule& quad);
CurveSamples sample_spline(const BasisAtNodes& basis, const Mat& coefficients);

/// R_f(eta)^2 on precomputed samples.
double defect_squared(const CurveSamples& f, const OdeModel& model, const Vec& eta, const WeightedNodes& nodes);
/// Gradient of R_f(eta)^2 in eta.
Vec defect_gradient(const CurveSamples& f, const OdeModel& model, const Vec& eta, const WeightedNodes& nodes);

/// R_f(eta) = { int ||f'(t) - F(t, f(t), eta)||^2 w(t) dt }^{1/2}.
template <class Curve>
double defect(const Curve& f, const OdeModel& model, const Vec& eta, const WeightFn& w, const QuadratureRule& quad) {
    return std::sqrt(defect_squared(sample_curve(f, quad), model, eta, weighted_nodes(quad, w)));
}

template <class Curve>
Vec defect_gradient(const Curve& f, const OdeModel& model, const Vec& eta, const WeightFn& w,
                    const QuadratureRule& quad) {
    return defect_gradient(sample_curve(f, quad), model, eta, weighted_nodes(quad, w));
}

struct PsiConfig {
    int starts = 8;
    double grad_tol = 1e-10; // on the projected gradient, relative to max(1, objective)
    double step_tol = 1e-13; // on the step, relative to max(1, |theta|)
    int max_iter = 100;
    double tie_tol = 1e-12;  // objectives closer than this (relative) tie; smaller theta wins
    std::optional<Vec> initial; // extra start placed before the low-discrepancy ones

    void validate(int param_dim) const;
};

struct PsiStart {
    Vec start;
    Vec end;
    double objective = 0;
    int iterations = 0;
    bool converged = false;
    bool failed = false; // model evaluation raised
};

struct PsiDiagnostics {
    std::vector<PsiStart> starts;
    int best_start = -1;
    bool interior = true;
    std::vector<bool> at_lower;
    std::vector<bool> at_upper;
    Vec gradient;
};

struct PsiResult {
    Vec theta;
    double value = 0;     // R_f(theta)
    double objective = 0; // R_f(theta)^2
    PsiDiagnostics diagnostics;
};

/// Raised when no start converges; carries the best incumbent.
class OptimizationFailure : public Error {
public:
    OptimizationFailure(const std::string& what, PsiResult best)
        : Error(ErrorCategory::OptimizationFailure, what), best_(std::move(best)) {}
    const PsiResult& best() const noexcept { return best_; }

private:
    PsiResult best_;
};

/// Scrambled Halton points in the parameter box.
std::vector<Vec> multistart_points(const ThetaBox& box, int count);

/// psi(f) = argmin over the box of R_f(eta).
PsiResult psi(const CurveSamples& f, const OdeModel& model, const WeightedNodes& nodes, const PsiConfig& cfg = {});

template <class Curve>
PsiResult psi(const Curve& f, const OdeModel& model, const WeightFn& w, const QuadratureRule& quad,
              const PsiConfig& cfg = {}) {
    return psi(sample_curve(f, quad), model, weighted_nodes(quad, w), cfg);
}

} // namespace odebayes
