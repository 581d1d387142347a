#include "odebayes/asymptotics.hpp"
#include "odebayes/data_io.hpp"
#include "odebayes/error.hpp"
#include "odebayes/experiments.hpp"
#include "odebayes/log.hpp"
#include "odebayes/posterior.hpp"
#include "odebayes/spline_basis.hpp"
#include "odebayes/theta_map.hpp"
#include "odebayes/version.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace odebayes;

namespace {

py::dict interval_dict(const IntervalResult& r) {
    py::dict d;
    d["intervals"] = r.intervals;
    Mat draws(static_cast<Eigen::Index>(r.theta.size()), r.theta.empty() ? 0 : r.theta.front().size());
    for (std::size_t i = 0; i < r.theta.size(); ++i) draws.row(static_cast<Eigen::Index>(i)) = r.theta[i].transpose();
    d["draws"] = draws;
    d["failures"] = r.failures;
    d["attempted"] = r.attempted;
    d["valid"] = r.valid;
    if (r.sigma2) d["sigma2_posterior"] = py::make_tuple(r.sigma2->shape, r.sigma2->rate);
    return d;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Bayesian two-step estimation for ODE models (C++ core)";
    m.attr("__version__") = kVersion;

    static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            const std::string cat(to_string(e.category()));
            PyErr_SetObject(error.ptr(), py::make_tuple(e.what(), cat).ptr());
        }
    });

    m.def("set_log_level", [](const std::string& level) {
        static const std::map<std::string, log::Level> table{{"debug", log::Level::Debug}, {"info", log::Level::Info},
                                                             {"warn", log::Level::Warn},   {"error", log::Level::Error},
                                                             {"off", log::Level::Off}};
        const auto it = table.find(level);
        if (it == table.end()) throw_invalid("unknown log level '" + level + "'");
        log::set_level(it->second);
    });

    // ---- splines
    py::class_<KnotVector>(m, "KnotVector")
        .def(py::init<int, int>(), py::arg("k_n"), py::arg("order_m"))
        .def_property_readonly("segments", &KnotVector::segments)
        .def_property_readonly("order", &KnotVector::order)
        .def_property_readonly("dimension", &KnotVector::dimension)
        .def_property_readonly("knots", &KnotVector::knots)
        .def_property_readonly("interior", &KnotVector::interior)
        .def("__repr__", [](const KnotVector& k) {
            std::ostringstream os;
            os << "KnotVector(k_n=" << k.segments() << ", m=" << k.order() << ")";
            return os.str();
        });
    m.def("eval_basis", &eval_basis, py::arg("knots"), py::arg("t"), py::arg("deriv") = 0);
    m.def(
        "design_matrix",
        [](const KnotVector& kv, const std::vector<double>& x) { return Mat(design_matrix(kv, x).matrix()); },
        py::arg("knots"), py::arg("x"));
    m.def("midpoint_design", &midpoint_design, py::arg("n"));

    // ---- models
    m.def("builtin_models", [] { return std::vector<std::string>{"example1", "example2", "lotka_volterra", "pkpd_feedback"}; });
    m.def(
        "model_info",
        [](const std::string& name) {
            const auto mdl = builtin_model(name);
            py::dict d;
            d["name"] = mdl.name;
            d["state_dim"] = mdl.state_dim;
            d["param_dim"] = mdl.param_dim;
            d["lower"] = mdl.bounds.lower;
            d["upper"] = mdl.bounds.upper;
            d["has_solution"] = mdl.solution.has_value();
            return d;
        },
        py::arg("model"));
    m.def(
        "vector_field",
        [](const std::string& name, double t, const Vec& f, const Vec& theta) { return builtin_model(name).F(t, f, theta); },
        py::arg("model"), py::arg("t"), py::arg("f"), py::arg("theta"));
    m.def(
        "solution",
        [](const std::string& name, double t, const Vec& theta) {
            const auto mdl = builtin_model(name);
            if (!mdl.solution) throw_invalid("model '" + name + "' has no analytic solution");
            return mdl.solution->value(t, theta);
        },
        py::arg("model"), py::arg("t"), py::arg("theta"));

    // ---- psi
    m.def(
        "psi_spline",
        [](const std::string& name, const KnotVector& kv, const Mat& coeffs, int quadrature_order) {
            const auto mdl = builtin_model(name);
            const auto r = psi(SplineFunction(kv, coeffs), mdl, default_weight(), knot_aligned_rule(kv, quadrature_order));
            py::dict d;
            d["theta"] = r.theta;
            d["defect"] = r.value;
            d["interior"] = r.diagnostics.interior;
            return d;
        },
        py::arg("model"), py::arg("knots"), py::arg("coefficients"), py::arg("quadrature_order") = 10);
    m.def(
        "psi_solution",
        [](const std::string& name, const Vec& eta, int panels, int quadrature_order) {
            const auto mdl = builtin_model(name);
            return psi(solution_truth(mdl, eta), mdl, default_weight(), uniform_rule(panels, quadrature_order)).theta;
        },
        py::arg("model"), py::arg("eta"), py::arg("panels") = 32, py::arg("quadrature_order") = 10,
        "psi applied to the model's own solution at eta (returns eta up to optimizer tolerance)");

    // ---- posterior
    m.def(
        "coeff_posterior",
        [](const KnotVector& kv, const std::vector<double>& x, const Mat& Y, double sigma2, bool scaled) {
            const auto p = coeff_posterior(design_matrix(kv, x), Y, sigma2, scaled ? PriorScaling::Scaled : PriorScaling::Fixed);
            return py::make_tuple(p.mean, p.covariance());
        },
        py::arg("knots"), py::arg("x"), py::arg("Y"), py::arg("sigma2"), py::arg("scaled") = false,
        "posterior mean (K x d) and shared covariance (K x K) of the spline coefficients");
    m.def(
        "sigma2_posterior",
        [](const KnotVector& kv, const std::vector<double>& x, const Mat& Y, double a, double b) {
            const auto p = sigma2_posterior(design_matrix(kv, x), Y, a, b);
            return py::make_tuple(p.shape, p.rate);
        },
        py::arg("knots"), py::arg("x"), py::arg("Y"), py::arg("a") = 1.0, py::arg("b") = 1.0,
        "inverse-gamma (shape, rate)");
    m.def(
        "matrix_normal_posterior",
        [](const KnotVector& kv, const std::vector<double>& x, const Mat& Y, const Mat& Sigma) {
            const auto p = matrix_normal_posterior(design_matrix(kv, x), Y, Sigma);
            return py::make_tuple(p.mean, p.row_cov, p.col_cov);
        },
        py::arg("knots"), py::arg("x"), py::arg("Y"), py::arg("Sigma"));

    // ---- study configs and experiments (configs are JSON text)
    m.def("canonical_config", [](const std::string& text) { return canonical_json(parse_study_config(text)); });
    m.def("config_hash", [](const std::string& text) { return config_hash(parse_study_config(text)); });
    m.def(
        "simulate_data",
        [](const std::string& config, int n, int replication) {
            const auto d = simulate_data(parse_study_config(config), n, replication);
            return py::make_tuple(d.x, d.Y);
        },
        py::arg("config"), py::arg("n"), py::arg("replication") = 0);
    m.def(
        "frequentist_two_step",
        [](const std::string& config, const std::vector<double>& x, const Mat& Y) {
            return frequentist_two_step(x, Y, parse_study_config(config)).theta;
        },
        py::arg("config"), py::arg("x"), py::arg("Y"));
    m.def(
        "bayes_interval",
        [](const std::string& config, const std::vector<double>& x, const Mat& Y, std::uint64_t seed) {
            return interval_dict(bayes_interval(x, Y, parse_study_config(config), seed));
        },
        py::arg("config"), py::arg("x"), py::arg("Y"), py::arg("seed") = 0);
    m.def(
        "bootstrap_interval",
        [](const std::string& config, const std::vector<double>& x, const Mat& Y, std::uint64_t seed) {
            return interval_dict(bootstrap_interval(x, Y, parse_study_config(config), seed));
        },
        py::arg("config"), py::arg("x"), py::arg("Y"), py::arg("seed") = 0);
    m.def(
        "run_study",
        [](const std::string& config, int jobs, const std::string& checkpoint) {
            const auto cfg = parse_study_config(config);
            RunOptions opt;
            opt.jobs = jobs;
            opt.checkpoint = checkpoint;
            StudyResult r;
            {
                py::gil_scoped_release release;
                r = run_study(cfg, opt);
            }
            std::ostringstream csv;
            write_csv(csv, r.rows);
            return py::make_tuple(csv.str(), study_metadata_json(cfg, r));
        },
        py::arg("config"), py::arg("jobs") = 1, py::arg("checkpoint") = "",
        "returns (csv_text, metadata_json_text)");
    m.def(
        "asymptotics",
        [](const std::string& config, int n, int replication) {
            const auto cfg = parse_study_config(config);
            const auto truth = resolve_truth(cfg);
            const auto ctx = make_context(cfg, midpoint_design(n));
            const auto ing =
                compute_ingredients(ctx.model, truth.f0, truth.theta0, default_weight(), ctx.basis, ctx.quad);
            const auto b = bvm_replication(cfg, truth, n, replication);
            py::dict d;
            d["theta0"] = truth.theta0;
            d["J"] = ing.J;
            d["gamma_f0"] = ing.gamma_f0;
            d["b_min_eigenvalues"] = ing.b_min_eigen;
            d["mu_n"] = b.target.mean;
            d["covariance"] = b.target.covariance;
            d["tv"] = b.tv.value;
            d["tv_method"] = b.tv.method;
            return d;
        },
        py::arg("config"), py::arg("n"), py::arg("replication") = 0);

    // ---- data files
    m.def(
        "read_dataset",
        [](const std::string& path) {
            const auto d = read_dataset_file(path);
            return py::make_tuple(d.x, d.Y);
        },
        py::arg("path"));
    m.def(
        "write_dataset",
        [](const std::string& path, const std::vector<double>& x, const Mat& Y) { write_dataset_file(path, {x, Y}); },
        py::arg("path"), py::arg("x"), py::arg("Y"));
}
