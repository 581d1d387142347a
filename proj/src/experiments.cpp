#include "odebayes/experiments.hpp"

#include "odebayes/error.hpp"
#include "odebayes/log.hpp"
#include "odebayes/rng.hpp"
#include "odebayes/version.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

namespace odebayes {

using json = nlohmann::json;

std::string_view to_string(CaseKind c) {
    return c == CaseKind::WellSpecified ? "well_specified" : "misspecified";
}

std::string_view to_string(ErrorLaw e) {
    switch (e) {
    case ErrorLaw::Normal: return "normal";
    case ErrorLaw::StudentT: return "student_t";
    case ErrorLaw::None: return "none";
    }
    return "?";
}

std::string_view to_string(Sigma2Mode s) {
    switch (s) {
    case Sigma2Mode::Fixed: return "fixed";
    case Sigma2Mode::Plugin: return "plugin";
    case Sigma2Mode::Hierarchical: return "hierarchical";
    }
    return "?";
}

std::string_view to_string(BootstrapScheme b) {
    switch (b) {
    case BootstrapScheme::Residual: return "residual";
    case BootstrapScheme::Pairs: return "pairs";
    case BootstrapScheme::Model: return "model";
    }
    return "?";
}

// ---------------------------------------------------------------- config

int StudyConfig::k_n(int n) const {
    if (knots_rule == KnotsRule::Fixed) return knots_fixed;
    return std::max(2, static_cast<int>(std::ceil(knots_c * std::pow(static_cast<double>(n), knots_exponent) - 1e-12)));
}

void StudyConfig::validate() const {
    if (schema_version != kSchemaVersion)
        throw_invalid("config: unsupported schema_version " + std::to_string(schema_version));
    const auto which = parse_builtin_model(model);
    const auto m = builtin_model(which);
    if (case_kind == CaseKind::WellSpecified && !m.solution)
        throw_invalid("config: model '" + model + "' has no analytic solution for a well-specified study");
    if (case_kind == CaseKind::Misspecified && which != BuiltinModel::Example1 && which != BuiltinModel::Example2)
        throw_invalid("config: no misspecified truth is registered for model '" + model + "'");
    if (theta0) {
        if (theta0->size() != m.param_dim) throw_invalid("config: theta0 has wrong dimension");
        if (!m.bounds.contains(*theta0)) throw_invalid("config: theta0 lies outside the parameter box");
    }
    if (!(sigma0 > 0.0)) throw_invalid("config: errors.sigma must be positive");
    if (!(nu > 0.0)) throw_invalid("config: errors.df must be positive");
    if (error_law == ErrorLaw::StudentT && standardize && !(nu > 2.0))
        throw_invalid("config: standardized t errors need df > 2");
    if (n_list.empty()) throw_invalid("config: n list is empty");
    if (replications < 1 || draws < 1 || bootstrap < 1) throw_invalid("config: counts must be positive");
    if (!bayes && !bootstrap_enabled) throw_invalid("config: no method selected");
    if (bootstrap_scheme == BootstrapScheme::Model && bootstrap_enabled && !m.solution)
        throw_invalid("config: the model bootstrap needs an analytic solution");
    if (order_m < 1) throw_invalid("config: spline order must be >= 1");
    if (knots_rule == KnotsRule::Fixed && knots_fixed < 1) throw_invalid("config: fixed knot count must be >= 1");
    if (knots_rule == KnotsRule::Power && (!(knots_c > 0.0) || !(knots_exponent > 0.0)))
        throw_invalid("config: knot rule constants must be positive");
    std::set<int> seen;
    for (int n : n_list) {
        if (n < 1) throw_invalid("config: sample sizes must be positive");
        if (!seen.insert(n).second) throw_invalid("config: duplicate sample size " + std::to_string(n));
        if (k_n(n) + order_m - 1 > n) {
            std::ostringstream os;
            os << "config: k_n + m - 1 = " << k_n(n) + order_m - 1 << " exceeds n = " << n;
            throw_invalid(os.str());
        }
    }
    if (!(sigma2_fixed > 0.0)) throw_invalid("config: sigma2.value must be positive");
    if (!(prior_a > 0.0) || !(prior_b > 0.0)) throw_invalid("config: sigma2 prior parameters must be positive");
    if (!(level > 0.0 && level < 1.0)) throw_invalid("config: level must lie in (0, 1)");
    if (quadrature_order < 1) throw_invalid("config: quadrature_order must be >= 1");
    psi.validate(m.param_dim);
}

namespace {

[[noreturn]] void parse_fail(const std::string& msg) { throw Error(ErrorCategory::Parse, "config: " + msg); }

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!obj.is_object()) parse_fail(where + " must be an object");
    for (const auto& item : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || item.key() == a;
        if (!ok) parse_fail("unknown key '" + where + (where.empty() ? "" : ".") + item.key() + "'");
    }
}

template <class T> T get(const json& obj, const char* key, const std::string& where) {
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        parse_fail("bad value for '" + where + key + "': " + e.what());
    }
}

template <class T> void maybe(const json& obj, const char* key, T& out, const std::string& where = "") {
    if (obj.contains(key)) out = get<T>(obj, key, where);
}

template <class E> E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> table,
                                const char* key) {
    for (const auto& [name, value] : table)
        if (s == name) return value;
    parse_fail("unknown value '" + s + "' for '" + key + "'");
}

json psi_json(const PsiConfig& p) {
    return {{"starts", p.starts},     {"grad_tol", p.grad_tol}, {"step_tol", p.step_tol},
            {"max_iter", p.max_iter}, {"tie_tol", p.tie_tol}};
}

json config_json(const StudyConfig& c) {
    json j;
    j["schema_version"] = c.schema_version;
    j["model"] = c.model;
    j["case"] = std::string(to_string(c.case_kind));
    if (c.theta0) j["theta0"] = std::vector<double>(c.theta0->data(), c.theta0->data() + c.theta0->size());
    j["errors"] = {{"law", std::string(to_string(c.error_law))},
                   {"sigma", c.sigma0},
                   {"df", c.nu},
                   {"standardize", c.standardize}};
    j["n"] = c.n_list;
    j["replications"] = c.replications;
    j["draws"] = c.draws;
    j["bootstrap"] = c.bootstrap;
    j["bootstrap_scheme"] = std::string(to_string(c.bootstrap_scheme));
    j["bootstrap_rescale"] = c.bootstrap_rescale;
    std::vector<std::string> methods;
    if (c.bayes) methods.emplace_back("bayes");
    if (c.bootstrap_enabled) methods.emplace_back("bootstrap");
    j["methods"] = methods;
    json knots;
    if (c.knots_rule == KnotsRule::Fixed) {
        knots = {{"rule", "fixed"}, {"k", c.knots_fixed}};
    } else {
        knots = {{"rule", "power"}, {"c", c.knots_c}, {"exponent", c.knots_exponent}};
    }
    j["spline"] = {{"order", c.order_m}, {"knots", knots}};
    j["sigma2"] = {{"mode", std::string(to_string(c.sigma2_mode))},
                   {"value", c.sigma2_fixed},
                   {"a", c.prior_a},
                   {"b", c.prior_b}};
    j["level"] = c.level;
    j["seed"] = c.seed;
    j["quadrature_order"] = c.quadrature_order;
    j["psi"] = psi_json(c.psi);
    return j;
}

} // namespace

StudyConfig parse_study_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        parse_fail(std::string("malformed JSON: ") + e.what());
    }
    reject_unknown(j,
                   {"schema_version", "model", "case", "theta0", "errors", "n", "replications", "draws", "bootstrap",
                    "bootstrap_scheme", "bootstrap_rescale", "methods", "spline", "sigma2", "level", "seed", "quadrature_order", "psi",
                    "comment"},
                   "");
    StudyConfig c;
    maybe(j, "schema_version", c.schema_version);
    maybe(j, "model", c.model);
    if (j.contains("case")) {
        c.case_kind = parse_enum<CaseKind>(get<std::string>(j, "case", ""),
                                           {{"well_specified", CaseKind::WellSpecified},
                                            {"misspecified", CaseKind::Misspecified}},
                                           "case");
    }
    if (j.contains("theta0")) {
        const auto v = get<std::vector<double>>(j, "theta0", "");
        c.theta0 = Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    if (j.contains("errors")) {
        const auto& e = j["errors"];
        reject_unknown(e, {"law", "sigma", "df", "standardize"}, "errors");
        if (e.contains("law")) {
            c.error_law = parse_enum<ErrorLaw>(get<std::string>(e, "law", "errors."),
                                               {{"normal", ErrorLaw::Normal},
                                                {"student_t", ErrorLaw::StudentT},
                                                {"none", ErrorLaw::None}},
                                               "errors.law");
        }
        maybe(e, "sigma", c.sigma0, "errors.");
        maybe(e, "df", c.nu, "errors.");
        maybe(e, "standardize", c.standardize, "errors.");
    }
    maybe(j, "n", c.n_list);
    maybe(j, "replications", c.replications);
    maybe(j, "draws", c.draws);
    maybe(j, "bootstrap", c.bootstrap);
    if (j.contains("bootstrap_scheme")) {
        c.bootstrap_scheme = parse_enum<BootstrapScheme>(get<std::string>(j, "bootstrap_scheme", ""),
                                                         {{"residual", BootstrapScheme::Residual},
                                                          {"pairs", BootstrapScheme::Pairs},
                                                          {"model", BootstrapScheme::Model}},
                                                         "bootstrap_scheme");
    }
    maybe(j, "bootstrap_rescale", c.bootstrap_rescale);
    if (j.contains("methods")) {
        c.bayes = c.bootstrap_enabled = false;
        for (const auto& m : get<std::vector<std::string>>(j, "methods", "")) {
            if (m == "bayes") c.bayes = true;
            else if (m == "bootstrap") c.bootstrap_enabled = true;
            else parse_fail("unknown method '" + m + "'");
        }
    }
    if (j.contains("spline")) {
        const auto& s = j["spline"];
        reject_unknown(s, {"order", "knots"}, "spline");
        maybe(s, "order", c.order_m, "spline.");
        if (s.contains("knots")) {
            const auto& k = s["knots"];
            reject_unknown(k, {"rule", "k", "c", "exponent"}, "spline.knots");
            const auto rule = k.contains("rule") ? get<std::string>(k, "rule", "spline.knots.") : "power";
            c.knots_rule = parse_enum<KnotsRule>(rule, {{"fixed", KnotsRule::Fixed}, {"power", KnotsRule::Power}},
                                                 "spline.knots.rule");
            maybe(k, "k", c.knots_fixed, "spline.knots.");
            maybe(k, "c", c.knots_c, "spline.knots.");
            maybe(k, "exponent", c.knots_exponent, "spline.knots.");
            if (c.knots_rule == KnotsRule::Fixed && !k.contains("k")) parse_fail("fixed knot rule needs 'k'");
        }
    }
    if (j.contains("sigma2")) {
        const auto& s = j["sigma2"];
        reject_unknown(s, {"mode", "value", "a", "b"}, "sigma2");
        if (s.contains("mode")) {
            c.sigma2_mode = parse_enum<Sigma2Mode>(get<std::string>(s, "mode", "sigma2."),
                                                   {{"fixed", Sigma2Mode::Fixed},
                                                    {"plugin", Sigma2Mode::Plugin},
                                                    {"hierarchical", Sigma2Mode::Hierarchical}},
                                                   "sigma2.mode");
        }
        maybe(s, "value", c.sigma2_fixed, "sigma2.");
        maybe(s, "a", c.prior_a, "sigma2.");
        maybe(s, "b", c.prior_b, "sigma2.");
    }
    maybe(j, "level", c.level);
    maybe(j, "seed", c.seed);
    maybe(j, "quadrature_order", c.quadrature_order);
    if (j.contains("psi")) {
        const auto& p = j["psi"];
        reject_unknown(p, {"starts", "grad_tol", "step_tol", "max_iter", "tie_tol"}, "psi");
        maybe(p, "starts", c.psi.starts, "psi.");
        maybe(p, "grad_tol", c.psi.grad_tol, "psi.");
        maybe(p, "step_tol", c.psi.step_tol, "psi.");
        maybe(p, "max_iter", c.psi.max_iter, "psi.");
        maybe(p, "tie_tol", c.psi.tie_tol, "psi.");
    }
    c.input_canonical = j.dump();
    c.validate();
    return c;
}

std::string canonical_json(const StudyConfig& cfg) { return config_json(cfg).dump(); }

std::string config_hash(const StudyConfig& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : canonical_json(cfg)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------- data

StudyTruth resolve_truth(const StudyConfig& cfg) {
    const auto model = builtin_model(cfg.model);
    if (cfg.case_kind == CaseKind::WellSpecified) {
        const Vec theta0 = cfg.theta0.value_or(Vec::Ones(model.param_dim));
        return {solution_truth(model, theta0), theta0};
    }
    auto f0 = misspecified_truth(cfg.model + "_case2");
    const auto r = psi(f0, model, default_weight(), uniform_rule(32, cfg.quadrature_order), cfg.psi);
    if (!r.diagnostics.interior) log::warn("resolve_truth: pseudo-true parameter lies on the boundary of the box");
    return {std::move(f0), r.theta};
}

std::uint64_t stream_seed(const StudyConfig& cfg, int n, int replication, Stream s) {
    return derive_seed(cfg.seed, {static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(replication),
                                  static_cast<std::uint64_t>(s)});
}

Dataset simulate_data(const StudyConfig& cfg, const TrueFunction& f0, int n, int replication) {
    Dataset data{midpoint_design(n), Mat(n, f0.dim)};
    Rng rng(stream_seed(cfg, n, replication, Stream::Data));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::student_t_distribution<double> student(cfg.nu);
    const double t_scale = cfg.standardize ? std::sqrt((cfg.nu - 2.0) / cfg.nu) : 1.0;
    for (int i = 0; i < n; ++i) {
        const Vec mean = f0.value(data.x[static_cast<std::size_t>(i)]);
        for (int j = 0; j < f0.dim; ++j) {
            double e = 0.0;
            switch (cfg.error_law) {
            case ErrorLaw::Normal: e = cfg.sigma0 * normal(rng); break;
            case ErrorLaw::StudentT: e = cfg.sigma0 * t_scale * student(rng); break;
            case ErrorLaw::None: break;
            }
            data.Y(i, j) = mean[j] + e;
        }
    }
    return data;
}

Dataset simulate_data(const StudyConfig& cfg, int n, int replication) {
    return simulate_data(cfg, resolve_truth(cfg).f0, n, replication);
}

FitContext make_context(const StudyConfig& cfg, std::vector<double> x) {
    auto model = builtin_model(cfg.model);
    const int n = static_cast<int>(x.size());
    auto basis = make_knots(cfg.k_n(n), cfg.order_m);
    auto X = design_matrix(basis, x);
    auto quad = knot_aligned_rule(basis, cfg.quadrature_order);
    auto bn = basis_at_nodes(basis, quad);
    auto nodes = weighted_nodes(quad, default_weight());
    return {std::move(model), std::move(basis), std::move(X), std::move(quad), std::move(bn), std::move(nodes)};
}

// ---------------------------------------------------------------- intervals

double quantile_type1(std::vector<double> values, double p) {
    if (values.empty()) throw_invalid("quantile_type1: no values");
    if (!(p >= 0.0 && p <= 1.0)) throw_invalid("quantile_type1: probability outside [0, 1]");
    const auto N = values.size();
    auto idx = static_cast<std::size_t>(std::ceil(p * static_cast<double>(N) - 1e-9));
    idx = std::clamp<std::size_t>(idx, 1, N) - 1;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(idx), values.end());
    return values[idx];
}

Mat percentile_intervals(const std::vector<Vec>& draws, double level) {
    if (draws.empty()) throw_invalid("percentile_intervals: no draws");
    const auto p = draws.front().size();
    const double alpha = 1.0 - level;
    Mat out(p, 2);
    std::vector<double> col(draws.size());
    for (Eigen::Index k = 0; k < p; ++k) {
        for (std::size_t s = 0; s < draws.size(); ++s) col[s] = draws[s][k];
        out(k, 0) = quantile_type1(col, alpha / 2.0);
        out(k, 1) = quantile_type1(col, 1.0 - alpha / 2.0);
    }
    return out;
}

namespace {

bool recoverable(const Error& e) {
    switch (e.category()) {
    case ErrorCategory::OptimizationFailure:
    case ErrorCategory::Numeric:
    case ErrorCategory::Domain:
    case ErrorCategory::IllPosedDesign: return true;
    default: return false;
    }
}

void finish(IntervalResult& r, const StudyConfig& cfg) {
    r.valid = r.attempted > 0 && r.failures <= kMaxFailureFraction * r.attempted && !r.theta.empty();
    if (!r.theta.empty()) r.intervals = percentile_intervals(r.theta, cfg.level);
}

void check_response(const FitContext& ctx, const Mat& Y) {
    if (Y.rows() != ctx.X.rows()) throw_invalid("response has wrong number of rows");
    if (Y.cols() != ctx.model.state_dim) {
        std::ostringstream os;
        os << "response has " << Y.cols() << " columns but model '" << ctx.model.name << "' has dimension "
           << ctx.model.state_dim;
        throw_invalid(os.str());
    }
}

} // namespace

IntervalResult bayes_interval(const FitContext& ctx, const Mat& Y, const StudyConfig& cfg, std::uint64_t seed) {
    check_response(ctx, Y);
    const auto fit = linear_fit(ctx.X, Y);
    IntervalResult r;
    std::vector<Mat> coeffs;
    switch (cfg.sigma2_mode) {
    case Sigma2Mode::Fixed:
        coeffs = sample_coeffs(coeff_posterior(fit, cfg.sigma2_fixed), cfg.draws, seed);
        break;
    case Sigma2Mode::Plugin: {
        r.sigma2 = sigma2_posterior(ctx.X, fit, Y, cfg.prior_a, cfg.prior_b);
        coeffs = sample_coeffs(coeff_posterior(fit, r.sigma2->mean()), cfg.draws, seed);
        break;
    }
    case Sigma2Mode::Hierarchical: {
        r.sigma2 = sigma2_posterior(ctx.X, fit, Y, cfg.prior_a, cfg.prior_b);
        coeffs = sample_hierarchical(fit, *r.sigma2, cfg.draws, seed).coeffs;
        break;
    }
    }
    r.theta.reserve(coeffs.size());
    for (const auto& B : coeffs) {
        ++r.attempted;
        try {
            r.theta.push_back(psi(sample_spline(ctx.basis_nodes, B), ctx.model, ctx.nodes, cfg.psi).theta);
        } catch (const Error& e) {
            if (!recoverable(e)) throw;
            ++r.failures;
        }
    }
    finish(r, cfg);
    return r;
}

IntervalResult bayes_interval(const std::vector<double>& x, const Mat& Y, const StudyConfig& cfg,
                              std::uint64_t seed) {
    return bayes_interval(make_context(cfg, x), Y, cfg, seed);
}

PsiResult frequentist_two_step(const FitContext& ctx, const Mat& Y, const StudyConfig& cfg) {
    check_response(ctx, Y);
    const auto fit = linear_fit(ctx.X, Y);
    return psi(sample_spline(ctx.basis_nodes, fit.ols), ctx.model, ctx.nodes, cfg.psi);
}

PsiResult frequentist_two_step(const std::vector<double>& x, const Mat& Y, const StudyConfig& cfg) {
    return frequentist_two_step(make_context(cfg, x), Y, cfg);
}

IntervalResult bootstrap_interval(const FitContext& ctx, const Mat& Y, const StudyConfig& cfg, std::uint64_t seed) {
    check_response(ctx, Y);
    const auto fit = linear_fit(ctx.X, Y);
    const Mat& Xm = ctx.X.matrix();
    const Mat fitted = Xm * fit.ols;
    Mat resid = Y - fitted;
    resid.rowwise() -= resid.colwise().mean();
    const auto n = Y.rows();
    if (cfg.bootstrap_rescale) {
        const auto dof = n - ctx.X.cols();
        if (dof < 1) throw_invalid("bootstrap: no residual degrees of freedom");
        resid *= std::sqrt(static_cast<double>(n) / static_cast<double>(dof));
    }

    Mat center = fitted;
    if (cfg.bootstrap_scheme == BootstrapScheme::Model) {
        if (!ctx.model.solution) throw_invalid("bootstrap: the model scheme needs an analytic solution");
        const Vec theta_hat = psi(sample_spline(ctx.basis_nodes, fit.ols), ctx.model, ctx.nodes, cfg.psi).theta;
        for (Eigen::Index i = 0; i < n; ++i)
            center.row(i) = ctx.model.solution->value(ctx.X.points()[i], theta_hat).transpose();
    }

    Rng rng(seed);
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    IntervalResult r;
    Mat Ystar(n, Y.cols());
    for (int b = 0; b < cfg.bootstrap; ++b) {
        for (auto& i : idx) i = pick(rng);
        ++r.attempted;
        try {
            Mat coef;
            if (cfg.bootstrap_scheme == BootstrapScheme::Pairs) {
                std::sort(idx.begin(), idx.end());
                std::vector<double> xs(idx.size());
                for (std::size_t i = 0; i < idx.size(); ++i) {
                    xs[i] = ctx.X.points()[idx[i]];
                    Ystar.row(static_cast<Eigen::Index>(i)) = Y.row(idx[i]);
                }
                coef = linear_fit(design_matrix(ctx.basis, xs, false), Ystar).ols;
            } else {
                for (Eigen::Index i = 0; i < n; ++i) Ystar.row(i) = center.row(i) + resid.row(idx[static_cast<std::size_t>(i)]);
                coef = fit.gram_inverse * ctx.X.transpose_times(Ystar);
            }
            r.theta.push_back(psi(sample_spline(ctx.basis_nodes, coef), ctx.model, ctx.nodes, cfg.psi).theta);
        } catch (const Error& e) {
            if (!recoverable(e)) throw;
            ++r.failures;
        }
    }
    finish(r, cfg);
    return r;
}

IntervalResult bootstrap_interval(const std::vector<double>& x, const Mat& Y, const StudyConfig& cfg,
                                  std::uint64_t seed) {
    return bootstrap_interval(make_context(cfg, x), Y, cfg, seed);
}

// ---------------------------------------------------------------- study

namespace {

MethodOutcome outcome_of(const IntervalResult& r) {
    MethodOutcome o;
    o.valid = r.valid;
    o.failures = r.failures;
    if (r.intervals.size() > 0) {
        for (Eigen::Index k = 0; k < r.intervals.rows(); ++k) {
            o.lower.push_back(r.intervals(k, 0));
            o.upper.push_back(r.intervals(k, 1));
        }
    }
    return o;
}

template <class F> MethodOutcome guarded(F&& run, std::string& error) {
    try {
        return outcome_of(run());
    } catch (const Error& e) {
        if (!recoverable(e)) throw;
        error = e.what();
        return MethodOutcome{};
    }
}

} // namespace

ReplicationOutcome run_replication(const StudyConfig& cfg, const FitContext& ctx, const StudyTruth& truth, int n,
                                   int replication) {
    ReplicationOutcome out;
    out.n = n;
    out.replication = replication;
    const auto data = simulate_data(cfg, truth.f0, n, replication);
    if (cfg.bayes) {
        out.bayes = guarded(
            [&] { return bayes_interval(ctx, data.Y, cfg, stream_seed(cfg, n, replication, Stream::Posterior)); },
            out.error);
    }
    if (cfg.bootstrap_enabled) {
        out.bootstrap = guarded(
            [&] { return bootstrap_interval(ctx, data.Y, cfg, stream_seed(cfg, n, replication, Stream::Bootstrap)); },
            out.error);
    }
    return out;
}

std::vector<SummaryRow> summarize(const StudyConfig& cfg, const Vec& theta0,
                                  const std::vector<ReplicationOutcome>& outcomes, std::vector<CellStatus>* cells) {
    std::vector<SummaryRow> rows;
    const auto p = theta0.size();
    const std::string case_name(to_string(cfg.case_kind));
    for (int n : cfg.n_list) {
        for (const char* method : {"bayes", "bootstrap"}) {
            const bool is_bayes = std::string_view(method) == "bayes";
            if (is_bayes ? !cfg.bayes : !cfg.bootstrap_enabled) continue;
            std::vector<const MethodOutcome*> valid;
            int total = 0;
            for (const auto& o : outcomes) {
                if (o.n != n) continue;
                ++total;
                const auto& m = is_bayes ? o.bayes : o.bootstrap;
                if (m && m->valid && static_cast<Eigen::Index>(m->lower.size()) == p) valid.push_back(&*m);
            }
            const int R = static_cast<int>(valid.size());
            if (cells) {
                CellStatus cs{n, method, R, total - R, false};
                cs.failed = (total - R) > kMaxInvalidFraction * total;
                cells->push_back(cs);
            }
            for (Eigen::Index k = 0; k < p; ++k) {
                SummaryRow row{cfg.model, case_name, n, method, static_cast<int>(k + 1), 0, 0, 0, 0, R};
                if (R > 0) {
                    double hits = 0, sum = 0, sq = 0;
                    for (const auto* m : valid) {
                        const auto kk = static_cast<std::size_t>(k);
                        if (m->lower[kk] <= theta0[k] && theta0[k] <= m->upper[kk]) hits += 1;
                        const double len = m->upper[kk] - m->lower[kk];
                        sum += len;
                        sq += len * len;
                    }
                    row.coverage = hits / R;
                    row.coverage_se = std::sqrt(row.coverage * (1.0 - row.coverage) / R);
                    row.length = sum / R;
                    const double var = R > 1 ? std::max(0.0, (sq - R * row.length * row.length) / (R - 1)) : 0.0;
                    row.length_se = std::sqrt(var / R);
                }
                rows.push_back(row);
            }
        }
    }
    return rows;
}

namespace {

json outcome_json(const MethodOutcome& m) {
    return {{"valid", m.valid}, {"lower", m.lower}, {"upper", m.upper}, {"failures", m.failures}};
}

MethodOutcome outcome_from(const json& j) {
    MethodOutcome m;
    m.valid = j.at("valid").get<bool>();
    m.lower = j.at("lower").get<std::vector<double>>();
    m.upper = j.at("upper").get<std::vector<double>>();
    m.failures = j.at("failures").get<int>();
    return m;
}

std::string checkpoint_line(const std::string& hash, const ReplicationOutcome& o) {
    json j{{"hash", hash}, {"n", o.n}, {"rep", o.replication}, {"error", o.error}};
    if (o.bayes) j["bayes"] = outcome_json(*o.bayes);
    if (o.bootstrap) j["bootstrap"] = outcome_json(*o.bootstrap);
    return j.dump();
}

std::map<std::pair<int, int>, ReplicationOutcome> load_checkpoint(const std::string& path, const std::string& hash) {
    std::map<std::pair<int, int>, ReplicationOutcome> done;
    std::ifstream in(path);
    if (!in) return done;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            const auto j = json::parse(line);
            if (j.at("hash").get<std::string>() != hash) continue;
            ReplicationOutcome o;
            o.n = j.at("n").get<int>();
            o.replication = j.at("rep").get<int>();
            o.error = j.value("error", "");
            if (j.contains("bayes")) o.bayes = outcome_from(j["bayes"]);
            if (j.contains("bootstrap")) o.bootstrap = outcome_from(j["bootstrap"]);
            done[{o.n, o.replication}] = std::move(o);
        } catch (const json::exception&) {
            // A torn final line from an interrupted run.
            log::warn("checkpoint: skipping unreadable line in " + path);
        }
    }
    return done;
}

} // namespace

StudyResult run_study(const StudyConfig& cfg, const RunOptions& opts) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    const auto truth = resolve_truth(cfg);
    const auto hash = config_hash(cfg);

    std::vector<FitContext> contexts;
    for (int n : cfg.n_list) contexts.push_back(make_context(cfg, midpoint_design(n)));

    struct Task {
        std::size_t cell;
        int rep;
    };
    std::vector<Task> tasks;
    for (std::size_t c = 0; c < cfg.n_list.size(); ++c)
        for (int r = 0; r < cfg.replications; ++r) tasks.push_back({c, r});

    std::vector<std::optional<ReplicationOutcome>> results(tasks.size());
    StudyResult out;
    if (!opts.checkpoint.empty()) {
        auto done = load_checkpoint(opts.checkpoint, hash);
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            const auto it = done.find({cfg.n_list[tasks[i].cell], tasks[i].rep});
            if (it != done.end()) {
                results[i] = std::move(it->second);
                ++out.resumed;
            }
        }
    }

    std::ofstream ckpt;
    if (!opts.checkpoint.empty()) {
        ckpt.open(opts.checkpoint, std::ios::app);
        if (!ckpt) throw Error(ErrorCategory::Io, "cannot open checkpoint file " + opts.checkpoint);
    }

    std::mutex mu;
    std::atomic<std::size_t> next{0};
    std::atomic<int> finished{out.resumed};
    std::exception_ptr failure;
    const int total = static_cast<int>(tasks.size());
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            if (results[i]) continue;
            {
                std::lock_guard lock(mu);
                if (failure) return;
            }
            try {
                const int n = cfg.n_list[tasks[i].cell];
                auto o = run_replication(cfg, contexts[tasks[i].cell], truth, n, tasks[i].rep);
                std::lock_guard lock(mu);
                if (ckpt.is_open()) ckpt << checkpoint_line(hash, o) << '\n' << std::flush;
                results[i] = std::move(o);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
                return;
            }
            const int f = ++finished;
            if (opts.progress) {
                std::lock_guard lock(mu);
                opts.progress(f, total);
            }
        }
    };
    const int jobs = std::max(1, opts.jobs);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    std::vector<ReplicationOutcome> outcomes;
    outcomes.reserve(results.size());
    for (auto& r : results) outcomes.push_back(std::move(*r));
    out.rows = summarize(cfg, truth.theta0, outcomes, &out.cells);
    out.theta0 = truth.theta0;
    for (int n : cfg.n_list) out.k_n.push_back(cfg.k_n(n));
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    for (const auto& c : out.cells) {
        if (c.failed) {
            std::ostringstream os;
            os << "cell n=" << c.n << " method=" << c.method << " failed: " << c.invalid << " invalid replications";
            log::warn(os.str());
        }
    }
    return out;
}

void write_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
    os << "model,case,n,method,coord,coverage,coverage_se,length,length_se,R_valid\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%s,%d,%s,%d,%.6f,%.6f,%.6f,%.6f,%d\n", r.model.c_str(), r.case_name.c_str(),
                      r.n, r.method.c_str(), r.coord, r.coverage, r.coverage_se, r.length, r.length_se, r.r_valid);
        os << buf;
    }
}

std::string study_metadata_json(const StudyConfig& cfg, const StudyResult& result) {
    json j;
    j["library_version"] = kVersion;
    j["config"] = config_json(cfg);
    j["config_hash"] = config_hash(cfg);
    if (!cfg.input_canonical.empty()) j["config_input"] = json::parse(cfg.input_canonical);
    j["reduced_scale"] = cfg.reduced_scale();
    j["replications"] = cfg.replications;
    j["theta0"] = std::vector<double>(result.theta0.data(), result.theta0.data() + result.theta0.size());
    json kn = json::object();
    for (std::size_t i = 0; i < cfg.n_list.size(); ++i) kn[std::to_string(cfg.n_list[i])] = result.k_n[i];
    j["k_n"] = kn;
    j["quantile_rule"] = "type-1";
    json cells = json::array();
    for (const auto& c : result.cells)
        cells.push_back({{"n", c.n}, {"method", c.method}, {"valid", c.valid}, {"invalid", c.invalid},
                         {"failed", c.failed}});
    j["cells"] = cells;
    j["resumed"] = result.resumed;
    j["seconds"] = result.seconds;
    return j.dump(2);
}

BvmCheck bvm_replication(const StudyConfig& cfg, const StudyTruth& truth, int n, int replication) {
    const auto ctx = make_context(cfg, midpoint_design(n));
    const auto data = simulate_data(cfg, truth.f0, n, replication);
    const auto fit = linear_fit(ctx.X, data.Y);
    const auto ing = compute_ingredients(ctx.model, truth.f0, truth.theta0, default_weight(), ctx.basis, ctx.quad);
    double true_var = cfg.sigma0 * cfg.sigma0;
    if (cfg.error_law == ErrorLaw::StudentT && !cfg.standardize) true_var *= cfg.nu / (cfg.nu - 2.0);

    BvmCheck out;
    out.target = bvm_normal(ing, fit, true_var);
    const auto post = bayes_interval(ctx, data.Y, cfg, stream_seed(cfg, n, replication, Stream::Posterior));
    out.failures = post.failures;
    const double rn = std::sqrt(static_cast<double>(n));
    std::vector<Vec> scaled;
    scaled.reserve(post.theta.size());
    for (const auto& th : post.theta) scaled.push_back(rn * (th - truth.theta0));
    out.tv = tv_diagnostic(scaled, out.target);
    return out;
}

} // namespace odebayes
