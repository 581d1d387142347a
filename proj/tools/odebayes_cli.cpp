// odebayes command-line front end: fit, simulate, asymptotics.

#include "odebayes/asymptotics.hpp"
#include "odebayes/data_io.hpp"
#include "odebayes/error.hpp"
#include "odebayes/experiments.hpp"
#include "odebayes/log.hpp"
#include "odebayes/version.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

using json = nlohmann::ordered_json;
using namespace odebayes;

namespace {

int exit_code(ErrorCategory c) {
    switch (c) {
    case ErrorCategory::InvalidArgument: return 3;
    case ErrorCategory::Domain: return 4;
    case ErrorCategory::Numeric: return 5;
    case ErrorCategory::IllPosedDesign: return 6;
    case ErrorCategory::OptimizationFailure: return 7;
    case ErrorCategory::DegenerateModel: return 8;
    case ErrorCategory::Parse: return 9;
    case ErrorCategory::Io: return 10;
    }
    return 1;
}

void report_error(std::string_view category, const std::string& message) {
    json j{{"error", {{"category", category}, {"message", message}}}};
    std::cerr << j.dump() << '\n';
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCategory::Io, "cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

json to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json to_json(const Mat& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(to_json(Vec(m.row(i).transpose())));
    return rows;
}

void emit(const std::string& out, const std::string& text) {
    if (out.empty() || out == "-") {
        std::cout << text;
        return;
    }
    std::ofstream f(out);
    if (!f) throw Error(ErrorCategory::Io, "cannot write " + out);
    f << text;
    if (!f) throw Error(ErrorCategory::Io, "error writing " + out);
}

struct Common {
    std::string config;
    std::string data;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> replications;
    std::optional<int> draws;
    std::optional<int> bootstrap;
    int jobs = 1;
};

StudyConfig load_config(const Common& c) {
    auto cfg = parse_study_config(read_text(c.config));
    if (c.seed) cfg.seed = *c.seed;
    if (c.replications) cfg.replications = *c.replications;
    if (c.draws) cfg.draws = *c.draws;
    if (c.bootstrap) cfg.bootstrap = *c.bootstrap;
    cfg.validate();
    return cfg;
}

/// Provenance block attached to every output.
json manifest(const Common& c, const StudyConfig& cfg, const std::string& started, const json& outputs) {
    json inputs{{"config", c.config}};
    if (!c.data.empty()) inputs["data"] = c.data;
    return {{"config_hash", config_hash(cfg)}, {"inputs", inputs},  {"outputs", outputs},
            {"seed", cfg.seed},                {"started", started}, {"finished", utc_now()},
            {"library_version", kVersion}};
}

json psi_json(const PsiResult& r) {
    json starts = json::array();
    for (const auto& s : r.diagnostics.starts)
        starts.push_back({{"start", to_json(s.start)},
                          {"end", to_json(s.end)},
                          {"objective", s.objective},
                          {"iterations", s.iterations},
                          {"converged", s.converged},
                          {"failed", s.failed}});
    return {{"theta", to_json(r.theta)},
            {"defect", r.value},
            {"interior", r.diagnostics.interior},
            {"best_start", r.diagnostics.best_start},
            {"gradient", to_json(r.diagnostics.gradient)},
            {"starts", starts}};
}

json interval_json(const IntervalResult& r, bool with_draws) {
    json j{{"valid", r.valid}, {"attempted", r.attempted}, {"failures", r.failures}};
    if (r.intervals.size() > 0) j["intervals"] = to_json(r.intervals);
    if (r.sigma2) {
        json s{{"shape", r.sigma2->shape}, {"rate", r.sigma2->rate}};
        if (r.sigma2->shape > 1) s["mean"] = r.sigma2->mean();
        if (r.sigma2->shape > 2) s["sd"] = std::sqrt(r.sigma2->variance());
        j["sigma2_posterior"] = s;
    }
    if (with_draws) {
        json d = json::array();
        for (const auto& t : r.theta) d.push_back(to_json(t));
        j["draws"] = d;
    }
    return j;
}

Dataset load_data(const std::string& path) {
    if (path.empty()) throw Error(ErrorCategory::InvalidArgument, "--data is required");
    return read_dataset_file(path);
}

int cmd_fit(const Common& c, bool include_draws) {
    const auto started = utc_now();
    const auto cfg = load_config(c);
    const auto data = load_data(c.data);
    const int n = static_cast<int>(data.x.size());
    const auto ctx = make_context(cfg, data.x);
    if (data.Y.cols() != ctx.model.state_dim) {
        std::ostringstream os;
        os << "data has " << data.Y.cols() << " response columns but model '" << cfg.model << "' has dimension "
           << ctx.model.state_dim;
        throw_invalid(os.str());
    }

    json report;
    report["model"] = cfg.model;
    report["n"] = n;
    report["d"] = data.Y.cols();
    report["k_n"] = ctx.basis.segments();
    report["order_m"] = cfg.order_m;
    report["level"] = cfg.level;
    report["two_step"] = psi_json(frequentist_two_step(ctx, data.Y, cfg));
    if (cfg.bayes) {
        auto b = interval_json(bayes_interval(ctx, data.Y, cfg, stream_seed(cfg, n, 0, Stream::Posterior)),
                               include_draws);
        b["sigma2_mode"] = to_string(cfg.sigma2_mode);
        report["bayes"] = b;
    }
    if (cfg.bootstrap_enabled) {
        auto b = interval_json(bootstrap_interval(ctx, data.Y, cfg, stream_seed(cfg, n, 0, Stream::Bootstrap)),
                               include_draws);
        b["scheme"] = to_string(cfg.bootstrap_scheme);
        report["bootstrap"] = b;
    }
    report["manifest"] = manifest(c, cfg, started, {{"report", c.out.empty() ? "-" : c.out}});
    emit(c.out, report.dump(2) + "\n");
    return 0;
}

struct SimulateOptions {
    std::string meta;
    std::string checkpoint;
    std::string data_out;
    std::optional<int> data_n;
    int data_rep = 0;
    bool progress = false;
};

int cmd_simulate(const Common& c, const SimulateOptions& o) {
    const auto started = utc_now();
    const auto cfg = load_config(c);

    if (!o.data_out.empty()) {
        const int n = o.data_n.value_or(cfg.n_list.front());
        write_dataset_file(o.data_out, simulate_data(cfg, n, o.data_rep));
        json m{{"dataset", {{"n", n}, {"replication", o.data_rep}}},
               {"manifest", manifest(c, cfg, started, {{"data", o.data_out}})}};
        std::cerr << m.dump() << '\n';
        return 0;
    }

    RunOptions ro;
    ro.jobs = c.jobs;
    ro.checkpoint = o.checkpoint;
    if (o.progress)
        ro.progress = [](int done, int total) {
            if (done == total || done % 50 == 0) std::cerr << "progress " << done << "/" << total << '\n';
        };
    const auto result = run_study(cfg, ro);
    std::ostringstream csv;
    write_csv(csv, result.rows);
    emit(c.out, csv.str());

    std::string meta_path = o.meta;
    if (meta_path.empty() && !c.out.empty() && c.out != "-") meta_path = c.out + ".meta.json";
    if (!meta_path.empty()) {
        auto meta = json::parse(study_metadata_json(cfg, result));
        json outputs{{"csv", c.out.empty() ? "-" : c.out}, {"metadata", meta_path}};
        if (!o.checkpoint.empty()) outputs["checkpoint"] = o.checkpoint;
        meta["manifest"] = manifest(c, cfg, started, outputs);
        emit(meta_path, meta.dump(2) + "\n");
    }
    int failed = 0;
    for (const auto& cell : result.cells) failed += cell.failed ? 1 : 0;
    return failed > 0 ? 11 : 0;
}

struct AsymptoticsOptions {
    std::optional<int> n;
    int rep = 0;
    bool known_truth = false;
};

TrueFunction spline_truth(SplineFunction s) {
    auto shared = std::make_shared<SplineFunction>(std::move(s));
    return {"ols_spline", shared->dim(), [shared](double t) { return shared->value(t); },
            [shared](double t) { return shared->derivative(t); }};
}

int cmd_asymptotics(const Common& c, const AsymptoticsOptions& o) {
    const auto started = utc_now();
    const auto cfg = load_config(c);
    json warnings = json::array();

    Dataset data;
    bool estimated = false;
    StudyTruth truth;
    if (c.data.empty()) {
        truth = resolve_truth(cfg);
        data = simulate_data(cfg, truth.f0, o.n.value_or(cfg.n_list.back()), o.rep);
    } else {
        data = load_data(c.data);
        if (o.known_truth) {
            truth = resolve_truth(cfg);
        } else {
            estimated = true;
        }
    }
    const int n = static_cast<int>(data.x.size());
    const auto ctx = make_context(cfg, data.x);
    if (data.Y.cols() != ctx.model.state_dim) throw_invalid("data dimension does not match the model");
    const auto fit = linear_fit(ctx.X, data.Y);
    if (estimated) {
        truth.f0 = spline_truth(SplineFunction(ctx.basis, fit.ols));
        truth.theta0 = frequentist_two_step(ctx, data.Y, cfg).theta;
        warnings.push_back("theta0 and f0 are estimated from the data (two-step estimate and least-squares spline)");
    }

    if (cfg.order_m < 5) {
        std::ostringstream os;
        os << "spline order m=" << cfg.order_m << " is below 5; the rate conditions for the normal approximation need m >= 5";
        warnings.push_back(os.str());
    }
    const int k = ctx.basis.segments();
    const double lo = std::pow(static_cast<double>(n), 1.0 / (2.0 * cfg.order_m));
    const double hi = std::pow(static_cast<double>(n), 1.0 / 8.0);
    if (k <= lo) {
        std::ostringstream os;
        os << "k_n=" << k << " does not exceed n^(1/(2m))=" << lo << "; the spline bias may dominate";
        warnings.push_back(os.str());
    }
    for (const auto& w : warnings) log::warn(w.get<std::string>());

    const auto ing = compute_ingredients(ctx.model, truth.f0, truth.theta0, default_weight(), ctx.basis, ctx.quad);

    double sigma2 = 0;
    std::string sigma2_source;
    if (!estimated && cfg.error_law != ErrorLaw::None) {
        sigma2 = cfg.sigma0 * cfg.sigma0;
        if (cfg.error_law == ErrorLaw::StudentT && !cfg.standardize) sigma2 *= cfg.nu / (cfg.nu - 2.0);
        sigma2_source = "config";
    } else {
        sigma2 = sigma2_posterior(ctx.X, fit, data.Y, cfg.prior_a, cfg.prior_b).mean();
        sigma2_source = "posterior_mean";
    }
    const auto normal = bvm_normal(ing, fit, sigma2);
    const Mat sigma_n = normal.covariance / sigma2;
    const Eigen::SelfAdjointEigenSolver<Mat> es(sigma_n);

    json report;
    report["model"] = cfg.model;
    report["n"] = n;
    report["k_n"] = k;
    report["order_m"] = cfg.order_m;
    report["rate_window"] = {{"lower", lo}, {"upper", hi}};
    report["estimated_theta0"] = estimated;
    report["theta0"] = to_json(truth.theta0);
    report["J"] = to_json(ing.J);
    report["s_norm"] = ing.s_norm;
    report["gamma_f0"] = to_json(ing.gamma_f0);
    report["b_min_eigenvalues"] = to_json(ing.b_min_eigen);
    report["sigma2"] = {{"value", sigma2}, {"source", sigma2_source}};
    report["mu_n"] = to_json(normal.mean);
    report["Sigma_n"] = to_json(sigma_n);
    report["Sigma_n_min_eigenvalue"] = es.eigenvalues().minCoeff();
    report["Sigma_n_spd"] = es.eigenvalues().minCoeff() > 0.0;

    if (cfg.draws >= kTvMinDraws) {
        const auto post = bayes_interval(ctx, data.Y, cfg, stream_seed(cfg, n, o.rep, Stream::Posterior));
        const double rn = std::sqrt(static_cast<double>(n));
        std::vector<Vec> scaled;
        for (const auto& th : post.theta) scaled.push_back(rn * (th - truth.theta0));
        const auto tv = tv_diagnostic(scaled, normal);
        report["tv"] = {{"value", tv.value}, {"method", tv.method}, {"bins", tv.bins},
                        {"draws", scaled.size()}, {"failures", post.failures}};
    } else {
        std::ostringstream os;
        os << "TV diagnostic skipped: needs at least " << kTvMinDraws << " posterior draws";
        warnings.push_back(os.str());
        log::warn(os.str());
    }
    report["warnings"] = warnings;
    report["manifest"] = manifest(c, cfg, started, {{"report", c.out.empty() ? "-" : c.out}});
    emit(c.out, report.dump(2) + "\n");
    return 0;
}

void add_common(CLI::App* sub, Common& c, bool needs_data, bool study_flags) {
    sub->add_option("--config", c.config, "study/model configuration (JSON)")->required()->check(CLI::ExistingFile);
    auto* data = sub->add_option("--data", c.data, "data file: header t,y1..yd then comma-separated rows");
    if (needs_data) data->required();
    sub->add_option("--out", c.out, "output path ('-' or empty for stdout)");
    sub->add_option("--seed", c.seed, "override the master seed");
    sub->add_option("--draws", c.draws, "posterior draws")->check(CLI::PositiveNumber);
    sub->add_option("--bootstrap", c.bootstrap, "bootstrap resamples")->check(CLI::PositiveNumber);
    if (study_flags) {
        sub->add_option("--replications", c.replications, "replications per sample size")->check(CLI::PositiveNumber);
        sub->add_option("--jobs", c.jobs, "worker threads")->check(CLI::PositiveNumber);
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian two-step estimation for ODE models"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);
    std::string level = "warn";
    app.add_option("--log-level", level, "debug, info, warn, error or off")
        ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));

    Common fit_c, sim_c, asy_c;
    bool fit_draws = true;
    auto* fit = app.add_subcommand("fit", "credible and bootstrap intervals for one dataset");
    add_common(fit, fit_c, true, false);
    fit->add_flag("!--no-draws", fit_draws, "omit theta draws from the report");

    SimulateOptions sim_o;
    auto* sim = app.add_subcommand("simulate", "Monte-Carlo coverage study; writes the summary CSV");
    add_common(sim, sim_c, false, true);
    sim->add_option("--meta", sim_o.meta, "metadata JSON path (default: <out>.meta.json)");
    sim->add_option("--checkpoint", sim_o.checkpoint, "JSONL checkpoint; completed replications are reused");
    sim->add_option("--data-out", sim_o.data_out, "write one simulated dataset instead of running the study");
    sim->add_option("--data-n", sim_o.data_n, "sample size for --data-out (default: first n)");
    sim->add_option("--data-rep", sim_o.data_rep, "replication index for --data-out");
    sim->add_flag("--progress", sim_o.progress, "report progress on stderr");

    AsymptoticsOptions asy_o;
    auto* asy = app.add_subcommand("asymptotics", "normal-approximation ingredients and TV diagnostic");
    add_common(asy, asy_c, false, false);
    asy->add_option("--n", asy_o.n, "sample size when simulating (default: last n)");
    asy->add_option("--rep", asy_o.rep, "replication index when simulating");
    asy->add_flag("--known-truth", asy_o.known_truth, "with --data: take f0 and theta0 from the config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() != 0) report_error("usage", e.what());
        return app.exit(e);
    }

    const std::map<std::string, log::Level> levels{{"debug", log::Level::Debug},
                                                   {"info", log::Level::Info},
                                                   {"warn", log::Level::Warn},
                                                   {"error", log::Level::Error},
                                                   {"off", log::Level::Off}};
    log::set_level(levels.at(level));

    try {
        if (*fit) return cmd_fit(fit_c, fit_draws);
        if (*sim) return cmd_simulate(sim_c, sim_o);
        if (*asy) return cmd_asymptotics(asy_c, asy_o);
    } catch (const Error& e) {
        report_error(to_string(e.category()), e.what());
        return exit_code(e.category());
    } catch (const std::exception& e) {
        report_error("internal", e.what());
        return 1;
    }
    return 1;
}
