#pragma once

#include "odebayes/asymptotics.hpp"
#include "odebayes/ode_model.hpp"
#include "odebayes/posterior.hpp"
#include "odebayes/quadrature.hpp"
#include "odebayes/spline_basis.hpp"
#include "odebayes/theta_map.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace odebayes {

enum class CaseKind { WellSpecified, Misspecified };
enum class ErrorLaw { Normal, StudentT, None };
enum class Sigma2Mode { Fixed, Plugin, Hierarchical };
enum class BootstrapScheme { Residual, Pairs, Model };
enum class KnotsRule { Fixed, Power };

std::string_view to_string(CaseKind c);
std::string_view to_string(ErrorLaw e);
std::string_view to_string(Sigma2Mode s);
std::string_view to_string(BootstrapScheme b);

inline constexpr int kSchemaVersion = 1;
/// Replication count used in the paper's tables; fewer is a reduced-scale run.
inline constexpr int kPaperReplications = 1000;

struct StudyConfig {
    int schema_version = kSchemaVersion;
    std::string model = "example1";
    CaseKind case_kind = CaseKind::WellSpecified;
    std::optional<Vec> theta0; // well-specified truth; defaults to all ones

    ErrorLaw error_law = ErrorLaw::Normal;
    double sigma0 = 1.0;
    double nu = 6.0;
    bool standardize = false; // rescale t errors to unit variance

    std::vector<int> n_list{50, 100, 200, 500, 1000};
    int replications = 200;
    int draws = 500;
    int bootstrap = 200;
    BootstrapScheme bootstrap_scheme = BootstrapScheme::Residual;
    bool bootstrap_rescale = false; // residuals times sqrt(n/(n-K))
    bool bayes = true;
    bool bootstrap_enabled = true;

    int order_m = 5;
    KnotsRule knots_rule = KnotsRule::Power;
    int knots_fixed = 0;
    double knots_c = 3.0;
    double knots_exponent = 1.0 / 9.0;

    Sigma2Mode sigma2_mode = Sigma2Mode::Hierarchical;
    double sigma2_fixed = 1.0;
    double prior_a = 1.0;
    double prior_b = 1.0;

    double level = 0.95;
    std::uint64_t seed = 20240601;
    int quadrature_order = 10;
    PsiConfig psi;

    /// Canonical form of the JSON this config was parsed from (empty if built
    /// in code). Echoed in run metadata; not part of the config hash.
    std::string input_canonical;

    int k_n(int n) const;
    void validate() const;
    bool reduced_scale() const noexcept { return replications < kPaperReplications; }
};

/// Parses the JSON config text; unknown keys and bad values are errors.
StudyConfig parse_study_config(const std::string& json_text);
/// Canonical JSON (sorted keys, every field explicit).
std::string canonical_json(const StudyConfig& cfg);
/// FNV-1a 64 of the canonical JSON, as 16 hex digits.
std::string config_hash(const StudyConfig& cfg);

/// The true mean f0 and the target theta0 = psi(f0).
struct StudyTruth {
    TrueFunction f0;
    Vec theta0;
};

StudyTruth resolve_truth(const StudyConfig& cfg);

struct Dataset {
    std::vector<double> x;
    Mat Y; // n x d
};

/// x_i = (2i-1)/(2n), Y = f0(x) + errors from the (seed, n, replication) stream.
Dataset simulate_data(const StudyConfig& cfg, const TrueFunction& f0, int n, int replication);
Dataset simulate_data(const StudyConfig& cfg, int n, int replication);

/// Per-n objects shared by all replications with the same design.
struct FitContext {
    OdeModel model;
    KnotVector basis;
    DesignMatrix X;
    QuadratureRule quad;
    BasisAtNodes basis_nodes;
    WeightedNodes nodes;
};

FitContext make_context(const StudyConfig& cfg, std::vector<double> x);

/// Type-1 empirical quantile: the ceil(N p)-th order statistic.
double quantile_type1(std::vector<double> values, double p);
/// Equal-tailed intervals per coordinate (p x 2: lower, upper).
Mat percentile_intervals(const std::vector<Vec>& draws, double level);

struct IntervalResult {
    std::vector<Vec> theta; // accepted draws or bootstrap estimates
    Mat intervals;          // p x 2
    int failures = 0;
    int attempted = 0;
    bool valid = false;     // at most 5% failures
    std::optional<Sigma2Posterior> sigma2;
};

inline constexpr double kMaxFailureFraction = 0.05;
inline constexpr double kMaxInvalidFraction = 0.10;

IntervalResult bayes_interval(const FitContext& ctx, const Mat& Y, const StudyConfig& cfg, std::uint64_t seed);
IntervalResult bayes_interval(const std::vector<double>& x, const Mat& Y, const StudyConfig& cfg,
                              std::uint64_t seed);

/// theta_hat = psi of the least-squares spline.
PsiResult frequentist_two_step(const FitContext& ctx, const Mat& Y, const StudyConfig& cfg);
PsiResult frequentist_two_step(const std::vector<double>& x, const Mat& Y, const StudyConfig& cfg);

IntervalResult bootstrap_interval(const FitContext& ctx, const Mat& Y, const StudyConfig& cfg, std::uint64_t seed);
IntervalResult bootstrap_interval(const std::vector<double>& x, const Mat& Y, const StudyConfig& cfg,
                                  std::uint64_t seed);

/// Seeds of the independent streams inside one replication.
enum class Stream : std::uint64_t { Data = 0, Posterior = 1, Bootstrap = 2 };
std::uint64_t stream_seed(const StudyConfig& cfg, int n, int replication, Stream s);

/// Outcome of one method in one replication.
struct MethodOutcome {
    bool valid = false;
    std::vector<double> lower;
    std::vector<double> upper;
    int failures = 0;
};

struct ReplicationOutcome {
    int n = 0;
    int replication = 0;
    std::optional<MethodOutcome> bayes;
    std::optional<MethodOutcome> bootstrap;
    std::string error; // set when the replication raised
};

ReplicationOutcome run_replication(const StudyConfig& cfg, const FitContext& ctx, const StudyTruth& truth, int n,
                                   int replication);

struct SummaryRow {
    std::string model;
    std::string case_name;
    int n = 0;
    std::string method;
    int coord = 0; // 1-based
    double coverage = 0;
    double coverage_se = 0;
    double length = 0;
    double length_se = 0;
    int r_valid = 0;
};

struct CellStatus {
    int n = 0;
    std::string method;
    int valid = 0;
    int invalid = 0;
    bool failed = false; // more than 10% invalid
};

struct StudyResult {
    std::vector<SummaryRow> rows;
    std::vector<CellStatus> cells;
    Vec theta0;
    std::vector<int> k_n;
    double seconds = 0;
    int resumed = 0; // replications read back from the checkpoint
};

struct RunOptions {
    int jobs = 1;
    std::string checkpoint; // JSONL path; empty disables checkpointing
    std::function<void(int done, int total)> progress;
};

StudyResult run_study(const StudyConfig& cfg, const RunOptions& opts = {});

/// Aggregates outcomes into rows; exposed for testing.
std::vector<SummaryRow> summarize(const StudyConfig& cfg, const Vec& theta0,
                                  const std::vector<ReplicationOutcome>& outcomes, std::vector<CellStatus>* cells);

void write_csv(std::ostream& os, const std::vector<SummaryRow>& rows);
std::string study_metadata_json(const StudyConfig& cfg, const StudyResult& result);

/// Posterior draws of sqrt(n)(theta - theta0) against the Theorem 2 normal law
/// for one simulated replication, using the config's sigma2 mode for the draws.
struct BvmCheck {
    AsymptoticNormal target;
    TvDiagnostic tv;
    int failures = 0;
};

BvmCheck bvm_replication(const StudyConfig& cfg, const StudyTruth& truth, int n, int replication);

} // namespace odebayes
