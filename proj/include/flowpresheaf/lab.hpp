#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "flowpresheaf/presheaf.hpp"
#include "flowpresheaf/seminorm.hpp"
#include "json.hpp"

namespace flowpresheaf {

using json = nlohmann::json;

inline constexpr const char* kScenarioSchema = "flowpresheaf.scenario/1";
inline constexpr const char* kReportSchema = "flowpresheaf.report/1";

// Runs fn(0) .. fn(count - 1) on up to `workers` threads; first exception is rethrown.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn);

// Flow that memoizes one trajectory per (t0, x), each covering `span`.
FlowFn cached_flow(const FlowSolver& solver, std::vector<double> p, Interval span);

// ---- shared experiment computations ------------------------------------

struct SweepPoint {
    double p = 0.0;
    double dp = 0.0;         // |p - p0|
    double q0 = 0.0;         // C^0 flow distance
    double qlip = 0.0;       // C^lip flow distance
    double bound = 0.0;      // (e^{|p|T} - 1) |p - p0| sup_K |x|
    double corrected = 0.0;  // (e^{|p|T} - 1) / |p| |p - p0| sup |x| over the flowed set
};

// Flow distances between X(., ., p) and X(., ., p0) for each p; parameter `index` varies.
std::vector<SweepPoint> param_sweep(const ExprField& X, const Patch& patch, const std::vector<double>& p0,
                                    std::size_t index, const std::vector<double>& ps, Interval initial,
                                    Interval final_times, const CompactGrid& K, const Expr& f,
                                    const FlowConfig& cfg = {}, std::size_t workers = 1);

struct PerturbationPoint {
    double eps = 0.0;
    double q = 0.0;       // q0 distance between the flows of X + eps Y and X
    double field = 0.0;   // p0 over K' and I' of eps Y
    double ratio = 0.0;   // q / (G field)
};

struct PerturbationSweep {
    double L = 0.0;  // measured Lipschitz constant of X on K' x I'
    double G = 1.0;  // e^{L |I'|}
    std::vector<Interval> enlarged;  // K'
    std::vector<PerturbationPoint> points;
};

PerturbationSweep exp_check(const ExprField& X, const ExprField& Y, const Patch& patch,
                            const std::vector<double>& eps, Interval initial, Interval final_times,
                            const CompactGrid& K, double margin = 0.1, const FlowConfig& cfg = {},
                            std::size_t workers = 1);

struct RoundTrip {
    double field_error = 0.0;  // p0 over K and S' of exp_inverse(exp X) - X
    double flow_error = 0.0;   // q0 of the reconstructed flow against the original
};

RoundTrip inverse_check(const ExprField& X, const Patch& patch, const Cube& cube, const CompactGrid& K,
                        const RecordSpacing& spacing = {}, const FlowConfig& cfg = {}, double h = 1e-4);

// ---- scenarios -----------------------------------------------------------

struct FlowExperiment {
    std::string field;
    std::vector<double> params;
    double t0 = 0.0, t1 = 1.0;
    std::vector<Vec> points;
    std::size_t oracle_steps = 2000;
    double tol = 1e-5;
    std::size_t tuples = 20;
    double group_tol = 1e-6;
};

struct SeminormExperiment {
    std::string field;
    RegularityClass cls;
    CompactGrid K;
    double t = 0.0;
    std::vector<double> params;
    std::optional<double> expected;
    double tol = 1e-4;
};

struct DilExperiment {
    std::string field;
    std::vector<Vec> points;
    double t = 0.0;
    int m = 0;
    std::vector<double> params;
    std::vector<double> expected;  // empty, or one per point
    double tol = 1e-3;
};

struct CoverExperiment {
    Region region;
    CoverOptions options;
    bool expect_admissible = true;
};

struct GlueExperiment {
    std::vector<std::pair<Cube, std::string>> cubes;
    RecordSpacing spacing;
    std::vector<double> params;
    double tol = 1e-6;
    bool expect_violation = false;
    std::optional<double> gap;
    double gap_tol = 0.05;
};

struct SweepExperiment {
    std::string field;
    std::vector<double> p0;
    std::size_t index = 0;
    std::vector<double> ps;
    Interval initial{0, 0}, final_times{0, 0.5};
    CompactGrid K;
    Expr f;
    bool corrected_bound = false;
    double slack = 0.2;
};

struct ExpCheckExperiment {
    std::string field, perturbation;
    std::vector<double> eps;
    Interval initial{0, 0}, final_times{0, 0.5};
    CompactGrid K;
    double margin = 0.1;
    double slack = 0.2;
};

struct InverseExperiment {
    std::vector<std::string> fields;
    Cube cube;
    CompactGrid K;
    RecordSpacing spacing;
    double h = 1e-4;
    double field_tol = 1e-3;
    double flow_tol = 1e-5;
};

struct MetricExperiment {
    std::vector<std::string> g1, g2;
    CompactGrid K;
    std::size_t pairs = 200;
    std::optional<Interval> range;
};

using ExperimentSpec = std::variant<FlowExperiment, SeminormExperiment, DilExperiment, CoverExperiment,
                                    GlueExperiment, SweepExperiment, ExpCheckExperiment, InverseExperiment,
                                    MetricExperiment>;

struct Experiment {
    std::size_t index = 0;
    std::string kind;
    std::string name;
    ExperimentSpec spec;
};

struct Scenario {
    json doc;
    std::uint64_t seed = 1;
    std::optional<Patch> patch;
    std::vector<std::string> metric;  // as given, for metric-equiv
    std::map<std::string, ExprField> fields;
    FlowConfig flow;
    std::vector<Experiment> experiments;
};

// Validates against the schema; ConfigError carries a JSON path such as experiments[2].field.
Scenario parse_scenario(const json& doc);
Scenario load_scenario(const std::string& path);  // IoError, ConfigError
// FLOWPRESHEAF_SEED, when set, replaces the scenario seed; ConfigError unless an unsigned integer.
void apply_seed_override(Scenario& scenario);

// A checked row passes when measured <= threshold; unchecked rows are informational.
struct Check {
    double measured = 0.0;
    double threshold = 0.0;
    bool pass() const { return measured <= threshold; }
};

struct Row {
    std::string invariant;
    std::vector<double> values;
    std::optional<Check> check;
};

struct Table {
    std::string name;
    std::vector<std::string> columns;
    std::vector<Row> rows;
    bool pass() const;
};

struct ExperimentReport {
    std::size_t index = 0;
    std::string kind, name;
    std::vector<Table> tables;
    std::optional<std::string> error;
    std::vector<std::string> plot_columns;  // two-column sweep output when non-empty
    std::vector<std::pair<double, double>> plot;
    double seconds = 0.0;
    bool pass() const;
};

struct Report {
    json scenario;
    std::uint64_t seed = 1;
    std::vector<ExperimentReport> experiments;
    bool pass() const;
};

struct RunOptions {
    std::size_t workers = 1;
};

Report run_scenario(const Scenario& scenario, const RunOptions& opt = {});
ExperimentReport run_experiment(const Scenario& scenario, const Experiment& e, std::size_t workers = 1);

json report_json(const Report& report);  // timings excluded
json timings_json(const Report& report);

enum class Format { Json, Csv };
std::vector<Format> parse_formats(const std::string& spec);  // "json,csv"; UnknownFormat

std::string table_csv(const Table& table);
// Writes report.json, timings.json and e{index}_{kind}_{table}.csv files; returns written paths.
std::vector<std::string> emit_report(const Report& report, const std::string& dir, const std::vector<Format>& formats);

}  // namespace flowpresheaf
