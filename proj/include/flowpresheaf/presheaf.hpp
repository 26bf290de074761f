#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flowpresheaf/flow.hpp"

namespace flowpresheaf {

// S' x S x U in (t1, t0, x) space; flow admissible when S is inside S'.
struct Cube {
    Interval final_times;
    Interval initial_times;
    std::vector<Interval> space;

    std::size_t dim() const { return space.size(); }
    bool admissible() const;
    void validate() const;
    bool contains(double t1, double t0, const Vec& x, double slack = 0.0) const;
    bool contains(const std::vector<double>& point) const;
    bool contains(const Cube& other) const;
    std::optional<Cube> intersect(const Cube& other) const;
    std::vector<double> centre() const;
    std::vector<Interval> box() const;  // (t1, t0, x1..xn)
    bool operator==(const Cube& o) const;
};

// Subset of (t1, t0, x) space given by a membership test and a bounding box.
struct Region {
    std::vector<Interval> bounds;  // t1, t0, x1..xn
    std::function<bool(const std::vector<double>&)> contains;
    std::vector<Cube> cubes;  // non-empty when the region is a union of cubes

    std::size_t dim() const { return bounds.size() - 2; }

    static Region from_cubes(std::vector<Cube> cubes);
    // |(t1 - t0, t0 - tc, x - xc)| < radius: a ball in skewed time coordinates
    static Region skewed_ball(double tc, const Vec& xc, double radius);
    // plain Euclidean ball in (t1, t0, x)
    static Region ball(std::vector<double> centre, double radius);
};

struct AdmissibleResult {
    bool admissible = true;
    std::vector<double> witness;  // failing point
    std::vector<double> partner;  // p2 chosen for the last diagonal point checked
    std::string reason;
    std::size_t checked = 0;
};

AdmissibleResult admissible_check(const Region& W, std::size_t samples = 4000, std::uint64_t seed = 1);

struct CoverOptions {
    std::size_t resolution = 2;  // cells per (t0, x) axis
    double overlap = 0.25;       // fraction of a cell shared with each neighbour
    double snap = 0.0;           // round cube faces outward to multiples of this
    std::size_t verify_samples = 10000;
    std::uint64_t seed = 1;
};

std::vector<Cube> build_cover(const Region& W, const CoverOptions& opt = {});

// Boxes along the segment from an off-diagonal point to the diagonal, and the
// admissible cube T' x T x U with T' their union and T, U their intersections.
struct SegmentCover {
    std::vector<Cube> pieces;
    Cube merged;
};
SegmentCover segment_cover(const Region& W, const std::vector<double>& point, double piece_length);

using FlowFn = std::function<Vec(double t1, double t0, const Vec& x)>;

struct RecordSpacing {
    double time = 0.025;
    double space = 0.05;
};

// Flow values on a tensor grid over (t1, t0, x), multilinear in between.
class LocalFlowRecord {
public:
    LocalFlowRecord() = default;
    LocalFlowRecord(Cube cube, std::vector<std::vector<double>> axes, std::vector<double> values,
                    std::string provenance, double tol);

    static std::vector<std::vector<double>> grid_axes(const Cube& cube, const RecordSpacing& spacing);
    static LocalFlowRecord from_solver(const FlowSolver& solver, const Cube& cube, const std::vector<double>& p,
                                       const RecordSpacing& spacing, std::string provenance);
    static LocalFlowRecord from_function(const FlowFn& flow, const Cube& cube, const RecordSpacing& spacing,
                                         std::string provenance);

    const Cube& cube() const { return cube_; }
    const std::vector<std::vector<double>>& axes() const { return axes_; }
    const std::vector<double>& values() const { return values_; }
    const std::string& provenance() const { return provenance_; }
    double tol() const { return tol_; }
    std::size_t dim() const { return cube_.dim(); }
    std::size_t nodes() const;

    // Live flow behind the samples, if the record was computed here.
    const FlowFn& source() const { return source_; }
    void set_source(FlowFn f) { source_ = std::move(f); }

    Vec query(double t1, double t0, const Vec& x) const;
    // query plus an interpolation error bound from second differences of the grid data
    Vec query(double t1, double t0, const Vec& x, double& error) const;
    // all grid nodes as (t1, t0, x...) points
    std::vector<std::vector<double>> node_points() const;
    Vec node_value(std::size_t flat) const;

    // sub-record on a cube whose faces are grid nodes; GridIncompatible otherwise
    LocalFlowRecord restrict(const Cube& sub) const;

    // max |Phi(t2,t1,Phi(t1,t0,x)) - Phi(t2,t0,x)| over node triples; identity is exact on the diagonal
    double composition_residual(std::size_t max_triples = 2000, std::uint64_t seed = 1) const;

    bool operator==(const LocalFlowRecord& o) const;

private:
    Cube cube_;
    std::vector<std::vector<double>> axes_;  // t1, t0, x1..xn
    std::vector<double> values_;             // row-major over axes, then component
    std::string provenance_;
    double tol_ = 1e-6;
    FlowFn source_;
};

struct OverlapEntry {
    std::size_t i = 0, j = 0;
    std::optional<double> residual;  // empty for disjoint cubes
    std::size_t samples = 0;
};

std::optional<double> overlap_residual(const LocalFlowRecord& a, const LocalFlowRecord& b, const Patch& patch,
                                       double glue_tol = 1e-6, std::size_t* samples = nullptr);

class PresheafElement {
public:
    PresheafElement() = default;
    PresheafElement(std::vector<LocalFlowRecord> records, std::vector<OverlapEntry> table, double tol);

    const std::vector<LocalFlowRecord>& records() const { return records_; }
    const std::vector<OverlapEntry>& overlaps() const { return table_; }
    double tol() const { return tol_; }
    std::vector<Cube> cover() const;

    bool contains(double t1, double t0, const Vec& x) const;
    // routed to the containing record whose centre is nearest
    Vec query(double t1, double t0, const Vec& x) const;
    std::size_t route(double t1, double t0, const Vec& x) const;
    LocalFlowRecord restrict(const Cube& sub) const;

    std::string to_json() const;
    static PresheafElement from_json(const std::string& text);
    void save(const std::string& path) const;
    static PresheafElement load(const std::string& path);

private:
    std::vector<LocalFlowRecord> records_;
    std::vector<OverlapEntry> table_;
    double tol_ = 1e-6;
};

PresheafElement glue(std::vector<LocalFlowRecord> records, const Patch& patch, double tol = 1e-6);

struct AdmissibleCube {
    Cube cube;
    FieldPtr field;
};

// Componentwise flows of a field family; each cube must lie in its flow domain.
PresheafElement exp_map(const std::vector<AdmissibleCube>& family, const Patch& patch,
                        const std::vector<double>& p = {}, const RecordSpacing& spacing = {},
                        const FlowConfig& cfg = {}, double glue_tol = 1e-6);

// X(t, x) = d/dtau Phi(tau, t0, Phi(t0, t, x)) at tau = t, sampled on the record's (t1, x) grid.
GridField exp_inverse(const LocalFlowRecord& record, double h = 1e-4, double invert_tol = 1e-6);
GridField exp_inverse(const FlowFn& flow, const Cube& cube, const std::vector<std::vector<double>>& axes, double t0,
                      double h = 1e-4, double invert_tol = 1e-6);

enum class FlowOrder { Zero, One, Lip };

struct FlowSeminormResult {
    double value = 0.0;
    double sup_part = 0.0;
    double integral_part = 0.0;
};

// q = max(sup over (t1, t0) of p_K(f o Phi1 - f o Phi2), int over I' of sup over t0 of p_K(d/dt1 of it))
FlowSeminormResult flow_seminorm(const FlowFn& phi1, const FlowFn& phi2, const Expr& f, const Patch& patch,
                                 const CompactGrid& K, Interval initial, Interval final_times, FlowOrder order,
                                 std::size_t time_nodes = 41);

}  // namespace flowpresheaf
