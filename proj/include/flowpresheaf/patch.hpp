#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flowpresheaf/expr.hpp"

namespace flowpresheaf {

struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    double width() const { return hi - lo; }
    double mid() const { return 0.5 * (lo + hi); }
    bool contains(double v, double margin = 0.0) const { return v >= lo + margin && v <= hi - margin; }
    bool contains(const Interval& o) const { return o.lo >= lo && o.hi <= hi; }
    friend bool operator==(const Interval&, const Interval&) = default;
};

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Christoffel symbols flattened as gamma[(k * n + i) * n + j] = Gamma^k_{ij}.
using Christoffel = std::vector<double>;

class Patch {
public:
    Patch(std::vector<Interval> bounds, std::vector<std::vector<Expr>> metric,
          std::optional<std::vector<Expr>> christoffel = std::nullopt);

    static Patch euclidean(std::vector<Interval> bounds);
    // Metric given as n*n strings in x1..xn (row major); optional n^3 Christoffel strings.
    static Patch from_strings(std::vector<Interval> bounds, const std::vector<std::string>& metric,
                              const std::vector<std::string>& christoffel = {});

    std::size_t dim() const { return bounds_.size(); }
    const std::vector<Interval>& bounds() const { return bounds_; }
    const std::vector<std::vector<Expr>>& metric_exprs() const { return metric_; }
    bool has_christoffel_override() const { return christoffel_.has_value(); }

    bool contains(const Vec& x, double margin = 0.0) const;
    bool constant_metric() const { return constant_metric_; }
    // True when every Christoffel symbol vanishes identically.
    bool flat_connection() const { return flat_; }

    Mat metric(const Vec& x) const;
    // Metric at x; throws SingularMetric unless SPD.
    Mat metric_checked(const Vec& x) const;
    // Row-major n*n jets of g in the coordinates.
    std::vector<Jet> metric_jets(const Vec& x, int order) const;

    Christoffel christoffel(const Vec& x) const;
    std::vector<Jet> christoffel_jets(const Vec& x, int order) const;

    Patch with_metric(std::vector<std::vector<Expr>> metric) const;

private:
    std::vector<Interval> bounds_;
    std::vector<std::vector<Expr>> metric_;
    std::optional<std::vector<Expr>> christoffel_;
    bool constant_metric_ = false;
    bool flat_ = false;
};

// Levi-Civita symbols from metric jets of order >= 1 (returned jets have order - 1).
std::vector<Jet> levi_civita_jets(const std::vector<Jet>& g, std::size_t n);
Christoffel levi_civita_christoffels(const Patch& patch, const Vec& x);

// Minimum eigenvalue test shared by everything that needs an SPD metric.
void require_spd(const Mat& g, const char* where);

struct CompactGrid {
    std::vector<Vec> points;
    std::vector<std::size_t> shape;  // empty for scattered point sets
    std::vector<Interval> box;
    double spacing = 0.0;

    static CompactGrid tensor(const std::vector<Interval>& box, const std::vector<std::size_t>& counts);
    static CompactGrid scattered(std::vector<Vec> points, double spacing);
    void validate(const Patch& patch) const;
    std::size_t size() const { return points.size(); }
};

struct GeodesicOptions {
    double tol = 1e-8;
    std::size_t initial_segments = 8;
    std::size_t max_segments = 512;
    std::size_t max_iter = 2000;
};

struct GeodesicResult {
    double length = 0.0;
    double error_estimate = 0.0;
    std::size_t segments = 0;
    std::vector<Vec> path;
};

GeodesicResult geodesic(const Patch& patch, const Vec& x1, const Vec& x2, const GeodesicOptions& opt = {});
double geodesic_distance(const Patch& patch, const Vec& x1, const Vec& x2, double tol = 1e-8);

struct TransportOptions {
    double tol = 1e-10;
    std::size_t max_substeps = 256;
};

Vec parallel_transport(const Patch& patch, const std::vector<Vec>& curve, const Vec& v,
                       const TransportOptions& opt = {});

struct EquivalenceResult {
    double c = 1.0;              // sampled constant
    double eigen_bound = 1.0;    // sqrt of max{lambda_max, 1/lambda_min} of g1^-1 g2 over K
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<double> d1, d2;
};

EquivalenceResult metric_equivalence_constant(const Patch& g1, const Patch& g2, const CompactGrid& K,
                                              std::size_t pair_budget, std::uint64_t seed = 1,
                                              double tol = 1e-8);

// Pointwise bound on quadratic forms: smallest c with c^-1 q1 <= q2 <= c q1.
double quadratic_form_constant(const Mat& g1, const Mat& g2);

}  // namespace flowpresheaf
