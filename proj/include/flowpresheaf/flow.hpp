#pragma once

#include <vector>

#include "flowpresheaf/field.hpp"

namespace flowpresheaf {

struct FlowConfig {
    double r = 0.5;               // Picard iterates stay within r/2 of x0 in every coordinate
    double lambda_target = 0.5;
    double alpha_max = 0.5;
    std::size_t nodes = 64;       // trapezoid intervals per window
    double tol = 1e-12;           // sup-change stopping tolerance (raised to the roundoff floor)
    std::size_t max_iter = 200;
    int max_halvings = 20;
    std::size_t ball_samples = 5;    // per axis in the sampled box around x0
    std::size_t profile_nodes = 17;  // time samples for the window integrals
    double alpha_min = 1e-12;
    double safety = 0.99;         // fraction of each bound actually used
};

struct ContractionPlan {
    double t0 = 0.0;
    Vec x0;
    double sigma = 1.0;  // +1 forward window [t0, t0 + alpha], -1 backward
    double alpha = 0.0;
    double r = 0.0;
    double lambda = 0.0;  // achieved, 2 C max_j int dil(X chi^j)
    double lambda_target = 0.5;
    double C = 1.0;
    std::vector<double> integral_abs;  // int |X chi^j| over the window
    std::vector<double> integral_dil;  // int dil(X chi^j) over the window
    std::vector<Interval> box;         // sampled region around x0

    // ceil(log(tol / r) / log lambda) + 2
    std::size_t iteration_bound(double tol) const;
};

struct FlowResult {
    std::vector<double> times;
    std::vector<Vec> values;
    std::size_t iterations = 0;
    double residual = 0.0;
    double tol_used = 0.0;
    std::vector<double> ratios;  // successive sup-change ratios above the roundoff floor
    ContractionPlan plan;
};

// Piecewise cubic Hermite curve through solver nodes.
struct FlowTrajectory {
    double t0 = 0.0;
    Vec x0;
    std::vector<double> times;  // sorted increasing
    std::vector<Vec> values;
    std::vector<Vec> derivs;
    std::vector<FlowResult> windows;

    Vec eval(double t) const;
    double t_min() const { return times.front(); }
    double t_max() const { return times.back(); }
};

struct FlowDomain {
    double lo = 0.0;
    double hi = 0.0;
    bool lo_escaped = false;
    bool hi_escaped = false;
};

class FlowSolver {
public:
    FlowSolver(FieldPtr field, Patch patch, FlowConfig config = {});

    const VectorField& field() const { return *field_; }
    const FieldPtr& field_ptr() const { return field_; }
    const Patch& patch() const { return patch_; }
    const FlowConfig& config() const { return cfg_; }

    ContractionPlan contraction_setup(double t0, const Vec& x0, const std::vector<double>& p, double sigma,
                                      double alpha_cap) const;
    FlowResult picard_solve(const ContractionPlan& plan, const std::vector<double>& p) const;
    FlowResult picard_solve(const ContractionPlan& plan, const std::vector<double>& p, double tol,
                            std::size_t max_iter) const;

    // Curve through (t0, x0) covering [min(t0, ta), max(t0, tb)].
    FlowTrajectory trajectory(double t0, const Vec& x0, const std::vector<double>& p, double ta, double tb) const;
    Vec flow_map(double t1, double t0, const Vec& x0, const std::vector<double>& p) const;
    FlowDomain flow_domain(double t0, const Vec& x0, const std::vector<double>& p, double t_max) const;

private:
    // One-directional chain from (t0, x0) to t_end; throws EscapedPatch.
    void chain(double t0, const Vec& x0, const std::vector<double>& p, double t_end, std::vector<double>& ts,
               std::vector<Vec>& xs, std::vector<FlowResult>* windows) const;

    FieldPtr field_;
    Patch patch_;
    FlowConfig cfg_;
};

// Classical fourth-order Runge-Kutta with a fixed number of steps.
Vec rk_oracle(const VectorField& X, const Patch& patch, double t1, double t0, const Vec& x0,
              const std::vector<double>& p, std::size_t steps);

struct FlowTuple {
    double t2 = 0.0, t1 = 0.0, t0 = 0.0;
    Vec x;
};

struct ResidualReport {
    double weak = 0.0;         // max |f(xi(t)) - f(xi(t0)) - int Xf|
    double composition = 0.0;  // max |Phi(t2,t1,Phi(t1,t0,x)) - Phi(t2,t0,x)|
    double inverse = 0.0;      // max |Phi(t0,t1,Phi(t1,t0,x)) - x|
    double quad_tol = 1e-6;
    bool flagged = false;      // weak > 5 quad_tol
};

// Weak residual along one trajectory with composite Simpson over solver nodes.
double weak_residual(const FlowTrajectory& traj, const VectorField& X, const std::vector<double>& p,
                     const std::vector<Expr>& fs);

ResidualReport residual_checks(const FlowSolver& solver, const std::vector<FlowTrajectory>& trajectories,
                               const std::vector<double>& p, const std::vector<Expr>& fs,
                               const std::vector<FlowTuple>& tuples, double quad_tol = 1e-6);

}  // namespace flowpresheaf
