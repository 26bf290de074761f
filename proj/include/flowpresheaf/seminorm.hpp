#pragma once

#include <string>
#include <vector>

#include "flowpresheaf/jet.hpp"

namespace flowpresheaf {

struct RegularityClass {
    enum class Tag { Finite, FiniteLip, Smooth, RealAnalytic, Hol };

    Tag tag = Tag::Finite;
    int m = 0;                    // order for Finite / FiniteLip, truncation for Smooth / RealAnalytic
    std::vector<double> weights;  // a_0, a_1, ... for RealAnalytic

    static RegularityClass finite(int m);
    static RegularityClass finite_lip(int m);
    static RegularityClass smooth(int truncation);
    static RegularityClass real_analytic(std::vector<double> weights, int truncation);
    static RegularityClass hol();

    void validate() const;
    std::string name() const;
};

struct DilatationOptions {
    double r0 = 0.05;
    int radii = 7;                 // r_k = r0 2^-k, k < radii
    std::size_t directions = 64;   // used in two and three dimensions
    std::size_t ball_samples = 5;  // per axis, on a lattice inside each ball
};

struct DilatationResult {
    double value = 0.0;
    std::vector<double> radii;
    std::vector<double> profile;  // sup over ball k, nonincreasing in k
};

struct SeminormReport {
    double value = 0.0;
    RegularityClass cls;
    std::size_t grid_points = 0;
    double grid_spacing = 0.0;
    int truncation = 0;
    std::vector<double> per_order;
};

// Unit tangent directions in n dimensions, deterministic.
std::vector<Vec> sample_directions(std::size_t n, std::size_t count);

// dil j_m s at x for a section given by components (tangent: vector field, else a scalar).
DilatationResult dilatation(const std::vector<Expr>& components, bool tangent, const Patch& patch, double t,
                            const Vec& x, const std::vector<double>& p, int m, const DilatationOptions& opt = {});
DilatationResult dilatation(const ExprField& field, const Patch& patch, double t, const Vec& x,
                            const std::vector<double>& p, int m, const DilatationOptions& opt = {});

// ||nabla_v j_m s(y)|| maximized over sampled unit v at a single point y.
double directional_jet_norm(const std::vector<Expr>& components, bool tangent, const Patch& patch, double t,
                            const Vec& y, const std::vector<double>& p, int m, const std::vector<Vec>& dirs);

SeminormReport seminorm(const ExprField& field, const Patch& patch, double t, const std::vector<double>& p,
                        const RegularityClass& cls, const CompactGrid& K, const DilatationOptions& opt = {});
SeminormReport seminorm(const std::vector<Expr>& components, bool tangent, const Patch& patch, double t,
                        const std::vector<double>& p, const RegularityClass& cls, const CompactGrid& K,
                        const DilatationOptions& opt = {});
// Hol class: K holds points (x1, x2) read as z = x1 + i x2.
SeminormReport seminorm(const HolField& f, const CompactGrid& K);

struct TimeSeminormResult {
    double value = 0.0;
    double error = 0.0;
    std::vector<double> per_order;
};

TimeSeminormResult time_seminorm(const ExprField& field, const Patch& patch, const RegularityClass& cls,
                                 const CompactGrid& K, Interval S, const std::vector<double>& p, double tol = 1e-8,
                                 const DilatationOptions& opt = {});

// Sup over K of dil of a scalar function at order 0, i.e. a Lipschitz constant l(t).
double lipschitz_bound(const Expr& f, const Patch& patch, double t, const std::vector<double>& p,
                       const CompactGrid& K, const DilatationOptions& opt = {});

// Sup over the parameter grid of the integral of l_p over S.
double integrated_lipschitz_bound(const Expr& f, const Patch& patch, const CompactGrid& K, Interval S,
                                  const std::vector<std::vector<double>>& params, double tol = 1e-7,
                                  const DilatationOptions& opt = {});

}  // namespace flowpresheaf
