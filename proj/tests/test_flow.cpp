#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "flowpresheaf/flow.hpp"

using namespace flowpresheaf;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }
Vec v2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

FieldPtr field(const std::vector<std::string>& c, std::size_t np = 0) {
    return std::make_shared<ExprField>(ExprField::parse(c, np));
}

FlowSolver solver1(const std::string& X, Interval b = {-10, 10}, FlowConfig cfg = {}) {
    return FlowSolver(field({X}), Patch::euclidean({b}), cfg);
}

}  // namespace

TEST_CASE("contraction setup: window bounds") {
    FlowConfig cfg;
    cfg.r = 0.1;
    auto unit = solver1("1", {-10, 10}, cfg).contraction_setup(0.0, v1(0.0), {}, 1.0, 10.0);
    CHECK(unit.alpha <= 0.05);
    CHECK(unit.alpha >= 0.04);
    CHECK(unit.integral_abs[0] < 0.05);
    CHECK(unit.lambda == 0.0);

    auto zero = solver1("0").contraction_setup(0.0, v1(0.3), {}, 1.0, 10.0);
    CHECK(zero.alpha == FlowConfig{}.alpha_max);

    // X = x: dil = 1, C = 1, lambda 1/2 needs alpha < 1/4
    FlowConfig wide;
    wide.r = 4.0;
    auto lin = solver1("x", {-10, 10}, wide).contraction_setup(0.0, v1(0.0), {}, 1.0, 10.0);
    CHECK(lin.C == doctest::Approx(1.0));
    CHECK(lin.alpha <= 0.25);
    CHECK(lin.alpha >= 0.2);
    CHECK(lin.lambda < 0.5);

    auto back = solver1("x").contraction_setup(1.0, v1(0.5), {}, -1.0, 10.0);
    CHECK(back.sigma == -1.0);
    CHECK(back.alpha > 0.0);
}

TEST_CASE("contraction setup: no admissible window") {
    FlowConfig cfg;
    cfg.alpha_min = 1e-3;
    CHECK_THROWS_AS(solver1("1e6", {-1e9, 1e9}, cfg).contraction_setup(0.0, v1(0.0), {}, 1.0, 1.0),
                    NoAdmissibleWindow);
}

TEST_CASE("picard: constant and linear fields") {
    auto z = solver1("0");
    auto plan = z.contraction_setup(0.0, v1(0.7), {}, 1.0, 1.0);
    auto r = z.picard_solve(plan, {});
    CHECK(r.iterations == 1);
    for (const auto& v : r.values) CHECK(v[0] == 0.7);

    auto e = solver1("x");
    auto pl = e.contraction_setup(0.0, v1(1.0), {}, 1.0, 0.1);
    CHECK(pl.alpha == doctest::Approx(0.1));
    auto s = e.picard_solve(pl, {});
    CHECK(std::fabs(s.values.back()[0] - std::exp(0.1)) <= 1e-6);
    CHECK(s.iterations <= pl.iteration_bound(FlowConfig{}.tol));
    for (double q : s.ratios) CHECK(q <= pl.lambda + 0.05);
}

TEST_CASE("picard: max iterations and non-contraction") {
    auto e = solver1("x");
    auto pl = e.contraction_setup(0.0, v1(1.0), {}, 1.0, 0.1);
    CHECK_THROWS_AS(e.picard_solve(pl, {}, 1e-14, 3), MaxIterExceeded);
    ContractionPlan bad = pl;
    bad.alpha = 8.0;  // far outside the admissible window
    CHECK_THROWS_AS(solver1("x^2", {-1e9, 1e9}).picard_solve(bad, {}, 1e-12, 200), NonContraction);
}

TEST_CASE("flow map: exponential and rotation") {
    CHECK(std::fabs(solver1("x").flow_map(0.1, 0.0, v1(1.0), {})[0] - 1.105171) <= 1e-6);
    CHECK(std::fabs(solver1("x").flow_map(1.0, 0.0, v1(1.0), {})[0] - std::exp(1.0)) <= 1e-5);
    CHECK(std::fabs(solver1("x").flow_map(-1.0, 0.0, v1(1.0), {})[0] - std::exp(-1.0)) <= 1e-5);

    FlowSolver rot(field({"-x2", "x1"}), Patch::euclidean({{-3, 3}, {-3, 3}}));
    Vec y = rot.flow_map(std::numbers::pi / 2, 0.0, v2(1, 0), {});
    CHECK(std::fabs(y[0]) <= 1e-6);
    CHECK(std::fabs(y[1] - 1.0) <= 1e-6);
    CHECK(rot.flow_map(0.3, 0.3, v2(0.2, 0.1), {}) == v2(0.2, 0.1));
}

TEST_CASE("flow map: parameters and time dependence") {
    FlowSolver s(field({"p1*x"}, 1), Patch::euclidean({{-10, 10}}));
    CHECK(std::fabs(s.flow_map(0.5, 0.0, v1(1.0), {2.0})[0] - std::exp(1.0)) <= 1e-5);
    // x' = t, x(0) = 0 gives t^2 / 2
    CHECK(std::fabs(solver1("t").flow_map(1.5, 0.0, v1(0.0), {})[0] - 1.125) <= 1e-9);
}

TEST_CASE("flow map: group law and inverse") {
    auto s = solver1("sin(x) + t");
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> T(0.0, 1.0), X(-1.0, 1.0);
    for (int i = 0; i < 20; ++i) {
        double t0 = T(rng), t1 = T(rng), t2 = T(rng);
        Vec x = v1(X(rng));
        Vec a = s.flow_map(t2, t1, s.flow_map(t1, t0, x, {}), {});
        Vec b = s.flow_map(t2, t0, x, {});
        CHECK(std::fabs(a[0] - b[0]) <= 1e-6);
        Vec back = s.flow_map(t0, t1, s.flow_map(t1, t0, x, {}), {});
        CHECK(std::fabs(back[0] - x[0]) <= 1e-6);
    }
}

TEST_CASE("flow escapes the patch") {
    auto s = solver1("x^2", {-100, 100});
    try {
        s.flow_map(2.0, 0.0, v1(1.0), {});
        FAIL("expected an escape");
    } catch (const EscapedPatch& e) {
        CHECK(std::fabs(e.t_escape - 0.99) <= 1e-3);
        CHECK(e.point[0] == doctest::Approx(100.0).epsilon(1e-3));
    }
    auto d = s.flow_domain(0.0, v1(1.0), {}, 5.0);
    CHECK(d.hi_escaped);
    CHECK(std::fabs(d.hi - 0.99) <= 1e-3);
    // backward: x(t) = 1 / (1 - t) reaches 0.01 ... never -100, but stays inside for t in [-5, 0]
    CHECK_FALSE(d.lo_escaped);
    CHECK(d.lo == -5.0);
    CHECK_THROWS_AS(s.flow_map(1.0, 0.0, v1(200.0), {}), EscapedPatch);
}

TEST_CASE("trajectory covers both sides and interpolates") {
    auto s = solver1("x");
    auto tr = s.trajectory(0.5, v1(1.0), {}, 0.0, 1.0);
    CHECK(tr.t_min() <= 0.0);
    CHECK(tr.t_max() >= 1.0);
    // queries through flow_map see the same nodes
    for (double t : {0.0, 0.31, 0.5, 0.9})
        CHECK(tr.eval(t)[0] == s.flow_map(t, 0.5, v1(1.0), {})[0]);
    for (double t : {0.0, 0.13, 0.5, 0.77, 1.0}) CHECK(std::fabs(tr.eval(t)[0] - std::exp(t - 0.5)) <= 1e-6);
    CHECK_THROWS_AS(tr.eval(1.5), DomainError);
}

TEST_CASE("RK4 oracle") {
    FieldPtr X = field({"x"});
    Patch p = Patch::euclidean({{-10, 10}});
    CHECK(std::fabs(rk_oracle(*X, p, 1.0, 0.0, v1(1.0), {}, 1000)[0] - std::exp(1.0)) <= 1e-9);
    double e1 = std::fabs(rk_oracle(*X, p, 1.0, 0.0, v1(1.0), {}, 10)[0] - std::exp(1.0));
    double e2 = std::fabs(rk_oracle(*X, p, 1.0, 0.0, v1(1.0), {}, 20)[0] - std::exp(1.0));
    CHECK(e2 / e1 == doctest::Approx(1.0 / 16).epsilon(0.1));
    CHECK_THROWS_AS(rk_oracle(*field({"x^2"}), Patch::euclidean({{-100, 100}}), 2.0, 0.0, v1(1.0), {}, 1000),
                    EscapedPatch);
}

TEST_CASE("solver agrees with the RK4 oracle") {
    auto s = solver1("x - x^3");
    FieldPtr X = field({"x - x^3"});
    for (double x0 : {-1.5, -0.2, 0.4, 1.3}) {
        double a = s.flow_map(1.0, 0.0, v1(x0), {})[0];
        double b = rk_oracle(*X, s.patch(), 1.0, 0.0, v1(x0), {}, 2000)[0];
        CHECK(std::fabs(a - b) <= 1e-5);
    }
}

TEST_CASE("residual checks") {
    auto s = solver1("x");
    Symbols sym;
    std::vector<Expr> fs{parse_expr("x", sym), parse_expr("x^2 - 3*x", sym), parse_expr("x^3", sym)};
    auto tr = s.trajectory(0.0, v1(1.0), {}, 0.0, 1.0);
    std::vector<FlowTuple> tuples{{1.0, 0.4, 0.0, v1(0.5)}, {0.2, 0.9, 0.3, v1(-1.0)}};
    auto rep = residual_checks(s, {tr}, {}, fs, tuples);
    CHECK(rep.weak <= 5 * rep.quad_tol);
    CHECK(rep.composition <= 1e-6);
    CHECK(rep.inverse <= 1e-6);
    CHECK_FALSE(rep.flagged);

    FlowTrajectory bad = tr;
    for (std::size_t k = 0; k < bad.times.size(); ++k)
        if (bad.times[k] != bad.t0) bad.values[k][0] += 0.01;
    auto worse = residual_checks(s, {bad}, {}, fs, {});
    CHECK(worse.weak > 0.005);
    CHECK(worse.flagged);
}
