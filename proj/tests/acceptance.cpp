// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <string>

#include "flowpresheaf/lab.hpp"

using namespace flowpresheaf;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

Vec vec(std::initializer_list<double> v) {
    Vec out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double a : v) out[i++] = a;
    return out;
}

struct SuiteField {
    std::string name;
    std::vector<std::string> components;
    std::vector<Vec> points;
    bool backward = true;  // the flow exists on [-1, 0] from every point
    Interval group_box;    // initial values for group-law tuples
};

std::vector<SuiteField> suite() {
    std::vector<Vec> line{vec({-1.5}), vec({-0.5}), vec({0.3}), vec({1.2})};
    return {
        {"x' = 0", {"0"}, line, true, {-1, 1}},
        {"x' = 1", {"1"}, line, true, {-1, 1}},
        {"x' = x", {"x"}, line, true, {-1, 1}},
        {"x' = x - x^3", {"x - x^3"}, line, false, {-0.9, 0.9}},
        {"rotation", {"-x2", "x1"}, {vec({1, 0}), vec({0.3, -0.7}), vec({-1.2, 0.5})}, true, {-1, 1}},
        {"x' = sin(x) + t", {"sin(x) + t"}, line, true, {-1, 1}},
    };
}

Patch suite_patch(std::size_t n) {
    return n == 1 ? Patch::euclidean({{-10, 10}}) : Patch::euclidean({{-3, 3}, {-3, 3}});
}

int failures = 0;

void report(int id, const std::string& title, bool pass, const std::string& detail) {
    if (!pass) ++failures;
    std::printf("criterion %2d %-34s %s  %s\n", id, title.c_str(), pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

// Results shared between criteria 1, 2 and 4.
struct SuiteRun {
    std::vector<std::vector<FlowTrajectory>> trajectories;  // per field
};

SuiteRun criterion1() {
    auto start = Clock::now();
    SuiteRun run;
    double worst = 0.0, oracle = 0.0;
    for (const auto& sf : suite()) {
        auto X = std::make_shared<ExprField>(ExprField::parse(sf.components));
        Patch P = suite_patch(sf.components.size());
        FlowSolver solver(X, P);
        std::vector<FlowTrajectory> trs;
        for (const auto& x : sf.points) {
            double lo = sf.backward ? -1.0 : 0.0;
            trs.push_back(solver.trajectory(0.0, x, {}, lo, 1.0));
            for (double t1 : {lo, 1.0}) {
                if (t1 == 0.0) continue;
                Vec fine = rk_oracle(*X, P, t1, 0.0, x, {}, 4000);
                Vec coarse = rk_oracle(*X, P, t1, 0.0, x, {}, 2000);
                oracle = std::max(oracle, (fine - coarse).lpNorm<Eigen::Infinity>() / 15);
                worst = std::max(worst, (trs.back().eval(t1) - fine).lpNorm<Eigen::Infinity>());
            }
        }
        run.trajectories.push_back(std::move(trs));
    }
    double secs = seconds_since(start);
    report(1, "picard-oracle agreement", worst <= 1e-5 && oracle <= 1e-8 && secs < 30,
           "sup error " + fmt("%.2e", worst) + ", oracle error est " + fmt("%.1e", oracle) + ", " + fmt("%.1f s", secs));
    return run;
}

Expr random_polynomial(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> lead(0.5, 2.0), small(-0.2, 0.2), coin(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> axis(0, n - 1);
    std::size_t i = axis(rng);
    std::string x = n == 1 ? "x" : "x" + std::to_string(i + 1);
    std::string y = n == 1 ? "x" : "x" + std::to_string((i + 1) % n + 1);
    char buf[256];
    std::snprintf(buf, sizeof buf, "(%.6f)*%s + (%.6f) + (%.6f)*%s*%s + (%.6f)*%s^2*%s + (%.6f)*%s^3",
                  (coin(rng) < 0.5 ? -1 : 1) * lead(rng), x.c_str(), small(rng), small(rng), x.c_str(), y.c_str(),
                  small(rng), x.c_str(), y.c_str(), small(rng), y.c_str());
    Symbols s;
    s.coords = n;
    return parse_expr(buf, s);
}

void criterion2(const SuiteRun& run) {
    std::mt19937_64 rng(2);
    const double quad_tol = 1e-6;
    double worst = 0.0, weakest_corrupt = INFINITY;
    auto fields = suite();
    for (std::size_t k = 0; k < fields.size(); ++k) {
        std::size_t n = fields[k].components.size();
        ExprField X = ExprField::parse(fields[k].components);
        std::vector<Expr> fs;
        for (int j = 0; j < 10; ++j) fs.push_back(random_polynomial(rng, n));
        for (const auto& tr : run.trajectories[k]) {
            worst = std::max(worst, weak_residual(tr, X, {}, fs));
            FlowTrajectory bad = tr;
            for (std::size_t i = 0; i < bad.times.size(); ++i)
                if (bad.times[i] != bad.t0) bad.values[i].array() += 0.01;
            weakest_corrupt = std::min(weakest_corrupt, weak_residual(bad, X, {}, fs));
        }
    }
    report(2, "weak characterization", worst <= 5 * quad_tol && weakest_corrupt > 5e-3,
           "max residual " + fmt("%.2e", worst) + " (limit 5e-6), smallest corrupted " + fmt("%.2e", weakest_corrupt));
}

void criterion3() {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> T(0.0, 1.0);
    double comp = 0.0, inv = 0.0;
    std::size_t tuples = 0;
    for (const auto& sf : suite()) {
        std::size_t n = sf.components.size();
        FlowSolver s(std::make_shared<ExprField>(ExprField::parse(sf.components)), suite_patch(n));
        std::uniform_real_distribution<double> X(sf.group_box.lo, sf.group_box.hi);
        for (int k = 0; k < 100; ++k) {
            double t2 = T(rng), t1 = T(rng), t0 = T(rng);
            Vec x(static_cast<Eigen::Index>(n));
            for (auto& v : x) v = X(rng);
            Vec y = s.flow_map(t1, t0, x, {});
            comp = std::max(comp, (s.flow_map(t2, t1, y, {}) - s.flow_map(t2, t0, x, {})).lpNorm<Eigen::Infinity>());
            inv = std::max(inv, (s.flow_map(t0, t1, y, {}) - x).lpNorm<Eigen::Infinity>());
            ++tuples;
        }
    }
    report(3, "group law and inverse", comp <= 1e-6 && inv <= 1e-6,
           std::to_string(tuples) + " tuples, composition " + fmt("%.2e", comp) + ", inverse " + fmt("%.2e", inv));
}

void criterion4(const SuiteRun& run) {
    const double tol = FlowConfig{}.tol;
    std::size_t windows = 0, bad_ratio = 0, bad_iter = 0;
    double margin = -INFINITY;
    for (const auto& trs : run.trajectories)
        for (const auto& tr : trs)
            for (const auto& w : tr.windows) {
                ++windows;
                for (double q : w.ratios) {
                    margin = std::max(margin, q - w.plan.lambda);
                    if (q > w.plan.lambda + 0.05) ++bad_ratio;
                }
                if (w.iterations > w.plan.iteration_bound(tol)) ++bad_iter;
            }
    report(4, "contraction certificate", bad_ratio == 0 && bad_iter == 0 && windows > 0,
           std::to_string(windows) + " solves, max ratio - lambda " + fmt("%.3f", margin) + ", ratio violations " +
               std::to_string(bad_ratio) + ", iteration violations " + std::to_string(bad_iter));
}

void criterion5() {
    FlowSolver s(std::make_shared<ExprField>(ExprField::parse({"x^2"})), Patch::euclidean({{-100, 100}}));
    auto d = s.flow_domain(0.0, vec({1.0}), {}, 5.0);
    double err = std::fabs(d.hi - 0.99);
    report(5, "blow-up domain", d.hi_escaped && err <= 1e-3, "sup J " + fmt("%.6f", d.hi) + ", |sup J - 0.99| " + fmt("%.1e", err));
}

ExprField random_field(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> c(-2.0, 2.0);
    char buf[200];
    std::snprintf(buf, sizeof buf, "(%.4f)*sin((%.4f)*x) + (%.4f)*x^2 + (%.4f)", c(rng), c(rng), c(rng), c(rng));
    return ExprField::parse({buf});
}

void criterion6() {
    std::mt19937_64 rng(6);
    Patch p = Patch::euclidean({{-1, 2}});
    auto K = CompactGrid::tensor({{0, 1}}, {9});
    auto Ksub = CompactGrid::tensor({{0, 1}}, {5});
    std::size_t violations = 0;
    const double rel = 1e-12;
    ExprField zero = ExprField::parse({"0"});
    std::vector<RegularityClass> classes{RegularityClass::finite(0), RegularityClass::finite(2),
                                         RegularityClass::finite_lip(1), RegularityClass::smooth(3)};
    for (const auto& cls : classes)
        if (seminorm(zero, p, 0.0, {}, cls, K).value != 0.0) ++violations;
    for (int trial = 0; trial < 50; ++trial) {
        ExprField a = random_field(rng), b = random_field(rng);
        for (const auto& cls : classes) {
            double pa = seminorm(a, p, 0.0, {}, cls, K).value;
            double pb = seminorm(b, p, 0.0, {}, cls, K).value;
            double scaled = seminorm(a.scaled(-2.5), p, 0.0, {}, cls, K).value;
            if (std::fabs(scaled - 2.5 * pa) > rel * 2.5 * pa) ++violations;
            if (seminorm(a.combine(1.0, b, 1.0), p, 0.0, {}, cls, K).value > (pa + pb) * (1 + rel)) ++violations;
            if (seminorm(a, p, 0.0, {}, cls, Ksub).value > pa) ++violations;
        }
        double prev = 0.0;
        for (int m = 0; m <= 3; ++m) {
            double v = seminorm(a, p, 0.0, {}, RegularityClass::finite(m), K).value;
            if (v < prev) ++violations;
            prev = v;
        }
    }
    std::vector<double> w;
    for (int j = 0; j <= 31; ++j) w.push_back(std::ldexp(1.0, -(j + 1)));
    auto Ku = CompactGrid::tensor({{0, 1}}, {11});
    ExprField ex = ExprField::parse({"exp(x)"});
    double v20 = seminorm(ex, p, 0.0, {}, RegularityClass::real_analytic(w, 20), Ku).value;
    double v30 = seminorm(ex, p, 0.0, {}, RegularityClass::real_analytic(w, 30), Ku).value;
    double err = std::fabs(v20 - std::exp(1.0) / 2);
    report(6, "seminorm suite", violations == 0 && err <= 1e-4 && std::fabs(v30 - v20) <= 1e-6,
           std::to_string(violations) + " property violations on 50 fields, omega example " + fmt("%.6f", v20) +
               " (err " + fmt("%.1e", err) + "), M 20 -> 30 change " + fmt("%.1e", std::fabs(v30 - v20)));
}

void criterion7() {
    Patch p = Patch::euclidean({{-2, 4}});
    ExprField lin = ExprField::parse({"x"}), sine = ExprField::parse({"sin(x)"});
    double lin_err = 0.0;
    for (const auto& x : CompactGrid::tensor({{-1, 1}}, {21}).points)
        lin_err = std::max(lin_err, std::fabs(dilatation(lin, p, 0.0, x, {}, 0).value - 1.0));
    double crest = dilatation(sine, p, 0.0, vec({std::numbers::pi / 2}), {}, 0).value;

    // largest jump between neighbouring samples, for h, h/2, h/4, h/8
    std::vector<double> jumps;
    for (int k = 0; k <= 3; ++k) {
        std::size_t count = (10u << k) + 1;
        auto g = CompactGrid::tensor({{0, 2}}, {count});
        double prev = 0.0, J = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            double d = dilatation(sine, p, 0.0, g.points[i], {}, 0).value;
            if (i) J = std::max(J, std::fabs(d - prev));
            prev = d;
        }
        jumps.push_back(J);
    }
    bool linear = true;
    std::string ratios;
    for (std::size_t k = 1; k < jumps.size(); ++k) {
        double r = jumps[k - 1] / jumps[k];
        linear = linear && r >= 1.8 && r <= 2.2;
        ratios += (k > 1 ? "/" : "") + fmt("%.3f", r);
    }
    report(7, "dilatation", lin_err <= 1e-3 && crest <= 1e-3 && linear,
           "dil(x) err " + fmt("%.1e", lin_err) + ", dil(sin)(pi/2) " + fmt("%.1e", crest) + ", jump ratios " + ratios);
}

void criterion8() {
    ExprField X = ExprField::parse({"p1*x"}, 1);
    Patch P = Patch::euclidean({{-10, 10}});
    auto K = CompactGrid::tensor({{0, 1}}, {11});
    std::vector<double> ps;
    for (int k = 1; k <= 10; ++k) ps.push_back(1.0 + std::ldexp(1.0, -k));
    auto pts = param_sweep(X, P, {1.0}, 0, ps, {0, 0}, {0, 0.5}, K, Expr::coord(0));
    bool monotone = true;
    double worst = 0.0, worst_corrected = 0.0;
    std::size_t over = 0;
    for (std::size_t k = 0; k < pts.size(); ++k) {
        if (k && (pts[k].q0 > pts[k - 1].q0 || pts[k].qlip > pts[k - 1].qlip)) monotone = false;
        double r = pts[k].q0 / pts[k].bound;
        worst = std::max(worst, r);
        worst_corrected = std::max(worst_corrected, pts[k].q0 / pts[k].corrected);
        if (r > 1.2) ++over;
    }
    report(8, "parameter continuity", monotone && over == 0,
           std::string(monotone ? "monotone" : "not monotone") + ", max q0/bound " + fmt("%.3f", worst) + " (limit 1.2, " +
               std::to_string(over) + "/10 over), q0 at k=10 " + fmt("%.2e", pts.back().q0) +
               ", max q0/corrected bound " + fmt("%.3f", worst_corrected));
}

void criterion9() {
    Patch P = Patch::euclidean({{-10, 10}});
    auto sweep = exp_check(ExprField::parse({"sin(x)"}), ExprField::parse({"x^2"}), P, {0.1, 0.05, 0.025, 0.0125},
                           {0, 0}, {0, 0.5}, CompactGrid::tensor({{0, 1}}, {11}));
    double worst = 0.0;
    for (const auto& pt : sweep.points) worst = std::max(worst, pt.ratio);

    double field_err = 0.0, flow_err = 0.0;
    for (const auto& sf : suite()) {
        std::size_t n = sf.components.size();
        ExprField X = ExprField::parse(sf.components);
        Cube cube;
        cube.final_times = {0, 0.2};
        cube.initial_times = {0, 0.1};
        cube.space.assign(n, {-1, 1});
        RecordSpacing sp;
        if (n > 1) sp.space = 0.25;
        auto K = CompactGrid::tensor(std::vector<Interval>(n, {-0.5, 0.5}), std::vector<std::size_t>(n, n == 1 ? 11 : 5));
        auto r = inverse_check(X, suite_patch(n), cube, K, sp);
        field_err = std::max(field_err, r.field_error);
        flow_err = std::max(flow_err, r.flow_error);
    }
    report(9, "exp continuity and openness", worst <= 1.2 && field_err <= 1e-3 && flow_err <= 1e-5,
           "max q/(G p0) " + fmt("%.3f", worst) + " with G " + fmt("%.4f", sweep.G) + ", field round trip " +
               fmt("%.1e", field_err) + ", flow round trip " + fmt("%.1e", flow_err));
}

Cube cube1(Interval s1, Interval s0, Interval u) { return Cube{s1, s0, {u}}; }

void criterion10() {
    Patch P = Patch::euclidean({{-10, 10}});
    FlowSolver X(std::make_shared<ExprField>(ExprField::parse({"x"})), P),
        X2(std::make_shared<ExprField>(ExprField::parse({"2*x"})), P);
    Cube a = cube1({0, 0.1}, {0, 0.05}, {0.5, 1}), b = cube1({0, 0.1}, {0, 0.05}, {0.8, 1.2});
    auto ra = LocalFlowRecord::from_solver(X, a, {}, {}, "x");
    auto rb = LocalFlowRecord::from_solver(X, b, {}, {}, "x");
    auto mono = LocalFlowRecord::from_solver(X, cube1({0, 0.1}, {0, 0.05}, {0.5, 1.2}), {}, {}, "x");
    auto el = glue({ra, rb}, P);
    double same = 0.0;
    for (const auto* r : {&ra, &rb})
        for (const auto& pt : r->node_points()) {
            Vec x = vec({pt[2]});
            same = std::max(same, std::fabs(el.query(pt[0], pt[1], x)[0] - X.flow_map(pt[0], pt[1], x, {})[0]));
        }
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> T1(0, 0.1), T0(0, 0.05), U(0.5, 1.2);
    for (int k = 0; k < 2000; ++k) {
        double t1 = T1(rng), t0 = T0(rng);
        Vec x = vec({U(rng)});
        same = std::max(same, std::fabs(el.query(t1, t0, x)[0] - mono.query(t1, t0, x)[0]));
    }

    double gap = std::exp(0.2) - std::exp(0.1), rel = INFINITY;
    bool raised = false;
    try {
        glue({ra, LocalFlowRecord::from_solver(X2, b, {}, {}, "2x")}, P);
    } catch (const OverlapViolation& e) {
        raised = true;
        rel = std::fabs(e.residual - gap) / gap;
    }

    // two different covers of one flow-admissible region
    Region W = Region::skewed_ball(0.0, vec({0.5}), 0.2);
    auto field = std::make_shared<ExprField>(ExprField::parse({"x - x^3"}));
    CoverOptions o1, o2;
    o1.resolution = 2;
    o1.snap = o2.snap = 0.05;
    o2.resolution = 3;
    o2.overlap = 0.3;
    std::vector<AdmissibleCube> f1, f2;
    for (const auto& c : build_cover(W, o1)) f1.push_back({c, field});
    for (const auto& c : build_cover(W, o2)) f2.push_back({c, field});
    auto e1 = exp_map(f1, P), e2 = exp_map(f2, P);
    double diff = 0.0;
    std::size_t compared = 0;
    std::vector<double> pt(3);
    while (compared < 2000) {
        for (std::size_t i = 0; i < 3; ++i)
            pt[i] = std::uniform_real_distribution<double>(W.bounds[i].lo, W.bounds[i].hi)(rng);
        if (!W.contains(pt)) continue;
        Vec x = vec({pt[2]});
        diff = std::max(diff, (e1.query(pt[0], pt[1], x) - e2.query(pt[0], pt[1], x)).lpNorm<Eigen::Infinity>());
        ++compared;
    }
    report(10, "presheaf gluing", same <= 1e-8 && raised && rel <= 0.05 && diff <= 2e-6,
           "glued vs monolithic " + fmt("%.1e", same) + ", x vs 2x gap rel err " + fmt("%.3f", rel) + ", covers of " +
               std::to_string(f1.size()) + " and " + std::to_string(f2.size()) + " cubes differ by " + fmt("%.1e", diff));
}

void criterion11() {
    auto K1 = CompactGrid::tensor({{-1, 1}}, {9});
    auto scaled = metric_equivalence_constant(Patch::from_strings({{-1, 1}}, {"exp(2*x)"}),
                                              Patch::from_strings({{-1, 1}}, {"4*exp(2*x)"}), K1, 100);
    bool range = scaled.c >= 1.99 && scaled.c <= 2.01;

    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    auto spd = [&] {
        Mat A(2, 2);
        for (auto& v : A.reshaped()) v = U(rng);
        Mat g = A * A.transpose() + 0.2 * Mat::Identity(2, 2);
        std::vector<std::string> s;
        for (double v : {g(0, 0), g(0, 1), g(1, 0), g(1, 1)}) s.push_back(fmt("%.17g", v));
        return s;
    };
    std::vector<Interval> box{{-1, 1}, {-1, 1}};
    auto K2 = CompactGrid::tensor(box, {15, 15});
    std::size_t checked = 0, violations = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        Patch g1 = Patch::from_strings(box, spd()), g2 = Patch::from_strings(box, spd());
        auto r = metric_equivalence_constant(g1, g2, K2, 10000, 100 + trial);
        for (std::size_t k = 0; k < r.d1.size(); ++k) {
            ++checked;
            double hi = r.d2[k] / (r.c * r.d1[k]), lo = r.d1[k] / (r.c * r.d2[k]);
            worst = std::max({worst, hi, lo});
            if (hi > 1 + 1e-12 || lo > 1 + 1e-12) ++violations;
        }
        if (r.c > r.eigen_bound * (1 + 1e-12)) ++violations;
    }
    report(11, "metric equivalence", range && violations == 0 && checked == 50000,
           "c(g, 4g) " + fmt("%.5f", scaled.c) + ", " + std::to_string(checked) + " random SPD pairs, " +
               std::to_string(violations) + " violations, worst ratio " + fmt("%.6f", worst));
}

// Largest difference quotient of x -> Phi(t, 0, x, p) over neighbouring grid points, over the t and p grids.
double flow_lipschitz(std::size_t kx, std::size_t kt, std::size_t kp) {
    auto field = std::make_shared<ExprField>(ExprField::parse({"p1*sin(x)"}, 1));
    FlowSolver s(field, Patch::euclidean({{-10, 10}}));
    auto K = CompactGrid::tensor({{-1, 1}}, {kx});
    double C = 0.0;
    for (std::size_t ip = 0; ip < kp; ++ip) {
        double p = 0.5 + static_cast<double>(ip) / (kp - 1);
        std::vector<FlowTrajectory> trs;
        for (const auto& x : K.points) trs.push_back(s.trajectory(0.0, x, {p}, 0.0, 1.0));
        for (std::size_t it = 0; it < kt; ++it) {
            double t = static_cast<double>(it) / (kt - 1);
            for (std::size_t i = 1; i < trs.size(); ++i)
                C = std::max(C, std::fabs(trs[i].eval(t)[0] - trs[i - 1].eval(t)[0]) / (K.points[i][0] - K.points[i - 1][0]));
        }
    }
    return C;
}

void criterion12() {
    double C = flow_lipschitz(21, 11, 5), C2 = flow_lipschitz(41, 21, 9);
    double change = std::fabs(C2 - C) / C;
    // uniform bound exp(int sup |dX/dx|) over the parameter range
    Symbols sym;
    sym.params = 1;
    auto Kp = CompactGrid::tensor({{-3.2, 3.2}}, {65});
    double L = integrated_lipschitz_bound(parse_expr("p1*sin(x)", sym), Patch::euclidean({{-10, 10}}), Kp, {0, 1},
                                          {{0.5}, {1.0}, {1.5}});
    double bound = std::exp(L);
    report(12, "uniform Lipschitz", change < 0.05 && C2 <= bound,
           "C " + fmt("%.4f", C) + ", doubled grids " + fmt("%.4f", C2) + " (change " + fmt("%.2f%%", 100 * change) +
               "), integrated bound " + fmt("%.4f", bound));
}

template <class F>
void guarded(int id, const std::string& title, F&& f) {
    try {
        f();
    } catch (const std::exception& e) {
        report(id, title, false, std::string("error: ") + e.what());
    }
}

}  // namespace

int main() {
    SuiteRun run;
    guarded(1, "picard-oracle agreement", [&] { run = criterion1(); });
    guarded(2, "weak characterization", [&] { criterion2(run); });
    guarded(3, "group law and inverse", criterion3);
    guarded(4, "contraction certificate", [&] { criterion4(run); });
    guarded(5, "blow-up domain", criterion5);
    guarded(6, "seminorm suite", criterion6);
    guarded(7, "dilatation", criterion7);
    guarded(8, "parameter continuity", criterion8);
    guarded(9, "exp continuity and openness", criterion9);
    guarded(10, "presheaf gluing", criterion10);
    guarded(11, "metric equivalence", criterion11);
    guarded(12, "uniform Lipschitz", criterion12);
    std::printf("%d of 12 criteria failed\n", failures);
    return failures ? 1 : 0;
}
