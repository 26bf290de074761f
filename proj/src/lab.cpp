#include "flowpresheaf/lab.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

namespace flowpresheaf {

void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, count));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::map<std::size_t, std::exception_ptr> errors;  // lowest index wins, whatever finished first
    auto body = [&] {
        for (;;) {
            std::size_t i = next++;
            if (i >= count) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                errors.emplace(i, std::current_exception());
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t k = 1; k < workers; ++k) pool.emplace_back(body);
    body();
    for (auto& t : pool) t.join();
    if (!errors.empty()) std::rethrow_exception(errors.begin()->second);
}

FlowFn cached_flow(const FlowSolver& solver, std::vector<double> p, Interval span) {
    struct Cache {
        FlowSolver solver;
        std::vector<double> p;
        Interval span;
        std::map<std::vector<double>, FlowTrajectory> trajectories;
    };
    auto c = std::make_shared<Cache>(Cache{solver, std::move(p), span, {}});
    return [c](double t1, double t0, const Vec& x) -> Vec {
        std::vector<double> key{t0};
        key.insert(key.end(), x.data(), x.data() + x.size());
        auto it = c->trajectories.find(key);
        if (it == c->trajectories.end())
            it = c->trajectories
                     .emplace(key, c->solver.trajectory(t0, x, c->p, std::min(c->span.lo, t0), std::max(c->span.hi, t0)))
                     .first;
        const auto& tr = it->second;
        if (t1 >= tr.t_min() && t1 <= tr.t_max()) return tr.eval(t1);
        return c->solver.flow_map(t1, t0, x, c->p);
    };
}

namespace {

Interval hull(Interval a, Interval b) { return {std::min(a.lo, b.lo), std::max(a.hi, b.hi)}; }

std::vector<double> nodes(Interval I, std::size_t count) {
    if (I.width() == 0 || count < 2) return {I.lo};
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = I.lo + I.width() * static_cast<double>(i) / (count - 1);
    return out;
}

double metric_norm(const Patch& patch, const Vec& x, const Vec& v) {
    return std::sqrt(std::max(0.0, v.dot(patch.metric(x) * v)));
}

std::vector<Expr> coordinate_functions(std::size_t n) {
    std::vector<Expr> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(Expr::coord(i));
    return out;
}

double max_flow_distance(const FlowFn& a, const FlowFn& b, const Patch& patch, const CompactGrid& K, Interval I,
                         Interval Ip) {
    double q = 0.0;
    for (const auto& f : coordinate_functions(patch.dim()))
        q = std::max(q, flow_seminorm(a, b, f, patch, K, I, Ip, FlowOrder::Zero).value);
    return q;
}

}  // namespace

std::vector<SweepPoint> param_sweep(const ExprField& X, const Patch& patch, const std::vector<double>& p0,
                                    std::size_t index, const std::vector<double>& ps, Interval initial,
                                    Interval final_times, const CompactGrid& K, const Expr& f, const FlowConfig& cfg,
                                    std::size_t workers) {
    if (index >= p0.size()) throw DomainError("parameter index out of range");
    auto field = std::make_shared<ExprField>(X);
    FlowSolver solver(field, patch, cfg);
    const Interval span = hull(initial, final_times);
    const double T = std::max(std::fabs(final_times.hi - initial.lo), std::fabs(final_times.lo - initial.hi));

    double supK = 0.0;
    for (const auto& x : K.points) supK = std::max(supK, x.norm());
    double supFlow = 0.0;
    {
        FlowFn base = cached_flow(solver, p0, span);
        for (double t0 : nodes(initial, 3))
            for (const auto& x : K.points)
                for (double t1 : nodes(final_times, 41)) supFlow = std::max(supFlow, base(t1, t0, x).norm());
    }

    std::vector<SweepPoint> out(ps.size());
    parallel_for(ps.size(), workers, [&](std::size_t k) {
        std::vector<double> p = p0;
        p[index] = ps[k];
        FlowFn a = cached_flow(solver, p, span), b = cached_flow(solver, p0, span);
        SweepPoint& s = out[k];
        s.p = ps[k];
        s.dp = std::fabs(ps[k] - p0[index]);
        s.q0 = flow_seminorm(a, b, f, patch, K, initial, final_times, FlowOrder::Zero).value;
        s.qlip = flow_seminorm(a, b, f, patch, K, initial, final_times, FlowOrder::Lip).value;
        double ap = std::fabs(ps[k]);
        double growth = std::expm1(ap * T);
        s.bound = growth * s.dp * supK;
        s.corrected = (ap > 0 ? growth / ap : T) * s.dp * supFlow;
    });
    return out;
}

PerturbationSweep exp_check(const ExprField& X, const ExprField& Y, const Patch& patch, const std::vector<double>& eps,
                            Interval initial, Interval final_times, const CompactGrid& K, double margin,
                            const FlowConfig& cfg, std::size_t workers) {
    const std::size_t n = patch.dim();
    const Interval span = hull(initial, final_times);
    auto solver_for = [&](double e) {
        return FlowSolver(std::make_shared<ExprField>(e == 0 ? X : X.combine(1.0, Y, e)), patch, cfg);
    };

    // K': everything the flows reach from K, padded and clipped to the patch
    PerturbationSweep out;
    std::vector<double> all = eps;
    all.push_back(0.0);
    std::vector<std::vector<Interval>> boxes(all.size());
    parallel_for(all.size(), workers, [&](std::size_t k) {
        FlowFn phi = cached_flow(solver_for(all[k]), {}, span);
        std::vector<Interval> box(n, Interval{INFINITY, -INFINITY});
        for (double t0 : nodes(initial, 3))
            for (const auto& x : K.points)
                for (double t1 : nodes(final_times, 21)) {
                    Vec y = phi(t1, t0, x);
                    for (std::size_t i = 0; i < n; ++i) {
                        double v = y[static_cast<Eigen::Index>(i)];
                        box[i] = {std::min(box[i].lo, v), std::max(box[i].hi, v)};
                    }
                }
        boxes[k] = box;
    });
    out.enlarged.assign(n, Interval{INFINITY, -INFINITY});
    for (const auto& b : boxes)
        for (std::size_t i = 0; i < n; ++i) out.enlarged[i] = hull(out.enlarged[i], b[i]);
    for (std::size_t i = 0; i < n; ++i) {
        const Interval& P = patch.bounds()[i];
        out.enlarged[i] = {std::max(P.lo, out.enlarged[i].lo - margin), std::min(P.hi, out.enlarged[i].hi + margin)};
    }
    std::size_t per_axis = n == 1 ? 21 : n == 2 ? 11 : 5;
    CompactGrid Kp = CompactGrid::tensor(out.enlarged, std::vector<std::size_t>(n, per_axis));

    // Gronwall constant from the measured Lipschitz constant of X on K' x I'
    std::vector<double> tl = nodes(final_times, 5);
    std::vector<double> Ls(Kp.size() * tl.size(), 0.0);
    parallel_for(Ls.size(), workers, [&](std::size_t k) {
        Ls[k] = dilatation(X, patch, tl[k / Kp.size()], Kp.points[k % Kp.size()], {}, 0).value;
    });
    out.L = *std::max_element(Ls.begin(), Ls.end());
    out.G = std::exp(out.L * final_times.width());

    // p0 over K' and I' of Y: integral in time of the sup over K'
    std::vector<double> ty = nodes(final_times, 41);
    std::vector<double> supY(ty.size(), 0.0);
    for (std::size_t i = 0; i < ty.size(); ++i)
        for (const auto& x : Kp.points) supY[i] = std::max(supY[i], metric_norm(patch, x, Y.eval(ty[i], x, {})));
    double pY = supY[0];
    if (ty.size() > 1) {
        pY = 0.0;
        for (std::size_t i = 0; i + 1 < ty.size(); ++i) pY += 0.5 * (ty[i + 1] - ty[i]) * (supY[i] + supY[i + 1]);
    }

    out.points.resize(eps.size());
    parallel_for(eps.size(), workers, [&](std::size_t k) {
        FlowFn a = cached_flow(solver_for(eps[k]), {}, span), b = cached_flow(solver_for(0.0), {}, span);
        auto& pt = out.points[k];
        pt.eps = eps[k];
        pt.q = max_flow_distance(a, b, patch, K, initial, final_times);
        pt.field = std::fabs(eps[k]) * pY;
        pt.ratio = pt.field > 0 ? pt.q / (out.G * pt.field) : 0.0;
    });
    return out;
}

RoundTrip inverse_check(const ExprField& X, const Patch& patch, const Cube& cube, const CompactGrid& K,
                        const RecordSpacing& spacing, const FlowConfig& cfg, double h) {
    auto field = std::make_shared<ExprField>(X);
    PresheafElement el = exp_map({{cube, field}}, patch, {}, spacing, cfg);
    GridField Xh = exp_inverse(el.records().front(), h);

    RoundTrip r;
    for (double t : Xh.axes().front())
        for (const auto& x : K.points)
            r.field_error = std::max(r.field_error, metric_norm(patch, x, Xh.eval(t, x, {}) - X.eval(t, x, {})));

    Patch U(cube.space, patch.metric_exprs());
    FlowSolver original(field, patch, cfg), rebuilt(std::make_shared<GridField>(Xh), U, cfg);
    Interval span = hull(cube.final_times, cube.initial_times);
    r.flow_error = max_flow_distance(cached_flow(rebuilt, {}, span), cached_flow(original, {}, span), patch, K,
                                     cube.initial_times, cube.final_times);
    return r;
}

// ---- scenario parsing ----------------------------------------------------

namespace {

std::string key_path(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }
std::string index_path(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

const json* find(const json& j, const std::string& key) {
    if (!j.is_object()) return nullptr;
    auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

const json& need(const json& j, const std::string& key, const std::string& path) {
    if (!j.is_object()) throw ConfigError(path, "expected an object");
    const json* v = find(j, key);
    if (!v) throw ConfigError(key_path(path, key), "missing");
    return *v;
}

double number(const json& j, const std::string& path) {
    if (!j.is_number()) throw ConfigError(path, "expected a number");
    double v = j.get<double>();
    if (!std::isfinite(v)) throw ConfigError(path, "expected a finite number");
    return v;
}

double number_or(const json& j, const std::string& key, const std::string& path, double def) {
    const json* v = find(j, key);
    return v ? number(*v, key_path(path, key)) : def;
}

double positive_or(const json& j, const std::string& key, const std::string& path, double def) {
    double v = number_or(j, key, path, def);
    if (!(v > 0)) throw ConfigError(key_path(path, key), "must be positive");
    return v;
}

std::size_t count(const json& j, const std::string& path) {
    if (!j.is_number_integer() || j.get<long long>() < 0) throw ConfigError(path, "expected a non-negative integer");
    return static_cast<std::size_t>(j.get<long long>());
}

std::size_t count_or(const json& j, const std::string& key, const std::string& path, std::size_t def) {
    const json* v = find(j, key);
    return v ? count(*v, key_path(path, key)) : def;
}

std::string text(const json& j, const std::string& path) {
    if (!j.is_string()) throw ConfigError(path, "expected a string");
    return j.get<std::string>();
}

std::string text_or(const json& j, const std::string& key, const std::string& path, const std::string& def) {
    const json* v = find(j, key);
    return v ? text(*v, key_path(path, key)) : def;
}

std::vector<double> numbers(const json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError(path, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], index_path(path, i)));
    return out;
}

std::vector<std::string> strings(const json& j, const std::string& path) {
    if (j.is_string()) return {j.get<std::string>()};
    if (!j.is_array()) throw ConfigError(path, "expected a string or an array of strings");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(text(j[i], index_path(path, i)));
    return out;
}

// [lo, hi], or a bare number for a single instant
Interval interval(const json& j, const std::string& path) {
    if (j.is_number()) {
        double v = number(j, path);
        return {v, v};
    }
    auto v = numbers(j, path);
    if (v.size() != 2) throw ConfigError(path, "expected [lo, hi]");
    if (v[0] > v[1]) throw ConfigError(path, "lo exceeds hi");
    return {v[0], v[1]};
}

Interval interval_or(const json& j, const std::string& key, const std::string& path, Interval def) {
    const json* v = find(j, key);
    return v ? interval(*v, key_path(path, key)) : def;
}

std::vector<Interval> intervals(const json& j, const std::string& path, std::size_t dim) {
    if (!j.is_array() || j.empty()) throw ConfigError(path, "expected a non-empty array of [lo, hi]");
    if (dim && j.size() != dim) throw ConfigError(path, "expected " + std::to_string(dim) + " intervals");
    std::vector<Interval> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(interval(j[i], index_path(path, i)));
    return out;
}

Vec point(const json& j, const std::string& path, std::size_t dim) {
    std::vector<double> v = j.is_number() ? std::vector<double>{number(j, path)} : numbers(j, path);
    if (v.size() != dim) throw ConfigError(path, "expected " + std::to_string(dim) + " coordinates");
    return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<Vec> points(const json& j, const std::string& path, std::size_t dim) {
    if (!j.is_array() || j.empty()) throw ConfigError(path, "expected a non-empty array of points");
    std::vector<Vec> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(point(j[i], index_path(path, i), dim));
    return out;
}

template <class F>
auto guarded(const std::string& path, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(path, e.what());
    }
}

struct Context {
    Scenario* s = nullptr;
    std::size_t dim = 0;
    std::map<std::string, CompactGrid> grids;
};

CompactGrid grid_spec(const json& j, const std::string& path, const Context& c) {
    if (j.is_string()) {
        auto it = c.grids.find(j.get<std::string>());
        if (it == c.grids.end()) throw ConfigError(path, "undeclared grid '" + j.get<std::string>() + "'");
        return it->second;
    }
    if (!j.is_object()) throw ConfigError(path, "expected a grid name or object");
    CompactGrid g;
    if (const json* pts = find(j, "points")) {
        g = guarded(path, [&] {
            return CompactGrid::scattered(points(*pts, key_path(path, "points"), c.dim),
                                          positive_or(j, "spacing", path, 0.1));
        });
    } else {
        auto box = intervals(need(j, "box", path), key_path(path, "box"), c.dim);
        const json& cj = need(j, "counts", path);
        std::vector<std::size_t> counts;
        if (cj.is_number()) counts.assign(c.dim, count(cj, key_path(path, "counts")));
        else if (cj.is_array() && cj.size() == c.dim)
            for (std::size_t i = 0; i < cj.size(); ++i) counts.push_back(count(cj[i], index_path(key_path(path, "counts"), i)));
        else throw ConfigError(key_path(path, "counts"), "expected one count per axis");
        for (std::size_t k : counts)
            if (k == 0) throw ConfigError(key_path(path, "counts"), "grid must be non-empty");
        g = guarded(path, [&] { return CompactGrid::tensor(box, counts); });
    }
    if (g.size() == 0) throw ConfigError(path, "grid must be non-empty");
    guarded(path, [&] { g.validate(*c.s->patch); });
    return g;
}

ExprField field_spec(const json& spec, const std::string& path, std::size_t dim) {
    std::vector<std::string> comps;
    std::size_t np = 0;
    if (spec.is_object()) {
        comps = strings(need(spec, "components", path), key_path(path, "components"));
        np = count_or(spec, "params", path, 0);
    } else {
        comps = strings(spec, path);
    }
    if (comps.size() != dim)
        throw ConfigError(path, "expected " + std::to_string(dim) + " components for the patch dimension");
    return guarded(path, [&] { return ExprField::parse(comps, np); });
}

// A field name, or an inline field stored under its JSON path.
const ExprField& field_ref(const json& j, const std::string& path, const Context& c, std::string* name = nullptr) {
    if (j.is_array() || j.is_object()) {
        auto [it, fresh] = c.s->fields.insert_or_assign(path, field_spec(j, path, c.dim));
        if (name) *name = path;
        return it->second;
    }
    std::string n = text(j, path);
    auto it = c.s->fields.find(n);
    if (it == c.s->fields.end()) throw ConfigError(path, "undeclared field '" + n + "'");
    if (name) *name = n;
    return it->second;
}

std::vector<double> params_for(const json& e, const std::string& path, const ExprField& f) {
    const json* pj = find(e, "params");
    std::vector<double> p = pj ? numbers(*pj, key_path(path, "params")) : std::vector<double>{};
    if (p.size() != f.nparams())
        throw ConfigError(key_path(path, "params"), "field takes " + std::to_string(f.nparams()) + " parameters");
    return p;
}

Expr expression(const json& j, const std::string& path, std::size_t dim) {
    std::string src = text(j, path);
    Symbols sym;
    sym.coords = dim;
    return guarded(path, [&] { return parse_expr(src, sym); });
}

Cube cube_spec(const json& j, const std::string& path, std::size_t dim) {
    Cube c;
    c.final_times = interval(need(j, "final", path), key_path(path, "final"));
    c.initial_times = interval(need(j, "initial", path), key_path(path, "initial"));
    c.space = intervals(need(j, "space", path), key_path(path, "space"), dim);
    guarded(path, [&] { c.validate(); });
    return c;
}

RecordSpacing spacing_spec(const json& e, const std::string& path) {
    RecordSpacing s;
    if (const json* j = find(e, "spacing")) {
        std::string p = key_path(path, "spacing");
        s.time = positive_or(*j, "time", p, s.time);
        s.space = positive_or(*j, "space", p, s.space);
    }
    return s;
}

RegularityClass class_spec(const json& j, const std::string& path) {
    std::string type = text(need(j, "type", path), key_path(path, "type"));
    int m = static_cast<int>(count_or(j, "m", path, 0));
    RegularityClass cls;
    if (type == "finite") cls = RegularityClass::finite(m);
    else if (type == "finite-lip") cls = RegularityClass::finite_lip(m);
    else if (type == "smooth") cls = RegularityClass::smooth(static_cast<int>(count_or(j, "truncation", path, 10)));
    else if (type == "analytic")
        cls = RegularityClass::real_analytic(numbers(need(j, "weights", path), key_path(path, "weights")),
                                             static_cast<int>(count_or(j, "truncation", path, 20)));
    else throw ConfigError(key_path(path, "type"), "unknown class '" + type + "'");
    guarded(path, [&] { cls.validate(); });
    return cls;
}

Region region_spec(const json& j, const std::string& path, std::size_t dim) {
    std::string type = text(need(j, "type", path), key_path(path, "type"));
    if (type == "skewed-ball")
        return Region::skewed_ball(number_or(j, "tc", path, 0.0), point(need(j, "xc", path), key_path(path, "xc"), dim),
                                   positive_or(j, "radius", path, 1.0));
    if (type == "ball") {
        auto c = numbers(need(j, "centre", path), key_path(path, "centre"));
        if (c.size() != dim + 2) throw ConfigError(key_path(path, "centre"), "expected (t1, t0, x...)");
        return Region::ball(c, positive_or(j, "radius", path, 1.0));
    }
    if (type == "cubes") {
        const json& cs = need(j, "cubes", path);
        if (!cs.is_array() || cs.empty()) throw ConfigError(key_path(path, "cubes"), "expected a non-empty array");
        std::vector<Cube> cubes;
        for (std::size_t i = 0; i < cs.size(); ++i) cubes.push_back(cube_spec(cs[i], index_path(key_path(path, "cubes"), i), dim));
        return Region::from_cubes(cubes);
    }
    throw ConfigError(key_path(path, "type"), "unknown region '" + type + "'");
}

bool expect(const json& e, const std::string& path, const std::string& yes, const std::string& no, bool def) {
    const json* v = find(e, "expect");
    if (!v) return def;
    std::string s = text(*v, key_path(path, "expect"));
    if (s == yes) return true;
    if (s == no) return false;
    throw ConfigError(key_path(path, "expect"), "expected '" + yes + "' or '" + no + "'");
}

ExperimentSpec experiment_spec(const std::string& kind, const json& e, const std::string& path, const Context& c) {
    const std::size_t n = c.dim;
    if (kind == "flow") {
        FlowExperiment x;
        const ExprField& f = field_ref(need(e, "field", path), key_path(path, "field"), c, &x.field);
        x.params = params_for(e, path, f);
        x.t0 = number_or(e, "t0", path, 0.0);
        x.t1 = number_or(e, "t1", path, 1.0);
        x.points = points(need(e, "points", path), key_path(path, "points"), n);
        x.oracle_steps = count_or(e, "oracle_steps", path, x.oracle_steps);
        if (x.oracle_steps == 0) throw ConfigError(key_path(path, "oracle_steps"), "must be positive");
        x.tol = positive_or(e, "tol", path, x.tol);
        x.tuples = count_or(e, "tuples", path, x.tuples);
        x.group_tol = positive_or(e, "group_tol", path, x.group_tol);
        return x;
    }
    if (kind == "seminorm") {
        SeminormExperiment x;
        const ExprField& f = field_ref(need(e, "field", path), key_path(path, "field"), c, &x.field);
        x.params = params_for(e, path, f);
        x.cls = class_spec(need(e, "class", path), key_path(path, "class"));
        x.K = grid_spec(need(e, "K", path), key_path(path, "K"), c);
        x.t = number_or(e, "t", path, 0.0);
        if (const json* v = find(e, "expected")) x.expected = number(*v, key_path(path, "expected"));
        x.tol = positive_or(e, "tol", path, x.tol);
        return x;
    }
    if (kind == "dil") {
        DilExperiment x;
        const ExprField& f = field_ref(need(e, "field", path), key_path(path, "field"), c, &x.field);
        x.params = params_for(e, path, f);
        x.points = points(need(e, "points", path), key_path(path, "points"), n);
        x.t = number_or(e, "t", path, 0.0);
        x.m = static_cast<int>(count_or(e, "m", path, 0));
        if (const json* v = find(e, "expected")) {
            x.expected = numbers(*v, key_path(path, "expected"));
            if (x.expected.size() != x.points.size())
                throw ConfigError(key_path(path, "expected"), "expected one value per point");
        }
        x.tol = positive_or(e, "tol", path, x.tol);
        return x;
    }
    if (kind == "cover") {
        CoverExperiment x{region_spec(need(e, "region", path), key_path(path, "region"), n), {}, true};
        x.options.resolution = count_or(e, "resolution", path, x.options.resolution);
        if (x.options.resolution == 0) throw ConfigError(key_path(path, "resolution"), "must be positive");
        x.options.overlap = number_or(e, "overlap", path, x.options.overlap);
        if (x.options.overlap < 0 || x.options.overlap >= 0.5)
            throw ConfigError(key_path(path, "overlap"), "must lie in [0, 0.5)");
        x.options.snap = number_or(e, "snap", path, 0.0);
        if (x.options.snap < 0) throw ConfigError(key_path(path, "snap"), "must be non-negative");
        x.options.verify_samples = count_or(e, "verify_samples", path, x.options.verify_samples);
        x.expect_admissible = expect(e, path, "admissible", "not-admissible", true);
        return x;
    }
    if (kind == "glue") {
        GlueExperiment x;
        const json& cs = need(e, "cubes", path);
        if (!cs.is_array() || cs.empty()) throw ConfigError(key_path(path, "cubes"), "expected a non-empty array");
        std::size_t np = 0;
        for (std::size_t i = 0; i < cs.size(); ++i) {
            std::string p = index_path(key_path(path, "cubes"), i), name;
            Cube cube = cube_spec(cs[i], p, n);
            const ExprField& f = field_ref(need(cs[i], "field", p), key_path(p, "field"), c, &name);
            if (i > 0 && f.nparams() != np) throw ConfigError(key_path(p, "field"), "fields disagree on parameter count");
            np = f.nparams();
            x.cubes.emplace_back(cube, name);
        }
        x.params = params_for(e, path, c.s->fields.at(x.cubes.front().second));
        x.spacing = spacing_spec(e, path);
        x.tol = positive_or(e, "tol", path, x.tol);
        x.expect_violation = expect(e, path, "violation", "consistent", false);
        if (const json* v = find(e, "gap")) x.gap = number(*v, key_path(path, "gap"));
        x.gap_tol = positive_or(e, "gap_tol", path, x.gap_tol);
        return x;
    }
    if (kind == "param-sweep") {
        SweepExperiment x;
        const ExprField& f = field_ref(need(e, "field", path), key_path(path, "field"), c, &x.field);
        if (f.nparams() == 0) throw ConfigError(key_path(path, "field"), "field has no parameters to sweep");
        const json& pj = need(e, "p0", path);
        x.p0 = pj.is_number() ? std::vector<double>{number(pj, key_path(path, "p0"))} : numbers(pj, key_path(path, "p0"));
        if (x.p0.size() != f.nparams()) throw ConfigError(key_path(path, "p0"), "one value per field parameter");
        x.index = count_or(e, "index", path, 0);
        if (x.index >= x.p0.size()) throw ConfigError(key_path(path, "index"), "parameter index out of range");
        if (const json* v = find(e, "p")) {
            x.ps = numbers(*v, key_path(path, "p"));
        } else {
            std::string dp = key_path(path, "dyadic");
            const json& d = need(e, "dyadic", path);
            std::size_t kmax = count_or(d, "kmax", dp, 10);
            std::string sides = text_or(d, "sides", dp, "plus");
            if (sides != "plus" && sides != "minus" && sides != "both")
                throw ConfigError(key_path(dp, "sides"), "expected plus, minus or both");
            for (std::size_t k = 1; k <= kmax; ++k) {
                double h = std::ldexp(1.0, -static_cast<int>(k));
                if (sides != "minus") x.ps.push_back(x.p0[x.index] + h);
                if (sides != "plus") x.ps.push_back(x.p0[x.index] - h);
            }
        }
        if (x.ps.empty()) throw ConfigError(key_path(path, "p"), "parameter grid must be non-empty");
        x.initial = interval_or(e, "initial", path, x.initial);
        x.final_times = interval_or(e, "final", path, x.final_times);
        x.K = grid_spec(need(e, "K", path), key_path(path, "K"), c);
        x.f = find(e, "f") ? expression(e["f"], key_path(path, "f"), n) : Expr::coord(0);
        std::string bound = text_or(e, "bound", path, "literal");
        if (bound != "literal" && bound != "corrected") throw ConfigError(key_path(path, "bound"), "expected literal or corrected");
        x.corrected_bound = bound == "corrected";
        x.slack = number_or(e, "slack", path, x.slack);
        return x;
    }
    if (kind == "exp-check") {
        ExpCheckExperiment x;
        const ExprField& X = field_ref(need(e, "field", path), key_path(path, "field"), c, &x.field);
        const ExprField& Y = field_ref(need(e, "perturbation", path), key_path(path, "perturbation"), c, &x.perturbation);
        if (X.nparams() || Y.nparams()) throw ConfigError(key_path(path, "field"), "exp-check needs parameter-free fields");
        x.eps = numbers(need(e, "eps", path), key_path(path, "eps"));
        if (x.eps.empty()) throw ConfigError(key_path(path, "eps"), "must be non-empty");
        x.initial = interval_or(e, "initial", path, x.initial);
        x.final_times = interval_or(e, "final", path, x.final_times);
        x.K = grid_spec(need(e, "K", path), key_path(path, "K"), c);
        x.margin = number_or(e, "margin", path, x.margin);
        x.slack = number_or(e, "slack", path, x.slack);
        return x;
    }
    if (kind == "inverse-check") {
        InverseExperiment x;
        std::string fp = find(e, "fields") ? key_path(path, "fields") : key_path(path, "field");
        const json& fj = find(e, "fields") ? e["fields"] : need(e, "field", path);
        x.fields = strings(fj, fp);
        for (std::size_t i = 0; i < x.fields.size(); ++i) {
            const ExprField& f = field_ref(json(x.fields[i]), fj.is_array() ? index_path(fp, i) : fp, c);
            if (f.nparams()) throw ConfigError(fp, "inverse-check needs parameter-free fields");
        }
        x.cube = cube_spec(need(e, "cube", path), key_path(path, "cube"), n);
        x.K = grid_spec(need(e, "K", path), key_path(path, "K"), c);
        x.spacing = spacing_spec(e, path);
        x.h = positive_or(e, "h", path, x.h);
        x.field_tol = positive_or(e, "field_tol", path, x.field_tol);
        x.flow_tol = positive_or(e, "flow_tol", path, x.flow_tol);
        return x;
    }
    if (kind == "metric-equiv") {
        MetricExperiment x;
        x.g1 = find(e, "g1") ? strings(e["g1"], key_path(path, "g1")) : c.s->metric;
        x.g2 = strings(need(e, "g2", path), key_path(path, "g2"));
        const auto& bounds = c.s->patch->bounds();
        guarded(key_path(path, "g1"), [&] { Patch::from_strings(bounds, x.g1); });
        guarded(key_path(path, "g2"), [&] { Patch::from_strings(bounds, x.g2); });
        x.K = grid_spec(need(e, "K", path), key_path(path, "K"), c);
        x.pairs = count_or(e, "pairs", path, x.pairs);
        if (const json* v = find(e, "range")) x.range = interval(*v, key_path(path, "range"));
        return x;
    }
    throw ConfigError(key_path(path, "kind"), "unknown experiment kind '" + kind + "'");
}

}  // namespace

Scenario parse_scenario(const json& doc) {
    Scenario s;
    s.doc = doc;
    if (!doc.is_object()) throw ConfigError("", "scenario must be a JSON object");
    std::string schema = text(need(doc, "schema", ""), "schema");
    if (schema != kScenarioSchema) throw ConfigError("schema", "unsupported schema '" + schema + "'");
    if (const json* v = find(doc, "seed")) {
        if (!v->is_number_unsigned()) throw ConfigError("seed", "expected a non-negative integer");
        s.seed = v->get<std::uint64_t>();
    }

    const json& pj = need(doc, "patch", "");
    auto bounds = intervals(need(pj, "bounds", "patch"), "patch.bounds", 0);
    const std::size_t n = bounds.size();
    if (const json* m = find(pj, "metric")) {
        s.metric = strings(*m, "patch.metric");
    } else {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) s.metric.push_back(i == j ? "1" : "0");
    }
    std::vector<std::string> chris;
    if (const json* c = find(pj, "christoffel")) chris = strings(*c, "patch.christoffel");
    s.patch = guarded("patch", [&] { return Patch::from_strings(bounds, s.metric, chris); });

    if (const json* fj = find(doc, "flow")) {
        s.flow.r = positive_or(*fj, "r", "flow", s.flow.r);
        s.flow.lambda_target = positive_or(*fj, "lambda_target", "flow", s.flow.lambda_target);
        if (s.flow.lambda_target >= 1) throw ConfigError("flow.lambda_target", "must be below 1");
        s.flow.alpha_max = positive_or(*fj, "alpha_max", "flow", s.flow.alpha_max);
        s.flow.tol = positive_or(*fj, "tol", "flow", s.flow.tol);
        s.flow.nodes = count_or(*fj, "nodes", "flow", s.flow.nodes);
        if (s.flow.nodes < 2) throw ConfigError("flow.nodes", "need at least 2");
        s.flow.max_iter = count_or(*fj, "max_iter", "flow", s.flow.max_iter);
    }

    if (const json* fs = find(doc, "fields")) {
        if (!fs->is_object()) throw ConfigError("fields", "expected an object of named fields");
        for (const auto& [name, spec] : fs->items()) {
            s.fields.emplace(name, field_spec(spec, key_path("fields", name), n));
        }
    }

    Context ctx{&s, n, {}};
    if (const json* gs = find(doc, "grids")) {
        if (!gs->is_object()) throw ConfigError("grids", "expected an object of named grids");
        for (const auto& [name, spec] : gs->items()) {
            if (spec.is_string()) throw ConfigError(key_path("grids", name), "grid aliases are not allowed");
            ctx.grids.emplace(name, grid_spec(spec, key_path("grids", name), ctx));
        }
    }

    const json* es = find(doc, "experiments");
    if (es && !es->is_array()) throw ConfigError("experiments", "expected an array");
    if (es)
        for (std::size_t i = 0; i < es->size(); ++i) {
            std::string path = index_path("experiments", i);
            const json& e = (*es)[i];
            Experiment x;
            x.index = i;
            x.kind = text(need(e, "kind", path), key_path(path, "kind"));
            x.name = text_or(e, "name", path, x.kind);
            x.spec = experiment_spec(x.kind, e, path, ctx);
            s.experiments.push_back(std::move(x));
        }
    return s;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("", std::string("invalid JSON: ") + e.what());
    }
    return parse_scenario(doc);
}

void apply_seed_override(Scenario& scenario) {
    const char* env = std::getenv("FLOWPRESHEAF_SEED");
    if (!env) return;
    std::string v(env);
    std::uint64_t seed = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), seed);
    if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size())
        throw ConfigError("FLOWPRESHEAF_SEED", "expected an unsigned integer, got '" + v + "'");
    scenario.seed = seed;
}

// ---- running -------------------------------------------------------------

bool Table::pass() const {
    return std::all_of(rows.begin(), rows.end(), [](const Row& r) { return !r.check || r.check->pass(); });
}

bool ExperimentReport::pass() const {
    return !error && std::all_of(tables.begin(), tables.end(), [](const Table& t) { return t.pass(); });
}

bool Report::pass() const {
    return std::all_of(experiments.begin(), experiments.end(), [](const ExperimentReport& e) { return e.pass(); });
}

namespace {

std::vector<std::string> coord_names(const std::string& prefix, std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 1; i <= n; ++i) out.push_back(prefix + std::to_string(i));
    return out;
}

std::vector<double> as_values(const Vec& v) { return {v.data(), v.data() + v.size()}; }

Row info(std::string invariant, std::vector<double> values) { return {std::move(invariant), std::move(values), std::nullopt}; }

Row checked(std::string invariant, std::vector<double> values, double measured, double threshold) {
    return {std::move(invariant), std::move(values), Check{measured, threshold}};
}

std::mt19937_64 experiment_rng(std::uint64_t seed, std::size_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index)};
    return std::mt19937_64(seq);
}

FieldPtr field_ptr(const Scenario& s, const std::string& name) { return std::make_shared<ExprField>(s.fields.at(name)); }

void run(const Scenario& s, const Experiment& e, const FlowExperiment& x, ExperimentReport& out, std::size_t workers) {
    const std::size_t n = s.patch->dim();
    FlowSolver solver(field_ptr(s, x.field), *s.patch, s.flow);
    const auto& X = s.fields.at(x.field);
    Table oracle{"oracle", coord_names("x", n), {}};
    oracle.columns.insert(oracle.columns.end(), {"t1", "error"});
    Table ratios{"ratios", {"point", "window", "t0", "alpha", "lambda", "max_ratio"}, {}};
    Table iters{"iterations", {"point", "window", "iterations", "bound"}, {}};
    Table weak{"weak", {"point", "residual"}, {}};

    std::vector<FlowTrajectory> trajs(x.points.size());
    std::vector<double> errors(x.points.size());
    parallel_for(x.points.size(), workers, [&](std::size_t i) {
        trajs[i] = solver.trajectory(x.t0, x.points[i], x.params, std::min(x.t0, x.t1), std::max(x.t0, x.t1));
        Vec a = trajs[i].eval(x.t1);
        Vec b = rk_oracle(X, *s.patch, x.t1, x.t0, x.points[i], x.params, x.oracle_steps);
        errors[i] = (a - b).lpNorm<Eigen::Infinity>();
    });
    std::vector<Expr> fs;
    for (std::size_t i = 0; i < n; ++i) {
        fs.push_back(Expr::coord(i));
        fs.push_back(Expr::binary(Expr::Kind::Mul, Expr::coord(i), Expr::coord(i)));
    }
    const double quad_tol = 1e-6;
    for (std::size_t i = 0; i < x.points.size(); ++i) {
        auto v = as_values(x.points[i]);
        v.insert(v.end(), {x.t1, errors[i]});
        oracle.rows.push_back(checked("picard-oracle-agreement", v, errors[i], x.tol));
        for (std::size_t w = 0; w < trajs[i].windows.size(); ++w) {
            const auto& r = trajs[i].windows[w];
            double worst = r.ratios.empty() ? 0.0 : *std::max_element(r.ratios.begin(), r.ratios.end());
            double di = static_cast<double>(i), dw = static_cast<double>(w);
            ratios.rows.push_back(checked("contraction-ratio", {di, dw, r.plan.t0, r.plan.alpha, r.plan.lambda, worst},
                                          worst, r.plan.lambda + 0.05));
            double bound = static_cast<double>(r.plan.iteration_bound(s.flow.tol));
            iters.rows.push_back(checked("iteration-bound", {di, dw, static_cast<double>(r.iterations), bound},
                                         static_cast<double>(r.iterations), bound));
        }
        double res = weak_residual(trajs[i], X, x.params, fs);
        weak.rows.push_back(checked("weak-characterization", {static_cast<double>(i), res}, res, 5 * quad_tol));
    }
    out.tables = {oracle, ratios, iters, weak};

    if (x.tuples > 0) {
        Table group{"group", {"t2", "t1", "t0", "point", "composition", "inverse"}, {}};
        auto rng = experiment_rng(s.seed, e.index);
        std::uniform_real_distribution<double> T(std::min(x.t0, x.t1), std::max(x.t0, x.t1));
        std::uniform_int_distribution<std::size_t> P(0, x.points.size() - 1);
        std::vector<FlowTuple> tuples;
        for (std::size_t k = 0; k < x.tuples; ++k) {
            double t2 = T(rng), t1 = T(rng), t0 = T(rng);
            tuples.push_back({t2, t1, t0, x.points[P(rng)]});
        }
        std::vector<std::pair<double, double>> res(tuples.size());
        parallel_for(tuples.size(), workers, [&](std::size_t k) {
            const auto& u = tuples[k];
            Vec y = solver.flow_map(u.t1, u.t0, u.x, x.params);
            res[k].first = (solver.flow_map(u.t2, u.t1, y, x.params) - solver.flow_map(u.t2, u.t0, u.x, x.params))
                               .lpNorm<Eigen::Infinity>();
            res[k].second = (solver.flow_map(u.t0, u.t1, y, x.params) - u.x).lpNorm<Eigen::Infinity>();
        });
        for (std::size_t k = 0; k < tuples.size(); ++k) {
            double pidx = 0;
            for (std::size_t i = 0; i < x.points.size(); ++i)
                if (x.points[i] == tuples[k].x) pidx = static_cast<double>(i);
            group.rows.push_back(checked("group-law",
                                         {tuples[k].t2, tuples[k].t1, tuples[k].t0, pidx, res[k].first, res[k].second},
                                         std::max(res[k].first, res[k].second), x.group_tol));
        }
        out.tables.push_back(group);
    }
}

void run(const Scenario& s, const Experiment&, const SeminormExperiment& x, ExperimentReport& out, std::size_t) {
    auto rep = seminorm(s.fields.at(x.field), *s.patch, x.t, x.params, x.cls, x.K);
    Table orders{"orders", {"order", "value"}, {}};
    for (std::size_t k = 0; k < rep.per_order.size(); ++k)
        orders.rows.push_back(info("per-order", {static_cast<double>(k), rep.per_order[k]}));
    Table value{"value", {"value", "expected"}, {}};
    if (x.expected)
        value.rows.push_back(checked("reference-value", {rep.value, *x.expected}, std::fabs(rep.value - *x.expected), x.tol));
    else
        value.rows.push_back(info("seminorm", {rep.value, NAN}));
    out.tables = {orders, value};
}

void run(const Scenario& s, const Experiment&, const DilExperiment& x, ExperimentReport& out, std::size_t workers) {
    const std::size_t n = s.patch->dim();
    std::vector<double> d(x.points.size());
    parallel_for(x.points.size(), workers, [&](std::size_t i) {
        d[i] = dilatation(s.fields.at(x.field), *s.patch, x.t, x.points[i], x.params, x.m).value;
    });
    Table t{"dilatation", coord_names("x", n), {}};
    t.columns.insert(t.columns.end(), {"dil", "expected"});
    for (std::size_t i = 0; i < x.points.size(); ++i) {
        auto v = as_values(x.points[i]);
        v.push_back(d[i]);
        if (x.expected.empty()) {
            v.push_back(NAN);
            t.rows.push_back(info("dilatation", v));
        } else {
            v.push_back(x.expected[i]);
            t.rows.push_back(checked("reference-value", v, std::fabs(d[i] - x.expected[i]), x.tol));
        }
    }
    out.tables = {t};
}

void run(const Scenario& s, const Experiment& e, const CoverExperiment& x, ExperimentReport& out, std::size_t) {
    const std::size_t n = x.region.dim();
    CoverOptions opt = x.options;
    opt.seed = s.seed + e.index;
    Table outcome{"admissibility", {"admissible", "expected"}, {}};
    std::vector<Cube> cubes;
    try {
        cubes = build_cover(x.region, opt);
    } catch (const NotAdmissible& err) {
        std::vector<double> v{0.0, x.expect_admissible ? 1.0 : 0.0};
        v.insert(v.end(), err.witness.begin(), err.witness.end());
        for (std::size_t i = 0; i < err.witness.size(); ++i)
            outcome.columns.push_back(i == 0 ? "w_t1" : i == 1 ? "w_t0" : "w_x" + std::to_string(i - 1));
        outcome.rows.push_back(checked("flow-admissible", v, x.expect_admissible ? 1.0 : 0.0, 0.0));
        out.tables = {outcome};
        return;
    }
    outcome.rows.push_back(checked("flow-admissible", {1.0, x.expect_admissible ? 1.0 : 0.0},
                                   x.expect_admissible ? 0.0 : 1.0, 0.0));

    Table t{"cubes", {"t1_lo", "t1_hi", "t0_lo", "t0_hi"}, {}};
    for (std::size_t i = 1; i <= n; ++i) {
        t.columns.push_back("x" + std::to_string(i) + "_lo");
        t.columns.push_back("x" + std::to_string(i) + "_hi");
    }
    t.columns.push_back("admissible");
    for (const auto& c : cubes) {
        std::vector<double> v;
        for (const auto& I : c.box()) v.insert(v.end(), {I.lo, I.hi});
        v.push_back(c.admissible() ? 1.0 : 0.0);
        t.rows.push_back(checked("cube-admissible", v, c.admissible() ? 0.0 : 1.0, 0.0));
    }

    auto rng = experiment_rng(s.seed, e.index);
    std::size_t inside = 0, missed = 0;
    std::vector<double> pt(n + 2);
    for (std::size_t k = 0; k < x.options.verify_samples; ++k) {
        for (std::size_t a = 0; a < n + 2; ++a)
            pt[a] = std::uniform_real_distribution<double>(x.region.bounds[a].lo, x.region.bounds[a].hi)(rng);
        if (!x.region.contains(pt)) continue;
        ++inside;
        bool hit = std::any_of(cubes.begin(), cubes.end(), [&](const Cube& c) { return c.contains(pt); });
        if (!hit) ++missed;
    }
    Table cov{"coverage", {"samples", "inside", "uncovered"}, {}};
    cov.rows.push_back(checked("cover-contains-region",
                               {static_cast<double>(x.options.verify_samples), static_cast<double>(inside),
                                static_cast<double>(missed)},
                               static_cast<double>(missed), 0.0));
    out.tables = {outcome, t, cov};
}

void run(const Scenario& s, const Experiment&, const GlueExperiment& x, ExperimentReport& out, std::size_t workers) {
    std::vector<LocalFlowRecord> records(x.cubes.size());
    parallel_for(x.cubes.size(), workers, [&](std::size_t i) {
        FlowSolver solver(field_ptr(s, x.cubes[i].second), *s.patch, s.flow);
        records[i] = LocalFlowRecord::from_solver(solver, x.cubes[i].first, x.params, x.spacing, x.cubes[i].second);
    });
    Table ov{"overlaps", {"i", "j", "residual", "samples"}, {}};
    for (std::size_t i = 0; i < records.size(); ++i)
        for (std::size_t j = i + 1; j < records.size(); ++j) {
            std::size_t samples = 0;
            auto r = overlap_residual(records[i], records[j], *s.patch, x.tol, &samples);
            if (!r) continue;
            std::vector<double> v{static_cast<double>(i), static_cast<double>(j), *r, static_cast<double>(samples)};
            if (x.expect_violation) ov.rows.push_back(info("overlap-residual", v));
            else ov.rows.push_back(checked("overlap-condition", v, *r, x.tol));
        }
    Table outcome{"outcome", {"violation", "expected", "i", "j", "residual"}, {}};
    std::optional<OverlapViolation> violation;
    try {
        glue(records, *s.patch, x.tol);
    } catch (const OverlapViolation& v) {
        violation = v;
    }
    double got = violation ? 1.0 : 0.0, want = x.expect_violation ? 1.0 : 0.0;
    outcome.rows.push_back(checked("gluing-outcome",
                                   {got, want, violation ? static_cast<double>(violation->pair.first) : NAN,
                                    violation ? static_cast<double>(violation->pair.second) : NAN,
                                    violation ? violation->residual : NAN},
                                   std::fabs(got - want), 0.0));
    out.tables = {ov, outcome};
    if (x.gap && violation) {
        double rel = std::fabs(violation->residual - *x.gap) / std::fabs(*x.gap);
        out.tables.push_back(
            Table{"gap", {"residual", "gap", "relative_error"}, {checked("closed-form-gap", {violation->residual, *x.gap, rel}, rel, x.gap_tol)}});
    }
}

void run(const Scenario& s, const Experiment&, const SweepExperiment& x, ExperimentReport& out, std::size_t workers) {
    auto pts = param_sweep(s.fields.at(x.field), *s.patch, x.p0, x.index, x.ps, x.initial, x.final_times, x.K, x.f,
                           s.flow, workers);
    Table d{"distances", {"p", "dp", "q0", "qlip", "bound", "corrected_bound", "ratio"}, {}};
    for (const auto& p : pts) {
        double b = x.corrected_bound ? p.corrected : p.bound;
        d.rows.push_back(checked(x.corrected_bound ? "gronwall-corrected" : "gronwall-bound",
                                 {p.p, p.dp, p.q0, p.qlip, p.bound, p.corrected, b > 0 ? p.q0 / b : NAN}, p.q0,
                                 (1 + x.slack) * b));
    }
    // monotone decrease as p approaches p0, separately on each side
    Table m{"monotone", {"side", "dp_prev", "dp", "q0_prev", "q0", "qlip_prev", "qlip"}, {}};
    const double c = x.p0[x.index];
    for (double side : {1.0, -1.0}) {
        std::vector<SweepPoint> sp;
        for (const auto& p : pts)
            if ((p.p - c) * side > 0) sp.push_back(p);
        std::stable_sort(sp.begin(), sp.end(), [](const SweepPoint& a, const SweepPoint& b) { return a.dp > b.dp; });
        for (std::size_t k = 1; k < sp.size(); ++k) {
            std::vector<double> v{side, sp[k - 1].dp, sp[k].dp, sp[k - 1].q0, sp[k].q0, sp[k - 1].qlip, sp[k].qlip};
            m.rows.push_back(checked("monotone-q0", v, sp[k].q0 - sp[k - 1].q0, 0.0));
            m.rows.push_back(checked("monotone-qlip", v, sp[k].qlip - sp[k - 1].qlip, 0.0));
        }
    }
    out.tables = {d, m};
    out.plot_columns = {"dp", "q0"};
    for (const auto& p : pts) out.plot.emplace_back(p.dp, p.q0);
    std::sort(out.plot.begin(), out.plot.end());
}

void run(const Scenario& s, const Experiment&, const ExpCheckExperiment& x, ExperimentReport& out, std::size_t workers) {
    auto r = exp_check(s.fields.at(x.field), s.fields.at(x.perturbation), *s.patch, x.eps, x.initial, x.final_times,
                       x.K, x.margin, s.flow, workers);
    Table k{"constant", {"L", "G"}, {info("gronwall-constant", {r.L, r.G})}};
    for (std::size_t i = 0; i < r.enlarged.size(); ++i) {
        k.columns.push_back("kprime" + std::to_string(i + 1) + "_lo");
        k.columns.push_back("kprime" + std::to_string(i + 1) + "_hi");
        k.rows[0].values.insert(k.rows[0].values.end(), {r.enlarged[i].lo, r.enlarged[i].hi});
    }
    Table g{"gronwall", {"eps", "q0", "field_p0", "q0_over_eps", "ratio"}, {}};
    for (const auto& p : r.points)
        g.rows.push_back(checked("exp-continuity", {p.eps, p.q, p.field, p.eps != 0 ? p.q / std::fabs(p.eps) : NAN, p.ratio},
                                 p.ratio, 1 + x.slack));
    out.tables = {k, g};
    out.plot_columns = {"eps", "q0"};
    for (const auto& p : r.points) out.plot.emplace_back(p.eps, p.q);
    std::sort(out.plot.begin(), out.plot.end());
}

void run(const Scenario& s, const Experiment&, const InverseExperiment& x, ExperimentReport& out, std::size_t workers) {
    std::vector<RoundTrip> r(x.fields.size());
    parallel_for(x.fields.size(), workers, [&](std::size_t i) {
        r[i] = inverse_check(s.fields.at(x.fields[i]), *s.patch, x.cube, x.K, x.spacing, s.flow, x.h);
    });
    Table t{"round-trip", {"field", "field_error", "flow_error"}, {}};
    for (std::size_t i = 0; i < r.size(); ++i) {
        std::vector<double> v{static_cast<double>(i), r[i].field_error, r[i].flow_error};
        t.rows.push_back(checked("exp-inverse-field", v, r[i].field_error, x.field_tol));
        t.rows.push_back(checked("exp-inverse-flow", v, r[i].flow_error, x.flow_tol));
    }
    out.tables = {t};
}

void run(const Scenario& s, const Experiment& e, const MetricExperiment& x, ExperimentReport& out, std::size_t) {
    Patch g1 = Patch::from_strings(s.patch->bounds(), x.g1), g2 = Patch::from_strings(s.patch->bounds(), x.g2);
    auto r = metric_equivalence_constant(g1, g2, x.K, x.pairs, s.seed + e.index);
    Table c{"constant", {"c", "eigen_bound", "lo", "hi"}, {}};
    if (x.range) {
        c.rows.push_back(checked("constant-lower", {r.c, r.eigen_bound, x.range->lo, x.range->hi}, x.range->lo - r.c, 0.0));
        c.rows.push_back(checked("constant-upper", {r.c, r.eigen_bound, x.range->lo, x.range->hi}, r.c - x.range->hi, 0.0));
    } else {
        c.rows.push_back(info("constant", {r.c, r.eigen_bound, NAN, NAN}));
    }
    double worst = 0.0;
    for (std::size_t k = 0; k < r.d1.size(); ++k)
        if (r.d1[k] > 0 && r.d2[k] > 0) worst = std::max({worst, r.d2[k] / (r.c * r.d1[k]), r.d1[k] / (r.c * r.d2[k])});
    Table p{"pairs", {"pairs", "c", "worst_ratio"}, {}};
    p.rows.push_back(checked("two-sided-inequality", {static_cast<double>(r.d1.size()), r.c, worst}, worst, 1 + 1e-9));
    out.tables = {c, p};
}

}  // namespace

ExperimentReport run_experiment(const Scenario& scenario, const Experiment& e, std::size_t workers) {
    ExperimentReport out;
    out.index = e.index;
    out.kind = e.kind;
    out.name = e.name;
    auto start = std::chrono::steady_clock::now();
    try {
        std::visit([&](const auto& spec) { run(scenario, e, spec, out, workers); }, e.spec);
    } catch (const std::exception& err) {
        out.tables.clear();
        out.error = "experiments[" + std::to_string(e.index) + "] (" + e.kind + " '" + e.name + "'): " + err.what();
    }
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

Report run_scenario(const Scenario& scenario, const RunOptions& opt) {
    Report r;
    r.scenario = scenario.doc;
    r.seed = scenario.seed;
    r.experiments.resize(scenario.experiments.size());
    std::size_t workers = std::max<std::size_t>(1, opt.workers);
    parallel_for(scenario.experiments.size(), workers, [&](std::size_t i) {
        r.experiments[i] = run_experiment(scenario, scenario.experiments[i], workers);
    });
    return r;
}

// ---- reports -------------------------------------------------------------

namespace {

json number_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string format_double(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_file(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << body;
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

json report_json(const Report& report) {
    json j;
    j["schema"] = kReportSchema;
    j["seed"] = report.seed;
    j["scenario"] = report.scenario;
    j["pass"] = report.pass();
    j["experiments"] = json::array();
    for (const auto& e : report.experiments) {
        json ej;
        ej["index"] = e.index;
        ej["kind"] = e.kind;
        ej["name"] = e.name;
        ej["pass"] = e.pass();
        ej["error"] = e.error ? json(*e.error) : json(nullptr);
        ej["tables"] = json::array();
        for (const auto& t : e.tables) {
            json tj;
            tj["name"] = t.name;
            tj["columns"] = t.columns;
            tj["pass"] = t.pass();
            tj["rows"] = json::array();
            for (const auto& r : t.rows) {
                json rj;
                rj["invariant"] = r.invariant;
                rj["values"] = json::array();
                for (double v : r.values) rj["values"].push_back(number_json(v));
                rj["measured"] = r.check ? number_json(r.check->measured) : json(nullptr);
                rj["threshold"] = r.check ? number_json(r.check->threshold) : json(nullptr);
                rj["pass"] = r.check ? json(r.check->pass()) : json(nullptr);
                tj["rows"].push_back(rj);
            }
            ej["tables"].push_back(tj);
        }
        if (!e.plot_columns.empty()) {
            json pj;
            pj["columns"] = e.plot_columns;
            pj["rows"] = json::array();
            for (const auto& [a, b] : e.plot) pj["rows"].push_back({number_json(a), number_json(b)});
            ej["plot"] = pj;
        }
        j["experiments"].push_back(ej);
    }
    return j;
}

json timings_json(const Report& report) {
    json j;
    j["experiments"] = json::array();
    double total = 0.0;
    for (const auto& e : report.experiments) {
        j["experiments"].push_back({{"index", e.index}, {"kind", e.kind}, {"seconds", e.seconds}});
        total += e.seconds;
    }
    j["total_seconds"] = total;
    return j;
}

std::vector<Format> parse_formats(const std::string& spec) {
    std::vector<Format> out;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "json") out.push_back(Format::Json);
        else if (item == "csv") out.push_back(Format::Csv);
        else throw UnknownFormat("unknown output format '" + item + "'");
    }
    if (out.empty()) throw UnknownFormat("no output format given");
    return out;
}

std::string table_csv(const Table& table) {
    std::string s = "invariant";
    for (const auto& c : table.columns) s += "," + c;
    s += ",measured,threshold,pass\n";
    for (const auto& r : table.rows) {
        s += r.invariant;
        for (double v : r.values) s += "," + format_double(v);
        s += "," + (r.check ? format_double(r.check->measured) : "");
        s += "," + (r.check ? format_double(r.check->threshold) : "");
        s += "," + std::string(r.check ? (r.check->pass() ? "true" : "false") : "");
        s += "\n";
    }
    return s;
}

std::vector<std::string> emit_report(const Report& report, const std::string& dir, const std::vector<Format>& formats) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir);
    std::vector<std::string> written;
    auto put = [&](const std::string& name, const std::string& body) {
        fs::path p = fs::path(dir) / name;
        write_file(p, body);
        written.push_back(p.string());
    };
    bool want_json = std::find(formats.begin(), formats.end(), Format::Json) != formats.end();
    bool want_csv = std::find(formats.begin(), formats.end(), Format::Csv) != formats.end();
    if (want_json) {
        put("report.json", report_json(report).dump(2) + "\n");
        put("timings.json", timings_json(report).dump(2) + "\n");
    }
    if (want_csv)
        for (const auto& e : report.experiments) {
            std::string stem = "e" + std::to_string(e.index) + "_" + e.kind + "_";
            for (const auto& t : e.tables) put(stem + t.name + ".csv", table_csv(t));
            if (!e.plot_columns.empty()) {
                std::string body = e.plot_columns[0] + "," + e.plot_columns[1] + "\n";
                for (const auto& [a, b] : e.plot) body += format_double(a) + "," + format_double(b) + "\n";
                put(stem + "plot.csv", body);
            }
        }
    return written;
}

}  // namespace flowpresheaf
