#include "flowpresheaf/presheaf.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "json.hpp"

namespace flowpresheaf {

namespace {

using json = nlohmann::json;

double slack_for(double v) { return 1e-9 * (1.0 + std::fabs(v)); }

bool inside(const Interval& I, double v) { return v >= I.lo - slack_for(v) && v <= I.hi + slack_for(v); }

std::vector<double> make_point(double t1, double t0, const Vec& x) {
    std::vector<double> p{t1, t0};
    p.insert(p.end(), x.data(), x.data() + x.size());
    return p;
}

Vec space_of(const std::vector<double>& p) {
    Vec x(static_cast<Eigen::Index>(p.size() - 2));
    for (std::size_t i = 2; i < p.size(); ++i) x[static_cast<Eigen::Index>(i - 2)] = p[i];
    return x;
}

double sup_norm(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

std::vector<double> axis_for(const Interval& I, double h) {
    if (I.width() <= 0) return {I.lo};
    if (h > 0) {
        double a = I.lo / h, b = I.hi / h;
        long long k0 = std::llround(a), k1 = std::llround(b);
        if (std::fabs(a - static_cast<double>(k0)) < 1e-9 && std::fabs(b - static_cast<double>(k1)) < 1e-9 &&
            k1 > k0) {
            // lattice-aligned faces: multiples of h, shared bit-for-bit between cubes
            std::vector<double> ax;
            for (long long k = k0; k <= k1; ++k) ax.push_back(h * static_cast<double>(k));
            return ax;
        }
    }
    std::size_t count = h > 0 ? static_cast<std::size_t>(std::ceil(I.width() / h - 1e-9)) + 1 : 2;
    count = std::max<std::size_t>(count, 2);
    std::vector<double> ax(count);
    for (std::size_t k = 0; k < count; ++k) ax[k] = I.lo + I.width() * static_cast<double>(k) / (count - 1);
    ax.back() = I.hi;
    return ax;
}

// cell index and weight of v on a sorted axis
void locate(const std::vector<double>& ax, double v, std::size_t& i, double& w) {
    if (ax.size() == 1) {
        i = 0;
        w = 0.0;
        return;
    }
    if (v <= ax.front()) {
        i = 0;
        w = 0.0;
        return;
    }
    if (v >= ax.back()) {
        i = ax.size() - 2;
        w = 1.0;
        return;
    }
    auto it = std::upper_bound(ax.begin(), ax.end(), v);
    i = static_cast<std::size_t>(it - ax.begin()) - 1;
    w = (v - ax[i]) / (ax[i + 1] - ax[i]);
}

json interval_json(const Interval& I) { return json::array({I.lo, I.hi}); }
Interval interval_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

json cube_json(const Cube& c) {
    json s = json::array();
    for (const auto& I : c.space) s.push_back(interval_json(I));
    return {{"final", interval_json(c.final_times)}, {"initial", interval_json(c.initial_times)}, {"space", s}};
}

Cube cube_from(const json& j) {
    Cube c;
    c.final_times = interval_from(j.at("final"));
    c.initial_times = interval_from(j.at("initial"));
    for (const auto& I : j.at("space")) c.space.push_back(interval_from(I));
    return c;
}

}  // namespace

// ---- Cube ------------------------------------------------------------------

bool Cube::admissible() const {
    if (!(final_times.width() > 0) || !(initial_times.width() > 0)) return false;
    for (const auto& I : space)
        if (!(I.width() > 0)) return false;
    return final_times.contains(initial_times);
}

void Cube::validate() const {
    if (!admissible())
        throw DomainError("cube needs nonempty interiors and initial times inside final times");
}

bool Cube::contains(double t1, double t0, const Vec& x, double slack) const {
    if (t1 < final_times.lo - slack || t1 > final_times.hi + slack) return false;
    if (t0 < initial_times.lo - slack || t0 > initial_times.hi + slack) return false;
    for (std::size_t i = 0; i < space.size(); ++i) {
        double v = x[static_cast<Eigen::Index>(i)];
        if (v < space[i].lo - slack || v > space[i].hi + slack) return false;
    }
    return true;
}

bool Cube::contains(const std::vector<double>& p) const { return contains(p[0], p[1], space_of(p)); }

bool Cube::contains(const Cube& o) const {
    if (!final_times.contains(o.final_times) || !initial_times.contains(o.initial_times)) return false;
    for (std::size_t i = 0; i < space.size(); ++i)
        if (!space[i].contains(o.space[i])) return false;
    return true;
}

std::optional<Cube> Cube::intersect(const Cube& o) const {
    auto cut = [](const Interval& a, const Interval& b) -> std::optional<Interval> {
        Interval r{std::max(a.lo, b.lo), std::min(a.hi, b.hi)};
        if (r.lo > r.hi) return std::nullopt;
        return r;
    };
    Cube c;
    auto f = cut(final_times, o.final_times), s = cut(initial_times, o.initial_times);
    if (!f || !s) return std::nullopt;
    c.final_times = *f;
    c.initial_times = *s;
    for (std::size_t i = 0; i < space.size(); ++i) {
        auto u = cut(space[i], o.space[i]);
        if (!u) return std::nullopt;
        c.space.push_back(*u);
    }
    return c;
}

std::vector<double> Cube::centre() const {
    std::vector<double> c{final_times.mid(), initial_times.mid()};
    for (const auto& I : space) c.push_back(I.mid());
    return c;
}

std::vector<Interval> Cube::box() const {
    std::vector<Interval> b{final_times, initial_times};
    b.insert(b.end(), space.begin(), space.end());
    return b;
}

bool Cube::operator==(const Cube& o) const {
    return final_times == o.final_times && initial_times == o.initial_times && space == o.space;
}

// ---- Region ----------------------------------------------------------------

Region Region::from_cubes(std::vector<Cube> cubes) {
    if (cubes.empty()) throw DomainError("region needs at least one cube");
    Region r;
    r.bounds = cubes.front().box();
    for (const auto& c : cubes) {
        auto b = c.box();
        for (std::size_t i = 0; i < b.size(); ++i) {
            r.bounds[i].lo = std::min(r.bounds[i].lo, b[i].lo);
            r.bounds[i].hi = std::max(r.bounds[i].hi, b[i].hi);
        }
    }
    r.cubes = cubes;
    r.contains = [cubes](const std::vector<double>& p) {
        for (const auto& c : cubes)
            if (c.contains(p)) return true;
        return false;
    };
    return r;
}

Region Region::skewed_ball(double tc, const Vec& xc, double radius) {
    Region r;
    r.bounds = {{tc - 2 * radius, tc + 2 * radius}, {tc - radius, tc + radius}};
    for (Eigen::Index i = 0; i < xc.size(); ++i) r.bounds.push_back({xc[i] - radius, xc[i] + radius});
    r.contains = [tc, xc, radius](const std::vector<double>& p) {
        double s = p[0] - p[1], u = p[1] - tc;
        double d2 = s * s + u * u;
        for (Eigen::Index i = 0; i < xc.size(); ++i) {
            double v = p[static_cast<std::size_t>(i) + 2] - xc[i];
            d2 += v * v;
        }
        return d2 < radius * radius;
    };
    return r;
}

Region Region::ball(std::vector<double> centre, double radius) {
    Region r;
    for (double c : centre) r.bounds.push_back({c - radius, c + radius});
    r.contains = [centre, radius](const std::vector<double>& p) {
        double d2 = 0.0;
        for (std::size_t i = 0; i < centre.size(); ++i) d2 += (p[i] - centre[i]) * (p[i] - centre[i]);
        return d2 < radius * radius;
    };
    return r;
}

// ---- admissibility ---------------------------------------------------------

namespace {

bool segment_inside(const Region& W, const std::vector<double>& a, const std::vector<double>& b) {
    constexpr int steps = 32;
    std::vector<double> q(a.size());
    for (int k = 0; k <= steps; ++k) {
        double s = static_cast<double>(k) / steps;
        for (std::size_t i = 0; i < a.size(); ++i) q[i] = a[i] + s * (b[i] - a[i]);
        if (!W.contains(q)) return false;
    }
    return true;
}

std::vector<std::vector<double>> region_samples(const Region& W, std::size_t count, std::mt19937_64& rng) {
    std::vector<std::uniform_real_distribution<double>> dist;
    for (const auto& I : W.bounds) dist.emplace_back(I.lo, I.hi);
    std::vector<std::vector<double>> out;
    std::vector<double> p(W.bounds.size());
    for (std::size_t tries = 0; out.size() < count && tries < 50 * count; ++tries) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = dist[i](rng);
        if (W.contains(p)) out.push_back(p);
    }
    return out;
}

}  // namespace

AdmissibleResult admissible_check(const Region& W, std::size_t samples, std::uint64_t seed) {
    AdmissibleResult res;
    std::mt19937_64 rng(seed);
    auto pts = region_samples(W, samples, rng);
    double span = W.bounds[0].width();
    auto fail = [&](const std::vector<double>& p, const std::string& why) {
        res.admissible = false;
        res.witness = p;
        res.reason = why;
        return res;
    };
    for (const auto& p1 : pts) {
        ++res.checked;
        // property (b) at p1, then property (a) at its diagonal point
        std::vector<double> p0 = p1;
        p0[0] = p1[1];
        if (!W.contains(p0)) return fail(p1, "diagonal point (t0, t0, x) is outside the region");
        if (!segment_inside(W, p1, p0)) return fail(p1, "segment to the diagonal leaves the region");
        ++res.checked;
        bool found = false;
        for (int k = 2; k <= 14 && !found; ++k) {
            for (double sgn : {1.0, -1.0}) {
                std::vector<double> p2 = p0;
                p2[0] = p0[1] + sgn * span * std::ldexp(1.0, -k);
                if (p2[0] != p0[1] && W.contains(p2) && segment_inside(W, p0, p2)) {
                    res.partner = p2;
                    found = true;
                    break;
                }
            }
        }
        if (!found) return fail(p0, "no segment leaves the diagonal point inside the region");
    }
    if (pts.empty()) return fail({}, "region has no samples");
    return res;
}

// ---- covers ----------------------------------------------------------------

std::vector<Cube> build_cover(const Region& W, const CoverOptions& opt) {
    auto adm = admissible_check(W, 2000, opt.seed);
    if (!adm.admissible) throw NotAdmissible(adm.witness, adm.reason);
    if (!W.cubes.empty()) {
        bool all = std::all_of(W.cubes.begin(), W.cubes.end(), [](const Cube& c) { return c.admissible(); });
        if (all) return W.cubes;
    }
    if (opt.resolution == 0 || !(opt.overlap >= 0 && opt.overlap < 1))
        throw DomainError("cover resolution must be positive and overlap in [0, 1)");

    const std::size_t n = W.dim();
    const std::size_t axes = n + 1;  // t0 and x
    std::mt19937_64 rng(opt.seed);
    auto samples = region_samples(W, opt.verify_samples, rng);
    double reach = 0.0;
    for (const auto& p : samples) reach = std::max(reach, std::fabs(p[0] - p[1]));
    reach = reach * 1.05 + 1e-12;

    auto snap_lo = [&](double v) { return opt.snap > 0 ? opt.snap * std::floor(v / opt.snap + 1e-9) : v; };
    auto snap_hi = [&](double v) { return opt.snap > 0 ? opt.snap * std::ceil(v / opt.snap - 1e-9) : v; };
    auto cell_interval = [&](std::size_t a, std::size_t k) {
        const Interval& B = W.bounds[a + 1];
        double w = B.width() / static_cast<double>(opt.resolution);
        double lo = B.lo + w * static_cast<double>(k) - 0.5 * opt.overlap * w;
        double hi = B.lo + w * static_cast<double>(k + 1) + 0.5 * opt.overlap * w;
        return Interval{snap_lo(std::max(lo, B.lo)), snap_hi(std::min(hi, B.hi))};
    };
    auto make_cube = [&](const std::vector<std::size_t>& idx) {
        Cube c;
        c.initial_times = cell_interval(0, idx[0]);
        for (std::size_t a = 1; a < axes; ++a) c.space.push_back(cell_interval(a, idx[a]));
        c.final_times = {snap_lo(c.initial_times.lo - reach), snap_hi(c.initial_times.hi + reach)};
        return c;
    };
    auto cell_of = [&](const std::vector<double>& p) {
        std::vector<std::size_t> idx(axes);
        for (std::size_t a = 0; a < axes; ++a) {
            const Interval& B = W.bounds[a + 1];
            double s = (p[a + 1] - B.lo) / B.width() * static_cast<double>(opt.resolution);
            idx[a] = std::min(opt.resolution - 1, static_cast<std::size_t>(std::max(0.0, std::floor(s))));
        }
        return idx;
    };

    std::vector<std::vector<std::size_t>> kept;
    std::vector<Cube> cover;
    auto add = [&](const std::vector<double>& p) {
        auto idx = cell_of(p);
        if (std::find(kept.begin(), kept.end(), idx) != kept.end()) return;
        kept.push_back(idx);
        cover.push_back(make_cube(idx));
    };
    for (const auto& p : samples) add(p);

    auto check = region_samples(W, opt.verify_samples, rng);
    for (const auto& p : check) {
        bool covered = std::any_of(cover.begin(), cover.end(), [&](const Cube& c) { return c.contains(p); });
        if (!covered) add(p);
        if (!std::any_of(cover.begin(), cover.end(), [&](const Cube& c) { return c.contains(p); }))
            throw NotAdmissible(p, "cover construction missed a sample of the region");
    }
    // canonical order
    std::vector<std::size_t> order(cover.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return kept[a] < kept[b]; });
    std::vector<Cube> sorted;
    for (std::size_t i : order) sorted.push_back(cover[i]);
    return sorted;
}

SegmentCover segment_cover(const Region& W, const std::vector<double>& point, double piece_length) {
    if (!W.contains(point)) throw NotAdmissible(point, "point is outside the region");
    if (!(piece_length > 0)) throw DomainError("piece length must be positive");
    double t1 = point[0], t0 = point[1];
    Vec x = space_of(point);
    std::size_t K = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::fabs(t1 - t0) / piece_length - 1e-9)));
    auto box_inside = [&](const Cube& c) {
        auto b = c.box();
        std::size_t dims = b.size(), total = 1;
        for (std::size_t i = 0; i < dims; ++i) total *= 3;
        std::vector<double> q(dims);
        for (std::size_t idx = 0; idx < total; ++idx) {
            std::size_t rest = idx;
            for (std::size_t i = 0; i < dims; ++i) {
                double s = static_cast<double>(rest % 3) / 2.0;
                rest /= 3;
                double m = b[i].mid(), half = 0.5 * b[i].width() * 0.999;
                q[i] = m + (2 * s - 1) * half;
            }
            if (!W.contains(q)) return false;
        }
        return true;
    };
    SegmentCover sc;
    for (std::size_t k = 0; k < K; ++k) {
        double a = t0 + (t1 - t0) * static_cast<double>(k) / K;
        double b = t0 + (t1 - t0) * static_cast<double>(k + 1) / K;
        double lo = std::min(a, b), hi = std::max(a, b);
        double delta = 0.5 * piece_length;
        Cube c;
        for (;;) {
            c.final_times = {lo - delta, hi + delta};
            c.initial_times = {t0 - delta, t0 + delta};
            c.space.clear();
            for (Eigen::Index i = 0; i < x.size(); ++i) c.space.push_back({x[i] - delta, x[i] + delta});
            if (box_inside(c)) break;
            delta /= 2;
            if (delta < 1e-9) throw NotAdmissible(point, "segment to the diagonal leaves the region");
        }
        sc.pieces.push_back(c);
    }
    Cube m = sc.pieces.front();
    for (const auto& c : sc.pieces) {
        m.final_times = {std::min(m.final_times.lo, c.final_times.lo), std::max(m.final_times.hi, c.final_times.hi)};
        m.initial_times = {std::max(m.initial_times.lo, c.initial_times.lo),
                           std::min(m.initial_times.hi, c.initial_times.hi)};
        for (std::size_t i = 0; i < m.space.size(); ++i)
            m.space[i] = {std::max(m.space[i].lo, c.space[i].lo), std::min(m.space[i].hi, c.space[i].hi)};
    }
    m.validate();
    sc.merged = m;
    return sc;
}

// ---- LocalFlowRecord -------------------------------------------------------

LocalFlowRecord::LocalFlowRecord(Cube cube, std::vector<std::vector<double>> axes, std::vector<double> values,
                                 std::string provenance, double tol)
    : cube_(std::move(cube)), axes_(std::move(axes)), values_(std::move(values)),
      provenance_(std::move(provenance)), tol_(tol) {
    if (axes_.size() != cube_.dim() + 2) throw GridIncompatible("record axes do not match the cube");
    for (const auto& ax : axes_) {
        if (ax.empty()) throw GridIncompatible("empty record axis");
        for (std::size_t k = 1; k < ax.size(); ++k)
            if (!(ax[k] > ax[k - 1])) throw GridIncompatible("record axis is not increasing");
    }
    if (values_.size() != nodes() * dim()) throw GridIncompatible("record value count does not match the grid");
}

std::vector<std::vector<double>> LocalFlowRecord::grid_axes(const Cube& cube, const RecordSpacing& spacing) {
    std::vector<std::vector<double>> axes{axis_for(cube.final_times, spacing.time),
                                          axis_for(cube.initial_times, spacing.time)};
    for (const auto& I : cube.space) axes.push_back(axis_for(I, spacing.space));
    return axes;
}

std::size_t LocalFlowRecord::nodes() const {
    std::size_t n = 1;
    for (const auto& ax : axes_) n *= ax.size();
    return n;
}

LocalFlowRecord LocalFlowRecord::from_solver(const FlowSolver& solver, const Cube& cube,
                                             const std::vector<double>& p, const RecordSpacing& spacing,
                                             std::string provenance) {
    cube.validate();
    auto axes = grid_axes(cube, spacing);
    const std::size_t n = cube.dim();
    std::size_t n1 = axes[0].size(), n0 = axes[1].size(), nx = 1;
    for (std::size_t i = 0; i < n; ++i) nx *= axes[i + 2].size();
    std::vector<double> values(n1 * n0 * nx * n);
    Vec x(static_cast<Eigen::Index>(n));
    for (std::size_t i0 = 0; i0 < n0; ++i0) {
        double t0 = axes[1][i0];
        for (std::size_t ix = 0; ix < nx; ++ix) {
            std::size_t rest = ix;
            for (std::size_t a = n; a-- > 0;) {
                x[static_cast<Eigen::Index>(a)] = axes[a + 2][rest % axes[a + 2].size()];
                rest /= axes[a + 2].size();
            }
            FlowTrajectory tr = solver.trajectory(t0, x, p, axes[0].front(), axes[0].back());
            for (std::size_t i1 = 0; i1 < n1; ++i1) {
                double t1 = axes[0][i1];
                Vec y = t1 == t0 ? x : tr.eval(t1);
                std::size_t node = (i1 * n0 + i0) * nx + ix;
                for (std::size_t c = 0; c < n; ++c) values[node * n + c] = y[static_cast<Eigen::Index>(c)];
            }
        }
    }
    LocalFlowRecord rec(cube, std::move(axes), std::move(values), std::move(provenance), solver.config().tol);
    rec.source_ = [solver, p](double t1, double t0, const Vec& y) { return solver.flow_map(t1, t0, y, p); };
    return rec;
}

LocalFlowRecord LocalFlowRecord::from_function(const FlowFn& flow, const Cube& cube, const RecordSpacing& spacing,
                                               std::string provenance) {
    cube.validate();
    auto axes = grid_axes(cube, spacing);
    const std::size_t n = cube.dim();
    std::size_t total = 1;
    for (const auto& ax : axes) total *= ax.size();
    std::vector<double> values(total * n);
    std::vector<double> pt(axes.size());
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t rest = flat;
        for (std::size_t a = axes.size(); a-- > 0;) {
            pt[a] = axes[a][rest % axes[a].size()];
            rest /= axes[a].size();
        }
        Vec x = space_of(pt);
        Vec y = pt[0] == pt[1] ? x : flow(pt[0], pt[1], x);
        for (std::size_t c = 0; c < n; ++c) values[flat * n + c] = y[static_cast<Eigen::Index>(c)];
    }
    LocalFlowRecord rec(cube, std::move(axes), std::move(values), std::move(provenance), 0.0);
    rec.source_ = flow;
    return rec;
}

Vec LocalFlowRecord::node_value(std::size_t flat) const {
    Vec v(static_cast<Eigen::Index>(dim()));
    for (std::size_t c = 0; c < dim(); ++c) v[static_cast<Eigen::Index>(c)] = values_[flat * dim() + c];
    return v;
}

std::vector<std::vector<double>> LocalFlowRecord::node_points() const {
    std::vector<std::vector<double>> pts;
    std::size_t total = nodes();
    pts.reserve(total);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::vector<double> p(axes_.size());
        std::size_t rest = flat;
        for (std::size_t a = axes_.size(); a-- > 0;) {
            p[a] = axes_[a][rest % axes_[a].size()];
            rest /= axes_[a].size();
        }
        pts.push_back(std::move(p));
    }
    return pts;
}

Vec LocalFlowRecord::query(double t1, double t0, const Vec& x) const {
    double e = 0.0;
    return query(t1, t0, x, e);
}

Vec LocalFlowRecord::query(double t1, double t0, const Vec& x, double& error) const {
    error = 0.0;
    std::vector<double> p = make_point(t1, t0, x);
    for (std::size_t a = 0; a < axes_.size(); ++a)
        if (!inside({axes_[a].front(), axes_[a].back()}, p[a]))
            throw DomainError("query outside the record cube");
    if (t1 == t0) return x;

    const std::size_t A = axes_.size();
    std::vector<std::size_t> idx(A), stride(A);
    std::vector<double> w(A);
    std::size_t s = 1;
    for (std::size_t a = A; a-- > 0;) {
        stride[a] = s;
        s *= axes_[a].size();
    }
    std::vector<std::size_t> frac;  // axes with a strictly fractional weight
    std::size_t base = 0;
    for (std::size_t a = 0; a < A; ++a) {
        locate(axes_[a], p[a], idx[a], w[a]);
        if (w[a] >= 1.0) {
            ++idx[a];
            w[a] = 0.0;
        }
        if (w[a] > 0.0) frac.push_back(a);
        base += idx[a] * stride[a];
    }
    const std::size_t n = dim();
    Vec out = Vec::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t mask = 0; mask < (std::size_t{1} << frac.size()); ++mask) {
        double weight = 1.0;
        std::size_t node = base;
        for (std::size_t b = 0; b < frac.size(); ++b) {
            std::size_t a = frac[b];
            if (mask >> b & 1) {
                weight *= w[a];
                node += stride[a];
            } else {
                weight *= 1.0 - w[a];
            }
        }
        for (std::size_t c = 0; c < n; ++c) out[static_cast<Eigen::Index>(c)] += weight * values_[node * n + c];
    }
    // linear interpolation error from second differences along each fractional axis
    for (std::size_t a : frac) {
        std::size_t m = axes_[a].size();
        double est = 0.0;
        if (m >= 3) {
            std::size_t c0 = idx[a] == 0 ? 0 : idx[a] - 1;
            if (c0 + 2 >= m) c0 = m - 3;
            std::size_t node0 = base - idx[a] * stride[a] + c0 * stride[a];
            for (std::size_t c = 0; c < n; ++c) {
                double d2 = values_[node0 * n + c] - 2 * values_[(node0 + stride[a]) * n + c] +
                            values_[(node0 + 2 * stride[a]) * n + c];
                est = std::max(est, std::fabs(d2));
            }
            est *= 0.5 * w[a] * (1 - w[a]);
        } else {
            for (std::size_t c = 0; c < n; ++c)
                est = std::max(est, std::fabs(values_[(base + stride[a]) * n + c] - values_[base * n + c]));
            est *= w[a] * (1 - w[a]);
        }
        error += est;
    }
    return out;
}

LocalFlowRecord LocalFlowRecord::restrict(const Cube& sub) const {
    if (!cube_.contains(sub)) throw DomainError("restriction target is not inside the record cube");
    auto subbox = sub.box();
    std::vector<std::vector<std::size_t>> keep(axes_.size());
    std::vector<std::vector<double>> axes(axes_.size());
    for (std::size_t a = 0; a < axes_.size(); ++a) {
        for (std::size_t k = 0; k < axes_[a].size(); ++k)
            if (inside(subbox[a], axes_[a][k])) {
                keep[a].push_back(k);
                axes[a].push_back(axes_[a][k]);
            }
        if (axes[a].empty() || std::fabs(axes[a].front() - subbox[a].lo) > slack_for(subbox[a].lo) ||
            std::fabs(axes[a].back() - subbox[a].hi) > slack_for(subbox[a].hi))
            throw GridIncompatible("restriction faces are not grid nodes");
    }
    std::vector<std::size_t> stride(axes_.size());
    std::size_t s = 1;
    for (std::size_t a = axes_.size(); a-- > 0;) {
        stride[a] = s;
        s *= axes_[a].size();
    }
    std::size_t total = 1;
    for (const auto& k : keep) total *= k.size();
    std::vector<double> values;
    values.reserve(total * dim());
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t rest = flat, node = 0;
        for (std::size_t a = axes_.size(); a-- > 0;) {
            node += keep[a][rest % keep[a].size()] * stride[a];
            rest /= keep[a].size();
        }
        for (std::size_t c = 0; c < dim(); ++c) values.push_back(values_[node * dim() + c]);
    }
    LocalFlowRecord r(sub, std::move(axes), std::move(values), provenance_, tol_);
    r.source_ = source_;
    return r;
}

double LocalFlowRecord::composition_residual(std::size_t max_triples, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    auto pick = [&](const std::vector<double>& ax) {
        return ax[std::uniform_int_distribution<std::size_t>(0, ax.size() - 1)(rng)];
    };
    std::vector<double> mids;  // final-time nodes that are also initial times
    for (double t : axes_[0])
        if (inside(cube_.initial_times, t)) mids.push_back(t);
    if (mids.empty()) return 0.0;
    double worst = 0.0;
    Vec x(static_cast<Eigen::Index>(dim()));
    for (std::size_t k = 0; k < max_triples; ++k) {
        double t0 = pick(axes_[1]), t1 = pick(mids), t2 = pick(axes_[0]);
        for (std::size_t a = 0; a < dim(); ++a) x[static_cast<Eigen::Index>(a)] = pick(axes_[a + 2]);
        Vec y = query(t1, t0, x);
        if (!cube_.contains(t2, t1, y, 1e-12)) continue;
        worst = std::max(worst, sup_norm(query(t2, t1, y) - query(t2, t0, x)));
    }
    return worst;
}

bool LocalFlowRecord::operator==(const LocalFlowRecord& o) const {
    return cube_ == o.cube_ && axes_ == o.axes_ && values_ == o.values_ && provenance_ == o.provenance_ &&
           tol_ == o.tol_;
}

// ---- overlaps and gluing ---------------------------------------------------

std::optional<double> overlap_residual(const LocalFlowRecord& a, const LocalFlowRecord& b, const Patch& patch,
                                       double glue_tol, std::size_t* samples) {
    auto R = a.cube().intersect(b.cube());
    if (samples) *samples = 0;
    if (!R) return std::nullopt;
    double worst = 0.0;
    std::size_t count = 0;
    for (const LocalFlowRecord* rec : {&a, &b}) {
        for (const auto& pt : rec->node_points()) {
            bool in = true;
            auto box = R->box();
            for (std::size_t i = 0; i < pt.size() && in; ++i) in = inside(box[i], pt[i]);
            if (!in) continue;
            Vec x = space_of(pt);
            double ea = 0.0, eb = 0.0;
            Vec va = a.query(pt[0], pt[1], x, ea), vb = b.query(pt[0], pt[1], x, eb);
            if (ea + eb > glue_tol / 2)
                throw GridIncompatible("interpolation error " + std::to_string(ea + eb) +
                                       " exceeds half the glue tolerance");
            Vec d = va - vb;
            Mat g = patch.metric(0.5 * (va + vb));
            worst = std::max(worst, std::sqrt(std::max(0.0, d.dot(g * d))));
            ++count;
        }
    }
    if (samples) *samples = count;
    return worst;
}

PresheafElement::PresheafElement(std::vector<LocalFlowRecord> records, std::vector<OverlapEntry> table, double tol)
    : records_(std::move(records)), table_(std::move(table)), tol_(tol) {}

std::vector<Cube> PresheafElement::cover() const {
    std::vector<Cube> c;
    for (const auto& r : records_) c.push_back(r.cube());
    return c;
}

std::size_t PresheafElement::route(double t1, double t0, const Vec& x) const {
    std::vector<double> p = make_point(t1, t0, x);
    std::size_t best = records_.size();
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const Cube& c = records_[i].cube();
        if (!c.contains(t1, t0, x, slack_for(std::max({std::fabs(t1), std::fabs(t0), sup_norm(x)})))) continue;
        auto m = c.centre();
        double d = 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) d += (p[k] - m[k]) * (p[k] - m[k]);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    if (best == records_.size()) throw DomainError("query outside every cube of the cover");
    return best;
}

bool PresheafElement::contains(double t1, double t0, const Vec& x) const {
    for (const auto& r : records_)
        if (r.cube().contains(t1, t0, x)) return true;
    return false;
}

Vec PresheafElement::query(double t1, double t0, const Vec& x) const {
    return records_[route(t1, t0, x)].query(t1, t0, x);
}

LocalFlowRecord PresheafElement::restrict(const Cube& sub) const {
    for (const auto& r : records_)
        if (r.cube() == sub) return r;
    for (const auto& r : records_)
        if (r.cube().contains(sub)) return r.restrict(sub);
    throw DomainError("no record of the cover contains the restriction target");
}

std::string PresheafElement::to_json() const {
    json recs = json::array();
    for (const auto& r : records_)
        recs.push_back({{"cube", cube_json(r.cube())},
                        {"axes", r.axes()},
                        {"values", r.values()},
                        {"provenance", r.provenance()},
                        {"tol", r.tol()}});
    json table = json::array();
    for (const auto& e : table_) {
        json row = {{"i", e.i}, {"j", e.j}, {"samples", e.samples}};
        row["residual"] = e.residual ? json(*e.residual) : json(nullptr);
        table.push_back(row);
    }
    json doc = {{"schema", "flowpresheaf.presheaf/1"}, {"tol", tol_}, {"records", recs}, {"overlaps", table}};
    return doc.dump();
}

PresheafElement PresheafElement::from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
        if (doc.at("schema") != "flowpresheaf.presheaf/1") throw ConfigError("schema", "unsupported presheaf schema");
        std::vector<LocalFlowRecord> recs;
        for (const auto& r : doc.at("records"))
            recs.emplace_back(cube_from(r.at("cube")), r.at("axes").get<std::vector<std::vector<double>>>(),
                              r.at("values").get<std::vector<double>>(), r.at("provenance").get<std::string>(),
                              r.at("tol").get<double>());
        std::vector<OverlapEntry> table;
        for (const auto& row : doc.at("overlaps")) {
            OverlapEntry e;
            e.i = row.at("i").get<std::size_t>();
            e.j = row.at("j").get<std::size_t>();
            e.samples = row.at("samples").get<std::size_t>();
            if (!row.at("residual").is_null()) e.residual = row.at("residual").get<double>();
            table.push_back(e);
        }
        return PresheafElement(std::move(recs), std::move(table), doc.at("tol").get<double>());
    } catch (const json::exception& e) {
        throw ConfigError("presheaf", e.what());
    }
}

void PresheafElement::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << to_json();
    if (!out) throw IoError("write failed for " + path);
}

PresheafElement PresheafElement::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

PresheafElement glue(std::vector<LocalFlowRecord> records, const Patch& patch, double tol) {
    if (records.empty()) throw DomainError("nothing to glue");
    std::vector<OverlapEntry> table;
    std::optional<OverlapEntry> worst;
    for (std::size_t i = 0; i < records.size(); ++i)
        for (std::size_t j = i + 1; j < records.size(); ++j) {
            OverlapEntry e;
            e.i = i;
            e.j = j;
            e.residual = overlap_residual(records[i], records[j], patch, tol, &e.samples);
            if (e.residual && *e.residual > tol && (!worst || *e.residual > *worst->residual)) worst = e;
            table.push_back(e);
        }
    if (worst) throw OverlapViolation({worst->i, worst->j}, *worst->residual);
    return PresheafElement(std::move(records), std::move(table), tol);
}

// ---- exp and its inverse ---------------------------------------------------

PresheafElement exp_map(const std::vector<AdmissibleCube>& family, const Patch& patch, const std::vector<double>& p,
                        const RecordSpacing& spacing, const FlowConfig& cfg, double glue_tol) {
    std::vector<LocalFlowRecord> records;
    for (std::size_t i = 0; i < family.size(); ++i) {
        const Cube& c = family[i].cube;
        c.validate();
        FlowSolver solver(family[i].field, patch, cfg);
        // flow domain at the corners of S x U must reach both ends of S'
        std::size_t corners = std::size_t{1} << (c.dim() + 1);
        for (std::size_t m = 0; m < corners; ++m) {
            double t0 = (m & 1) ? c.initial_times.hi : c.initial_times.lo;
            Vec x(static_cast<Eigen::Index>(c.dim()));
            for (std::size_t a = 0; a < c.dim(); ++a)
                x[static_cast<Eigen::Index>(a)] = (m >> (a + 1) & 1) ? c.space[a].hi : c.space[a].lo;
            if (!patch.contains(x)) throw DomainViolation(i, make_point(t0, t0, x));
            // t0 + reach may round below a face, so probe a little further and compare with slack
            double reach = std::max(t0 - c.final_times.lo, c.final_times.hi - t0);
            double slack = 1e-12 * std::max({1.0, std::fabs(c.final_times.lo), std::fabs(c.final_times.hi)});
            FlowDomain d = solver.flow_domain(t0, x, p, reach + 2 * slack);
            if (d.hi < c.final_times.hi - slack) throw DomainViolation(i, make_point(d.hi, t0, x));
            if (d.lo > c.final_times.lo + slack) throw DomainViolation(i, make_point(d.lo, t0, x));
        }
        try {
            records.push_back(LocalFlowRecord::from_solver(solver, c, p, spacing, "exp[" + std::to_string(i) + "]"));
        } catch (const EscapedPatch& e) {
            std::vector<double> pt{e.t_escape};
            pt.insert(pt.end(), e.point.begin(), e.point.end());
            throw DomainViolation(i, pt);
        } catch (const NoAdmissibleWindow&) {
            throw DomainViolation(i, c.centre());
        }
    }
    return glue(std::move(records), patch, glue_tol);
}

GridField exp_inverse(const FlowFn& flow, const Cube& cube, const std::vector<std::vector<double>>& axes, double t0,
                      double h, double invert_tol) {
    if (!(h > 0)) throw DomainError("step must be positive");
    const std::size_t n = cube.dim();
    std::vector<std::vector<double>> gaxes{axes[0]};
    for (std::size_t a = 0; a < n; ++a) gaxes.push_back(axes[a + 2]);
    std::size_t nx = 1;
    for (std::size_t a = 0; a < n; ++a) nx *= axes[a + 2].size();
    std::vector<Vec> values;
    values.reserve(axes[0].size() * nx);
    Vec x(static_cast<Eigen::Index>(n));
    for (double t : axes[0]) {
        for (std::size_t ix = 0; ix < nx; ++ix) {
            std::size_t rest = ix;
            for (std::size_t a = n; a-- > 0;) {
                x[static_cast<Eigen::Index>(a)] = axes[a + 2][rest % axes[a + 2].size()];
                rest /= axes[a + 2].size();
            }
            Vec y = flow(t0, t, x);
            Vec back = flow(t, t0, y);
            if (sup_norm(back - x) > invert_tol)
                throw NotInvertible("reverse flow round trip misses by " + std::to_string(sup_norm(back - x)));
            values.push_back((flow(t + h, t0, y) - flow(t - h, t0, y)) / (2 * h));
        }
    }
    return GridField(std::move(gaxes), std::move(values));
}

GridField exp_inverse(const LocalFlowRecord& record, double h, double invert_tol) {
    const Cube& c = record.cube();
    double t0 = record.axes()[1][record.axes()[1].size() / 2];
    if (record.source()) return exp_inverse(record.source(), c, record.axes(), t0, h, invert_tol);
    // data only: Phi(tau, t0, Phi(t0, t, x)) = Phi(tau, t, x), differentiated at tau = t on the grid
    const auto& ax = record.axes();
    const std::size_t n = c.dim();
    std::vector<std::vector<double>> gaxes{ax[1]};
    for (std::size_t a = 0; a < n; ++a) gaxes.push_back(ax[a + 2]);
    std::size_t nx = 1;
    for (std::size_t a = 0; a < n; ++a) nx *= ax[a + 2].size();
    std::vector<Vec> values;
    Vec x(static_cast<Eigen::Index>(n));
    for (double t : ax[1]) {
        double lo = std::max(t - h, c.final_times.lo), hi = std::min(t + h, c.final_times.hi);
        for (std::size_t ix = 0; ix < nx; ++ix) {
            std::size_t rest = ix;
            for (std::size_t a = n; a-- > 0;) {
                x[static_cast<Eigen::Index>(a)] = ax[a + 2][rest % ax[a + 2].size()];
                rest /= ax[a + 2].size();
            }
            values.push_back((record.query(hi, t, x) - record.query(lo, t, x)) / (hi - lo));
        }
    }
    return GridField(std::move(gaxes), std::move(values));
}

// ---- flow seminorms --------------------------------------------------------

FlowSeminormResult flow_seminorm(const FlowFn& phi1, const FlowFn& phi2, const Expr& f, const Patch& patch,
                                 const CompactGrid& K, Interval initial, Interval final_times, FlowOrder order,
                                 std::size_t time_nodes) {
    if (time_nodes < 3) throw DomainError("flow seminorm needs at least three final-time nodes");
    const std::size_t n = patch.dim();
    const double dx = 1e-5;
    std::vector<double> T1(time_nodes), T0;
    for (std::size_t i = 0; i < time_nodes; ++i)
        T1[i] = final_times.lo + final_times.width() * static_cast<double>(i) / (time_nodes - 1);
    std::size_t n0 = initial.width() > 0 ? std::min<std::size_t>(time_nodes, 11) : 1;
    for (std::size_t i = 0; i < n0; ++i)
        T0.push_back(n0 == 1 ? initial.lo : initial.lo + initial.width() * static_cast<double>(i) / (n0 - 1));

    // sample points: K, and for the first-order seminorm K +- dx e_i
    std::vector<Vec> pts = K.points;
    if (order == FlowOrder::One)
        for (const auto& x : K.points)
            for (std::size_t i = 0; i < n; ++i)
                for (double s : {1.0, -1.0}) {
                    Vec y = x;
                    y[static_cast<Eigen::Index>(i)] += s * dx;
                    pts.push_back(y);
                }
    std::vector<std::vector<double>> dist;
    if (order == FlowOrder::Lip) {
        dist.assign(K.size(), std::vector<double>(K.size(), 0.0));
        for (std::size_t i = 0; i < K.size(); ++i)
            for (std::size_t j = i + 1; j < K.size(); ++j)
                dist[i][j] = dist[j][i] = geodesic_distance(patch, K.points[i], K.points[j]);
    }
    auto pK = [&](const std::vector<double>& h) {
        double v = 0.0;
        for (std::size_t k = 0; k < K.size(); ++k) v = std::max(v, std::fabs(h[k]));
        if (order == FlowOrder::One) {
            for (std::size_t k = 0; k < K.size(); ++k) {
                Vec grad(static_cast<Eigen::Index>(n));
                for (std::size_t i = 0; i < n; ++i) {
                    std::size_t base = K.size() + (k * n + i) * 2;
                    grad[static_cast<Eigen::Index>(i)] = (h[base] - h[base + 1]) / (2 * dx);
                }
                double g2 = grad.dot(patch.metric(K.points[k]).inverse() * grad);
                v = std::max(v, std::sqrt(h[k] * h[k] + std::max(0.0, g2)));
            }
        } else if (order == FlowOrder::Lip) {
            for (std::size_t i = 0; i < K.size(); ++i)
                for (std::size_t j = i + 1; j < K.size(); ++j)
                    if (dist[i][j] > 0) v = std::max(v, std::fabs(h[i] - h[j]) / dist[i][j]);
        }
        return v;
    };

    // H[i1][i0][s] = f(phi1) - f(phi2)
    std::vector<std::vector<std::vector<double>>> H(time_nodes, std::vector<std::vector<double>>(n0));
    for (std::size_t i1 = 0; i1 < time_nodes; ++i1)
        for (std::size_t i0 = 0; i0 < n0; ++i0) {
            auto& row = H[i1][i0];
            row.resize(pts.size());
            for (std::size_t s = 0; s < pts.size(); ++s) {
                Vec a = phi1(T1[i1], T0[i0], pts[s]), b = phi2(T1[i1], T0[i0], pts[s]);
                row[s] = eval_at(f, T1[i1], a.data(), n, nullptr, 0) - eval_at(f, T1[i1], b.data(), n, nullptr, 0);
            }
        }

    FlowSeminormResult r;
    for (std::size_t i1 = 0; i1 < time_nodes; ++i1)
        for (std::size_t i0 = 0; i0 < n0; ++i0) r.sup_part = std::max(r.sup_part, pK(H[i1][i0]));

    double dt = T1[1] - T1[0];
    std::vector<double> D(time_nodes, 0.0);
    std::vector<double> dh(pts.size());
    for (std::size_t i1 = 0; i1 < time_nodes; ++i1)
        for (std::size_t i0 = 0; i0 < n0; ++i0) {
            for (std::size_t s = 0; s < pts.size(); ++s) {
                if (i1 == 0)
                    dh[s] = (-3 * H[0][i0][s] + 4 * H[1][i0][s] - H[2][i0][s]) / (2 * dt);
                else if (i1 + 1 == time_nodes)
                    dh[s] = (3 * H[i1][i0][s] - 4 * H[i1 - 1][i0][s] + H[i1 - 2][i0][s]) / (2 * dt);
                else
                    dh[s] = (H[i1 + 1][i0][s] - H[i1 - 1][i0][s]) / (2 * dt);
            }
            D[i1] = std::max(D[i1], pK(dh));
        }
    for (std::size_t i1 = 0; i1 + 1 < time_nodes; ++i1) r.integral_part += 0.5 * dt * (D[i1] + D[i1 + 1]);
    r.value = std::max(r.sup_part, r.integral_part);
    return r;
}

}  // namespace flowpresheaf
