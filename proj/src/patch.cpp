#include "flowpresheaf/patch.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <cmath>
#include <random>

namespace flowpresheaf {

namespace {

Symbols coord_symbols(std::size_t n) {
    Symbols s;
    s.coords = n;
    s.params = 0;
    s.time = false;
    return s;
}

double eval_x(const Expr& e, const Vec& x) {
    return eval_at(e, 0.0, x.data(), static_cast<std::size_t>(x.size()), nullptr, 0);
}

Jet jet_x(const Expr& e, const Vec& x, int order) {
    std::vector<double> xs(x.data(), x.data() + x.size());
    return taylor_jet(e, 0.0, xs, {}, order);
}

}  // namespace

Patch::Patch(std::vector<Interval> bounds, std::vector<std::vector<Expr>> metric,
             std::optional<std::vector<Expr>> christoffel)
    : bounds_(std::move(bounds)), metric_(std::move(metric)), christoffel_(std::move(christoffel)) {
    const std::size_t n = bounds_.size();
    if (n == 0) throw DomainError("patch dimension must be positive");
    for (const auto& b : bounds_)
        if (!(b.hi > b.lo)) throw DomainError("patch bounds must have nonempty interior");
    if (metric_.size() != n) throw DomainError("metric must be n x n");
    constant_metric_ = true;
    for (std::size_t i = 0; i < n; ++i) {
        if (metric_[i].size() != n) throw DomainError("metric must be n x n");
        for (std::size_t j = 0; j < n; ++j) {
            if (!(metric_[i][j] == metric_[j][i])) throw DomainError("metric expressions must be symmetric");
            if (!metric_[i][j].is_constant()) constant_metric_ = false;
        }
    }
    if (christoffel_) {
        if (christoffel_->size() != n * n * n) throw DomainError("christoffel field needs n^3 entries");
        flat_ = std::all_of(christoffel_->begin(), christoffel_->end(), [](const Expr& e) {
            return e.is_constant() && detail::eval_constant(e) == 0.0;
        });
    } else {
        flat_ = constant_metric_;
    }
}

Patch Patch::euclidean(std::vector<Interval> bounds) {
    std::size_t n = bounds.size();
    std::vector<std::vector<Expr>> g(n, std::vector<Expr>(n, Expr::number(0.0)));
    for (std::size_t i = 0; i < n; ++i) g[i][i] = Expr::number(1.0);
    return Patch(std::move(bounds), std::move(g));
}

Patch Patch::from_strings(std::vector<Interval> bounds, const std::vector<std::string>& metric,
                          const std::vector<std::string>& christoffel) {
    std::size_t n = bounds.size();
    if (metric.size() != n * n) throw DomainError("metric needs n*n entries");
    auto sym = coord_symbols(n);
    std::vector<std::vector<Expr>> g(n, std::vector<Expr>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i][j] = parse_expr(metric[i * n + j], sym);
    std::optional<std::vector<Expr>> gam;
    if (!christoffel.empty()) {
        gam.emplace();
        for (const auto& s : christoffel) gam->push_back(parse_expr(s, sym));
    }
    return Patch(std::move(bounds), std::move(g), std::move(gam));
}

Patch Patch::with_metric(std::vector<std::vector<Expr>> metric) const {
    return Patch(bounds_, std::move(metric), christoffel_);
}

bool Patch::contains(const Vec& x, double margin) const {
    if (static_cast<std::size_t>(x.size()) != dim()) return false;
    for (std::size_t i = 0; i < dim(); ++i)
        if (!bounds_[i].contains(x[static_cast<Eigen::Index>(i)], margin)) return false;
    return true;
}

Mat Patch::metric(const Vec& x) const {
    const std::size_t n = dim();
    Mat g(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            double v = eval_x(metric_[i][j], x);
            g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
            g(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
        }
    return g;
}

Mat Patch::metric_checked(const Vec& x) const {
    Mat g = metric(x);
    require_spd(g, "metric");
    return g;
}

std::vector<Jet> Patch::metric_jets(const Vec& x, int order) const {
    const std::size_t n = dim();
    std::vector<Jet> g(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            g[i * n + j] = jet_x(metric_[i][j], x, order);
            g[j * n + i] = g[i * n + j];
        }
    return g;
}

void require_spd(const Mat& g, const char* where) {
    if (!g.allFinite()) throw SingularMetric(std::string(where) + " is not finite");
    Eigen::SelfAdjointEigenSolver<Mat> es(g, Eigen::EigenvaluesOnly);
    double lmin = es.eigenvalues().minCoeff();
    double lmax = es.eigenvalues().cwiseAbs().maxCoeff();
    if (!(lmin > 1e-12 * std::max(1.0, lmax)))
        throw SingularMetric(std::string(where) + " is not positive definite");
}

std::vector<Jet> levi_civita_jets(const std::vector<Jet>& g, std::size_t n) {
    const int q = g.front().order();
    if (q < 1) throw DomainError("Levi-Civita symbols need metric jets of order >= 1");
    // Gauss-Jordan inverse in jet arithmetic, pivoting on values.
    std::vector<Jet> a = g;
    auto layout = g.front().layout_ptr();
    std::vector<Jet> inv(n * n, Jet(layout, 0.0));
    for (std::size_t i = 0; i < n; ++i) inv[i * n + i] = Jet(layout, 1.0);
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::fabs(a[r * n + c].value()) > std::fabs(a[piv * n + c].value())) piv = r;
        if (a[piv * n + c].value() == 0.0) throw SingularMetric("metric is singular");
        if (piv != c)
            for (std::size_t k = 0; k < n; ++k) {
                std::swap(a[c * n + k], a[piv * n + k]);
                std::swap(inv[c * n + k], inv[piv * n + k]);
            }
        Jet r = reciprocal(a[c * n + c]);
        for (std::size_t k = 0; k < n; ++k) {
            a[c * n + k] = a[c * n + k] * r;
            inv[c * n + k] = inv[c * n + k] * r;
        }
        for (std::size_t row = 0; row < n; ++row) {
            if (row == c) continue;
            Jet f = a[row * n + c];
            for (std::size_t k = 0; k < n; ++k) {
                a[row * n + k] -= f * a[c * n + k];
                inv[row * n + k] -= f * inv[c * n + k];
            }
        }
    }
    // dg[(a*n + b)*n + c] = d_c g_ab
    std::vector<Jet> dg(n * n * n);
    for (std::size_t ab = 0; ab < n * n; ++ab)
        for (std::size_t c = 0; c < n; ++c) dg[ab * n + c] = g[ab].derivative(c);
    std::vector<Jet> gam(n * n * n);
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                Jet acc(JetLayout::get(n, q - 1), 0.0);
                for (std::size_t l = 0; l < n; ++l) {
                    Jet s = dg[(l * n + j) * n + i] + dg[(l * n + i) * n + j] - dg[(i * n + j) * n + l];
                    acc += inv[k * n + l].truncate(q - 1) * s;
                }
                gam[(k * n + i) * n + j] = 0.5 * acc;
            }
    return gam;
}

Christoffel levi_civita_christoffels(const Patch& patch, const Vec& x) {
    patch.metric_checked(x);
    auto gam = levi_civita_jets(patch.metric_jets(x, 1), patch.dim());
    Christoffel out(gam.size());
    for (std::size_t i = 0; i < gam.size(); ++i) out[i] = gam[i].value();
    return out;
}

Christoffel Patch::christoffel(const Vec& x) const {
    const std::size_t n = dim();
    if (christoffel_) {
        Christoffel out(n * n * n);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = eval_x((*christoffel_)[i], x);
        return out;
    }
    if (constant_metric_) return Christoffel(n * n * n, 0.0);
    return levi_civita_christoffels(*this, x);
}

std::vector<Jet> Patch::christoffel_jets(const Vec& x, int order) const {
    const std::size_t n = dim();
    if (christoffel_) {
        std::vector<Jet> out;
        for (const auto& e : *christoffel_) out.push_back(jet_x(e, x, order));
        return out;
    }
    if (constant_metric_) return std::vector<Jet>(n * n * n, Jet(JetLayout::get(n, order), 0.0));
    metric_checked(x);
    return levi_civita_jets(metric_jets(x, order + 1), n);
}

CompactGrid CompactGrid::tensor(const std::vector<Interval>& box, const std::vector<std::size_t>& counts) {
    if (box.size() != counts.size() || box.empty()) throw DomainError("grid box and counts disagree");
    CompactGrid g;
    g.box = box;
    g.shape = counts;
    std::size_t total = 1;
    for (std::size_t i = 0; i < box.size(); ++i) {
        if (counts[i] == 0) throw DomainError("grid must be nonempty");
        total *= counts[i];
        if (counts[i] > 1) g.spacing = std::max(g.spacing, box[i].width() / static_cast<double>(counts[i] - 1));
    }
    g.points.reserve(total);
    std::vector<std::size_t> idx(box.size(), 0);
    for (std::size_t flat = 0; flat < total; ++flat) {
        Vec p(static_cast<Eigen::Index>(box.size()));
        for (std::size_t i = 0; i < box.size(); ++i) {
            double u = counts[i] > 1 ? static_cast<double>(idx[i]) / static_cast<double>(counts[i] - 1) : 0.5;
            p[static_cast<Eigen::Index>(i)] = counts[i] > 1 ? box[i].lo + u * box[i].width() : box[i].mid();
            if (counts[i] > 1 && idx[i] + 1 == counts[i]) p[static_cast<Eigen::Index>(i)] = box[i].hi;
        }
        g.points.push_back(std::move(p));
        for (std::size_t i = box.size(); i-- > 0;) {
            if (++idx[i] < counts[i]) break;
            idx[i] = 0;
        }
    }
    return g;
}

CompactGrid CompactGrid::scattered(std::vector<Vec> points, double spacing) {
    if (points.empty()) throw DomainError("grid must be nonempty");
    CompactGrid g;
    g.points = std::move(points);
    g.spacing = spacing;
    std::size_t n = static_cast<std::size_t>(g.points.front().size());
    g.box.assign(n, Interval{INFINITY, -INFINITY});
    for (const auto& p : g.points)
        for (std::size_t i = 0; i < n; ++i) {
            g.box[i].lo = std::min(g.box[i].lo, p[static_cast<Eigen::Index>(i)]);
            g.box[i].hi = std::max(g.box[i].hi, p[static_cast<Eigen::Index>(i)]);
        }
    return g;
}

void CompactGrid::validate(const Patch& patch) const {
    if (points.empty()) throw DomainError("grid must be nonempty");
    for (const auto& p : points)
        if (!patch.contains(p)) throw DomainError("grid point outside patch bounds");
}

namespace {

struct EnergyCtx {
    const Patch* patch;
    Vec a, b;
    std::size_t segments;
    bool failed = false;
};

Vec node(const EnergyCtx& c, const gsl_vector* v, std::size_t k) {
    if (k == 0) return c.a;
    if (k == c.segments) return c.b;
    const std::size_t n = c.patch->dim();
    Vec p(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) p[static_cast<Eigen::Index>(i)] = gsl_vector_get(v, (k - 1) * n + i);
    return p;
}

double energy_f(const gsl_vector* v, void* params) {
    auto& c = *static_cast<EnergyCtx*>(params);
    double e = 0.0;
    try {
        for (std::size_t s = 0; s < c.segments; ++s) {
            Vec p0 = node(c, v, s), p1 = node(c, v, s + 1);
            Vec d = p1 - p0;
            e += d.dot(c.patch->metric(0.5 * (p0 + p1)) * d);
        }
    } catch (const DomainError&) {
        c.failed = true;
        return GSL_NAN;
    }
    return e * static_cast<double>(c.segments);
}

void energy_df(const gsl_vector* v, void* params, gsl_vector* grad) {
    auto& c = *static_cast<EnergyCtx*>(params);
    const std::size_t n = c.patch->dim();
    gsl_vector_set_zero(grad);
    try {
        for (std::size_t s = 0; s < c.segments; ++s) {
            Vec p0 = node(c, v, s), p1 = node(c, v, s + 1);
            Vec d = p1 - p0;
            auto gj = c.patch->metric_jets(0.5 * (p0 + p1), 1);
            Mat g(n, n);
            for (std::size_t i = 0; i < n * n; ++i) g(static_cast<Eigen::Index>(i / n), static_cast<Eigen::Index>(i % n)) = gj[i].value();
            Vec gd = g * d;
            Vec dmid(static_cast<Eigen::Index>(n));
            for (std::size_t l = 0; l < n; ++l) {
                double acc = 0.0;
                std::vector<int> alpha(n, 0);
                alpha[l] = 1;
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j)
                        acc += d[static_cast<Eigen::Index>(i)] * gj[i * n + j].partial(alpha) * d[static_cast<Eigen::Index>(j)];
                dmid[static_cast<Eigen::Index>(l)] = 0.5 * acc;
            }
            // node s gets -2 g d + dmid, node s+1 gets 2 g d + dmid
            double scale = static_cast<double>(c.segments);
            if (s >= 1)
                for (std::size_t l = 0; l < n; ++l) {
                    double* gp = gsl_vector_ptr(grad, (s - 1) * n + l);
                    *gp += scale * (-2.0 * gd[static_cast<Eigen::Index>(l)] + dmid[static_cast<Eigen::Index>(l)]);
                }
            if (s + 1 < c.segments)
                for (std::size_t l = 0; l < n; ++l) {
                    double* gp = gsl_vector_ptr(grad, s * n + l);
                    *gp += scale * (2.0 * gd[static_cast<Eigen::Index>(l)] + dmid[static_cast<Eigen::Index>(l)]);
                }
        }
    } catch (const DomainError&) {
        c.failed = true;
        for (std::size_t i = 0; i < grad->size; ++i) gsl_vector_set(grad, i, GSL_NAN);
    }
}

void energy_fdf(const gsl_vector* v, void* params, double* f, gsl_vector* grad) {
    *f = energy_f(v, params);
    energy_df(v, params, grad);
}

double segment_length(const Patch& patch, const Vec& p0, const Vec& p1) {
    Vec d = p1 - p0;
    auto q = [&](const Vec& x) { return std::sqrt(std::max(0.0, d.dot(patch.metric(x) * d))); };
    return (q(p0) + 4.0 * q(0.5 * (p0 + p1)) + q(p1)) / 6.0;
}

struct GslHandlerGuard {
    gsl_error_handler_t* old;
    GslHandlerGuard() : old(gsl_set_error_handler_off()) {}
    ~GslHandlerGuard() { gsl_set_error_handler(old); }
};

}  // namespace

GeodesicResult geodesic(const Patch& patch, const Vec& x1, const Vec& x2, const GeodesicOptions& opt) {
    if (!patch.contains(x1) || !patch.contains(x2)) throw DomainError("geodesic endpoints outside patch");
    GeodesicResult res;
    if (patch.constant_metric()) {
        Mat g = patch.metric_checked(x1);
        Vec d = x2 - x1;
        res.length = std::sqrt(d.dot(g * d));
        res.segments = 1;
        res.path = {x1, x2};
        return res;
    }
    if (patch.dim() == 1) {
        // Every path between two points of an interval covers the segment.
        double a = std::min(x1[0], x2[0]), b = std::max(x1[0], x2[0]);
        double err = 0.0;
        auto speed = [&](double u) {
            double g = patch.metric(Vec::Constant(1, u))(0, 0);
            if (!(g > 0.0)) throw SingularMetric("metric is not positive definite");
            return std::sqrt(g);
        };
        res.length = a == b ? 0.0
                            : boost::math::quadrature::gauss_kronrod<double, 31>::integrate(speed, a, b, 15,
                                                                                             opt.tol * 1e-3, &err);
        if (err > opt.tol) throw NoPath("length quadrature did not converge");
        res.error_estimate = err;
        res.segments = 1;
        res.path = {x1, x2};
        return res;
    }
    const std::size_t n = patch.dim();
    std::vector<Vec> path;
    std::size_t N = std::max<std::size_t>(2, opt.initial_segments);
    for (std::size_t k = 0; k <= N; ++k)
        path.push_back(x1 + (x2 - x1) * (static_cast<double>(k) / static_cast<double>(N)));
    double prev = NAN, prev_ext = NAN;
    GslHandlerGuard guard;
    while (true) {
        EnergyCtx ctx{&patch, x1, x2, N};
        std::size_t dofs = (N - 1) * n;
        gsl_vector* v = gsl_vector_alloc(dofs);
        for (std::size_t k = 1; k < N; ++k)
            for (std::size_t i = 0; i < n; ++i) gsl_vector_set(v, (k - 1) * n + i, path[k][static_cast<Eigen::Index>(i)]);
        gsl_multimin_function_fdf fn{energy_f, energy_df, energy_fdf, dofs, &ctx};
        gsl_multimin_fdfminimizer* m = gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, dofs);
        double step = 0.1 * (x2 - x1).norm() / static_cast<double>(N) + 1e-12;
        gsl_multimin_fdfminimizer_set(m, &fn, v, step, 0.1);
        bool converged = false;
        double gscale = std::max(1e-14, 1e-10 * std::fabs(m->f));
        for (std::size_t it = 0; it < opt.max_iter && !ctx.failed; ++it) {
            if (gsl_multimin_test_gradient(m->gradient, gscale) == GSL_SUCCESS) {
                converged = true;
                break;
            }
            int status = gsl_multimin_fdfminimizer_iterate(m);
            if (status == GSL_ENOPROG) {
                converged = true;
                break;
            }
            if (status != GSL_SUCCESS) break;
        }
        if (converged && !ctx.failed) {
            for (std::size_t k = 1; k < N; ++k) path[k] = node(ctx, m->x, k);
        }
        gsl_multimin_fdfminimizer_free(m);
        gsl_vector_free(v);
        if (!converged || ctx.failed) throw NoPath("path energy minimization did not converge");
        for (const auto& p : path)
            if (!patch.contains(p)) throw NoPath("minimizing path left the patch");
        double L = 0.0;
        for (std::size_t k = 0; k < N; ++k) L += segment_length(patch, path[k], path[k + 1]);
        // Polyline chords overshoot by O(h^2); extrapolate across refinements.
        double ext = std::isnan(prev) ? NAN : (4.0 * L - prev) / 3.0;
        if (!std::isnan(prev_ext) && std::fabs(ext - prev_ext) <= opt.tol) {
            res.length = ext;
            res.error_estimate = std::fabs(ext - prev_ext);
            res.segments = N;
            res.path = path;
            return res;
        }
        prev = L;
        prev_ext = ext;
        if (2 * N > opt.max_segments) throw NoPath("path refinement budget exhausted");
        std::vector<Vec> finer;
        for (std::size_t k = 0; k < N; ++k) {
            finer.push_back(path[k]);
            finer.push_back(0.5 * (path[k] + path[k + 1]));
        }
        finer.push_back(path.back());
        path = std::move(finer);
        N *= 2;
    }
}

double geodesic_distance(const Patch& patch, const Vec& x1, const Vec& x2, double tol) {
    GeodesicOptions opt;
    opt.tol = tol;
    return geodesic(patch, x1, x2, opt).length;
}

namespace {

Vec transport_rhs(const Christoffel& gam, std::size_t n, const Vec& d, const Vec& v) {
    Vec out = Vec::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < n; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                acc += gam[(k * n + i) * n + j] * d[static_cast<Eigen::Index>(i)] * v[static_cast<Eigen::Index>(j)];
        out[static_cast<Eigen::Index>(k)] = -acc;
    }
    return out;
}

Vec transport_segment(const Patch& patch, const Vec& a, const Vec& b, const Vec& v, std::size_t steps) {
    const std::size_t n = patch.dim();
    Vec d = b - a;
    Vec w = v;
    double h = 1.0 / static_cast<double>(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        double u = static_cast<double>(s) * h;
        Christoffel g0 = patch.christoffel(a + u * d);
        Christoffel gm = patch.christoffel(a + (u + 0.5 * h) * d);
        Christoffel g1 = patch.christoffel(a + (u + h) * d);
        Vec k1 = transport_rhs(g0, n, d, w);
        Vec k2 = transport_rhs(gm, n, d, w + 0.5 * h * k1);
        Vec k3 = transport_rhs(gm, n, d, w + 0.5 * h * k2);
        Vec k4 = transport_rhs(g1, n, d, w + h * k3);
        w += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return w;
}

}  // namespace

Vec parallel_transport(const Patch& patch, const std::vector<Vec>& curve, const Vec& v, const TransportOptions& opt) {
    for (const auto& p : curve)
        if (!patch.contains(p)) throw DomainError("transport curve leaves the patch");
    if (patch.flat_connection() || curve.size() < 2) return v;
    Vec w = v;
    for (std::size_t s = 0; s + 1 < curve.size(); ++s) {
        std::size_t steps = 1;
        Vec coarse = transport_segment(patch, curve[s], curve[s + 1], w, steps);
        while (true) {
            Vec fine = transport_segment(patch, curve[s], curve[s + 1], w, 2 * steps);
            double err = (fine - coarse).norm() / 15.0;
            if (err <= opt.tol * std::max(1.0, fine.norm())) {
                w = fine;
                break;
            }
            steps *= 2;
            if (steps > opt.max_substeps) throw StepTooCoarse("transport step estimate above tolerance");
            coarse = fine;
        }
    }
    return w;
}

double quadratic_form_constant(const Mat& g1, const Mat& g2) {
    require_spd(g1, "first metric");
    require_spd(g2, "second metric");
    Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(g2, g1, Eigen::EigenvaluesOnly);
    double lmin = es.eigenvalues().minCoeff(), lmax = es.eigenvalues().maxCoeff();
    return std::max({1.0, lmax, 1.0 / lmin});
}

EquivalenceResult metric_equivalence_constant(const Patch& g1, const Patch& g2, const CompactGrid& K,
                                              std::size_t pair_budget, std::uint64_t seed, double tol) {
    K.validate(g1);
    EquivalenceResult r;
    for (const auto& p : K.points) {
        double q = quadratic_form_constant(g1.metric(p), g2.metric(p));
        r.eigen_bound = std::max(r.eigen_bound, std::sqrt(q));
    }
    const std::size_t m = K.size();
    std::size_t all = m * (m - 1) / 2;
    if (all <= pair_budget) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = i + 1; j < m; ++j) r.pairs.emplace_back(i, j);
    } else {
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<std::size_t> pick(0, m - 1);
        while (r.pairs.size() < pair_budget) {
            std::size_t i = pick(rng), j = pick(rng);
            if (i != j) r.pairs.emplace_back(std::min(i, j), std::max(i, j));
        }
    }
    for (auto [i, j] : r.pairs) {
        double d1 = geodesic_distance(g1, K.points[i], K.points[j], tol);
        double d2 = geodesic_distance(g2, K.points[i], K.points[j], tol);
        r.d1.push_back(d1);
        r.d2.push_back(d2);
        if (d1 > 0.0 && d2 > 0.0) r.c = std::max({r.c, d2 / d1, d1 / d2});
    }
    return r;
}

}  // namespace flowpresheaf
