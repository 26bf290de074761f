#include "flowpresheaf/seminorm.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <numbers>
#include <random>

namespace flowpresheaf {

RegularityClass RegularityClass::finite(int m) {
    RegularityClass c;
    c.tag = Tag::Finite;
    c.m = m;
    c.validate();
    return c;
}

RegularityClass RegularityClass::finite_lip(int m) {
    RegularityClass c = finite(m);
    c.tag = Tag::FiniteLip;
    return c;
}

RegularityClass RegularityClass::smooth(int truncation) {
    RegularityClass c;
    c.tag = Tag::Smooth;
    c.m = truncation;
    c.validate();
    return c;
}

RegularityClass RegularityClass::real_analytic(std::vector<double> weights, int truncation) {
    RegularityClass c;
    c.tag = Tag::RealAnalytic;
    c.m = truncation;
    c.weights = std::move(weights);
    c.validate();
    return c;
}

RegularityClass RegularityClass::hol() {
    RegularityClass c;
    c.tag = Tag::Hol;
    return c;
}

void RegularityClass::validate() const {
    if (m < 0) throw DomainError("regularity order must be nonnegative");
    if (tag == Tag::RealAnalytic) {
        if (weights.size() < static_cast<std::size_t>(m) + 1)
            throw DomainError("real analytic class needs weights a_0..a_M");
        for (std::size_t j = 0; j < weights.size(); ++j) {
            if (!(weights[j] > 0.0)) throw DomainError("weights must be strictly positive");
            if (j > 0 && weights[j] > weights[j - 1]) throw DomainError("weights must be nonincreasing");
        }
    }
}

std::string RegularityClass::name() const {
    switch (tag) {
        case Tag::Finite: return "C^" + std::to_string(m);
        case Tag::FiniteLip: return "C^" + std::to_string(m) + "+lip";
        case Tag::Smooth: return "C^inf[M=" + std::to_string(m) + "]";
        case Tag::RealAnalytic: return "C^omega[M=" + std::to_string(m) + "]";
        case Tag::Hol: return "hol";
    }
    return "?";
}

std::vector<Vec> sample_directions(std::size_t n, std::size_t count) {
    std::vector<Vec> out;
    if (n == 1) {
        out.push_back(Vec::Ones(1));
        return out;
    }
    if (n == 2) {
        for (std::size_t k = 0; k < count; ++k) {
            double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(count);
            Vec v(2);
            v << std::cos(a), std::sin(a);
            out.push_back(v);
        }
        return out;
    }
    if (n == 3) {
        const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
        for (std::size_t k = 0; k < count; ++k) {
            double z = 1.0 - 2.0 * (static_cast<double>(k) + 0.5) / static_cast<double>(count);
            double r = std::sqrt(1.0 - z * z), a = golden * static_cast<double>(k);
            Vec v(3);
            v << r * std::cos(a), r * std::sin(a), z;
            out.push_back(v);
        }
        return out;
    }
    std::mt19937_64 rng(12345);
    std::normal_distribution<double> nd;
    for (std::size_t k = 0; k < count; ++k) {
        Vec v(static_cast<Eigen::Index>(n));
        for (auto& c : v) c = nd(rng);
        out.push_back(v.normalized());
    }
    return out;
}

namespace {

std::vector<Jet> component_jets(const std::vector<Expr>& comps, double t, const Vec& x,
                                const std::vector<double>& p, int order) {
    std::vector<double> xs(x.data(), x.data() + x.size());
    std::vector<Jet> out;
    for (const auto& c : comps) out.push_back(taylor_jet(c, t, xs, p, order));
    return out;
}

JetTower tower_at(const std::vector<Expr>& comps, bool tangent, const Patch& patch, double t, const Vec& x,
                  const std::vector<double>& p, int m) {
    auto fj = component_jets(comps, t, x, p, m);
    std::vector<Jet> gamma;
    if (!patch.flat_connection() && m >= 1) gamma = patch.christoffel_jets(x, m - 1);
    return covariant_jet_tower(fj, tangent, gamma, x, m);
}

}  // namespace

double directional_jet_norm(const std::vector<Expr>& comps, bool tangent, const Patch& patch, double t,
                            const Vec& y, const std::vector<double>& p, int m, const std::vector<Vec>& dirs) {
    const std::size_t n = patch.dim();
    const std::size_t vdim = comps.size();
    auto fj = component_jets(comps, t, y, p, m + 1);
    std::vector<Jet> gamma;
    if (!patch.flat_connection()) gamma = patch.christoffel_jets(y, m);
    auto jets = covariant_derivative_jets(fj, tangent, gamma, m + 1);
    Mat g = patch.metric_checked(y);
    Mat ginv = g.inverse();
    const Mat* bundle = tangent ? &g : nullptr;

    // Q(i, k) = sum_j <Sym T_{j+1}[i, .], Sym T_{j+1}[k, .]> / j!^2, so ||nabla_v||^2 = v^T Q v.
    std::vector<std::vector<std::vector<double>>> S(static_cast<std::size_t>(m) + 1);
    std::size_t block = vdim;
    for (int j = 0; j <= m; ++j) {
        const auto& level = jets[static_cast<std::size_t>(j) + 1];
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> part(block);
            for (std::size_t c = 0; c < block; ++c) part[c] = level[i * block + c].value();
            symmetrize(part, n, static_cast<std::size_t>(j), vdim);
            S[static_cast<std::size_t>(j)].push_back(std::move(part));
        }
        block *= n;
    }
    Mat Q = Mat::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    double fact = 1.0;
    for (int j = 0; j <= m; ++j) {
        if (j > 0) fact *= j;
        const auto& Sj = S[static_cast<std::size_t>(j)];
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = i; k < n; ++k) {
                double ip;
                if (i == k) {
                    ip = level_norm_squared(Sj[i], n, static_cast<std::size_t>(j), vdim, ginv, bundle);
                } else {
                    std::vector<double> plus(Sj[i].size()), minus(Sj[i].size());
                    for (std::size_t c = 0; c < plus.size(); ++c) {
                        plus[c] = Sj[i][c] + Sj[k][c];
                        minus[c] = Sj[i][c] - Sj[k][c];
                    }
                    ip = 0.25 * (level_norm_squared(plus, n, static_cast<std::size_t>(j), vdim, ginv, bundle) -
                                 level_norm_squared(minus, n, static_cast<std::size_t>(j), vdim, ginv, bundle));
                }
                Q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) += ip / (fact * fact);
                if (i != k) Q(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) += ip / (fact * fact);
            }
    }
    double best = 0.0;
    for (const auto& d : dirs) {
        double gn = d.dot(g * d);
        best = std::max(best, d.dot(Q * d) / gn);
    }
    return std::sqrt(std::max(0.0, best));
}

DilatationResult dilatation(const std::vector<Expr>& comps, bool tangent, const Patch& patch, double t,
                            const Vec& x, const std::vector<double>& p, int m, const DilatationOptions& opt) {
    const std::size_t n = patch.dim();
    if (!patch.contains(x, opt.r0)) throw BoundaryTooClose("dilatation ball leaves the patch");
    auto dirs = sample_directions(n, opt.directions);
    // lattice offsets in the unit ball
    std::vector<Vec> unit;
    const std::size_t B = std::max<std::size_t>(2, opt.ball_samples);
    std::size_t total = 1;
    for (std::size_t i = 0; i < n; ++i) total *= B;
    for (std::size_t c = 0; c < total; ++c) {
        Vec u(static_cast<Eigen::Index>(n));
        std::size_t code = c;
        for (std::size_t i = 0; i < n; ++i) {
            u[static_cast<Eigen::Index>(i)] = -1.0 + 2.0 * static_cast<double>(code % B) / static_cast<double>(B - 1);
            code /= B;
        }
        if (u.norm() <= 1.0 + 1e-12) unit.push_back(u);
    }
    unit.push_back(Vec::Zero(static_cast<Eigen::Index>(n)));
    DilatationResult r;
    r.radii.resize(static_cast<std::size_t>(opt.radii));
    r.profile.assign(static_cast<std::size_t>(opt.radii), 0.0);
    double running = 0.0;
    for (int k = opt.radii - 1; k >= 0; --k) {
        double rk = opt.r0 * std::ldexp(1.0, -k);
        r.radii[static_cast<std::size_t>(k)] = rk;
        for (const auto& u : unit)
            running = std::max(running, directional_jet_norm(comps, tangent, patch, t, x + rk * u, p, m, dirs));
        r.profile[static_cast<std::size_t>(k)] = running;
    }
    r.value = r.profile.back();
    return r;
}

DilatationResult dilatation(const ExprField& field, const Patch& patch, double t, const Vec& x,
                            const std::vector<double>& p, int m, const DilatationOptions& opt) {
    return dilatation(field.components(), true, patch, t, x, p, m, opt);
}

SeminormReport seminorm(const std::vector<Expr>& comps, bool tangent, const Patch& patch, double t,
                        const std::vector<double>& p, const RegularityClass& cls, const CompactGrid& K,
                        const DilatationOptions& opt) {
    using T = RegularityClass::Tag;
    cls.validate();
    if (cls.tag == T::Hol) throw DomainError("hol class needs a complex field");
    K.validate(patch);
    SeminormReport r;
    r.cls = cls;
    r.grid_points = K.size();
    r.grid_spacing = K.spacing;
    r.truncation = cls.m;
    std::vector<double> sup(static_cast<std::size_t>(cls.m) + 1, 0.0);
    double lip = 0.0;
    for (const auto& x : K.points) {
        auto tower = tower_at(comps, tangent, patch, t, x, p, cls.m);
        auto norms = jet_fibre_norms(tower, patch.metric(x));
        for (std::size_t j = 0; j < sup.size(); ++j) sup[j] = std::max(sup[j], norms[j]);
        if (cls.tag == T::FiniteLip) lip = std::max(lip, dilatation(comps, tangent, patch, t, x, p, cls.m, opt).value);
    }
    switch (cls.tag) {
        case T::Finite:
            r.per_order = sup;
            r.value = sup.back();
            break;
        case T::FiniteLip:
            r.per_order = {sup.back(), lip};
            r.value = std::max(sup.back(), lip);
            break;
        case T::Smooth:
            r.per_order = sup;
            r.value = sup.back();
            break;
        case T::RealAnalytic: {
            double w = 1.0;
            for (std::size_t j = 0; j < sup.size(); ++j) {
                w *= cls.weights[j];
                r.per_order.push_back(w * sup[j]);
                r.value = std::max(r.value, w * sup[j]);
            }
            break;
        }
        case T::Hol: break;
    }
    return r;
}

SeminormReport seminorm(const ExprField& field, const Patch& patch, double t, const std::vector<double>& p,
                        const RegularityClass& cls, const CompactGrid& K, const DilatationOptions& opt) {
    if (field.dim() != patch.dim()) throw DomainError("field and patch dimensions differ");
    return seminorm(field.components(), true, patch, t, p, cls, K, opt);
}

SeminormReport seminorm(const HolField& f, const CompactGrid& K) {
    SeminormReport r;
    r.cls = RegularityClass::hol();
    r.grid_points = K.size();
    r.grid_spacing = K.spacing;
    for (const auto& x : K.points) {
        if (x.size() != 2) throw DomainError("hol class needs a two-dimensional real patch");
        r.value = std::max(r.value, std::abs(f.eval({x[0], x[1]})));
    }
    r.per_order = {r.value};
    return r;
}

namespace {

template <class F>
double integrate_checked(F&& f, Interval S, double tol, double* err_out) {
    double err = 0.0;
    double v = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, S.lo, S.hi, 15, 1e-12, &err);
    if (!(err <= tol)) throw QuadratureBudgetExceeded("quadrature error " + std::to_string(err) + " above tolerance");
    if (err_out) *err_out = std::max(*err_out, err);
    return v;
}

}  // namespace

TimeSeminormResult time_seminorm(const ExprField& field, const Patch& patch, const RegularityClass& cls,
                                 const CompactGrid& K, Interval S, const std::vector<double>& p, double tol,
                                 const DilatationOptions& opt) {
    if (!(S.hi >= S.lo)) throw DomainError("time interval is reversed");
    TimeSeminormResult r;
    if (S.hi == S.lo) return r;
    auto report = [&](double t) { return seminorm(field, patch, t, p, cls, K, opt); };
    r.value = integrate_checked([&](double t) { return report(t).value; }, S, tol, &r.error);
    if (cls.tag == RegularityClass::Tag::Smooth || cls.tag == RegularityClass::Tag::RealAnalytic) {
        std::size_t orders = report(S.lo).per_order.size();
        for (std::size_t j = 0; j < orders; ++j)
            r.per_order.push_back(integrate_checked([&](double t) { return report(t).per_order[j]; }, S, tol, &r.error));
    } else {
        r.per_order = {r.value};
    }
    return r;
}

double lipschitz_bound(const Expr& f, const Patch& patch, double t, const std::vector<double>& p,
                       const CompactGrid& K, const DilatationOptions& opt) {
    double l = 0.0;
    // The widest ball covers the gaps between grid points when spacing <= 2 r0.
    for (const auto& x : K.points) l = std::max(l, dilatation({f}, false, patch, t, x, p, 0, opt).profile.front());
    return l;
}

double integrated_lipschitz_bound(const Expr& f, const Patch& patch, const CompactGrid& K, Interval S,
                                  const std::vector<std::vector<double>>& params, double tol,
                                  const DilatationOptions& opt) {
    double C = 0.0;
    for (const auto& p : params) {
        double v = integrate_checked([&](double t) { return lipschitz_bound(f, patch, t, p, K, opt); }, S, tol, nullptr);
        C = std::max(C, v);
    }
    return C;
}

}  // namespace flowpresheaf
