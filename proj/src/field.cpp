#include "flowpresheaf/field.hpp"

#include <algorithm>

namespace flowpresheaf {

Mat VectorField::jacobian(double t, const Vec& x, const std::vector<double>& p) const {
    const auto n = static_cast<Eigen::Index>(dim());
    Mat J(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        double h = 1e-6 * std::max(1.0, std::fabs(x[j]));
        Vec xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        J.col(j) = (eval(t, xp, p) - eval(t, xm, p)) / (2.0 * h);
    }
    return J;
}

ExprField::ExprField(std::vector<Expr> components, std::size_t nparams)
    : comps_(std::move(components)), nparams_(nparams) {
    if (comps_.empty()) throw DomainError("field needs at least one component");
}

ExprField ExprField::parse(const std::vector<std::string>& components, std::size_t nparams) {
    Symbols s;
    s.coords = components.size();
    s.params = nparams;
    s.time = true;
    std::vector<Expr> out;
    for (const auto& c : components) out.push_back(parse_expr(c, s));
    return ExprField(std::move(out), nparams);
}

Vec ExprField::eval(double t, const Vec& x, const std::vector<double>& p) const {
    Vec out(static_cast<Eigen::Index>(comps_.size()));
    for (std::size_t i = 0; i < comps_.size(); ++i)
        out[static_cast<Eigen::Index>(i)] =
            eval_at(comps_[i], t, x.data(), static_cast<std::size_t>(x.size()), p.data(), p.size());
    return out;
}

std::vector<Jet> ExprField::jets(double t, const Vec& x, const std::vector<double>& p, int order) const {
    std::vector<double> xs(x.data(), x.data() + x.size());
    std::vector<Jet> out;
    out.reserve(comps_.size());
    for (const auto& c : comps_) out.push_back(taylor_jet(c, t, xs, p, order));
    return out;
}

Mat ExprField::jacobian(double t, const Vec& x, const std::vector<double>& p) const {
    const std::size_t n = comps_.size();
    auto js = jets(t, x, p, 1);
    Mat J(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    std::vector<int> alpha(n, 0);
    for (std::size_t j = 0; j < n; ++j) {
        alpha.assign(n, 0);
        alpha[j] = 1;
        for (std::size_t i = 0; i < n; ++i)
            J(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = js[i].partial(alpha);
    }
    return J;
}

ExprField ExprField::combine(double a, const ExprField& other, double b) const {
    if (other.dim() != dim()) throw DomainError("field dimensions differ");
    std::vector<Expr> out;
    for (std::size_t i = 0; i < dim(); ++i) {
        Expr l = Expr::binary(Expr::Kind::Mul, Expr::number(a), comps_[i]);
        Expr r = Expr::binary(Expr::Kind::Mul, Expr::number(b), other.comps_[i]);
        out.push_back(Expr::binary(Expr::Kind::Add, std::move(l), std::move(r)));
    }
    return ExprField(std::move(out), std::max(nparams_, other.nparams_));
}

ExprField ExprField::scaled(double a) const {
    std::vector<Expr> out;
    for (const auto& c : comps_) out.push_back(Expr::binary(Expr::Kind::Mul, Expr::number(a), c));
    return ExprField(std::move(out), nparams_);
}

std::string ExprField::describe() const {
    std::string s = "[";
    for (std::size_t i = 0; i < comps_.size(); ++i) {
        if (i) s += ", ";
        s += to_string(comps_[i]);
    }
    return s + "]";
}

HolField HolField::parse(const std::string& src) {
    Symbols s;
    s.coords = 0;
    s.time = false;
    s.z = true;
    return HolField(parse_expr(src, s));
}

std::complex<double> HolField::eval(std::complex<double> z) const {
    Scope<std::complex<double>> s;
    s.t = 0.0;
    s.z = z;
    auto v = flowpresheaf::eval(f_, s);
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) throw DomainError("non-finite value");
    return v;
}

GridField::GridField(std::vector<std::vector<double>> axes, std::vector<Vec> values)
    : axes_(std::move(axes)), values_(std::move(values)) {
    std::size_t total = 1;
    for (const auto& a : axes_) {
        if (a.empty()) throw DomainError("grid field axis is empty");
        if (!std::is_sorted(a.begin(), a.end())) throw DomainError("grid field axis must be increasing");
        total *= a.size();
    }
    if (axes_.size() < 2 || values_.size() != total) throw DomainError("grid field shape mismatch");
    dim_ = static_cast<std::size_t>(values_.front().size());
    if (dim_ + 1 != axes_.size()) throw DomainError("grid field dimension mismatch");
}

namespace {

// Up to four stencil nodes around v and their Lagrange weights.
void stencil(const std::vector<double>& ax, double v, std::vector<std::size_t>& idx, std::vector<double>& w) {
    idx.clear();
    w.clear();
    const std::size_t m = ax.size();
    if (m == 1) {
        idx.push_back(0);
        w.push_back(1.0);
        return;
    }
    std::size_t k = static_cast<std::size_t>(std::upper_bound(ax.begin(), ax.end(), v) - ax.begin());
    k = std::clamp<std::size_t>(k, 1, m - 1);  // v in [ax[k-1], ax[k]]
    std::size_t width = std::min<std::size_t>(4, m);
    std::size_t lo = k >= 2 ? k - 2 : 0;
    if (lo + width > m) lo = m - width;
    for (std::size_t i = lo; i < lo + width; ++i) {
        double wi = 1.0;
        for (std::size_t j = lo; j < lo + width; ++j)
            if (j != i) wi *= (v - ax[j]) / (ax[i] - ax[j]);
        idx.push_back(i);
        w.push_back(wi);
    }
}

}  // namespace

Vec GridField::eval(double t, const Vec& x, const std::vector<double>&) const {
    const std::size_t axes = axes_.size();
    std::vector<std::vector<std::size_t>> idx(axes);
    std::vector<std::vector<double>> w(axes);
    for (std::size_t a = 0; a < axes; ++a)
        stencil(axes_[a], a == 0 ? t : x[static_cast<Eigen::Index>(a - 1)], idx[a], w[a]);
    Vec out = Vec::Zero(static_cast<Eigen::Index>(dim_));
    std::vector<std::size_t> c(axes, 0);
    while (true) {
        std::size_t flat = 0;
        double weight = 1.0;
        for (std::size_t a = 0; a < axes; ++a) {
            flat = flat * axes_[a].size() + idx[a][c[a]];
            weight *= w[a][c[a]];
        }
        out += weight * values_[flat];
        std::size_t a = axes;
        while (a-- > 0) {
            if (++c[a] < idx[a].size()) break;
            c[a] = 0;
        }
        if (a == static_cast<std::size_t>(-1)) break;
    }
    return out;
}

}  // namespace flowpresheaf
