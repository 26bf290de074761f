#include "flowpresheaf/taylor.hpp"

#include <cmath>
#include <map>
#include <mutex>

#include "flowpresheaf/errors.hpp"

namespace flowpresheaf {

namespace {

void enumerate(std::size_t n, int degree, std::vector<int>& cur, std::size_t var,
               std::vector<std::vector<int>>& out) {
    if (var + 1 == n) {
        cur[var] = degree;
        out.push_back(cur);
        return;
    }
    for (int k = degree; k >= 0; --k) {
        cur[var] = k;
        enumerate(n, degree - k, cur, var + 1, out);
    }
    cur[var] = 0;
}

std::shared_ptr<JetLayout> build_layout(std::size_t n, int order) {
    auto L = std::make_shared<JetLayout>();
    L->nvars = n;
    L->order = order;
    std::vector<int> cur(n, 0);
    for (int d = 0; d <= order; ++d) {
        if (n == 0) {
            if (d == 0) L->index.push_back({});
            continue;
        }
        enumerate(n, d, cur, 0, L->index);
    }
    std::size_t dense = 1;
    for (std::size_t i = 0; i < n; ++i) dense *= static_cast<std::size_t>(order + 1);
    if (dense > (1u << 24)) throw DomainError("jet layout too large");
    L->lookup.assign(dense, -1);
    for (std::size_t p = 0; p < L->index.size(); ++p) {
        const auto& a = L->index[p];
        std::size_t code = 0, base = 1;
        int deg = 0;
        double fact = 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            code += static_cast<std::size_t>(a[i]) * base;
            base *= static_cast<std::size_t>(order + 1);
            deg += a[i];
            for (int k = 2; k <= a[i]; ++k) fact *= k;
        }
        L->lookup[code] = static_cast<int>(p);
        L->degree.push_back(deg);
        L->factorial.push_back(fact);
    }
    std::vector<int> sum(n);
    for (std::size_t p = 0; p < L->index.size(); ++p) {
        for (std::size_t q = 0; q < L->index.size(); ++q) {
            if (L->degree[p] + L->degree[q] > order) continue;
            for (std::size_t i = 0; i < n; ++i) sum[i] = L->index[p][i] + L->index[q][i];
            L->mul_out.push_back(L->position(sum));
            L->mul_lhs.push_back(static_cast<int>(p));
            L->mul_rhs.push_back(static_cast<int>(q));
        }
    }
    return L;
}

}  // namespace

int JetLayout::position(const std::vector<int>& a) const {
    std::size_t code = 0, base = 1;
    int deg = 0;
    for (std::size_t i = 0; i < nvars; ++i) {
        if (a[i] < 0) return -1;
        deg += a[i];
        if (deg > order) return -1;
        code += static_cast<std::size_t>(a[i]) * base;
        base *= static_cast<std::size_t>(order + 1);
    }
    return lookup[code];
}

namespace {

using LayoutCache = std::map<std::pair<std::size_t, int>, std::shared_ptr<JetLayout>>;

std::shared_ptr<JetLayout> obtain(LayoutCache& cache, std::size_t nvars, int order) {
    auto it = cache.find({nvars, order});
    if (it != cache.end()) return it->second;
    auto L = build_layout(nvars, order);
    if (order > 0) {
        auto low = obtain(cache, nvars, order - 1);
        L->shift.resize(nvars);
        for (std::size_t v = 0; v < nvars; ++v) {
            for (std::size_t q = 0; q < low->size(); ++q) {
                auto a = low->index[q];
                a[v] += 1;
                L->shift[v].emplace_back(static_cast<int>(q), L->position(a));
            }
        }
    }
    cache[{nvars, order}] = L;
    return L;
}

}  // namespace

std::shared_ptr<const JetLayout> JetLayout::get(std::size_t nvars, int order) {
    static std::mutex mu;
    static LayoutCache cache;
    if (order < 0) throw DomainError("negative jet order");
    std::lock_guard<std::mutex> lock(mu);
    return obtain(cache, nvars, order);
}

Jet::Jet(std::shared_ptr<const JetLayout> layout, double value)
    : layout_(std::move(layout)), c_(layout_->size(), 0.0) {
    c_[0] = value;
}

Jet Jet::variable(std::shared_ptr<const JetLayout> layout, std::size_t var, double value) {
    Jet j(std::move(layout), value);
    if (j.order() >= 1) {
        std::vector<int> a(j.nvars(), 0);
        a[var] = 1;
        j.c_[static_cast<std::size_t>(j.layout_->position(a))] = 1.0;
    }
    return j;
}

double Jet::partial(const std::vector<int>& a) const {
    int p = layout_->position(a);
    if (p < 0) throw DomainError("multi-index outside jet order");
    return c_[static_cast<std::size_t>(p)] * layout_->factorial[static_cast<std::size_t>(p)];
}

Jet Jet::derivative(std::size_t var) const {
    if (order() == 0) throw DomainError("cannot differentiate an order-0 jet");
    auto low = JetLayout::get(nvars(), order() - 1);
    Jet d(low, 0.0);
    for (auto [q, src] : layout_->shift[var]) {
        d.c_[static_cast<std::size_t>(q)] =
            (low->index[static_cast<std::size_t>(q)][var] + 1) * c_[static_cast<std::size_t>(src)];
    }
    return d;
}

Jet Jet::truncate(int order) const {
    if (order >= this->order()) return *this;
    auto low = JetLayout::get(nvars(), order);
    Jet t(low, 0.0);
    for (std::size_t q = 0; q < low->size(); ++q) t.c_[q] = c_[q];
    return t;
}

Jet& Jet::operator+=(const Jet& o) {
    for (std::size_t i = 0; i < c_.size(); ++i) c_[i] += o.c_[i];
    return *this;
}

Jet& Jet::operator-=(const Jet& o) {
    for (std::size_t i = 0; i < c_.size(); ++i) c_[i] -= o.c_[i];
    return *this;
}

Jet& Jet::operator*=(double s) {
    for (auto& v : c_) v *= s;
    return *this;
}

Jet operator-(Jet a) {
    for (auto& v : a.c_) v = -v;
    return a;
}

Jet operator*(const Jet& a, const Jet& b) {
    Jet r(a.layout_, 0.0);
    const auto& L = *a.layout_;
    for (std::size_t i = 0; i < L.mul_out.size(); ++i) {
        r.c_[static_cast<std::size_t>(L.mul_out[i])] +=
            a.c_[static_cast<std::size_t>(L.mul_lhs[i])] * b.c_[static_cast<std::size_t>(L.mul_rhs[i])];
    }
    return r;
}

Jet operator/(const Jet& a, const Jet& b) { return a * reciprocal(b); }

Jet Jet::compose(const std::vector<double>& series) const {
    Jet tail = *this;
    tail.c_[0] = 0.0;
    int K = std::min<int>(order(), static_cast<int>(series.size()) - 1);
    Jet r(layout_, series[static_cast<std::size_t>(K)]);
    for (int k = K - 1; k >= 0; --k) {
        r = r * tail;
        r.c_[0] += series[static_cast<std::size_t>(k)];
    }
    return r;
}

namespace {

void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw DomainError(std::string("non-finite value in ") + what);
}

}  // namespace

Jet reciprocal(const Jet& a) {
    double a0 = a.value();
    if (a0 == 0.0) throw DomainError("division by zero");
    std::vector<double> s(static_cast<std::size_t>(a.order()) + 1);
    double inv = 1.0 / a0, term = inv;
    for (auto& v : s) {
        v = term;
        term *= -inv;
    }
    return a.compose(s);
}

Jet exp(const Jet& a) {
    std::vector<double> s(static_cast<std::size_t>(a.order()) + 1);
    double e = std::exp(a.value());
    require_finite(e, "exp");
    double term = e;
    for (std::size_t k = 0; k < s.size(); ++k) {
        s[k] = term;
        term /= static_cast<double>(k + 1);
    }
    return a.compose(s);
}

Jet log(const Jet& a) {
    double a0 = a.value();
    if (!(a0 > 0.0)) throw DomainError("log of non-positive value");
    std::vector<double> s(static_cast<std::size_t>(a.order()) + 1);
    s[0] = std::log(a0);
    double p = 1.0;
    for (std::size_t k = 1; k < s.size(); ++k) {
        p /= a0;
        s[k] = ((k % 2) ? 1.0 : -1.0) * p / static_cast<double>(k);
    }
    return a.compose(s);
}

namespace {

std::vector<double> trig_series(double a0, std::size_t n, bool is_sin) {
    double sv = std::sin(a0), cv = std::cos(a0);
    double cyc_sin[4] = {sv, cv, -sv, -cv};
    double cyc_cos[4] = {cv, -sv, -cv, sv};
    std::vector<double> s(n);
    double fact = 1.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (k > 0) fact *= static_cast<double>(k);
        s[k] = (is_sin ? cyc_sin[k % 4] : cyc_cos[k % 4]) / fact;
    }
    return s;
}

}  // namespace

Jet sin(const Jet& a) { return a.compose(trig_series(a.value(), static_cast<std::size_t>(a.order()) + 1, true)); }
Jet cos(const Jet& a) { return a.compose(trig_series(a.value(), static_cast<std::size_t>(a.order()) + 1, false)); }

Jet tanh(const Jet& a) {
    std::size_t n = static_cast<std::size_t>(a.order()) + 1;
    std::vector<double> y(n, 0.0);
    y[0] = std::tanh(a.value());
    for (std::size_t k = 0; k + 1 < n; ++k) {
        double conv = 0.0;
        for (std::size_t i = 0; i <= k; ++i) conv += y[i] * y[k - i];
        y[k + 1] = ((k == 0 ? 1.0 : 0.0) - conv) / static_cast<double>(k + 1);
    }
    return a.compose(y);
}

Jet abs(const Jet& a) {
    double a0 = a.value();
    if (a0 == 0.0) {
        if (a.order() > 0) throw DomainError("abs is not differentiable at 0");
        return a;
    }
    return a0 > 0 ? a : -a;
}

Jet pow(const Jet& a, double c) {
    double a0 = a.value();
    bool integer = std::floor(c) == c && std::fabs(c) < 1e9;
    if (integer && c >= 0) {
        Jet r(a.layout_ptr(), 1.0), base = a;
        auto e = static_cast<long long>(c);
        while (e > 0) {
            if (e & 1) r = r * base;
            e >>= 1;
            if (e) base = base * base;
        }
        return r;
    }
    if (integer) return reciprocal(pow(a, -c));
    if (a0 < 0.0) throw DomainError("negative base with non-integer exponent");
    if (a0 == 0.0) {
        if (a.order() > 0 || c < 0) throw DomainError("power not differentiable at 0");
        return Jet(a.layout_ptr(), 0.0);
    }
    std::vector<double> s(static_cast<std::size_t>(a.order()) + 1);
    double term = std::pow(a0, c);
    for (std::size_t k = 0; k < s.size(); ++k) {
        s[k] = term;
        term *= (c - static_cast<double>(k)) / (static_cast<double>(k + 1) * a0);
    }
    return a.compose(s);
}

Jet sqrt(const Jet& a) {
    if (a.value() < 0.0) throw DomainError("sqrt of negative value");
    return pow(a, 0.5);
}

}  // namespace flowpresheaf
