#include "flowpresheaf/jet.hpp"

#include <map>

namespace flowpresheaf {

namespace {

std::size_t ipow(std::size_t b, std::size_t e) {
    std::size_t r = 1;
    while (e--) r *= b;
    return r;
}

// Digits of a rank-j tuple code, most significant slot first.
void decode(std::size_t code, std::size_t n, std::size_t rank, std::vector<std::size_t>& out) {
    out.assign(rank, 0);
    for (std::size_t s = rank; s-- > 0;) {
        out[s] = code % n;
        code /= n;
    }
}

}  // namespace

std::vector<std::vector<Jet>> covariant_derivative_jets(const std::vector<Jet>& field, bool tangent,
                                                         const std::vector<Jet>& gamma, int levels) {
    const std::size_t vdim = field.size();
    const std::size_t n = field.front().nvars();
    if (tangent ? vdim != n : vdim != 1) throw DomainError("value slot must be scalar or tangent");
    const int M = field.front().order();
    if (levels > M) throw DomainError("jet order too low for requested tower");
    const bool curved = !gamma.empty();
    std::vector<std::vector<Jet>> out;
    out.push_back(field);
    std::vector<std::size_t> tuple;
    for (int j = 1; j <= levels; ++j) {
        const auto& prev = out.back();
        const int q = M - j;
        const std::size_t prev_tuples = ipow(n, static_cast<std::size_t>(j - 1));
        std::vector<Jet> prev_t, gam_t;
        if (curved) {
            for (const auto& v : prev) prev_t.push_back(v.truncate(q));
            for (const auto& g : gamma) gam_t.push_back(g.truncate(q));
        }
        std::vector<Jet> level;
        level.reserve(prev.size() * n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t tp = 0; tp < prev_tuples; ++tp) {
                decode(tp, n, static_cast<std::size_t>(j - 1), tuple);
                for (std::size_t a = 0; a < vdim; ++a) {
                    Jet d = prev[tp * vdim + a].derivative(i);
                    if (curved) {
                        if (tangent) {
                            for (std::size_t b = 0; b < n; ++b)
                                d += gam_t[(a * n + i) * n + b] * prev_t[tp * vdim + b];
                        }
                        for (std::size_t s = 0; s < tuple.size(); ++s) {
                            std::size_t stride = ipow(n, tuple.size() - 1 - s);
                            for (std::size_t b = 0; b < n; ++b) {
                                std::size_t swapped = tp + (b - tuple[s]) * stride;
                                d -= gam_t[(b * n + i) * n + tuple[s]] * prev_t[swapped * vdim + a];
                            }
                        }
                    }
                    level.push_back(std::move(d));
                }
            }
        }
        out.push_back(std::move(level));
    }
    return out;
}

void symmetrize(std::vector<double>& level, std::size_t n, std::size_t rank, std::size_t vdim) {
    if (rank < 2) return;
    const std::size_t tuples = ipow(n, rank);
    std::map<std::vector<std::size_t>, std::pair<std::vector<double>, double>> groups;
    std::vector<std::vector<std::size_t>> keys(tuples);
    std::vector<std::size_t> tuple;
    for (std::size_t c = 0; c < tuples; ++c) {
        decode(c, n, rank, tuple);
        std::vector<std::size_t> counts(n, 0);
        for (auto i : tuple) ++counts[i];
        keys[c] = counts;
        auto& g = groups[counts];
        if (g.first.empty()) g.first.assign(vdim, 0.0);
        for (std::size_t a = 0; a < vdim; ++a) g.first[a] += level[c * vdim + a];
        g.second += 1.0;
    }
    for (std::size_t c = 0; c < tuples; ++c) {
        const auto& g = groups[keys[c]];
        for (std::size_t a = 0; a < vdim; ++a) level[c * vdim + a] = g.first[a] / g.second;
    }
}

JetTower covariant_jet_tower(const std::vector<Jet>& field, bool tangent, const std::vector<Jet>& gamma,
                             const Vec& point, int m) {
    const std::size_t vdim = field.size();
    JetTower t;
    t.tangent = tangent;
    t.point = point;
    t.order = m;
    t.n = field.front().nvars();
    t.vdim = vdim;
    if (field.front().order() < m) throw DomainError("field jet order below tower order");
    if (gamma.empty()) {
        std::vector<std::size_t> tuple;
        for (int j = 0; j <= m; ++j) {
            std::size_t tuples = ipow(t.n, static_cast<std::size_t>(j));
            std::vector<double> level(tuples * vdim);
            std::vector<int> alpha;
            for (std::size_t c = 0; c < tuples; ++c) {
                decode(c, t.n, static_cast<std::size_t>(j), tuple);
                alpha.assign(t.n, 0);
                for (auto i : tuple) ++alpha[i];
                for (std::size_t a = 0; a < vdim; ++a) level[c * vdim + a] = field[a].partial(alpha);
            }
            t.levels.push_back(std::move(level));
        }
        return t;
    }
    std::vector<Jet> trimmed;
    for (const auto& f : field) trimmed.push_back(f.truncate(m));
    auto jets = covariant_derivative_jets(trimmed, tangent, gamma, m);
    for (int j = 0; j <= m; ++j) {
        std::vector<double> level;
        for (const auto& v : jets[static_cast<std::size_t>(j)]) level.push_back(v.value());
        symmetrize(level, t.n, static_cast<std::size_t>(j), vdim);
        t.levels.push_back(std::move(level));
    }
    return t;
}

JetTower covariant_jet_tower(const ExprField& field, const Patch& patch, double t, const Vec& x,
                             const std::vector<double>& p, int m) {
    if (field.dim() != patch.dim()) throw DomainError("field and patch dimensions differ");
    auto fj = field.jets(t, x, p, m);
    std::vector<Jet> gamma;
    if (!patch.flat_connection() && m >= 1) gamma = patch.christoffel_jets(x, m - 1);
    return covariant_jet_tower(fj, true, gamma, x, m);
}

JetTower scalar_jet_tower(const Expr& f, const Patch& patch, const Vec& x, int m) {
    std::vector<double> xs(x.data(), x.data() + x.size());
    std::vector<Jet> fj{taylor_jet(f, 0.0, xs, {}, m)};
    std::vector<Jet> gamma;
    if (!patch.flat_connection() && m >= 1) gamma = patch.christoffel_jets(x, m - 1);
    return covariant_jet_tower(fj, false, gamma, x, m);
}

double level_norm_squared(const std::vector<double>& level, std::size_t n, std::size_t rank, std::size_t vdim,
                          const Mat& ginv, const Mat* bundle) {
    std::vector<double> raised = level, tmp(level.size());
    for (std::size_t s = 0; s < rank; ++s) {
        std::size_t stride = ipow(n, rank - 1 - s) * vdim;
        std::size_t block = stride * n;
        for (std::size_t base = 0; base < raised.size(); base += block)
            for (std::size_t off = 0; off < stride; ++off)
                for (std::size_t k = 0; k < n; ++k) {
                    double acc = 0.0;
                    for (std::size_t l = 0; l < n; ++l)
                        acc += ginv(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) * raised[base + l * stride + off];
                    tmp[base + k * stride + off] = acc;
                }
        raised.swap(tmp);
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < raised.size(); c += vdim) {
        for (std::size_t a = 0; a < vdim; ++a) {
            if (bundle == nullptr) {
                sum += level[c + a] * raised[c + a];
                continue;
            }
            for (std::size_t b = 0; b < vdim; ++b)
                sum += level[c + a] * (*bundle)(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) * raised[c + b];
        }
    }
    return std::max(0.0, sum);
}

std::vector<double> jet_fibre_norms(const JetTower& tower, const Mat& g, const Mat* bundle_metric) {
    require_spd(g, "metric");
    Mat ginv = g.inverse();
    const Mat* bundle = bundle_metric;
    if (bundle == nullptr && tower.tangent) bundle = &g;
    std::vector<double> out;
    double acc = 0.0, fact = 1.0;
    for (std::size_t j = 0; j < tower.levels.size(); ++j) {
        if (j > 0) fact *= static_cast<double>(j);
        acc += level_norm_squared(tower.levels[j], tower.n, j, tower.vdim, ginv, bundle) / (fact * fact);
        out.push_back(std::sqrt(acc));
    }
    return out;
}

double jet_fibre_norm(const JetTower& tower, const Mat& g, const Mat* bundle_metric) {
    return jet_fibre_norms(tower, g, bundle_metric).back();
}

}  // namespace flowpresheaf
