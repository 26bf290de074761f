#include "flowpresheaf/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

namespace flowpresheaf {

namespace {

constexpr double eps = std::numeric_limits<double>::epsilon();

double sup_norm(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

std::vector<Vec> lattice(const std::vector<Interval>& box, std::size_t per_axis, const Vec& centre) {
    std::size_t n = box.size();
    std::vector<std::size_t> counts(n);
    std::size_t total = 1;
    for (std::size_t j = 0; j < n; ++j) {
        counts[j] = box[j].width() > 0 ? std::max<std::size_t>(per_axis, 2) : 1;
        total *= counts[j];
    }
    std::vector<Vec> pts;
    pts.reserve(total + 1);
    pts.push_back(centre);
    for (std::size_t idx = 0; idx < total; ++idx) {
        Vec y(static_cast<Eigen::Index>(n));
        std::size_t rest = idx;
        for (std::size_t j = 0; j < n; ++j) {
            std::size_t k = rest % counts[j];
            rest /= counts[j];
            y[static_cast<Eigen::Index>(j)] =
                counts[j] == 1 ? box[j].lo : box[j].lo + box[j].width() * static_cast<double>(k) / (counts[j] - 1);
        }
        pts.push_back(y);
    }
    return pts;
}

Vec hermite(double ta, const Vec& xa, const Vec& da, double tb, const Vec& xb, const Vec& db, double t) {
    double h = tb - ta;
    if (h == 0.0 || t == ta) return xa;
    if (t == tb) return xb;
    double s = (t - ta) / h;
    double s2 = s * s, s3 = s2 * s;
    // written around xa so a stationary curve stays exactly stationary
    return xa + (3 * s2 - 2 * s3) * (xb - xa) + h * ((s3 - 2 * s2 + s) * da + (s3 - s2) * db);
}

}  // namespace

std::size_t ContractionPlan::iteration_bound(double tol) const {
    if (lambda <= 0.0) return 2;
    if (lambda >= 1.0) return std::numeric_limits<std::size_t>::max();
    double k = std::ceil(std::log(tol / r) / std::log(lambda));
    return static_cast<std::size_t>(std::max(0.0, k)) + 2;
}

Vec FlowTrajectory::eval(double t) const {
    if (times.empty()) throw DomainError("empty trajectory");
    if (t < times.front() || t > times.back())
        throw DomainError("time " + std::to_string(t) + " outside the trajectory");
    auto it = std::upper_bound(times.begin(), times.end(), t);
    std::size_t k = static_cast<std::size_t>(it - times.begin());
    if (k == times.size()) return values.back();
    if (k == 0) return values.front();
    return hermite(times[k - 1], values[k - 1], derivs[k - 1], times[k], values[k], derivs[k], t);
}

FlowSolver::FlowSolver(FieldPtr field, Patch patch, FlowConfig config)
    : field_(std::move(field)), patch_(std::move(patch)), cfg_(config) {
    if (!field_) throw DomainError("flow solver needs a field");
    if (field_->dim() != patch_.dim()) throw DomainError("field and patch dimensions differ");
    if (cfg_.nodes < 2 || cfg_.nodes % 2) throw DomainError("nodes per window must be even and >= 2");
    if (!(cfg_.r > 0) || !(cfg_.alpha_max > 0) || !(cfg_.lambda_target > 0 && cfg_.lambda_target < 1))
        throw DomainError("flow config out of range");
}

ContractionPlan FlowSolver::contraction_setup(double t0, const Vec& x0, const std::vector<double>& p, double sigma,
                                              double alpha_cap) const {
    const std::size_t n = patch_.dim();
    ContractionPlan plan;
    plan.t0 = t0;
    plan.x0 = x0;
    plan.sigma = sigma < 0 ? -1.0 : 1.0;
    plan.r = cfg_.r;
    plan.lambda_target = cfg_.lambda_target;
    alpha_cap = std::min(alpha_cap, cfg_.alpha_max);

    for (std::size_t j = 0; j < n; ++j) {
        const Interval& b = patch_.bounds()[j];
        double c = x0[static_cast<Eigen::Index>(j)];
        double lo = std::max(c - cfg_.r, b.lo), hi = std::min(c + cfg_.r, b.hi);
        if (lo > hi) lo = hi = c;
        plan.box.push_back({lo, hi});
    }
    std::vector<Vec> pts = lattice(plan.box, cfg_.ball_samples, x0);

    // metric comparison constant between d_G and the max coordinate distance
    std::vector<Mat> ginv;
    double lmax = 0.0, lmin = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < pts.size(); ++k) {
        if (patch_.constant_metric() && k > 0) {
            ginv.push_back(ginv.front());
            continue;
        }
        Mat g = patch_.metric(pts[k]);
        Eigen::SelfAdjointEigenSolver<Mat> es(g);
        lmax = std::max(lmax, es.eigenvalues().maxCoeff());
        lmin = std::min(lmin, es.eigenvalues().minCoeff());
        ginv.push_back(g.inverse());
    }
    if (!(lmin > 0)) throw SingularMetric("metric not positive definite near the window start");
    plan.C = std::max(std::sqrt(static_cast<double>(n) * lmax), 1.0 / std::sqrt(lmin));

    auto profile = [&](double s, Vec& A, Vec& D) {
        double t = t0 + plan.sigma * s;
        A.setZero(static_cast<Eigen::Index>(n));
        D.setZero(static_cast<Eigen::Index>(n));
        for (std::size_t k = 0; k < pts.size(); ++k) {
            Vec v = field_->eval(t, pts[k], p);
            Mat J = field_->jacobian(t, pts[k], p);
            for (std::size_t j = 0; j < n; ++j) {
                auto jj = static_cast<Eigen::Index>(j);
                A[jj] = std::max(A[jj], std::fabs(v[jj]));
                Vec row = J.row(jj).transpose();
                D[jj] = std::max(D[jj], std::sqrt(std::max(0.0, row.dot(ginv[k] * row))));
            }
        }
    };
    const std::size_t q = std::max<std::size_t>(cfg_.profile_nodes, 3);
    // trapezoid integrals of the sup-profiles over [0, a] at q nodes, cumulative per node
    auto cumulative = [&](double a, std::vector<Vec>& CA, std::vector<Vec>& CD) {
        CA.assign(q, Vec::Zero(static_cast<Eigen::Index>(n)));
        CD.assign(q, Vec::Zero(static_cast<Eigen::Index>(n)));
        Vec A0, D0, A1, D1;
        double h = a / static_cast<double>(q - 1);
        profile(0.0, A0, D0);
        for (std::size_t i = 1; i < q; ++i) {
            profile(h * static_cast<double>(i), A1, D1);
            CA[i] = CA[i - 1] + 0.5 * h * (A0 + A1);
            CD[i] = CD[i - 1] + 0.5 * h * (D0 + D1);
            A0 = A1;
            D0 = D1;
        }
    };
    const double abs_cap = cfg_.safety * cfg_.r / 2;
    const double dil_cap = cfg_.safety * cfg_.lambda_target / (2 * plan.C);
    auto load = [&](const Vec& IA, const Vec& ID) { return std::max(sup_norm(IA) / abs_cap, sup_norm(ID) / dil_cap); };

    double floor_alpha = cfg_.alpha_min * std::max(1.0, std::fabs(t0));
    double span = alpha_cap, alpha = alpha_cap;
    std::vector<Vec> CA, CD;
    for (int pass = 0; pass < 6; ++pass) {
        cumulative(span, CA, CD);
        if (load(CA.back(), CD.back()) < 1.0) {
            alpha = span;
            break;
        }
        // bisection on the piecewise-linear cumulative integrals
        double h = span / static_cast<double>(q - 1);
        auto at = [&](double a) {
            double u = a / h;
            std::size_t i = std::min(static_cast<std::size_t>(u), q - 2);
            double w = u - static_cast<double>(i);
            return load((1 - w) * CA[i] + w * CA[i + 1], (1 - w) * CD[i] + w * CD[i + 1]);
        };
        double lo = 0.0, hi = span;
        for (int it = 0; it < 50; ++it) {
            double mid = 0.5 * (lo + hi);
            if (at(mid) < 1.0) lo = mid;
            else hi = mid;
        }
        alpha = lo;
        if (alpha < floor_alpha) throw NoAdmissibleWindow("no admissible window at t = " + std::to_string(t0));
        if (alpha >= span / 4) break;
        span = std::min(span, 2 * alpha);  // resolve the profile on the window actually used
    }
    // certify on the chosen window itself
    Vec IA, ID;
    for (;;) {
        cumulative(alpha, CA, CD);
        IA = CA.back();
        ID = CD.back();
        if (load(IA, ID) < 1.0 / cfg_.safety) break;
        alpha *= 0.9;
        if (alpha < floor_alpha) throw NoAdmissibleWindow("no admissible window at t = " + std::to_string(t0));
    }
    plan.alpha = alpha;
    plan.integral_abs.assign(IA.data(), IA.data() + IA.size());
    plan.integral_dil.assign(ID.data(), ID.data() + ID.size());
    plan.lambda = 2 * plan.C * sup_norm(ID);
    return plan;
}

FlowResult FlowSolver::picard_solve(const ContractionPlan& plan, const std::vector<double>& p) const {
    return picard_solve(plan, p, cfg_.tol, cfg_.max_iter);
}

FlowResult FlowSolver::picard_solve(const ContractionPlan& plan, const std::vector<double>& p, double tol,
                                    std::size_t max_iter) const {
    const std::size_t N = cfg_.nodes;
    FlowResult res;
    res.plan = plan;
    res.times.resize(N + 1);
    double h = plan.sigma * plan.alpha / static_cast<double>(N);
    for (std::size_t k = 0; k <= N; ++k) res.times[k] = plan.t0 + h * static_cast<double>(k);
    res.times[N] = plan.t0 + plan.sigma * plan.alpha;

    std::vector<Vec> phi(N + 1, plan.x0), next(N + 1), F(N + 1);
    double prev_change = -1.0;
    for (std::size_t it = 1;; ++it) {
        for (std::size_t k = 0; k <= N; ++k) F[k] = field_->eval(res.times[k], phi[k], p);
        next[0] = plan.x0;
        double change = 0.0, scale = sup_norm(plan.x0);
        for (std::size_t k = 1; k <= N; ++k) {
            double hk = res.times[k] - res.times[k - 1];
            next[k] = next[k - 1] + 0.5 * hk * (F[k - 1] + F[k]);
            change = std::max(change, sup_norm(next[k] - phi[k]));
            scale = std::max(scale, sup_norm(next[k]));
        }
        if (!std::isfinite(change)) throw NonContraction("Picard iterate is not finite");
        double roundoff = 64 * eps * std::max(1.0, scale);
        double tol_eff = std::max(tol, roundoff);
        if (prev_change > 100 * roundoff && change > 100 * roundoff) {
            double ratio = change / prev_change;
            res.ratios.push_back(ratio);
            if (ratio > 1.0)
                throw NonContraction("Picard sup-change grew by " + std::to_string(ratio));
        }
        phi.swap(next);
        res.iterations = it;
        res.residual = change;
        res.tol_used = tol_eff;
        if (change <= tol_eff) break;
        if (it >= max_iter) throw MaxIterExceeded("Picard iteration did not reach tolerance");
        prev_change = change;
    }
    res.values = std::move(phi);
    return res;
}

void FlowSolver::chain(double t0, const Vec& x0, const std::vector<double>& p, double t_end, std::vector<double>& ts,
                       std::vector<Vec>& xs, std::vector<FlowResult>* windows) const {
    // Windows never depend on t_end, so every query from (t0, x0) sees the same nodes.
    double sigma = t_end >= t0 ? 1.0 : -1.0;
    double t = t0;
    Vec x = x0;
    while (sigma * (t_end - t) > 0) {
        ContractionPlan plan = contraction_setup(t, x, p, sigma, cfg_.alpha_max);
        FlowResult res;
        for (int halving = 0;; ++halving) {
            try {
                res = picard_solve(plan, p);
                break;
            } catch (const NonContraction&) {
                if (halving >= cfg_.max_halvings) throw;
            } catch (const MaxIterExceeded&) {
                if (halving >= cfg_.max_halvings) throw;
            }
            plan.alpha /= 2;
        }
        for (std::size_t k = 1; k < res.times.size(); ++k) {
            if (!patch_.contains(res.values[k])) {
                // first boundary crossing inside the step, on the Hermite interpolant
                double ta = res.times[k - 1], tb = res.times[k];
                Vec da = field_->eval(ta, res.values[k - 1], p), db = field_->eval(tb, res.values[k], p);
                double lo = 0.0, hi = 1.0;
                for (int it = 0; it < 60; ++it) {
                    double mid = 0.5 * (lo + hi);
                    Vec y = hermite(ta, res.values[k - 1], da, tb, res.values[k], db, ta + mid * (tb - ta));
                    if (patch_.contains(y)) lo = mid;
                    else hi = mid;
                }
                double te = ta + hi * (tb - ta);
                if (sigma * (t_end - te) <= 0) {
                    // the target is reached before the crossing
                    ts.push_back(res.times[k]);
                    xs.push_back(res.values[k]);
                    if (windows) windows->push_back(std::move(res));
                    return;
                }
                Vec y = hermite(ta, res.values[k - 1], da, tb, res.values[k], db, te);
                ts.push_back(te);
                xs.push_back(y);
                throw EscapedPatch(te, std::vector<double>(y.data(), y.data() + y.size()));
            }
            ts.push_back(res.times[k]);
            xs.push_back(res.values[k]);
        }
        t = res.times.back();
        x = res.values.back();
        if (windows) windows->push_back(std::move(res));
    }
}

FlowTrajectory FlowSolver::trajectory(double t0, const Vec& x0, const std::vector<double>& p, double ta,
                                      double tb) const {
    if (!patch_.contains(x0)) throw EscapedPatch(t0, std::vector<double>(x0.data(), x0.data() + x0.size()));
    double lo = std::min(t0, ta), hi = std::max(t0, tb);
    FlowTrajectory tr;
    tr.t0 = t0;
    tr.x0 = x0;
    std::vector<double> bt, ft;
    std::vector<Vec> bx, fx;
    chain(t0, x0, p, lo, bt, bx, &tr.windows);
    chain(t0, x0, p, hi, ft, fx, &tr.windows);
    for (std::size_t k = bt.size(); k-- > 0;) {
        tr.times.push_back(bt[k]);
        tr.values.push_back(bx[k]);
    }
    tr.times.push_back(t0);
    tr.values.push_back(x0);
    tr.times.insert(tr.times.end(), ft.begin(), ft.end());
    tr.values.insert(tr.values.end(), fx.begin(), fx.end());
    tr.derivs.reserve(tr.times.size());
    for (std::size_t k = 0; k < tr.times.size(); ++k) tr.derivs.push_back(field_->eval(tr.times[k], tr.values[k], p));
    return tr;
}

Vec FlowSolver::flow_map(double t1, double t0, const Vec& x0, const std::vector<double>& p) const {
    if (!patch_.contains(x0)) throw EscapedPatch(t0, std::vector<double>(x0.data(), x0.data() + x0.size()));
    if (t1 == t0) return x0;
    std::vector<double> ts{t0};
    std::vector<Vec> xs{x0};
    chain(t0, x0, p, t1, ts, xs, nullptr);
    double sigma = t1 > t0 ? 1.0 : -1.0;
    std::size_t k = 1;
    while (k + 1 < ts.size() && sigma * (t1 - ts[k]) > 0) ++k;
    std::size_t a = sigma > 0 ? k - 1 : k, b = sigma > 0 ? k : k - 1;
    // same interpolant as FlowTrajectory::eval, with the nodes in increasing time
    if (t1 == ts[b]) return xs[b];
    return hermite(ts[a], xs[a], field_->eval(ts[a], xs[a], p), ts[b], xs[b], field_->eval(ts[b], xs[b], p), t1);
}

FlowDomain FlowSolver::flow_domain(double t0, const Vec& x0, const std::vector<double>& p, double t_max) const {
    FlowDomain d;
    if (!patch_.contains(x0)) throw EscapedPatch(t0, std::vector<double>(x0.data(), x0.data() + x0.size()));
    auto run = [&](double t_end, double& out, bool& escaped) {
        std::vector<double> ts;
        std::vector<Vec> xs;
        try {
            chain(t0, x0, p, t_end, ts, xs, nullptr);
            out = t_end;
        } catch (const EscapedPatch& e) {
            out = e.t_escape;
            escaped = true;
        } catch (const NoAdmissibleWindow&) {
            out = ts.empty() ? t0 : ts.back();
            escaped = true;
        }
    };
    run(t0 + t_max, d.hi, d.hi_escaped);
    run(t0 - t_max, d.lo, d.lo_escaped);
    return d;
}

Vec rk_oracle(const VectorField& X, const Patch& patch, double t1, double t0, const Vec& x0,
              const std::vector<double>& p, std::size_t steps) {
    if (steps == 0) throw DomainError("RK4 needs at least one step");
    double h = (t1 - t0) / static_cast<double>(steps);
    Vec x = x0;
    for (std::size_t i = 0; i < steps; ++i) {
        double t = t0 + h * static_cast<double>(i);
        Vec k1 = X.eval(t, x, p);
        Vec k2 = X.eval(t + h / 2, x + h / 2 * k1, p);
        Vec k3 = X.eval(t + h / 2, x + h / 2 * k2, p);
        Vec k4 = X.eval(t + h, x + h * k3, p);
        x += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
        if (!patch.contains(x) || !x.allFinite())
            throw EscapedPatch(t + h, std::vector<double>(x.data(), x.data() + x.size()));
    }
    return x;
}

double weak_residual(const FlowTrajectory& traj, const VectorField& X, const std::vector<double>& p,
                     const std::vector<Expr>& fs) {
    auto it = std::find(traj.times.begin(), traj.times.end(), traj.t0);
    if (it == traj.times.end()) throw DomainError("trajectory does not pass through its start time");
    std::size_t i0 = static_cast<std::size_t>(it - traj.times.begin());
    double worst = 0.0;
    for (const Expr& f : fs) {
        std::vector<double> fv(traj.times.size()), g(traj.times.size());
        for (std::size_t k = 0; k < traj.times.size(); ++k) {
            std::vector<double> x(traj.values[k].data(), traj.values[k].data() + traj.values[k].size());
            Jet j = taylor_jet(f, traj.times[k], x, p, 1);
            Vec v = X.eval(traj.times[k], traj.values[k], p);
            fv[k] = j.value();
            double s = 0.0;
            std::vector<int> a(x.size(), 0);
            for (std::size_t i = 0; i < x.size(); ++i) {
                a[i] = 1;
                s += j.partial(a) * v[static_cast<Eigen::Index>(i)];
                a[i] = 0;
            }
            g[k] = s;
        }
        // walk away from t0 in both directions, Simpson over node pairs
        for (int dir : {1, -1}) {
            double I = 0.0;
            std::ptrdiff_t k = static_cast<std::ptrdiff_t>(i0);
            auto inside = [&](std::ptrdiff_t q) { return q >= 0 && q < static_cast<std::ptrdiff_t>(fv.size()); };
            while (inside(k + dir)) {
                auto a = static_cast<std::size_t>(k), b = static_cast<std::size_t>(k + dir);
                if (inside(k + 2 * dir)) {
                    auto c = static_cast<std::size_t>(k + 2 * dir);
                    double h = traj.times[c] - traj.times[a];
                    I += h / 6 * (g[a] + 4 * g[b] + g[c]);
                    k += 2 * dir;
                } else {
                    I += 0.5 * (traj.times[b] - traj.times[a]) * (g[a] + g[b]);
                    k += dir;
                }
                auto e = static_cast<std::size_t>(k);
                worst = std::max(worst, std::fabs(fv[e] - fv[i0] - I));
            }
        }
    }
    return worst;
}

ResidualReport residual_checks(const FlowSolver& solver, const std::vector<FlowTrajectory>& trajectories,
                               const std::vector<double>& p, const std::vector<Expr>& fs,
                               const std::vector<FlowTuple>& tuples, double quad_tol) {
    ResidualReport r;
    r.quad_tol = quad_tol;
    for (const auto& tr : trajectories) r.weak = std::max(r.weak, weak_residual(tr, solver.field(), p, fs));
    for (const auto& q : tuples) {
        Vec y = solver.flow_map(q.t1, q.t0, q.x, p);
        Vec a = solver.flow_map(q.t2, q.t1, y, p);
        Vec b = solver.flow_map(q.t2, q.t0, q.x, p);
        r.composition = std::max(r.composition, sup_norm(a - b));
        Vec back = solver.flow_map(q.t0, q.t1, y, p);
        r.inverse = std::max(r.inverse, sup_norm(back - q.x));
    }
    r.flagged = r.weak > 5 * quad_tol;
    return r;
}

}  // namespace flowpresheaf
