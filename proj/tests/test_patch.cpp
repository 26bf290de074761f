#include <cmath>
#include <random>

#include "doctest.h"
#include "flowpresheaf/patch.hpp"

using namespace flowpresheaf;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }
Vec v2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

Patch polar() { return Patch::from_strings({{1.0, 3.0}, {-1.0, 1.5}}, {"1", "0", "0", "x1^2"}); }

}  // namespace

TEST_CASE("Levi-Civita symbols") {
    SUBCASE("flat") {
        Patch p = Patch::euclidean({{-1, 1}, {-1, 1}});
        for (double g : levi_civita_christoffels(p, v2(0.3, -0.2))) CHECK(g == 0.0);
    }
    SUBCASE("exponential conformal factor in one dimension") {
        Patch p = Patch::from_strings({{-1, 1}}, {"exp(2*x1)"});
        CHECK(levi_civita_christoffels(p, v1(0.0))[0] == doctest::Approx(1.0));
    }
    SUBCASE("polar coordinates") {
        auto g = levi_civita_christoffels(polar(), v2(2.0, 0.3));
        // index (k * n + i) * n + j
        CHECK(g[(0 * 2 + 1) * 2 + 1] == doctest::Approx(-2.0));
        CHECK(g[(1 * 2 + 0) * 2 + 1] == doctest::Approx(0.5));
        CHECK(g[(1 * 2 + 1) * 2 + 0] == doctest::Approx(0.5));
        CHECK(g[0] == doctest::Approx(0.0));
    }
    SUBCASE("singular metric") {
        Patch p = Patch::from_strings({{-1, 1}}, {"x1^2"});
        CHECK_THROWS_AS(levi_civita_christoffels(p, v1(0.0)), SingularMetric);
    }
}

TEST_CASE("Levi-Civita connection is metric compatible") {
    Patch p = Patch::from_strings({{-1, 1}, {-1, 1}}, {"1 + x1^2", "0.3*x2", "0.3*x2", "2 + sin(x1*x2)"});
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-0.8, 0.8);
    for (int trial = 0; trial < 20; ++trial) {
        Vec x = v2(u(rng), u(rng)), V = v2(u(rng), u(rng)), W = v2(u(rng), u(rng));
        auto gam = p.christoffel(x);
        Mat g = p.metric(x);
        for (int l = 0; l < 2; ++l) {
            double h = 1e-5;
            Vec xp = x, xm = x;
            xp[l] += h;
            xm[l] -= h;
            double lhs = (V.dot(p.metric(xp) * W) - V.dot(p.metric(xm) * W)) / (2 * h);
            Vec dV = Vec::Zero(2), dW = Vec::Zero(2);
            for (int k = 0; k < 2; ++k)
                for (int j = 0; j < 2; ++j) {
                    dV[k] += gam[(k * 2 + l) * 2 + j] * V[j];
                    dW[k] += gam[(k * 2 + l) * 2 + j] * W[j];
                }
            double rhs = dV.dot(g * W) + V.dot(g * dW);
            CHECK(lhs == doctest::Approx(rhs).epsilon(1e-7));
        }
    }
}

TEST_CASE("geodesic distance") {
    CHECK(geodesic_distance(Patch::euclidean({{-5, 5}, {-5, 5}}), v2(0, 0), v2(3, 4)) == doctest::Approx(5.0));
    CHECK(geodesic_distance(Patch::from_strings({{-1, 2}}, {"4"}), v1(0), v1(1)) == doctest::Approx(2.0));
    double d = geodesic_distance(Patch::from_strings({{-1, 2}}, {"exp(2*x1)"}), v1(0), v1(1), 1e-9);
    CHECK(std::fabs(d - (std::exp(1.0) - 1.0)) <= 1e-7);
    // chord of the circle r = 2 between angles 0 and 0.5
    double chord = geodesic_distance(polar(), v2(2.0, 0.0), v2(2.0, 0.5), 1e-9);
    CHECK(chord == doctest::Approx(4.0 * std::sin(0.25)).epsilon(1e-6));
}

TEST_CASE("geodesic distance: symmetry and triangle inequality") {
    Patch p = polar();
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> r(1.5, 2.5), th(-0.5, 0.8);
    const double tol = 1e-7;
    for (int trial = 0; trial < 6; ++trial) {
        Vec a = v2(r(rng), th(rng)), b = v2(r(rng), th(rng)), c = v2(r(rng), th(rng));
        double ab = geodesic_distance(p, a, b, tol), ba = geodesic_distance(p, b, a, tol);
        double ac = geodesic_distance(p, a, c, tol), bc = geodesic_distance(p, b, c, tol);
        CHECK(std::fabs(ab - ba) <= 2 * tol);
        CHECK(ac <= ab + bc + 3 * tol);
    }
}

TEST_CASE("parallel transport") {
    SUBCASE("flat connection is the identity") {
        Patch p = Patch::euclidean({{-1, 1}, {-1, 1}});
        std::vector<Vec> curve{v2(0, 0), v2(0.5, 0), v2(0.5, 0.5), v2(0, 0)};
        Vec v = v2(0.3, -1.2);
        CHECK((parallel_transport(p, curve, v) - v).norm() == 0.0);
    }
    SUBCASE("polar circle keeps the Cartesian vector fixed") {
        Patch p = polar();
        std::vector<Vec> curve;
        const double phi = 1.0;
        // piecewise-linear curves in (r, theta) are not circles; use many samples
        for (int k = 0; k <= 400; ++k) curve.push_back(v2(2.0, phi * k / 400.0));
        Vec w = parallel_transport(p, curve, v2(1.0, 0.0));
        CHECK(w[0] == doctest::Approx(std::cos(phi)).epsilon(1e-9));
        CHECK(w[1] == doctest::Approx(-std::sin(phi) / 2.0).epsilon(1e-9));
    }
    SUBCASE("norm is preserved along an arbitrary curve") {
        Patch p = Patch::from_strings({{-1, 1}, {-1, 1}}, {"1 + x1^2", "0.3*x2", "0.3*x2", "2 + sin(x1*x2)"});
        std::vector<Vec> curve;
        for (int k = 0; k <= 40; ++k) {
            double s = k / 40.0;
            curve.push_back(v2(0.6 * std::cos(4 * s), 0.5 * std::sin(3 * s)));
        }
        Vec v = v2(0.7, -0.4);
        Vec w = parallel_transport(p, curve, v);
        double n0 = v.dot(p.metric(curve.front()) * v), n1 = w.dot(p.metric(curve.back()) * w);
        CHECK(std::fabs(n1 - n0) <= 1e-8 * n0);
    }
    SUBCASE("coarse step budget is reported") {
        Patch p = polar();
        TransportOptions opt;
        opt.max_substeps = 1;
        opt.tol = 1e-14;
        std::vector<Vec> curve{v2(1.2, -1.0), v2(2.8, 1.4)};
        CHECK_THROWS_AS(parallel_transport(p, curve, v2(1, 0), opt), StepTooCoarse);
    }
}

TEST_CASE("metric equivalence constant") {
    auto grid = CompactGrid::tensor({{-1, 1}}, {9});
    Patch g1 = Patch::from_strings({{-1, 1}}, {"exp(2*x1)"});
    Patch g2 = Patch::from_strings({{-1, 1}}, {"4*exp(2*x1)"});
    auto r = metric_equivalence_constant(g1, g2, grid, 100);
    CHECK(r.c == doctest::Approx(2.0).epsilon(0.01));
    auto same = metric_equivalence_constant(g1, g1, grid, 100);
    CHECK(same.c == doctest::Approx(1.0));

    Mat a = Mat::Identity(2, 2), b(2, 2);
    b << 1, 0, 0, 4;
    CHECK(std::sqrt(quadratic_form_constant(a, b)) == doctest::Approx(2.0));

    auto grid2 = CompactGrid::tensor({{-1, 1}, {-1, 1}}, {5, 5});
    auto e = metric_equivalence_constant(Patch::euclidean({{-1, 1}, {-1, 1}}),
                                         Patch::from_strings({{-1, 1}, {-1, 1}}, {"1", "0", "0", "4"}), grid2, 300);
    CHECK(e.c <= 2.0 + 1e-12);
    CHECK(e.c >= 1.9);
    CHECK(e.eigen_bound == doctest::Approx(2.0));
    for (std::size_t i = 0; i < e.pairs.size(); ++i) {
        CHECK(e.d2[i] <= e.c * e.d1[i] * (1 + 1e-12));
        CHECK(e.d1[i] / e.c <= e.d2[i] * (1 + 1e-12));
    }
}

TEST_CASE("compact grids") {
    auto g = CompactGrid::tensor({{0, 1}, {2, 3}}, {3, 5});
    CHECK(g.size() == 15);
    CHECK(g.spacing == doctest::Approx(0.5));
    CHECK(g.points.back()[0] == 1.0);
    CHECK(g.points.back()[1] == 3.0);
    CHECK_THROWS_AS(g.validate(Patch::euclidean({{0, 1}, {0, 1}})), DomainError);
}
