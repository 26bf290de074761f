#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "flowpresheaf/expr.hpp"

using namespace flowpresheaf;

namespace {

Symbols sym(std::size_t n, std::size_t k = 0) {
    Symbols s;
    s.coords = n;
    s.params = k;
    return s;
}

double f_at(const Expr& e, double x) { return eval_at(e, 0.0, &x, 1, nullptr, 0); }

// k-th central difference with two Richardson passes.
double richardson(const Expr& e, double x, int k, double h) {
    auto D = [&](double hh) {
        double acc = 0.0, binom = 1.0;
        for (int i = 0; i <= k; ++i) {
            if (i > 0) binom = binom * (k - i + 1) / i;
            acc += ((i % 2) ? -1.0 : 1.0) * binom * f_at(e, x + (0.5 * k - i) * hh);
        }
        return acc / std::pow(hh, k);
    };
    auto R1 = [&](double hh) { return (4.0 * D(hh / 2) - D(hh)) / 3.0; };
    return (16.0 * R1(h / 2) - R1(h)) / 15.0;
}

// Random well-formed expression built from the grammar's productions.
Expr random_expr(std::mt19937_64& rng, int depth) {
    std::uniform_int_distribution<int> pick(0, depth > 0 ? 9 : 3);
    std::uniform_real_distribution<double> num(0.0, 5.0);
    switch (pick(rng)) {
        case 0: return Expr::number(std::round(num(rng) * 100) / 100);
        case 1: return Expr::time();
        case 2: return Expr::coord(std::uniform_int_distribution<std::size_t>(0, 1)(rng));
        case 3: return Expr::param(0);
        case 4: return Expr::unary(Expr::Kind::Neg, random_expr(rng, depth - 1));
        case 5: {
            Expr e = Expr::binary(Expr::Kind::Add, random_expr(rng, depth - 1), random_expr(rng, depth - 1));
            if (rng() % 2) e.args.push_back(random_expr(rng, depth - 1));
            return e;
        }
        case 6: return Expr::binary(Expr::Kind::Sub, random_expr(rng, depth - 1), random_expr(rng, depth - 1));
        case 7: {
            Expr e = Expr::binary(Expr::Kind::Mul, random_expr(rng, depth - 1), random_expr(rng, depth - 1));
            if (rng() % 2) e.args.push_back(random_expr(rng, depth - 1));
            return e;
        }
        case 8: {
            auto k = rng() % 2 ? Expr::Kind::Div : Expr::Kind::Pow;
            return Expr::binary(k, random_expr(rng, depth - 1), random_expr(rng, depth - 1));
        }
        default: return Expr::call(static_cast<Func>(rng() % 7), random_expr(rng, depth - 1));
    }
}

}  // namespace

TEST_CASE("parse: coordinate reference") {
    Expr e = parse_expr("x1", sym(2));
    CHECK(e.kind == Expr::Kind::Coord);
    CHECK(e.index == 0);
}

TEST_CASE("parse: product with three factors") {
    Expr e = parse_expr("p1*sin(t)*x2", sym(2, 1));
    REQUIRE(e.kind == Expr::Kind::Mul);
    REQUIRE(e.args.size() == 3);
    CHECK(e.args[0].kind == Expr::Kind::Param);
    CHECK(e.args[1].kind == Expr::Kind::Call);
    CHECK(e.args[1].fn == Func::Sin);
    CHECK(e.args[2].kind == Expr::Kind::Coord);
    CHECK(e.args[2].index == 1);
}

TEST_CASE("parse: dangling operator reports column") {
    try {
        parse_expr("x1 +", sym(2));
        FAIL("expected a syntax error");
    } catch (const SyntaxError& e) {
        CHECK(e.line == 1);
        CHECK(e.column == 5);
    }
}

TEST_CASE("parse: errors carry line and column") {
    auto where = [](const std::string& src) {
        try {
            parse_expr(src, sym(1));
        } catch (const SyntaxError& e) {
            return std::make_pair(e.line, e.column);
        }
        return std::make_pair<std::size_t, std::size_t>(0, 0);
    };
    CHECK(where("sin(x") == std::make_pair<std::size_t, std::size_t>(1, 6));
    CHECK(where("x +\n  * 2") == std::make_pair<std::size_t, std::size_t>(2, 3));
    CHECK(where("y") == std::make_pair<std::size_t, std::size_t>(1, 1));
    CHECK(where("x2") == std::make_pair<std::size_t, std::size_t>(1, 1));
    CHECK(where("2 3") == std::make_pair<std::size_t, std::size_t>(1, 3));
    CHECK(where("sin x") == std::make_pair<std::size_t, std::size_t>(1, 5));
    CHECK(where("x $") == std::make_pair<std::size_t, std::size_t>(1, 3));
}

TEST_CASE("parse: precedence and associativity") {
    auto v = [](const std::string& s, double x) { return f_at(parse_expr(s, sym(1)), x); };
    CHECK(v("2^3^2", 0) == doctest::Approx(512));
    CHECK(v("-2^2", 0) == doctest::Approx(-4));
    CHECK(v("8/4/2", 0) == doctest::Approx(1));
    CHECK(v("1-2-3", 0) == doctest::Approx(-4));
    CHECK(v("2*x^2 + 1", 3) == doctest::Approx(19));
    CHECK(v("1.5e1 + .5", 0) == doctest::Approx(15.5));
    CHECK(v("x^-1", 4) == doctest::Approx(0.25));
    CHECK(v("cos(pi)", 0) == doctest::Approx(-1));
}

TEST_CASE("print then parse is the identity on random ASTs") {
    std::mt19937_64 rng(7);
    Symbols s = sym(2, 1);
    for (int i = 0; i < 2000; ++i) {
        Expr e = random_expr(rng, 4);
        std::string text = to_string(e);
        Expr back = parse_expr(text, s);
        INFO(text);
        REQUIRE(back == e);
    }
}

TEST_CASE("parse then print then parse is stable on written sources") {
    const char* srcs[] = {"(x1 + x2) + t", "x1 - (x2 - t)", "x1 * (x2 / t)", "-(x1 * x2)", "(x1^2)^3",
                          "x1^x2^t", "--x1", "1e-05*x1", "abs(x1) - -x2"};
    for (const char* src : srcs) {
        Expr a = parse_expr(src, sym(2));
        CHECK(parse_expr(to_string(a), sym(2)) == a);
    }
}

TEST_CASE("taylor_jet: polynomial and exp") {
    Expr sq = parse_expr("x^2", sym(1));
    Jet j = taylor_jet(sq, 0.0, {1.0}, {}, 2);
    CHECK(j.partial({0}) == 1.0);
    CHECK(j.partial({1}) == 2.0);
    CHECK(j.partial({2}) == 2.0);

    Jet e = taylor_jet(parse_expr("exp(x)", sym(1)), 0.0, {0.0}, {}, 3);
    for (int k = 0; k <= 3; ++k) CHECK(e.partial({k}) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("taylor_jet: sin(x)*exp(x) against Richardson differences") {
    Expr f = parse_expr("sin(x)*exp(x)", sym(1));
    Jet j = taylor_jet(f, 0.0, {0.3}, {}, 4);
    for (int k = 1; k <= 4; ++k) {
        double fd = richardson(f, 0.3, k, 0.2);
        CHECK(std::fabs(j.partial({k}) - fd) <= 1e-6 * std::fabs(fd));
        // closed form (sqrt 2)^k e^x sin(x + k pi/4)
        double exact = std::pow(std::sqrt(2.0), k) * std::exp(0.3) * std::sin(0.3 + k * std::numbers::pi / 4);
        CHECK(j.partial({k}) == doctest::Approx(exact).epsilon(1e-13));
    }
}

TEST_CASE("taylor_jet: every function against Richardson differences") {
    const char* srcs[] = {"log(x + 2)", "sqrt(x + 2)", "tanh(x)", "cos(x)/(1 + x^2)", "(x + 2)^1.5",
                          "abs(x)", "x^x", "exp(-x^2)*sin(3*x)"};
    for (const char* src : srcs) {
        Expr f = parse_expr(src, sym(1));
        Jet j = taylor_jet(f, 0.0, {0.7}, {}, 3);
        CHECK(j.value() == doctest::Approx(f_at(f, 0.7)).epsilon(1e-14));
        for (int k = 1; k <= 3; ++k) {
            double fd = richardson(f, 0.7, k, 0.1);
            INFO(src << " k=" << k);
            CHECK(std::fabs(j.partial({k}) - fd) <= 1e-6 * std::max(1.0, std::fabs(fd)));
        }
    }
}

TEST_CASE("taylor_jet: mixed partials in two variables") {
    Expr f = parse_expr("sin(x1*x2) + x1^3*x2", sym(2));
    Jet j = taylor_jet(f, 0.0, {0.4, 1.1}, {}, 3);
    double x = 0.4, y = 1.1, s = std::sin(x * y), c = std::cos(x * y);
    CHECK(j.partial({1, 0}) == doctest::Approx(y * c + 3 * x * x * y));
    CHECK(j.partial({1, 1}) == doctest::Approx(c - x * y * s + 3 * x * x));
    CHECK(j.partial({2, 1}) == doctest::Approx(-2 * y * s - x * y * y * c + 6 * x));
    CHECK(j.partial({0, 3}) == doctest::Approx(-x * x * x * c));
}

TEST_CASE("taylor_jet: derivative shifts the jet exactly") {
    Expr f = parse_expr("exp(x1)*cos(x2)", sym(2));
    Jet j = taylor_jet(f, 0.0, {0.2, -0.5}, {}, 4);
    Jet d = j.derivative(0);
    CHECK(d.order() == 3);
    CHECK(d.partial({1, 2}) == doctest::Approx(j.partial({2, 2})).epsilon(1e-14));
}

TEST_CASE("domain errors at singular points") {
    CHECK_THROWS_AS(taylor_jet(parse_expr("log(x)", sym(1)), 0.0, {0.0}, {}, 2), DomainError);
    CHECK_THROWS_AS(taylor_jet(parse_expr("1/x", sym(1)), 0.0, {0.0}, {}, 1), DomainError);
    CHECK_THROWS_AS(taylor_jet(parse_expr("abs(x)", sym(1)), 0.0, {0.0}, {}, 1), DomainError);
    CHECK_THROWS_AS(taylor_jet(parse_expr("sqrt(x)", sym(1)), 0.0, {-1.0}, {}, 0), DomainError);
    CHECK_NOTHROW(taylor_jet(parse_expr("abs(x)", sym(1)), 0.0, {0.0}, {}, 0));
    double x = -2.0;
    CHECK_THROWS_AS(eval_at(parse_expr("x^0.5", sym(1)), 0.0, &x, 1, nullptr, 0), DomainError);
    CHECK(eval_at(parse_expr("x^3", sym(1)), 0.0, &x, 1, nullptr, 0) == -8.0);
}
