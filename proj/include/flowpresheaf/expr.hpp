#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include "flowpresheaf/errors.hpp"
#include "flowpresheaf/taylor.hpp"

namespace flowpresheaf {

enum class Func { Sin, Cos, Exp, Log, Sqrt, Tanh, Abs };

struct Expr {
    enum class Kind { Number, Time, Coord, Param, Z, Neg, Add, Sub, Mul, Div, Pow, Call };

    Kind kind = Kind::Number;
    double value = 0.0;     // Number
    std::size_t index = 0;  // Coord / Param, zero based
    Func fn = Func::Sin;    // Call
    std::vector<Expr> args;

    static Expr number(double v);
    static Expr time();
    static Expr coord(std::size_t i);
    static Expr param(std::size_t i);
    static Expr z();
    static Expr unary(Kind k, Expr a);
    static Expr binary(Kind k, Expr a, Expr b);
    static Expr call(Func f, Expr a);

    bool is_constant() const;
    bool uses_abs() const;

    friend bool operator==(const Expr& a, const Expr& b);
};

// Symbols a parse is allowed to reference.
struct Symbols {
    std::size_t coords = 1;
    std::size_t params = 0;
    bool time = true;
    bool z = false;
};

Expr parse_expr(const std::string& source, const Symbols& symbols);
std::string to_string(const Expr& e);
const char* func_name(Func f);

// Evaluation scope. For jets every input shares one layout.
template <class T>
struct Scope {
    T t;
    const T* x = nullptr;
    std::size_t n = 0;
    const double* p = nullptr;
    std::size_t k = 0;
    T z{};
};

namespace detail {

inline double checked(double v, const char* what) {
    if (!std::isfinite(v)) throw DomainError(std::string("non-finite result in ") + what);
    return v;
}

inline double apply(Func f, double a) {
    switch (f) {
        case Func::Sin: return std::sin(a);
        case Func::Cos: return std::cos(a);
        case Func::Exp: return checked(std::exp(a), "exp");
        case Func::Log:
            if (!(a > 0.0)) throw DomainError("log of non-positive value");
            return std::log(a);
        case Func::Sqrt:
            if (a < 0.0) throw DomainError("sqrt of negative value");
            return std::sqrt(a);
        case Func::Tanh: return std::tanh(a);
        case Func::Abs: return std::fabs(a);
    }
    return 0.0;
}

inline std::complex<double> apply(Func f, std::complex<double> a) {
    switch (f) {
        case Func::Sin: return std::sin(a);
        case Func::Cos: return std::cos(a);
        case Func::Exp: return std::exp(a);
        case Func::Log:
            if (a == 0.0) throw DomainError("log of zero");
            return std::log(a);
        case Func::Sqrt: return std::sqrt(a);
        case Func::Tanh: return std::tanh(a);
        case Func::Abs: return std::abs(a);
    }
    return 0.0;
}

inline Jet apply(Func f, const Jet& a) {
    switch (f) {
        case Func::Sin: return sin(a);
        case Func::Cos: return cos(a);
        case Func::Exp: return exp(a);
        case Func::Log: return log(a);
        case Func::Sqrt: return sqrt(a);
        case Func::Tanh: return tanh(a);
        case Func::Abs: return abs(a);
    }
    return a;
}

inline double divide(double a, double b) {
    if (b == 0.0) throw DomainError("division by zero");
    return a / b;
}
inline std::complex<double> divide(std::complex<double> a, std::complex<double> b) {
    if (b == 0.0) throw DomainError("division by zero");
    return a / b;
}
inline Jet divide(const Jet& a, const Jet& b) { return a / b; }

inline double power(double a, double c) {
    if (a < 0.0 && std::floor(c) != c) throw DomainError("negative base with non-integer exponent");
    if (a == 0.0 && c < 0.0) throw DomainError("division by zero");
    return checked(std::pow(a, c), "pow");
}
inline std::complex<double> power(std::complex<double> a, double c) {
    if (std::floor(c) == c && std::fabs(c) < 64) {
        if (a == 0.0 && c < 0.0) throw DomainError("division by zero");
        std::complex<double> r = 1.0, b = a;
        long e = static_cast<long>(std::fabs(c));
        while (e) {
            if (e & 1) r *= b;
            b *= b;
            e >>= 1;
        }
        return c < 0 ? 1.0 / r : r;
    }
    return std::pow(a, c);
}
inline Jet power(const Jet& a, double c) { return pow(a, c); }

inline double constant_like(const double&, double v) { return v; }
inline std::complex<double> constant_like(const std::complex<double>&, double v) { return v; }
inline Jet constant_like(const Jet& proto, double v) { return Jet(proto.layout_ptr(), v); }

double eval_constant(const Expr& e);

}  // namespace detail

template <class T>
T eval(const Expr& e, const Scope<T>& s) {
    using K = Expr::Kind;
    switch (e.kind) {
        case K::Number: return detail::constant_like(s.t, e.value);
        case K::Time: return s.t;
        case K::Coord:
            if (e.index >= s.n) throw DomainError("coordinate index out of range");
            return s.x[e.index];
        case K::Param:
            if (e.index >= s.k) throw DomainError("parameter index out of range");
            return detail::constant_like(s.t, s.p[e.index]);
        case K::Z: return s.z;
        case K::Neg: return -eval(e.args[0], s);
        case K::Add: {
            T acc = eval(e.args[0], s);
            for (std::size_t i = 1; i < e.args.size(); ++i) acc = acc + eval(e.args[i], s);
            return acc;
        }
        case K::Sub: return eval(e.args[0], s) - eval(e.args[1], s);
        case K::Mul: {
            T acc = eval(e.args[0], s);
            for (std::size_t i = 1; i < e.args.size(); ++i) acc = acc * eval(e.args[i], s);
            return acc;
        }
        case K::Div: return detail::divide(eval(e.args[0], s), eval(e.args[1], s));
        case K::Pow: {
            T base = eval(e.args[0], s);
            if (e.args[1].is_constant()) return detail::power(base, detail::eval_constant(e.args[1]));
            T ex = eval(e.args[1], s);
            return detail::apply(Func::Exp, ex * detail::apply(Func::Log, base));
        }
        case K::Call: return detail::apply(e.fn, eval(e.args[0], s));
    }
    throw DomainError("malformed expression");
}

// Scalar evaluation at (t, x, p).
double eval_at(const Expr& e, double t, const double* x, std::size_t n, const double* p, std::size_t k);

// Jet of e in the coordinates x at order m. Time and parameters are frozen.
Jet taylor_jet(const Expr& e, double t, const std::vector<double>& x, const std::vector<double>& p, int m);

}  // namespace flowpresheaf
