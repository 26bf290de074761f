#include "flowpresheaf/expr.hpp"

#include <cctype>
#include <charconv>
#include <numbers>

namespace flowpresheaf {

Expr Expr::number(double v) {
    Expr e;
    e.kind = Kind::Number;
    e.value = v;
    return e;
}

Expr Expr::time() {
    Expr e;
    e.kind = Kind::Time;
    return e;
}

Expr Expr::coord(std::size_t i) {
    Expr e;
    e.kind = Kind::Coord;
    e.index = i;
    return e;
}

Expr Expr::param(std::size_t i) {
    Expr e;
    e.kind = Kind::Param;
    e.index = i;
    return e;
}

Expr Expr::z() {
    Expr e;
    e.kind = Kind::Z;
    return e;
}

Expr Expr::unary(Kind k, Expr a) {
    Expr e;
    e.kind = k;
    e.args.push_back(std::move(a));
    return e;
}

Expr Expr::binary(Kind k, Expr a, Expr b) {
    Expr e;
    e.kind = k;
    e.args.push_back(std::move(a));
    e.args.push_back(std::move(b));
    return e;
}

Expr Expr::call(Func f, Expr a) {
    Expr e = unary(Kind::Call, std::move(a));
    e.fn = f;
    return e;
}

bool Expr::is_constant() const {
    switch (kind) {
        case Kind::Number: return true;
        case Kind::Time:
        case Kind::Coord:
        case Kind::Param:
        case Kind::Z: return false;
        default:
            for (const auto& a : args)
                if (!a.is_constant()) return false;
            return true;
    }
}

bool Expr::uses_abs() const {
    if (kind == Kind::Call && fn == Func::Abs) return true;
    for (const auto& a : args)
        if (a.uses_abs()) return true;
    return false;
}

bool operator==(const Expr& a, const Expr& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
        case Expr::Kind::Number: return a.value == b.value;
        case Expr::Kind::Coord:
        case Expr::Kind::Param: return a.index == b.index;
        case Expr::Kind::Call:
            if (a.fn != b.fn) return false;
            break;
        default: break;
    }
    return a.args == b.args;
}

const char* func_name(Func f) {
    switch (f) {
        case Func::Sin: return "sin";
        case Func::Cos: return "cos";
        case Func::Exp: return "exp";
        case Func::Log: return "log";
        case Func::Sqrt: return "sqrt";
        case Func::Tanh: return "tanh";
        case Func::Abs: return "abs";
    }
    return "?";
}

namespace {

struct Token {
    enum class Type { Number, Ident, Op, End } type = Type::End;
    std::string text;
    double value = 0.0;
    std::size_t line = 1, column = 1;
};

class Parser {
public:
    Parser(const std::string& src, const Symbols& sym) : src_(src), sym_(sym) { advance(); }

    Expr parse() {
        Expr e = additive();
        if (tok_.type != Token::Type::End) fail("operator or end of input");
        return e;
    }

private:
    [[noreturn]] void fail(const std::string& expected) const {
        throw SyntaxError(tok_.line, tok_.column, expected);
    }

    bool is_op(char c) const { return tok_.type == Token::Type::Op && tok_.text[0] == c; }

    char peek() const { return pos_ < src_.size() ? src_[pos_] : '\0'; }

    void bump() {
        if (src_[pos_] == '\n') {
            ++line_;
            col_ = 1;
        } else {
            ++col_;
        }
        ++pos_;
    }

    void advance() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) bump();
        tok_ = Token{};
        tok_.line = line_;
        tok_.column = col_;
        if (pos_ >= src_.size()) return;
        char c = peek();
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            std::size_t start = pos_;
            while (std::isdigit(static_cast<unsigned char>(peek()))) bump();
            if (peek() == '.') {
                bump();
                while (std::isdigit(static_cast<unsigned char>(peek()))) bump();
            }
            if (peek() == 'e' || peek() == 'E') {
                std::size_t save = pos_, sl = line_, sc = col_;
                bump();
                if (peek() == '+' || peek() == '-') bump();
                if (std::isdigit(static_cast<unsigned char>(peek()))) {
                    while (std::isdigit(static_cast<unsigned char>(peek()))) bump();
                } else {
                    pos_ = save;
                    line_ = sl;
                    col_ = sc;
                }
            }
            tok_.type = Token::Type::Number;
            tok_.text = src_.substr(start, pos_ - start);
            auto res = std::from_chars(tok_.text.data(), tok_.text.data() + tok_.text.size(), tok_.value);
            if (res.ec != std::errc() || res.ptr != tok_.text.data() + tok_.text.size()) fail("number");
            return;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t start = pos_;
            while (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_') bump();
            tok_.type = Token::Type::Ident;
            tok_.text = src_.substr(start, pos_ - start);
            return;
        }
        if (std::string("+-*/^()").find(c) != std::string::npos) {
            tok_.type = Token::Type::Op;
            tok_.text = std::string(1, c);
            bump();
            return;
        }
        fail("expression");
    }

    Expr additive() {
        Expr node = multiplicative();
        bool open_add = false;
        while (is_op('+') || is_op('-')) {
            bool plus = is_op('+');
            advance();
            Expr rhs = multiplicative();
            if (plus) {
                if (open_add) {
                    node.args.push_back(std::move(rhs));
                } else {
                    node = Expr::binary(Expr::Kind::Add, std::move(node), std::move(rhs));
                    open_add = true;
                }
            } else {
                node = Expr::binary(Expr::Kind::Sub, std::move(node), std::move(rhs));
                open_add = false;
            }
        }
        return node;
    }

    Expr multiplicative() {
        Expr node = unary();
        bool open_mul = false;
        while (is_op('*') || is_op('/')) {
            bool times = is_op('*');
            advance();
            Expr rhs = unary();
            if (times) {
                if (open_mul) {
                    node.args.push_back(std::move(rhs));
                } else {
                    node = Expr::binary(Expr::Kind::Mul, std::move(node), std::move(rhs));
                    open_mul = true;
                }
            } else {
                node = Expr::binary(Expr::Kind::Div, std::move(node), std::move(rhs));
                open_mul = false;
            }
        }
        return node;
    }

    Expr unary() {
        if (is_op('-')) {
            advance();
            return Expr::unary(Expr::Kind::Neg, unary());
        }
        return power();
    }

    Expr power() {
        Expr base = primary();
        if (is_op('^')) {
            advance();
            return Expr::binary(Expr::Kind::Pow, std::move(base), unary());
        }
        return base;
    }

    Expr primary() {
        if (tok_.type == Token::Type::Number) {
            double v = tok_.value;
            advance();
            return Expr::number(v);
        }
        if (is_op('(')) {
            advance();
            Expr inner = additive();
            if (!is_op(')')) fail("')'");
            advance();
            return inner;
        }
        if (tok_.type == Token::Type::Ident) {
            Token id = tok_;
            advance();
            static const std::pair<const char*, Func> funcs[] = {
                {"sin", Func::Sin},   {"cos", Func::Cos},   {"exp", Func::Exp}, {"log", Func::Log},
                {"sqrt", Func::Sqrt}, {"tanh", Func::Tanh}, {"abs", Func::Abs}};
            for (auto [name, f] : funcs) {
                if (id.text == name) {
                    if (!is_op('(')) fail("'(' after " + id.text);
                    advance();
                    Expr arg = additive();
                    if (!is_op(')')) fail("')'");
                    advance();
                    return Expr::call(f, std::move(arg));
                }
            }
            if (id.text == "pi") return Expr::number(std::numbers::pi);
            if (id.text == "t" && sym_.time) return Expr::time();
            if (id.text == "z" && sym_.z) return Expr::z();
            if (id.text == "x" && sym_.coords == 1) return Expr::coord(0);
            auto indexed = [&](char prefix, std::size_t limit, std::size_t& out) {
                if (id.text.size() < 2 || id.text[0] != prefix) return false;
                std::size_t v = 0;
                auto r = std::from_chars(id.text.data() + 1, id.text.data() + id.text.size(), v);
                if (r.ec != std::errc() || r.ptr != id.text.data() + id.text.size()) return false;
                if (id.text[1] == '0' || v < 1 || v > limit) return false;
                out = v - 1;
                return true;
            };
            std::size_t i = 0;
            if (indexed('x', sym_.coords, i)) return Expr::coord(i);
            if (indexed('p', sym_.params, i)) return Expr::param(i);
            throw SyntaxError(id.line, id.column, "declared symbol (got '" + id.text + "')");
        }
        fail("expression");
    }

    const std::string& src_;
    Symbols sym_;
    std::size_t pos_ = 0, line_ = 1, col_ = 1;
    Token tok_;
};

int precedence(const Expr& e) {
    switch (e.kind) {
        case Expr::Kind::Add:
        case Expr::Kind::Sub: return 1;
        case Expr::Kind::Mul:
        case Expr::Kind::Div: return 2;
        case Expr::Kind::Neg: return 3;
        case Expr::Kind::Pow: return 4;
        case Expr::Kind::Number: return e.value < 0 || std::signbit(e.value) ? 0 : 5;
        default: return 5;
    }
}

void print(const Expr& e, std::string& out);

void print_wrapped(const Expr& e, bool parens, std::string& out) {
    if (parens) out += '(';
    print(e, out);
    if (parens) out += ')';
}

void print(const Expr& e, std::string& out) {
    using K = Expr::Kind;
    switch (e.kind) {
        case K::Number: {
            if (!std::isfinite(e.value)) throw DomainError("cannot print a non-finite literal");
            char buf[64];
            auto r = std::to_chars(buf, buf + sizeof buf, e.value);
            std::string s(buf, r.ptr);
            if (precedence(e) == 0) s = "(" + s + ")";
            out += s;
            return;
        }
        case K::Time: out += 't'; return;
        case K::Coord: out += "x" + std::to_string(e.index + 1); return;
        case K::Param: out += "p" + std::to_string(e.index + 1); return;
        case K::Z: out += 'z'; return;
        case K::Neg:
            out += '-';
            print_wrapped(e.args[0], precedence(e.args[0]) < 3, out);
            return;
        case K::Add:
        case K::Mul: {
            int prec = precedence(e);
            K inverse = e.kind == K::Add ? K::Sub : K::Div;
            const char* sep = e.kind == K::Add ? " + " : " * ";
            for (std::size_t i = 0; i < e.args.size(); ++i) {
                const Expr& c = e.args[i];
                bool parens = precedence(c) < prec || c.kind == e.kind || (i > 0 && c.kind == inverse);
                if (i) out += sep;
                print_wrapped(c, parens, out);
            }
            return;
        }
        case K::Sub:
        case K::Div: {
            int prec = precedence(e);
            print_wrapped(e.args[0], precedence(e.args[0]) < prec, out);
            out += e.kind == K::Sub ? " - " : " / ";
            print_wrapped(e.args[1], precedence(e.args[1]) <= prec, out);
            return;
        }
        case K::Pow:
            print_wrapped(e.args[0], precedence(e.args[0]) < 5, out);
            out += '^';
            print_wrapped(e.args[1], precedence(e.args[1]) < 3, out);
            return;
        case K::Call:
            out += func_name(e.fn);
            out += '(';
            print(e.args[0], out);
            out += ')';
            return;
    }
}

}  // namespace

Expr parse_expr(const std::string& source, const Symbols& symbols) {
    return Parser(source, symbols).parse();
}

std::string to_string(const Expr& e) {
    std::string out;
    print(e, out);
    return out;
}

namespace detail {

double eval_constant(const Expr& e) {
    Scope<double> s;
    s.t = 0.0;
    return eval(e, s);
}

}  // namespace detail

double eval_at(const Expr& e, double t, const double* x, std::size_t n, const double* p, std::size_t k) {
    Scope<double> s;
    s.t = t;
    s.x = x;
    s.n = n;
    s.p = p;
    s.k = k;
    double v = eval(e, s);
    if (!std::isfinite(v)) throw DomainError("non-finite field value");
    return v;
}

Jet taylor_jet(const Expr& e, double t, const std::vector<double>& x, const std::vector<double>& p, int m) {
    auto layout = JetLayout::get(x.size(), m);
    std::vector<Jet> xs;
    xs.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) xs.push_back(Jet::variable(layout, i, x[i]));
    Scope<Jet> s;
    s.t = Jet(layout, t);
    s.x = xs.data();
    s.n = xs.size();
    s.p = p.data();
    s.k = p.size();
    s.z = Jet(layout, 0.0);
    Jet r = eval(e, s);
    for (double c : r.coeffs())
        if (!std::isfinite(c)) throw DomainError("non-finite jet coefficient");
    return r;
}

}  // namespace flowpresheaf
