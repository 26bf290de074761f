#pragma once

#include <cstddef>
#include <memory>
#include <vector>

namespace flowpresheaf {

// Graded enumeration of multi-indices |a| <= order in n variables, with the
// product table used by Jet multiplication.
struct JetLayout {
    std::size_t nvars = 0;
    int order = 0;
    std::vector<std::vector<int>> index;  // position -> multi-index
    std::vector<int> degree;              // position -> |a|
    std::vector<double> factorial;        // position -> a!
    std::vector<int> lookup;              // dense base-(order+1) code -> position, -1 if |a| > order
    // product table: out position, left position, right position
    std::vector<int> mul_out, mul_lhs, mul_rhs;
    // shift tables: for each variable, pairs (position in order-1 layout, position here)
    std::vector<std::vector<std::pair<int, int>>> shift;

    std::size_t size() const { return index.size(); }
    int position(const std::vector<int>& a) const;

    static std::shared_ptr<const JetLayout> get(std::size_t nvars, int order);
};

// Truncated multivariate Taylor polynomial. Coefficients are stored as
// f^(a)/a!; partial() returns the plain derivative.
class Jet {
public:
    Jet() = default;
    Jet(std::shared_ptr<const JetLayout> layout, double value);

    static Jet variable(std::shared_ptr<const JetLayout> layout, std::size_t var, double value);

    std::size_t nvars() const { return layout_->nvars; }
    int order() const { return layout_->order; }
    const JetLayout& layout() const { return *layout_; }
    const std::shared_ptr<const JetLayout>& layout_ptr() const { return layout_; }

    double value() const { return c_[0]; }
    double coeff(std::size_t pos) const { return c_[pos]; }
    double& coeff(std::size_t pos) { return c_[pos]; }
    const std::vector<double>& coeffs() const { return c_; }

    double partial(const std::vector<int>& a) const;
    // derivative w.r.t. one variable; the result has order() - 1
    Jet derivative(std::size_t var) const;
    Jet truncate(int order) const;

    Jet& operator+=(const Jet& o);
    Jet& operator-=(const Jet& o);
    Jet& operator*=(double s);
    Jet& operator+=(double s) { c_[0] += s; return *this; }

    friend Jet operator+(Jet a, const Jet& b) { return a += b; }
    friend Jet operator-(Jet a, const Jet& b) { return a -= b; }
    friend Jet operator*(const Jet& a, const Jet& b);
    friend Jet operator/(const Jet& a, const Jet& b);
    friend Jet operator-(Jet a);
    friend Jet operator+(Jet a, double s) { return a += s; }
    friend Jet operator+(double s, Jet a) { return a += s; }
    friend Jet operator-(Jet a, double s) { return a += -s; }
    friend Jet operator*(Jet a, double s) { return a *= s; }
    friend Jet operator*(double s, Jet a) { return a *= s; }

    // f(a) given the univariate Taylor coefficients of f at a.value()
    Jet compose(const std::vector<double>& series) const;

private:
    std::shared_ptr<const JetLayout> layout_;
    std::vector<double> c_;
};

Jet reciprocal(const Jet& a);
Jet exp(const Jet& a);
Jet log(const Jet& a);
Jet sin(const Jet& a);
Jet cos(const Jet& a);
Jet sqrt(const Jet& a);
Jet tanh(const Jet& a);
Jet abs(const Jet& a);
Jet pow(const Jet& a, double c);

}  // namespace flowpresheaf
