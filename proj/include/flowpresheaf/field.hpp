#pragma once

#include <memory>
#include <string>
#include <vector>

#include "flowpresheaf/patch.hpp"

namespace flowpresheaf {

// Time-varying, parameter-dependent vector field X(t, x, p) on a patch.
class VectorField {
public:
    virtual ~VectorField() = default;
    virtual std::size_t dim() const = 0;
    virtual std::size_t nparams() const { return 0; }
    virtual Vec eval(double t, const Vec& x, const std::vector<double>& p) const = 0;
    // d X / d x; central differences unless overridden.
    virtual Mat jacobian(double t, const Vec& x, const std::vector<double>& p) const;
};

using FieldPtr = std::shared_ptr<const VectorField>;

class ExprField : public VectorField {
public:
    ExprField(std::vector<Expr> components, std::size_t nparams = 0);

    static ExprField parse(const std::vector<std::string>& components, std::size_t nparams = 0);

    std::size_t dim() const override { return comps_.size(); }
    std::size_t nparams() const override { return nparams_; }
    Vec eval(double t, const Vec& x, const std::vector<double>& p) const override;
    Mat jacobian(double t, const Vec& x, const std::vector<double>& p) const override;

    const std::vector<Expr>& components() const { return comps_; }
    std::vector<Jet> jets(double t, const Vec& x, const std::vector<double>& p, int order) const;

    // a * this + b * other, componentwise as expressions
    ExprField combine(double a, const ExprField& other, double b) const;
    ExprField scaled(double a) const;
    std::string describe() const;

private:
    std::vector<Expr> comps_;
    std::size_t nparams_;
};

// Holomorphic function f(z) on a one-complex-dimensional patch, z = x1 + i x2.
class HolField {
public:
    explicit HolField(Expr f) : f_(std::move(f)) {}
    static HolField parse(const std::string& src);
    std::complex<double> eval(std::complex<double> z) const;
    const Expr& expr() const { return f_; }

private:
    Expr f_;
};

// Field given by samples on a tensor grid over (t, x1..xn), interpolated by
// local four-point Lagrange cubics along every axis.
class GridField : public VectorField {
public:
    GridField(std::vector<std::vector<double>> axes, std::vector<Vec> values);

    std::size_t dim() const override { return dim_; }
    Vec eval(double t, const Vec& x, const std::vector<double>& p) const override;

    const std::vector<std::vector<double>>& axes() const { return axes_; }
    const std::vector<Vec>& values() const { return values_; }

private:
    std::vector<std::vector<double>> axes_;  // axes_[0] is time
    std::vector<Vec> values_;                // row-major over axes
    std::size_t dim_;
};

}  // namespace flowpresheaf
