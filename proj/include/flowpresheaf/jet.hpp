#pragma once

#include <vector>

#include "flowpresheaf/field.hpp"

namespace flowpresheaf {

// Level j holds vdim * n^j numbers, index ((i1 * n + i2) ... * n + ij) * vdim + a.
struct JetTower {
    Vec point;
    int order = 0;
    std::size_t n = 0;
    std::size_t vdim = 0;
    bool tangent = true;  // value slot is a tangent vector (else scalar)
    std::vector<std::vector<double>> levels;
};

// Unsymmetrized covariant derivatives as jets. Level j has jets of order M - j.
// gamma may be empty for a flat connection; otherwise it must have order >= M - 1.
// tangent selects a vector field (vdim == n) over a scalar (vdim == 1).
std::vector<std::vector<Jet>> covariant_derivative_jets(const std::vector<Jet>& field, bool tangent,
                                                         const std::vector<Jet>& gamma, int levels);

// Average over permutations of the covariant slots.
void symmetrize(std::vector<double>& level, std::size_t n, std::size_t rank, std::size_t vdim);

JetTower covariant_jet_tower(const std::vector<Jet>& field, bool tangent, const std::vector<Jet>& gamma,
                             const Vec& point, int m);
JetTower covariant_jet_tower(const ExprField& field, const Patch& patch, double t, const Vec& x,
                             const std::vector<double>& p, int m);
JetTower scalar_jet_tower(const Expr& f, const Patch& patch, const Vec& x, int m);

// Induced inner product of one level with itself: covariant slots raised with
// g^-1, the value slot lowered with the bundle metric (g by default, 1 for scalars).
double level_norm_squared(const std::vector<double>& level, std::size_t n, std::size_t rank, std::size_t vdim,
                          const Mat& ginv, const Mat* bundle);

double jet_fibre_norm(const JetTower& tower, const Mat& g, const Mat* bundle_metric = nullptr);

// Norms of every truncation m' <= tower.order, reusing one pass over the levels.
std::vector<double> jet_fibre_norms(const JetTower& tower, const Mat& g, const Mat* bundle_metric = nullptr);

}  // namespace flowpresheaf
