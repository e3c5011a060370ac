#pragma once

#include <Eigen/Sparse>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hestvi/model.hpp"

namespace hestvi::fem {

using SpMat = Eigen::SparseMatrix<double>;
using Vec = Eigen::VectorXd;

// Tensor-product grid on the truncated box.  x nodes are uniform; y nodes
// are graded toward the degenerate boundary, y_j = y_max (j/(n_y-1))^g,
// with y_0 = 0 exactly.
struct Grid {
    int n_x = 0, n_y = 0;  // node counts per direction
    double grading = 2.0;
    Box box;
    std::vector<double> x, y;

    static Grid make(const Box& box, int n_x, int n_y, double grading = 2.0);

    int size() const { return n_x * n_y; }
    int index(int i, int j) const { return j * n_x + i; }
    // Dirichlet data is imposed at x_min, x_max and y_max; y = 0 is left
    // natural (the operator degenerates there).
    bool is_dirichlet(int i, int j) const {
        return i == 0 || i == n_x - 1 || j == n_y - 1;
    }
    // bilinear interpolation of nodal values at (xc, yc)
    double interpolate(const Vec& u, double xc, double yc) const;
};

// Constants of the energy estimates, all derived from the 2x2 diffusion
// matrix Q = [[1, rho sigma], [rho sigma, sigma^2]] and the sup of the
// first-order coefficients:
//   delta1 = lambda_min(Q)/2, delta0 = lambda_max(Q)/2,
//   K1 = sup_x sqrt(j^2 + k^2),
//   lambda_min = delta1/2 + K1^2/(2 delta1)  (coercivity threshold).
// Continuity holds with C1 = delta0 + K1, the lower bound with C2 =
// delta1/2 and compensation C3 = lambda_min.
struct EnergyConstants {
    double delta0 = 0.0;
    double delta1 = 0.0;
    double K1 = 0.0;
    double lambda_min = 0.0;
    double C1() const { return delta0 + K1; }
    double C2() const { return 0.5 * delta1; }
    double C3() const { return lambda_min; }
};

EnergyConstants energy_constants(const HestonParams& p,
                                 const MeasureWeights& w);

// Assembled Galerkin operators over the weighted measure:
//   mass           (u, v)_H
//   mass_weighted  ((1+y) u, v)_H
//   stiff_sym      symmetric gradient part of the form
//   convect        first-order part  int y (j u_x + k u_y) v dm
//   grad_v         int y grad u . grad v dm   (V-norm block)
// Entry (row, col) pairs test function row with trial function col.  The
// shifted form is a_lambda = stiff_sym + convect + lambda * mass_weighted;
// an optional truncation level M replaces y by min(y, M) in convect only.
struct DiscreteSystem {
    Grid grid;
    HestonParams params;
    MeasureWeights weights;
    double lambda = 0.0;
    std::optional<double> truncation_M;
    SpMat mass, mass_weighted, stiff_sym, convect, grad_v;

    SpMat a_lambda() const;        // stiff_sym + convect + lambda mass_weighted
    SpMat a_unshifted() const;     // stiff_sym + convect
    Vec lumped_mass() const;       // row sums of mass (all positive)
};

DiscreteSystem assemble(const HestonParams& p, const MeasureWeights& w,
                        const Grid& grid, double lambda,
                        std::optional<double> truncation_M = std::nullopt);

// Plain single-threaded reference assembly; bit-identical to assemble().
DiscreteSystem assemble_serial(const HestonParams& p, const MeasureWeights& w,
                               const Grid& grid, double lambda,
                               std::optional<double> truncation_M = std::nullopt);

struct Norms {
    double h = 0.0;  // ||u||_H
    double v = 0.0;  // ||u||_V, ||u||_V^2 = int (y |grad u|^2 + (1+y) u^2) dm
};
Norms weighted_norms(const DiscreteSystem& sys, const Vec& u);

// Quadrature of f against the measure over the box (independent of the
// assembled matrices; used by the self-checks).
double integrate_box(const HestonParams& p, const MeasureWeights& w,
                     const Grid& grid,
                     const std::function<double(double, double)>& f);

// Residual |(L u, v)_H + a(u, v)| of the integration-by-parts identity:
// (L u, v)_H by high-order quadrature of the supplied analytic L u, a(u, v)
// through the assembled lambda-free form on nodal interpolants.  Both u and
// v must be supported strictly inside the box (checked on boundary nodes).
double verify_ibp(const DiscreteSystem& sys,
                  const std::function<double(double, double)>& u,
                  const std::function<double(double, double)>& Lu,
                  const std::function<double(double, double)>& v);

// Random-vector probes of the discrete energy inequalities.  All hold
// exactly for the assembled forms (positive quadrature weights), so the
// margins only absorb roundoff.
double coercivity_probe(const DiscreteSystem& sys, int n_trials,
                        std::uint64_t seed);  // min a_l(u,u)/||u||_V^2
double continuity_probe(const DiscreteSystem& sys, int n_trials,
                        std::uint64_t seed);  // max |a_l(u,v)|/||u||_V||v||_V
double garding_probe(const DiscreteSystem& sys, int n_trials,
                     std::uint64_t seed);  // min (a(u,u)+C3|z u|^2)/||u||_V^2

void export_coo(const SpMat& m, const std::string& path);

}  // namespace hestvi::fem
