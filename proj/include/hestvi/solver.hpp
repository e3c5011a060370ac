#pragma once

#include <string>
#include <vector>

#include "hestvi/fem.hpp"
#include "hestvi/model.hpp"

namespace hestvi::solver {

using fem::Grid;
using fem::SpMat;
using fem::Vec;

enum class TimeScheme {
    implicit_euler,
    crank_nicolson_rannacher,  // four implicit half-steps, then theta = 1/2
};

enum class OuterMode {
    // Solve with the implicit source g = lambda (1+y) u^n, under which the
    // lambda-shift cancels identically and one backward march suffices.
    direct_shifted,
    // The constructive chain: iterate full solves of the coercive problem
    // with source lambda (1+y) u_{prev}, starting from the dominating
    // function; monotone non-increasing.
    picard_lambda,
};

struct SolveConfig {
    double maturity = 0.0;
    int n_t = 0;
    double epsilon = 0.0;      // <= 0: auto, 1e-6 * max(strike, 1)
    double lambda = -1.0;      // < 0: auto, the coercivity threshold
    TimeScheme scheme = TimeScheme::implicit_euler;
    OuterMode outer_mode = OuterMode::direct_shifted;
    double newton_tol = 1e-9;  // sup-norm of the Newton update
    int newton_max_iter = 50;
    bool european = false;     // penalty off, obstacle ignored
    bool lumped_mass = false;  // row-sum mass for time and penalty terms
    double exercise_tol = 0.0;  // <= 0: auto, 1e-7 * max(strike, 1)
    double picard_tol = 0.0;    // <= 0: auto, 1e-8 * max(strike, 1)
    // the outer chain only contracts after ~lambda (1 + y_max) T solves
    int picard_max_iter = 1000;

    void validate() const;
};

struct PriceSurface {
    Grid grid;
    std::vector<double> times;  // ascending, front() = 0, back() = maturity
    std::vector<Vec> values;    // values[k] lives at times[k]
    std::vector<std::vector<char>> exercise_mask;  // u <= psi + tol
    double exercise_tol = 0.0;
    int picard_iterations = 0;
    double max_picard_increase = 0.0;  // worst nodal increase across outers

    // bilinear in space, linear in time
    double value_at(double t, double x, double y) const;
};

// Backward march of the penalized obstacle problem from u(T) = psi(T),
//   M (u^n - u^{n+1})/dt + A u^n - (1/eps) M (psi^n - u^n)_+ = g,
// semismooth Newton per step, Dirichlet data u = psi at x_min, x_max and
// y_max, natural at y = 0.
PriceSurface solve_vi(const HestonParams& p, const MeasureWeights& w,
                      const Payoff& payoff, const Grid& grid,
                      const SolveConfig& cfg);

// max over stored times and nodes of (psi - u)_+
double penalty_violation(const PriceSurface& surface, const Payoff& payoff);

// The monotone outer iteration (OuterMode::picard_lambda), exposed
// directly so the chain diagnostics are available.
PriceSurface picard_lambda_iterate(const HestonParams& p,
                                   const MeasureWeights& w,
                                   const Payoff& payoff, const Grid& grid,
                                   const SolveConfig& cfg);

// Nodal penalty term zeta_eps(u) = -(1/eps) (psi - u)_+.
Vec penalty_term(const Vec& psi, const Vec& u, double epsilon);

struct BoundaryCurve {
    double t = 0.0;
    std::vector<double> y;       // y-lines with a detected threshold
    std::vector<double> x_star;  // exercise/continuation crossing per line
};

// Early-exercise thresholds: on each y-line, the x where u - psi crosses
// tol going out of the contact set (puts exercise below, continue above).
// Full-contact lines report the payoff kink for vanilla payoffs.
std::vector<BoundaryCurve> extract_boundary(const PriceSurface& surface,
                                            const Payoff& payoff, double tol);

struct ComparisonReport {
    double max_order_violation = 0.0;  // max over times/nodes of u1 - u2
    double sup_diff_u = 0.0;
    double sup_diff_psi = 0.0;
    bool ordered(double tol) const { return max_order_violation <= tol; }
    bool contraction(double tol) const {
        return sup_diff_u <= sup_diff_psi + tol;
    }
};

// Solves both payoffs on the same grid/config and checks the ordering and
// sup-norm contraction of the solution map.
ComparisonReport comparison_check(const HestonParams& p,
                                  const MeasureWeights& w,
                                  const Payoff& payoff1,
                                  const Payoff& payoff2, const Grid& grid,
                                  const SolveConfig& cfg);

// CSV rows `t,x,y,u,exercise`, one per (time, node), full precision.
void write_surface_csv(const PriceSurface& surface, const std::string& path);

}  // namespace hestvi::solver
