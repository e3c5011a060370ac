#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hestvi/common.hpp"
#include "hestvi/model.hpp"
#include "hestvi/rng.hpp"

namespace hestvi::mc {

struct McEstimate {
    double mean = 0.0;
    double std_error = 0.0;  // sample std / sqrt(n_paths)
    std::size_t n_paths = 0;
    std::uint64_t seed = 0;
    bool low_biased = false;  // set by estimators with suboptimal policies
    std::string to_json() const;
};

struct ComplexEstimate {
    cd mean;
    double std_error = 0.0;  // sqrt((Var Re + Var Im)/n)
    std::size_t n_paths = 0;
    std::uint64_t seed = 0;
    std::string to_json() const;
};

enum class VarianceScheme {
    exact,                  // noncentral chi-square transition, default
    euler_full_truncation,  // biased; kept for speed comparisons only
};

// Full trajectories, step-major storage: value(step, path) lives at
// [step * n_paths + path].  int_y holds the running trapezoidal integral
// of Y along each path, same layout.
struct PathBatch {
    std::size_t n_paths = 0;
    int n_steps = 0;
    std::uint64_t seed = 0;
    std::vector<double> times;
    std::vector<double> x_paths, y_paths, int_y;

    double x_at(int step, std::size_t path) const {
        return x_paths[static_cast<std::size_t>(step) * n_paths + path];
    }
    double y_at(int step, std::size_t path) const {
        return y_paths[static_cast<std::size_t>(step) * n_paths + path];
    }
    double int_y_at(int step, std::size_t path) const {
        return int_y[static_cast<std::size_t>(step) * n_paths + path];
    }
};

// Terminal-state-only variant for large batteries: final (X, Y, int Y) per
// path, nothing else retained.
struct TerminalBatch {
    std::size_t n_paths = 0;
    int n_steps = 0;
    double t = 0.0;
    std::uint64_t seed = 0;
    std::vector<double> x, y, int_y;
};

// One exact CIR transition step from y over time h.
double cir_exact_step(const HestonParams& p, double y, double h, Philox& eng);

// n i.i.d. draws of Y_t given Y_0 = y0.
std::vector<double> sample_cir_exact(const HestonParams& p, double t,
                                     double y0, std::uint64_t seed,
                                     std::size_t n);

// Path simulation: Y by exact transition sampling, X through the
// decorrelated coordinate Xtilde = X - (rho/sigma) Y whose increments are
// conditionally Gaussian given the trapezoidal int Y over the step.
PathBatch simulate_paths(const HestonParams& p, double x0, double y0,
                         double T, int n_steps, std::size_t n_paths,
                         std::uint64_t seed,
                         VarianceScheme scheme = VarianceScheme::exact);
// Single-threaded reference; bit-identical to simulate_paths.
PathBatch simulate_paths_serial(const HestonParams& p, double x0, double y0,
                                double T, int n_steps, std::size_t n_paths,
                                std::uint64_t seed,
                                VarianceScheme scheme = VarianceScheme::exact);

TerminalBatch simulate_terminals(const HestonParams& p, double x0, double y0,
                                 double t, int n_steps, std::size_t n_paths,
                                 std::uint64_t seed,
                                 VarianceScheme scheme = VarianceScheme::exact);

// Mean of g(X_t, Y_t, int Y) over a terminal batch.
McEstimate estimate_terminal(
    const TerminalBatch& batch,
    const std::function<double(double, double, double)>& g);

// P^lambda_t f(x0,y0) = E[e^{-lambda (t + int Y)} f(X_t, Y_t)] over an
// existing batch, or end to end with a fresh simulation.
ComplexEstimate killed_semigroup_estimate(
    const TerminalBatch& batch, double lambda,
    const std::function<cd(double, double)>& f);
ComplexEstimate killed_semigroup_estimate(
    const HestonParams& p, const std::function<cd(double, double)>& f,
    double lambda, double t, double x0, double y0, std::size_t n_paths,
    int n_steps, std::uint64_t seed);

// Longstaff-Schwartz lower-bound price for the optimal-stopping value of a
// time-shifted, discount-absorbed payoff over a simulated batch.  Basis:
// bivariate polynomials in (e^x / K, y) up to total degree 3 plus the
// payoff; regression restricted to in-the-money paths.  Rank-deficient
// regressions fall back to a lower degree with a warning.
McEstimate ls_american_price(const PathBatch& batch, const Payoff& payoff,
                             const HestonParams& p);

struct FlowPair {
    double x = 0.0, y = 0.0, xp = 0.0, yp = 0.0;
};

struct FlowPairReport {
    FlowPair pair;
    double mean_abs_dy = 0.0, se_dy = 0.0, bound_dy = 0.0;
    double mean_abs_dx = 0.0, se_dx = 0.0, bound_dx = 0.0;
    // roundoff margin: coincident pairs hit the bound exactly
    bool ok() const {
        return mean_abs_dy <= bound_dy + 3.0 * se_dy +
                                  1e-12 * (1.0 + bound_dy) &&
               mean_abs_dx <= bound_dx + 3.0 * se_dx +
                                  1e-12 * (1.0 + bound_dx);
    }
};

// Coupled two-point simulation with shared noise (thinned Poisson count
// plus shared gamma/exponential increments, so the higher variance path
// dominates the lower one pathwise).  Checks
//   E|Y' - Y| <= |y' - y|,
//   E|X' - X| <= |x' - x| + (t/2)|y' - y| + sqrt(t |y' - y|).
std::vector<FlowPairReport> flow_continuity_probe(
    const HestonParams& p, const std::vector<FlowPair>& pairs, double t,
    int n_steps, std::size_t n_paths, std::uint64_t seed);

}  // namespace hestvi::mc
