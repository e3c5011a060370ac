#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hestvi {

using cd = std::complex<double>;

// Configuration / precondition problems: bad parameters, malformed input.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Runtime failures: divergent iterations, singular systems, ODE blow-up.
struct SolveError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Number of worker threads for the parallel kernels.  Honors the
// PRICER_THREADS environment variable as an upper cap; always >= 1.
int worker_threads();

// Applies worker_threads() to the OpenMP runtime (no-op without OpenMP).
void apply_thread_cap();

// Deterministic pairwise reduction.  The result depends only on the array
// contents and order, never on thread count, so Monte Carlo estimates are
// bit-stable.  Blocks of 64 are summed serially, then combined as a tree.
double pairwise_sum(std::span<const double> v);
cd pairwise_sum(std::span<const cd> v);

struct MeanVar {
    double mean = 0.0;
    double variance = 0.0;  // population variance of the sample (1/n)
};

// Two-pass mean/variance with pairwise sums (same determinism contract).
MeanVar pairwise_mean_var(std::span<const double> v);

}  // namespace hestvi
