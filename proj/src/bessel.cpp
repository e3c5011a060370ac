#include "hestvi/bessel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace hestvi {

namespace {

// Series I_nu(x) = sum_n (x/2)^{2n+nu} / (n! Gamma(n+nu+1)), summed directly
// after factoring out the first term.  Safe for x <= 30 (largest term about
// e^30, far from overflow).
double log_series_direct(double nu, double x) {
    const double q = 0.25 * x * x;
    double term = 1.0, sum = 1.0;
    for (int n = 1; n < 500; ++n) {
        term *= q / (n * (n + nu));
        sum += term;
        if (term < 1e-18 * sum) break;
    }
    return nu * std::log(0.5 * x) - std::lgamma(nu + 1.0) + std::log(sum);
}

// Same series in log space (log-sum-exp around the peak term), valid for any
// x without overflow; slower, used only as the large-nu fallback.
double log_series_lse(double nu, double x) {
    const double lh = std::log(0.5 * x);
    auto lterm = [&](int n) {
        return (2.0 * n + nu) * lh - std::lgamma(n + 1.0) -
               std::lgamma(n + nu + 1.0);
    };
    int n_peak = std::max(0, static_cast<int>(0.5 * (x - nu)));
    double m = lterm(n_peak);
    double sum = 0.0;
    for (int n = n_peak; n >= 0; --n) {
        double t = lterm(n) - m;
        if (t < -45.0) break;
        sum += std::exp(t);
    }
    for (int n = n_peak + 1; n < n_peak + 100000; ++n) {
        double t = lterm(n) - m;
        if (t < -45.0) break;
        sum += std::exp(t);
    }
    return m + std::log(sum);
}

// Asymptotic tail e^x/sqrt(2 pi x) * sum_k (-1)^k a_k(nu)/x^k with
// a_k = prod_{j=1..k} (4 nu^2 - (2j-1)^2) / (8^k k!).  Truncated at the
// smallest term; returns false if that term is still too large.
bool log_asymptotic(double nu, double x, double& out) {
    const double mu4 = 4.0 * nu * nu;
    double term = 1.0, sum = 1.0, prev = 1.0;
    for (int k = 1; k <= 30; ++k) {
        term *= -(mu4 - (2.0 * k - 1.0) * (2.0 * k - 1.0)) / (8.0 * k * x);
        if (std::abs(term) > std::abs(prev)) {  // divergence point reached
            if (std::abs(prev) > 1e-12 * std::abs(sum)) return false;
            break;
        }
        sum += term;
        prev = term;
        if (std::abs(term) < 1e-16 * std::abs(sum)) break;
    }
    if (sum <= 0.0) return false;
    out = x - 0.5 * std::log(2.0 * M_PI * x) + std::log(sum);
    return true;
}

}  // namespace

double log_bessel_i(double nu, double x) {
    if (!(x > 0.0)) throw std::domain_error("log_bessel_i: x must be > 0");
    if (!(nu > -1.0)) throw std::domain_error("log_bessel_i: nu must be > -1");
    if (x <= 30.0) return log_series_direct(nu, x);
    double v;
    if (log_asymptotic(nu, x, v)) return v;
    return log_series_lse(nu, x);
}

double bessel_envelope_constant(double nu) {
    // Regime x <= 1: ratio I_nu(x)/x^nu is increasing in x, so scan up to the
    // endpoint anyway for safety.  Regime x > 1: I_nu(x) sqrt(x) e^{-x} tends
    // to 1/sqrt(2 pi) from above/below depending on nu; scan log-spaced.
    double best = 0.0;
    for (int i = 1; i <= 200; ++i) {
        double x = i / 200.0;
        best = std::max(best,
                        std::exp(log_bessel_i(nu, x) - nu * std::log(x)));
    }
    for (int i = 0; i <= 600; ++i) {
        double x = std::exp(std::log(1.0) + i * (std::log(2000.0) / 600.0));
        double r = std::exp(log_bessel_i(nu, x) - x + 0.5 * std::log(x));
        best = std::max(best, r);
    }
    return best * (1.0 + 1e-10);
}

}  // namespace hestvi
