#pragma once

namespace hestvi {

// log I_nu(x) for x > 0, nu > -1, evaluated in log space so that the huge
// arguments appearing in squared-Bessel transition densities never overflow.
// Power series for x <= 30, asymptotic expansion in 1/x beyond; if the
// asymptotic tail does not reach the requested accuracy (large nu), falls
// back to a log-sum-exp evaluation of the series.
double log_bessel_i(double nu, double x);

// Smallest C such that I_nu(x) <= C * (x^nu 1_{x<=1} + e^x/sqrt(x) 1_{x>1})
// for all x > 0, found by scanning the two regimes.  Feeds the transition
// density envelope (its constant is C/2).
double bessel_envelope_constant(double nu);

}  // namespace hestvi
