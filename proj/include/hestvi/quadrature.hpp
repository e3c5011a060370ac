#pragma once

#include <functional>
#include <vector>

namespace hestvi {

struct GaussRule {
    std::vector<double> x;  // nodes on [-1, 1]
    std::vector<double> w;
};

// Cached Gauss-Legendre rule with n points.
const GaussRule& gauss_legendre(int n);

// Moments m_k = int_{lo}^{hi} y^{beta-1+k} e^{-mu y} dy, k = 0..kmax, via
// regularized incomplete gamma differences (upper-tail form when the cell
// sits in the tail, to dodge cancellation).  Exact up to library accuracy,
// which is what makes the assembled integrals exact in y for polynomial
// integrands.
std::vector<double> y_cell_moments(double beta, double mu, double lo,
                                   double hi, int kmax);

// int_a^b e^{-gamma |x|} f(x) dx with an n-point Gauss rule per smooth piece
// (cells straddling 0 are split there: both the weight kink and the sgn
// jump in coefficients live at x = 0).
double integrate_x_cell(double gamma, double a, double b,
                        const std::function<double(double)>& f, int n = 8);

// int_lo^hi y^{beta-1} e^{-mu y} g(y) dy for general smooth g.  The cell
// touching y = 0 uses the substitution y = hi * t^{1/beta}, which turns the
// singular weight into a constant; interior cells integrate the full
// integrand with Gauss points.
double integrate_y_cell(double beta, double mu, double lo, double hi,
                        const std::function<double(double)>& g, int n = 12);

}  // namespace hestvi
