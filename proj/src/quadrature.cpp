#include "hestvi/quadrature.hpp"

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

namespace hestvi {

namespace {

GaussRule compute_gauss(int n) {
    // Newton iteration on P_n from Chebyshev starting points.
    GaussRule r;
    r.x.resize(n);
    r.w.resize(n);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            pp = n * (x * p1 - p0) / (x * x - 1.0);
            double dx = p1 / pp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        r.x[i] = -x;
        r.x[n - 1 - i] = x;
        double w = 2.0 / ((1.0 - x * x) * pp * pp);
        r.w[i] = w;
        r.w[n - 1 - i] = w;
    }
    return r;
}

}  // namespace

const GaussRule& gauss_legendre(int n) {
    static std::map<int, GaussRule> cache;
    static std::mutex m;
    std::lock_guard<std::mutex> lock(m);
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, compute_gauss(n)).first;
    return it->second;
}

std::vector<double> y_cell_moments(double beta, double mu, double lo,
                                   double hi, int kmax) {
    if (!(beta > 0.0) || !(mu > 0.0) || !(hi > lo) || lo < 0.0)
        throw std::invalid_argument("y_cell_moments: bad cell or weights");
    std::vector<double> m(kmax + 1);
    for (int k = 0; k <= kmax; ++k) {
        const double s = beta + k;
        const double a = mu * lo, b = mu * hi;
        double diff;
        if (a > s) {
            // tail regime: difference of upper regularized gammas
            diff = boost::math::gamma_q(s, a) - boost::math::gamma_q(s, b);
        } else {
            diff = boost::math::gamma_p(s, b) - boost::math::gamma_p(s, a);
        }
        m[k] = std::tgamma(s) * std::pow(mu, -s) * diff;
    }
    return m;
}

double integrate_x_cell(double gamma, double a, double b,
                        const std::function<double(double)>& f, int n) {
    auto piece = [&](double lo, double hi) {
        const GaussRule& g = gauss_legendre(n);
        const double c = 0.5 * (lo + hi), h = 0.5 * (hi - lo);
        double s = 0.0;
        for (int q = 0; q < n; ++q) {
            const double x = c + h * g.x[q];
            s += g.w[q] * std::exp(-gamma * std::abs(x)) * f(x);
        }
        return s * h;
    };
    if (a < 0.0 && b > 0.0) return piece(a, 0.0) + piece(0.0, b);
    return piece(a, b);
}

namespace {

// Gauss-Jacobi rule for the weight (1+x)^{beta-1} on [-1,1], computed by
// Golub-Welsch from the monic Jacobi recurrence (parameters a = 0,
// b = beta - 1) and cached per (beta, n).  Turns the singular y^{beta-1}
// factor of the first cell into part of the rule, so the remaining
// integrand is analytic and the rule converges spectrally.
const GaussRule& gauss_jacobi(double beta, int n) {
    static std::map<std::pair<double, int>, GaussRule> cache;
    static std::mutex m;
    std::lock_guard<std::mutex> lock(m);
    auto key = std::make_pair(beta, n);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;

    const double b = beta - 1.0;
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    auto alpha = [&](int k) {
        if (k == 0) return b / (b + 2.0);
        const double s = 2.0 * k + b;
        return b * b / (s * (s + 2.0));
    };
    auto off2 = [&](int k) {  // squared off-diagonal entries
        if (k == 1) return 4.0 * (b + 1.0) / ((b + 2.0) * (b + 2.0) * (b + 3.0));
        const double s = 2.0 * k + b;
        return 4.0 * k * k * (k + b) * (k + b) /
               (s * s * (s + 1.0) * (s - 1.0));
    };
    for (int k = 0; k < n; ++k) J(k, k) = alpha(k);
    for (int k = 1; k < n; ++k) {
        const double e = std::sqrt(off2(k));
        J(k, k - 1) = J(k - 1, k) = e;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    const double mass = std::pow(2.0, beta) / beta;  // int (1+x)^{b} dx
    GaussRule r;
    r.x.resize(n);
    r.w.resize(n);
    for (int k = 0; k < n; ++k) {
        r.x[k] = es.eigenvalues()[k];
        const double v0 = es.eigenvectors()(0, k);
        r.w[k] = mass * v0 * v0;
    }
    return cache.emplace(key, std::move(r)).first->second;
}

}  // namespace

double integrate_y_cell(double beta, double mu, double lo, double hi,
                        const std::function<double(double)>& g, int n) {
    if (lo <= 0.0) {
        const GaussRule& gj = gauss_jacobi(beta, std::max(n, 16));
        double s = 0.0;
        for (std::size_t q = 0; q < gj.x.size(); ++q) {
            const double y = 0.5 * hi * (1.0 + gj.x[q]);
            s += gj.w[q] * std::exp(-mu * y) * g(y);
        }
        return s * std::pow(0.5 * hi, beta);
    }
    // interior cells: keep the weight in the integrand but cap the cell
    // aspect ratio so its curvature stays resolved by the Gauss rule
    if (hi > 3.0 * lo)
        return integrate_y_cell(beta, mu, lo, 3.0 * lo, g, n) +
               integrate_y_cell(beta, mu, 3.0 * lo, hi, g, n);
    const GaussRule& gi = gauss_legendre(n);
    const double c = 0.5 * (lo + hi), h = 0.5 * (hi - lo);
    double s = 0.0;
    for (int q = 0; q < n; ++q) {
        const double y = c + h * gi.x[q];
        s += gi.w[q] * std::pow(y, beta - 1.0) * std::exp(-mu * y) * g(y);
    }
    return s * h;
}

}  // namespace hestvi
