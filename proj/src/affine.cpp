#include "hestvi/affine.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/numeric/odeint.hpp>

#include "hestvi/bessel.hpp"
#include "hestvi/quadrature.hpp"

namespace hestvi::affine {

namespace {

// (1 - e^{-d s}) / d, stable for small |d s|
cd einc(cd d, double s) {
    if (std::abs(d) * s < 1e-5) {
        const cd ds = d * s;
        return s * (1.0 - ds / 2.0 + ds * ds / 6.0 - ds * ds * ds / 24.0);
    }
    return (1.0 - std::exp(-d * s)) / d;
}

}  // namespace

RiccatiSolution riccati_solve(const HestonParams& p, cd z, cd w, double t,
                              double tol, RiccatiTrace* trace) {
    p.validate();
    if (!(t >= 0.0)) throw ConfigError("riccati_solve: t must be >= 0");
    if (!(tol > 0.0)) throw ConfigError("riccati_solve: tol must be > 0");
    if (trace) {
        trace->t.clear();
        trace->psi.clear();
        trace->phi.clear();
    }
    if (t == 0.0) return {z, cd(0.0)};

    const double s2 = p.sigma * p.sigma, kap = p.kappa;
    using state_t = std::array<cd, 2>;
    auto rhs = [&](const state_t& s, state_t& ds, double) {
        if (!(std::abs(s[0]) < 1e10))
            throw SolveError("riccati_solve: solution blew up");
        ds[0] = 0.5 * s2 * s[0] * s[0] - kap * s[0] + w;
        ds[1] = s[0];
    };
    auto observer = [&](const state_t& s, double tt) {
        if (trace) {
            trace->t.push_back(tt);
            trace->psi.push_back(s[0]);
            trace->phi.push_back(s[1]);
        }
    };
    namespace ode = boost::numeric::odeint;
    state_t s{z, cd(0.0)};
    auto stepper = ode::make_controlled(
        tol, tol,
        ode::runge_kutta_dopri5<state_t, double, state_t, double,
                                ode::array_algebra>());
    // Scale the first step with the fast rate sqrt|kappa^2 - 2 sigma^2 w|;
    // a fixed 1e-3 lets the trial stages of the very first step overshoot
    // when |w| is huge (Laplace-transform integrands probe w ~ -1e9).
    const double dmag =
        std::sqrt(std::abs(cd(kap * kap) - 2.0 * s2 * w));
    const double rate = kap + dmag + 0.5 * s2 * std::abs(z);
    const double dt0 = std::min({t, 1e-3, 0.25 / rate});
    ode::integrate_adaptive(stepper, rhs, s, 0.0, t, dt0, observer);
    return {s[0], s[1]};
}

RiccatiSolution riccati_closed_form(const HestonParams& p, cd z, cd w,
                                    double t) {
    p.validate();
    if (!(t >= 0.0)) throw ConfigError("riccati_closed_form: t must be >= 0");
    if (t == 0.0) return {z, cd(0.0)};

    const double s2 = p.sigma * p.sigma;
    const cd d = std::sqrt(cd(p.kappa * p.kappa) - 2.0 * s2 * w);
    const cd rp = (p.kappa + d) / s2, rm = (p.kappa - d) / s2;
    if (std::abs(z - rp) <= 1e-14 * (std::abs(z) + std::abs(rp) + 1.0))
        return {rp, rp * t};  // stationary point of the flow

    // For real data the pole time of the linear-fractional flow is explicit;
    // the formulas below would otherwise continue analytically through it
    // and return a finite but meaningless value.
    if (z.imag() == 0.0 && w.imag() == 0.0) {
        const double disc = p.kappa * p.kappa - 2.0 * s2 * w.real();
        const double zr = z.real();
        double t_pole = std::numeric_limits<double>::infinity();
        if (disc > 0.0) {
            const double dd = std::sqrt(disc);
            if (zr > rp.real())
                t_pole = std::log((zr - rm.real()) / (zr - rp.real())) / dd;
        } else if (disc == 0.0) {
            const double r = p.kappa / s2;
            if (zr > r) t_pole = 2.0 / (s2 * (zr - r));
        } else {
            // complex-conjugate roots: the real solution always explodes
            const double dd = std::sqrt(-disc);
            const double th = std::arg((z - rm) / (z - rp));
            t_pole = (th > 0.0 ? th : th + 2.0 * std::numbers::pi) / dd;
        }
        if (t >= t_pole * (1.0 - 1e-12))
            throw SolveError(
                "riccati_closed_form: flow blew up (moment explosion)");
    }

    const cd G = (z - rm) / (z - rp);
    // psi(t) = r_- - (2/sigma^2) G e^{-dt} / D(t),
    // D(t)   = (1 - e^{-dt})/d - e^{-dt} (2/sigma^2)/(z - r_+),
    // which is the linear-fractional flow with the d -> 0 cancellation
    // divided out (D stays O(1) at a double root).
    const cd Et = std::exp(-d * t);
    const cd D = einc(d, t) - Et * (2.0 / s2) / (z - rp);
    if (!(std::abs(D) > 1e-300))
        throw SolveError("riccati_closed_form: flow blew up (moment explosion)");
    const cd psi = rm - (2.0 / s2) * G * Et / D;

    // phi(t) = r_- t - (2/sigma^2) log R(t) with
    // R(s) = e^{-ds} - (sigma^2/2)(z - r_+) (1 - e^{-ds})/d, R(0) = 1;
    // the log branch follows R(s) continuously from s = 0.
    const double rot = std::abs(d.imag()) * t;
    const int n_sub = 8 + static_cast<int>(std::min(rot / 0.5, 2.0e6));
    cd log_r(0.0);
    cd prev(1.0);
    for (int m = 1; m <= n_sub; ++m) {
        const double sm = t * m / n_sub;
        const cd R = std::exp(-d * sm) - (0.5 * s2) * (z - rp) * einc(d, sm);
        if (!(std::abs(R) > 1e-300))
            throw SolveError(
                "riccati_closed_form: flow blew up (moment explosion)");
        log_r += std::log(R / prev);
        prev = R;
    }
    const cd phi = rm * t - (2.0 / s2) * log_r;
    return {psi, phi};
}

cd char_fn_joint(const HestonParams& p, double lambda, double u, double v,
                 double x0, double y0, double t) {
    p.validate();
    if (lambda < 0.0) throw ConfigError("char_fn_joint: lambda must be >= 0");
    if (!(t >= 0.0)) throw ConfigError("char_fn_joint: t must be >= 0");
    if (!(y0 >= 0.0)) throw ConfigError("char_fn_joint: y0 must be >= 0");
    const cd iu(0.0, u);
    const cd z(0.0, u * p.rho / p.sigma + v);
    const cd w = iu * p.kappa_bar() -
                 0.5 * u * u * (1.0 - p.rho * p.rho) - lambda;
    const auto rs = riccati_closed_form(p, z, w, t);
    return std::exp(-lambda * t) *
           std::exp(iu * x0 + y0 * (rs.psi - cd(0.0, u * p.rho / p.sigma)) +
                    p.theta * p.kappa * rs.phi);
}

bool laplace_admissible(const HestonParams& p, double lambda, double a,
                        double b) {
    const double l1 = a * p.rho / p.sigma + b;
    const double l2 = a * p.kappa_bar() +
                      0.5 * a * a * (1.0 - p.rho * p.rho) - lambda;
    const double q = 0.5 * p.sigma * p.sigma * l1 * l1 - p.kappa * l1 + l2;
    const double scale = 0.5 * p.sigma * p.sigma * l1 * l1 +
                         p.kappa * std::abs(l1) + std::abs(l2) + 1.0;
    return q <= 1e-12 * scale;
}

double laplace_joint(const HestonParams& p, double lambda, double a, double b,
                     double x0, double y0, double t) {
    p.validate();
    if (!(t >= 0.0)) throw ConfigError("laplace_joint: t must be >= 0");
    if (!(y0 >= 0.0)) throw ConfigError("laplace_joint: y0 must be >= 0");
    if (!laplace_admissible(p, lambda, a, b))
        throw ConfigError(
            "laplace_joint: (a, b) outside the admissible set for this "
            "lambda");
    const double l1 = a * p.rho / p.sigma + b;
    const double l2 = a * p.kappa_bar() +
                      0.5 * a * a * (1.0 - p.rho * p.rho) - lambda;
    const auto rs = riccati_closed_form(p, cd(l1), cd(l2), t);
    const double expo = -lambda * t + a * (x0 - p.rho * y0 / p.sigma) +
                        y0 * rs.psi.real() +
                        p.theta * p.kappa * rs.phi.real();
    return std::exp(expo);
}

double cir_density(const HestonParams& p, double t, double y0, double y) {
    p.validate();
    if (!(t > 0.0)) throw std::domain_error("cir_density: t must be > 0");
    if (!(y0 >= 0.0)) throw std::domain_error("cir_density: y0 must be >= 0");
    if (!(y > 0.0)) throw std::domain_error("cir_density: y must be > 0");
    const double s2 = p.sigma * p.sigma;
    const double yt = y0 * std::exp(-p.kappa * t);
    const double L = s2 * (-std::expm1(-p.kappa * t)) / (4.0 * p.kappa);
    const double beta = p.beta(), nu = beta - 1.0;
    if (yt < 1e-12 * 2.0 * L) {
        const double lp = (beta - 1.0) * std::log(y) - y / (2.0 * L) -
                          beta * std::log(2.0 * L) - std::lgamma(beta);
        return std::exp(lp);
    }
    const double lp = -std::log(2.0 * L) - (y + yt) / (2.0 * L) +
                      0.5 * nu * (std::log(y) - std::log(yt)) +
                      log_bessel_i(nu, std::sqrt(y * yt) / L);
    return std::exp(lp);
}

double cir_density_bound(const HestonParams& p, double t, double y0,
                         double y) {
    p.validate();
    if (!(t > 0.0))
        throw std::domain_error("cir_density_bound: t must be > 0");
    if (!(y0 >= 0.0))
        throw std::domain_error("cir_density_bound: y0 must be >= 0");
    if (!(y > 0.0)) throw std::domain_error("cir_density_bound: y must be > 0");
    const double s2 = p.sigma * p.sigma;
    const double yt = y0 * std::exp(-p.kappa * t);
    const double L = s2 * (-std::expm1(-p.kappa * t)) / (4.0 * p.kappa);
    const double beta = p.beta();
    const double c_beta = bessel_envelope_constant(beta - 1.0) / 2.0;
    const double gap = std::sqrt(y) - std::sqrt(yt);
    return c_beta * std::pow(L, -(beta + 0.5)) *
           std::exp(-gap * gap / (2.0 * L)) * std::pow(y, beta - 1.0) *
           (std::sqrt(L) + std::pow(y * yt, 0.25));
}

double neg_moment_integrated_variance(const HestonParams& p, double t,
                                      double y0, double q) {
    p.validate();
    if (!(t > 0.0)) throw ConfigError("neg_moment: t must be > 0");
    if (!(y0 >= 0.0)) throw ConfigError("neg_moment: y0 must be >= 0");
    if (!(q > 0.0)) throw ConfigError("neg_moment: q must be > 0");
    const double lg = std::lgamma(q);
    const double s2 = p.sigma * p.sigma;
    auto f = [&](double v) -> double {
        if (!(v > 0.0)) return 0.0;
        const double s = v * v;
        // Skip transforms that underflow: psi decreases from 0 toward the
        // negative root r_-, and once d t is large the exponent is below
        // (y0/2 + theta kappa t/4) r_-; cut when that is under -250.
        const double d = std::sqrt(p.kappa * p.kappa + 2.0 * s2 * s);
        const double rmag = (d - p.kappa) / s2;
        if (d * t > 10.0 &&
            (0.5 * y0 + 0.25 * p.theta * p.kappa * t) * rmag > 250.0)
            return 0.0;
        const auto rs = riccati_solve(p, cd(0.0), cd(-s), t, 1e-12);
        const double lv =
            y0 * rs.psi.real() + p.theta * p.kappa * rs.phi.real();
        return 2.0 * std::exp((2.0 * q - 1.0) * std::log(v) + lv - lg);
    };
    boost::math::quadrature::exp_sinh<double> integrator;
    double err = 0.0;
    const double val = integrator.integrate(f, 1e-9, &err);
    return val;
}

namespace {

// E[e^{i u log S_T}] for complex u, S = e^{X + cbar t}
cd cf_logspot(const HestonParams& p, cd u, double T, double x0, double y0) {
    const cd iu = cd(0.0, 1.0) * u;
    const cd z = iu * (p.rho / p.sigma);
    const cd w = iu * p.kappa_bar() - 0.5 * u * u * (1.0 - p.rho * p.rho);
    const auto rs = riccati_closed_form(p, z, w, T);
    return std::exp(iu * (x0 + p.drift_adjustment() * T) +
                    y0 * (rs.psi - z) + p.theta * p.kappa * rs.phi);
}

}  // namespace

double european_price_fourier(const HestonParams& p, double strike, double T,
                              double x0, double y0, bool is_put) {
    p.validate();
    if (!(strike > 0.0))
        throw ConfigError("european_price_fourier: strike must be > 0");
    if (!(T > 0.0)) throw ConfigError("european_price_fourier: T must be > 0");
    if (!(y0 >= 0.0))
        throw ConfigError("european_price_fourier: y0 must be >= 0");
    const double alpha = is_put ? -1.75 : 0.75;
    const double k = std::log(strike);
    auto damped = [&](double v) -> cd {
        const cd arg(v, -(alpha + 1.0));
        const cd num = std::exp(-p.r * T) * cf_logspot(p, arg, T, x0, y0);
        const cd den(alpha * alpha + alpha - v * v, (2.0 * alpha + 1.0) * v);
        return num / den;
    };
    const GaussRule& gr = gauss_legendre(32);
    const double width = 8.0;
    double total = 0.0;
    int quiet = 0;
    for (int panel = 0; panel < 4000 && quiet < 2; ++panel) {
        const double c = width * (panel + 0.5), h = 0.5 * width;
        double s = 0.0;
        for (std::size_t i = 0; i < gr.x.size(); ++i) {
            const double v = c + h * gr.x[i];
            s += gr.w[i] * h *
                 (std::exp(cd(0.0, -v * k)) * damped(v)).real();
        }
        total += s;
        quiet = std::abs(s) <= 1e-12 * (std::abs(total) + 1e-12) ? quiet + 1
                                                                 : 0;
    }
    if (quiet < 2)
        throw SolveError("european_price_fourier: transform tail did not "
                         "fall below tolerance");
    return std::exp(-alpha * k) / std::numbers::pi * total;
}

double killed_exponent(const HestonParams& p, const MeasureWeights& w,
                       double p_exp) {
    p.validate();
    w.validate();
    if (!(p_exp > 1.0))
        throw ConfigError("killed_exponent: exponent must be > 1");
    const double m = w.mu + w.gamma * std::abs(p.rho) / p.sigma;
    return p.sigma * p.sigma / (2.0 * p_exp * (p_exp - 1.0)) * m * m -
           p.kappa * m / p_exp + std::abs(p.kappa_bar()) * w.gamma / p_exp +
           w.gamma * w.gamma * (1.0 - p.rho * p.rho) / (p_exp * p_exp);
}

}  // namespace hestvi::affine
