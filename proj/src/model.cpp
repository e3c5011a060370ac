#include "hestvi/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hestvi/common.hpp"

namespace hestvi {

void HestonParams::validate() const {
    if (!(kappa > 0.0)) throw ConfigError("model.kappa must be > 0");
    if (!(theta > 0.0)) throw ConfigError("model.theta must be > 0");
    if (!(sigma > 0.0)) throw ConfigError("model.sigma must be > 0");
    if (!(std::abs(rho) < 0.999))
        throw ConfigError("model.rho must satisfy |rho| < 0.999");
    if (!std::isfinite(r) || !std::isfinite(delta))
        throw ConfigError("model.r / model.delta must be finite");
}

void MeasureWeights::validate() const {
    if (!(gamma > 0.0)) throw ConfigError("weights.gamma must be > 0");
    if (!(mu > 0.0)) throw ConfigError("weights.mu must be > 0");
}

FirstOrderCoeffs operator_coefficients(const HestonParams& p,
                                       const MeasureWeights& w, double x) {
    const double s = sgn(x);
    FirstOrderCoeffs c;
    c.j = 0.5 * (1.0 - w.gamma * s - w.mu * p.rho * p.sigma);
    c.k = p.kappa - 0.5 * w.gamma * p.rho * p.sigma * s -
          0.5 * w.mu * p.sigma * p.sigma;
    return c;
}

double measure_density(const HestonParams& p, const MeasureWeights& w,
                       double x, double y) {
    if (!(y > 0.0)) throw std::domain_error("measure_density: y must be > 0");
    return std::pow(y, p.beta() - 1.0) *
           std::exp(-w.gamma * std::abs(x) - w.mu * y);
}

double measure_total_mass(const HestonParams& p, const MeasureWeights& w) {
    const double b = p.beta();
    return 2.0 * std::tgamma(b) / (w.gamma * std::pow(w.mu, b));
}

Box default_box(const HestonParams& p, double strike, double maturity) {
    const double half = 8.0 * std::sqrt(p.theta * maturity);
    const double lk = std::log(strike);
    return {lk - half, lk + half,
            std::max(10.0 * p.theta, 5.0 * p.sigma * p.sigma / p.kappa)};
}

Payoff Payoff::put(double strike, const HestonParams& p, bool discounted) {
    if (!(strike > 0.0)) throw ConfigError("payoff.strike must be > 0");
    Payoff psi;
    psi.kind_ = Kind::put;
    psi.strike_ = strike;
    psi.discounted_ = discounted;
    const double cbar = p.drift_adjustment(), r = discounted ? p.r : 0.0;
    psi.f_ = [strike, cbar, r](double t, double x, double) {
        return std::exp(-r * t) * std::max(strike - std::exp(x + cbar * t), 0.0);
    };
    psi.a_ = 1.0;
    psi.b_ = 0.0;
    psi.L_ = 0.0;
    psi.C_ = (1.0 + strike) *
             std::exp(std::abs(cbar) + std::abs(p.r)) * 2.0;
    return psi;
}

Payoff Payoff::call(double strike, const HestonParams& p, bool discounted) {
    if (!(strike > 0.0)) throw ConfigError("payoff.strike must be > 0");
    Payoff psi;
    psi.kind_ = Kind::call;
    psi.strike_ = strike;
    psi.discounted_ = discounted;
    const double cbar = p.drift_adjustment(), r = discounted ? p.r : 0.0;
    psi.f_ = [strike, cbar, r](double t, double x, double) {
        return std::exp(-r * t) * std::max(std::exp(x + cbar * t) - strike, 0.0);
    };
    psi.a_ = 1.0;
    psi.b_ = 0.0;
    psi.L_ = 0.0;
    psi.C_ = (1.0 + strike) *
             std::exp(std::abs(cbar) + std::abs(p.r)) * 2.0;
    return psi;
}

Payoff Payoff::custom(std::function<double(double, double, double)> f,
                      double growth_a, double growth_b, double growth_L,
                      double growth_C, double strike_scale) {
    Payoff psi;
    psi.kind_ = Kind::custom;
    psi.strike_ = strike_scale;
    psi.f_ = std::move(f);
    psi.a_ = growth_a;
    psi.b_ = growth_b;
    psi.L_ = growth_L;
    psi.C_ = growth_C;
    return psi;
}

MeasureWeights default_weights(const HestonParams& p, const Payoff& psi) {
    MeasureWeights w;
    w.gamma = std::max(4.0, 2.0 * psi.growth_a() + 2.0);
    const double cap = p.kappa / (p.sigma * p.sigma) + psi.growth_L();
    w.mu = std::min(cap, 2.0 * psi.growth_b() + 2.0);
    return w;
}

DominatingFunction DominatingFunction::fit(const Payoff& psi,
                                           const HestonParams& p,
                                           const Box& box, double maturity) {
    DominatingFunction phi;
    phi.p_ = p;
    phi.L_ = psi.growth_L();
    if (!(phi.L_ < 2.0 * p.kappa / (p.sigma * p.sigma)))
        throw ConfigError(
            "payoff growth L must be below 2 kappa / sigma^2 for a "
            "dominating supersolution to exist");

    // pad the box by 10% on each side, sample, take the worst ratio
    const double px = 0.1 * (box.x_max - box.x_min), py = 0.1 * box.y_max;
    const double a = p.rho * p.kappa * p.theta / p.sigma;
    double worst = 0.0;
    const int nt = 21, nx = 81, ny = 41;
    for (int it = 0; it < nt; ++it) {
        const double t = maturity * it / (nt - 1);
        for (int ix = 0; ix < nx; ++ix) {
            const double x =
                box.x_min - px + (box.x_max - box.x_min + 2 * px) * ix / (nx - 1);
            for (int iy = 0; iy < ny; ++iy) {
                const double y = (box.y_max + py) * iy / (ny - 1);
                const double base = std::exp(x - a * t) +
                                    std::exp(phi.L_ * (y - p.kappa * p.theta * t));
                worst = std::max(worst, psi(t, x, y) / base);
            }
        }
    }
    phi.c_t_ = std::max(worst, 1e-300) * 1.1;
    return phi;
}

double DominatingFunction::operator()(double t, double x, double y) const {
    const double a = p_.rho * p_.kappa * p_.theta / p_.sigma;
    return c_t_ * (std::exp(x - a * t) +
                   std::exp(L_ * y - p_.kappa * p_.theta * L_ * t));
}

double DominatingFunction::pde_residual(double t, double x, double y) const {
    // first exponential is space-time harmonic for the generator; the second
    // contributes y L (sigma^2 L / 2 - kappa) e^{L y - kappa theta L t}
    const double a = p_.rho * p_.kappa * p_.theta / p_.sigma;
    (void)x;
    const double g = std::exp(L_ * y - p_.kappa * p_.theta * L_ * t);
    (void)a;
    return c_t_ * y * L_ * (0.5 * p_.sigma * p_.sigma * L_ - p_.kappa) * g;
}

namespace {

double growth_envelope(const Payoff& psi, double x, double y) {
    return psi.growth_C() *
           std::exp(psi.growth_a() * std::abs(x) + psi.growth_b() * y);
}

}  // namespace

AssumptionReport check_assumptions(const HestonParams& p,
                                   const MeasureWeights& w, const Payoff& psi,
                                   const Box& box, double maturity) {
    p.validate();
    w.validate();
    AssumptionReport rep;
    auto flag = [&rep](const std::string& s) { rep.violations.push_back(s); };

    // integrability relations between growth exponents and weights
    if (!(w.gamma > 2.0 * psi.growth_a()))
        flag("integrability: gamma <= 2a (psi^2 not x-integrable)");
    if (!(w.mu > 2.0 * psi.growth_b()))
        flag("integrability: mu <= 2b (derivative bound not y-integrable)");
    if (!(w.mu > 2.0 * psi.growth_L()))
        flag("integrability: mu <= 2L (dominating function not in H)");
    if (!(psi.growth_L() < 2.0 * p.kappa / (p.sigma * p.sigma)))
        flag("growth: L >= 2 kappa / sigma^2 (no supersolution)");

    DominatingFunction phi = DominatingFunction::fit(psi, p, box, maturity);

    // sampled pointwise checks
    const int nt = 9, nx = 41, ny = 21;
    const double hx = 1e-5 * std::max(1.0, box.x_max - box.x_min);
    const double hy = 1e-5 * std::max(1.0, box.y_max);
    int neg = 0, dom = 0, deriv = 0, residual = 0;
    for (int it = 0; it < nt; ++it) {
        const double t = maturity * it / (nt - 1);
        for (int ix = 0; ix < nx; ++ix) {
            const double x =
                box.x_min + (box.x_max - box.x_min) * ix / (nx - 1);
            for (int iy = 1; iy <= ny; ++iy) {
                const double y = box.y_max * iy / ny;
                const double v = psi(t, x, y);
                if (v < -1e-12) ++neg;
                const double excess = v - phi(t, x, y);
                if (excess > 1e-9 * (1.0 + std::abs(v))) ++dom;
                rep.max_obstacle_excess =
                    std::max(rep.max_obstacle_excess, excess);
                const double dx =
                    (psi(t, x + hx, y) - psi(t, x - hx, y)) / (2 * hx);
                const double dy =
                    (psi(t, x, y + hy) - psi(t, x, y - hy)) / (2 * hy);
                const double ratio = (std::abs(dx) + std::abs(dy)) /
                                     growth_envelope(psi, x, y);
                rep.max_derivative_ratio =
                    std::max(rep.max_derivative_ratio, ratio);
                if (ratio > 1.0) ++deriv;
                if (phi.pde_residual(t, x, y) > 1e-9) ++residual;
            }
        }
    }
    if (neg) flag("obstacle: psi < 0 at " + std::to_string(neg) + " samples");
    if (dom)
        flag("domination: psi > Phi at " + std::to_string(dom) + " samples");
    if (deriv)
        flag("growth: |grad psi| exceeds C e^{a|x|+by} at " +
             std::to_string(deriv) + " samples");
    if (residual)
        flag("supersolution: dPhi/dt + L Phi > 0 at " +
             std::to_string(residual) + " samples");
    return rep;
}

}  // namespace hestvi
