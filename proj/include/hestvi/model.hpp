#pragma once

#include <functional>
#include <string>
#include <vector>

namespace hestvi {

// Square-root stochastic volatility model
//   dS/S = (r - delta) dt + sqrt(Y) dB,   dY = kappa (theta - Y) dt
//                                              + sigma sqrt(Y) dW,
//   d<B,W> = rho dt.
// All coordinates downstream use the shifted log-price X = log S - cbar t.
struct HestonParams {
    double kappa = 0.0;   // mean reversion speed
    double theta = 0.0;   // long-run variance
    double sigma = 0.0;   // vol-of-vol
    double rho = 0.0;     // correlation, |rho| < 1 (boundary rejected)
    double r = 0.0;       // short rate
    double delta = 0.0;   // dividend yield

    void validate() const;

    // Feller index beta = 2 kappa theta / sigma^2 (beta >= 1 not required).
    double beta() const { return 2.0 * kappa * theta / (sigma * sigma); }

    // cbar = r - delta - rho kappa theta / sigma; X = log S - cbar t has
    // drift rho kappa theta / sigma - Y/2.
    double drift_adjustment() const {
        return r - delta - rho * kappa * theta / sigma;
    }

    // kappa_bar = rho kappa / sigma - 1/2, the drift coefficient of the
    // uncorrelated component X - (rho/sigma) Y per unit of Y.
    double kappa_bar() const { return rho * kappa / sigma - 0.5; }
};

// Weights of the reference measure m(dx,dy) = y^{beta-1} e^{-gamma|x|-mu y}.
struct MeasureWeights {
    double gamma = 0.0;
    double mu = 0.0;

    void validate() const;
};

// sgn with sgn(0) = 0; only affects pointwise coefficient evaluation, never
// integrals (the x = 0 line is a null set of the measure).
inline double sgn(double x) { return (x > 0.0) - (x < 0.0); }

// First-order coefficients of the convection part of the bilinear form,
//   j(x) = (1 - gamma sgn(x) - mu rho sigma) / 2,
//   k(x) = kappa - (gamma rho sigma / 2) sgn(x) - mu sigma^2 / 2.
struct FirstOrderCoeffs {
    double j = 0.0;
    double k = 0.0;
};
FirstOrderCoeffs operator_coefficients(const HestonParams& p,
                                       const MeasureWeights& w, double x);

// Density of the weighted measure at (x, y); y <= 0 is outside the state
// space and throws.
double measure_density(const HestonParams& p, const MeasureWeights& w,
                       double x, double y);

// Mass of the measure over the whole half-plane: 2 Gamma(beta) / (gamma
// mu^beta).
double measure_total_mass(const HestonParams& p, const MeasureWeights& w);

// Truncated computational box [x_min, x_max] x [0, y_max].
struct Box {
    double x_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;
};

// Default box: x in log K +- 8 sqrt(theta T), y up to max(10 theta,
// 5 sigma^2 / kappa).
Box default_box(const HestonParams& p, double strike, double maturity);

// Obstacle in shifted coordinates.  Vanilla payoffs absorb the e^{-rt}
// discount so that the optimal-stopping value of psi itself is the price:
//   put:  psi(t,x,y) = e^{-rt} (K - e^{x + cbar t})_+
//   call: psi(t,x,y) = e^{-rt} (e^{x + cbar t} - K)_+
// (set discounted = false for the raw convention; both are exposed).
// Growth metadata: 0 <= psi <= C (e^x + e^{L y}) and first derivatives
// bounded by C e^{a|x| + b y}, with L < 2 kappa / sigma^2.
class Payoff {
  public:
    enum class Kind { put, call, custom };

    static Payoff put(double strike, const HestonParams& p,
                      bool discounted = true);
    static Payoff call(double strike, const HestonParams& p,
                       bool discounted = true);
    static Payoff custom(std::function<double(double, double, double)> f,
                         double growth_a, double growth_b, double growth_L,
                         double growth_C, double strike_scale = 1.0);

    double operator()(double t, double x, double y) const {
        return f_(t, x, y);
    }

    Kind kind() const { return kind_; }
    double strike() const { return strike_; }
    bool discounted() const { return discounted_; }
    double growth_a() const { return a_; }
    double growth_b() const { return b_; }
    double growth_L() const { return L_; }
    double growth_C() const { return C_; }

  private:
    Payoff() = default;
    Kind kind_ = Kind::custom;
    std::function<double(double, double, double)> f_;
    double strike_ = 1.0;
    bool discounted_ = true;
    double a_ = 0.0, b_ = 0.0, L_ = 0.0, C_ = 1.0;
};

// Default measure weights for a payoff: gamma = max(4, 2a + 2) and
// mu = min(kappa/sigma^2 + L, 2b + 2), which keeps gamma > 2a, mu > 2b and
// mu strictly between 2L and 2 kappa / sigma^2.
MeasureWeights default_weights(const HestonParams& p, const Payoff& psi);

// Supersolution dominating the obstacle:
//   Phi(t,x,y) = C_T (e^{x - (rho kappa theta / sigma) t} + e^{L y - kappa
//   theta L t}),
// which satisfies dPhi/dt + L Phi <= 0 whenever L < 2 kappa / sigma^2.
class DominatingFunction {
  public:
    // Smallest constant covering psi on the box padded by 10 per cent,
    // scanned over a (t,x,y) sample grid, then inflated by 10 per cent.
    static DominatingFunction fit(const Payoff& psi, const HestonParams& p,
                                  const Box& box, double maturity);

    double operator()(double t, double x, double y) const;

    double constant() const { return c_t_; }
    double growth_L() const { return L_; }

    // dPhi/dt + L Phi at a point (closed form); must be <= 0 on the state
    // space.  Exposed for the numerical-differentiation cross-check.
    double pde_residual(double t, double x, double y) const;

  private:
    HestonParams p_;
    double c_t_ = 1.0;
    double L_ = 0.0;
};

struct AssumptionReport {
    std::vector<std::string> violations;
    double max_derivative_ratio = 0.0;  // sampled |grad psi| / C e^{a|x|+by}
    double max_obstacle_excess = 0.0;   // sampled (psi - Phi)_+
    bool ok() const { return violations.empty(); }
};

// Sampled verification of the payoff growth/integrability assumptions:
// 0 <= psi <= Phi, derivative growth via central differences, and the
// integrability relations gamma > 2a, mu > 2b, mu > 2L, L < 2 kappa/sigma^2.
AssumptionReport check_assumptions(const HestonParams& p,
                                   const MeasureWeights& w, const Payoff& psi,
                                   const Box& box, double maturity);

}  // namespace hestvi
