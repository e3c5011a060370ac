#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "hestvi/common.hpp"
#include "hestvi/fem.hpp"
#include "hestvi/model.hpp"
#include "hestvi/quadrature.hpp"
#include "hestvi/rng.hpp"

using namespace hestvi;

namespace {

HestonParams bench() {
    return HestonParams{2.0, 0.04, 0.3, -0.5, 0.05, 0.0};
}

const MeasureWeights kW{4.0, 2.0};

fem::Grid small_grid(int n = 21) {
    return fem::Grid::make(Box{-1.2, 1.1, 0.8}, n, n);
}

}  // namespace

TEST_CASE("grid layout and grading") {
    const Box box{-1.0, 2.0, 0.5};
    auto g = fem::Grid::make(box, 11, 9, 2.0);
    CHECK(g.size() == 99);
    CHECK(g.x.front() == box.x_min);
    CHECK(g.x.back() == box.x_max);
    CHECK(g.y.front() == 0.0);
    CHECK(g.y.back() == box.y_max);
    for (int i = 1; i < g.n_x; ++i) CHECK(g.x[i] > g.x[i - 1]);
    for (int j = 1; j < g.n_y; ++j) CHECK(g.y[j] > g.y[j - 1]);
    // quadratic grading concentrates nodes at the degenerate edge
    CHECK(g.y[1] == doctest::Approx(0.5 / 64.0).epsilon(1e-14));
    CHECK(g.y[4] == doctest::Approx(0.5 * 0.25).epsilon(1e-14));

    CHECK(g.is_dirichlet(0, 3));
    CHECK(g.is_dirichlet(10, 3));
    CHECK(g.is_dirichlet(5, 8));
    CHECK_FALSE(g.is_dirichlet(5, 0));  // y = 0 stays natural
    CHECK_FALSE(g.is_dirichlet(5, 4));

    CHECK_THROWS_AS(fem::Grid::make(box, 1, 9), ConfigError);
    CHECK_THROWS_AS(fem::Grid::make(Box{1.0, -1.0, 0.5}, 9, 9), ConfigError);
}

TEST_CASE("bilinear interpolation reproduces bilinear functions") {
    auto g = small_grid(13);
    fem::Vec u(g.size());
    auto f = [](double x, double y) { return 2.0 - 3.0 * x + y + 0.5 * x * y; };
    for (int j = 0; j < g.n_y; ++j)
        for (int i = 0; i < g.n_x; ++i)
            u[g.index(i, j)] = f(g.x[i], g.y[j]);
    for (double xc : {-1.13, -0.4, 0.0, 0.77, 1.1})
        for (double yc : {0.0, 0.013, 0.21, 0.57, 0.8})
            CHECK(g.interpolate(u, xc, yc) ==
                  doctest::Approx(f(xc, yc)).epsilon(1e-13));
    // clamped outside the box
    CHECK(g.interpolate(u, -5.0, 0.1) ==
          doctest::Approx(g.interpolate(u, -1.2, 0.1)).epsilon(1e-13));
}

TEST_CASE("y-cell moments match incomplete-gamma reference") {
    boost::math::quadrature::tanh_sinh<double> integ;
    for (double beta : {0.2, 1.0, 16.0 / 9.0, 5.0})
        for (double mu : {0.7, 2.0}) {
            const double cells[][2] = {
                {0.0, 0.01}, {0.01, 0.3}, {0.3, 1.0}, {2.0, 9.0}};
            for (auto& c : cells) {
                auto m = y_cell_moments(beta, mu, c[0], c[1], 4);
                REQUIRE(m.size() == 5);
                for (int k = 0; k <= 4; ++k) {
                    const double ref = integ.integrate(
                        [&](double y) {
                            return std::pow(y, beta - 1.0 + k) *
                                   std::exp(-mu * y);
                        },
                        c[0], c[1]);
                    CHECK_MESSAGE(
                        m[k] == doctest::Approx(ref).epsilon(1e-11),
                        "beta=", beta, " mu=", mu, " cell=[", c[0], ",",
                        c[1], "] k=", k);
                }
            }
        }
}

TEST_CASE("x and y cell quadrature against adaptive reference") {
    boost::math::quadrature::tanh_sinh<double> integ;
    auto f = [](double x) { return std::cos(1.3 * x) + x * x; };
    for (auto [a, b] : {std::pair{-0.4, 0.3}, {0.1, 0.9}, {-1.0, -0.2}}) {
        // reference split at the weight kink: tanh_sinh only handles
        // endpoint singularities
        auto piece = [&](double lo, double hi) {
            return integ.integrate(
                [&](double x) { return std::exp(-2.5 * std::abs(x)) * f(x); },
                lo, hi);
        };
        const double ref = a < 0.0 && b > 0.0
                               ? piece(a, 0.0) + piece(0.0, b)
                               : piece(a, b);
        // default 8-point rule: ~1e-12 absolute on cells this wide
        CHECK(integrate_x_cell(2.5, a, b, f) ==
              doctest::Approx(ref).epsilon(1e-10));
    }

    auto gy = [](double y) { return std::exp(-0.3 * y) * (1.0 + y * y); };
    for (double beta : {0.2, 16.0 / 9.0}) {
        for (auto [lo, hi] : {std::pair{0.0, 0.05}, {0.05, 0.4}}) {
            const double ref = integ.integrate(
                [&](double y) {
                    return std::pow(y, beta - 1.0) * std::exp(-2.0 * y) *
                           gy(y);
                },
                lo, hi);
            CHECK_MESSAGE(integrate_y_cell(beta, 2.0, lo, hi, gy) ==
                              doctest::Approx(ref).epsilon(1e-9),
                          "beta=", beta, " cell=[", lo, ",", hi, "]");
        }
    }
}

TEST_CASE("box integral against nested adaptive quadrature") {
    const auto p = bench();
    auto g = small_grid(17);
    boost::math::quadrature::tanh_sinh<double> integ;
    auto f = [](double x, double y) { return std::cos(x) + y; };
    const double got = fem::integrate_box(p, kW, g, f);
    auto outer = [&](double lo, double hi) {
        return integ.integrate(
            [&](double x) {
                boost::math::quadrature::tanh_sinh<double> inner;
                return std::exp(-kW.gamma * std::abs(x)) *
                       inner.integrate(
                           [&](double y) {
                               return std::pow(y, p.beta() - 1.0) *
                                      std::exp(-kW.mu * y) * f(x, y);
                           },
                           0.0, g.box.y_max);
            },
            lo, hi);
    };
    // outer integral split at the weight kink
    const double ref = outer(g.box.x_min, 0.0) + outer(0.0, g.box.x_max);
    CHECK(got == doctest::Approx(ref).epsilon(1e-9));
}

TEST_CASE("energy constants for two weight sets") {
    const auto p = bench();
    // oracle: eigenvalues of Q = [[1, -0.15], [-0.15, 0.09]] by the
    // quadratic formula, sup of sqrt(j^2+k^2) over the two signs
    {
        auto ec = fem::energy_constants(p, kW);
        CHECK(ec.delta1 == doctest::Approx(0.0329562).epsilon(1e-5));
        CHECK(ec.delta0 == doctest::Approx(0.5120438).epsilon(1e-5));
        CHECK(ec.K1 == doctest::Approx(3.1007418).epsilon(1e-6));
        CHECK(ec.lambda_min == doctest::Approx(145.8860).epsilon(1e-5));
        CHECK(ec.C1() == doctest::Approx(ec.delta0 + ec.K1));
        CHECK(ec.C2() == doctest::Approx(0.5 * ec.delta1));
        CHECK(ec.C3() == doctest::Approx(ec.lambda_min));
        // delta0 + delta1 = tr(Q)/2 and delta0 delta1 = det(Q)/4
        CHECK(ec.delta0 + ec.delta1 ==
              doctest::Approx(0.5 * (1.0 + 0.09)).epsilon(1e-14));
        CHECK(ec.delta0 * ec.delta1 ==
              doctest::Approx(0.25 * (0.09 - 0.0225)).epsilon(1e-12));
    }
    {
        auto ec = fem::energy_constants(p, MeasureWeights{1.0, 1.0});
        CHECK(ec.K1 == doctest::Approx(2.1656466).epsilon(1e-6));
        CHECK(ec.lambda_min == doctest::Approx(71.1720).epsilon(1e-4));
    }
}

TEST_CASE("assembled operators satisfy the exact discrete identities") {
    const auto p = bench();
    auto g = small_grid(21);
    auto sys = fem::assemble(p, kW, g, 3.0);

    const int n = g.size();
    const double mass_total = sys.mass.sum();
    const double box_one =
        fem::integrate_box(p, kW, g, [](double, double) { return 1.0; });
    CHECK(mass_total == doctest::Approx(box_one).epsilon(1e-8));
    const double box_1py =
        fem::integrate_box(p, kW, g, [](double, double y) { return 1.0 + y; });
    CHECK(sys.mass_weighted.sum() == doctest::Approx(box_1py).epsilon(1e-8));

    // symmetry of the symmetric part is exact up to roundoff
    fem::SpMat asym = fem::SpMat(sys.stiff_sym.transpose()) - sys.stiff_sym;
    double worst = 0.0;
    for (int k = 0; k < asym.outerSize(); ++k)
        for (fem::SpMat::InnerIterator it(asym, k); it; ++it)
            worst = std::max(worst, std::abs(it.value()));
    CHECK(worst <= 1e-13);
    fem::SpMat masym = fem::SpMat(sys.mass.transpose()) - sys.mass;
    worst = 0.0;
    for (int k = 0; k < masym.outerSize(); ++k)
        for (fem::SpMat::InnerIterator it(masym, k); it; ++it)
            worst = std::max(worst, std::abs(it.value()));
    CHECK(worst <= 1e-15);

    // constants are in the kernel of the drift-diffusion part
    fem::Vec ones = fem::Vec::Ones(n);
    CHECK((sys.a_unshifted() * ones).lpNorm<Eigen::Infinity>() <= 1e-12);

    // a_lambda is what it says
    fem::SpMat diff = sys.a_lambda() - sys.a_unshifted() -
                      fem::SpMat(3.0 * sys.mass_weighted);
    worst = 0.0;
    for (int k = 0; k < diff.outerSize(); ++k)
        for (fem::SpMat::InnerIterator it(diff, k); it; ++it)
            worst = std::max(worst, std::abs(it.value()));
    CHECK(worst <= 1e-12);

    // lumped mass: strictly positive, sums preserved
    fem::Vec lm = sys.lumped_mass();
    CHECK(lm.minCoeff() > 0.0);
    CHECK(lm.sum() == doctest::Approx(sys.mass.sum()).epsilon(1e-13));

    // positive semidefiniteness of the symmetric part on random vectors
    Philox eng(5, 0);
    std::normal_distribution<double> gauss;
    for (int t = 0; t < 12; ++t) {
        fem::Vec u(n);
        for (int i = 0; i < n; ++i) u[i] = gauss(eng);
        CHECK(u.dot(sys.stiff_sym * u) >= -1e-11 * u.squaredNorm());
        CHECK(u.dot(sys.grad_v * u) >= -1e-11 * u.squaredNorm());
        CHECK(u.dot(sys.mass * u) > 0.0);
    }

    // norms tie back to the matrices
    fem::Vec u(n);
    for (int i = 0; i < n; ++i) u[i] = gauss(eng);
    auto nm = fem::weighted_norms(sys, u);
    CHECK(nm.h == doctest::Approx(std::sqrt(u.dot(sys.mass * u))).epsilon(1e-12));
    CHECK(nm.v ==
          doctest::Approx(std::sqrt(u.dot(sys.grad_v * u) +
                                    u.dot(sys.mass_weighted * u)))
              .epsilon(1e-12));
}

TEST_CASE("serial and parallel assembly agree bitwise") {
    const auto p = bench();
    auto g = small_grid(19);
    auto a = fem::assemble(p, kW, g, 2.0);
    auto b = fem::assemble_serial(p, kW, g, 2.0);
    for (auto pick :
         {&fem::DiscreteSystem::mass, &fem::DiscreteSystem::mass_weighted,
          &fem::DiscreteSystem::stiff_sym, &fem::DiscreteSystem::convect,
          &fem::DiscreteSystem::grad_v}) {
        fem::SpMat ma = a.*pick, mb = b.*pick;
        ma.makeCompressed();
        mb.makeCompressed();
        REQUIRE(ma.nonZeros() == mb.nonZeros());
        for (int k = 0; k < ma.nonZeros(); ++k)
            CHECK(ma.valuePtr()[k] == mb.valuePtr()[k]);
    }
}

TEST_CASE("integration by parts identity converges on smooth bumps") {
    const auto p = bench();
    // compactly supported bumps and the analytic image under the generator
    auto bump = [](double s) { return s > 0.0 && s < 1.0
                                          ? std::exp(-1.0 / (s * (1.0 - s)))
                                          : 0.0; };
    const Box box{-1.2, 1.1, 0.8};
    auto mapx = [&](double x) { return (x - box.x_min) / (box.x_max - box.x_min); };
    auto mapy = [&](double y) { return y / box.y_max; };
    auto u_f = [&](double x, double y) { return bump(mapx(x)) * bump(mapy(y)); };
    auto v_f = [&](double x, double y) {
        return bump(1.3 * mapx(x) - 0.1) * bump(1.2 * mapy(y));
    };
    const double h = 1e-4;
    auto Lu = [&](double x, double y) {
        auto f = u_f;
        const double uxx = (f(x + h, y) - 2 * f(x, y) + f(x - h, y)) / (h * h);
        const double uyy = (f(x, y + h) - 2 * f(x, y) + f(x, y - h)) / (h * h);
        const double uxy = (f(x + h, y + h) - f(x + h, y - h) -
                            f(x - h, y + h) + f(x - h, y - h)) /
                           (4 * h * h);
        const double ux = (f(x + h, y) - f(x - h, y)) / (2 * h);
        const double uy = (f(x, y + h) - f(x, y - h)) / (2 * h);
        const double drift_x = p.rho * p.kappa * p.theta / p.sigma - 0.5 * y;
        return 0.5 * y *
                   (uxx + 2 * p.rho * p.sigma * uxy +
                    p.sigma * p.sigma * uyy) +
               drift_x * ux + p.kappa * (p.theta - y) * uy;
    };

    double res[3];
    int idx = 0;
    for (int n : {17, 33, 65}) {
        auto g = fem::Grid::make(box, n, n);
        auto sys = fem::assemble(p, kW, g, 0.0);
        res[idx++] = fem::verify_ibp(sys, u_f, Lu, v_f);
    }
    // second-order consistency: each refinement divides the residual by
    // about 4; require at least 1.8 observed orders
    CHECK(res[0] > res[1]);
    CHECK(res[1] > res[2]);
    const double order1 = std::log2(res[0] / res[1]);
    const double order2 = std::log2(res[1] / res[2]);
    CHECK(order1 >= 1.8);
    CHECK(order2 >= 1.8);

    // boundary support is enforced
    auto g = fem::Grid::make(box, 17, 17);
    auto sys = fem::assemble(p, kW, g, 0.0);
    CHECK_THROWS_AS(
        fem::verify_ibp(
            sys, [](double, double) { return 1.0; }, Lu, v_f),
        ConfigError);
}

TEST_CASE("energy probes meet the constants with roundoff margin only") {
    const auto p = bench();
    auto g = small_grid(17);
    const auto ec = fem::energy_constants(p, kW);
    auto sys = fem::assemble(p, kW, g, ec.lambda_min);

    CHECK(fem::coercivity_probe(sys, 200, 11) >= ec.C2() - 1e-9);
    CHECK(fem::continuity_probe(sys, 200, 12) <= ec.C1() + 1e-9);
    CHECK(fem::garding_probe(sys, 200, 13) >= ec.C2() - 1e-9);

    // truncation: y -> min(y, M) in the convection part only; the same
    // constants hold uniformly in M
    for (double M : {0.05, 0.2, 0.5}) {
        auto tsys = fem::assemble(p, kW, g, ec.lambda_min, M);
        CHECK(fem::coercivity_probe(tsys, 100, 21) >= ec.C2() - 1e-9);
        CHECK(fem::continuity_probe(tsys, 100, 22) <= ec.C1() + 1e-9);
    }
    // M beyond y_max reproduces the untruncated operator exactly
    auto tfull = fem::assemble(p, kW, g, ec.lambda_min, 2.0);
    fem::SpMat d = tfull.convect - sys.convect;
    double worst = 0.0;
    for (int k = 0; k < d.outerSize(); ++k)
        for (fem::SpMat::InnerIterator it(d, k); it; ++it)
            worst = std::max(worst, std::abs(it.value()));
    CHECK(worst == 0.0);
}

TEST_CASE("coo export roundtrip") {
    const auto p = bench();
    auto g = small_grid(7);
    auto sys = fem::assemble(p, kW, g, 1.0);
    const std::string path = "/tmp/hestvi_test_coo.txt";
    fem::export_coo(sys.mass, path);
    std::ifstream in(path);
    REQUIRE(in.good());
    int r, c;
    double v;
    int count = 0;
    double sum = 0.0;
    while (in >> r >> c >> v) {
        CHECK(r >= 0);
        CHECK(r < g.size());
        CHECK(c >= 0);
        CHECK(c < g.size());
        sum += v;
        ++count;
    }
    CHECK(count == sys.mass.nonZeros());
    CHECK(sum == doctest::Approx(sys.mass.sum()).epsilon(1e-12));
    std::remove(path.c_str());
}
