#include "hestvi/fem.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

#include "hestvi/common.hpp"
#include "hestvi/quadrature.hpp"
#include "hestvi/rng.hpp"

namespace hestvi::fem {

Grid Grid::make(const Box& box, int n_x, int n_y, double grading) {
    if (n_x < 3 || n_y < 3) throw ConfigError("grid: need at least 3 nodes per direction");
    if (!(box.x_max > box.x_min) || !(box.y_max > 0.0))
        throw ConfigError("grid: empty box");
    if (!(grading >= 1.0)) throw ConfigError("grid: grading must be >= 1");
    Grid g;
    g.n_x = n_x;
    g.n_y = n_y;
    g.grading = grading;
    g.box = box;
    g.x.resize(n_x);
    g.y.resize(n_y);
    for (int i = 0; i < n_x; ++i)
        g.x[i] = box.x_min + (box.x_max - box.x_min) * i / (n_x - 1.0);
    for (int j = 0; j < n_y; ++j)
        g.y[j] = box.y_max * std::pow(j / (n_y - 1.0), grading);
    g.y[0] = 0.0;
    return g;
}

double Grid::interpolate(const Vec& u, double xc, double yc) const {
    auto locate = [](const std::vector<double>& v, double c) {
        auto it = std::upper_bound(v.begin(), v.end(), c);
        int i = static_cast<int>(it - v.begin()) - 1;
        return std::clamp(i, 0, static_cast<int>(v.size()) - 2);
    };
    const int i = locate(x, xc), j = locate(y, yc);
    const double tx = std::clamp((xc - x[i]) / (x[i + 1] - x[i]), 0.0, 1.0);
    const double ty = std::clamp((yc - y[j]) / (y[j + 1] - y[j]), 0.0, 1.0);
    return (1 - tx) * (1 - ty) * u[index(i, j)] +
           tx * (1 - ty) * u[index(i + 1, j)] +
           (1 - tx) * ty * u[index(i, j + 1)] +
           tx * ty * u[index(i + 1, j + 1)];
}

EnergyConstants energy_constants(const HestonParams& p,
                                 const MeasureWeights& w) {
    p.validate();
    w.validate();
    EnergyConstants ec;
    // eigenvalues of Q = [[1, rho sigma],[rho sigma, sigma^2]]
    const double q = p.rho * p.sigma, s2 = p.sigma * p.sigma;
    const double tr = 1.0 + s2, det = s2 - q * q;
    const double disc = std::sqrt(std::max(tr * tr - 4.0 * det, 0.0));
    ec.delta1 = 0.25 * (tr - disc);
    ec.delta0 = 0.25 * (tr + disc);
    const auto cp = operator_coefficients(p, w, 1.0);
    const auto cm = operator_coefficients(p, w, -1.0);
    ec.K1 = std::sqrt(std::max(cp.j * cp.j + cp.k * cp.k,
                               cm.j * cm.j + cm.k * cm.k));
    ec.lambda_min = 0.5 * ec.delta1 + ec.K1 * ec.K1 / (2.0 * ec.delta1);
    return ec;
}

namespace {

using M2 = std::array<std::array<double, 2>, 2>;

struct CellBlocks {
    // x direction, Gauss per smooth piece (split at the weight kink x = 0)
    M2 x00{}, xd0{}, x11{}, xj{}, xk{};
    // y direction, exact against the weight via incomplete-gamma moments
    M2 y0{}, y1{}, yd1{}, ydd{}, yt{}, ytd{};
};

// quadratic coefficients of N_a * N_b for local linears on [ya, yb]
std::array<double, 3> pair_poly(const std::array<double, 2>& ca,
                                const std::array<double, 2>& cb) {
    return {ca[0] * cb[0], ca[0] * cb[1] + ca[1] * cb[0], ca[1] * cb[1]};
}

CellBlocks cell_blocks(const HestonParams& p, const MeasureWeights& w,
                       const Grid& g, int ci, int cj,
                       const std::optional<double>& M) {
    CellBlocks b;
    const double xa = g.x[ci], xb = g.x[ci + 1], hx = xb - xa;
    const double ya = g.y[cj], yb = g.y[cj + 1], hy = yb - ya;

    // ---- x blocks -------------------------------------------------------
    const GaussRule& gr = gauss_legendre(8);
    auto x_piece = [&](double lo, double hi) {
        const double c = 0.5 * (lo + hi), h = 0.5 * (hi - lo);
        for (std::size_t q = 0; q < gr.x.size(); ++q) {
            const double x = c + h * gr.x[q];
            const double wt = gr.w[q] * h * std::exp(-w.gamma * std::abs(x));
            const double v[2] = {(xb - x) / hx, (x - xa) / hx};
            const double d[2] = {-1.0 / hx, 1.0 / hx};
            const auto co = operator_coefficients(p, w, x);
            for (int a = 0; a < 2; ++a)
                for (int r = 0; r < 2; ++r) {
                    b.x00[a][r] += wt * v[a] * v[r];
                    b.xd0[a][r] += wt * d[a] * v[r];
                    b.x11[a][r] += wt * d[a] * d[r];
                    b.xj[a][r] += wt * co.j * d[a] * v[r];
                    b.xk[a][r] += wt * co.k * v[a] * v[r];
                }
        }
    };
    if (xa < 0.0 && xb > 0.0) {
        x_piece(xa, 0.0);
        x_piece(0.0, xb);
    } else {
        x_piece(xa, xb);
    }

    // ---- y blocks -------------------------------------------------------
    const double beta = p.beta();
    const auto mom = y_cell_moments(beta, w.mu, ya, yb, 4);
    const std::array<double, 2> cl{yb / hy, -1.0 / hy};
    const std::array<double, 2> cr{-ya / hy, 1.0 / hy};
    const std::array<std::array<double, 2>, 2> cc{cl, cr};
    const double dv[2] = {-1.0 / hy, 1.0 / hy};
    for (int a = 0; a < 2; ++a)
        for (int s = 0; s < 2; ++s) {
            const auto pp = pair_poly(cc[a], cc[s]);
            double m0 = 0.0, m1 = 0.0;
            for (int k = 0; k < 3; ++k) {
                m0 += pp[k] * mom[k];
                m1 += pp[k] * mom[k + 1];
            }
            b.y0[a][s] = m0;
            b.y1[a][s] = m1;
            double lin1 = 0.0;  // int N_s y^{beta} e^{-mu y} dy
            for (int k = 0; k < 2; ++k) lin1 += cc[s][k] * mom[k + 1];
            b.yd1[a][s] = dv[a] * lin1;
            b.ydd[a][s] = dv[a] * dv[s] * mom[1];
        }
    // truncated weight min(y, M) for the convection part
    if (!M || *M >= yb) {
        b.yt = b.y1;
        b.ytd = b.yd1;
    } else if (*M <= ya) {
        for (int a = 0; a < 2; ++a)
            for (int s = 0; s < 2; ++s) {
                b.yt[a][s] = *M * b.y0[a][s];
                double lin0 = 0.0;
                for (int k = 0; k < 2; ++k) lin0 += cc[s][k] * mom[k];
                b.ytd[a][s] = *M * dv[a] * lin0;
            }
    } else {
        const auto mlo = y_cell_moments(beta, w.mu, ya, *M, 4);
        const auto mhi = y_cell_moments(beta, w.mu, *M, yb, 4);
        for (int a = 0; a < 2; ++a)
            for (int s = 0; s < 2; ++s) {
                const auto pp = pair_poly(cc[a], cc[s]);
                double v = 0.0;
                for (int k = 0; k < 3; ++k)
                    v += pp[k] * (mlo[k + 1] + *M * mhi[k]);
                b.yt[a][s] = v;
                double lin = 0.0;
                for (int k = 0; k < 2; ++k)
                    lin += cc[s][k] * (mlo[k + 1] + *M * mhi[k]);
                b.ytd[a][s] = dv[a] * lin;
            }
    }
    return b;
}

DiscreteSystem assemble_impl(const HestonParams& p, const MeasureWeights& w,
                             const Grid& g, double lambda,
                             const std::optional<double>& M, bool parallel) {
    p.validate();
    w.validate();
    if (M && !(*M > 0.0)) throw ConfigError("truncation_M must be > 0");
    DiscreteSystem sys;
    sys.grid = g;
    sys.params = p;
    sys.weights = w;
    sys.lambda = lambda;
    sys.truncation_M = M;

    const int ncx = g.n_x - 1, ncy = g.n_y - 1, ncell = ncx * ncy;
    std::vector<CellBlocks> blocks(ncell);
    if (parallel) {
#pragma omp parallel for schedule(static)
        for (int c = 0; c < ncell; ++c)
            blocks[c] = cell_blocks(p, w, g, c % ncx, c / ncx, M);
    } else {
        for (int c = 0; c < ncell; ++c)
            blocks[c] = cell_blocks(p, w, g, c % ncx, c / ncx, M);
    }

    // Fixed-order accumulation: triplets are emitted cell by cell in a
    // single pass, so the assembled entries do not depend on thread count.
    const double rs = p.rho * p.sigma, s2 = p.sigma * p.sigma;
    using T = Eigen::Triplet<double>;
    std::vector<T> tm, tmw, ts, tc, tg;
    const std::size_t reserve = static_cast<std::size_t>(ncell) * 16;
    tm.reserve(reserve);
    tmw.reserve(reserve);
    ts.reserve(reserve);
    tc.reserve(reserve);
    tg.reserve(reserve);
    for (int c = 0; c < ncell; ++c) {
        const int ci = c % ncx, cj = c / ncx;
        const CellBlocks& b = blocks[c];
        const int nodes[2][2] = {
            {g.index(ci, cj), g.index(ci + 1, cj)},
            {g.index(ci, cj + 1), g.index(ci + 1, cj + 1)}};
        for (int qa = 0; qa < 2; ++qa)
            for (int pa = 0; pa < 2; ++pa)
                for (int qb = 0; qb < 2; ++qb)
                    for (int pb = 0; pb < 2; ++pb) {
                        const int row = nodes[qa][pa], col = nodes[qb][pb];
                        const double mass = b.x00[pb][pa] * b.y0[qb][qa];
                        const double massw =
                            b.x00[pb][pa] * (b.y0[qb][qa] + b.y1[qb][qa]);
                        const double stiff =
                            0.5 * (b.x11[pb][pa] * b.y1[qb][qa] +
                                   rs * (b.xd0[pb][pa] * b.yd1[qa][qb] +
                                         b.xd0[pa][pb] * b.yd1[qb][qa]) +
                                   s2 * b.x00[pb][pa] * b.ydd[qb][qa]);
                        const double conv = b.xj[pb][pa] * b.yt[qb][qa] +
                                            b.xk[pb][pa] * b.ytd[qb][qa];
                        const double grad = b.x11[pb][pa] * b.y1[qb][qa] +
                                            b.x00[pb][pa] * b.ydd[qb][qa];
                        tm.emplace_back(row, col, mass);
                        tmw.emplace_back(row, col, massw);
                        ts.emplace_back(row, col, stiff);
                        tc.emplace_back(row, col, conv);
                        tg.emplace_back(row, col, grad);
                    }
    }
    const int n = g.size();
    auto build = [n](std::vector<T>& t) {
        SpMat m(n, n);
        m.setFromTriplets(t.begin(), t.end());
        m.makeCompressed();
        return m;
    };
    sys.mass = build(tm);
    sys.mass_weighted = build(tmw);
    sys.stiff_sym = build(ts);
    sys.convect = build(tc);
    sys.grad_v = build(tg);
    return sys;
}

}  // namespace

DiscreteSystem assemble(const HestonParams& p, const MeasureWeights& w,
                        const Grid& g, double lambda,
                        std::optional<double> M) {
    return assemble_impl(p, w, g, lambda, M, true);
}

DiscreteSystem assemble_serial(const HestonParams& p, const MeasureWeights& w,
                               const Grid& g, double lambda,
                               std::optional<double> M) {
    return assemble_impl(p, w, g, lambda, M, false);
}

SpMat DiscreteSystem::a_lambda() const {
    return SpMat(stiff_sym + convect + lambda * mass_weighted);
}

SpMat DiscreteSystem::a_unshifted() const {
    return SpMat(stiff_sym + convect);
}

Vec DiscreteSystem::lumped_mass() const {
    Vec ones = Vec::Ones(mass.rows());
    return mass * ones;
}

Norms weighted_norms(const DiscreteSystem& sys, const Vec& u) {
    Norms n;
    n.h = std::sqrt(std::max(0.0, u.dot(sys.mass * u)));
    n.v = std::sqrt(
        std::max(0.0, u.dot(sys.grad_v * u) + u.dot(sys.mass_weighted * u)));
    return n;
}

double integrate_box(const HestonParams& p, const MeasureWeights& w,
                     const Grid& g,
                     const std::function<double(double, double)>& f) {
    const double beta = p.beta();
    double total = 0.0;
    std::vector<double> cell_vals;
    cell_vals.reserve(static_cast<std::size_t>(g.n_x - 1) * (g.n_y - 1));
    for (int cj = 0; cj < g.n_y - 1; ++cj)
        for (int ci = 0; ci < g.n_x - 1; ++ci) {
            const double xa = g.x[ci], xb = g.x[ci + 1];
            auto gy = [&](double y) {
                return integrate_x_cell(
                    w.gamma, xa, xb, [&](double x) { return f(x, y); }, 16);
            };
            cell_vals.push_back(
                integrate_y_cell(beta, w.mu, g.y[cj], g.y[cj + 1], gy, 12));
        }
    total = pairwise_sum(std::span<const double>(cell_vals));
    return total;
}

double verify_ibp(const DiscreteSystem& sys,
                  const std::function<double(double, double)>& u,
                  const std::function<double(double, double)>& Lu,
                  const std::function<double(double, double)>& v) {
    const Grid& g = sys.grid;
    for (int j = 0; j < g.n_y; ++j)
        for (int i = 0; i < g.n_x; ++i) {
            if (i == 0 || i == g.n_x - 1 || j == 0 || j == g.n_y - 1) {
                if (std::abs(u(g.x[i], g.y[j])) > 0.0 ||
                    std::abs(v(g.x[i], g.y[j])) > 0.0)
                    throw ConfigError(
                        "verify_ibp: u and v must vanish on the boundary "
                        "(compact support inside the box required)");
            }
        }
    Vec uh(g.size()), vh(g.size());
    for (int j = 0; j < g.n_y; ++j)
        for (int i = 0; i < g.n_x; ++i) {
            uh[g.index(i, j)] = u(g.x[i], g.y[j]);
            vh[g.index(i, j)] = v(g.x[i], g.y[j]);
        }
    const double lhs = integrate_box(
        sys.params, sys.weights, g,
        [&](double x, double y) { return Lu(x, y) * v(x, y); });
    const double rhs = vh.dot(sys.a_unshifted() * uh);
    return std::abs(lhs + rhs);
}

namespace {

Vec gaussian_vector(int n, Philox& eng) {
    std::normal_distribution<double> nd;
    Vec u(n);
    for (int i = 0; i < n; ++i) u[i] = nd(eng);
    return u;
}

}  // namespace

double coercivity_probe(const DiscreteSystem& sys, int n_trials,
                        std::uint64_t seed) {
    const SpMat al = sys.a_lambda();
    double worst = std::numeric_limits<double>::infinity();
    for (int t = 0; t < n_trials; ++t) {
        Philox eng(seed, static_cast<std::uint64_t>(t));
        Vec u = gaussian_vector(sys.grid.size(), eng);
        const double den =
            u.dot(sys.grad_v * u) + u.dot(sys.mass_weighted * u);
        worst = std::min(worst, u.dot(al * u) / den);
    }
    return worst;
}

double continuity_probe(const DiscreteSystem& sys, int n_trials,
                        std::uint64_t seed) {
    const SpMat al = sys.a_lambda();
    double worst = 0.0;
    for (int t = 0; t < n_trials; ++t) {
        Philox eu(seed, 2 * static_cast<std::uint64_t>(t));
        Philox ev(seed, 2 * static_cast<std::uint64_t>(t) + 1);
        Vec u = gaussian_vector(sys.grid.size(), eu);
        Vec v = gaussian_vector(sys.grid.size(), ev);
        const auto nu = weighted_norms(sys, u), nv = weighted_norms(sys, v);
        worst = std::max(worst, std::abs(v.dot(al * u)) / (nu.v * nv.v));
    }
    return worst;
}

double garding_probe(const DiscreteSystem& sys, int n_trials,
                     std::uint64_t seed) {
    const SpMat a = sys.a_unshifted();
    const EnergyConstants ec = energy_constants(sys.params, sys.weights);
    double worst = std::numeric_limits<double>::infinity();
    for (int t = 0; t < n_trials; ++t) {
        Philox eng(seed ^ 0x5bd1e995u, static_cast<std::uint64_t>(t));
        Vec u = gaussian_vector(sys.grid.size(), eng);
        const double den =
            u.dot(sys.grad_v * u) + u.dot(sys.mass_weighted * u);
        const double val =
            u.dot(a * u) + ec.C3() * u.dot(sys.mass_weighted * u);
        worst = std::min(worst, val / den);
    }
    return worst;
}

void export_coo(const SpMat& m, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw SolveError("export_coo: cannot open " + path);
    for (int k = 0; k < m.outerSize(); ++k)
        for (SpMat::InnerIterator it(m, k); it; ++it)
            std::fprintf(f, "%d %d %.17g\n", static_cast<int>(it.row()),
                         static_cast<int>(it.col()), it.value());
    std::fclose(f);
}

}  // namespace hestvi::fem
