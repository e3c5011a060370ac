#include "hestvi/mc.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <random>
#include <span>

#include <Eigen/Dense>

#include "json.hpp"

namespace hestvi::mc {

namespace {

void check_sim_args(const HestonParams& p, double y0, double T, int n_steps,
                    std::size_t n_paths) {
    p.validate();
    if (!(y0 >= 0.0)) throw ConfigError("simulation: y0 must be >= 0");
    if (!(T > 0.0)) throw ConfigError("simulation: horizon must be > 0");
    if (n_steps < 1) throw ConfigError("simulation: n_steps must be >= 1");
    if (n_paths < 1) throw ConfigError("simulation: n_paths must be >= 1");
}

// Advance one path over [0, T], reporting every node (k, x, y, int_y).
template <class OnNode>
void walk(const HestonParams& p, double x0, double y0, double T, int n_steps,
          VarianceScheme scheme, Philox& eng, OnNode&& on) {
    const double h = T / n_steps;
    const double kb = p.kappa_bar();
    const double rx = p.rho / p.sigma;
    const double ortho = 1.0 - p.rho * p.rho;
    std::normal_distribution<double> nd;
    double y = y0;
    double xt = x0 - rx * y0;
    double iy = 0.0;
    on(0, x0, y0, 0.0);
    for (int k = 0; k < n_steps; ++k) {
        const double y_prev = std::max(y, 0.0);
        if (scheme == VarianceScheme::exact) {
            y = cir_exact_step(p, y, h, eng);
        } else {
            const double yp = std::max(y, 0.0);
            y = y + p.kappa * (p.theta - yp) * h +
                p.sigma * std::sqrt(yp * h) * nd(eng);
        }
        const double yc = std::max(y, 0.0);
        const double I = 0.5 * h * (y_prev + yc);
        xt += kb * I + std::sqrt(ortho * I) * nd(eng);
        iy += I;
        on(k + 1, xt + rx * yc, yc, iy);
    }
}

template <class PerPath>
void over_paths(std::size_t n_paths, bool parallel, PerPath&& body) {
    const long n = static_cast<long>(n_paths);
    if (parallel) {
#pragma omp parallel for schedule(static)
        for (long q = 0; q < n; ++q) body(static_cast<std::size_t>(q));
    } else {
        for (long q = 0; q < n; ++q) body(static_cast<std::size_t>(q));
    }
}

PathBatch simulate_impl(const HestonParams& p, double x0, double y0, double T,
                        int n_steps, std::size_t n_paths, std::uint64_t seed,
                        VarianceScheme scheme, bool parallel) {
    check_sim_args(p, y0, T, n_steps, n_paths);
    PathBatch b;
    b.n_paths = n_paths;
    b.n_steps = n_steps;
    b.seed = seed;
    b.times.resize(n_steps + 1);
    for (int k = 0; k <= n_steps; ++k) b.times[k] = T * k / n_steps;
    const std::size_t total = n_paths * (n_steps + 1);
    b.x_paths.resize(total);
    b.y_paths.resize(total);
    b.int_y.resize(total);
    over_paths(n_paths, parallel, [&](std::size_t q) {
        Philox eng(seed, q);
        walk(p, x0, y0, T, n_steps, scheme, eng,
             [&](int k, double x, double y, double iy) {
                 const std::size_t at =
                     static_cast<std::size_t>(k) * n_paths + q;
                 b.x_paths[at] = x;
                 b.y_paths[at] = y;
                 b.int_y[at] = iy;
             });
    });
    return b;
}

nlohmann::ordered_json estimate_json_common(double se, std::size_t n,
                                            std::uint64_t seed) {
    nlohmann::ordered_json j;
    j["std_error"] = se;
    j["n_paths"] = n;
    j["seed"] = seed;
    return j;
}

}  // namespace

std::string McEstimate::to_json() const {
    nlohmann::ordered_json j;
    j["mean"] = mean;
    auto rest = estimate_json_common(std_error, n_paths, seed);
    j.update(rest);
    if (low_biased) j["low_biased"] = true;
    return j.dump();
}

std::string ComplexEstimate::to_json() const {
    nlohmann::ordered_json j;
    j["mean"] = {{"re", mean.real()}, {"im", mean.imag()}};
    j.update(estimate_json_common(std_error, n_paths, seed));
    return j.dump();
}

double cir_exact_step(const HestonParams& p, double y, double h, Philox& eng) {
    const double L =
        p.sigma * p.sigma * (-std::expm1(-p.kappa * h)) / (4.0 * p.kappa);
    const double mean_count = y * std::exp(-p.kappa * h) / (2.0 * L);
    long n = 0;
    if (mean_count > 0.0)
        n = std::poisson_distribution<long>(mean_count)(eng);
    std::gamma_distribution<double> g(p.beta() + static_cast<double>(n),
                                      2.0 * L);
    return g(eng);
}

std::vector<double> sample_cir_exact(const HestonParams& p, double t,
                                     double y0, std::uint64_t seed,
                                     std::size_t n) {
    p.validate();
    if (!(t > 0.0)) throw ConfigError("sample_cir_exact: t must be > 0");
    if (!(y0 >= 0.0)) throw ConfigError("sample_cir_exact: y0 must be >= 0");
    std::vector<double> out(n);
    over_paths(n, true, [&](std::size_t q) {
        Philox eng(seed, q);
        out[q] = cir_exact_step(p, y0, t, eng);
    });
    return out;
}

PathBatch simulate_paths(const HestonParams& p, double x0, double y0,
                         double T, int n_steps, std::size_t n_paths,
                         std::uint64_t seed, VarianceScheme scheme) {
    return simulate_impl(p, x0, y0, T, n_steps, n_paths, seed, scheme, true);
}

PathBatch simulate_paths_serial(const HestonParams& p, double x0, double y0,
                                double T, int n_steps, std::size_t n_paths,
                                std::uint64_t seed, VarianceScheme scheme) {
    return simulate_impl(p, x0, y0, T, n_steps, n_paths, seed, scheme, false);
}

TerminalBatch simulate_terminals(const HestonParams& p, double x0, double y0,
                                 double t, int n_steps, std::size_t n_paths,
                                 std::uint64_t seed, VarianceScheme scheme) {
    check_sim_args(p, y0, t, n_steps, n_paths);
    TerminalBatch b;
    b.n_paths = n_paths;
    b.n_steps = n_steps;
    b.t = t;
    b.seed = seed;
    b.x.resize(n_paths);
    b.y.resize(n_paths);
    b.int_y.resize(n_paths);
    over_paths(n_paths, true, [&](std::size_t q) {
        Philox eng(seed, q);
        walk(p, x0, y0, t, n_steps, scheme, eng,
             [&](int k, double x, double y, double iy) {
                 if (k == n_steps) {
                     b.x[q] = x;
                     b.y[q] = y;
                     b.int_y[q] = iy;
                 }
             });
    });
    return b;
}

McEstimate estimate_terminal(
    const TerminalBatch& batch,
    const std::function<double(double, double, double)>& g) {
    const std::size_t n = batch.n_paths;
    std::vector<double> vals(n);
    over_paths(n, true, [&](std::size_t q) {
        vals[q] = g(batch.x[q], batch.y[q], batch.int_y[q]);
    });
    const auto mv = pairwise_mean_var(std::span<const double>(vals));
    McEstimate est;
    est.mean = mv.mean;
    est.std_error = std::sqrt(mv.variance / static_cast<double>(n));
    est.n_paths = n;
    est.seed = batch.seed;
    return est;
}

ComplexEstimate killed_semigroup_estimate(
    const TerminalBatch& batch, double lambda,
    const std::function<cd(double, double)>& f) {
    if (!(lambda >= 0.0))
        throw ConfigError("killed_semigroup_estimate: lambda must be >= 0");
    const std::size_t n = batch.n_paths;
    std::vector<double> re(n), im(n);
    over_paths(n, true, [&](std::size_t q) {
        const cd v = std::exp(-lambda * (batch.t + batch.int_y[q])) *
                     f(batch.x[q], batch.y[q]);
        re[q] = v.real();
        im[q] = v.imag();
    });
    const auto mr = pairwise_mean_var(std::span<const double>(re));
    const auto mi = pairwise_mean_var(std::span<const double>(im));
    ComplexEstimate est;
    est.mean = cd(mr.mean, mi.mean);
    est.std_error =
        std::sqrt((mr.variance + mi.variance) / static_cast<double>(n));
    est.n_paths = n;
    est.seed = batch.seed;
    return est;
}

ComplexEstimate killed_semigroup_estimate(
    const HestonParams& p, const std::function<cd(double, double)>& f,
    double lambda, double t, double x0, double y0, std::size_t n_paths,
    int n_steps, std::uint64_t seed) {
    const TerminalBatch b =
        simulate_terminals(p, x0, y0, t, n_steps, n_paths, seed);
    return killed_semigroup_estimate(b, lambda, f);
}

namespace {

int basis_cols(int degree) { return (degree + 1) * (degree + 2) / 2; }

void basis_row(double s, double y, int degree, double payoff_val,
               Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row) {
    int c = 0;
    for (int total = 0; total <= degree; ++total)
        for (int i = 0; i <= total; ++i) row[c++] = std::pow(s, total - i) *
                                                    std::pow(y, i);
    row[c] = payoff_val;
}

}  // namespace

McEstimate ls_american_price(const PathBatch& b, const Payoff& payoff,
                             const HestonParams& p) {
    p.validate();
    if (b.n_paths < 32)
        throw ConfigError("ls_american_price: need at least 32 paths");
    if (b.n_steps < 1)
        throw ConfigError("ls_american_price: need at least 1 step");
    const std::size_t n = b.n_paths;
    const int M = b.n_steps;
    const double K = payoff.strike();

    std::vector<double> value(n);
    for (std::size_t q = 0; q < n; ++q)
        value[q] = payoff(b.times[M], b.x_at(M, q), b.y_at(M, q));

    int degree = 3;
    bool warned = false;
    std::vector<std::size_t> itm;
    for (int m = M - 1; m >= 1; --m) {
        const double t = b.times[m];
        itm.clear();
        for (std::size_t q = 0; q < n; ++q)
            if (payoff(t, b.x_at(m, q), b.y_at(m, q)) > 0.0) itm.push_back(q);
        if (itm.size() < 4 * static_cast<std::size_t>(basis_cols(degree) + 1))
            continue;

        Eigen::VectorXd coef;
        while (true) {
            const int cols = basis_cols(degree) + 1;
            Eigen::MatrixXd A(itm.size(), cols);
            Eigen::VectorXd rhs(itm.size());
            for (std::size_t r = 0; r < itm.size(); ++r) {
                const std::size_t q = itm[r];
                const double x = b.x_at(m, q), y = b.y_at(m, q);
                basis_row(std::exp(x) / K, y, degree, payoff(t, x, y),
                          A.row(r));
                rhs[r] = value[q];
            }
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
            if (qr.rank() == cols || degree == 0) {
                coef = qr.solve(rhs);
                break;
            }
            // Vanilla payoffs are affine in the spot on the in-the-money
            // set, so the payoff column is collinear with the polynomial
            // block by construction; pivoted least squares absorbs that.
            // Only a deficient polynomial block signals an unsupported
            // basis size and triggers degree reduction.
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_poly(
                A.leftCols(cols - 1));
            if (qr_poly.rank() == cols - 1) {
                coef = qr.solve(rhs);
                break;
            }
            --degree;
            if (!warned) {
                std::cerr << "ls_american_price: rank-deficient regression, "
                             "reducing basis degree to "
                          << degree << "\n";
                warned = true;
            }
        }

        const int cols = basis_cols(degree) + 1;
        Eigen::RowVectorXd row(cols);
        for (const std::size_t q : itm) {
            const double x = b.x_at(m, q), y = b.y_at(m, q);
            const double exercise = payoff(t, x, y);
            basis_row(std::exp(x) / K, y, degree, exercise, row);
            const double cont = row.dot(coef);
            if (exercise > cont) value[q] = exercise;
        }
    }

    const auto mv = pairwise_mean_var(std::span<const double>(value));
    McEstimate est;
    est.n_paths = n;
    est.seed = b.seed;
    est.low_biased = true;
    const double exercise0 = payoff(b.times[0], b.x_at(0, 0), b.y_at(0, 0));
    if (exercise0 >= mv.mean) {
        est.mean = exercise0;
        est.std_error = 0.0;
    } else {
        est.mean = mv.mean;
        est.std_error = std::sqrt(mv.variance / static_cast<double>(n));
    }
    return est;
}

std::vector<FlowPairReport> flow_continuity_probe(
    const HestonParams& p, const std::vector<FlowPair>& pairs, double t,
    int n_steps, std::size_t n_paths, std::uint64_t seed) {
    check_sim_args(p, 0.0, t, n_steps, n_paths);
    for (const auto& pr : pairs)
        if (!(pr.y >= 0.0) || !(pr.yp >= 0.0))
            throw ConfigError("flow_continuity_probe: variances must be >= 0");

    std::vector<FlowPairReport> reports;
    const double h = t / n_steps;
    const double L =
        p.sigma * p.sigma * (-std::expm1(-p.kappa * h)) / (4.0 * p.kappa);
    const double decay = std::exp(-p.kappa * h);
    const double beta = p.beta();
    const double kb = p.kappa_bar();
    const double rx = p.rho / p.sigma;
    const double ortho = 1.0 - p.rho * p.rho;

    for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
        const FlowPair& pr = pairs[pi];
        // order so that the "hi" path dominates in variance
        const bool swap = pr.yp > pr.y;
        const double x_hi = swap ? pr.xp : pr.x, y_hi = swap ? pr.yp : pr.y;
        const double x_lo = swap ? pr.x : pr.xp, y_lo = swap ? pr.y : pr.yp;

        std::vector<double> dy(n_paths), dx(n_paths);
        over_paths(n_paths, true, [&](std::size_t q) {
            Philox eng(seed + pi, q);
            std::normal_distribution<double> nd;
            std::exponential_distribution<double> ed;
            double yh = y_hi, yl = y_lo;
            double xh = x_hi - rx * y_hi, xl = x_lo - rx * y_lo;
            for (int k = 0; k < n_steps; ++k) {
                const double mh = yh * decay / (2.0 * L);
                const double ml = yl * decay / (2.0 * L);
                long nh = 0;
                if (mh > 0.0)
                    nh = std::poisson_distribution<long>(mh)(eng);
                // thin the shared event count for the dominated path
                long nl = 0;
                if (nh > 0 && ml > 0.0) {
                    const double keep = ml / mh;
                    for (long e = 0; e < nh; ++e)
                        if (eng.uniform() <= keep) ++nl;
                }
                const double g0 =
                    std::gamma_distribution<double>(beta, 1.0)(eng);
                double acc = g0, acc_lo = g0;
                for (long e = 1; e <= nh; ++e) {
                    const double inc = ed(eng);
                    acc += inc;
                    if (e <= nl) acc_lo += inc;
                }
                const double yh_prev = yh, yl_prev = yl;
                yh = 2.0 * L * acc;
                yl = 2.0 * L * acc_lo;
                const double Ih = 0.5 * h * (yh_prev + yh);
                const double Il = 0.5 * h * (yl_prev + yl);
                const double z = nd(eng);
                xh += kb * Ih + std::sqrt(ortho * Ih) * z;
                xl += kb * Il + std::sqrt(ortho * Il) * z;
            }
            dy[q] = std::abs(yh - yl);
            dx[q] = std::abs((xh + rx * yh) - (xl + rx * yl));
        });
        const auto my = pairwise_mean_var(std::span<const double>(dy));
        const auto mx = pairwise_mean_var(std::span<const double>(dx));
        FlowPairReport rep;
        rep.pair = pr;
        rep.mean_abs_dy = my.mean;
        rep.se_dy = std::sqrt(my.variance / static_cast<double>(n_paths));
        rep.bound_dy = std::abs(pr.yp - pr.y);
        rep.mean_abs_dx = mx.mean;
        rep.se_dx = std::sqrt(mx.variance / static_cast<double>(n_paths));
        rep.bound_dx = std::abs(pr.xp - pr.x) +
                       0.5 * t * std::abs(pr.yp - pr.y) +
                       std::sqrt(t * std::abs(pr.yp - pr.y));
        reports.push_back(rep);
    }
    return reports;
}

}  // namespace hestvi::mc
