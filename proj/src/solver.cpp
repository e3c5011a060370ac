#include "hestvi/solver.hpp"

#include "hestvi/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

#include <Eigen/SparseLU>

namespace hestvi::solver {

void SolveConfig::validate() const {
    if (!(maturity > 0.0)) throw ConfigError("solve: maturity must be > 0");
    if (n_t < 1) throw ConfigError("solve: n_t must be >= 1");
    if (epsilon < 0.0) throw ConfigError("solve: epsilon must be > 0 (or 0 for auto)");
    if (!(newton_tol > 0.0)) throw ConfigError("solve: newton_tol must be > 0");
    if (newton_max_iter < 1) throw ConfigError("solve: newton_max_iter must be >= 1");
    if (picard_max_iter < 1) throw ConfigError("solve: picard_max_iter must be >= 1");
    if (exercise_tol < 0.0) throw ConfigError("solve: exercise_tol must be >= 0");
    if (picard_tol < 0.0) throw ConfigError("solve: picard_tol must be >= 0");
}

double PriceSurface::value_at(double t, double x, double y) const {
    if (times.empty()) throw ConfigError("value_at: empty surface");
    const double tc = std::clamp(t, times.front(), times.back());
    auto it = std::upper_bound(times.begin(), times.end(), tc);
    std::size_t k = static_cast<std::size_t>(it - times.begin());
    if (k == 0) k = 1;
    if (k >= times.size()) k = times.size() - 1;
    const double t0 = times[k - 1], t1 = times[k];
    const double v0 = grid.interpolate(values[k - 1], x, y);
    const double v1 = grid.interpolate(values[k], x, y);
    const double w = t1 > t0 ? (tc - t0) / (t1 - t0) : 0.0;
    return (1.0 - w) * v0 + w * v1;
}

Vec penalty_term(const Vec& psi, const Vec& u, double epsilon) {
    if (!(epsilon > 0.0)) throw ConfigError("penalty_term: epsilon must be > 0");
    return -(psi - u).cwiseMax(0.0) / epsilon;
}

namespace {

double strike_scale(const Payoff& payoff) {
    return std::max(payoff.strike(), 1.0);
}

// Backward stepper for one march: semismooth Newton on
//   Md (u - u_next)/dt + theta A u + (1-theta) A u_next
//     - (1/eps) Mp (psi - u)_+ - g = 0
// with Dirichlet rows u = psi.  Factorizations are cached while the
// (dt, theta, active set) triple is unchanged; linear (European) marches
// therefore factorize once per scheme segment.
class Marcher {
  public:
    Marcher(const fem::DiscreteSystem& sys, const SpMat& A,
            const Payoff& payoff, bool penalty_on, bool lumped,
            double epsilon, double newton_tol, int newton_max_iter,
            std::function<Vec(double)> source)
        : sys_(sys),
          A_(A),
          payoff_(payoff),
          penalty_on_(penalty_on),
          lumped_(lumped),
          eps_(epsilon),
          newton_tol_(newton_tol),
          newton_max_iter_(newton_max_iter),
          source_(std::move(source)) {
        const fem::Grid& g = sys_.grid;
        n_ = g.size();
        dir_.assign(n_, 0);
        for (int j = 0; j < g.n_y; ++j)
            for (int i = 0; i < g.n_x; ++i)
                if (g.is_dirichlet(i, j)) dir_[g.index(i, j)] = 1;
        if (lumped_) ml_ = sys_.lumped_mass();
    }

    Vec nodal_psi(double t) const {
        const fem::Grid& g = sys_.grid;
        Vec v(n_);
        for (int j = 0; j < g.n_y; ++j)
            for (int i = 0; i < g.n_x; ++i)
                v[g.index(i, j)] = payoff_(t, g.x[i], g.y[j]);
        return v;
    }

    std::vector<Vec> run(int n_t, double T, TimeScheme scheme) {
        std::vector<Vec> vals(n_t + 1);
        vals[n_t] = nodal_psi(T);
        const double dt = T / n_t;
        for (int k = n_t - 1; k >= 0; --k) {
            const double t_next = T * (k + 1) / n_t;
            if (scheme == TimeScheme::crank_nicolson_rannacher &&
                k >= n_t - 2) {
                // Rannacher startup: implicit half-steps absorb the payoff
                // kink before trapezoidal steps take over
                Vec mid = step(vals[k + 1], t_next, 0.5 * dt, 1.0);
                vals[k] = step(mid, t_next - 0.5 * dt, 0.5 * dt, 1.0);
            } else if (scheme == TimeScheme::crank_nicolson_rannacher) {
                vals[k] = step(vals[k + 1], t_next, dt, 0.5);
            } else {
                vals[k] = step(vals[k + 1], t_next, dt, 1.0);
            }
        }
        return vals;
    }

    Vec step(const Vec& u_next, double t_next, double dt, double theta) {
        const double t_now = t_next - dt;
        const Vec psi_now = nodal_psi(t_now);
        const Vec a_unext = A_ * u_next;
        const Vec md_unext = apply_m(u_next);
        Vec g_mix;
        if (source_)
            g_mix = theta * source_(t_now) + (1.0 - theta) * source_(t_next);

        Vec u = u_next;
        for (int i = 0; i < n_; ++i)
            if (dir_[i]) u[i] = psi_now[i];

        double last_update = 0.0;
        for (int iter = 1; iter <= newton_max_iter_; ++iter) {
            Vec F = (apply_m(u) - md_unext) / dt + theta * (A_ * u) +
                    (1.0 - theta) * a_unext;
            if (penalty_on_)
                F -= apply_m((psi_now - u).cwiseMax(0.0)) / eps_;
            if (source_) F -= g_mix;
            for (int i = 0; i < n_; ++i)
                if (dir_[i]) F[i] = u[i] - psi_now[i];
            if (!F.allFinite())
                throw SolveError("solve step: non-finite residual");

            if (penalty_on_) {
                act_.assign(n_, 0);
                for (int i = 0; i < n_; ++i)
                    if (!dir_[i] && psi_now[i] > u[i]) act_[i] = 1;
            } else {
                act_.clear();
            }
            ensure_factorized(dt, theta);
            const Vec du = lu_.solve(-F);
            u += du;
            last_update = du.lpNorm<Eigen::Infinity>();
            if (!u.allFinite())
                throw SolveError("solve step: non-finite iterate");
            if (last_update <= newton_tol_) return u;
            if (!penalty_on_) return u;  // linear step, one solve is exact
        }
        std::ostringstream os;
        os << "solve step at t = " << t_now << " did not converge: "
           << newton_max_iter_ << " iterations, last update " << last_update
           << " > tol " << newton_tol_;
        throw SolveError(os.str());
    }

  private:
    Vec apply_m(const Vec& v) const {
        return lumped_ ? Vec(ml_.cwiseProduct(v)) : Vec(sys_.mass * v);
    }

    void ensure_factorized(double dt, double theta) {
        if (have_factor_ && dt == cached_dt_ && theta == cached_theta_ &&
            act_ == cached_act_)
            return;
        if (!(have_base_ && dt == cached_dt_ && theta == cached_theta_))
            build_base(dt, theta);
        trips_ = base_trips_;
        if (penalty_on_) {
            if (lumped_) {
                for (int i = 0; i < n_; ++i)
                    if (!dir_[i])
                        trips_.emplace_back(i, i,
                                            act_[i] ? ml_[i] / eps_ : 0.0);
            } else {
                for (int k = 0; k < sys_.mass.outerSize(); ++k)
                    for (SpMat::InnerIterator it(sys_.mass, k); it; ++it) {
                        const int r = static_cast<int>(it.row());
                        const int c = static_cast<int>(it.col());
                        if (!dir_[r])
                            trips_.emplace_back(
                                r, c, act_[c] ? it.value() / eps_ : 0.0);
                    }
            }
        }
        SpMat J(n_, n_);
        J.setFromTriplets(trips_.begin(), trips_.end());
        J.makeCompressed();
        if (!analyzed_) {
            lu_.analyzePattern(J);
            analyzed_ = true;
        }
        lu_.factorize(J);
        if (lu_.info() != Eigen::Success)
            throw SolveError("solve step: sparse factorization failed");
        have_factor_ = true;
        cached_act_ = act_;
    }

    void build_base(double dt, double theta) {
        base_trips_.clear();
        for (int k = 0; k < A_.outerSize(); ++k)
            for (SpMat::InnerIterator it(A_, k); it; ++it)
                if (!dir_[it.row()])
                    base_trips_.emplace_back(static_cast<int>(it.row()),
                                             static_cast<int>(it.col()),
                                             theta * it.value());
        if (lumped_) {
            for (int i = 0; i < n_; ++i)
                if (!dir_[i]) base_trips_.emplace_back(i, i, ml_[i] / dt);
        } else {
            for (int k = 0; k < sys_.mass.outerSize(); ++k)
                for (SpMat::InnerIterator it(sys_.mass, k); it; ++it)
                    if (!dir_[it.row()])
                        base_trips_.emplace_back(static_cast<int>(it.row()),
                                                 static_cast<int>(it.col()),
                                                 it.value() / dt);
        }
        for (int i = 0; i < n_; ++i)
            if (dir_[i]) base_trips_.emplace_back(i, i, 1.0);
        cached_dt_ = dt;
        cached_theta_ = theta;
        have_base_ = true;
        have_factor_ = false;
    }

    const fem::DiscreteSystem& sys_;
    const SpMat& A_;
    const Payoff& payoff_;
    bool penalty_on_;
    bool lumped_;
    double eps_;
    double newton_tol_;
    int newton_max_iter_;
    std::function<Vec(double)> source_;

    int n_ = 0;
    std::vector<char> dir_;
    Vec ml_;
    std::vector<char> act_, cached_act_;
    std::vector<Eigen::Triplet<double>> base_trips_, trips_;
    bool have_base_ = false, have_factor_ = false, analyzed_ = false;
    double cached_dt_ = -1.0, cached_theta_ = -1.0;
    Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu_;
};

struct Resolved {
    double epsilon;
    double lambda;
    double exercise_tol;
    double picard_tol;
};

Resolved resolve_defaults(const HestonParams& p, const MeasureWeights& w,
                          const Payoff& payoff, const SolveConfig& cfg) {
    Resolved r;
    const double scale = strike_scale(payoff);
    r.epsilon = cfg.epsilon > 0.0 ? cfg.epsilon : 1e-6 * scale;
    const auto ec = fem::energy_constants(p, w);
    r.lambda = cfg.lambda < 0.0 ? ec.lambda_min : cfg.lambda;
    if (r.lambda < ec.lambda_min * (1.0 - 1e-12))
        throw ConfigError("solve: lambda below the coercivity threshold");
    r.exercise_tol =
        cfg.exercise_tol > 0.0 ? cfg.exercise_tol : 1e-7 * scale;
    r.picard_tol = cfg.picard_tol > 0.0 ? cfg.picard_tol : 1e-8 * scale;
    return r;
}

void precheck(const HestonParams& p, const MeasureWeights& w,
              const Payoff& payoff, const fem::Grid& grid,
              const SolveConfig& cfg) {
    cfg.validate();
    const AssumptionReport rep =
        check_assumptions(p, w, payoff, grid.box, cfg.maturity);
    if (!rep.ok()) {
        std::string msg = "solve: payoff/weight assumptions violated:";
        for (const auto& v : rep.violations) msg += " [" + v + "]";
        throw ConfigError(msg);
    }
}

PriceSurface make_surface(const fem::Grid& grid, double T, int n_t,
                          std::vector<Vec> vals, const Payoff& payoff,
                          double exercise_tol) {
    PriceSurface s;
    s.grid = grid;
    s.times.resize(n_t + 1);
    for (int k = 0; k <= n_t; ++k) s.times[k] = T * k / n_t;
    s.values = std::move(vals);
    s.exercise_tol = exercise_tol;
    s.exercise_mask.resize(n_t + 1);
    for (int k = 0; k <= n_t; ++k) {
        s.exercise_mask[k].assign(grid.size(), 0);
        for (int j = 0; j < grid.n_y; ++j)
            for (int i = 0; i < grid.n_x; ++i) {
                const int idx = grid.index(i, j);
                const double psi = payoff(s.times[k], grid.x[i], grid.y[j]);
                if (s.values[k][idx] <= psi + exercise_tol)
                    s.exercise_mask[k][idx] = 1;
            }
    }
    return s;
}

}  // namespace

PriceSurface solve_vi(const HestonParams& p, const MeasureWeights& w,
                      const Payoff& payoff, const Grid& grid,
                      const SolveConfig& cfg) {
    if (cfg.outer_mode == OuterMode::picard_lambda)
        return picard_lambda_iterate(p, w, payoff, grid, cfg);
    precheck(p, w, payoff, grid, cfg);
    const Resolved r = resolve_defaults(p, w, payoff, cfg);
    const fem::DiscreteSystem sys = fem::assemble(p, w, grid, r.lambda);
    // With the implicit source g = lambda (1+y) u^n the shift terms cancel
    // exactly, leaving the unshifted operator.
    const SpMat A = sys.a_unshifted();
    Marcher m(sys, A, payoff, /*penalty_on=*/!cfg.european,
              cfg.lumped_mass, r.epsilon, cfg.newton_tol,
              cfg.newton_max_iter, nullptr);
    auto vals = m.run(cfg.n_t, cfg.maturity, cfg.scheme);
    return make_surface(grid, cfg.maturity, cfg.n_t, std::move(vals), payoff,
                        r.exercise_tol);
}

PriceSurface picard_lambda_iterate(const HestonParams& p,
                                   const MeasureWeights& w,
                                   const Payoff& payoff, const Grid& grid,
                                   const SolveConfig& cfg) {
    precheck(p, w, payoff, grid, cfg);
    const Resolved r = resolve_defaults(p, w, payoff, cfg);
    const fem::DiscreteSystem sys = fem::assemble(p, w, grid, r.lambda);
    // In lumped mode the shift lambda (1+y) must be lumped as well: the
    // consistent weighted mass carries positive off-diagonal entries scaled
    // by lambda, which wreck the comparison structure the monotone chain
    // relies on.  The source below uses the same matrix, so the fixed point
    // is unchanged.
    const Vec wlump = sys.mass_weighted * Vec::Ones(grid.size());
    const SpMat A = cfg.lumped_mass
                        ? SpMat(sys.a_unshifted() +
                                SpMat(Vec(r.lambda * wlump).asDiagonal()))
                        : sys.a_lambda();
    const double T = cfg.maturity;
    const int n_t = cfg.n_t;
    // absolute tolerances are stated per unit of box measure
    const double h_scale = std::sqrt(std::max(wlump.sum(), 1e-300));

    const DominatingFunction phi =
        DominatingFunction::fit(payoff, p, grid.box, T);
    std::vector<Vec> prev(n_t + 1);
    for (int k = 0; k <= n_t; ++k) {
        const double t = T * k / n_t;
        prev[k].resize(grid.size());
        for (int j = 0; j < grid.n_y; ++j)
            for (int i = 0; i < grid.n_x; ++i)
                prev[k][grid.index(i, j)] = phi(t, grid.x[i], grid.y[j]);
    }

    // interpolate the previous outer iterate in time, then weight by
    // lambda (1+y) through the weighted mass matrix
    auto source_from = [&](const std::vector<Vec>& surf) {
        return [&surf, &sys, &wlump, lump = cfg.lumped_mass, T, n_t,
                lambda = r.lambda](double t) -> Vec {
            const double s = std::clamp(t / T * n_t, 0.0, double(n_t));
            const int k0 = std::min(static_cast<int>(s), n_t - 1);
            const double f = s - k0;
            const Vec u = (1.0 - f) * surf[k0] + f * surf[k0 + 1];
            if (lump) return Vec(lambda * wlump.cwiseProduct(u));
            return Vec(lambda * (sys.mass_weighted * u));
        };
    };

    int iterations = 0;
    double max_increase = 0.0;
    double diff_last = std::numeric_limits<double>::infinity();
    for (int outer = 1; outer <= cfg.picard_max_iter; ++outer) {
        Marcher m(sys, A, payoff, /*penalty_on=*/!cfg.european,
                  cfg.lumped_mass, r.epsilon, cfg.newton_tol,
                  cfg.newton_max_iter, source_from(prev));
        auto cur = m.run(n_t, T, cfg.scheme);
        double diff_h = 0.0, inc = -std::numeric_limits<double>::infinity();
        for (int k = 0; k <= n_t; ++k) {
            const Vec d = cur[k] - prev[k];
            diff_h = std::max(
                diff_h,
                std::sqrt(std::max(0.0, d.dot(sys.mass_weighted * d))) /
                    h_scale);
            inc = std::max(inc, d.maxCoeff());
        }
        if (outer >= 2) max_increase = std::max(max_increase, inc);
        prev = std::move(cur);
        iterations = outer;
        // The source couples iterates across time like a Volterra kernel:
        // successive differences stay small through a long pre-asymptotic
        // plateau before the chain actually collapses, so a plain
        // successive-difference test stops early.  Accept only once the
        // geometric tail estimate d_n rho / (1 - rho) is below tolerance.
        if (diff_h == 0.0) break;
        if (diff_h <= r.picard_tol && diff_h < diff_last) {
            const double rho = diff_h / diff_last;
            if (diff_h * rho / (1.0 - rho) <= r.picard_tol) break;
        }
        diff_last = diff_h;
        if (outer == cfg.picard_max_iter) {
            std::ostringstream os;
            os << "picard_lambda_iterate: no fixed point after " << outer
               << " outer solves (last H-distance " << diff_h << ")";
            throw SolveError(os.str());
        }
    }
    if (max_increase > 1e-8 * strike_scale(payoff))
        std::cerr << "picard_lambda_iterate: non-monotone outer chain, max "
                     "nodal increase "
                  << max_increase << "\n";

    PriceSurface s = make_surface(grid, T, n_t, std::move(prev), payoff,
                                  r.exercise_tol);
    s.picard_iterations = iterations;
    s.max_picard_increase = std::max(max_increase, 0.0);
    return s;
}

double penalty_violation(const PriceSurface& surface, const Payoff& payoff) {
    double worst = 0.0;
    const Grid& g = surface.grid;
    for (std::size_t k = 0; k < surface.times.size(); ++k)
        for (int j = 0; j < g.n_y; ++j)
            for (int i = 0; i < g.n_x; ++i) {
                const double psi =
                    payoff(surface.times[k], g.x[i], g.y[j]);
                worst = std::max(
                    worst, psi - surface.values[k][g.index(i, j)]);
            }
    return worst;
}

std::vector<BoundaryCurve> extract_boundary(const PriceSurface& surface,
                                            const Payoff& payoff,
                                            double tol) {
    const Grid& g = surface.grid;
    std::vector<BoundaryCurve> curves;
    const bool call_like = payoff.kind() == Payoff::Kind::call;
    for (std::size_t k = 0; k < surface.times.size(); ++k) {
        BoundaryCurve c;
        c.t = surface.times[k];
        const Vec& u = surface.values[k];
        for (int j = 0; j < g.n_y; ++j) {
            auto contact = [&](int i) {
                const double psi = payoff(c.t, g.x[i], g.y[j]);
                return psi > 0.0 &&
                       u[g.index(i, j)] - psi <= tol;
            };
            int i_star = -1;
            if (!call_like) {
                // puts: contact at low x; report the last contact node
                for (int i = 0; i < g.n_x - 1; ++i)
                    if (contact(i) && !contact(i + 1)) {
                        i_star = i;
                        break;
                    }
            } else {
                for (int i = g.n_x - 1; i >= 1; --i)
                    if (contact(i) && !contact(i - 1)) {
                        i_star = i;
                        break;
                    }
            }
            if (i_star < 0) continue;
            const int i_out = call_like ? i_star - 1 : i_star + 1;
            const double psi_out = payoff(c.t, g.x[i_out], g.y[j]);
            double x_star;
            if (psi_out > 0.0) {
                const double d_in = u[g.index(i_star, j)] -
                                    payoff(c.t, g.x[i_star], g.y[j]) - tol;
                const double d_out = u[g.index(i_out, j)] - psi_out - tol;
                const double f =
                    d_out != d_in ? (0.0 - d_in) / (d_out - d_in) : 0.0;
                x_star = g.x[i_star] + f * (g.x[i_out] - g.x[i_star]);
            } else {
                // contact runs to the edge of the money: bisect for the
                // payoff kink, the last point where psi is positive
                double lo = g.x[i_star], hi = g.x[i_out];
                for (int it = 0; it < 60; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    if (payoff(c.t, mid, g.y[j]) > 0.0)
                        lo = mid;
                    else
                        hi = mid;
                }
                x_star = 0.5 * (lo + hi);
            }
            c.y.push_back(g.y[j]);
            c.x_star.push_back(x_star);
        }
        curves.push_back(std::move(c));
    }
    return curves;
}

ComparisonReport comparison_check(const HestonParams& p,
                                  const MeasureWeights& w,
                                  const Payoff& payoff1,
                                  const Payoff& payoff2, const Grid& grid,
                                  const SolveConfig& cfg) {
    const PriceSurface s1 = solve_vi(p, w, payoff1, grid, cfg);
    const PriceSurface s2 = solve_vi(p, w, payoff2, grid, cfg);
    ComparisonReport rep;
    rep.max_order_violation = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < s1.times.size(); ++k) {
        const double t = s1.times[k];
        for (int j = 0; j < grid.n_y; ++j)
            for (int i = 0; i < grid.n_x; ++i) {
                const int idx = grid.index(i, j);
                const double d = s1.values[k][idx] - s2.values[k][idx];
                rep.max_order_violation = std::max(rep.max_order_violation, d);
                rep.sup_diff_u = std::max(rep.sup_diff_u, std::abs(d));
                rep.sup_diff_psi = std::max(
                    rep.sup_diff_psi,
                    std::abs(payoff1(t, grid.x[i], grid.y[j]) -
                             payoff2(t, grid.x[i], grid.y[j])));
            }
    }
    return rep;
}

void write_surface_csv(const PriceSurface& surface, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw SolveError("write_surface_csv: cannot open " + path);
    std::fprintf(f, "t,x,y,u,exercise\n");
    const Grid& g = surface.grid;
    for (std::size_t k = 0; k < surface.times.size(); ++k)
        for (int j = 0; j < g.n_y; ++j)
            for (int i = 0; i < g.n_x; ++i) {
                const int idx = g.index(i, j);
                std::fprintf(f, "%.17g,%.17g,%.17g,%.17g,%d\n",
                             surface.times[k], g.x[i], g.y[j],
                             surface.values[k][idx],
                             surface.exercise_mask[k][idx] ? 1 : 0);
            }
    std::fclose(f);
}

}  // namespace hestvi::solver
