// Command-line front end: pricing runs, verification batteries, and
// refinement ladders over the weighted-FEM penalty solver.
//
//   pricer price    --config cfg.json [--out dir]
//   pricer verify   --suite forms|riccati|semigroup|density|comparison|flow
//                   [--config cfg.json] [--seed n] [--out dir]
//   pricer converge --config cfg.json [--levels n] [--out dir]
//
// Exit codes: 0 success, 1 runtime/solver failure or failed checks,
// 2 configuration error.  Reruns with the same config and seed produce
// byte-identical outputs.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <boost/math/quadrature/exp_sinh.hpp>

#include "hestvi/affine.hpp"
#include "hestvi/common.hpp"
#include "hestvi/fem.hpp"
#include "hestvi/mc.hpp"
#include "hestvi/model.hpp"
#include "hestvi/solver.hpp"

using json = nlohmann::ordered_json;
using namespace hestvi;

namespace {

// ---------------------------------------------------------------- config

struct RunConfig {
    HestonParams model;
    MeasureWeights weights;
    bool weights_explicit = false;
    std::string payoff_type = "put";
    double strike = 100.0;
    bool discounted = true;
    std::optional<Payoff> payoff;
    int n_x = 65, n_y = 65;
    double grading = 2.0;
    Box box{};
    bool box_explicit = false;
    solver::SolveConfig solve;
    double s0 = 100.0, y0 = 0.04;
    std::size_t mc_paths = 20000;
    int mc_steps = 64;
    std::uint64_t seed = 1;
    std::string surface_csv = "surface.csv";
    std::string summary_json = "summary.json";
    std::string converge_csv = "converge.csv";
    std::string converge_mode = "all";
};

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw ConfigError("config: cannot open " + path);
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
}

double num_at(const json& j, const std::string& ctx, const char* key) {
    if (!j.contains(key))
        throw ConfigError("config: missing field '" + ctx + "." + key + "'");
    if (!j[key].is_number())
        throw ConfigError("config: field '" + ctx + "." + key +
                          "' must be a number");
    return j[key].get<double>();
}

double num_or(const json& j, const char* key, double def) {
    if (!j.contains(key)) return def;
    if (!j[key].is_number())
        throw ConfigError(std::string("config: field '") + key +
                          "' must be a number");
    return j[key].get<double>();
}

json default_config_json() {
    return json{{"schema", 1},
                {"model",
                 {{"kappa", 2.0},
                  {"theta", 0.04},
                  {"sigma", 0.3},
                  {"rho", -0.5},
                  {"r", 0.05},
                  {"delta", 0.0}}},
                {"payoff", {{"type", "put"}, {"strike", 100.0}}},
                {"solve", {{"maturity", 0.5}, {"n_t", 16}}}};
}

RunConfig parse_config(const json& j) {
    if (j.contains("schema") && j["schema"] != 1)
        throw ConfigError("config: unsupported field 'schema' (expected 1)");
    RunConfig c;

    if (!j.contains("model"))
        throw ConfigError("config: missing field 'model'");
    const json& jm = j["model"];
    c.model.kappa = num_at(jm, "model", "kappa");
    c.model.theta = num_at(jm, "model", "theta");
    c.model.sigma = num_at(jm, "model", "sigma");
    c.model.rho = num_at(jm, "model", "rho");
    c.model.r = num_at(jm, "model", "r");
    c.model.delta = num_at(jm, "model", "delta");
    c.model.validate();

    if (!j.contains("payoff"))
        throw ConfigError("config: missing field 'payoff'");
    const json& jp = j["payoff"];
    c.payoff_type = jp.value("type", std::string("put"));
    c.discounted = jp.value("discounted", true);
    if (c.payoff_type == "put" || c.payoff_type == "call") {
        c.strike = num_at(jp, "payoff", "strike");
        if (!(c.strike > 0.0))
            throw ConfigError("config: field 'payoff.strike' must be > 0");
        c.payoff = c.payoff_type == "put"
                       ? Payoff::put(c.strike, c.model, c.discounted)
                       : Payoff::call(c.strike, c.model, c.discounted);
    } else if (c.payoff_type == "zero") {
        c.strike = num_or(jp, "strike", 1.0);
        c.payoff = Payoff::custom(
            [](double, double, double) { return 0.0; }, 0.0, 0.0, 0.0, 1.0,
            c.strike);
    } else {
        throw ConfigError(
            "config: field 'payoff.type' must be put, call or zero");
    }

    if (j.contains("weights")) {
        const json& jw = j["weights"];
        c.weights.gamma = num_at(jw, "weights", "gamma");
        c.weights.mu = num_at(jw, "weights", "mu");
        c.weights.validate();
        c.weights_explicit = true;
    } else {
        c.weights = default_weights(c.model, *c.payoff);
    }

    if (!j.contains("solve"))
        throw ConfigError("config: missing field 'solve'");
    const json& js = j["solve"];
    c.solve.maturity = num_at(js, "solve", "maturity");
    c.solve.n_t = static_cast<int>(num_at(js, "solve", "n_t"));
    c.solve.epsilon = num_or(js, "epsilon", 0.0);
    c.solve.lambda = num_or(js, "lambda", -1.0);
    c.solve.newton_tol = num_or(js, "newton_tol", 1e-9);
    c.solve.newton_max_iter =
        static_cast<int>(num_or(js, "newton_max_iter", 50));
    c.solve.european = js.value("european", false);
    c.solve.lumped_mass = js.value("lumped_mass", false);
    c.solve.exercise_tol = num_or(js, "exercise_tol", 0.0);
    c.solve.picard_tol = num_or(js, "picard_tol", 0.0);
    c.solve.picard_max_iter =
        static_cast<int>(num_or(js, "picard_max_iter", 1000));
    const std::string scheme =
        js.value("scheme", std::string("implicit_euler"));
    if (scheme == "implicit_euler")
        c.solve.scheme = solver::TimeScheme::implicit_euler;
    else if (scheme == "crank_nicolson_rannacher")
        c.solve.scheme = solver::TimeScheme::crank_nicolson_rannacher;
    else
        throw ConfigError(
            "config: field 'solve.scheme' must be implicit_euler or "
            "crank_nicolson_rannacher");
    const std::string outer = js.value("outer_mode", std::string("direct"));
    if (outer == "direct")
        c.solve.outer_mode = solver::OuterMode::direct_shifted;
    else if (outer == "picard")
        c.solve.outer_mode = solver::OuterMode::picard_lambda;
    else
        throw ConfigError(
            "config: field 'solve.outer_mode' must be direct or picard");
    c.solve.validate();

    const json jg = j.value("grid", json::object());
    c.n_x = static_cast<int>(num_or(jg, "n_x", 65));
    c.n_y = static_cast<int>(num_or(jg, "n_y", 65));
    c.grading = num_or(jg, "grading", 2.0);
    if (jg.contains("box")) {
        const json& jb = jg["box"];
        c.box.x_min = num_at(jb, "grid.box", "x_min");
        c.box.x_max = num_at(jb, "grid.box", "x_max");
        c.box.y_max = num_at(jb, "grid.box", "y_max");
        c.box_explicit = true;
    } else {
        c.box = default_box(c.model, std::max(c.strike, 1.0),
                            c.solve.maturity);
    }

    const json jsp = j.value("spot", json::object());
    c.s0 = num_or(jsp, "s0", c.strike);
    c.y0 = num_or(jsp, "y0", c.model.theta);
    if (!(c.s0 > 0.0))
        throw ConfigError("config: field 'spot.s0' must be > 0");
    if (!(c.y0 >= 0.0))
        throw ConfigError("config: field 'spot.y0' must be >= 0");

    const json jmc = j.value("mc", json::object());
    c.mc_paths = static_cast<std::size_t>(num_or(jmc, "n_paths", 20000));
    c.mc_steps = static_cast<int>(num_or(jmc, "n_steps", 64));
    c.seed = static_cast<std::uint64_t>(num_or(jmc, "seed", 1));

    const json jo = j.value("outputs", json::object());
    c.surface_csv = jo.value("surface_csv", std::string("surface.csv"));
    c.summary_json = jo.value("summary_json", std::string("summary.json"));
    c.converge_csv = jo.value("converge_csv", std::string("converge.csv"));

    const json jc = j.value("converge", json::object());
    c.converge_mode = jc.value("mode", std::string("all"));
    if (c.converge_mode != "all" && c.converge_mode != "eps")
        throw ConfigError("config: field 'converge.mode' must be all or eps");
    return c;
}

std::string scheme_name(solver::TimeScheme s) {
    return s == solver::TimeScheme::implicit_euler ? "implicit_euler"
                                                   : "crank_nicolson_rannacher";
}

// every default filled in, so the summary alone reproduces the run
json materialized_config(const RunConfig& c) {
    return json{
        {"schema", 1},
        {"model",
         {{"kappa", c.model.kappa},
          {"theta", c.model.theta},
          {"sigma", c.model.sigma},
          {"rho", c.model.rho},
          {"r", c.model.r},
          {"delta", c.model.delta}}},
        {"payoff",
         {{"type", c.payoff_type},
          {"strike", c.strike},
          {"discounted", c.discounted}}},
        {"weights", {{"gamma", c.weights.gamma}, {"mu", c.weights.mu}}},
        {"grid",
         {{"n_x", c.n_x},
          {"n_y", c.n_y},
          {"grading", c.grading},
          {"box",
           {{"x_min", c.box.x_min},
            {"x_max", c.box.x_max},
            {"y_max", c.box.y_max}}}}},
        {"solve",
         {{"maturity", c.solve.maturity},
          {"n_t", c.solve.n_t},
          {"epsilon", c.solve.epsilon},
          {"lambda", c.solve.lambda},
          {"scheme", scheme_name(c.solve.scheme)},
          {"outer_mode",
           c.solve.outer_mode == solver::OuterMode::direct_shifted
               ? "direct"
               : "picard"},
          {"newton_tol", c.solve.newton_tol},
          {"newton_max_iter", c.solve.newton_max_iter},
          {"european", c.solve.european},
          {"lumped_mass", c.solve.lumped_mass},
          {"exercise_tol", c.solve.exercise_tol},
          {"picard_tol", c.solve.picard_tol},
          {"picard_max_iter", c.solve.picard_max_iter}}},
        {"spot", {{"s0", c.s0}, {"y0", c.y0}}},
        {"mc",
         {{"n_paths", c.mc_paths},
          {"n_steps", c.mc_steps},
          {"seed", c.seed}}},
        {"outputs",
         {{"surface_csv", c.surface_csv},
          {"summary_json", c.summary_json},
          {"converge_csv", c.converge_csv}}},
        {"converge", {{"mode", c.converge_mode}}}};
}

// mirrors the solver's internal default resolution
json resolved_block(const RunConfig& c) {
    const double scale = std::max(c.payoff->strike(), 1.0);
    const auto ec = fem::energy_constants(c.model, c.weights);
    return json{
        {"epsilon",
         c.solve.epsilon > 0.0 ? c.solve.epsilon : 1e-6 * scale},
        {"lambda", c.solve.lambda < 0.0 ? ec.lambda_min : c.solve.lambda},
        {"exercise_tol",
         c.solve.exercise_tol > 0.0 ? c.solve.exercise_tol : 1e-7 * scale},
        {"picard_tol",
         c.solve.picard_tol > 0.0 ? c.solve.picard_tol : 1e-8 * scale}};
}

std::string out_path(const std::string& dir, const std::string& name) {
    if (dir.empty()) return name;
    std::filesystem::create_directories(dir);
    return (std::filesystem::path(dir) / name).string();
}

// ----------------------------------------------------------------- price

int cmd_price(const RunConfig& c, const std::string& out_dir) {
    const auto grid = fem::Grid::make(c.box, c.n_x, c.n_y, c.grading);
    const auto surface =
        solver::solve_vi(c.model, c.weights, *c.payoff, grid, c.solve);

    const std::string csv_path = out_path(out_dir, c.surface_csv);
    solver::write_surface_csv(surface, csv_path);

    // at t = 0 the coordinate shift vanishes, so the shifted-coordinate and
    // spot-coordinate prices coincide; both stated with cbar for clarity
    const double x0 = std::log(c.s0);
    const double price = surface.value_at(0.0, x0, c.y0);
    const double violation = solver::penalty_violation(surface, *c.payoff);

    double min_dx = 1e300, max_dx = 0.0, min_dy = 1e300, max_dy = 0.0;
    for (int i = 0; i + 1 < grid.n_x; ++i) {
        min_dx = std::min(min_dx, grid.x[i + 1] - grid.x[i]);
        max_dx = std::max(max_dx, grid.x[i + 1] - grid.x[i]);
    }
    for (int j = 0; j + 1 < grid.n_y; ++j) {
        min_dy = std::min(min_dy, grid.y[j + 1] - grid.y[j]);
        max_dy = std::max(max_dy, grid.y[j + 1] - grid.y[j]);
    }

    std::size_t n_contact = 0;
    for (char m : surface.exercise_mask.front()) n_contact += m != 0;

    const auto ec = fem::energy_constants(c.model, c.weights);
    json summary{
        {"schema", 1},
        {"command", "price"},
        {"config", materialized_config(c)},
        {"resolved", resolved_block(c)},
        {"results",
         {{"price",
           {{"value", price},
            {"spot_coordinates", {{"s0", c.s0}, {"y0", c.y0}}},
            {"shifted_coordinates",
             {{"x0", x0},
              {"y0", c.y0},
              {"cbar", c.model.drift_adjustment()},
              {"note",
               "x = log S - cbar t; both conventions coincide at t = 0"}}}}},
          {"penalty_violation", violation},
          {"exercise_fraction_t0",
           static_cast<double>(n_contact) /
               static_cast<double>(grid.size())},
          {"picard",
           {{"iterations", surface.picard_iterations},
            {"max_increase", surface.max_picard_increase}}},
          {"grid",
           {{"n_x", grid.n_x},
            {"n_y", grid.n_y},
            {"nodes", grid.size()},
            {"box",
             {{"x_min", c.box.x_min},
              {"x_max", c.box.x_max},
              {"y_max", c.box.y_max}}},
            {"min_dx", min_dx},
            {"max_dx", max_dx},
            {"min_dy", min_dy},
            {"max_dy", max_dy}}},
          {"energy_constants",
           {{"delta0", ec.delta0},
            {"delta1", ec.delta1},
            {"K1", ec.K1},
            {"lambda_min", ec.lambda_min}}},
          {"surface_csv", csv_path}}}};

    const std::string summary_path = out_path(out_dir, c.summary_json);
    std::ofstream out(summary_path);
    if (!out.good())
        throw SolveError("price: cannot write " + summary_path);
    out << summary.dump(2) << '\n';
    std::printf("%s\n", summary.dump(2).c_str());
    return 0;
}

// ---------------------------------------------------------------- verify

struct CheckList {
    json checks = json::array();
    bool all_pass = true;

    void add(const std::string& name, double measured, const char* cmp,
             double bound, double tolerance, bool pass,
             json extra = json::object()) {
        json e{{"name", name},
               {"measured", measured},
               {"comparison", cmp},
               {"bound", bound},
               {"tolerance", tolerance},
               {"pass", pass}};
        for (auto& [k, v] : extra.items()) e[k] = v;
        checks.push_back(std::move(e));
        all_pass = all_pass && pass;
    }
};

void suite_forms(const RunConfig& c, std::uint64_t seed, CheckList& out) {
    const auto& p = c.model;
    const auto& w = c.weights;
    const auto ec = fem::energy_constants(p, w);

    out.add("diffusion_definite", ec.delta1, ">", 0.0, 0.0, ec.delta1 > 0.0);
    const double thr = 0.5 * ec.delta1 + ec.K1 * ec.K1 / (2.0 * ec.delta1);
    out.add("threshold_identity", std::abs(ec.lambda_min - thr), "<=",
            1e-12 * ec.lambda_min, 1e-12,
            std::abs(ec.lambda_min - thr) <= 1e-12 * ec.lambda_min,
            json{{"lambda_min", ec.lambda_min},
                 {"delta0", ec.delta0},
                 {"delta1", ec.delta1},
                 {"K1", ec.K1}});

    const auto grid = fem::Grid::make(c.box, 21, 21, c.grading);
    const auto sys = fem::assemble(p, w, grid, ec.lambda_min);
    const double coer = fem::coercivity_probe(sys, 200, seed);
    out.add("coercivity_probe", coer, ">=", ec.C2() - 1e-9, 1e-9,
            coer >= ec.C2() - 1e-9);
    const double cont = fem::continuity_probe(sys, 200, seed + 1);
    out.add("continuity_probe", cont, "<=", ec.C1() + 1e-9, 1e-9,
            cont <= ec.C1() + 1e-9);
    const double gard = fem::garding_probe(sys, 200, seed + 2);
    out.add("garding_probe", gard, ">=", ec.C2() - 1e-9, 1e-9,
            gard >= ec.C2() - 1e-9);

    // generator identity: a(u, v) = -(L u, v) on interior bumps, second
    // order under refinement
    auto bump = [](double s) {
        return s > 0.0 && s < 1.0 ? std::exp(-1.0 / (s * (1.0 - s))) : 0.0;
    };
    const Box& box = c.box;
    auto mapx = [&](double x) {
        return (x - box.x_min) / (box.x_max - box.x_min);
    };
    auto mapy = [&](double y) { return y / box.y_max; };
    auto u_f = [&](double x, double y) {
        return bump(mapx(x)) * bump(mapy(y));
    };
    auto v_f = [&](double x, double y) {
        return bump(1.3 * mapx(x) - 0.1) * bump(1.2 * mapy(y));
    };
    const double h = 1e-4;
    auto Lu = [&](double x, double y) {
        auto f = u_f;
        const double uxx =
            (f(x + h, y) - 2 * f(x, y) + f(x - h, y)) / (h * h);
        const double uyy =
            (f(x, y + h) - 2 * f(x, y) + f(x, y - h)) / (h * h);
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
        const auto g = fem::Grid::make(box, n, n, c.grading);
        const auto s = fem::assemble(p, w, g, 0.0);
        res[idx++] = fem::verify_ibp(s, u_f, Lu, v_f);
    }
    const double order =
        std::min(std::log2(res[0] / res[1]), std::log2(res[1] / res[2]));
    out.add("ibp_order", order, ">=", 1.8, 0.0, order >= 1.8,
            json{{"residuals", {res[0], res[1], res[2]}}});
}

void suite_riccati(const RunConfig& c, CheckList& out) {
    const auto& p = c.model;
    const struct {
        cd z, w;
        double t;
    } probes[] = {
        {{0.3, 0.4}, {-0.2, 0.1}, 0.8},
        {{-0.5, 0.0}, {-1.0, 0.0}, 2.0},
        {{0.1, -0.2}, {-2.0, 0.5}, 1.5},
        {{-2.0, 1.5}, {-3.0, -2.0}, 1.0},
    };
    int k = 0;
    for (const auto& pr : probes) {
        const auto closed = affine::riccati_closed_form(p, pr.z, pr.w, pr.t);
        const auto ode = affine::riccati_solve(p, pr.z, pr.w, pr.t);
        const double d = std::max(std::abs(closed.psi - ode.psi),
                                  std::abs(closed.phi - ode.phi));
        out.add("closed_vs_ode[" + std::to_string(k++) + "]", d, "<=", 1e-9,
                1e-9, d <= 1e-9,
                json{{"z", {pr.z.real(), pr.z.imag()}},
                     {"w", {pr.w.real(), pr.w.imag()}},
                     {"t", pr.t}});
    }

    // starting on the stationary root freezes the flow
    const double wq = -0.7;
    const double d0 = std::sqrt(p.kappa * p.kappa -
                                2.0 * p.sigma * p.sigma * wq);
    const double rm = (p.kappa - d0) / (p.sigma * p.sigma);
    const auto stat = affine::riccati_closed_form(p, cd(rm, 0.0),
                                                  cd(wq, 0.0), 1.5);
    const double dm = std::abs(stat.psi - rm);
    out.add("stationary_ray", dm, "<=", 1e-12 * (1.0 + std::abs(rm)), 1e-12,
            dm <= 1e-12 * (1.0 + std::abs(rm)));

    // characteristic function conjugate symmetry
    const double x0 = std::log(c.s0);
    const cd a = affine::char_fn_joint(p, 0.8, 0.7, 1.2, x0, c.y0, 0.9);
    const cd b = affine::char_fn_joint(p, 0.8, -0.7, -1.2, x0, c.y0, 0.9);
    const double ds = std::abs(b - std::conj(a));
    out.add("char_fn_conjugate", ds, "<=", 1e-13, 1e-13, ds <= 1e-13);
}

void suite_semigroup(const RunConfig& c, std::uint64_t seed,
                     CheckList& out) {
    const auto& p = c.model;
    const double x0 = std::log(c.s0);
    const double t = c.solve.maturity;
    const struct {
        double lambda, u, v;
    } probes[] = {{0.7, 1.2, 0.8}, {0.0, 2.0, -1.0}, {1.5, 0.0, 0.0}};
    int k = 0;
    for (const auto& pr : probes) {
        auto f = [&](double x, double y) {
            return std::exp(cd(0.0, pr.u * x + pr.v * y));
        };
        const auto est = mc::killed_semigroup_estimate(
            p, f, pr.lambda, t, x0, c.y0, c.mc_paths, c.mc_steps, seed + k);
        const cd cf =
            affine::char_fn_joint(p, pr.lambda, pr.u, pr.v, x0, c.y0, t);
        const double d = std::abs(est.mean - cf);
        const double bound = 3.5 * est.std_error;
        out.add("semigroup_vs_char_fn[" + std::to_string(k++) + "]", d, "<=",
                bound, 3.5, d <= bound,
                json{{"u", pr.u},
                     {"v", pr.v},
                     {"lambda", pr.lambda},
                     {"mc", {est.mean.real(), est.mean.imag()}},
                     {"char_fn", {cf.real(), cf.imag()}},
                     {"std_error", est.std_error},
                     {"n_paths", est.n_paths}});
    }
}

void suite_density(const RunConfig& c, CheckList& out) {
    const auto& p = c.model;
    const struct {
        double t, y0;
    } cases[] = {{c.solve.maturity, c.y0}, {0.25, 0.0}};
    boost::math::quadrature::exp_sinh<double> integrator;
    int k = 0;
    for (const auto& cs : cases) {
        const std::string tag = "[" + std::to_string(k++) + "]";
        auto dens = [&](double y) {
            return affine::cir_density(p, cs.t, cs.y0, y);
        };
        const double mass = integrator.integrate(dens, 1e-10);
        out.add("density_normalization" + tag, std::abs(mass - 1.0), "<=",
                1e-8, 1e-8, std::abs(mass - 1.0) <= 1e-8,
                json{{"t", cs.t}, {"y0", cs.y0}});

        auto ydens = [&](double y) { return y * dens(y); };
        const double mean = integrator.integrate(ydens, 1e-10);
        const double mean_cf =
            p.theta + (cs.y0 - p.theta) * std::exp(-p.kappa * cs.t);
        out.add("density_mean" + tag, std::abs(mean - mean_cf), "<=",
                1e-8 * (1.0 + mean_cf), 1e-8,
                std::abs(mean - mean_cf) <= 1e-8 * (1.0 + mean_cf));

        double worst = 0.0;
        for (int i = 0; i < 400; ++i) {
            const double y =
                std::exp(std::log(1e-6) +
                         (std::log(2.0) - std::log(1e-6)) * i / 399.0);
            const double d = dens(y);
            if (d <= 0.0) continue;
            worst = std::max(
                worst, d / affine::cir_density_bound(p, cs.t, cs.y0, y));
        }
        out.add("density_bound_domination" + tag, worst, "<=", 1.0 + 1e-12,
                1e-12, worst <= 1.0 + 1e-12);
    }
}

void suite_comparison(const RunConfig& c, CheckList& out) {
    const auto& p = c.model;
    const auto& w = c.weights;
    const auto grid = fem::Grid::make(c.box, 17, 17, c.grading);
    auto cfg = c.solve;
    cfg.n_t = std::min(cfg.n_t, 8);
    cfg.lumped_mass = true;
    cfg.outer_mode = solver::OuterMode::direct_shifted;

    const double K = std::max(c.strike, 1.0);
    const auto lo = Payoff::put(0.9 * K, p, c.discounted);
    const auto hi = Payoff::put(K, p, c.discounted);
    const auto rep = solver::comparison_check(p, w, lo, hi, grid, cfg);
    out.add("strike_order", rep.max_order_violation, "<=", 1e-6, 1e-6,
            rep.ordered(1e-6));
    out.add("strike_contraction", rep.sup_diff_u - rep.sup_diff_psi, "<=",
            1e-6, 1e-6, rep.contraction(1e-6),
            json{{"sup_diff_u", rep.sup_diff_u},
                 {"sup_diff_psi", rep.sup_diff_psi}});

    const auto s = solver::solve_vi(p, w, hi, grid, cfg);
    const double viol = solver::penalty_violation(s, hi);
    out.add("penalty_violation", viol, "<", 1e-3 * K, 1e-3,
            viol < 1e-3 * K);

    const auto shifted = Payoff::custom(
        [hi](double t, double x, double y) { return hi(t, x, y) + 1.0; },
        hi.growth_a(), hi.growth_b(), hi.growth_L(), hi.growth_C() + 1.0,
        hi.strike());
    const auto s2 = solver::solve_vi(p, w, shifted, grid, cfg);
    double sup = 0.0;
    for (std::size_t m = 0; m < s.values.size(); ++m)
        sup = std::max(sup, (s2.values[m] - s.values[m] -
                             fem::Vec::Ones(grid.size()))
                                .cwiseAbs()
                                .maxCoeff());
    out.add("constant_shift", sup, "<=", 1e-8, 1e-8, sup <= 1e-8);
}

void suite_flow(const RunConfig& c, std::uint64_t seed, CheckList& out) {
    const auto& p = c.model;
    const std::vector<mc::FlowPair> pairs = {
        {0.0, 0.04, 0.0, 0.09},
        {0.0, 0.04, 0.3, 0.04},
        {0.1, 0.02, 0.1, 0.02},
        {-0.2, 0.01, 0.1, 0.3},
    };
    const auto reports = mc::flow_continuity_probe(
        p, pairs, c.solve.maturity, 32, c.mc_paths, seed);
    for (std::size_t k = 0; k < reports.size(); ++k) {
        const auto& r = reports[k];
        const std::string tag = "[" + std::to_string(k) + "]";
        out.add("flow_dy" + tag, r.mean_abs_dy, "<=",
                r.bound_dy + 3.0 * r.se_dy, 3.0,
                r.mean_abs_dy <=
                    r.bound_dy + 3.0 * r.se_dy + 1e-12 * (1.0 + r.bound_dy),
                json{{"bound", r.bound_dy}, {"std_error", r.se_dy}});
        out.add("flow_dx" + tag, r.mean_abs_dx, "<=",
                r.bound_dx + 3.0 * r.se_dx, 3.0,
                r.mean_abs_dx <=
                    r.bound_dx + 3.0 * r.se_dx + 1e-12 * (1.0 + r.bound_dx),
                json{{"bound", r.bound_dx}, {"std_error", r.se_dx}});
    }
}

int cmd_verify(const RunConfig& c, const std::string& suite,
               std::uint64_t seed, const std::string& out_dir) {
    CheckList list;
    if (suite == "forms")
        suite_forms(c, seed, list);
    else if (suite == "riccati")
        suite_riccati(c, list);
    else if (suite == "semigroup")
        suite_semigroup(c, seed, list);
    else if (suite == "density")
        suite_density(c, list);
    else if (suite == "comparison")
        suite_comparison(c, list);
    else if (suite == "flow")
        suite_flow(c, seed, list);
    else
        throw ConfigError("verify: unknown suite '" + suite +
                          "' (forms, riccati, semigroup, density, "
                          "comparison, flow)");

    json report{{"schema", 1},
                {"command", "verify"},
                {"suite", suite},
                {"seed", seed},
                {"model",
                 {{"kappa", c.model.kappa},
                  {"theta", c.model.theta},
                  {"sigma", c.model.sigma},
                  {"rho", c.model.rho},
                  {"r", c.model.r},
                  {"delta", c.model.delta}}},
                {"weights",
                 {{"gamma", c.weights.gamma}, {"mu", c.weights.mu}}},
                {"checks", list.checks},
                {"pass", list.all_pass}};
    std::printf("%s\n", report.dump(2).c_str());
    if (!out_dir.empty()) {
        const std::string path =
            out_path(out_dir, "verify_" + suite + ".json");
        std::ofstream out(path);
        out << report.dump(2) << '\n';
    }
    return list.all_pass ? 0 : 1;
}

// --------------------------------------------------------------- converge

int cmd_converge(const RunConfig& c, int levels,
                 const std::string& out_dir) {
    const double scale = std::max(c.payoff->strike(), 1.0);
    const double eps0 =
        c.solve.epsilon > 0.0 ? c.solve.epsilon : 1e-6 * scale;
    const double x0 = std::log(c.s0);

    std::string table = "level,n_x,n_y,n_t,epsilon,price,penalty_violation,"
                        "diff,order\n";
    std::vector<double> prices;
    for (int l = 0; l < levels; ++l) {
        const int f = 1 << l;
        const bool refine_grid = c.converge_mode == "all";
        const int nx = refine_grid ? (c.n_x - 1) * f + 1 : c.n_x;
        const int ny = refine_grid ? (c.n_y - 1) * f + 1 : c.n_y;
        const int nt = refine_grid ? c.solve.n_t * f : c.solve.n_t;
        const double eps = eps0 / f;

        auto cfg = c.solve;
        cfg.n_t = nt;
        cfg.epsilon = eps;
        const auto grid = fem::Grid::make(c.box, nx, ny, c.grading);
        const auto s =
            solver::solve_vi(c.model, c.weights, *c.payoff, grid, cfg);
        const double price = s.value_at(0.0, x0, c.y0);
        const double viol = solver::penalty_violation(s, *c.payoff);
        prices.push_back(price);

        char row[256];
        std::string diff = "", order = "";
        if (l >= 1) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.6e",
                          std::abs(prices[l] - prices[l - 1]));
            diff = buf;
        }
        if (l >= 2) {
            const double d1 = std::abs(prices[l - 1] - prices[l - 2]);
            const double d2 = std::abs(prices[l] - prices[l - 1]);
            if (d2 > 0.0) {
                char buf[32];
                std::snprintf(buf, sizeof buf, "%.3f", std::log2(d1 / d2));
                order = buf;
            }
        }
        std::snprintf(row, sizeof row, "%d,%d,%d,%d,%.6e,%.10f,%.6e,%s,%s\n",
                      l, nx, ny, nt, eps, price, viol, diff.c_str(),
                      order.c_str());
        table += row;
    }

    std::fputs(table.c_str(), stdout);
    const std::string path = out_path(out_dir, c.converge_csv);
    std::ofstream out(path);
    if (!out.good()) throw SolveError("converge: cannot write " + path);
    out << table;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    apply_thread_cap();

    CLI::App app{"Weighted-FEM pricer for American/European options under "
                 "stochastic volatility"};
    app.require_subcommand(1);

    std::string config_path, suite, out_dir;
    int levels = 3;
    long long seed_flag = -1;

    auto* price = app.add_subcommand(
        "price", "Solve the pricing problem and emit surface CSV + summary");
    price->add_option("--config", config_path, "JSON run configuration")
        ->required();
    price->add_option("--out", out_dir, "output directory");

    auto* verify = app.add_subcommand(
        "verify", "Run an invariant battery and emit a JSON report");
    verify->add_option("--suite", suite,
                       "forms | riccati | semigroup | density | comparison "
                       "| flow")
        ->required();
    verify->add_option("--config", config_path,
                       "JSON run configuration (benchmark default if "
                       "omitted)");
    verify->add_option("--seed", seed_flag, "override the config seed");
    verify->add_option("--out", out_dir, "output directory");

    auto* converge = app.add_subcommand(
        "converge", "Refinement ladder: price vs resolution table");
    converge->add_option("--config", config_path, "JSON run configuration")
        ->required();
    converge->add_option("--levels", levels, "ladder levels")
        ->check(CLI::Range(1, 6));
    converge->add_option("--out", out_dir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        const json doc = config_path.empty() ? default_config_json()
                                             : load_json(config_path);
        const RunConfig cfg = parse_config(doc);
        if (price->parsed()) return cmd_price(cfg, out_dir);
        if (converge->parsed()) return cmd_converge(cfg, levels, out_dir);
        const std::uint64_t seed =
            seed_flag >= 0 ? static_cast<std::uint64_t>(seed_flag)
                           : cfg.seed;
        return cmd_verify(cfg, suite, seed, out_dir);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
