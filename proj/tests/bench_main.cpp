// Benchmark of the OpenMP kernels against their serial reference
// implementations.  The parallel paths must be bit-identical to the serial
// ones (deterministic assembly ordering, counter-based RNG, pairwise
// sums), so this doubles as an equality test: any mismatch exits nonzero.

#include <chrono>
#include <cmath>
#include <cstdio>

#include "hestvi/common.hpp"
#include "hestvi/fem.hpp"
#include "hestvi/mc.hpp"
#include "hestvi/model.hpp"

using namespace hestvi;

namespace {

template <class F>
double best_seconds(int reps, F&& f) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best,
                        std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

double mat_diff(const fem::SpMat& a, const fem::SpMat& b) {
    const fem::SpMat d = a - b;
    double worst = 0.0;
    for (int k = 0; k < d.outerSize(); ++k)
        for (fem::SpMat::InnerIterator it(d, k); it; ++it)
            worst = std::max(worst, std::abs(it.value()));
    return worst;
}

double system_diff(const fem::DiscreteSystem& a,
                   const fem::DiscreteSystem& b) {
    double worst = 0.0;
    worst = std::max(worst, mat_diff(a.mass, b.mass));
    worst = std::max(worst, mat_diff(a.mass_weighted, b.mass_weighted));
    worst = std::max(worst, mat_diff(a.stiff_sym, b.stiff_sym));
    worst = std::max(worst, mat_diff(a.convect, b.convect));
    worst = std::max(worst, mat_diff(a.grad_v, b.grad_v));
    return worst;
}

bool batch_equal(const mc::PathBatch& a, const mc::PathBatch& b) {
    return a.x_paths == b.x_paths && a.y_paths == b.y_paths &&
           a.int_y == b.int_y && a.times == b.times;
}

}  // namespace

int main() {
    apply_thread_cap();
    const HestonParams p{2.0, 0.04, 0.3, -0.5, 0.05, 0.0};
    const MeasureWeights w{4.0, 2.0};
    const Box box = default_box(p, 100.0, 0.5);
    bool ok = true;

    std::printf("worker threads: %d\n\n", worker_threads());
    std::printf("%-34s %10s %10s %8s %s\n", "kernel", "serial[s]",
                "openmp[s]", "speedup", "bit-equal");

    for (int n : {65, 129}) {
        const auto grid = fem::Grid::make(box, n, n);
        fem::DiscreteSystem sys_par, sys_ser;
        const double t_par = best_seconds(
            3, [&] { sys_par = fem::assemble(p, w, grid, 150.0); });
        const double t_ser = best_seconds(
            3, [&] { sys_ser = fem::assemble_serial(p, w, grid, 150.0); });
        const double d = system_diff(sys_par, sys_ser);
        const bool eq = d == 0.0;
        ok = ok && eq;
        char name[64];
        std::snprintf(name, sizeof name, "assemble %dx%d", n, n);
        std::printf("%-34s %10.4f %10.4f %7.2fx %s\n", name, t_ser, t_par,
                    t_ser / t_par, eq ? "yes" : "NO");
        if (!eq) std::printf("  max coefficient difference: %.3e\n", d);
    }

    const std::size_t n_paths = 50000;
    const int n_steps = 64;
    mc::PathBatch b_par, b_ser;
    const double t_par = best_seconds(3, [&] {
        b_par = mc::simulate_paths(p, std::log(100.0), 0.04, 0.5, n_steps,
                                   n_paths, 42);
    });
    const double t_ser = best_seconds(3, [&] {
        b_ser = mc::simulate_paths_serial(p, std::log(100.0), 0.04, 0.5,
                                          n_steps, n_paths, 42);
    });
    const bool eq = batch_equal(b_par, b_ser);
    ok = ok && eq;
    char name[64];
    std::snprintf(name, sizeof name, "simulate_paths %zux%d", n_paths,
                  n_steps);
    std::printf("%-34s %10.4f %10.4f %7.2fx %s\n", name, t_ser, t_par,
                t_ser / t_par, eq ? "yes" : "NO");

    // scheme speed note (exact transition vs full-truncation Euler)
    mc::PathBatch be;
    const double t_euler = best_seconds(3, [&] {
        be = mc::simulate_paths(p, std::log(100.0), 0.04, 0.5, n_steps,
                                n_paths, 42,
                                mc::VarianceScheme::euler_full_truncation);
    });
    std::printf("\nexact transition vs euler: %.4f s vs %.4f s per batch "
                "(euler %.2fx faster, biased)\n",
                t_par, t_euler, t_par / t_euler);

    if (!ok) {
        std::printf("\nFAIL: parallel and serial kernels disagree\n");
        return 1;
    }
    std::printf("\nall kernels bit-identical across implementations\n");
    return 0;
}
