#include <algorithm>
#include <cstdlib>

#include "hestvi/common.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hestvi {

int worker_threads() {
    int n = 1;
#ifdef _OPENMP
    n = omp_get_max_threads();
#endif
    if (const char* env = std::getenv("PRICER_THREADS")) {
        char* end = nullptr;
        long cap = std::strtol(env, &end, 10);
        if (end != env && cap >= 1) n = std::min<long>(n, cap);
    }
    return std::max(1, n);
}

void apply_thread_cap() {
#ifdef _OPENMP
    omp_set_num_threads(worker_threads());
#endif
}

namespace {

template <class T>
T pairwise_impl(std::span<const T> v) {
    const std::size_t n = v.size();
    if (n <= 64) {
        T s{};
        for (const T& x : v) s += x;
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_impl(v.subspan(0, half)) + pairwise_impl(v.subspan(half));
}

}  // namespace

double pairwise_sum(std::span<const double> v) { return pairwise_impl(v); }
cd pairwise_sum(std::span<const cd> v) { return pairwise_impl(v); }

MeanVar pairwise_mean_var(std::span<const double> v) {
    MeanVar mv;
    if (v.empty()) return mv;
    mv.mean = pairwise_sum(v) / static_cast<double>(v.size());
    std::vector<double> sq(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double d = v[i] - mv.mean;
        sq[i] = d * d;
    }
    mv.variance = pairwise_sum(std::span<const double>(sq)) /
                  static_cast<double>(v.size());
    return mv;
}

}  // namespace hestvi
