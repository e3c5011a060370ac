#pragma once

#include <cstdint>
#include <limits>

namespace hestvi {

// Philox2x64-10 counter-based generator.  Each (seed, stream) pair owns an
// independent sequence addressed by a plain counter, so per-path streams can
// be created on any thread in any order and still produce identical draws.
// Satisfies UniformRandomBitGenerator, usable with <random> distributions.
class Philox {
  public:
    using result_type = std::uint64_t;

    Philox(std::uint64_t seed, std::uint64_t stream)
        : key0_(seed), key1_(stream) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() {
        return std::numeric_limits<result_type>::max();
    }

    result_type operator()() {
        if (have_) {
            have_ = false;
            return spare_;
        }
        std::uint64_t x0 = ctr_++, x1 = ctr_hi_;
        std::uint64_t k0 = key0_, k1 = key1_;
        for (int r = 0; r < 10; ++r) {
            round(x0, x1, k0, k1);
            k0 += 0x9E3779B97F4A7C15ull;  // Weyl constants
            k1 += 0xBB67AE8584CAA73Bull;
        }
        spare_ = x1;
        have_ = true;
        return x0;
    }

    // Uniform in (0,1); never returns an exact endpoint.
    double uniform() {
        return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1p-53;
    }

  private:
    static void round(std::uint64_t& x0, std::uint64_t& x1, std::uint64_t k0,
                      std::uint64_t k1) {
        constexpr std::uint64_t M = 0xD2B74407B1CE6E93ull;
        unsigned __int128 p = static_cast<unsigned __int128>(M) * x0;
        std::uint64_t hi = static_cast<std::uint64_t>(p >> 64);
        std::uint64_t lo = static_cast<std::uint64_t>(p);
        std::uint64_t y0 = hi ^ k0 ^ x1;
        std::uint64_t y1 = lo ^ k1;
        x0 = y0;
        x1 = y1;
    }

    std::uint64_t key0_, key1_;
    std::uint64_t ctr_ = 0, ctr_hi_ = 0;
    std::uint64_t spare_ = 0;
    bool have_ = false;
};

}  // namespace hestvi
