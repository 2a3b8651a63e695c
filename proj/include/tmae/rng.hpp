#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace tmae {

/// Seeded random source with platform-independent derived distributions.
///
/// The standard distributions are implementation-defined, so uniform,
/// normal and integer draws are built directly on the 64-bit engine output.
/// Everything that must be bit-reproducible draws through this type.
class Rng {
   public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    /// Independent stream for (seed, a, b) without sharing engine state.
    static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n);

    /// Uniform integer in [lo, hi] inclusive.
    std::int64_t range(std::int64_t lo, std::int64_t hi);

    double normal();

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const auto j = below(i);
            std::iter_swap(first + (i - 1), first + j);
        }
    }

    /// Random permutation of 0..n-1.
    std::vector<std::size_t> permutation(std::size_t n);

   private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// SplitMix64 finalizer; used to mix seeds into derived streams.
std::uint64_t mix64(std::uint64_t x);

}  // namespace tmae
