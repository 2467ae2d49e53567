#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace backtrack {

// SplitMix64 stream. Every sampling routine takes an explicit seed and
// derives independent per-row / per-individual streams, so results do not
// depend on thread count or evaluation order.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Box-Muller; consumes exactly two uniforms per call.
    double normal(double mean, double sd) {
        const double u1 = 1.0 - uniform01();  // (0, 1], keeps log finite
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + sd * r * std::cos(2.0 * std::numbers::pi * u2);
    }

    double bernoulli(double p) { return uniform01() < p ? 1.0 : 0.0; }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    template <typename T>
    void shuffle(T* data, std::size_t n) {
        for (std::size_t i = n; i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            T tmp = data[i - 1];
            data[i - 1] = data[j];
            data[j] = tmp;
        }
    }

private:
    std::uint64_t state_;
};

// Stable stream derivation: hash (seed, key) so that per-individual or
// per-chunk streams are identical under any parallel schedule.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key) {
    Rng mix(seed ^ (0x632be59bd9b4e019ULL * (key + 0x9e3779b97f4a7c15ULL)));
    mix.next_u64();
    return mix.next_u64();
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t k1, std::uint64_t k2) {
    return derive_seed(derive_seed(seed, k1), k2);
}

}  // namespace backtrack
