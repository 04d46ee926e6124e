#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "lcmfuse/common.hpp"

namespace lcmfuse {

// Deterministic RNG with hand-rolled distributions. std:: distributions are
// implementation-defined, which would break bit-exact replay of artifacts,
// so everything downstream of a seed goes through this type.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    // splitmix64 core
    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t uniform_index(uint64_t n) {
        // modulo bias is < 2^-40 for our n; acceptable for synthetic data
        return next_u64() % n;
    }

    int uniform_int(int lo, int hi_inclusive) {
        return lo + static_cast<int>(uniform_index(static_cast<uint64_t>(hi_inclusive - lo + 1)));
    }

    // standard normal via Box-Muller (no cached spare, keeps replay simple)
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        // avoid log(0)
        u1 = u1 > 0.0 ? u1 : 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

private:
    uint64_t state_;
};

// Stable derivation of child seeds, e.g. seed_for(seed, "distill.image", step).
inline uint64_t seed_for(uint64_t base, std::string_view tag, uint64_t index = 0) {
    uint64_t h = fnv1a64(tag);
    h = fnv1a64(&base, sizeof(base), h);
    h = fnv1a64(&index, sizeof(index), h);
    return h ? h : 1;
}

}  // namespace lcmfuse
